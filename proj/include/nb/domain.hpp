#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace nb {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
  using Error::Error;
};

enum class ObjectiveKind {
  BinaryClassification,
  MulticlassClassification,
  MultilabelClassification,
  Regression,
  Retrieval,
};

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind objective_from_string(std::string_view name);
bool is_single_label_classification(ObjectiveKind kind);

struct Event {
  double onset = 0.0; // seconds from recording start
  std::string event_type;
  std::string description;
  std::optional<std::string> concept_id;
  std::optional<std::string> run_id;

  bool operator==(const Event&) const = default;
};

// Continuous multichannel signal, channel-major.
struct Recording {
  std::string recording_id;
  std::string subject_id;
  std::string session_id;
  double sfreq = 0.0;
  std::vector<std::string> channels;
  std::vector<float> data; // [n_channels x n_samples]
  std::vector<Event> events;

  std::size_t n_channels() const { return channels.size(); }
  std::size_t n_samples() const { return channels.empty() ? 0 : data.size() / channels.size(); }
  double duration() const { return sfreq > 0 ? static_cast<double>(n_samples()) / sfreq : 0.0; }

  std::span<float> channel(std::size_t c) {
    return {data.data() + c * n_samples(), n_samples()};
  }
  std::span<const float> channel(std::size_t c) const {
    return {data.data() + c * n_samples(), n_samples()};
  }
};

// Throws ValidationError describing the first broken invariant.
void validate_recording(const Recording& rec);

struct ClassIndex {
  int value = 0;
  bool operator==(const ClassIndex&) const = default;
};
struct LabelVector {
  std::vector<std::uint8_t> values;
  bool operator==(const LabelVector&) const = default;
};
struct ScalarTarget {
  double value = 0.0;
  bool operator==(const ScalarTarget&) const = default;
};
struct EmbeddingTarget {
  std::vector<double> values;
  bool operator==(const EmbeddingTarget&) const = default;
};

using Target = std::variant<ClassIndex, LabelVector, ScalarTarget, EmbeddingTarget>;

std::size_t target_dimension(const Target& target);

struct ClassProbabilities {
  std::vector<double> values;
};
struct LabelProbabilities {
  std::vector<double> values;
};
struct ScalarPrediction {
  double value = 0.0;
};
struct EmbeddingPrediction {
  std::vector<double> values;
};

using Prediction =
    std::variant<ClassProbabilities, LabelProbabilities, ScalarPrediction, EmbeddingPrediction>;

// Empty string when the prediction satisfies its probability/finiteness
// constraints, otherwise a description of the violation.
std::string check_prediction(const Prediction& p);

enum class SplitLabel : std::uint8_t { Unassigned = 0, Train = 1, Valid = 2, Test = 3 };

std::string_view to_string(SplitLabel label);
SplitLabel split_label_from_string(std::string_view name);

// Epoched windows with per-example tags. `split_labels` is empty while the
// set is unsplit; once split it has one entry per example.
struct ExampleSet {
  std::size_t n_examples = 0;
  std::size_t n_channels = 0;
  std::size_t n_times = 0;
  std::vector<float> windows; // [n_examples x n_channels x n_times]
  std::vector<std::string> channels;
  std::vector<Target> targets;
  std::vector<std::string> example_ids;
  std::vector<std::string> subject_ids;
  std::vector<std::string> session_ids;
  std::vector<std::string> recording_ids;
  std::vector<std::string> run_ids;
  std::vector<std::string> concept_ids; // empty string when unknown
  std::vector<std::string> descriptions;
  std::vector<SplitLabel> split_labels;
  double sfreq = 0.0;
  double window_start = 0.0;
  double duration = 0.0;

  std::size_t window_size() const { return n_channels * n_times; }
  std::span<float> window(std::size_t i) {
    return {windows.data() + i * window_size(), window_size()};
  }
  std::span<const float> window(std::size_t i) const {
    return {windows.data() + i * window_size(), window_size()};
  }
  float at(std::size_t i, std::size_t c, std::size_t t) const {
    return windows[(i * n_channels + c) * n_times + t];
  }

  std::vector<std::size_t> indices_of(SplitLabel label) const;
  bool operator==(const ExampleSet&) const = default;
};

// Copies the listed examples (in order) into a new set.
ExampleSet subset(const ExampleSet& es, std::span<const std::size_t> indices);

std::vector<std::string> validate_example_set(const ExampleSet& es);

struct ScoreRecord {
  std::string metric_name;
  double value = 0.0;
  double dummy_value = 0.0;
  double perfect_value = 1.0;
  double normalized = 0.0;
  std::optional<double> max_normalized;
  std::uint64_t seed = 0;
  std::size_t n_test = 0;
  bool degenerate = false;
};

enum class RunStatus { Ok, Failed, Declined };
std::string_view to_string(RunStatus status);
RunStatus run_status_from_string(std::string_view name);

struct RunRecord {
  std::string model_id;
  std::string task_id;
  std::string dataset_id;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t split_hash = 0;
  std::uint32_t attempt = 0;
  RunStatus status = RunStatus::Ok;
  std::string reason;
  std::vector<ScoreRecord> scores;
  std::map<std::string, std::string> deviations;
  bool pretrain_overlap = false;
  double wall_time = 0.0;
  std::string started_at;
  std::string finished_at;
};

// FNV-1a 64-bit over the canonical UTF-8 text.
std::uint64_t hash_config(std::string_view canonical_text);

std::string to_hex(std::uint64_t value);
std::uint64_t from_hex(std::string_view text);

} // namespace nb
