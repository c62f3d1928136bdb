#pragma once

#include "nb/domain.hpp"
#include "nb/dsp.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nb::config {

class ParseError : public Error {
public:
  using Error::Error;
};

enum class SplitKind { Predefined, LeaveConceptOut, CrossSubject, WithinSubject, Random };

std::string_view to_string(SplitKind kind);

struct SplitPolicy {
  SplitKind kind = SplitKind::Random;
  double test_ratio = 0.2;
  double valid_ratio = 0.2;
  std::optional<std::string> stratify_by;
  // "last N sessions" / "last N runs" (within-subject) or "session=<id>"
  // (predefined evaluation session).
  std::optional<std::string> holdout_spec;
  std::uint64_t seed = 0;
};

enum class TargetCodecKind { LabelEncoder, MultiLabelEncoder, Scalar, Embedding };

std::string_view to_string(TargetCodecKind kind);

struct TargetCodec {
  TargetCodecKind kind = TargetCodecKind::LabelEncoder;
  std::vector<std::string> event_types;
  std::string event_field = "description";
  bool return_one_hot = false;
  std::vector<std::string> classes; // label names; empty = sorted distinct values
  std::string embedding_file;       // relative to the dataset directory
};

struct TrainerSpec {
  double lr = 1e-4;
  double weight_decay = 0.05;
  double warmup_fraction = 0.10;
  int max_epochs = 50;
  int patience = 10;
  int batch_size = 64;
  std::optional<double> grad_clip;
  int n_seeds = 3;
};

struct HandcraftedSpec {
  std::vector<std::array<double, 2>> freq_bands; // Welch bins kept for co-spectra
  int xdawn_filters = 4;
};

struct TaskSpec {
  std::string task_id;
  std::string modality = "eeg";
  std::string category; // routing hint for handcrafted pipelines (e.g. "evoked", "ssvep")
  std::string source_name; // dataset id or "synthetic:<profile>"
  std::optional<std::string> source_root;
  std::vector<std::string> extra_datasets; // additional datasets for the full variant
  SplitPolicy split;
  std::string trigger_event_type;
  double start = 0.0;
  double duration = 1.0;
  std::optional<std::array<double, 2>> baseline;
  TargetCodec target;
  ObjectiveKind objective = ObjectiveKind::MulticlassClassification;
  std::string loss_name;
  std::vector<double> class_weights;
  std::vector<std::string> metric_names;
  std::size_t n_outputs = 0; // 0 = resolved from the label encoder when the data is prepared
  TrainerSpec trainer;
  dsp::PreprocSpec preprocessing;
  HandcraftedSpec handcrafted;

  std::vector<std::string> datasets() const; // core dataset first
};

// Default loss for each objective; the mapping is total.
std::string_view default_loss(ObjectiveKind objective);

TaskSpec parse_task_config(std::string_view yaml_text);

// Overrides use the grammar `a.b.c=value` with YAML scalar values.
TaskSpec apply_overrides(const TaskSpec& spec, const std::vector<std::string>& overrides);

// Flat, key-sorted YAML that parses back to the same spec.
std::string serialize_task_config(const TaskSpec& spec);

// Canonical key-sorted JSON of the resolved spec; input to hash_config.
std::string canonical_text(const TaskSpec& spec);

std::uint64_t config_hash(const TaskSpec& spec);

void validate(const TaskSpec& spec);

const std::vector<TaskSpec>& builtin_task_registry();
const TaskSpec& find_task(std::string_view task_id); // throws ValidationError listing ids

} // namespace nb::config
