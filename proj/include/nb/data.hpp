#pragma once

#include "nb/config.hpp"
#include "nb/domain.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nb::data {

// Boxcar deflection amplitude * pattern[k] over [latency, latency + width)
// after each event of class k. Multilabel events superpose one pattern per
// active label.
struct EvokedDeflection {
  double amplitude = 1.0;
  double latency = 0.3;
  double width = 0.2;
  std::vector<std::vector<double>> patterns; // [n_classes][n_channels]; empty = random
};

// Sinusoid at freqs[k] on tagged_channels[k] for `length` seconds after each
// event of class k, random phase per event.
struct FrequencyTag {
  double amplitude = 1.0;
  double length = 2.0;
  std::vector<double> freqs;                            // one per class
  std::vector<std::vector<std::size_t>> tagged_channels; // one list per class
};

// x(c, t) = sum_b g_b(t) * sum_d A[c * n_basis + b][d] * z_d with Hann bumps
// g_b tiling [0, span).
struct LinearEmbeddingMix {
  std::size_t n_basis = 4;
  double span = 0.5;
  double gain = 1.0;
};

using Effect = std::variant<EvokedDeflection, FrequencyTag, LinearEmbeddingMix>;

struct SyntheticProfile {
  std::string name;
  std::size_t n_subjects = 5;
  std::vector<std::string> session_names = {"1"};
  std::size_t n_runs = 1;
  std::size_t n_channels = 8;
  double sfreq = 120.0;
  std::size_t n_events_per_subject = 40; // ignored for retrieval (n_concepts * repeats)
  ObjectiveKind objective = ObjectiveKind::MulticlassClassification;
  std::vector<std::string> class_names; // classes or labels
  double label_rate = 0.35;             // multilabel: per-label activation probability
  std::size_t embedding_dim = 0;        // retrieval
  std::size_t n_concepts = 0;           // retrieval
  std::size_t concept_repeats = 1;      // retrieval, per subject
  double target_mean = 0.0;             // regression
  double target_std = 1.0;              // regression
  Effect effect;
  double noise_std = 1.0;
  double subject_gain_spread = 0.2; // per-subject gain uniform in 1 +- spread
  double event_spacing = 1.5;       // seconds between consecutive events
  std::uint64_t rng_seed = 0;
};

void validate(const SyntheticProfile& profile);

struct SyntheticDataset {
  std::vector<Recording> recordings;
  std::map<std::string, std::vector<double>> embeddings; // concept id -> unit vector
  std::vector<std::vector<double>> mixing;                // LinearEmbeddingMix: [C * n_basis][D]
  std::vector<std::vector<double>> patterns;              // EvokedDeflection patterns in use
};

SyntheticDataset generate_synthetic(const SyntheticProfile& profile);

double mix_basis(const LinearEmbeddingMix& mix, std::size_t b, double t_rel);

// Named profiles backing the builtin registry ("p300", "p300_b", ...).
SyntheticProfile synthetic_profile(const std::string& name);
std::vector<std::string> synthetic_profile_names();

// On-disk recording: <dir>/<id>.json sidecar + <id>.bin float32 LE payload.
void write_recording(const std::filesystem::path& dataset_dir, const Recording& rec);
Recording load_recording(const std::filesystem::path& dataset_dir, const std::string& recording_id);
std::vector<std::string> list_recordings(const std::filesystem::path& dataset_dir);

void write_embeddings(const std::filesystem::path& file,
                      const std::map<std::string, std::vector<double>>& embeddings);
std::map<std::string, std::vector<double>> load_embeddings(const std::filesystem::path& file);

struct EpochResult {
  ExampleSet examples; // targets unset; descriptions/concepts carry the raw labels
  std::size_t dropped = 0;
};

// One window per event of `spec.trigger_event_type`; out-of-bounds windows are
// dropped and counted. Throws ValidationError when no event matches.
EpochResult epoch(const Recording& recording, const config::TaskSpec& spec);

ExampleSet concat(const std::vector<ExampleSet>& parts);

struct EncodedTargets {
  std::vector<std::string> class_names;
  std::size_t n_outputs = 0;
};

// Fills es.targets from the raw tags according to the codec. Label encoding
// is dataset-wide, so call it on the concatenated set.
EncodedTargets encode_targets(ExampleSet& es, const config::TaskSpec& spec,
                              const std::map<std::string, std::vector<double>>& embeddings);

inline constexpr std::uint32_t kCacheVersion = 1;

void write_cache(const ExampleSet& es, const std::filesystem::path& path,
                 const nlohmann::json& meta = nlohmann::json::object());
ExampleSet read_cache(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

struct PreparedDataset {
  ExampleSet examples; // labeled, unsplit
  EncodedTargets encoding;
  std::size_t dropped = 0;
  std::vector<std::string> log;
};

// Loads (materializing synthetic sources on first use), preprocesses, epochs,
// baseline-corrects and encodes one dataset of a task.
PreparedDataset prepare_dataset(const config::TaskSpec& spec, const std::string& dataset_id,
                                const std::filesystem::path& data_root);

// Directory holding a dataset's recordings.
std::filesystem::path dataset_dir(const config::TaskSpec& spec, const std::string& dataset_id,
                                  const std::filesystem::path& data_root);

} // namespace nb::data
