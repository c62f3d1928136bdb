#pragma once

#include "nb/config.hpp"
#include "nb/domain.hpp"
#include "nb/ranking.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace nb::bench {

struct Paths {
  std::filesystem::path root;
  std::filesystem::path data_root;
  std::filesystem::path cache_root;
  std::filesystem::path store_file;

  static Paths from_root(const std::filesystem::path& root);
};

// $NB_ROOT, or ./nb_root when unset.
Paths default_paths();

// Internal models in plan order.
const std::vector<std::string>& internal_models();

// External model: a runner process speaking the protocol on stdio.
struct ExternalRunner {
  std::string id;
  std::vector<std::string> argv;
  bool pretrain_overlap = false;
};

// "id=command arg ..." (whitespace-separated arguments).
ExternalRunner parse_runner(const std::string& text);

struct Experiment {
  std::string model_id;
  std::string task_id;
  std::string dataset_id;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::uint32_t attempt = 0;

  bool operator==(const Experiment&) const = default;
};

struct PlanRequest {
  ranking::Variant variant = ranking::Variant::Core;
  std::vector<std::string> models; // empty = all internal + external
  std::vector<std::string> tasks;  // empty = whole registry
  int n_seeds = 0;                 // 0 = trainer.n_seeds of each task
  std::vector<std::string> overrides;
  bool force = false;
};

config::TaskSpec resolve_task(const std::string& task_id, const std::vector<std::string>& overrides);

// Hash of the resolved task config, the model and the dataset.
std::uint64_t experiment_hash(const config::TaskSpec& spec, const std::string& model_id,
                              const std::string& dataset_id);

// Deterministic grid: task, dataset, model, seed. Experiments with an Ok
// record of the same hash are skipped unless `force`, which bumps the attempt.
std::vector<Experiment> plan(const PlanRequest& request, const std::vector<RunRecord>& existing,
                             const std::vector<ExternalRunner>& runners = {});

struct RunOptions {
  Paths paths;
  std::size_t jobs = 0; // 0 = hardware concurrency
  std::vector<ExternalRunner> runners;
  std::vector<std::string> overrides;
  std::chrono::milliseconds runner_timeout{30'000};
  std::function<void(const RunRecord&)> on_record; // progress callback, called in plan order
};

struct RunSummary {
  std::vector<RunRecord> records; // plan order
  std::size_t ok = 0, failed = 0, declined = 0;
  std::vector<std::string> warnings;
};

// Prepares caches, runs every experiment on a worker pool and appends the
// records to the store in plan order. Per-experiment failures become Failed
// records; the batch never aborts on them.
RunSummary run(const std::vector<Experiment>& experiments, const RunOptions& options);

struct PreparedSplit {
  ExampleSet examples; // split
  std::size_t n_outputs = 0;
  std::filesystem::path cache_path;
  std::filesystem::path manifest_path;
  std::uint64_t split_hash = 0;
  std::vector<std::string> log;
};

// Loads the split cache for (task, dataset), building it when absent.
PreparedSplit prepare(const config::TaskSpec& spec, const std::string& dataset_id, const Paths& paths);

// Scores test predictions against the dummy baseline of the same split and seed.
std::vector<ScoreRecord> score_predictions(const config::TaskSpec& spec, const ExampleSet& es, std::size_t n_outputs,
                                           std::span<const Prediction> predictions, std::uint64_t seed);

// task -> core dataset for every registry task.
std::map<std::string, std::string> core_datasets();

} // namespace nb::bench
