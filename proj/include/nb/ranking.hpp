#pragma once

#include "nb/domain.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nb::ranking {

enum class Variant { Core, Full };
std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);

// Rank 1 = best; ties share the average of their positions.
// Throws ValidationError for fewer than two scores.
std::vector<double> rank_within_task(std::span<const double> scores, bool higher_better = true);

struct CellKey {
  std::string task;
  std::string dataset;
  auto operator<=>(const CellKey&) const = default;
};

struct RankTable {
  std::vector<std::string> models;                          // sorted
  std::map<std::string, std::vector<std::string>> datasets; // task -> sorted dataset ids
  // (task, dataset) -> model -> seed-mean normalized score / rank. Absent
  // models have no entry.
  std::map<CellKey, std::map<std::string, double>> scores;
  std::map<CellKey, std::map<std::string, double>> ranks;
  std::vector<std::string> notes; // exclusions and inconsistencies
};

// Builds ranks from Ok records, ranking on the normalized score of each
// record's first metric. `core_datasets` maps task -> core dataset; with the
// Core variant only those datasets are kept (tasks absent from the map keep
// every dataset).
RankTable build_rank_table(const std::vector<RunRecord>& records, Variant variant,
                           const std::map<std::string, std::string>& core_datasets = {});

struct ModelRank {
  std::string model;
  double mean_rank = 0.0;
  std::size_t coverage = 0; // tasks contributing to the mean
};

// Core: mean over every (task, dataset) cell. Full: mean over tasks of the
// per-task mean over datasets. Sorted by mean rank, then model id.
std::vector<ModelRank> aggregate_core(const RankTable& table);
std::vector<ModelRank> aggregate_full(const RankTable& table);

// Sample standard deviation of one model's ranks over a task's datasets.
// nullopt when fewer than `floor` values are available.
std::optional<double> rank_std(std::span<const double> ranks, std::size_t floor = 5);

struct RankStd {
  std::string model;
  std::string task;
  std::size_t n_datasets = 0;
  std::optional<double> value;
};
std::vector<RankStd> rank_std_table(const RankTable& table, std::size_t floor = 5);

struct KendallResult {
  double tau = 0.0;
  double p_value = 1.0;
};

// Tau-b with a two-sided normal-approximation p-value using the
// tie-corrected variance.
KendallResult kendall_tau(std::span<const double> a, std::span<const double> b);

// Matches models by id; throws ValidationError when the sets differ.
KendallResult kendall_tau(const std::vector<ModelRank>& a, const std::vector<ModelRank>& b);

struct ReportOptions {
  Variant variant = Variant::Core;
  std::map<std::string, std::string> core_datasets;
  std::size_t rank_std_floor = 5;
};

// Writes scores.csv (raw and normalized, with SEM), ranks.csv, rank_std.csv, kendall.csv and
// plot_data.json into `out_dir`. Returns warnings (e.g. inconsistent seeds).
std::vector<std::string> emit_report(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir,
                                     const ReportOptions& options);

// RFC 4180 field quoting.
std::string csv_field(std::string_view text);

} // namespace nb::ranking
