#pragma once

#include "nb/domain.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nb::metrics {

// Mean per-class recall over the classes present in `truth`.
double balanced_accuracy(std::span<const int> truth, std::span<const int> predicted);

// Mean over labels of 2PR/(P+R). A label with no positives in either argument
// contributes 0.
double macro_f1(const std::vector<std::vector<std::uint8_t>>& truth,
                const std::vector<std::vector<std::uint8_t>>& predicted);

struct PearsonResult {
  double value = 0.0;
  bool degenerate = false; // constant input, value reported as 0
};

PearsonResult pearson_r(std::span<const double> y, std::span<const double> y_hat);

double rmse(std::span<const double> y, std::span<const double> y_hat);

struct TopkResult {
  double accuracy = 0.0;
  double median_rank = 0.0;
  std::vector<std::size_t> ranks; // 1-based rank of the true candidate per query
};

// Ranks candidates by cosine similarity to each query; ties go to the lower
// candidate index.
TopkResult topk_accuracy(const std::vector<std::vector<double>>& queries,
                         const std::vector<std::vector<double>>& candidates,
                         std::span<const std::size_t> true_indices, std::size_t k = 5);

// Retrieval evaluation set: one query per (subject, concept) with predictions
// averaged over repeats, candidates = distinct test targets.
struct RetrievalSet {
  std::vector<std::vector<double>> queries;
  std::vector<std::vector<double>> candidates;
  std::vector<std::size_t> true_indices;
};

RetrievalSet aggregate_retrieval(const std::vector<std::vector<double>>& predictions,
                                 const std::vector<std::vector<double>>& targets,
                                 std::span<const std::string> subject_ids,
                                 std::span<const std::string> concept_ids);

double normalize_score(double s, double s_dummy, double s_perfect);
double normalize_max(double s, double s_dummy, double s_best);
double sem_across_seeds(std::span<const double> values);

struct MetricInfo {
  std::string_view name;
  bool higher_better;
  double perfect;
  std::vector<ObjectiveKind> objectives;
};

const std::vector<MetricInfo>& metric_registry();
const MetricInfo& metric_info(std::string_view name); // throws ValidationError
bool metric_supports(std::string_view name, ObjectiveKind objective);

// Headline metric per objective.
std::string_view default_metric(ObjectiveKind objective);

struct MetricValue {
  double value = 0.0;
  bool degenerate = false;
};

// Evaluates `name` on examples `test` given one prediction per example.
MetricValue evaluate(std::string_view name, ObjectiveKind objective, const ExampleSet& test,
                     std::span<const Prediction> predictions);

int argmax(std::span<const double> values);

} // namespace nb::metrics
