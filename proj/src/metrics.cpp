#include "nb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

namespace nb::metrics {

double balanced_accuracy(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.empty()) throw ValidationError("balanced_accuracy: empty input");
  if (truth.size() != predicted.size())
    throw ValidationError("balanced_accuracy: length mismatch");
  std::map<int, std::pair<std::size_t, std::size_t>> per_class; // hits, total
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto& [hits, total] = per_class[truth[i]];
    ++total;
    if (predicted[i] == truth[i]) ++hits;
  }
  double sum = 0.0;
  for (const auto& [cls, counts] : per_class)
    sum += static_cast<double>(counts.first) / static_cast<double>(counts.second);
  return sum / static_cast<double>(per_class.size());
}

double macro_f1(const std::vector<std::vector<std::uint8_t>>& truth,
                const std::vector<std::vector<std::uint8_t>>& predicted) {
  if (truth.empty()) throw ValidationError("macro_f1: empty input");
  if (truth.size() != predicted.size()) throw ValidationError("macro_f1: length mismatch");
  const std::size_t n_labels = truth.front().size();
  if (n_labels == 0) throw ValidationError("macro_f1: zero labels");
  double sum = 0.0;
  for (std::size_t l = 0; l < n_labels; ++l) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i].size() != n_labels || predicted[i].size() != n_labels)
        throw ValidationError("macro_f1: label vector size mismatch");
      const bool t = truth[i][l] != 0;
      const bool p = predicted[i][l] != 0;
      if (t && p) ++tp;
      else if (p) ++fp;
      else if (t) ++fn;
    }
    const double precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    if (precision + recall > 0.0) sum += 2.0 * precision * recall / (precision + recall);
  }
  return sum / static_cast<double>(n_labels);
}

PearsonResult pearson_r(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw ValidationError("pearson_r: length mismatch");
  if (y.size() < 2) throw ValidationError("pearson_r: need at least 2 values");
  const double n = static_cast<double>(y.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  const double mp = std::accumulate(y_hat.begin(), y_hat.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double a = y[i] - my;
    const double b = y_hat[i] - mp;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return {0.0, true};
  const double r = sxy / (std::sqrt(sxx) * std::sqrt(syy));
  return {std::clamp(r, -1.0, 1.0), false};
}

double rmse(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size() || y.empty()) throw ValidationError("rmse: bad input lengths");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  return std::sqrt(acc / static_cast<double>(y.size()));
}

namespace {

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

TopkResult topk_accuracy(const std::vector<std::vector<double>>& queries,
                         const std::vector<std::vector<double>>& candidates,
                         std::span<const std::size_t> true_indices, std::size_t k) {
  if (candidates.empty()) throw ValidationError("topk_accuracy: empty candidate set");
  if (queries.empty()) throw ValidationError("topk_accuracy: no queries");
  if (k == 0 || k > candidates.size())
    throw ValidationError("topk_accuracy: k must lie in [1, n_candidates]");
  if (queries.size() != true_indices.size())
    throw ValidationError("topk_accuracy: query/true index count mismatch");

  std::vector<double> cand_norm(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) cand_norm[j] = norm2(candidates[j]);

  TopkResult res;
  res.ranks.reserve(queries.size());
  std::vector<std::pair<double, std::size_t>> order(candidates.size());
  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto& query = queries[q];
    if (true_indices[q] >= candidates.size())
      throw ValidationError("topk_accuracy: true index out of range");
    const double qn = norm2(query);
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if (candidates[j].size() != query.size())
        throw ValidationError("topk_accuracy: dimension mismatch");
      double dot = 0.0;
      for (std::size_t d = 0; d < query.size(); ++d) dot += query[d] * candidates[j][d];
      const double denom = qn * cand_norm[j];
      order[j] = {denom > 0.0 ? dot / denom : 0.0, j};
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::size_t rank = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (order[pos].second == true_indices[q]) {
        rank = pos + 1;
        break;
      }
    }
    res.ranks.push_back(rank);
    if (rank <= k) ++hits;
  }
  res.accuracy = static_cast<double>(hits) / static_cast<double>(queries.size());
  std::vector<double> r(res.ranks.begin(), res.ranks.end());
  res.median_rank = median_of(std::move(r));
  return res;
}

RetrievalSet aggregate_retrieval(const std::vector<std::vector<double>>& predictions,
                                 const std::vector<std::vector<double>>& targets,
                                 std::span<const std::string> subject_ids,
                                 std::span<const std::string> concept_ids) {
  const std::size_t n = predictions.size();
  if (targets.size() != n) throw ValidationError("retrieval: prediction/target count mismatch");
  const bool have_subjects = subject_ids.size() == n;
  const bool have_concepts = concept_ids.size() == n;

  // Candidate identity: concept id when known, otherwise the exact target.
  std::map<std::string, std::size_t> concept_slot;
  std::map<std::vector<double>, std::size_t> target_slot;
  std::vector<std::size_t> cand_of(n);
  RetrievalSet out;
  {
    std::vector<std::pair<std::string, std::size_t>> keyed;
    for (std::size_t i = 0; i < n; ++i) {
      std::string key = have_concepts && !concept_ids[i].empty() ? concept_ids[i] : std::string();
      keyed.emplace_back(std::move(key), i);
    }
    // Candidates sorted by concept id so the candidate order is independent of example order.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return std::tie(keyed[a].first, targets[a]) < std::tie(keyed[b].first, targets[b]);
    });
    for (auto i : idx) {
      std::size_t slot;
      if (!keyed[i].first.empty()) {
        auto [it, inserted] = concept_slot.emplace(keyed[i].first, out.candidates.size());
        if (inserted) out.candidates.push_back(targets[i]);
        slot = it->second;
      } else {
        auto [it, inserted] = target_slot.emplace(targets[i], out.candidates.size());
        if (inserted) out.candidates.push_back(targets[i]);
        slot = it->second;
      }
      cand_of[i] = slot;
    }
  }

  // Queries: average predicted embeddings per (subject, candidate).
  std::map<std::pair<std::string, std::size_t>, std::size_t> group;
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i) {
    std::string subj = have_subjects ? subject_ids[i] : std::string();
    auto [it, inserted] = group.emplace(std::make_pair(subj, cand_of[i]), out.queries.size());
    if (inserted) {
      out.queries.push_back(predictions[i]);
      out.true_indices.push_back(cand_of[i]);
      counts.push_back(1);
    } else {
      auto& q = out.queries[it->second];
      if (q.size() != predictions[i].size())
        throw ValidationError("retrieval: prediction dimension mismatch");
      for (std::size_t d = 0; d < q.size(); ++d) q[d] += predictions[i][d];
      ++counts[it->second];
    }
  }
  for (std::size_t g = 0; g < out.queries.size(); ++g) {
    if (counts[g] == 1) continue;
    for (double& v : out.queries[g]) v /= static_cast<double>(counts[g]);
  }
  return out;
}

double normalize_score(double s, double s_dummy, double s_perfect) {
  if (s_perfect == s_dummy) throw ValidationError("normalize_score: s_perfect equals s_dummy");
  return (s - s_dummy) / (s_perfect - s_dummy);
}

double normalize_max(double s, double s_dummy, double s_best) {
  if (s_best == s_dummy) throw ValidationError("normalize_max: s_best equals s_dummy");
  return (s - s_dummy) / (s_best - s_dummy);
}

double sem_across_seeds(std::span<const double> values) {
  if (values.size() < 2) throw ValidationError("sem_across_seeds: need at least 2 values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

const std::vector<MetricInfo>& metric_registry() {
  using enum ObjectiveKind;
  static const std::vector<MetricInfo> registry = {
      {"BalancedAcc", true, 1.0, {BinaryClassification, MulticlassClassification}},
      {"MacroF1", true, 1.0, {MultilabelClassification, BinaryClassification, MulticlassClassification}},
      {"PearsonR", true, 1.0, {Regression}},
      {"RMSE", false, 0.0, {Regression}},
      {"Top5Acc", true, 1.0, {Retrieval}},
      {"MedianRank", false, 1.0, {Retrieval}},
  };
  return registry;
}

const MetricInfo& metric_info(std::string_view name) {
  for (const auto& m : metric_registry())
    if (m.name == name) return m;
  std::string known;
  for (const auto& m : metric_registry()) known += (known.empty() ? "" : ", ") + std::string(m.name);
  throw ValidationError("unknown metric '" + std::string(name) + "' (known: " + known + ")");
}

bool metric_supports(std::string_view name, ObjectiveKind objective) {
  const auto& info = metric_info(name);
  return std::find(info.objectives.begin(), info.objectives.end(), objective) != info.objectives.end();
}

std::string_view default_metric(ObjectiveKind objective) {
  switch (objective) {
  case ObjectiveKind::BinaryClassification:
  case ObjectiveKind::MulticlassClassification: return "BalancedAcc";
  case ObjectiveKind::MultilabelClassification: return "MacroF1";
  case ObjectiveKind::Regression: return "PearsonR";
  case ObjectiveKind::Retrieval: return "Top5Acc";
  }
  return "BalancedAcc";
}

int argmax(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

namespace {

template <typename T>
const T& expect(const Prediction& p, std::size_t i) {
  const auto* v = std::get_if<T>(&p);
  if (!v) throw ValidationError("prediction " + std::to_string(i) + " has the wrong kind");
  return *v;
}

std::vector<std::uint8_t> label_vector_of(const Target& t, std::size_t n_labels) {
  if (const auto* lv = std::get_if<LabelVector>(&t)) return lv->values;
  if (const auto* ci = std::get_if<ClassIndex>(&t)) {
    std::vector<std::uint8_t> v(n_labels, 0);
    v.at(static_cast<std::size_t>(ci->value)) = 1;
    return v;
  }
  throw ValidationError("target is not a class or label vector");
}

} // namespace

MetricValue evaluate(std::string_view name, ObjectiveKind objective, const ExampleSet& test,
                     std::span<const Prediction> predictions) {
  if (predictions.size() != test.n_examples || test.targets.size() != test.n_examples)
    throw ValidationError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(test.n_examples) + " examples");
  if (test.n_examples == 0) throw ValidationError("evaluate: empty test set");
  if (!metric_supports(name, objective))
    throw ValidationError("metric '" + std::string(name) + "' does not apply to " +
                          std::string(to_string(objective)));
  const std::size_t n = test.n_examples;

  if (name == "BalancedAcc") {
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = std::get<ClassIndex>(test.targets[i]).value;
      pred[i] = argmax(expect<ClassProbabilities>(predictions[i], i).values);
    }
    return {balanced_accuracy(truth, pred), false};
  }
  if (name == "MacroF1") {
    std::vector<std::vector<std::uint8_t>> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (objective == ObjectiveKind::MultilabelClassification) {
        truth[i] = std::get<LabelVector>(test.targets[i]).values;
        const auto& probs = expect<LabelProbabilities>(predictions[i], i).values;
        pred[i].resize(probs.size());
        for (std::size_t l = 0; l < probs.size(); ++l) pred[i][l] = probs[l] >= 0.5 ? 1 : 0;
      } else {
        const auto& probs = expect<ClassProbabilities>(predictions[i], i).values;
        truth[i] = label_vector_of(test.targets[i], probs.size());
        pred[i].assign(probs.size(), 0);
        pred[i][static_cast<std::size_t>(argmax(probs))] = 1;
      }
    }
    return {macro_f1(truth, pred), false};
  }
  if (name == "PearsonR" || name == "RMSE") {
    std::vector<double> y(n), y_hat(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = std::get<ScalarTarget>(test.targets[i]).value;
      y_hat[i] = expect<ScalarPrediction>(predictions[i], i).value;
    }
    if (name == "RMSE") return {rmse(y, y_hat), false};
    auto r = pearson_r(y, y_hat);
    return {r.value, r.degenerate};
  }
  if (name == "Top5Acc" || name == "MedianRank") {
    std::vector<std::vector<double>> preds(n), targets(n);
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = expect<EmbeddingPrediction>(predictions[i], i).values;
      targets[i] = std::get<EmbeddingTarget>(test.targets[i]).values;
    }
    auto set = aggregate_retrieval(preds, targets, test.subject_ids, test.concept_ids);
    const std::size_t k = std::min<std::size_t>(5, set.candidates.size());
    auto res = topk_accuracy(set.queries, set.candidates, set.true_indices, k);
    if (name == "MedianRank") return {res.median_rank, false};
    return {res.accuracy, false};
  }
  throw ValidationError("metric '" + std::string(name) + "' has no evaluator");
}

} // namespace nb::metrics
