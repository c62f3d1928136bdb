#include "nb/ranking.hpp"

#include "nb/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace nb::ranking {

using nlohmann::json;

std::string_view to_string(Variant v) { return v == Variant::Core ? "core" : "full"; }

Variant variant_from_string(std::string_view name) {
  if (name == "core") return Variant::Core;
  if (name == "full") return Variant::Full;
  throw ValidationError("unknown variant '" + std::string(name) + "' (expected core or full)");
}

std::vector<double> rank_within_task(std::span<const double> scores, bool higher_better) {
  if (scores.size() < 2) throw ValidationError("ranking needs at least two models");
  for (double s : scores)
    if (!std::isfinite(s)) throw ValidationError("ranking: non-finite score");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return higher_better ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  std::vector<double> ranks(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

namespace {

struct SeedScores {
  std::map<std::uint64_t, const RunRecord*> by_seed;
};

using CellModels = std::map<CellKey, std::map<std::string, SeedScores>>;

CellModels group_records(const std::vector<RunRecord>& records, Variant variant,
                         const std::map<std::string, std::string>& core_datasets) {
  CellModels cells;
  for (const auto& r : records) {
    if (r.status != RunStatus::Ok || r.scores.empty()) continue;
    if (variant == Variant::Core) {
      const auto it = core_datasets.find(r.task_id);
      if (it != core_datasets.end() && it->second != r.dataset_id) continue;
    }
    // Later records (higher attempts) replace earlier ones for the same seed.
    auto& slot = cells[{r.task_id, r.dataset_id}][r.model_id].by_seed[r.seed];
    if (!slot || slot->attempt <= r.attempt) slot = &r;
  }
  return cells;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string seed_list(const SeedScores& s) {
  std::string out;
  for (const auto& [seed, _] : s.by_seed) out += (out.empty() ? "" : ",") + std::to_string(seed);
  return out;
}

} // namespace

RankTable build_rank_table(const std::vector<RunRecord>& records, Variant variant,
                           const std::map<std::string, std::string>& core_datasets) {
  const auto cells = group_records(records, variant, core_datasets);
  RankTable table;
  std::set<std::string> models;
  for (const auto& [key, per_model] : cells) {
    auto& ds = table.datasets[key.task];
    if (std::find(ds.begin(), ds.end(), key.dataset) == ds.end()) ds.push_back(key.dataset);
    std::set<std::string> seed_sets;
    for (const auto& [model, seeds] : per_model) {
      models.insert(model);
      std::vector<double> norm;
      for (const auto& [seed, rec] : seeds.by_seed) norm.push_back(rec->scores.front().normalized);
      table.scores[key][model] = mean_of(norm);
      seed_sets.insert(seed_list(seeds));
    }
    if (seed_sets.size() > 1)
      table.notes.push_back("inconsistent seeds across models for " + key.task + "/" + key.dataset);
    if (per_model.size() < 2) {
      table.notes.push_back("cell " + key.task + "/" + key.dataset + " has fewer than two models; not ranked");
      continue;
    }
    std::vector<std::string> names;
    std::vector<double> values;
    for (const auto& [model, s] : table.scores[key]) {
      names.push_back(model);
      values.push_back(s);
    }
    const auto r = rank_within_task(values, true);
    for (std::size_t i = 0; i < names.size(); ++i) table.ranks[key][names[i]] = r[i];
  }
  for (auto& [task, ds] : table.datasets) std::sort(ds.begin(), ds.end());
  table.models.assign(models.begin(), models.end());
  for (const auto& m : table.models)
    for (const auto& [key, ranks] : table.ranks)
      if (!ranks.contains(m)) table.notes.push_back("model " + m + " absent from " + key.task + "/" + key.dataset);
  return table;
}

namespace {

std::vector<ModelRank> finish(std::map<std::string, std::vector<double>> per_model) {
  std::vector<ModelRank> out;
  for (auto& [model, ranks] : per_model)
    if (!ranks.empty()) out.push_back({model, mean_of(ranks), ranks.size()});
  std::stable_sort(out.begin(), out.end(), [](const ModelRank& a, const ModelRank& b) {
    return a.mean_rank != b.mean_rank ? a.mean_rank < b.mean_rank : a.model < b.model;
  });
  return out;
}

} // namespace

std::vector<ModelRank> aggregate_core(const RankTable& table) {
  std::map<std::string, std::vector<double>> per_model;
  for (const auto& [key, ranks] : table.ranks)
    for (const auto& [model, r] : ranks) per_model[model].push_back(r);
  return finish(std::move(per_model));
}

std::vector<ModelRank> aggregate_full(const RankTable& table) {
  std::map<std::string, std::map<std::string, std::vector<double>>> by_task; // model -> task -> ranks
  for (const auto& [key, ranks] : table.ranks)
    for (const auto& [model, r] : ranks) by_task[model][key.task].push_back(r);
  std::map<std::string, std::vector<double>> per_model;
  for (const auto& [model, tasks] : by_task)
    for (const auto& [task, ranks] : tasks) per_model[model].push_back(mean_of(ranks));
  return finish(std::move(per_model));
}

std::optional<double> rank_std(std::span<const double> ranks, std::size_t floor) {
  if (ranks.size() < std::max<std::size_t>(floor, 2)) return std::nullopt;
  const double n = static_cast<double>(ranks.size());
  const double mean = std::accumulate(ranks.begin(), ranks.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : ranks) ss += (r - mean) * (r - mean);
  return std::sqrt(ss / (n - 1.0));
}

std::vector<RankStd> rank_std_table(const RankTable& table, std::size_t floor) {
  std::vector<RankStd> out;
  for (const auto& model : table.models)
    for (const auto& [task, datasets] : table.datasets) {
      std::vector<double> ranks;
      for (const auto& ds : datasets) {
        const auto it = table.ranks.find({task, ds});
        if (it == table.ranks.end()) continue;
        if (const auto r = it->second.find(model); r != it->second.end()) ranks.push_back(r->second);
      }
      out.push_back({model, task, ranks.size(), rank_std(ranks, floor)});
    }
  return out;
}

KendallResult kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("kendall_tau: rankings differ in length");
  const std::size_t n = a.size();
  if (n < 2) throw ValidationError("kendall_tau: need at least two items");
  double concordant_minus_discordant = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = (a[i] > a[j]) - (a[i] < a[j]);
      const double t = (b[i] > b[j]) - (b[i] < b[j]);
      concordant_minus_discordant += s * t;
    }
  struct TieSums {
    double pairs = 0, v1 = 0, v2 = 0; // sum t(t-1)/2, t(t-1)(t-2), t(t-1)(2t+5)
  };
  auto ties = [](std::span<const double> x) {
    std::map<double, double> counts;
    for (double v : x) counts[v] += 1.0;
    TieSums s;
    for (const auto& [v, t] : counts) {
      s.pairs += t * (t - 1) / 2;
      s.v1 += t * (t - 1) * (t - 2);
      s.v2 += t * (t - 1) * (2 * t + 5);
    }
    return s;
  };
  const TieSums tx = ties(a), ty = ties(b);
  const double nd = static_cast<double>(n);
  const double n0 = nd * (nd - 1) / 2;
  const double denom = std::sqrt((n0 - tx.pairs) * (n0 - ty.pairs));
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  if (denom == 0.0) return {nan, nan};
  KendallResult res;
  res.tau = std::clamp(concordant_minus_discordant / denom, -1.0, 1.0);
  const double m = nd * (nd - 1);
  double var = (m * (2 * nd + 5) - tx.v2 - ty.v2) / 18 + 2 * tx.pairs * ty.pairs / m;
  if (n > 2) var += tx.v1 * ty.v1 / (9 * m * (nd - 2));
  const double z = concordant_minus_discordant / std::sqrt(var);
  res.p_value = std::erfc(std::abs(z) / std::sqrt(2.0));
  return res;
}

KendallResult kendall_tau(const std::vector<ModelRank>& a, const std::vector<ModelRank>& b) {
  std::map<std::string, double> ra, rb;
  for (const auto& m : a) ra[m.model] = m.mean_rank;
  for (const auto& m : b) rb[m.model] = m.mean_rank;
  std::vector<double> va, vb;
  for (const auto& [model, r] : ra) {
    const auto it = rb.find(model);
    if (it == rb.end()) throw ValidationError("kendall_tau: model '" + model + "' missing from second ranking");
    va.push_back(r);
    vb.push_back(it->second);
  }
  if (ra.size() != rb.size()) throw ValidationError("kendall_tau: rankings cover different model sets");
  return kendall_tau(va, vb);
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed: " + path.string());
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) line += (i ? "," : "") + csv_field(fields[i]);
  return line + "\r\n";
}

json num_or_null(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

} // namespace

std::vector<std::string> emit_report(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir,
                                     const ReportOptions& options) {
  const auto cells = group_records(records, options.variant, options.core_datasets);
  if (cells.empty()) throw ValidationError("report: results store holds no successful runs");
  std::filesystem::create_directories(out_dir);

  const RankTable table = build_rank_table(records, options.variant, options.core_datasets);
  const auto aggregate = options.variant == Variant::Core ? aggregate_core(table) : aggregate_full(table);
  std::vector<std::string> warnings = table.notes;

  // Per-(cell, model, metric) statistics.
  struct Stat {
    std::size_t n = 0;
    double mean = 0, norm_mean = 0;
    std::optional<double> sem, norm_sem, max_norm;
    bool overlap = false;
  };
  std::map<std::tuple<std::string, std::string, std::string, std::string>, Stat> stats; // task, dataset, metric, model
  json bars = json::array();
  for (const auto& [key, per_model] : cells) {
    std::map<std::string, std::map<std::string, std::vector<const ScoreRecord*>>> by_metric; // metric -> model
    for (const auto& [model, seeds] : per_model)
      for (const auto& [seed, rec] : seeds.by_seed)
        for (const auto& s : rec->scores) by_metric[s.metric_name][model].push_back(&s);
    for (const auto& [metric, per] : by_metric) {
      bool higher = true;
      try {
        higher = metrics::metric_info(metric).higher_better;
      } catch (const ValidationError&) {
        warnings.push_back("unknown metric '" + metric + "' treated as higher-is-better");
      }
      std::optional<double> best;
      for (const auto& [model, list] : per) {
        std::vector<double> v;
        for (const auto* s : list) v.push_back(s->value);
        const double m = mean_of(v);
        if (!best || (higher ? m > *best : m < *best)) best = m;
      }
      for (const auto& [model, list] : per) {
        Stat st;
        std::vector<double> v, nv, mx;
        for (const auto* s : list) {
          v.push_back(s->value);
          nv.push_back(s->normalized);
          if (*best != s->dummy_value) mx.push_back(metrics::normalize_max(s->value, s->dummy_value, *best));
        }
        st.n = v.size();
        st.mean = mean_of(v);
        st.norm_mean = mean_of(nv);
        if (v.size() >= 2) {
          st.sem = metrics::sem_across_seeds(v);
          st.norm_sem = metrics::sem_across_seeds(nv);
        }
        if (mx.size() == list.size()) st.max_norm = mean_of(mx);
        for (const auto& [seed, rec] : per_model.at(model).by_seed) st.overlap = st.overlap || rec->pretrain_overlap;
        stats[{key.task, key.dataset, metric, model}] = st;
      }
    }
  }

  std::string scores_csv = csv_row({"task", "dataset", "metric", "model", "n_seeds", "mean", "sem", "normalized_mean",
                                    "normalized_sem", "max_normalized_mean", "pretrain_overlap"});
  for (const auto& [k, st] : stats) {
    const auto& [task, dataset, metric, model] = k;
    scores_csv += csv_row({task, dataset, metric, model, std::to_string(st.n), fmt(st.mean), fmt(st.sem.value_or(NAN)),
                           fmt(st.norm_mean), fmt(st.norm_sem.value_or(NAN)), fmt(st.max_norm.value_or(NAN)),
                           st.overlap ? "true" : "false"});
  }
  write_file(out_dir / "scores.csv", scores_csv);

  // Rank table: rows in aggregate order, one column per ranked cell.
  std::vector<CellKey> columns;
  for (const auto& [key, r] : table.ranks) columns.push_back(key);
  std::vector<std::string> header = {"model"};
  for (const auto& c : columns) header.push_back(c.task + "/" + c.dataset);
  header.insert(header.end(), {"mean_rank", "coverage"});
  std::string ranks_csv = csv_row(header);
  json boxes = json::array();
  for (const auto& m : aggregate) {
    std::vector<std::string> row = {m.model};
    json box = json::array();
    for (const auto& c : columns) {
      const auto& r = table.ranks.at(c);
      const auto it = r.find(m.model);
      row.push_back(it == r.end() ? "" : fmt(it->second));
      if (it != r.end()) box.push_back({{"task", c.task}, {"dataset", c.dataset}, {"rank", it->second}});
    }
    row.push_back(fmt(m.mean_rank));
    row.push_back(std::to_string(m.coverage));
    ranks_csv += csv_row(row);
    boxes.push_back({{"model", m.model}, {"ranks", box}});
  }
  write_file(out_dir / "ranks.csv", ranks_csv);

  std::string std_csv = csv_row({"model", "task", "n_datasets", "rank_std"});
  json std_json = json::array();
  for (const auto& s : rank_std_table(table, options.rank_std_floor)) {
    std_csv += csv_row({s.model, s.task, std::to_string(s.n_datasets), s.value ? fmt(*s.value) : ""});
    std_json.push_back({{"model", s.model}, {"task", s.task}, {"n_datasets", s.n_datasets}, {"rank_std", num_or_null(s.value)}});
  }
  write_file(out_dir / "rank_std.csv", std_csv);

  // Core vs Full agreement over the models present in both.
  const auto core = aggregate_core(build_rank_table(records, Variant::Core, options.core_datasets));
  const auto full = aggregate_full(build_rank_table(records, Variant::Full, options.core_datasets));
  std::set<std::string> in_full;
  for (const auto& m : full) in_full.insert(m.model);
  std::vector<ModelRank> core_common, full_common;
  for (const auto& m : core)
    if (in_full.contains(m.model)) core_common.push_back(m);
  for (const auto& m : full)
    if (std::any_of(core_common.begin(), core_common.end(), [&](const ModelRank& c) { return c.model == m.model; }))
      full_common.push_back(m);
  std::optional<KendallResult> tau;
  if (core_common.size() >= 2) tau = kendall_tau(core_common, full_common);
  else warnings.push_back("fewer than two models shared by core and full rankings; tau not computed");
  std::string tau_csv = csv_row({"ranking_a", "ranking_b", "n_models", "tau_b", "p_value"});
  tau_csv += csv_row({"core", "full", std::to_string(core_common.size()), tau ? fmt(tau->tau) : "",
                      tau ? fmt(tau->p_value) : ""});
  write_file(out_dir / "kendall.csv", tau_csv);

  for (const auto& [k, st] : stats) {
    const auto& [task, dataset, metric, model] = k;
    bars.push_back({{"task", task},
                    {"dataset", dataset},
                    {"metric", metric},
                    {"model", model},
                    {"normalized_mean", st.norm_mean},
                    {"normalized_sem", num_or_null(st.norm_sem)},
                    {"max_normalized_mean", num_or_null(st.max_norm)},
                    {"pretrain_overlap", st.overlap}});
  }
  json order = json::array();
  json mean_ranks = json::array();
  for (const auto& m : aggregate) {
    order.push_back(m.model);
    mean_ranks.push_back({{"model", m.model}, {"mean_rank", m.mean_rank}, {"coverage", m.coverage}});
  }
  json plot = {{"schema", "report/v1"},
               {"variant", std::string(to_string(options.variant))},
               {"model_order", order},
               {"mean_ranks", mean_ranks},
               {"bars", bars},
               {"boxes", boxes},
               {"rank_std", std_json},
               {"kendall", {{"ranking_a", "core"},
                            {"ranking_b", "full"},
                            {"n_models", core_common.size()},
                            {"tau_b", tau ? num_or_null(tau->tau) : json(nullptr)},
                            {"p_value", tau ? num_or_null(tau->p_value) : json(nullptr)}}},
               {"warnings", warnings}};
  write_file(out_dir / "plot_data.json", plot.dump(2) + "\n");
  return warnings;
}

} // namespace nb::ranking
