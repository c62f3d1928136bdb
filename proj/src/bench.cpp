#include "nb/bench.hpp"

#include "nb/baseline.hpp"
#include "nb/data.hpp"
#include "nb/metrics.hpp"
#include "nb/optim.hpp"
#include "nb/protocol.hpp"
#include "nb/split.hpp"
#include "nb/store.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace nb::bench {

using nlohmann::json;
namespace fs = std::filesystem;

Paths Paths::from_root(const fs::path& root) {
  return {root, root / "data", root / "cache", root / "results.jsonl"};
}

Paths default_paths() {
  const char* env = std::getenv("NB_ROOT");
  return Paths::from_root(env && *env ? fs::path(env) : fs::path("nb_root"));
}

const std::vector<std::string>& internal_models() {
  static const std::vector<std::string> models = {"dummy", "chance", "handcrafted", "linear", "linear_pooled"};
  return models;
}

ExternalRunner parse_runner(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("runner spec must be id=command, got '" + text + "'");
  ExternalRunner r;
  r.id = text.substr(0, eq);
  std::istringstream in(text.substr(eq + 1));
  for (std::string arg; in >> arg;) r.argv.push_back(arg);
  if (r.argv.empty()) throw ValidationError("runner '" + r.id + "' has an empty command");
  if (std::find(internal_models().begin(), internal_models().end(), r.id) != internal_models().end())
    throw ValidationError("runner id '" + r.id + "' shadows an internal model");
  return r;
}

config::TaskSpec resolve_task(const std::string& task_id, const std::vector<std::string>& overrides) {
  const config::TaskSpec& base = config::find_task(task_id);
  return overrides.empty() ? base : config::apply_overrides(base, overrides);
}

std::uint64_t experiment_hash(const config::TaskSpec& spec, const std::string& model_id, const std::string& dataset_id) {
  return hash_config(config::canonical_text(spec) + "\nmodel=" + model_id + "\ndataset=" + dataset_id);
}

std::map<std::string, std::string> core_datasets() {
  std::map<std::string, std::string> out;
  for (const auto& t : config::builtin_task_registry()) out[t.task_id] = t.source_name;
  return out;
}

std::vector<Experiment> plan(const PlanRequest& request, const std::vector<RunRecord>& existing,
                             const std::vector<ExternalRunner>& runners) {
  std::vector<std::string> tasks = request.tasks;
  if (tasks.empty())
    for (const auto& t : config::builtin_task_registry()) tasks.push_back(t.task_id);
  std::vector<std::string> models = request.models;
  if (models.empty()) {
    models = internal_models();
    for (const auto& r : runners) models.push_back(r.id);
  }
  for (const auto& m : models) {
    const bool internal = std::find(internal_models().begin(), internal_models().end(), m) != internal_models().end();
    const bool external = std::any_of(runners.begin(), runners.end(), [&](const auto& r) { return r.id == m; });
    if (!internal && !external) {
      std::string valid;
      for (const auto& i : internal_models()) valid += (valid.empty() ? "" : ", ") + i;
      for (const auto& r : runners) valid += ", " + r.id;
      throw ValidationError("unknown model '" + m + "'; valid models: " + valid);
    }
  }

  using Key = std::tuple<std::string, std::string, std::string, std::uint64_t, std::uint64_t>;
  std::map<Key, std::pair<bool, std::uint32_t>> seen; // completed?, next attempt
  for (const auto& r : existing) {
    auto& [ok, next] = seen[{r.model_id, r.task_id, r.dataset_id, r.seed, r.config_hash}];
    ok = ok || r.status == RunStatus::Ok;
    next = std::max(next, r.attempt + 1);
  }

  std::vector<Experiment> out;
  for (const auto& task_id : tasks) {
    const auto spec = resolve_task(task_id, request.overrides);
    const auto all = spec.datasets();
    const std::vector<std::string> datasets =
        request.variant == ranking::Variant::Core ? std::vector<std::string>{all.front()} : all;
    const int n_seeds = request.n_seeds > 0 ? request.n_seeds : spec.trainer.n_seeds;
    for (const auto& ds : datasets)
      for (const auto& m : models) {
        const auto h = experiment_hash(spec, m, ds);
        for (int s = 0; s < n_seeds; ++s) {
          Experiment e{m, task_id, ds, static_cast<std::uint64_t>(s), h, 0};
          if (const auto it = seen.find({m, task_id, ds, e.seed, h}); it != seen.end()) {
            if (it->second.first && !request.force) continue;
            e.attempt = it->second.second;
          }
          out.push_back(std::move(e));
        }
      }
  }
  return out;
}

// ---------------------------------------------------------------- preparation

namespace {

std::string sanitize(std::string id) {
  for (char& c : id)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-' && c != '_') c = '_';
  return id;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

} // namespace

PreparedSplit prepare(const config::TaskSpec& spec, const std::string& dataset_id, const Paths& paths) {
  const auto key = hash_config(config::canonical_text(spec) + "\ndataset=" + dataset_id);
  const fs::path dir = paths.cache_root / sanitize(spec.task_id);
  const std::string stem = sanitize(dataset_id) + "-" + to_hex(key);
  PreparedSplit out;
  out.cache_path = dir / (stem + ".nbc");
  out.manifest_path = dir / (stem + ".split.json");

  if (fs::exists(out.cache_path) && fs::exists(out.manifest_path)) {
    json meta;
    out.examples = data::read_cache(out.cache_path, &meta);
    out.n_outputs = meta.at("n_outputs").get<std::size_t>();
    out.split_hash = split::split_hash(out.examples);
    std::ifstream in(out.manifest_path);
    const json manifest = json::parse(in, nullptr, false);
    if (manifest.is_discarded() || hash_config(manifest.dump()) != out.split_hash)
      throw Error("split manifest " + out.manifest_path.string() + " disagrees with cache " + out.cache_path.string());
    out.log.push_back("cache hit: " + out.cache_path.string());
    return out;
  }

  auto prepared = data::prepare_dataset(spec, dataset_id, paths.data_root);
  out.examples = split::apply_split(prepared.examples, spec.split);
  out.n_outputs = spec.n_outputs ? spec.n_outputs : prepared.encoding.n_outputs;
  out.split_hash = split::split_hash(out.examples);
  out.log = std::move(prepared.log);
  if (prepared.dropped) out.log.push_back(std::to_string(prepared.dropped) + " out-of-bounds windows dropped");
  if (const auto problems = validate_example_set(out.examples); !problems.empty())
    throw ValidationError("prepared example set is invalid: " + problems.front());

  fs::create_directories(dir);
  write_text_atomic(out.manifest_path, split::split_manifest(out.examples).dump());
  const json meta = {{"task_id", spec.task_id},         {"dataset_id", dataset_id},
                     {"n_outputs", out.n_outputs},      {"class_names", prepared.encoding.class_names},
                     {"objective", std::string(to_string(spec.objective))},
                     {"split_hash", to_hex(out.split_hash)}};
  data::write_cache(out.examples, out.cache_path, meta);
  return out;
}

// ---------------------------------------------------------------- scoring

std::vector<ScoreRecord> score_predictions(const config::TaskSpec& spec, const ExampleSet& es, std::size_t n_outputs,
                                           std::span<const Prediction> predictions, std::uint64_t seed) {
  const auto test_idx = es.indices_of(SplitLabel::Test);
  const ExampleSet test = subset(es, test_idx);
  const auto dummy = baseline::dummy_fit_predict(es, spec.objective, n_outputs, seed);
  std::vector<ScoreRecord> out;
  for (const auto& name : spec.metric_names) {
    const auto& info = metrics::metric_info(name);
    const auto s = metrics::evaluate(name, spec.objective, test, predictions);
    const auto d = metrics::evaluate(name, spec.objective, test, dummy);
    ScoreRecord r;
    r.metric_name = name;
    r.value = s.value;
    r.dummy_value = d.value;
    r.perfect_value = info.perfect;
    r.seed = seed;
    r.n_test = test_idx.size();
    r.degenerate = s.degenerate || d.degenerate;
    if (d.value == info.perfect) {
      r.normalized = 0.0;
      r.degenerate = true;
    } else {
      r.normalized = metrics::normalize_score(s.value, d.value, info.perfect);
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------- execution

namespace {

struct ModelOutput {
  RunStatus status = RunStatus::Ok;
  std::string reason;
  std::vector<Prediction> predictions;
  std::map<std::string, std::string> deviations;
  bool pretrain_overlap = false;
};

std::vector<Prediction> linear_predictions(const config::TaskSpec& spec, const ExampleSet& es, std::uint64_t seed,
                                           optim::InputMode mode) {
  const auto trained = optim::train_linear_decoder(spec, es, spec.trainer, seed, mode);
  const auto test = es.indices_of(SplitLabel::Test);
  return optim::to_predictions(trained.decoder.forward(optim::make_features(es, test, mode)), spec.objective);
}

ModelOutput run_external(const ExternalRunner& runner, const config::TaskSpec& spec, const PreparedSplit& prep,
                         std::uint64_t seed, const RunOptions& options) {
  ModelOutput out;
  out.pretrain_overlap = runner.pretrain_overlap;
  protocol::ProcessTransport transport(runner.argv);
  protocol::RunnerClient client(transport, options.runner_timeout);
  const auto caps = client.handshake();
  if (std::find(caps.objectives.begin(), caps.objectives.end(), spec.objective) == caps.objectives.end()) {
    client.bye();
    return {RunStatus::Declined, "runner does not support objective " + std::string(to_string(spec.objective)), {}, {},
            runner.pretrain_overlap};
  }
  if (spec.objective == ObjectiveKind::Retrieval && caps.max_embedding_dim && prep.n_outputs > caps.max_embedding_dim) {
    client.bye();
    return {RunStatus::Declined, "embedding dimension exceeds runner maximum", {}, {}, runner.pretrain_overlap};
  }
  const auto offer = client.offer_task(spec, prep.n_outputs, {prep.cache_path, prep.manifest_path, prep.split_hash, seed});
  if (!offer.accepted) {
    client.bye();
    return {RunStatus::Declined, offer.reason, {}, {}, runner.pretrain_overlap};
  }
  client.train();
  const auto n_test = prep.examples.indices_of(SplitLabel::Test).size();
  auto collected = client.collect_predictions(SplitLabel::Test, n_test, spec.objective, prep.n_outputs);
  client.bye();
  out.predictions = std::move(collected.predictions);
  out.deviations = std::move(collected.deviations);
  return out;
}

ModelOutput ok(std::vector<Prediction> predictions, std::map<std::string, std::string> deviations = {}) {
  ModelOutput out;
  out.predictions = std::move(predictions);
  out.deviations = std::move(deviations);
  return out;
}

ModelOutput run_model(const Experiment& e, const config::TaskSpec& spec, const PreparedSplit& prep,
                      const RunOptions& options) {
  const ExampleSet& es = prep.examples;
  if (e.model_id == "dummy") return ok(baseline::dummy_fit_predict(es, spec.objective, prep.n_outputs, e.seed));
  if (e.model_id == "chance") return ok(baseline::chance_predict(es, spec.objective, prep.n_outputs, e.seed));
  if (e.model_id == "handcrafted") {
    auto r = baseline::run_handcrafted(spec, es, prep.n_outputs, e.seed);
    return ok(std::move(r.predictions), {{"pipeline", std::string(baseline::to_string(r.pipeline))}});
  }
  if (e.model_id == "linear") return ok(linear_predictions(spec, es, e.seed, optim::InputMode::Flatten));
  if (e.model_id == "linear_pooled") return ok(linear_predictions(spec, es, e.seed, optim::InputMode::Pooled));
  for (const auto& r : options.runners)
    if (r.id == e.model_id) return run_external(r, spec, prep, e.seed, options);
  throw ValidationError("unknown model '" + e.model_id + "'");
}

RunRecord execute(const Experiment& e, const config::TaskSpec* spec, const PreparedSplit* prep,
                  const std::string& prep_error, const RunOptions& options) {
  RunRecord rec;
  rec.model_id = e.model_id;
  rec.task_id = e.task_id;
  rec.dataset_id = e.dataset_id;
  rec.seed = e.seed;
  rec.config_hash = e.config_hash;
  rec.attempt = e.attempt;
  for (const auto& r : options.runners)
    if (r.id == e.model_id) rec.pretrain_overlap = r.pretrain_overlap;
  rec.started_at = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (!prep) throw Error("data preparation failed: " + prep_error);
    rec.split_hash = prep->split_hash;
    auto out = run_model(e, *spec, *prep, options);
    rec.status = out.status;
    rec.reason = out.reason;
    rec.deviations = std::move(out.deviations);
    if (rec.status == RunStatus::Ok)
      rec.scores = score_predictions(*spec, prep->examples, prep->n_outputs, out.predictions, e.seed);
  } catch (const std::exception& ex) {
    rec.status = RunStatus::Failed;
    rec.reason = ex.what();
    rec.scores.clear();
  }
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec.finished_at = utc_now();
  return rec;
}

} // namespace

RunSummary run(const std::vector<Experiment>& experiments, const RunOptions& options) {
  RunSummary summary;
  store::WriterLock lock(options.paths.store_file);
  store::ResultsStore results(options.paths.store_file);

  // Prepare every (task, dataset) once, serially; workers share the result read-only.
  using CellKey = std::pair<std::string, std::string>;
  std::map<std::string, config::TaskSpec> specs;
  std::map<CellKey, std::optional<PreparedSplit>> prepared;
  std::map<CellKey, std::string> prep_errors;
  for (const auto& e : experiments) {
    if (!specs.contains(e.task_id)) specs.emplace(e.task_id, resolve_task(e.task_id, options.overrides));
    const CellKey key{e.task_id, e.dataset_id};
    if (prepared.contains(key)) continue;
    try {
      auto p = prepare(specs.at(e.task_id), e.dataset_id, options.paths);
      for (const auto& line : p.log) summary.warnings.push_back(e.task_id + "/" + e.dataset_id + ": " + line);
      prepared[key] = std::move(p);
    } catch (const std::exception& ex) {
      prepared[key] = std::nullopt;
      prep_errors[key] = ex.what();
    }
  }
  for (auto& [task, spec] : specs)
    for (const auto& [key, p] : prepared)
      if (key.first == task && p && spec.n_outputs == 0) spec.n_outputs = p->n_outputs;

  const std::size_t n = experiments.size();
  std::vector<std::optional<RunRecord>> done(n);
  std::mutex mutex;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const auto& e = experiments[i];
      const CellKey key{e.task_id, e.dataset_id};
      const auto& p = prepared.at(key);
      // Per-dataset n_outputs can differ from the task default.
      config::TaskSpec spec = specs.at(e.task_id);
      if (p) spec.n_outputs = p->n_outputs;
      const std::string err = prep_errors.contains(key) ? prep_errors.at(key) : "";
      RunRecord rec = execute(e, &spec, p ? &*p : nullptr, err, options);
      {
        std::lock_guard g(mutex);
        done[i] = std::move(rec);
      }
      cv.notify_all();
    }
  };
  std::size_t jobs = options.jobs ? options.jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, std::max<std::size_t>(n, 1));
  std::vector<std::jthread> pool;
  for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);

  for (std::size_t i = 0; i < n; ++i) {
    RunRecord rec;
    {
      std::unique_lock g(mutex);
      cv.wait(g, [&] { return done[i].has_value(); });
      rec = std::move(*done[i]);
      done[i].reset();
    }
    try {
      results.append(rec);
    } catch (const std::exception& ex) {
      summary.warnings.push_back(std::string("store append failed: ") + ex.what());
      rec.status = RunStatus::Failed;
      rec.reason = ex.what();
    }
    switch (rec.status) {
    case RunStatus::Ok: ++summary.ok; break;
    case RunStatus::Failed: ++summary.failed; break;
    case RunStatus::Declined: ++summary.declined; break;
    }
    if (options.on_record) options.on_record(rec);
    summary.records.push_back(std::move(rec));
  }
  return summary;
}

} // namespace nb::bench
