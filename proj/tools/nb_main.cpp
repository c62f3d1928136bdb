// nb: command-line front end of the benchmark engine.
#include "nb/bench.hpp"
#include "nb/config.hpp"
#include "nb/data.hpp"
#include "nb/ranking.hpp"
#include "nb/store.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

namespace {

using namespace nb;

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

struct RunArgs {
  std::string models, tasks, variant = "core";
  int seeds = 0;
  std::vector<std::string> overrides, runners;
  bool force = false;
  std::size_t jobs = 0;
  double timeout = 30.0;
};

void add_run_options(CLI::App* app, RunArgs& a, bool with_tasks) {
  app->add_option("--models", a.models, "comma-separated model ids (default: all)");
  if (with_tasks) app->add_option("--tasks", a.tasks, "comma-separated task ids (default: all)");
  app->add_option("--seeds", a.seeds, "number of seeds (default: task setting)");
  app->add_option("--set", a.overrides, "config override key=value (repeatable)");
  app->add_option("--runner", a.runners, "external runner id=command (repeatable)");
  app->add_option("--variant", a.variant, "core or full")->check(CLI::IsMember({"core", "full"}));
  app->add_option("--jobs", a.jobs, "worker threads (default: logical cores)");
  app->add_option("--timeout", a.timeout, "runner response timeout in seconds");
  app->add_flag("--force", a.force, "rerun experiments already in the store");
}

int do_run(const RunArgs& a) {
  const auto paths = bench::default_paths();
  store::ResultsStore results(paths.store_file);
  const auto loaded = results.load();
  for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";

  std::vector<bench::ExternalRunner> runners;
  for (const auto& r : a.runners) runners.push_back(bench::parse_runner(r));
  bench::PlanRequest req;
  req.variant = ranking::variant_from_string(a.variant);
  req.models = split_csv(a.models);
  req.tasks = split_csv(a.tasks);
  req.n_seeds = a.seeds;
  req.overrides = a.overrides;
  req.force = a.force;
  const auto experiments = bench::plan(req, loaded.records, runners);
  std::cout << "planned " << experiments.size() << " experiments\n";
  if (experiments.empty()) return 0;

  bench::RunOptions opt;
  opt.paths = paths;
  opt.jobs = a.jobs;
  opt.runners = runners;
  opt.overrides = a.overrides;
  opt.runner_timeout = std::chrono::milliseconds(static_cast<long long>(a.timeout * 1000));
  opt.on_record = [](const RunRecord& r) {
    std::cout << to_string(r.status) << "  " << r.model_id << "  " << r.task_id << "/" << r.dataset_id << "  seed "
              << r.seed;
    if (!r.scores.empty()) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "  %s=%.4f (norm %.4f)", r.scores.front().metric_name.c_str(),
                    r.scores.front().value, r.scores.front().normalized);
      std::cout << buf;
    }
    if (!r.reason.empty()) std::cout << "  [" << r.reason << "]";
    std::cout << std::endl;
  };
  const auto summary = bench::run(experiments, opt);
  for (const auto& w : summary.warnings) std::cerr << "note: " << w << "\n";
  std::cout << summary.ok << " ok, " << summary.failed << " failed, " << summary.declined << " declined\n";
  return summary.failed == 0 ? 0 : 1;
}

int do_modality(const std::string& modality, const std::string& task_id, bool download, bool prepare_only,
                RunArgs a) {
  const auto spec = bench::resolve_task(task_id, a.overrides);
  if (spec.modality != modality)
    throw ValidationError("task '" + task_id + "' has modality '" + spec.modality + "', not '" + modality + "'");
  if (download || prepare_only) {
    const auto paths = bench::default_paths();
    for (const auto& ds : spec.datasets()) {
      if (download && ds.rfind("synthetic:", 0) != 0)
        throw ValidationError("downloads are not supported; place recordings for '" + ds + "' under " +
                              data::dataset_dir(spec, ds, paths.data_root).string());
      if (download) {
        data::prepare_dataset(spec, ds, paths.data_root);
        std::cout << "materialized " << ds << "\n";
      } else {
        const auto p = bench::prepare(spec, ds, paths);
        std::cout << "prepared " << ds << " -> " << p.cache_path.string() << " (" << p.examples.n_examples
                  << " examples, split " << to_hex(p.split_hash) << ")\n";
      }
    }
    return 0;
  }
  a.tasks = task_id;
  return do_run(a);
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"nb: neural decoding benchmark engine"};
  app.require_subcommand(1);

  auto* list_tasks = app.add_subcommand("list-tasks", "list registered tasks");
  auto* list_models = app.add_subcommand("list-models", "list internal models");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "plan and run experiments");
  add_run_options(run, run_args, true);

  std::string report_variant = "core", report_out = "report";
  std::size_t std_floor = 5;
  auto* report = app.add_subcommand("report", "emit ranking report from the results store");
  report->add_option("--variant", report_variant, "core or full")->check(CLI::IsMember({"core", "full"}));
  report->add_option("--out", report_out, "output directory")->required();
  report->add_option("--rank-std-floor", std_floor, "minimum datasets for rank std");

  auto* compact = app.add_subcommand("compact", "rewrite the results store without unreadable lines");

  // `nb <modality> <task> [--download | --prepare]`
  std::string task_id;
  bool download = false, prepare_only = false;
  RunArgs modality_args;
  std::set<std::string> modalities;
  for (const auto& t : config::builtin_task_registry()) modalities.insert(t.modality);
  std::map<std::string, CLI::App*> modality_cmds;
  for (const auto& m : modalities) {
    auto* sub = app.add_subcommand(m, "run or prepare one " + m + " task");
    sub->add_option("task", task_id, "task id")->required();
    sub->add_flag("--download", download, "materialize the raw dataset");
    sub->add_flag("--prepare", prepare_only, "build the split cache only");
    add_run_options(sub, modality_args, false);
    modality_cmds[m] = sub;
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (*list_tasks) {
      for (const auto& t : config::builtin_task_registry())
        std::cout << t.task_id << "\t" << t.modality << "\t" << to_string(t.objective) << "\t"
                  << config::to_string(t.split.kind) << "\t" << t.datasets().size() << " dataset(s)\n";
      return 0;
    }
    if (*list_models) {
      for (const auto& m : bench::internal_models()) std::cout << m << "\n";
      return 0;
    }
    if (*run) return do_run(run_args);
    if (*report) {
      const auto paths = bench::default_paths();
      const auto loaded = store::ResultsStore(paths.store_file).load();
      for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
      ranking::ReportOptions opt;
      opt.variant = ranking::variant_from_string(report_variant);
      opt.core_datasets = bench::core_datasets();
      opt.rank_std_floor = std_floor;
      for (const auto& w : ranking::emit_report(loaded.records, report_out, opt)) std::cerr << "note: " << w << "\n";
      std::cout << "report written to " << report_out << "\n";
      return 0;
    }
    if (*compact) {
      store::WriterLock lock(bench::default_paths().store_file);
      const auto dropped = store::ResultsStore(bench::default_paths().store_file).compact();
      std::cout << "dropped " << dropped << " unreadable line(s)\n";
      return 0;
    }
    for (const auto& [m, sub] : modality_cmds)
      if (*sub) return do_modality(m, task_id, download, prepare_only, modality_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
