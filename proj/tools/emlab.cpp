// emlab: train -> measure -> analyze / sweep / freeze / report pipeline for capability-emergence runs.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <CLI11.hpp>

#include <iostream>

#include "emlab/pipeline/analyze.hpp"
#include "emlab/pipeline/config.hpp"
#include "emlab/pipeline/measure.hpp"
#include "emlab/pipeline/run_train.hpp"

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;

std::filesystem::path run_dir_for(const emlab::ExperimentConfig& cfg, const std::string& override_dir) {
  if (!override_dir.empty()) return emlab::resolve_output(override_dir);
  if (!cfg.output_dir.empty()) return emlab::resolve_output(cfg.output_dir);
  return emlab::resolve_output("runs/" + cfg.name);
}

emlab::ExperimentConfig run_config(const std::filesystem::path& run) {
  if (!std::filesystem::exists(run / "config.yaml"))
    throw emlab::CsvError("not a run directory (no config.yaml): " + run.string());
  return emlab::load_experiment_config(run / "config.yaml");
}

emlab::MeasurePlan plan_for(const emlab::ExperimentConfig& cfg, const std::string& plan_path) {
  if (plan_path.empty()) return cfg.measure;
  YAML::Node root;
  try {
    root = YAML::LoadFile(plan_path);
  } catch (const YAML::Exception& e) {
    throw emlab::ConfigError("cannot read plan " + plan_path + ": " + e.what());
  }
  if (!root["measure"]) throw emlab::ConfigError("plan " + plan_path + " has no measure section");
  return emlab::parse_measure_plan(root["measure"]);
}

std::vector<emlab::RunAnalysis> analyze_runs(const std::vector<std::string>& runs, bool write) {
  std::vector<emlab::RunAnalysis> out;
  for (const auto& r : runs) {
    const auto dir = emlab::resolve_output(r);
    const auto cfg = run_config(dir);
    auto a = emlab::analyze_run(emlab::load_run(dir), cfg.analysis);
    if (write) emlab::write_run_analysis(a);
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"emlab: capability-emergence laboratory for tiny transformers"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::int64_t seed = -1;

  auto* train = app.add_subcommand("train", "train a model with dense checkpointing");
  train->add_option("config", config_path, "experiment config (YAML)")->required();
  train->add_option("--out", out_dir, "run directory (default: config output_dir)");
  train->add_option("--seed", seed, "override the global seed");

  std::vector<std::string> runs;
  std::string plan_path, variant_name;
  int workers = 1;
  bool quiet = false;

  auto* measure = app.add_subcommand("measure", "measure every checkpoint of a run (resumable)");
  measure->add_option("run", out_dir, "run directory")->required();
  measure->add_option("--plan", plan_path, "YAML file whose measure section replaces the run's plan");
  measure->add_option("--workers", workers, "checkpoints measured in parallel")->check(CLI::PositiveNumber);
  measure->add_flag("--quiet", quiet, "suppress per-checkpoint progress");

  std::string analysis_out;
  auto* analyze = app.add_subcommand("analyze", "analyze measured runs; several runs enable cross-size statistics");
  analyze->add_option("runs", runs, "run directories")->required();
  analyze->add_option("--out", analysis_out, "directory for cross-run tables and report.md");

  auto* report = app.add_subcommand("report", "print the markdown report for measured runs");
  report->add_option("runs", runs, "run directories")->required();

  std::vector<double> thresholds;
  std::vector<int> windows;
  auto* sweep = app.add_subcommand("sweep", "emergence threshold/window robustness sweep");
  sweep->add_option("run", out_dir, "run directory")->required();
  sweep->add_option("--thresholds", thresholds, "accuracy thresholds (default: config)");
  sweep->add_option("--windows", windows, "consecutive-checkpoint windows (default: config)");

  auto* freeze = app.add_subcommand("freeze", "emergence delays of freeze variants against a baseline");
  freeze->add_option("baseline", out_dir, "baseline run directory")->required();
  freeze->add_option("variants", runs, "variant run directories")->required();
  freeze->add_option("--out", analysis_out, "output directory (default: <baseline>/analysis)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (train->parsed()) {
      auto cfg = emlab::load_experiment_config(config_path);
      if (seed >= 0) cfg.seed = cfg.train.seed = static_cast<std::uint64_t>(seed);
      const auto run = run_dir_for(cfg, out_dir);
      const auto n = emlab::run_training(cfg, run);
      std::cout << "wrote " << n << " checkpoints to " << run.string() << "\n";
    } else if (measure->parsed()) {
      const auto run = emlab::resolve_output(out_dir);
      const auto cfg = run_config(run);
      const auto plan = plan_for(cfg, plan_path);
      const auto s = emlab::run_measure(cfg, run, plan, workers, !quiet);
      std::cout << "measured " << s.checkpoints - s.unreadable << "/" << s.checkpoints << " checkpoints ("
                << s.units_computed << " units computed, " << s.units_cached << " cached, " << s.warnings
                << " warnings)\n";
    } else if (analyze->parsed() || report->parsed()) {
      const auto results = analyze_runs(runs, analyze->parsed());
      const auto cross = emlab::analyze_across(results);
      const auto md = emlab::render_report(results, cross);
      bool missing_eval = false;
      for (const auto& a : results) missing_eval = missing_eval || a.data.accuracy.empty();
      if (report->parsed()) {
        std::cout << md;
      } else {
        const auto dir = analysis_out.empty() ? results.front().data.dir / "analysis" : emlab::resolve_output(analysis_out);
        emlab::write_cross_analysis(cross, dir);
        emlab::write_text_file(dir / "report.md", md);
        std::cout << "wrote analysis for " << results.size() << " run(s); report at " << (dir / "report.md").string()
                  << "\n";
      }
      for (const auto& a : results)
        for (const auto& m : a.data.missing) std::cerr << "missing input in " << a.data.dir.string() << ": " << m << "\n";
      if (missing_eval) return kData;
    } else if (sweep->parsed()) {
      const auto run = emlab::resolve_output(out_dir);
      const auto cfg = run_config(run);
      if (thresholds.empty()) thresholds = cfg.analysis.thresholds;
      if (windows.empty()) windows = cfg.analysis.windows;
      const auto d = emlab::load_run(run);
      if (d.accuracy.empty()) throw emlab::CsvError("no evaluation series in " + run.string());
      const auto cells = emlab::robustness_sweep(d, thresholds, windows, cfg.analysis);
      emlab::CsvTable t{{"threshold", "window", "events", "rankme_l3_hits", "rankme_l3_total", "rankme_l3_rate"}, {}};
      emlab::CsvTable st{{"threshold", "window", "task", "level", "step"}, {}};
      for (const auto& c : cells) {
        t.rows.push_back({emlab::fmt_num(c.threshold), std::to_string(c.window), std::to_string(c.events),
                          std::to_string(c.rankme_l3.hits), std::to_string(c.rankme_l3.total),
                          c.rankme_l3.total ? emlab::fmt_num(c.rankme_l3.value()) : ""});
        for (const auto& [k, step] : c.steps) {
          const auto spec = emlab::task_spec(k);
          st.rows.push_back({emlab::fmt_num(c.threshold), std::to_string(c.window),
                             std::string(emlab::task_name(spec.task)), std::string(emlab::level_name(spec.level)),
                             emlab::fmt_opt_int(step)});
        }
      }
      std::filesystem::create_directories(run / "analysis");
      emlab::write_csv(run / "analysis" / "sweep.csv", t);
      emlab::write_csv(run / "analysis" / "sweep_steps.csv", st);
      std::cout << "wrote " << cells.size() << " sweep cells to " << (run / "analysis" / "sweep.csv").string() << "\n";
    } else if (freeze->parsed()) {
      const auto base_dir = emlab::resolve_output(out_dir);
      const auto base = emlab::load_run(base_dir);
      if (base.accuracy.empty()) throw emlab::CsvError("no evaluation series in baseline " + base_dir.string());
      emlab::CsvTable t{{"variant", "task", "level", "baseline_step", "variant_step", "delta", "note"}, {}};
      for (const auto& v : runs) {
        const auto vdir = emlab::resolve_output(v);
        const auto var = emlab::load_run(vdir);
        if (var.accuracy.empty()) throw emlab::CsvError("no evaluation series in variant " + vdir.string());
        for (const auto& r : emlab::freeze_deltas(base, var, vdir.filename().string()))
          t.rows.push_back({r.variant, std::string(emlab::task_name(r.spec.task)),
                            std::string(emlab::level_name(r.spec.level)), emlab::fmt_opt_int(r.baseline),
                            emlab::fmt_opt_int(r.variant_step), emlab::fmt_opt_int(r.delta), r.note});
      }
      const auto dir = analysis_out.empty() ? base_dir / "analysis" : emlab::resolve_output(analysis_out);
      std::filesystem::create_directories(dir);
      emlab::write_csv(dir / "freeze.csv", t);
      std::cout << "wrote " << t.rows.size() << " freeze rows to " << (dir / "freeze.csv").string() << "\n";
    }
  } catch (const emlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return 0;
}
