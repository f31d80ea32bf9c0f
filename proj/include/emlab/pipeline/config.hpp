#pragma once

// Experiment configuration (YAML). Every default mirrors the published
// training setup, so an empty override block reproduces it.
//
//   seed: 0
//   output_dir: runs/nano            # relative paths resolve against $EMLAB_OUTPUT_ROOT
//   model: {size: nano}
//   train: {peak_lr: 3.0e-4, warmup_steps: 1000, max_steps: 100000, stop_step: 25000,
//           batch_size: 64, weight_decay: 0.1, grad_clip: 1.0, beta1: 0.9, beta2: 0.95,
//           freeze: {blocks: [1], start: 0, end: 1000}}
//   measure: see MeasurePlan
//   analysis: {thresholds: [...], windows: [...], max_lag: 20, r_threshold: 0.3}

#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "emlab/corpus.hpp"
#include "emlab/nn/model.hpp"
#include "emlab/train.hpp"

namespace emlab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LlcPlan {
  int steps = 500;
  double eta = 1e-5;
  double beta = 1.0;
  double gamma = 10000.0;
  int burn_in = 100;
  int batch_size = 64;
  int n = 1000;      // sample count entering n*beta scaling
  int repeats = 1;        // chains per checkpoint
  int final_repeats = 1;  // chains at the last checkpoint (repeatability check)
  int stride = 1;         // every stride-th checkpoint
  std::vector<std::string> tasks;  // empty = all
  std::vector<std::string> levels = {"L1", "L2", "L3"};
  std::int64_t max_step = -1;  // only checkpoints <= max_step (-1 = all)
};

struct MeasurePlan {
  bool eval = true;
  bool rankme = true;        // final-layer task RankMe
  bool layer_rankme = true;  // per-block RankMe
  bool probes = true;
  bool fisher = true;
  bool llc = true;
  bool hessian = true;
  bool grad_cov = true;
  bool alpha = true;
  std::vector<std::string> tasks;   // empty = all
  std::vector<std::string> levels;  // empty = all
  int test_size = 1000;
  int diag_size = 200;
  std::uint64_t test_seed = 1000;
  std::uint64_t diag_seed = 2000;
  // estimator-specific checkpoint thinning
  int probe_stride = 1;
  std::vector<std::string> probe_levels = {"L1", "L2", "L3"};
  std::int64_t probe_max_step = -1;
  int fisher_stride = 1;
  int fisher_examples = 200;
  int hessian_stride = 5;
  int hessian_k = 20;
  int hessian_batch = 64;
  int grad_cov_stride = 1;
  int grad_cov_batch = 64;
  std::int64_t grad_cov_prefix = 50000;
  LlcPlan llc_plan;

  [[nodiscard]] bool wants_task(const TaskSpec& s) const {
    auto has = [](const std::vector<std::string>& v, std::string_view x) {
      return v.empty() || std::find(v.begin(), v.end(), x) != v.end();
    };
    return has(tasks, task_name(s.task)) && has(levels, level_name(s.level));
  }
};

struct AnalysisPlan {
  std::vector<double> thresholds = {0.3, 0.4, 0.5, 0.6, 0.7};
  std::vector<int> windows = {3, 5, 10};
  int max_lag = 20;
  double r_threshold = 0.3;
  double floor_fraction = 0.25;  // floor searched within the first fraction of training
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::string output_dir;
  ModelConfig model = named_config("nano");
  TrainConfig train = default_train_config("nano");
  MeasurePlan measure;
  AnalysisPlan analysis;
  std::string source_text;  // verbatim config file
};

inline std::filesystem::path output_root() {
  if (const char* env = std::getenv("EMLAB_OUTPUT_ROOT"); env && *env) return env;
  return std::filesystem::current_path();
}

inline std::filesystem::path resolve_output(const std::string& dir) {
  std::filesystem::path p(dir);
  return p.is_absolute() ? p : output_root() / p;
}

namespace detail {

template <typename T>
void read_opt(const YAML::Node& n, const char* key, T& out) {
  if (n && n[key]) {
    try {
      out = n[key].as<T>();
    } catch (const YAML::Exception& e) {
      throw ConfigError(std::string("invalid value for '") + key + "': " + e.what());
    }
  }
}

inline void reject_unknown(const YAML::Node& n, const std::vector<std::string>& known, const std::string& where) {
  if (!n) return;
  if (!n.IsMap()) throw ConfigError(where + " must be a mapping");
  for (const auto& kv : n) {
    const auto k = kv.first.as<std::string>();
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

}  // namespace detail

inline MeasurePlan parse_measure_plan(const YAML::Node& m, MeasurePlan p = {}) {
  using detail::read_opt;
  if (!m) return p;
  detail::reject_unknown(m,
                         {"eval", "rankme", "layer_rankme", "probes", "fisher", "llc", "hessian", "grad_cov", "alpha",
                          "estimators", "tasks", "levels", "test_size", "diag_size", "test_seed", "diag_seed",
                          "probe_stride", "probe_levels", "probe_max_step", "fisher_stride", "fisher_examples",
                          "hessian_stride", "hessian_k", "hessian_batch", "grad_cov_stride", "grad_cov_batch",
                          "grad_cov_prefix", "llc_config"},
                         "measure");
  if (m["estimators"]) {
    // an explicit list switches every estimator off except those named
    p.eval = p.rankme = p.layer_rankme = p.probes = p.fisher = p.llc = p.hessian = p.grad_cov = p.alpha = false;
    for (const auto& e : m["estimators"]) {
      const auto s = e.as<std::string>();
      if (s == "eval") p.eval = true;
      else if (s == "rankme") p.rankme = true;
      else if (s == "layer_rankme") p.layer_rankme = true;
      else if (s == "probes") p.probes = true;
      else if (s == "fisher") p.fisher = true;
      else if (s == "llc") p.llc = true;
      else if (s == "hessian") p.hessian = true;
      else if (s == "grad_cov") p.grad_cov = true;
      else if (s == "alpha") p.alpha = true;
      else throw ConfigError("unknown estimator: " + s);
    }
  }
  read_opt(m, "eval", p.eval);
  read_opt(m, "rankme", p.rankme);
  read_opt(m, "layer_rankme", p.layer_rankme);
  read_opt(m, "probes", p.probes);
  read_opt(m, "fisher", p.fisher);
  read_opt(m, "llc", p.llc);
  read_opt(m, "hessian", p.hessian);
  read_opt(m, "grad_cov", p.grad_cov);
  read_opt(m, "alpha", p.alpha);
  read_opt(m, "tasks", p.tasks);
  read_opt(m, "levels", p.levels);
  read_opt(m, "test_size", p.test_size);
  read_opt(m, "diag_size", p.diag_size);
  read_opt(m, "test_seed", p.test_seed);
  read_opt(m, "diag_seed", p.diag_seed);
  read_opt(m, "probe_stride", p.probe_stride);
  read_opt(m, "probe_levels", p.probe_levels);
  read_opt(m, "probe_max_step", p.probe_max_step);
  read_opt(m, "fisher_stride", p.fisher_stride);
  read_opt(m, "fisher_examples", p.fisher_examples);
  read_opt(m, "hessian_stride", p.hessian_stride);
  read_opt(m, "hessian_k", p.hessian_k);
  read_opt(m, "hessian_batch", p.hessian_batch);
  read_opt(m, "grad_cov_stride", p.grad_cov_stride);
  read_opt(m, "grad_cov_batch", p.grad_cov_batch);
  read_opt(m, "grad_cov_prefix", p.grad_cov_prefix);
  if (const auto l = m["llc_config"]) {
    detail::reject_unknown(
        l, {"steps", "eta", "beta", "gamma", "burn_in", "batch_size", "n", "repeats", "final_repeats", "stride", "tasks",
            "levels", "max_step"},
        "measure.llc_config");
    auto& c = p.llc_plan;
    read_opt(l, "steps", c.steps);
    read_opt(l, "eta", c.eta);
    read_opt(l, "beta", c.beta);
    read_opt(l, "gamma", c.gamma);
    read_opt(l, "burn_in", c.burn_in);
    read_opt(l, "batch_size", c.batch_size);
    read_opt(l, "n", c.n);
    read_opt(l, "repeats", c.repeats);
    read_opt(l, "final_repeats", c.final_repeats);
    read_opt(l, "stride", c.stride);
    read_opt(l, "tasks", c.tasks);
    read_opt(l, "levels", c.levels);
    read_opt(l, "max_step", c.max_step);
    if (c.burn_in >= c.steps) throw ConfigError("llc burn_in must be < steps");
    if (c.repeats < 1 || c.final_repeats < 1) throw ConfigError("llc repeats must be >= 1");
    for (const auto& t : c.tasks) (void)parse_task(t);
    for (const auto& lv : c.levels) (void)parse_level(lv);
  }
  for (const auto& t : p.tasks) (void)parse_task(t);
  for (const auto& l : p.levels) (void)parse_level(l);
  if (p.test_size < 1 || p.diag_size < 1) throw ConfigError("set sizes must be >= 1");
  if (p.probe_stride < 1 || p.fisher_stride < 1 || p.hessian_stride < 1 || p.grad_cov_stride < 1 ||
      p.llc_plan.stride < 1)
    throw ConfigError("strides must be >= 1");
  return p;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  detail::reject_unknown(root, {"name", "seed", "output_dir", "model", "train", "measure", "analysis"}, "config");
  using detail::read_opt;
  ExperimentConfig c;
  c.source_text = text;
  read_opt(root, "name", c.name);
  read_opt(root, "seed", c.seed);
  read_opt(root, "output_dir", c.output_dir);

  std::string size = "nano";
  if (const auto m = root["model"]) {
    detail::reject_unknown(m, {"size"}, "model");
    read_opt(m, "size", size);
  }
  try {
    c.model = named_config(size);
    c.train = default_train_config(size);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  c.train.seed = c.seed;

  if (const auto t = root["train"]) {
    detail::reject_unknown(t,
                           {"peak_lr", "warmup_steps", "max_steps", "stop_step", "batch_size", "weight_decay",
                            "grad_clip", "beta1", "beta2", "adam_eps", "freeze"},
                           "train");
    auto& tc = c.train;
    read_opt(t, "peak_lr", tc.peak_lr);
    read_opt(t, "warmup_steps", tc.warmup_steps);
    read_opt(t, "max_steps", tc.max_steps);
    read_opt(t, "stop_step", tc.stop_step);
    read_opt(t, "batch_size", tc.batch_size);
    read_opt(t, "weight_decay", tc.weight_decay);
    read_opt(t, "grad_clip", tc.grad_clip);
    read_opt(t, "beta1", tc.beta1);
    read_opt(t, "beta2", tc.beta2);
    read_opt(t, "adam_eps", tc.adam_eps);
    if (const auto f = t["freeze"]) {
      detail::reject_unknown(f, {"blocks", "start", "end"}, "train.freeze");
      FreezeSpec fs;
      std::vector<int> blocks;
      read_opt(f, "blocks", blocks);
      fs.blocks.insert(blocks.begin(), blocks.end());
      read_opt(f, "start", fs.start);
      read_opt(f, "end", fs.end);
      tc.freeze = fs;
    }
  }
  c.measure = parse_measure_plan(root["measure"]);
  if (const auto a = root["analysis"]) {
    detail::reject_unknown(a, {"thresholds", "windows", "max_lag", "r_threshold", "floor_fraction"}, "analysis");
    read_opt(a, "thresholds", c.analysis.thresholds);
    read_opt(a, "windows", c.analysis.windows);
    read_opt(a, "max_lag", c.analysis.max_lag);
    read_opt(a, "r_threshold", c.analysis.r_threshold);
    read_opt(a, "floor_fraction", c.analysis.floor_fraction);
  }
  try {
    c.train.validate(c.model);
  } catch (const TrainError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

}  // namespace emlab
