#pragma once

// Per-checkpoint measurement of a run directory.
//
//   eval.csv              step,task,level,accuracy,mean_logprob,scored_tokens
//   geometry.csv          step,measure,task,level,layer,value
//   probes.csv            step,task,level,layer,test_accuracy,train_accuracy,chance,n_rows,n_classes
//   spectra.csv           step,source,task,level,layer,rank,value
//   measure_warnings.csv  step,unit,task,level,message
//
// geometry measures (layer -1 unless noted):
//   rankme, alpha                final-block representation of the diagnostic set
//   layer_rankme                 per block, layer = block index
//   fisher_effrank, fisher_top1, fisher_top2, fisher_trace
//   grad_norm, grad_align        norm of the task's mean per-sample gradient and its
//                                cosine with the mean over all measured tasks
//   hessian_top1, hessian_effrank (nonnegative part of the top-k Ritz values)
//   grad_cov
//   llc                          chain 0; llc_repeat at the last checkpoint, layer = chain
//
// Every (checkpoint, unit) result is cached as measure/step-XXXXXXXX/<unit>.part
// together with a signature of its inputs, so interrupted or extended runs
// only compute what is missing. The final tables are the union of the
// current plan's units sorted by primary key, independent of worker count.

#include <json.hpp>

#include <atomic>
#include <exception>
#include <iostream>
#include <mutex>
#include <thread>

#include "emlab/eval.hpp"
#include "emlab/geometry/gradients.hpp"
#include "emlab/geometry/lanczos.hpp"
#include "emlab/geometry/llc.hpp"
#include "emlab/geometry/representation.hpp"
#include "emlab/nn/checkpoint.hpp"
#include "emlab/pipeline/config.hpp"
#include "emlab/pipeline/csv.hpp"
#include "emlab/pipeline/run_train.hpp"
#include "emlab/probes.hpp"

namespace emlab {

struct TableSpec {
  std::string name;
  std::vector<std::string> header;
  std::string key_types;  // one char per primary-key column: i=int, s=string, t=task, l=level
};

inline const std::vector<TableSpec>& measure_tables() {
  static const std::vector<TableSpec> tables = {
      {"eval", {"step", "task", "level", "accuracy", "mean_logprob", "scored_tokens"}, "itl"},
      {"geometry", {"step", "measure", "task", "level", "layer", "value"}, "istli"},
      {"probes",
       {"step", "task", "level", "layer", "test_accuracy", "train_accuracy", "chance", "n_rows", "n_classes"},
       "itli"},
      {"spectra", {"step", "source", "task", "level", "layer", "rank", "value"}, "istlii"},
      {"measure_warnings", {"step", "unit", "task", "level", "message"}, "istl"},
  };
  return tables;
}

inline const TableSpec& measure_table(const std::string& name) {
  for (const auto& t : measure_tables())
    if (t.name == name) return t;
  throw CsvError("unknown measurement table " + name);
}

/// Sorts rows by the table's primary key (numeric, task and level columns in canonical order).
inline void canonical_sort(const TableSpec& spec, std::vector<std::vector<std::string>>& rows) {
  auto rank_of = [](char type, const std::string& v) -> std::int64_t {
    if (type == 'i') return v.empty() ? std::numeric_limits<std::int64_t>::min() : std::stoll(v);
    if (type == 't') return v.empty() ? -1 : static_cast<std::int64_t>(parse_task(v));
    if (type == 'l') return v.empty() ? -1 : static_cast<std::int64_t>(parse_level(v));
    return 0;
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    for (std::size_t c = 0; c < spec.key_types.size(); ++c) {
      const char type = spec.key_types[c];
      if (type == 's') {
        if (a[c] != b[c]) return a[c] < b[c];
        continue;
      }
      const auto x = rank_of(type, a[c]), y = rank_of(type, b[c]);
      if (x != y) return x < y;
    }
    return false;
  });
}

/// Rows produced by one unit, tagged with their destination table.
struct UnitRows {
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;

  void add(const std::string& table, std::vector<std::string> fields) {
    if (fields.size() != measure_table(table).header.size()) throw CsvError("row width mismatch for " + table);
    rows.emplace_back(table, std::move(fields));
  }
};

namespace detail {

inline std::string step_dir_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%08lld", static_cast<long long>(step));
  return buf;
}

inline std::optional<UnitRows> read_part(const std::filesystem::path& path, const std::string& signature) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string line;
  if (!std::getline(in, line) || line != "#sig " + signature) return std::nullopt;
  UnitRows out;
  bool complete = false;
  while (std::getline(in, line)) {
    if (line == "#end") {
      complete = true;
      break;
    }
    auto f = split_csv_line(line);
    if (f.empty()) continue;
    const auto table = f.front();
    f.erase(f.begin());
    try {
      out.add(table, std::move(f));
    } catch (const CsvError&) {
      return std::nullopt;
    }
  }
  if (!complete) return std::nullopt;
  return out;
}

inline void write_part(const std::filesystem::path& path, const std::string& signature, const UnitRows& rows) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw CsvError("cannot write " + tmp);
    out << "#sig " << signature << "\n";
    for (const auto& [table, fields] : rows.rows) {
      std::vector<std::string> all{table};
      all.insert(all.end(), fields.begin(), fields.end());
      out << csv_line(all);
    }
    out << "#end\n";
  }
  std::filesystem::rename(tmp, path);
}

inline bool selected(std::size_t index, std::size_t count, int stride, std::int64_t max_step, std::int64_t step) {
  if (max_step >= 0 && step > max_step) return false;
  return index % static_cast<std::size_t>(stride) == 0 || index + 1 == count;
}

inline bool listed(const std::vector<std::string>& allowed, std::string_view v) {
  return allowed.empty() || std::find(allowed.begin(), allowed.end(), v) != allowed.end();
}

inline std::uint64_t combo_key(const TaskSpec& s) {
  return static_cast<std::uint64_t>(static_cast<int>(s.task) + 1) * 8 + static_cast<std::uint64_t>(s.level) + 1;
}

}  // namespace detail

struct MeasureSummary {
  int checkpoints = 0;
  int unreadable = 0;
  int units_computed = 0;
  int units_cached = 0;
  int warnings = 0;
};

/// Fixed test and diagnostic sets plus the plan; shared read-only by workers.
class Measurer {
 public:
  Measurer(const ExperimentConfig& cfg, MeasurePlan plan) : cfg_(cfg), plan_(std::move(plan)) {
    for (const auto& spec : all_task_specs())
      if (plan_.wants_task(spec)) specs_.push_back(spec);
    if (specs_.empty()) throw ConfigError("measurement plan selects no task/level combination");
    const int diag_n = std::max({plan_.diag_size, plan_.fisher_examples, plan_.hessian_batch, plan_.grad_cov_batch});
    for (const auto& s : specs_) {
      if (plan_.eval) test_[s.name()] = make_fixed_set(s, plan_.test_size, plan_.test_seed);
      diag_[s.name()] = make_fixed_set(s, diag_n, plan_.diag_seed);
    }
  }

  [[nodiscard]] const std::vector<TaskSpec>& specs() const { return specs_; }
  [[nodiscard]] const MeasurePlan& plan() const { return plan_; }

  /// Units due at checkpoint `index` of `count`, each with its input signature.
  [[nodiscard]] std::vector<std::pair<std::string, std::string>> units(std::size_t index, std::size_t count,
                                                                         std::int64_t step) const {
    const auto& p = plan_;
    std::vector<std::pair<std::string, std::string>> out;
    std::string combos;
    for (const auto& s : specs_) combos += s.name() + ";";
    auto sig = [&](const std::string& extra) { return "combos=" + combos + extra; };
    if (p.eval) out.emplace_back("eval", sig("test=" + std::to_string(p.test_size) + "/" + std::to_string(p.test_seed)));
    const std::string diag = "diag=" + std::to_string(p.diag_size) + "/" + std::to_string(p.diag_seed);
    if (p.rankme || p.layer_rankme || p.alpha)
      out.emplace_back("representation", sig(diag + " rankme=" + std::to_string(p.rankme) + " layers=" +
                                             std::to_string(p.layer_rankme) + " alpha=" + std::to_string(p.alpha)));
    if (p.probes && detail::selected(index, count, p.probe_stride, p.probe_max_step, step))
      out.emplace_back("probes", sig(diag + " levels=" + join_names(p.probe_levels)));
    if (p.fisher && detail::selected(index, count, p.fisher_stride, -1, step))
      out.emplace_back("fisher", sig("n=" + std::to_string(p.fisher_examples) + "/" + std::to_string(p.diag_seed)));
    if (p.hessian && detail::selected(index, count, p.hessian_stride, -1, step))
      out.emplace_back("hessian", sig("k=" + std::to_string(p.hessian_k) + " batch=" + std::to_string(p.hessian_batch) +
                                      "/" + std::to_string(p.diag_seed)));
    if (p.grad_cov && detail::selected(index, count, p.grad_cov_stride, -1, step))
      out.emplace_back("grad_cov", sig("batch=" + std::to_string(p.grad_cov_batch) + " prefix=" +
                                       std::to_string(p.grad_cov_prefix) + "/" + std::to_string(p.diag_seed)));
    const auto& l = p.llc_plan;
    if (p.llc && detail::selected(index, count, l.stride, l.max_step, step)) {
      const int chains = index + 1 == count ? std::max(l.repeats, l.final_repeats) : l.repeats;
      out.emplace_back("llc", sig("steps=" + std::to_string(l.steps) + " eta=" + fmt_num(l.eta) + " beta=" +
                                  fmt_num(l.beta) + " gamma=" + fmt_num(l.gamma) + " burn=" + std::to_string(l.burn_in) +
                                  " batch=" + std::to_string(l.batch_size) + " n=" + std::to_string(l.n) + " chains=" +
                                  std::to_string(chains) + " tasks=" + join_names(l.tasks) + " levels=" +
                                  join_names(l.levels) + " seed=" + std::to_string(cfg_.seed)));
    }
    return out;
  }

  [[nodiscard]] UnitRows compute(const std::string& unit, const ModelState<float>& model, std::int64_t step,
                                 bool last) const {
    const ParamView<float> p(model);
    UnitRows rows;
    if (unit == "eval") measure_eval(p, step, rows);
    else if (unit == "representation") measure_representation(p, step, rows);
    else if (unit == "probes") measure_probes(p, step, rows);
    else if (unit == "fisher") measure_fisher(p, step, rows);
    else if (unit == "hessian") measure_hessian(p, step, rows);
    else if (unit == "grad_cov") measure_grad_cov(p, step, rows);
    else if (unit == "llc") measure_llc(p, step, last, rows);
    else throw ConfigError("unknown measurement unit " + unit);
    return rows;
  }

 private:
  static std::string join_names(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += x + ";";
    return s;
  }
  static std::vector<std::string> key(std::int64_t step, const TaskSpec& s) {
    return {std::to_string(step), std::string(task_name(s.task)), std::string(level_name(s.level))};
  }
  static void geometry(UnitRows& rows, std::int64_t step, const std::string& measure, const TaskSpec& s, int layer,
                       double value) {
    rows.add("geometry", {std::to_string(step), measure, std::string(task_name(s.task)), std::string(level_name(s.level)),
                          std::to_string(layer), fmt_num(value)});
  }
  static void spectrum(UnitRows& rows, std::int64_t step, const std::string& source, const TaskSpec& s, int layer,
                       const std::vector<double>& values, std::size_t limit) {
    for (std::size_t i = 0; i < values.size() && i < limit; ++i)
      rows.add("spectra", {std::to_string(step), source, std::string(task_name(s.task)),
                           std::string(level_name(s.level)), std::to_string(layer), std::to_string(i + 1),
                           fmt_num(values[i])});
  }
  static void warn(UnitRows& rows, std::int64_t step, const std::string& unit, const TaskSpec& s,
                   const std::string& msg) {
    std::string clean = msg;
    std::replace(clean.begin(), clean.end(), ',', ';');
    std::replace(clean.begin(), clean.end(), '\n', ' ');
    rows.add("measure_warnings",
             {std::to_string(step), unit, std::string(task_name(s.task)), std::string(level_name(s.level)), clean});
  }
  [[nodiscard]] std::span<const Example> diag(const TaskSpec& s, int n) const {
    const auto& d = diag_.at(s.name());
    return std::span<const Example>(d).first(static_cast<std::size_t>(std::min<std::size_t>(n, d.size())));
  }

  void measure_eval(const ParamView<float>& p, std::int64_t step, UnitRows& rows) const {
    for (const auto& s : specs_) {
      const auto e = evaluate_set(p, std::span<const Example>(test_.at(s.name())));
      auto f = key(step, s);
      f.insert(f.end(), {fmt_num(e.accuracy), fmt_num(e.mean_logprob), std::to_string(e.scored_tokens)});
      rows.add("eval", std::move(f));
    }
  }

  void measure_representation(const ParamView<float>& p, std::int64_t step, UnitRows& rows) const {
    for (const auto& s : specs_) {
      const auto states = collect_answer_states(p, diag(s, plan_.diag_size));
      const int final_layer = static_cast<int>(states.layers.size()) - 1;
      for (int l = 0; l <= final_layer; ++l) {
        const bool is_final = l == final_layer;
        if (!plan_.layer_rankme && !is_final) continue;
        const auto r = rankme(states.layers[static_cast<std::size_t>(l)]);
        if (plan_.layer_rankme) geometry(rows, step, "layer_rankme", s, l, r.value);
        if (!is_final) continue;
        if (plan_.rankme) {
          geometry(rows, step, "rankme", s, -1, r.value);
          spectrum(rows, step, "representation", s, -1, r.singular_values, 20);
        }
        if (plan_.alpha) {
          try {
            geometry(rows, step, "alpha", s, -1, spectral_decay_exponent(r.singular_values));
          } catch (const GeometryError& e) {
            warn(rows, step, "alpha", s, e.what());
          }
        }
      }
    }
  }

  void measure_probes(const ParamView<float>& p, std::int64_t step, UnitRows& rows) const {
    for (const auto& s : specs_) {
      if (!detail::listed(plan_.probe_levels, level_name(s.level))) continue;
      const auto states = collect_answer_states(p, diag(s, plan_.diag_size));
      const std::uint64_t split_seed = mix_seed(plan_.diag_seed, hash_label("probe-split"), detail::combo_key(s));
      for (int l = 0; l < static_cast<int>(states.layers.size()); ++l) {
        try {
          const auto r = train_probe(probe_dataset_from_states(states, l), split_seed);
          auto f = key(step, s);
          f.insert(f.end(), {std::to_string(l), fmt_num(r.test_accuracy), fmt_num(r.train_accuracy), fmt_num(r.chance),
                             std::to_string(r.n_rows), std::to_string(r.n_classes)});
          rows.add("probes", std::move(f));
        } catch (const ProbeError& e) {
          warn(rows, step, "probes", s, e.what());
        }
      }
    }
  }

  void measure_fisher(const ParamView<float>& p, std::int64_t step, UnitRows& rows) const {
    std::vector<Eigen::VectorXd> means;
    for (const auto& s : specs_) {
      const auto g = per_sample_grads(p, diag(s, plan_.fisher_examples));
      means.push_back(g.cast<double>().colwise().mean().transpose());
      try {
        const auto f = fisher_spectrum(g);
        double trace = 0.0;
        for (double v : f.values) trace += v;
        geometry(rows, step, "fisher_effrank", s, -1, f.effective_rank);
        geometry(rows, step, "fisher_top1", s, -1, f.values.empty() ? 0.0 : f.values[0]);
        geometry(rows, step, "fisher_top2", s, -1, f.values.size() < 2 ? 0.0 : f.values[1]);
        geometry(rows, step, "fisher_trace", s, -1, trace);
        spectrum(rows, step, "fisher", s, -1, f.values, 20);
      } catch (const GeometryError& e) {
        warn(rows, step, "fisher", s, e.what());
      }
    }
    Eigen::VectorXd all = Eigen::VectorXd::Zero(means.front().size());
    for (const auto& m : means) all += m;
    all /= static_cast<double>(means.size());
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      const double n = means[i].norm();
      geometry(rows, step, "grad_norm", specs_[i], -1, n);
      const double d = n * all.norm();
      if (d > 0) geometry(rows, step, "grad_align", specs_[i], -1, means[i].dot(all) / d);
    }
  }

  void measure_hessian(const ParamView<float>& p, std::int64_t step, UnitRows& rows) const {
    for (const auto& s : specs_) {
      const Batch b = make_batch(diag(s, plan_.hessian_batch), p.config.max_seq_len);
      const int k = static_cast<int>(std::min<std::int64_t>(plan_.hessian_k, p.layout.total));
      try {
        const auto h = hessian_topk(p, b, k, mix_seed(plan_.diag_seed, hash_label("lanczos"), detail::combo_key(s)));
        geometry(rows, step, "hessian_top1", s, -1, h.ritz.front());
        geometry(rows, step, "hessian_effrank", s, -1, h.summary().effective_rank);
        spectrum(rows, step, "hessian", s, -1, h.ritz, h.ritz.size());
      } catch (const std::exception& e) {
        warn(rows, step, "hessian", s, e.what());
      }
    }
  }

  void measure_grad_cov(const ParamView<float>& p, std::int64_t step, UnitRows& rows) const {
    for (const auto& s : specs_) {
      try {
        geometry(rows, step, "grad_cov", s, -1, grad_cov_rank(p, diag(s, plan_.grad_cov_batch), plan_.grad_cov_prefix));
      } catch (const GeometryError& e) {
        warn(rows, step, "grad_cov", s, e.what());
      }
    }
  }

  void measure_llc(const ParamView<float>& p, std::int64_t step, bool last, UnitRows& rows) const {
    const auto& l = plan_.llc_plan;
    SgldConfig sc;
    sc.steps = l.steps;
    sc.eta = l.eta;
    sc.beta = l.beta;
    sc.gamma = l.gamma;
    sc.burn_in = l.burn_in;
    sc.batch_size = l.batch_size;
    sc.n = l.n;
    const int chains = last ? std::max(l.repeats, l.final_repeats) : l.repeats;
    for (const auto& s : specs_) {
      if (!detail::listed(l.tasks, task_name(s.task)) || !detail::listed(l.levels, level_name(s.level))) continue;
      const std::uint64_t seed =
          mix_seed(cfg_.seed, hash_label("llc"), detail::combo_key(s), static_cast<std::uint64_t>(step));
      for (int c = 0; c < chains; ++c) {
        try {
          const auto est = estimate_llc(p, s, sc, mix_seed(seed, static_cast<std::uint64_t>(c)));
          if (c == 0) geometry(rows, step, "llc", s, -1, est.lambda_hat);
          if (chains > 1) geometry(rows, step, "llc_repeat", s, c, est.lambda_hat);
        } catch (const GeometryError& e) {
          warn(rows, step, "llc", s, e.what());
        }
      }
    }
  }

  const ExperimentConfig& cfg_;
  MeasurePlan plan_;
  std::vector<TaskSpec> specs_;
  std::map<std::string, std::vector<Example>> test_;
  std::map<std::string, std::vector<Example>> diag_;
};

/// Measures every checkpoint of `run` under `plan`, then writes the canonical tables.
inline MeasureSummary run_measure(const ExperimentConfig& cfg, const std::filesystem::path& run, const MeasurePlan& plan,
                                  int workers = 1, bool verbose = true) {
  namespace fs = std::filesystem;
  if (workers < 1) throw ConfigError("workers must be >= 1");
  const auto steps = list_checkpoints(run);
  if (steps.empty()) throw CheckpointError("no checkpoints in " + run.string());
  const Measurer m(cfg, plan);
  const fs::path cache = run / "measure";

  MeasureSummary summary;
  summary.checkpoints = static_cast<int>(steps.size());
  std::vector<std::optional<std::vector<UnitRows>>> results(steps.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  const auto t0 = std::chrono::steady_clock::now();

  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= steps.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        const auto step = steps[i];
        const auto dir = cache / detail::step_dir_name(step);
        std::vector<UnitRows> out;
        std::optional<CheckpointRecord> rec;
        int computed = 0, cached = 0;
        bool unreadable = false;
        for (const auto& [unit, sig] : m.units(i, steps.size(), step)) {
          const auto part = dir / (unit + ".part");
          if (auto hit = detail::read_part(part, sig)) {
            out.push_back(std::move(*hit));
            ++cached;
            continue;
          }
          if (!rec) {
            try {
              rec = load_checkpoint(checkpoint_dir(run) / checkpoint_filename(step), cfg.model);
            } catch (const CheckpointError& e) {
              std::lock_guard lock(mu);
              std::cerr << "warning: skipping unreadable checkpoint step " << step << ": " << e.what() << "\n";
              unreadable = true;
              break;
            }
          }
          auto rows = m.compute(unit, rec->model, step, i + 1 == steps.size());
          detail::write_part(part, sig, rows);
          out.push_back(std::move(rows));
          ++computed;
        }
        std::lock_guard lock(mu);
        summary.units_computed += computed;
        summary.units_cached += cached;
        if (unreadable) {
          ++summary.unreadable;
        } else {
          results[i] = std::move(out);
        }
        if (verbose && computed > 0) {
          const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          std::cout << "measured step " << step << " (" << computed << " units, " << fmt_num(secs) << " s)" << std::endl;
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::map<std::string, std::vector<std::vector<std::string>>> tables;
  for (const auto& r : results)
    if (r)
      for (const auto& unit : *r)
        for (const auto& [table, fields] : unit.rows) tables[table].push_back(fields);
  for (const auto& spec : measure_tables()) {
    auto& rows = tables[spec.name];
    canonical_sort(spec, rows);
    if (spec.name == "measure_warnings") summary.warnings = static_cast<int>(rows.size());
    write_csv(run / (spec.name + ".csv"), CsvTable{spec.header, rows});
  }
  nlohmann::json meta = {{"fisher_examples", plan.fisher_examples},
                         {"diag_size", plan.diag_size},
                         {"test_size", plan.test_size},
                         {"parameters", parameter_count(cfg.model)},
                         {"checkpoints", summary.checkpoints},
                         {"unreadable", summary.unreadable}};
  write_text_file(run / "measure.json", meta.dump(2) + "\n");
  return summary;
}

}  // namespace emlab
