#pragma once

// Analysis of measured run directories. Per run (written to <run>/analysis/):
//   emergence.csv (run root)  task,level,detector,threshold,window,step
//   divergence.csv            task,level,accuracy_step,logprob_step,ratio,learning_without_accuracy
//   leadlag.csv               measure,task,level,emergent,ok,lag,r,class,note
//   precursor_rates.csv       measure,levels,filter,hits,total,rate
//   floors.csv                size,metric,task,level,floor,floor_step,init,init_over_floor
//   topdown.csv               size,task,level,floor_step,layer_values,first,last,fraction,top_down
//   hidden_learning.csv       task,level,emergence_step,pre_em_step,probe_init,probe_pre_em,delta,
//                             behavior_pre_em,layer_deltas,deep_shallow_ratio
//   fisher_llc.csv            strategy,rho,points,mp_samples,mp_params
//   metric_sweep.csv          metric,task,level,emergent,ok,lag,r,class,note
//   metric_sweep_summary.csv  metric,hits,total,rate,hard_hits,hard_total,hard_rate,skipped
//   llc_repeats.csv           task,level,step,chains,mean,cv
// Across runs (written to the output directory):
//   floor_stats.csv           metric,task,level,sizes,mean,stdev,cv
//   concordance.csv           category,hits,total,rate,ci_lo,ci_hi,swap_pairs
//   report.md
//
// RankMe floors are searched within the first `floor_fraction` of training.
// The alpha collapse extreme is a maximum (collapse steepens spectral decay).
// Top-down vectors are the per-layer RankMe values at the checkpoint where the
// final block reaches its floor.

#include <json.hpp>

#include <set>
#include <sstream>

#include "emlab/analysis/concordance.hpp"
#include "emlab/analysis/fisher_llc.hpp"
#include "emlab/analysis/floors.hpp"
#include "emlab/analysis/leadlag.hpp"
#include "emlab/analysis/metric_sweep.hpp"
#include "emlab/eval.hpp"
#include "emlab/geometry/llc.hpp"
#include "emlab/pipeline/config.hpp"
#include "emlab/pipeline/csv.hpp"
#include "emlab/probes.hpp"

namespace emlab {

struct RunData {
  std::filesystem::path dir;
  std::string size;
  int layers = 0;
  std::int64_t parameters = 0;
  std::map<std::string, Series> accuracy;  // by combo, e.g. "ADD_L3"
  std::map<std::string, Series> logprob;
  RunGeometry geometry;
  std::map<std::pair<std::string, int>, Series> probes;  // (combo, layer) -> probe test accuracy
  std::map<std::tuple<std::string, std::string, std::int64_t>, std::vector<double>> spectra;  // (source, combo, step)
  nlohmann::json measure_meta;
  std::vector<std::string> missing;

  [[nodiscard]] std::vector<TaskSpec> combos() const {
    std::vector<TaskSpec> out;
    for (const auto& s : all_task_specs())
      if (accuracy.count(s.name())) out.push_back(s);
    return out;
  }
};

namespace detail {

inline std::string combo_of(const CsvTable& t, std::size_t r) { return t.at(r, "task") + "_" + t.at(r, "level"); }

inline void sort_series(Series& s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s.steps[a] < s.steps[b]; });
  Series out;
  for (auto i : idx) out.push(s.steps[i], s.values[i]);
  s = std::move(out);
}

inline std::optional<CsvTable> read_input(const std::filesystem::path& path, std::vector<std::string>& missing) {
  if (!std::filesystem::exists(path)) {
    missing.push_back(path.filename().string() + " (absent)");
    return std::nullopt;
  }
  try {
    return read_csv(path);
  } catch (const CsvError& e) {
    missing.push_back(path.filename().string() + " (" + e.what() + ")");
    return std::nullopt;
  }
}

inline std::string pct(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream os;
  os << std::lround(100.0 * *v) << "%";
  return os.str();
}

inline std::string rate_text(int hits, int total) {
  if (total == 0) return "n/a (0 cases)";
  return pct(static_cast<double>(hits) / total) + " (" + std::to_string(hits) + "/" + std::to_string(total) + ")";
}

}  // namespace detail

inline RunData load_run(const std::filesystem::path& run) {
  RunData d;
  d.dir = run;
  const auto cfg = load_experiment_config(run / "config.yaml");
  d.size = cfg.model.name;
  d.layers = cfg.model.layers;
  d.parameters = parameter_count(cfg.model);
  if (const auto t = detail::read_input(run / "eval.csv", d.missing)) {
    for (std::size_t r = 0; r < t->rows.size(); ++r) {
      const auto c = detail::combo_of(*t, r);
      const auto step = std::stoll(t->at(r, "step"));
      d.accuracy[c].push(step, t->num(r, "accuracy"));
      d.logprob[c].push(step, t->num(r, "mean_logprob"));
    }
  }
  if (const auto t = detail::read_input(run / "geometry.csv", d.missing)) {
    for (std::size_t r = 0; r < t->rows.size(); ++r) {
      const double v = t->num(r, "value");
      if (!std::isfinite(v)) continue;
      d.geometry.at(t->at(r, "measure"), detail::combo_of(*t, r), std::stoi(t->at(r, "layer")))
          .push(std::stoll(t->at(r, "step")), v);
    }
  }
  if (const auto t = detail::read_input(run / "probes.csv", d.missing)) {
    for (std::size_t r = 0; r < t->rows.size(); ++r)
      d.probes[{detail::combo_of(*t, r), std::stoi(t->at(r, "layer"))}].push(std::stoll(t->at(r, "step")),
                                                                            t->num(r, "test_accuracy"));
  }
  if (const auto t = detail::read_input(run / "spectra.csv", d.missing)) {
    for (std::size_t r = 0; r < t->rows.size(); ++r) {
      if (std::stoi(t->at(r, "layer")) != -1) continue;
      d.spectra[{t->at(r, "source"), detail::combo_of(*t, r), std::stoll(t->at(r, "step"))}].push_back(
          t->num(r, "value"));
    }
  }
  if (std::ifstream in(run / "measure.json"); in) {
    try {
      d.measure_meta = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception&) {
      d.missing.push_back("measure.json (unparseable)");
    }
  }
  for (auto& [k, s] : d.accuracy) detail::sort_series(s);
  for (auto& [k, s] : d.logprob) detail::sort_series(s);
  for (auto& [k, s] : d.geometry.series) detail::sort_series(s);
  for (auto& [k, s] : d.probes) detail::sort_series(s);
  return d;
}

// ---------------------------------------------------------------------------
// Per-run analyses
// ---------------------------------------------------------------------------

struct EmergenceRow {
  TaskSpec spec;
  std::optional<std::int64_t> accuracy;
  std::optional<std::int64_t> logprob;
  Divergence divergence;
};

inline std::vector<EmergenceRow> emergence_table(const RunData& d, double threshold = 0.5, int window = 3) {
  std::vector<EmergenceRow> out;
  for (const auto& s : d.combos()) {
    EmergenceRow row{s, std::nullopt, std::nullopt, {}};
    const auto& acc = d.accuracy.at(s.name());
    if (acc.size() >= static_cast<std::size_t>(window)) {
      row.accuracy = detect_emergence_accuracy(acc, threshold, window);
      row.logprob = detect_emergence_logprob(d.logprob.at(s.name()), window);
      if (!(row.logprob && *row.logprob == 0)) row.divergence = divergence_ratio(row.accuracy, row.logprob);
    }
    out.push_back(row);
  }
  return out;
}

inline std::map<std::string, std::optional<std::int64_t>> emergence_steps(const std::vector<EmergenceRow>& rows) {
  std::map<std::string, std::optional<std::int64_t>> out;
  for (const auto& r : rows) out[r.spec.name()] = r.accuracy;
  return out;
}

struct HierarchyRow {
  std::string measure;
  TaskSpec spec;
  bool emergent = false;
  bool ok = false;
  LeadLagResult result;
  std::string note;
};

inline const std::vector<std::pair<std::string, std::string>>& hierarchy_measures() {
  static const std::vector<std::pair<std::string, std::string>> m = {
      {"rankme", "Representation"}, {"fisher_effrank", "Gradient"},   {"llc", "Loss landscape"},
      {"hessian_top1", "Global landscape"}, {"grad_cov", "Gradient"}, {"alpha", "Representation"}};
  return m;
}

inline std::vector<HierarchyRow> leadlag_table(const RunData& d, const std::vector<EmergenceRow>& em,
                                               const AnalysisPlan& plan) {
  std::vector<HierarchyRow> out;
  for (const auto& m : hierarchy_measures()) {
    const auto& measure = m.first;
    for (const auto& e : em) {
      const auto* g = d.geometry.find(measure, e.spec.name());
      if (!g) continue;
      HierarchyRow row{measure, e.spec, e.accuracy.has_value(), false, {}, ""};
      const auto [x, y] = align_on_steps(*g, d.accuracy.at(e.spec.name()));
      try {
        row.result = ccf_lead_lag(x, y, plan.max_lag, plan.r_threshold);
        row.ok = true;
      } catch (const AnalysisError& ex) {
        row.note = ex.what();
      }
      out.push_back(row);
    }
  }
  return out;
}

struct RateRow {
  std::string measure;
  std::string levels;  // "all" or "L3"
  std::string filter;  // all | easy | hard
  Rate rate;
};

inline std::vector<RateRow> precursor_rate_table(const std::vector<HierarchyRow>& rows) {
  std::vector<RateRow> out;
  for (const auto& m : hierarchy_measures()) {
    const auto& measure = m.first;
    for (const std::string levels : {"all", "L3"})
      for (const auto& [fname, filter] :
           std::vector<std::pair<std::string, TaskFilter>>{{"all", TaskFilter::All}, {"easy", TaskFilter::Easy},
                                                           {"hard", TaskFilter::Hard}}) {
        std::vector<LabeledLeadLag> sel;
        for (const auto& r : rows)
          if (r.measure == measure && r.ok && r.emergent && (levels == "all" || r.spec.level == Level::L3))
            sel.push_back({r.spec.task, r.spec.level, "", r.result});
        RateRow rr{measure, levels, fname, {}};
        try {
          rr.rate = precursor_rate(sel, filter);
        } catch (const AnalysisError&) {
        }
        out.push_back(rr);
      }
  }
  return out;
}

/// Hard-task RankMe precursor rate at L3, the headline hierarchy statistic.
inline Rate find_rate(const std::vector<RateRow>& rows, const std::string& measure, const std::string& levels,
                      const std::string& filter) {
  for (const auto& r : rows)
    if (r.measure == measure && r.levels == levels && r.filter == filter) return r.rate;
  return {};
}

struct FloorRow {
  std::string size;
  std::string metric;  // rankme | alpha
  TaskSpec spec;
  FloorPoint floor;
};

inline std::optional<FloorPoint> collapse_extreme(const Series& s, double fraction, bool maximum) {
  if (s.size() == 0) return std::nullopt;
  if (!maximum) {
    try {
      return collapse_floor(s, fraction);
    } catch (const AnalysisError&) {
      return std::nullopt;
    }
  }
  const double limit = fraction * static_cast<double>(s.steps.back());
  FloorPoint f{s.values.front(), s.steps.front(), s.values.front()};
  for (std::size_t i = 0; i < s.size() && static_cast<double>(s.steps[i]) <= limit; ++i)
    if (s.values[i] > f.value) {
      f.value = s.values[i];
      f.step = s.steps[i];
    }
  if (!(f.value > 0)) return std::nullopt;
  return f;
}

inline std::vector<FloorRow> floor_table(const RunData& d, double fraction) {
  std::vector<FloorRow> out;
  for (const auto& s : d.combos())
    for (const auto& [metric, maximum] : std::vector<std::pair<std::string, bool>>{{"rankme", false}, {"alpha", true}})
      if (const auto* g = d.geometry.find(metric, s.name()))
        if (const auto f = collapse_extreme(*g, fraction, maximum)) out.push_back({d.size, metric, s, *f});
  return out;
}

struct TopDownRow {
  std::string size;
  TaskSpec spec;
  std::int64_t floor_step = 0;
  std::vector<double> layer_values;
  TopDownVerdict verdict;
};

inline std::vector<TopDownRow> topdown_table(const RunData& d, double fraction) {
  std::vector<TopDownRow> out;
  for (const auto& s : d.combos()) {
    const auto layers = d.geometry.layers("layer_rankme", s.name());
    if (layers.size() < 2) continue;
    const auto* last = d.geometry.find("layer_rankme", s.name(), layers.back());
    const auto f = collapse_extreme(*last, fraction, false);
    if (!f) continue;
    TopDownRow row{d.size, s, f->step, {}, {}};
    bool complete = true;
    for (int l : layers) {
      const auto* g = d.geometry.find("layer_rankme", s.name(), l);
      const auto it = std::find(g->steps.begin(), g->steps.end(), f->step);
      if (it == g->steps.end()) {
        complete = false;
        break;
      }
      row.layer_values.push_back(g->values[static_cast<std::size_t>(it - g->steps.begin())]);
    }
    if (!complete) continue;
    row.verdict = topdown_check(row.layer_values);
    out.push_back(row);
  }
  return out;
}

struct HiddenRow {
  TaskSpec spec;
  std::int64_t emergence_step = 0;
  HiddenLearningRecord record;
  double behavior_pre_em = 0.0;
};

inline std::vector<HiddenRow> hidden_learning_table(const RunData& d, const std::vector<EmergenceRow>& em,
                                                    std::vector<std::string>& notes) {
  std::vector<HiddenRow> out;
  for (const auto& e : em) {
    if (!e.accuracy) continue;
    std::vector<Series> per_layer;
    for (int l = 0; l < d.layers; ++l) {
      const auto it = d.probes.find({e.spec.name(), l});
      if (it == d.probes.end()) break;
      per_layer.push_back(it->second);
    }
    if (per_layer.empty()) continue;
    try {
      HiddenRow row{e.spec, *e.accuracy, hidden_learning(per_layer.back(), *e.accuracy, per_layer), 0.0};
      const auto& acc = d.accuracy.at(e.spec.name());
      const auto it = std::find(acc.steps.begin(), acc.steps.end(), row.record.pre_em_step);
      row.behavior_pre_em = it == acc.steps.end() ? std::nan("") : acc.values[static_cast<std::size_t>(it - acc.steps.begin())];
      out.push_back(row);
    } catch (const std::exception& ex) {
      notes.push_back("hidden learning " + e.spec.name() + ": " + ex.what());
    }
  }
  return out;
}

struct LlcRepeatRow {
  TaskSpec spec;
  std::int64_t step = 0;
  int chains = 0;
  double mean = 0.0;
  std::optional<double> cv;
};

inline std::vector<LlcRepeatRow> llc_repeat_table(const RunData& d) {
  std::vector<LlcRepeatRow> out;
  for (const auto& s : d.combos()) {
    std::map<std::int64_t, std::vector<LlcEstimate>> by_step;
    for (int c : d.geometry.layers("llc_repeat", s.name())) {
      const auto* g = d.geometry.find("llc_repeat", s.name(), c);
      for (std::size_t i = 0; i < g->size(); ++i) {
        LlcEstimate e;
        e.lambda_hat = g->values[i];
        by_step[g->steps[i]].push_back(e);
      }
    }
    for (const auto& [step, chains] : by_step) {
      LlcRepeatRow row{s, step, static_cast<int>(chains.size()), 0.0, std::nullopt};
      for (const auto& c : chains) row.mean += c.lambda_hat / static_cast<double>(chains.size());
      try {
        row.cv = llc_cv(chains);
      } catch (const GeometryError&) {
      }
      out.push_back(row);
    }
  }
  return out;
}

inline std::pair<std::vector<StrategyRho>, MpContext> fisher_llc_table(const RunData& d) {
  MpContext mp;
  mp.samples = d.measure_meta.value("fisher_examples", 200.0);
  mp.params = static_cast<double>(d.parameters);
  std::map<std::string, std::vector<FisherLlcPoint>> per;
  for (const auto& s : d.combos()) {
    const auto* eff = d.geometry.find("fisher_effrank", s.name());
    const auto* llc = d.geometry.find("llc", s.name());
    if (!eff || !llc) continue;
    std::map<std::int64_t, std::vector<double>> top;
    std::map<std::int64_t, double> er, lc;
    for (std::size_t i = 0; i < eff->size(); ++i) {
      er[eff->steps[i]] = eff->values[i];
      const auto it = d.spectra.find({"fisher", s.name(), eff->steps[i]});
      if (it != d.spectra.end()) top[eff->steps[i]] = it->second;
    }
    for (std::size_t i = 0; i < llc->size(); ++i) lc[llc->steps[i]] = llc->values[i];
    auto pts = align_fisher_llc(top, er, lc);
    if (!pts.empty()) per[s.name()] = std::move(pts);
  }
  if (per.empty()) return {{}, mp};
  return {fisher_llc_compare(per, mp), mp};
}

struct SweepCell {
  double threshold;
  int window;
  int events = 0;
  Rate rankme_l3;  // RankMe precursor rate over emergent L3 combos
  std::map<std::string, std::optional<std::int64_t>> steps;
};

inline std::vector<SweepCell> robustness_sweep(const RunData& d, const std::vector<double>& thresholds,
                                               const std::vector<int>& windows, const AnalysisPlan& plan) {
  std::map<std::string, Series> acc;
  for (const auto& [k, s] : d.accuracy)
    if (s.size() >= static_cast<std::size_t>(*std::max_element(windows.begin(), windows.end()))) acc[k] = s;
  // CCF classification does not depend on the detector; only the emergent set changes
  std::map<std::string, LeadLagResult> rank;
  for (const auto& [k, s] : acc)
    if (const auto* g = d.geometry.find("rankme", k)) {
      const auto [x, y] = align_on_steps(*g, s);
      try {
        rank[k] = ccf_lead_lag(x, y, plan.max_lag, plan.r_threshold);
      } catch (const AnalysisError&) {
      }
    }
  std::vector<SweepCell> out;
  for (const auto& c : threshold_sensitivity(acc, thresholds, windows)) {
    SweepCell cell{c.threshold, c.window, c.events, {}, c.steps};
    for (const auto& [k, step] : c.steps) {
      if (!step || task_spec(k).level != Level::L3) continue;
      const auto it = rank.find(k);
      if (it == rank.end()) continue;
      ++cell.rankme_l3.total;
      cell.rankme_l3.hits += it->second.cls == LeadLagClass::Precursor;
    }
    out.push_back(std::move(cell));
  }
  return out;
}

struct FreezeRow {
  std::string variant;
  TaskSpec spec;
  std::optional<std::int64_t> baseline;
  std::optional<std::int64_t> variant_step;
  std::optional<std::int64_t> delta;
  std::string note;  // censoring when one side never emerges
};

/// Emergence delta (variant - baseline). When only the baseline emerges the delay
/// is censored: it is at least (variant's last checkpoint - baseline step).
inline std::vector<FreezeRow> freeze_deltas(const RunData& base, const RunData& variant, const std::string& name) {
  const auto eb = emergence_steps(emergence_table(base));
  const auto ev = emergence_steps(emergence_table(variant));
  std::vector<FreezeRow> out;
  for (const auto& s : base.combos()) {
    if (!ev.count(s.name())) continue;
    FreezeRow r{name, s, eb.at(s.name()), ev.at(s.name()), std::nullopt, ""};
    if (r.baseline && r.variant_step) {
      r.delta = *r.variant_step - *r.baseline;
    } else if (r.baseline) {
      const auto last = variant.accuracy.at(s.name()).steps.back();
      r.note = "variant never emerges; delay >= " + std::to_string(last - *r.baseline);
    } else if (r.variant_step) {
      r.note = "baseline never emerges";
    } else {
      r.note = "neither emerges";
    }
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

struct RunAnalysis {
  RunData data;
  std::vector<EmergenceRow> emergence;
  std::vector<HierarchyRow> leadlag;
  std::vector<RateRow> rates;
  std::vector<FloorRow> floors;
  std::vector<TopDownRow> topdown;
  std::vector<HiddenRow> hidden;
  std::vector<LlcRepeatRow> llc_repeats;
  std::vector<StrategyRho> fisher_llc;
  MpContext mp;
  SweepOutput sweep;
  std::vector<std::string> notes;
};

inline RunAnalysis analyze_run(RunData d, const AnalysisPlan& plan) {
  RunAnalysis a;
  a.emergence = emergence_table(d);
  a.leadlag = leadlag_table(d, a.emergence, plan);
  a.rates = precursor_rate_table(a.leadlag);
  a.floors = floor_table(d, plan.floor_fraction);
  a.topdown = topdown_table(d, plan.floor_fraction);
  a.hidden = hidden_learning_table(d, a.emergence, a.notes);
  a.llc_repeats = llc_repeat_table(d);
  try {
    std::tie(a.fisher_llc, a.mp) = fisher_llc_table(d);
  } catch (const AnalysisError& e) {
    a.notes.push_back(std::string("fisher/LLC comparison: ") + e.what());
  }
  SweepOptions so;
  so.max_lag = plan.max_lag;
  so.threshold = plan.r_threshold;
  so.floor_fraction = plan.floor_fraction;
  a.sweep = metric_sweep(d.geometry, d.accuracy, emergence_steps(a.emergence), so);
  a.data = std::move(d);
  return a;
}

namespace detail {

inline std::vector<std::string> spec_fields(const TaskSpec& s) {
  return {std::string(task_name(s.task)), std::string(level_name(s.level))};
}

template <typename... Tail>
std::vector<std::string> row_of(const TaskSpec& s, Tail&&... tail) {
  auto f = spec_fields(s);
  (f.push_back(std::forward<Tail>(tail)), ...);
  return f;
}

inline std::string join_values(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + fmt_num(v[i]);
  return s;
}

inline std::string rate_value(const Rate& r) {
  return r.total ? fmt_num(r.value()) : std::string();
}

}  // namespace detail

inline void write_run_analysis(const RunAnalysis& a) {
  namespace fs = std::filesystem;
  using detail::row_of;
  const auto out = a.data.dir / "analysis";
  fs::create_directories(out);

  CsvTable em{{"task", "level", "detector", "threshold", "window", "step"}, {}};
  CsvTable dv{{"task", "level", "accuracy_step", "logprob_step", "ratio", "learning_without_accuracy"}, {}};
  for (const auto& e : a.emergence) {
    em.rows.push_back(row_of(e.spec, "accuracy", "0.5", "3", fmt_opt_int(e.accuracy)));
    em.rows.push_back(row_of(e.spec, "logprob", "midpoint", "3", fmt_opt_int(e.logprob)));
    dv.rows.push_back(row_of(e.spec, fmt_opt_int(e.accuracy), fmt_opt_int(e.logprob), fmt_opt(e.divergence.ratio),
                             e.divergence.learning_without_accuracy ? "1" : "0"));
  }
  write_csv(a.data.dir / "emergence.csv", em);
  write_csv(out / "divergence.csv", dv);

  CsvTable ll{{"measure", "task", "level", "emergent", "ok", "lag", "r", "class", "note"}, {}};
  for (const auto& r : a.leadlag) {
    auto f = std::vector<std::string>{r.measure};
    for (auto& x : row_of(r.spec, r.emergent ? "1" : "0", r.ok ? "1" : "0", r.ok ? std::to_string(r.result.lag) : "",
                          r.ok ? fmt_num(r.result.r) : "", r.ok ? leadlag_name(r.result.cls) : "", r.note))
      f.push_back(std::move(x));
    ll.rows.push_back(std::move(f));
  }
  write_csv(out / "leadlag.csv", ll);

  CsvTable pr{{"measure", "levels", "filter", "hits", "total", "rate"}, {}};
  for (const auto& r : a.rates)
    pr.rows.push_back({r.measure, r.levels, r.filter, std::to_string(r.rate.hits), std::to_string(r.rate.total),
                       detail::rate_value(r.rate)});
  write_csv(out / "precursor_rates.csv", pr);

  CsvTable fl{{"size", "metric", "task", "level", "floor", "floor_step", "init", "init_over_floor"}, {}};
  for (const auto& f : a.floors) {
    std::vector<std::string> r{f.size, f.metric};
    for (auto& x : row_of(f.spec, fmt_num(f.floor.value), std::to_string(f.floor.step), fmt_num(f.floor.init),
                          fmt_num(f.floor.init / f.floor.value)))
      r.push_back(std::move(x));
    fl.rows.push_back(std::move(r));
  }
  write_csv(out / "floors.csv", fl);

  CsvTable td{{"size", "task", "level", "floor_step", "layer_values", "first", "last", "fraction", "top_down"}, {}};
  for (const auto& t : a.topdown) {
    std::vector<std::string> r{t.size};
    for (auto& x : row_of(t.spec, std::to_string(t.floor_step), detail::join_values(t.layer_values),
                          fmt_num(t.layer_values.front()), fmt_num(t.layer_values.back()), fmt_num(t.verdict.fraction),
                          t.verdict.top_down ? "1" : "0"))
      r.push_back(std::move(x));
    td.rows.push_back(std::move(r));
  }
  write_csv(out / "topdown.csv", td);

  CsvTable hl{{"task", "level", "emergence_step", "pre_em_step", "probe_init", "probe_pre_em", "delta", "behavior_pre_em",
               "layer_deltas", "deep_shallow_ratio"},
              {}};
  for (const auto& h : a.hidden)
    hl.rows.push_back(row_of(h.spec, std::to_string(h.emergence_step), std::to_string(h.record.pre_em_step),
                             fmt_num(h.record.init), fmt_num(h.record.pre_em), fmt_num(h.record.delta),
                             fmt_num(h.behavior_pre_em), detail::join_values(h.record.layer_delta),
                             fmt_opt(h.record.deep_shallow_ratio)));
  write_csv(out / "hidden_learning.csv", hl);

  CsvTable fll{{"strategy", "rho", "points", "mp_samples", "mp_params"}, {}};
  for (const auto& s : a.fisher_llc)
    fll.rows.push_back({s.strategy, fmt_opt(s.rho), std::to_string(s.points), fmt_num(a.mp.samples),
                        fmt_num(a.mp.params)});
  write_csv(out / "fisher_llc.csv", fll);

  CsvTable ms{{"metric", "task", "level", "emergent", "ok", "lag", "r", "class", "note"}, {}};
  for (const auto& r : a.sweep.rows) {
    std::vector<std::string> f{r.metric};
    for (auto& x : row_of(task_spec(r.combo), r.emergent ? "1" : "0", r.ok ? "1" : "0",
                          r.ok ? std::to_string(r.result.lag) : "", r.ok ? fmt_num(r.result.r) : "",
                          r.ok ? leadlag_name(r.result.cls) : "", r.note))
      f.push_back(std::move(x));
    ms.rows.push_back(std::move(f));
  }
  write_csv(out / "metric_sweep.csv", ms);
  CsvTable mss{{"metric", "hits", "total", "rate", "hard_hits", "hard_total", "hard_rate", "skipped"}, {}};
  for (const auto& s : a.sweep.summary)
    mss.rows.push_back({s.metric, std::to_string(s.all.hits), std::to_string(s.all.total), detail::rate_value(s.all),
                        std::to_string(s.hard.hits), std::to_string(s.hard.total), detail::rate_value(s.hard),
                        std::to_string(s.skipped)});
  write_csv(out / "metric_sweep_summary.csv", mss);

  CsvTable lr{{"task", "level", "step", "chains", "mean", "cv"}, {}};
  for (const auto& r : a.llc_repeats)
    lr.rows.push_back(row_of(r.spec, std::to_string(r.step), std::to_string(r.chains), fmt_num(r.mean), fmt_opt(r.cv)));
  write_csv(out / "llc_repeats.csv", lr);
}

struct CrossRunAnalysis {
  std::vector<std::pair<FloorRow, TaskFloorStats>> floor_stats;  // first row carries metric/spec
  ConcordanceReport concordance;
  bool concordance_ok = false;
};

inline CrossRunAnalysis analyze_across(const std::vector<RunAnalysis>& runs) {
  CrossRunAnalysis c;
  std::map<std::pair<std::string, std::string>, std::vector<const FloorRow*>> by;
  for (const auto& r : runs)
    for (const auto& f : r.floors) by[{f.metric, f.spec.name()}].push_back(&f);
  for (const auto& s : all_task_specs())
    for (const std::string metric : {"rankme", "alpha"}) {
      const auto it = by.find({metric, s.name()});
      if (it == by.end() || it->second.size() < 2) continue;
      std::vector<double> floors, inits;
      for (const auto* f : it->second) {
        floors.push_back(f->floor.value);
        inits.push_back(f->floor.init);
      }
      c.floor_stats.emplace_back(*it->second.front(), floor_stats_from_values(floors, inits));
    }
  std::vector<ConcordanceItem> items;
  for (const auto& r : runs) {
    const auto steps = emergence_steps(r.emergence);
    for (const auto& f : r.floors)
      if (f.metric == "rankme")
        items.push_back({f.spec.task, f.spec.level, r.data.size, f.floor.value, steps.at(f.spec.name())});
  }
  if (!items.empty()) {
    c.concordance = concordance_suite(items);
    c.concordance_ok = true;
  }
  return c;
}

inline void write_cross_analysis(const CrossRunAnalysis& c, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  CsvTable fs{{"metric", "task", "level", "sizes", "mean", "stdev", "cv"}, {}};
  for (const auto& [row, st] : c.floor_stats)
    fs.rows.push_back({row.metric, std::string(task_name(row.spec.task)), std::string(level_name(row.spec.level)),
                       std::to_string(st.floors.size()), fmt_num(st.mean), fmt_num(st.stdev), fmt_num(st.cv)});
  write_csv(out / "floor_stats.csv", fs);
  CsvTable cc{{"category", "hits", "total", "rate", "ci_lo", "ci_hi", "swap_pairs"}, {}};
  if (c.concordance_ok) {
    const auto& r = c.concordance;
    for (const auto& [name, cat] : std::vector<std::pair<std::string, const ConcordanceCategory*>>{
             {"cross_class", &r.cross_class},
             {"within_easy", &r.within_easy},
             {"within_hard", &r.within_hard},
             {"swap", &r.swap}})
      cc.rows.push_back({name, std::to_string(cat->hits), std::to_string(cat->total), fmt_opt(cat->rate),
                         cat->ci ? fmt_num(cat->ci->lo) : "", cat->ci ? fmt_num(cat->ci->hi) : "",
                         name == "swap" ? std::to_string(r.swap_pairs) : ""});
  }
  write_csv(out / "concordance.csv", cc);
}

inline std::string temporal_relation(const std::vector<HierarchyRow>& rows, const std::string& measure) {
  std::map<LeadLagClass, int> counts;
  int total = 0;
  for (const auto& r : rows)
    if (r.measure == measure && r.ok && r.emergent) {
      ++counts[r.result.cls];
      ++total;
    }
  if (total == 0) return "no events";
  LeadLagClass best = LeadLagClass::None;
  int n = -1;
  for (const auto& [cls, k] : counts)
    if (k > n) {
      n = k;
      best = cls;
    }
  return "mostly " + leadlag_name(best) + " (" + std::to_string(n) + "/" + std::to_string(total) + ")";
}

inline std::string render_report(const std::vector<RunAnalysis>& runs, const CrossRunAnalysis& cross) {
  std::ostringstream md;
  md << "# Emergence analysis report\n\n";
  for (const auto& a : runs) {
    const auto& d = a.data;
    md << "## Run `" << d.dir.filename().string() << "` (" << d.size << ", " << d.parameters << " parameters)\n\n";
    if (!d.missing.empty()) {
      md << "**Missing inputs:**\n\n";
      for (const auto& m : d.missing) md << "- " << m << "\n";
      md << "\n";
    }
    for (const auto& n : a.notes) md << "- note: " << n << "\n";
    if (!a.notes.empty()) md << "\n";

    int events = 0;
    for (const auto& e : a.emergence) events += e.accuracy.has_value();
    md << "### Emergence (accuracy >= 0.5 for 3 checkpoints; log-prob midpoint)\n\n";
    if (a.emergence.empty()) md << "No evaluation series.\n\n";
    else if (events == 0) md << "**No events:** no task/level combination emerges.\n\n";
    if (!a.emergence.empty()) {
      md << "| Task | Level | Accuracy step | Log-prob step | Ratio |\n|---|---|---|---|---|\n";
      for (const auto& e : a.emergence)
        md << "| " << task_name(e.spec.task) << " | " << level_name(e.spec.level) << " | "
           << (e.accuracy ? std::to_string(*e.accuracy) : "none") << " | "
           << (e.logprob ? std::to_string(*e.logprob) : "none") << " | "
           << (e.divergence.ratio ? fmt_num(*e.divergence.ratio)
                                  : (e.divergence.learning_without_accuracy ? "learning without accuracy" : "-"))
           << " |\n";
      md << "\n" << events << "/" << a.emergence.size() << " combinations emerge.\n\n";
    }

    md << "### Geometric hierarchy\n\n";
    md << "| Measure | Level | Precursor rate (all) | Hard tasks | L3 | Temporal relation |\n|---|---|---|---|---|---|\n";
    for (const auto& [measure, level] : hierarchy_measures()) {
      const auto all = find_rate(a.rates, measure, "all", "all");
      if (all.total == 0) {
        std::string why = "not measured";
        for (const auto& r : a.leadlag)
          if (r.measure == measure) why = r.ok ? "no emergent combinations" : "not computable: " + r.note;
        md << "| " << measure << " | " << level << " | " << why << " | | | |\n";
        continue;
      }
      md << "| " << measure << " | " << level << " | " << detail::rate_text(all.hits, all.total) << " | "
         << detail::rate_text(find_rate(a.rates, measure, "all", "hard").hits,
                              find_rate(a.rates, measure, "all", "hard").total)
         << " | "
         << detail::rate_text(find_rate(a.rates, measure, "L3", "all").hits, find_rate(a.rates, measure, "L3", "all").total)
         << " | " << temporal_relation(a.leadlag, measure) << " |\n";
    }
    md << "\n";

    if (!a.floors.empty()) {
      md << "### Collapse floors (RankMe, first " << "quarter of training)\n\n| Combo | Floor | Step | Init/floor |\n|---|---|---|---|\n";
      for (const auto& f : a.floors)
        if (f.metric == "rankme")
          md << "| " << f.spec.name() << " | " << fmt_num(f.floor.value) << " | " << f.floor.step << " | "
             << fmt_num(f.floor.init / f.floor.value) << " |\n";
      md << "\n";
    }
    if (!a.topdown.empty()) {
      int td = 0;
      for (const auto& t : a.topdown) td += t.verdict.top_down;
      md << "### Top-down propagation\n\n" << td << "/" << a.topdown.size()
         << " combinations strictly decrease with depth at the collapse minimum.\n\n| Combo | Layer values | Fraction |\n|---|---|---|\n";
      for (const auto& t : a.topdown)
        md << "| " << t.spec.name() << " | " << detail::join_values(t.layer_values) << " | " << fmt_num(t.verdict.fraction)
           << " |\n";
      md << "\n";
    }
    if (!a.hidden.empty()) {
      md << "### Hidden learning (final-layer probe)\n\n| Combo | Init | Pre-Em | Delta | Behavior at Pre-Em | Deep/shallow |\n|---|---|---|---|---|---|\n";
      for (const auto& h : a.hidden)
        md << "| " << h.spec.name() << " | " << fmt_num(h.record.init) << " | " << fmt_num(h.record.pre_em) << " | "
           << fmt_num(h.record.delta) << " | " << fmt_num(h.behavior_pre_em) << " | "
           << (h.record.deep_shallow_ratio ? fmt_num(*h.record.deep_shallow_ratio) : "-") << " |\n";
      md << "\n";
    }
    if (!a.fisher_llc.empty()) {
      md << "### Fisher effective rank vs LLC (pooled Spearman)\n\n| Strategy | rho | Points |\n|---|---|---|\n";
      for (const auto& s : a.fisher_llc)
        md << "| " << s.strategy << " | " << (s.rho ? fmt_num(*s.rho) : "undefined") << " | " << s.points << " |\n";
      md << "\nMarchenko-Pastur edge: sigma^2 (1 + sqrt(N/P))^2 with sigma^2 = mean stored eigenvalue, N = "
         << fmt_num(a.mp.samples) << ", P = " << fmt_num(a.mp.params) << ".\n\n";
    }
    if (!a.llc_repeats.empty()) {
      md << "### LLC repeatability\n\n| Combo | Step | Chains | Mean | CV |\n|---|---|---|---|---|\n";
      for (const auto& r : a.llc_repeats)
        md << "| " << r.spec.name() << " | " << r.step << " | " << r.chains << " | " << fmt_num(r.mean) << " | "
           << fmt_opt(r.cv) << " |\n";
      md << "\n";
    }
    md << "### Metric sweep (event-based precursor rates over emergent combinations)\n\n| Metric | All | Hard | Skipped |\n|---|---|---|---|\n";
    for (const auto& s : a.sweep.summary)
      md << "| " << s.metric << " | " << detail::rate_text(s.all.hits, s.all.total) << " | "
         << detail::rate_text(s.hard.hits, s.hard.total) << " | " << s.skipped << " |\n";
    md << "\n";
  }
  md << "## Across runs\n\n";
  if (cross.floor_stats.empty()) {
    md << "Floor statistics need at least two sizes.\n\n";
  } else {
    md << "| Metric | Combo | Sizes | Mean | Std | CV |\n|---|---|---|---|---|---|\n";
    for (const auto& [row, st] : cross.floor_stats)
      md << "| " << row.metric << " | " << row.spec.name() << " | " << st.floors.size() << " | " << fmt_num(st.mean)
         << " | " << fmt_num(st.stdev) << " | " << fmt_num(st.cv) << " |\n";
    md << "\n";
  }
  if (cross.concordance_ok) {
    const auto& r = cross.concordance;
    md << "Concordance of RankMe floors with emergence order: cross-class "
       << detail::rate_text(r.cross_class.hits, r.cross_class.total) << ", within-easy "
       << detail::rate_text(r.within_easy.hits, r.within_easy.total) << ", within-hard "
       << detail::rate_text(r.within_hard.hits, r.within_hard.total) << ", swap test "
       << detail::rate_text(r.swap.hits, r.swap.total) << " over " << r.swap_pairs << " swap pairs.\n";
  }
  return md.str();
}

}  // namespace emlab
