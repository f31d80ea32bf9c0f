#pragma once

// Thirteen candidate geometric precursors, each turned into a per-checkpoint
// series per task/level and classified against accuracy with ccf_lead_lag.
//
// Timing metrics (collapse timing, LLC transition timing) become step
// indicators: 0 before the event checkpoint and 1 from it on, so their single
// differenced spike is what the cross-correlation aligns with behavior.
// LLC transition timing = checkpoint with the largest absolute first
// difference of the LLC series.

#include <map>
#include <string>
#include <tuple>

#include "emlab/analysis/floors.hpp"
#include "emlab/analysis/leadlag.hpp"

namespace emlab {

/// Measured geometry keyed by (measure, combo, layer); layer -1 = final / not layered.
struct RunGeometry {
  std::map<std::tuple<std::string, std::string, int>, Series> series;

  [[nodiscard]] const Series* find(const std::string& measure, const std::string& combo, int layer = -1) const {
    const auto it = series.find({measure, combo, layer});
    return it == series.end() ? nullptr : &it->second;
  }
  Series& at(const std::string& measure, const std::string& combo, int layer = -1) {
    return series[{measure, combo, layer}];
  }
  [[nodiscard]] std::vector<int> layers(const std::string& measure, const std::string& combo) const {
    std::vector<int> out;
    for (const auto& [key, s] : series)
      if (std::get<0>(key) == measure && std::get<1>(key) == combo && std::get<2>(key) >= 0)
        out.push_back(std::get<2>(key));
    return out;
  }
};

/// top-1 / top-2.
inline double spectral_gap(const std::vector<double>& ev) {
  if (ev.size() < 2 || !(ev[1] > 0)) throw AnalysisError("spectral gap needs two positive eigenvalues");
  return ev[0] / ev[1];
}

/// top-1 / trace.
inline double eigen_concentration(const std::vector<double>& ev) {
  double tr = 0.0;
  for (double v : ev) tr += v;
  if (ev.empty() || !(tr > 0)) throw AnalysisError("eigenvalue concentration needs a positive trace");
  return ev[0] / tr;
}

/// Least-squares slope of values against layer index 0..L-1.
inline double layer_slope(const std::vector<double>& per_layer) {
  const auto n = static_cast<double>(per_layer.size());
  if (per_layer.size() < 2) throw AnalysisError("layer slope needs at least two layers");
  const double mx = (n - 1.0) / 2.0;
  const double my = mean_of(per_layer);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < per_layer.size(); ++i) {
    const double dx = static_cast<double>(i) - mx;
    sxy += dx * (per_layer[i] - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

inline const std::vector<std::string>& sweep_metrics() {
  static const std::vector<std::string> names = {
      "collapse_timing",    "floor_value",       "recovery_slope",  "recovery_magnitude", "cross_task_z",
      "gradient_alignment", "eig_concentration", "fisher_effrank",  "llc_value",          "llc_transition",
      "spectral_gap",       "grad_norm_divergence", "layer_rankme_slope"};
  return names;
}

struct MetricRow {
  std::string metric;
  std::string combo;
  bool ok = false;
  std::string note;  // reason when skipped
  LeadLagResult result;
  bool emergent = false;
};

struct MetricSummary {
  std::string metric;
  Rate all;
  Rate hard;
  int skipped = 0;
};

struct SweepOptions {
  std::string rankme_measure = "rankme";
  int max_lag = 20;
  double threshold = 0.3;
  double floor_fraction = 0.25;
};

namespace detail {

inline Series indicator_after(const Series& s, std::int64_t event_step) {
  Series out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push(s.steps[i], s.steps[i] >= event_step ? 1.0 : 0.0);
  return out;
}

/// Ratio or difference of a combo's series with the cross-combo statistic at each step.
inline std::map<std::string, Series> cross_combo(const RunGeometry& g, const std::string& measure,
                                                 const std::vector<std::string>& combos, bool zscore) {
  std::map<std::int64_t, std::vector<double>> by_step;
  for (const auto& c : combos)
    if (const auto* s = g.find(measure, c))
      for (std::size_t i = 0; i < s->size(); ++i) by_step[s->steps[i]].push_back(s->values[i]);
  std::map<std::string, Series> out;
  for (const auto& c : combos) {
    const auto* s = g.find(measure, c);
    if (!s) continue;
    Series r;
    for (std::size_t i = 0; i < s->size(); ++i) {
      const auto& vals = by_step.at(s->steps[i]);
      if (vals.size() < 2) continue;
      const double m = mean_of(vals);
      if (zscore) {
        const double sd = pstdev(vals);
        r.push(s->steps[i], sd > 0 ? (s->values[i] - m) / sd : 0.0);
      } else {
        r.push(s->steps[i], m != 0 ? s->values[i] / m : 0.0);
      }
    }
    out[c] = std::move(r);
  }
  return out;
}

inline Series ratio_series(const Series* num, const Series* den) {
  Series out;
  if (!num || !den) return out;
  std::map<std::int64_t, double> d;
  for (std::size_t i = 0; i < den->size(); ++i) d[den->steps[i]] = den->values[i];
  for (std::size_t i = 0; i < num->size(); ++i) {
    const auto it = d.find(num->steps[i]);
    if (it != d.end() && it->second > 0) out.push(num->steps[i], num->values[i] / it->second);
  }
  return out;
}

}  // namespace detail

/// Builds the metric series for one combo; empty optional + note when inputs are missing.
inline std::optional<Series> metric_series(const std::string& metric, const std::string& combo, const RunGeometry& g,
                                           const std::vector<std::string>& combos, std::string& note,
                                           const SweepOptions& opt = {}) {
  const Series* rank = g.find(opt.rankme_measure, combo);
  auto need = [&](const Series* s, const char* what) {
    if (!s || s->size() == 0) {
      note = std::string("missing ") + what;
      return false;
    }
    return true;
  };
  if (metric == "collapse_timing") {
    if (!need(rank, "rankme")) return std::nullopt;
    const double half = 0.5 * rank->values.front();
    for (std::size_t i = 0; i < rank->size(); ++i)
      if (rank->values[i] < half) return detail::indicator_after(*rank, rank->steps[i]);
    note = "no collapse event";
    return std::nullopt;
  }
  if (metric == "floor_value") {
    if (!need(rank, "rankme")) return std::nullopt;
    Series out;
    double m = rank->values.front();
    for (std::size_t i = 0; i < rank->size(); ++i) {
      m = std::min(m, rank->values[i]);
      out.push(rank->steps[i], m);
    }
    return out;
  }
  if (metric == "recovery_slope" || metric == "recovery_magnitude") {
    if (!need(rank, "rankme")) return std::nullopt;
    const auto floor = collapse_floor(*rank, opt.floor_fraction);
    Series out;
    for (std::size_t i = 0; i < rank->size(); ++i) {
      double v = 0.0;
      if (rank->steps[i] > floor.step) {
        v = metric == "recovery_slope" ? (rank->values[i] - rank->values[i - 1]) /
                                             static_cast<double>(rank->steps[i] - rank->steps[i - 1])
                                       : rank->values[i] - floor.value;
      }
      out.push(rank->steps[i], v);
    }
    return out;
  }
  if (metric == "cross_task_z" || metric == "grad_norm_divergence") {
    const bool z = metric == "cross_task_z";
    const auto all = detail::cross_combo(g, z ? opt.rankme_measure : "grad_norm", combos, z);
    const auto it = all.find(combo);
    if (it == all.end() || it->second.size() == 0) {
      note = z ? "missing rankme" : "missing grad_norm";
      return std::nullopt;
    }
    return it->second;
  }
  if (metric == "gradient_alignment") {
    const auto* s = g.find("grad_align", combo);
    if (!need(s, "grad_align")) return std::nullopt;
    return *s;
  }
  if (metric == "eig_concentration" || metric == "spectral_gap") {
    const auto* top1 = g.find("fisher_top1", combo);
    const auto* den = g.find(metric == "spectral_gap" ? "fisher_top2" : "fisher_trace", combo);
    auto out = detail::ratio_series(top1, den);
    if (out.size() == 0) {
      note = "missing fisher spectrum";
      return std::nullopt;
    }
    return out;
  }
  if (metric == "fisher_effrank") {
    const auto* s = g.find("fisher_effrank", combo);
    if (!need(s, "fisher_effrank")) return std::nullopt;
    return *s;
  }
  if (metric == "llc_value" || metric == "llc_transition") {
    const auto* s = g.find("llc", combo);
    if (!need(s, "llc")) return std::nullopt;
    if (metric == "llc_value") return *s;
    if (s->size() < 2) {
      note = "llc series too short";
      return std::nullopt;
    }
    std::size_t best = 1;
    for (std::size_t i = 1; i < s->size(); ++i)
      if (std::abs(s->values[i] - s->values[i - 1]) > std::abs(s->values[best] - s->values[best - 1])) best = i;
    return detail::indicator_after(*s, s->steps[best]);
  }
  if (metric == "layer_rankme_slope") {
    const auto ls = g.layers("layer_rankme", combo);
    if (ls.size() < 2) {
      note = "missing layer_rankme";
      return std::nullopt;
    }
    std::map<std::int64_t, std::vector<double>> by_step;
    for (int l : ls) {
      const auto* s = g.find("layer_rankme", combo, l);
      for (std::size_t i = 0; i < s->size(); ++i) by_step[s->steps[i]].push_back(s->values[i]);
    }
    Series out;
    for (const auto& [step, vals] : by_step)
      if (vals.size() == ls.size()) out.push(step, layer_slope(vals));
    return out;
  }
  throw AnalysisError("unknown metric " + metric);
}

/// Behavior values at the geometry series' steps (both restricted to shared steps).
inline std::pair<std::vector<double>, std::vector<double>> align_on_steps(const Series& geo, const Series& behavior) {
  std::map<std::int64_t, double> b;
  for (std::size_t i = 0; i < behavior.size(); ++i) b[behavior.steps[i]] = behavior.values[i];
  std::vector<double> x, y;
  for (std::size_t i = 0; i < geo.size(); ++i) {
    const auto it = b.find(geo.steps[i]);
    if (it == b.end()) continue;
    x.push_back(geo.values[i]);
    y.push_back(it->second);
  }
  return {x, y};
}

struct SweepOutput {
  std::vector<MetricRow> rows;
  std::vector<MetricSummary> summary;
};

/// `accuracy` and `emergence` are keyed by combo name (e.g. "ADD_L3").
inline SweepOutput metric_sweep(const RunGeometry& g, const std::map<std::string, Series>& accuracy,
                                const std::map<std::string, std::optional<std::int64_t>>& emergence,
                                const SweepOptions& opt = {}) {
  std::vector<std::string> combos;
  for (const auto& [c, s] : accuracy) combos.push_back(c);
  SweepOutput out;
  for (const auto& metric : sweep_metrics()) {
    MetricSummary sum{metric, {}, {}, 0};
    for (const auto& combo : combos) {
      MetricRow row{metric, combo, false, "", {}, false};
      const auto em = emergence.find(combo);
      row.emergent = em != emergence.end() && em->second.has_value();
      std::string note;
      const auto series = metric_series(metric, combo, g, combos, note, opt);
      if (series) {
        const auto [x, y] = align_on_steps(*series, accuracy.at(combo));
        try {
          row.result = ccf_lead_lag(x, y, opt.max_lag, opt.threshold);
          row.ok = true;
        } catch (const AnalysisError& e) {
          note = e.what();
        }
      }
      row.note = note;
      if (!row.ok) ++sum.skipped;
      if (row.ok && row.emergent) {
        const bool pre = row.result.cls == LeadLagClass::Precursor;
        ++sum.all.total;
        sum.all.hits += pre;
        if (is_hard(task_spec(combo).task)) {
          ++sum.hard.total;
          sum.hard.hits += pre;
        }
      }
      out.rows.push_back(std::move(row));
    }
    out.summary.push_back(sum);
  }
  return out;
}

}  // namespace emlab
