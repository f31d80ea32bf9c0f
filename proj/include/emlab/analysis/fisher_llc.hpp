#pragma once

// Fisher effective rank vs LLC: ten transformations of the stored Fisher
// top-k spectrum, each compared to LLC by a Spearman correlation pooled over
// every (task, checkpoint) point.

#include <map>
#include <string>

#include "emlab/analysis/stats.hpp"
#include "emlab/geometry/spectrum.hpp"

namespace emlab {

struct FisherLlcPoint {
  std::int64_t step = 0;
  std::vector<double> fisher_top;  // stored leading eigenvalues, descending
  double fisher_effrank = 0.0;     // effective rank of the full Fisher spectrum
  double llc = 0.0;
};

struct StrategyRho {
  std::string strategy;
  std::optional<double> rho;  // undefined when a transformed series is constant
  int points = 0;
};

/// Aspect context for the Marchenko-Pastur edge: N samples, P parameters.
struct MpContext {
  double samples = 200.0;
  double params = 1.0;
};

inline const std::vector<std::string>& fisher_llc_strategies() {
  static const std::vector<std::string> names = {"raw",     "top5",         "top10",        "mp_threshold",
                                                 "smooth5", "log_transform", "participation", "spectral_gap",
                                                 "normalized_trace", "entropy"};
  return names;
}

namespace detail {

inline std::vector<double> leading(const std::vector<double>& ev, std::size_t k) {
  std::vector<double> out(ev.begin(), ev.begin() + static_cast<std::ptrdiff_t>(std::min(k, ev.size())));
  return out;
}

inline double entropy_of(const std::vector<double>& ev) { return std::log(effective_rank(ev)); }

/// Eigenvalues above the MP bulk edge sigma^2 (1 + sqrt(N/P))^2, with sigma^2
/// estimated by the mean of the stored spectrum.
inline double mp_effrank(const std::vector<double>& ev, const MpContext& mp) {
  double sigma2 = 0.0;
  for (double v : ev) sigma2 += v;
  sigma2 /= static_cast<double>(ev.size());
  const double edge = sigma2 * std::pow(1.0 + std::sqrt(mp.samples / mp.params), 2.0);
  std::vector<double> kept;
  for (double v : ev)
    if (v > edge) kept.push_back(v);
  if (kept.empty()) kept.push_back(ev.front());
  return effective_rank(kept);
}

inline double fisher_statistic(const std::string& strategy, const FisherLlcPoint& p, const MpContext& mp) {
  const auto& ev = p.fisher_top;
  if (strategy == "raw" || strategy == "smooth5") return p.fisher_effrank;
  if (ev.empty()) throw AnalysisError("fisher point without stored eigenvalues");
  if (strategy == "top5") return effective_rank(leading(ev, 5));
  if (strategy == "top10") return effective_rank(leading(ev, 10));
  if (strategy == "mp_threshold") return mp_effrank(ev, mp);
  if (strategy == "log_transform") {
    std::vector<double> l;
    for (double v : ev) l.push_back(std::log1p(std::max(v, 0.0)));
    return effective_rank(l);
  }
  double sum = 0.0, sq = 0.0;
  for (double v : ev) {
    sum += v;
    sq += v * v;
  }
  if (strategy == "participation") return sq > 0 ? sum * sum / sq : 0.0;
  if (strategy == "spectral_gap") return ev.size() >= 2 && ev[1] > 0 ? ev[0] / ev[1] : 0.0;
  if (strategy == "normalized_trace") return ev[0] > 0 ? sum / ev[0] : 0.0;
  if (strategy == "entropy") return entropy_of(ev);
  throw AnalysisError("unknown fisher strategy " + strategy);
}

/// Centered moving average, window truncated at the series ends.
inline std::vector<double> moving_average(const std::vector<double>& x, int window) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const std::ptrdiff_t half = window / 2;
  std::vector<double> out(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto lo = std::max<std::ptrdiff_t>(0, i - half);
    const auto hi = std::min<std::ptrdiff_t>(n - 1, i + half);
    double s = 0.0;
    for (auto j = lo; j <= hi; ++j) s += x[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

}  // namespace detail

/// `per_task` maps a task key to its step-sorted points.
inline std::vector<StrategyRho> fisher_llc_compare(const std::map<std::string, std::vector<FisherLlcPoint>>& per_task,
                                                   const MpContext& mp = {}) {
  std::vector<StrategyRho> out;
  for (const auto& strategy : fisher_llc_strategies()) {
    std::vector<double> xs, ys;
    for (const auto& [task, points] : per_task) {
      std::vector<double> stat;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (i > 0 && points[i].step <= points[i - 1].step) throw AnalysisError("fisher/LLC points must be step-sorted");
        stat.push_back(detail::fisher_statistic(strategy, points[i], mp));
      }
      if (strategy == "smooth5") stat = detail::moving_average(stat, 5);
      for (std::size_t i = 0; i < points.size(); ++i) {
        xs.push_back(stat[i]);
        ys.push_back(points[i].llc);
      }
    }
    StrategyRho r{strategy, std::nullopt, static_cast<int>(xs.size())};
    if (xs.size() >= 3) {
      try {
        r.rho = spearman(xs, ys);
      } catch (const AnalysisError&) {
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Builds aligned points from step-keyed Fisher and LLC records (inner join on step).
inline std::vector<FisherLlcPoint> align_fisher_llc(const std::map<std::int64_t, std::vector<double>>& fisher_top,
                                                    const std::map<std::int64_t, double>& fisher_effrank,
                                                    const std::map<std::int64_t, double>& llc) {
  std::vector<FisherLlcPoint> out;
  for (const auto& [step, value] : llc) {
    const auto er = fisher_effrank.find(step);
    if (er == fisher_effrank.end()) continue;
    FisherLlcPoint p;
    p.step = step;
    p.llc = value;
    p.fisher_effrank = er->second;
    if (const auto top = fisher_top.find(step); top != fisher_top.end()) p.fisher_top = top->second;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace emlab
