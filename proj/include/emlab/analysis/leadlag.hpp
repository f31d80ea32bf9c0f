#pragma once

// Cross-correlation lead-lag classification on first-differenced series.
//
// r(k) = corr(dg[t], db[t - k]) over the overlapping window, lags counted in
// checkpoints. A negative lag means the geometric series leads behavior.

#include <map>
#include <string>

#include "emlab/analysis/stats.hpp"
#include "emlab/corpus.hpp"

namespace emlab {

enum class LeadLagClass { Precursor, Synchronous, Lagging, None };

inline std::string leadlag_name(LeadLagClass c) {
  switch (c) {
    case LeadLagClass::Precursor: return "precursor";
    case LeadLagClass::Synchronous: return "synchronous";
    case LeadLagClass::Lagging: return "lagging";
    case LeadLagClass::None: return "none";
  }
  return "?";
}

struct LeadLagResult {
  int lag = 0;
  double r = 0.0;
  LeadLagClass cls = LeadLagClass::None;
};

inline LeadLagClass classify_leadlag(int lag, double r, double threshold) {
  if (!(std::abs(r) > threshold)) return LeadLagClass::None;
  if (lag < 0) return LeadLagClass::Precursor;
  if (lag == 0) return LeadLagClass::Synchronous;
  return LeadLagClass::Lagging;
}

inline std::vector<double> first_difference(const std::vector<double>& x) {
  std::vector<double> d;
  for (std::size_t i = 1; i < x.size(); ++i) d.push_back(x[i] - x[i - 1]);
  return d;
}

/// Correlation of dg[t] with db[t - k] over the overlap; nullopt if undefined.
inline std::optional<double> lagged_correlation(const std::vector<double>& dg, const std::vector<double>& db, int k) {
  const auto n = static_cast<std::ptrdiff_t>(dg.size());
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, k);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, n + k);
  if (hi - lo < 3) return std::nullopt;
  return pearson(dg.data() + lo, db.data() + (lo - k), static_cast<std::size_t>(hi - lo));
}

inline LeadLagResult ccf_lead_lag(const std::vector<double>& geo, const std::vector<double>& behavior, int max_lag = 20,
                                  double threshold = 0.3) {
  if (geo.size() != behavior.size()) throw AnalysisError("series must share checkpoint steps");
  if (max_lag < 0) throw AnalysisError("max lag must be >= 0");
  if (geo.size() <= static_cast<std::size_t>(max_lag) + 2)
    throw AnalysisError("series length must exceed max lag + 2");
  const auto dg = first_difference(geo);
  const auto db = first_difference(behavior);
  auto constant = [](const std::vector<double>& d) {
    return std::all_of(d.begin(), d.end(), [&](double v) { return v == d.front(); });
  };
  if (constant(dg) || constant(db)) throw AnalysisError("constant series after differencing");
  LeadLagResult best;
  bool found = false;
  // lags visited in order 0, -1, +1, -2, +2, ...; only a strictly larger |r| replaces
  for (int m = 0; m <= 2 * max_lag; ++m) {
    const int k = (m % 2 == 1) ? -(m + 1) / 2 : m / 2;
    const auto r = lagged_correlation(dg, db, k);
    if (!r) continue;
    if (!found || std::abs(*r) > std::abs(best.r)) {
      best.lag = k;
      best.r = *r;
      found = true;
    }
  }
  best.cls = classify_leadlag(best.lag, best.r, threshold);
  return best;
}

enum class TaskFilter { All, Easy, Hard };

inline bool passes(TaskFilter f, Task t) {
  return f == TaskFilter::All || (f == TaskFilter::Hard) == is_hard(t);
}

struct LabeledLeadLag {
  Task task;
  Level level;
  std::string model;
  LeadLagResult result;
};

struct Rate {
  int hits = 0;
  int total = 0;
  [[nodiscard]] double value() const { return static_cast<double>(hits) / static_cast<double>(total); }
};

inline Rate precursor_rate(const std::vector<LabeledLeadLag>& results, TaskFilter filter = TaskFilter::All) {
  Rate r;
  for (const auto& x : results) {
    if (!passes(filter, x.task)) continue;
    ++r.total;
    r.hits += x.result.cls == LeadLagClass::Precursor;
  }
  if (r.total == 0) throw AnalysisError("no results under the task filter");
  return r;
}

}  // namespace emlab
