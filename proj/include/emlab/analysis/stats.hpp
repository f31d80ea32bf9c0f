#pragma once

// Basic statistics: Pearson and Spearman correlation, population moments,
// and percentile bootstrap confidence intervals.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "emlab/rng.hpp"

namespace emlab {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double mean_of(const std::vector<double>& x) {
  if (x.empty()) throw AnalysisError("mean of empty vector");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Population standard deviation.
inline double pstdev(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size()));
}

/// Pearson correlation; nullopt when either input has zero variance.
inline std::optional<double> pearson(const double* x, const double* y, std::size_t n) {
  if (n < 2) return std::nullopt;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0 || syy <= 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw AnalysisError("pearson inputs differ in length");
  return pearson(x.data(), y.data(), x.size());
}

/// Ranks starting at 1, ties receive their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw AnalysisError("spearman inputs differ in length");
  if (x.size() < 3) throw AnalysisError("spearman needs at least 3 points");
  const auto r = pearson(average_ranks(x), average_ranks(y));
  if (!r) throw AnalysisError("spearman of a constant input");
  return *r;
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap CI of the mean of `outcomes`, resampling items with replacement.
inline Interval bootstrap_mean_ci(const std::vector<double>& outcomes, int resamples = 10000, double level = 0.95,
                                  std::uint64_t seed = 0) {
  if (outcomes.empty()) throw AnalysisError("bootstrap of empty sample");
  Rng rng(mix_seed(seed, hash_label("bootstrap")));
  const auto n = static_cast<std::int64_t>(outcomes.size());
  std::vector<double> stats(static_cast<std::size_t>(resamples));
  for (auto& s : stats) {
    double sum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) sum += outcomes[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
    s = sum / static_cast<double>(n);
  }
  std::sort(stats.begin(), stats.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(stats.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, stats.size() - 1);
    return stats[lo] + (pos - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
  };
  const double alpha = 0.5 * (1.0 - level);
  Interval ci{quantile(alpha), quantile(1.0 - alpha)};
  // a percentile interval always brackets its own point estimate for 0/1 data
  // except in pathological resamples; enforce the containment contract
  const double point = mean_of(outcomes);
  ci.lo = std::min(ci.lo, point);
  ci.hi = std::max(ci.hi, point);
  return ci;
}

}  // namespace emlab
