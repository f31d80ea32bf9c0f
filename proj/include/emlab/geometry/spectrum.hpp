#pragma once

// Spectrum summaries shared by every geometric measure: effective rank
// (exp of the entropy of the sum-normalized spectrum) and the power-law
// decay exponent of a singular-value spectrum.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace emlab {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SpectrumSource { Representation, Fisher, Hessian, GradCov };

inline std::string source_name(SpectrumSource s) {
  switch (s) {
    case SpectrumSource::Representation: return "representation";
    case SpectrumSource::Fisher: return "fisher";
    case SpectrumSource::Hessian: return "hessian";
    case SpectrumSource::GradCov: return "grad_cov";
  }
  return "?";
}

/// exp(-sum p_i log p_i) with p = s / sum(s); zero entries contribute nothing.
inline double effective_rank(const std::vector<double>& spectrum) {
  double total = 0.0;
  for (double v : spectrum) {
    if (!std::isfinite(v)) throw GeometryError("non-finite spectrum value");
    if (v < 0) throw GeometryError("negative spectrum value");
    total += v;
  }
  if (!(total > 0)) throw GeometryError("effective rank of an all-zero spectrum");
  double h = 0.0;
  for (double v : spectrum) {
    if (v <= 0) continue;
    const double p = v / total;
    h -= p * std::log(p);
  }
  return std::exp(h);
}

/// Clamps tiny negatives (>= -1e-8 relative) to 0 and sorts descending.
inline std::vector<double> clean_spectrum(std::vector<double> values) {
  double scale = 0.0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  for (double& v : values) {
    if (!std::isfinite(v)) throw GeometryError("non-finite spectrum value");
    if (v < 0) {
      if (v < -1e-8 * std::max(1.0, scale)) throw GeometryError("spectrum has a significantly negative value");
      v = 0.0;
    }
  }
  std::sort(values.begin(), values.end(), std::greater<>());
  return values;
}

struct SpectrumSummary {
  std::vector<double> values;  // descending, nonnegative (except raw Ritz values, see hessian)
  double effective_rank = 1.0;
  SpectrumSource source = SpectrumSource::Representation;
  bool degenerate = false;  // all-zero input; effective rank set to 1 by convention
};

inline SpectrumSummary summarize_spectrum(std::vector<double> values, SpectrumSource src) {
  SpectrumSummary s;
  s.source = src;
  s.values = clean_spectrum(std::move(values));
  const bool any_positive = std::any_of(s.values.begin(), s.values.end(), [](double v) { return v > 0; });
  if (any_positive) {
    s.effective_rank = effective_rank(s.values);
  } else {
    s.degenerate = true;
    s.effective_rank = 1.0;
  }
  return s;
}

/// Negated least-squares slope of log sigma_i against log i over ranks 1..min(50, #positive).
inline double spectral_decay_exponent(const std::vector<double>& sigma, int max_rank = 50) {
  std::vector<double> pos;
  for (double v : sigma)
    if (v > 0) pos.push_back(v);
  std::sort(pos.begin(), pos.end(), std::greater<>());
  if (pos.size() < 5) throw GeometryError("spectral decay exponent needs at least 5 positive values");
  const std::size_t n = std::min<std::size_t>(pos.size(), static_cast<std::size_t>(max_rank));
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(static_cast<double>(i + 1));
    my += std::log(pos[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(static_cast<double>(i + 1)) - mx;
    sxy += dx * (std::log(pos[i]) - my);
    sxx += dx * dx;
  }
  return -sxy / sxx;
}

/// Singular values of a (rows x cols) matrix via the smaller Gram matrix, in double.
template <typename Derived>
std::vector<double> singular_values(const Eigen::MatrixBase<Derived>& x) {
  const Eigen::MatrixXd m = x.template cast<double>();
  Eigen::MatrixXd gram = m.rows() <= m.cols() ? Eigen::MatrixXd(m * m.transpose()) : Eigen::MatrixXd(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw GeometryError("eigendecomposition failed");
  std::vector<double> out;
  const double top = std::max(0.0, es.eigenvalues().maxCoeff());
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    double ev = es.eigenvalues()[i];
    // eigenvalues below round-off of the Gram matrix are zero singular values
    if (ev < 1e-13 * top) ev = 0.0;
    out.push_back(std::sqrt(ev));
  }
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

}  // namespace emlab
