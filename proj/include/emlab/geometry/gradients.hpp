#pragma once

// Gradient-based spectra: empirical Fisher through the N x N Gram matrix of
// per-sample gradients, and the effective rank of the centered gradient
// covariance restricted to a parameter prefix.

#include <span>

#include "emlab/geometry/spectrum.hpp"
#include "emlab/nn/transformer.hpp"

namespace emlab {

/// G * G^T accumulated in double over column blocks (bounded extra memory).
template <typename Derived>
Eigen::MatrixXd gram_rows(const Eigen::MatrixBase<Derived>& g, Eigen::Index cols = -1, bool center = false) {
  const Eigen::Index n = g.rows();
  const Eigen::Index p = cols < 0 ? g.cols() : std::min(cols, g.cols());
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
  constexpr Eigen::Index kBlock = 8192;
  for (Eigen::Index c = 0; c < p; c += kBlock) {
    const Eigen::Index w = std::min(kBlock, p - c);
    Eigen::MatrixXd blk = g.block(0, c, n, w).template cast<double>();
    if (center) blk.rowwise() -= blk.colwise().mean();
    gram.noalias() += blk * blk.transpose();
  }
  return gram;
}

inline std::vector<double> symmetric_eigenvalues(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw GeometryError("eigendecomposition failed");
  return {es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size()};
}

// Eigenvalues below round-off relative to the largest are zero.
inline std::vector<double> floor_roundoff(std::vector<double> ev, double rel = 1e-12) {
  double top = 0.0;
  for (double v : ev) top = std::max(top, v);
  for (double& v : ev)
    if (v < rel * top) v = 0.0;
  return ev;
}

/// Fisher spectrum: eigenvalues of G G^T (equal to the nonzero spectrum of G^T G).
template <typename Derived>
SpectrumSummary fisher_spectrum(const Eigen::MatrixBase<Derived>& grads) {
  if (grads.rows() == 0) throw GeometryError("no per-sample gradients");
  if (!grads.allFinite()) throw GeometryError("non-finite per-sample gradients");
  return summarize_spectrum(floor_roundoff(symmetric_eigenvalues(gram_rows(grads))), SpectrumSource::Fisher);
}

template <typename T>
SpectrumSummary fisher_spectrum(const ParamView<T>& p, std::span<const Example> examples) {
  return fisher_spectrum(per_sample_grads(p, examples));
}

/// Effective rank of the centered Gram of per-sample gradients over the first
/// min(prefix, P) coordinates. Identical gradients give 1.0 (flagged degenerate).
template <typename Derived>
SpectrumSummary grad_cov_spectrum(const Eigen::MatrixBase<Derived>& grads, std::int64_t prefix = 50000) {
  if (grads.rows() < 2) throw GeometryError("gradient covariance needs at least 2 samples");
  if (!grads.allFinite()) throw GeometryError("non-finite per-sample gradients");
  const auto gram = gram_rows(grads, static_cast<Eigen::Index>(prefix), true);
  auto ev = floor_roundoff(symmetric_eigenvalues(gram));
  // eigenvalues at round-off relative to the uncentered energy are zero (identical gradients)
  const double energy = gram_rows(grads, static_cast<Eigen::Index>(prefix)).trace();
  for (double& v : ev)
    if (std::abs(v) <= 1e-12 * energy) v = 0.0;
  return summarize_spectrum(ev, SpectrumSource::GradCov);
}

template <typename Derived>
double grad_cov_rank(const Eigen::MatrixBase<Derived>& grads, std::int64_t prefix = 50000) {
  return grad_cov_spectrum(grads, prefix).effective_rank;
}

template <typename T>
double grad_cov_rank(const ParamView<T>& p, std::span<const Example> batch, std::int64_t prefix = 50000) {
  return grad_cov_rank(per_sample_grads(p, batch), prefix);
}

}  // namespace emlab
