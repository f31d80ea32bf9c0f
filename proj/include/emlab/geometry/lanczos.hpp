#pragma once

// Lanczos iteration with full reorthogonalization on an implicit symmetric
// operator, and the top-k Hessian spectrum of the training loss.

#include <functional>

#include "emlab/geometry/spectrum.hpp"
#include "emlab/nn/hvp.hpp"
#include "emlab/rng.hpp"

namespace emlab {

struct LanczosResult {
  std::vector<double> ritz;  // descending; may include negative values
  int iterations = 0;
  bool breakdown = false;  // Krylov space exhausted before k steps
};

/// Runs min(k, n) Lanczos steps of `op` from a seeded Rademacher start vector.
inline LanczosResult lanczos(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& op, Eigen::Index n, int k,
                             std::uint64_t seed) {
  if (k < 1) throw GeometryError("Lanczos needs k >= 1");
  if (k > n) throw GeometryError("Lanczos k exceeds operator dimension");
  Rng rng(mix_seed(seed, hash_label("lanczos")));
  Eigen::VectorXd q(n);
  for (Eigen::Index i = 0; i < n; ++i) q[i] = rng.rademacher();
  q.normalize();

  Eigen::MatrixXd basis(n, k);
  std::vector<double> alpha, beta;
  LanczosResult res;
  for (int j = 0; j < k; ++j) {
    basis.col(j) = q;
    Eigen::VectorXd w = op(q);
    if (!w.allFinite()) throw GeometryError("non-finite operator product in Lanczos");
    const double a = q.dot(w);
    alpha.push_back(a);
    // full reorthogonalization, applied twice for numerical safety
    for (int pass = 0; pass < 2; ++pass) w -= basis.leftCols(j + 1) * (basis.leftCols(j + 1).transpose() * w);
    res.iterations = j + 1;
    const double b = w.norm();
    if (j + 1 == k) break;
    if (b < 1e-12 * std::max(1.0, std::abs(a))) {
      res.breakdown = true;
      break;
    }
    beta.push_back(b);
    q = w / b;
  }
  const int m = res.iterations;
  Eigen::MatrixXd tri = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    tri(i, i) = alpha[static_cast<std::size_t>(i)];
    if (i + 1 < m) tri(i, i + 1) = tri(i + 1, i) = beta[static_cast<std::size_t>(i)];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tri, Eigen::EigenvaluesOnly);
  res.ritz.assign(es.eigenvalues().data(), es.eigenvalues().data() + m);
  std::sort(res.ritz.begin(), res.ritz.end(), std::greater<>());
  return res;
}

struct HessianTopK {
  std::vector<double> ritz;  // descending
  bool breakdown = false;
  // nonnegative part of the spectrum for effective-rank style summaries
  [[nodiscard]] SpectrumSummary summary() const {
    std::vector<double> pos;
    for (double v : ritz) pos.push_back(std::max(0.0, v));
    return summarize_spectrum(pos, SpectrumSource::Hessian);
  }
};

/// Top-k Ritz values of the loss Hessian on `batch` via finite-difference HVPs.
template <typename T>
HessianTopK hessian_topk(const ParamView<T>& p, const Batch& batch, int k = 20, std::uint64_t seed = 0) {
  auto op = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    const Vec<T> vt = v.template cast<T>();
    return hvp(p, batch, vt).template cast<double>();
  };
  const auto r = lanczos(op, p.layout.total, k, seed);
  return {r.ritz, r.breakdown};
}

}  // namespace emlab
