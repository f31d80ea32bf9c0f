#pragma once

// Hessian-vector products by central differences of the gradient:
//   Hv ~ [grad(theta + eps u) - grad(theta - eps u)] / (2 eps) * |v|,  u = v / |v|
// with eps = 1e-3 * (1 + |theta|_inf) in single precision. Double precision
// tolerates a smaller step, 1e-5 * (1 + |theta|_inf), before round-off dominates.

#include <cmath>
#include <type_traits>

#include "emlab/nn/transformer.hpp"

namespace emlab {

template <typename T = float>
double hvp_step_size(double theta_inf_norm) {
  return (std::is_same_v<T, double> ? 1e-5 : 1e-3) * (1.0 + theta_inf_norm);
}

/// Generic finite-difference HVP over any gradient function theta -> grad.
template <typename T, typename GradFn>
Vec<T> fd_hvp(GradFn&& grad, const Vec<T>& theta, const Vec<T>& v, double eps) {
  if (v.size() != theta.size()) throw ModelError("direction has wrong length");
  const double norm = std::sqrt(v.template cast<double>().squaredNorm());
  if (!(norm > 0)) throw ModelError("HVP direction must be nonzero");
  const Vec<T> u = (v.template cast<double>() / norm).template cast<T>();
  Vec<T> plus = theta + static_cast<T>(eps) * u;
  Vec<T> minus = theta - static_cast<T>(eps) * u;
  const Vec<T> gp = grad(plus);
  const Vec<T> gm = grad(minus);
  Vec<T> out = ((gp - gm).template cast<double>() * (norm / (2.0 * eps))).template cast<T>();
  if (!out.allFinite()) throw ModelError("non-finite Hessian-vector product");
  return out;
}

/// Model HVP of the masked loss on `batch`.
template <typename T>
Vec<T> hvp(const ParamView<T>& p, const Batch& batch, const Vec<T>& v) {
  Eigen::Map<const Vec<T>> theta(p.data, p.layout.total);
  const double eps = hvp_step_size<T>(static_cast<double>(theta.cwiseAbs().maxCoeff()));
  auto grad = [&](const Vec<T>& th) {
    return loss_and_grad(ParamView<T>(p.config, p.layout, th.data()), batch).grad;
  };
  return fd_hvp<T>(grad, Vec<T>(theta), v, eps);
}

}  // namespace emlab
