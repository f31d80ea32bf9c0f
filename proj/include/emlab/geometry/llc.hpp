#pragma once

// Local learning coefficient by localized, tempered SGLD around a checkpoint:
//
//   theta <- theta - (eta/2) [beta n grad L_b(theta) + gamma (theta - theta*)] + N(0, eta I)
//
// Elevation at step t is L_b(theta_t) - L_b(theta*) on the same minibatch b.
// After discarding burn-in, raw = mean elevation and lambda_hat = n beta raw.

#include <functional>
#include <span>

#include "emlab/corpus.hpp"
#include "emlab/geometry/spectrum.hpp"
#include "emlab/nn/transformer.hpp"

namespace emlab {

struct SgldConfig {
  int steps = 500;
  double eta = 1e-5;
  double beta = 1.0;
  double gamma = 10000.0;
  int burn_in = 100;
  int batch_size = 64;
  double n = 1000.0;                // effective sample count in the tempered posterior
  double divergence_factor = 1e3;   // abort when elevation exceeds factor x initial loss
  double divergence_floor = 1e-2;   // initial loss floor for the abort rule

  void validate() const {
    if (steps < 1 || burn_in < 0 || burn_in >= steps) throw GeometryError("SGLD needs 0 <= burn_in < steps");
    if (!(eta > 0) || !(beta > 0) || gamma < 0 || !(n > 0)) throw GeometryError("invalid SGLD hyperparameters");
  }
};

struct LlcEstimate {
  double lambda_hat = 0.0;
  double raw_elevation = 0.0;
  double initial_loss = 0.0;
  std::vector<double> trace;  // elevation per step (including burn-in)
  SgldConfig config;
};

/// Loss at theta on the minibatch of SGLD step t; fills grad when non-null.
template <typename T>
using SgldLossFn = std::function<double(const Vec<T>& theta, int step, Vec<T>* grad)>;

template <typename T>
LlcEstimate run_sgld(const SgldLossFn<T>& loss, const Vec<T>& theta_star, const SgldConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, hash_label("sgld")));
  LlcEstimate est;
  est.config = cfg;
  Vec<T> theta = theta_star;
  Vec<T> grad;
  const double drift = cfg.eta / 2.0;
  const double noise_sd = std::sqrt(cfg.eta);
  double sum = 0.0;
  for (int t = 0; t < cfg.steps; ++t) {
    const double lt = loss(theta, t, &grad);
    const double ls = t == 0 ? lt : loss(theta_star, t, nullptr);
    if (t == 0) est.initial_loss = ls;
    const double elev = lt - ls;
    if (!std::isfinite(elev) || !grad.allFinite())
      throw GeometryError("divergent SGLD chain: non-finite loss at step " + std::to_string(t));
    if (elev > cfg.divergence_factor * std::max(est.initial_loss, cfg.divergence_floor))
      throw GeometryError("divergent SGLD chain at step " + std::to_string(t));
    est.trace.push_back(elev);
    if (t >= cfg.burn_in) sum += elev;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double g = cfg.beta * cfg.n * static_cast<double>(grad[i]) +
                       cfg.gamma * static_cast<double>(theta[i] - theta_star[i]);
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - drift * g + noise_sd * rng.normal());
    }
  }
  est.raw_elevation = sum / static_cast<double>(cfg.steps - cfg.burn_in);
  est.lambda_hat = cfg.n * cfg.beta * est.raw_elevation;
  return est;
}

/// Task-specific LLC: fresh on-the-fly minibatches of `spec` each SGLD step.
template <typename T>
LlcEstimate estimate_llc(const ParamView<T>& p, const TaskSpec& spec, const SgldConfig& cfg, std::uint64_t seed) {
  Eigen::Map<const Vec<T>> star(p.data, p.layout.total);
  auto batch_for = [&](int t) {
    Rng rng(mix_seed(seed, hash_label("sgld-data"), static_cast<std::uint64_t>(t)));
    std::vector<Example> ex;
    ex.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) ex.push_back(generate_example(spec, rng));
    return make_batch(ex, p.config.max_seq_len);
  };
  int cached_step = -1;
  Batch cached;
  SgldLossFn<T> fn = [&](const Vec<T>& theta, int t, Vec<T>* grad) {
    if (t != cached_step) {
      cached = batch_for(t);
      cached_step = t;
    }
    const ParamView<T> view(p.config, p.layout, theta.data());
    if (grad) {
      auto lg = loss_and_grad(view, cached);
      *grad = std::move(lg.grad);
      return lg.loss;
    }
    return loss(view, cached);
  };
  return run_sgld<T>(fn, Vec<T>(star), cfg, seed);
}

/// Independent chains (distinct seeds) at one checkpoint.
template <typename T>
std::vector<LlcEstimate> estimate_llc_repeats(const ParamView<T>& p, const TaskSpec& spec, const SgldConfig& cfg,
                                              std::uint64_t seed, int repeats) {
  std::vector<LlcEstimate> out;
  for (int r = 0; r < repeats; ++r) out.push_back(estimate_llc(p, spec, cfg, mix_seed(seed, static_cast<std::uint64_t>(r))));
  return out;
}

/// Population coefficient of variation of lambda_hat across chains.
inline double llc_cv(const std::vector<LlcEstimate>& chains) {
  if (chains.size() < 2) throw GeometryError("CV needs at least 2 chains");
  double mean = 0.0;
  for (const auto& c : chains) mean += c.lambda_hat;
  mean /= static_cast<double>(chains.size());
  double var = 0.0;
  for (const auto& c : chains) var += (c.lambda_hat - mean) * (c.lambda_hat - mean);
  var /= static_cast<double>(chains.size());
  if (mean == 0.0) throw GeometryError("CV undefined for zero mean");
  return std::sqrt(var) / std::abs(mean);
}

}  // namespace emlab
