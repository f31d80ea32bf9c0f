#pragma once

// AdamW training with linear warmup + cosine decay, global-norm clipping,
// a dense checkpoint schedule and block-freeze interventions.
//
// Step convention: "state s" is the parameter vector after s updates (state 0
// is the initialization). Update s+1 maps state s to state s+1 using the
// batch drawn for step s and learning rate lr_at(s+1).

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <vector>

#include "emlab/corpus.hpp"
#include "emlab/nn/checkpoint.hpp"
#include "emlab/nn/model.hpp"
#include "emlab/nn/transformer.hpp"

namespace emlab {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FreezeSpec {
  std::set<int> blocks;
  std::int64_t start = 0;  // states s with start <= s < end receive no update
  std::int64_t end = 0;

  [[nodiscard]] bool active(std::int64_t state_step) const {
    return !blocks.empty() && state_step >= start && state_step < end;
  }
};

struct TrainConfig {
  double peak_lr = 3e-4;
  std::int64_t warmup_steps = 1000;
  std::int64_t max_steps = 100000;  // horizon of the cosine schedule and checkpoint plan
  std::int64_t stop_step = -1;      // last state trained to; -1 = max_steps
  int batch_size = 64;
  double weight_decay = 0.1;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::optional<FreezeSpec> freeze;

  [[nodiscard]] std::int64_t final_step() const { return stop_step < 0 ? max_steps : stop_step; }

  void validate(const ModelConfig& model) const {
    if (max_steps < 1) throw TrainError("max_steps must be >= 1");
    if (final_step() < 1 || final_step() > max_steps) throw TrainError("stop_step must lie in [1, max_steps]");
    if (warmup_steps < 0 || warmup_steps > max_steps) throw TrainError("warmup must lie in [0, max_steps]");
    if (batch_size < 1) throw TrainError("batch size must be >= 1");
    if (!(peak_lr > 0) || grad_clip <= 0 || weight_decay < 0) throw TrainError("invalid optimizer hyperparameters");
    if (freeze) {
      for (int b : freeze->blocks)
        if (b < 0 || b >= model.layers)
          throw TrainError("freeze block " + std::to_string(b) + " out of range for " + std::to_string(model.layers) +
                           " layers");
      if (freeze->start < 0 || freeze->end < freeze->start || freeze->end > max_steps)
        throw TrainError("freeze window must lie inside [0, max_steps]");
    }
  }
};

/// Defaults of the published per-size training setup.
inline TrainConfig default_train_config(const std::string& size) {
  TrainConfig t;
  if (size == "nano" || size == "micro" || size == "small") {
    t.peak_lr = 3e-4;
    t.max_steps = 100000;
  } else if (size == "medium" || size == "large") {
    t.peak_lr = 1e-4;
    t.max_steps = 200000;
  } else {
    throw TrainError("unknown model size: " + size);
  }
  return t;
}

/// Every 100 steps on [0, 10K], every 500 on (10K, 50K], every 2,000 beyond;
/// always includes 0 and max_steps.
inline std::vector<std::int64_t> checkpoint_schedule(std::int64_t max_steps) {
  if (max_steps < 1) throw TrainError("max_steps must be >= 1");
  std::vector<std::int64_t> out;
  for (std::int64_t s = 0; s <= max_steps;) {
    out.push_back(s);
    s += s < 10000 ? 100 : (s < 50000 ? 500 : 2000);
  }
  if (out.back() != max_steps) out.push_back(max_steps);
  return out;
}

/// The schedule of a run that stops early: horizon points up to stop, plus stop.
inline std::vector<std::int64_t> checkpoint_schedule(const TrainConfig& cfg) {
  auto full = checkpoint_schedule(cfg.max_steps);
  std::vector<std::int64_t> out;
  for (auto s : full)
    if (s <= cfg.final_step()) out.push_back(s);
  if (out.back() != cfg.final_step()) out.push_back(cfg.final_step());
  return out;
}

inline double lr_at(std::int64_t step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.max_steps) throw TrainError("step outside schedule");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const double span = static_cast<double>(cfg.max_steps - cfg.warmup_steps);
  if (span <= 0) return cfg.peak_lr;
  const double progress = static_cast<double>(step - cfg.warmup_steps) / span;
  return 0.5 * cfg.peak_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

/// 1 for entries that belong to a frozen block, 0 elsewhere.
inline Eigen::VectorXf block_mask(const ParamLayout& layout, const std::set<int>& blocks) {
  Eigen::VectorXf mask = Eigen::VectorXf::Zero(layout.total);
  for (int b : blocks) {
    const auto [lo, hi] = layout.block_range(b);
    mask.segment(lo, hi - lo).setOnes();
  }
  return mask;
}

/// Zeroes the gradient entries of frozen blocks when the state lies in the window.
template <typename T>
Vec<T> apply_freeze(Vec<T> grad, const ParamLayout& layout, const FreezeSpec& spec, std::int64_t state_step) {
  if (!spec.active(state_step)) return grad;
  for (int b : spec.blocks) {
    const auto [lo, hi] = layout.block_range(b);
    grad.segment(lo, hi - lo).setZero();
  }
  return grad;
}

/// Scales grad in place to global norm <= max_norm; returns the pre-clip norm.
template <typename T>
double clip_grad_norm(Vec<T>& grad, double max_norm) {
  const double norm = std::sqrt(grad.template cast<double>().squaredNorm());
  if (norm > max_norm) grad *= static_cast<T>(max_norm / (norm + 1e-12));
  return norm;
}

/// Decoupled AdamW. Entries with `skip` set are left untouched (parameters and moments).
class AdamW {
 public:
  AdamW(const TrainConfig& cfg, const ParamLayout& layout) : cfg_(cfg) {
    decay_ = Eigen::VectorXf::Zero(layout.total);
    for (const auto& t : layout.tensors)
      if (t.decay) decay_.segment(t.offset, t.size()).setOnes();
  }

  void step(Eigen::VectorXf& params, const Eigen::VectorXf& grad, double lr, OptimizerState& st,
            const Eigen::VectorXf* skip = nullptr) const {
    st.step += 1;
    const auto b1 = static_cast<float>(cfg_.beta1);
    const auto b2 = static_cast<float>(cfg_.beta2);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.step));
    const auto step_size = static_cast<float>(lr / bc1);
    const auto inv_bc2_sqrt = static_cast<float>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<float>(cfg_.adam_eps);
    const auto wd = static_cast<float>(lr * cfg_.weight_decay);

    Eigen::VectorXf m_new = b1 * st.m.array() + (1.0f - b1) * grad.array();
    Eigen::VectorXf v_new = b2 * st.v.array() + (1.0f - b2) * grad.array().square();
    Eigen::VectorXf update =
        step_size * m_new.array() / (v_new.array().sqrt() * inv_bc2_sqrt + eps) + wd * decay_.array() * params.array();
    if (skip) {
      const Eigen::ArrayXf keep = 1.0f - skip->array();
      st.m = (keep * m_new.array() + skip->array() * st.m.array()).matrix();
      st.v = (keep * v_new.array() + skip->array() * st.v.array()).matrix();
      params.array() -= keep * update.array();
    } else {
      st.m = std::move(m_new);
      st.v = std::move(v_new);
      params -= update;
    }
  }

 private:
  TrainConfig cfg_;
  Eigen::VectorXf decay_;
};

struct TrainLogRow {
  std::int64_t step = 0;  // state the loss was measured at
  double loss = 0.0;
  double lr = 0.0;         // learning rate of the update that followed
  double grad_norm = 0.0;  // pre-clip global norm
};

struct TrainSinks {
  std::function<void(std::int64_t, const ModelState<float>&, const OptimizerState&)> checkpoint;
  std::function<void(const TrainLogRow&)> log;
  // called with the offending state before a non-finite loss aborts the run
  std::function<void(std::int64_t, const ModelState<float>&, const OptimizerState&)> diagnostic;
};

/// Batch used for the update out of state `step`; independent of run history,
/// which makes resumed runs bit-identical to uninterrupted ones.
inline Batch training_batch_for_step(const TrainConfig& cfg, std::int64_t step) {
  Rng rng(mix_seed(cfg.seed, hash_label("data"), static_cast<std::uint64_t>(step)));
  return make_training_batch(cfg.batch_size, rng);
}

/// Trains from the given record (or a fresh init) to cfg.final_step().
inline CheckpointRecord train(const ModelConfig& model_config, const TrainConfig& cfg, const TrainSinks& sinks,
                              std::optional<CheckpointRecord> resume = std::nullopt) {
  cfg.validate(model_config);
  CheckpointRecord rec = resume ? std::move(*resume)
                                : CheckpointRecord{init_model<float>(model_config, cfg.seed), 0, OptimizerState{}};
  const auto& rc = rec.model.config();
  if (rc.layers != model_config.layers || rc.d_model != model_config.d_model || rc.heads != model_config.heads ||
      rc.d_ff != model_config.d_ff)
    throw TrainError("resume checkpoint does not match model config");
  if (rec.optimizer.empty()) rec.optimizer = OptimizerState::zeros(rec.model.num_params());

  const auto schedule = checkpoint_schedule(cfg);
  const std::set<std::int64_t> ckpt_steps(schedule.begin(), schedule.end());
  const AdamW opt(cfg, rec.model.layout());
  std::optional<Eigen::VectorXf> frozen;
  if (cfg.freeze) frozen = block_mask(rec.model.layout(), cfg.freeze->blocks);

  if (rec.step == 0 && sinks.checkpoint && ckpt_steps.count(0)) sinks.checkpoint(0, rec.model, rec.optimizer);
  for (std::int64_t s = rec.step; s < cfg.final_step(); ++s) {
    const Batch batch = training_batch_for_step(cfg, s);
    auto lg = loss_and_grad<float>(rec.model, batch);
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
      if (sinks.diagnostic) sinks.diagnostic(s, rec.model, rec.optimizer);
      throw TrainError("non-finite loss at step " + std::to_string(s));
    }
    const bool is_frozen = cfg.freeze && cfg.freeze->active(s);
    if (is_frozen) lg.grad = apply_freeze(std::move(lg.grad), rec.model.layout(), *cfg.freeze, s);
    const double norm = clip_grad_norm(lg.grad, cfg.grad_clip);
    const double lr = lr_at(s + 1, cfg);
    opt.step(rec.model.flat(), lg.grad, lr, rec.optimizer, is_frozen ? &*frozen : nullptr);
    rec.step = s + 1;
    if (sinks.log) sinks.log({s, lg.loss, lr, norm});
    if (sinks.checkpoint && ckpt_steps.count(rec.step)) sinks.checkpoint(rec.step, rec.model, rec.optimizer);
  }
  return rec;
}

/// Trailing moving average of the logged loss ending at `step` (inclusive).
inline double moving_average_loss(const std::vector<TrainLogRow>& log, std::int64_t step, std::int64_t window) {
  double sum = 0.0;
  std::int64_t count = 0;
  for (const auto& row : log)
    if (row.step <= step && row.step > step - window) {
      sum += row.loss;
      ++count;
    }
  if (count == 0) throw TrainError("no log rows in window");
  return sum / static_cast<double>(count);
}

}  // namespace emlab
