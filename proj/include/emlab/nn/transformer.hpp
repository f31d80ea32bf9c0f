#pragma once

// Forward pass, masked cross-entropy and reverse-mode gradients for the
// pre-norm decoder-only transformer in model.hpp.
//
// Rows of a Batch are packed back to back (PAD positions are dropped), so the
// dense layers run as one (tokens x d) matrix product per weight; attention
// runs per row and per head with an explicit causal mask.

#include <Eigen/Dense>
#include <unsupported/Eigen/SpecialFunctions>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "emlab/corpus.hpp"
#include "emlab/nn/model.hpp"

namespace emlab {

/// Read-only view of a parameter vector under a given architecture.
template <typename T>
struct ParamView {
  const ModelConfig& config;
  const ParamLayout& layout;
  const T* data;

  ParamView(const ModelState<T>& m) : config(m.config()), layout(m.layout()), data(m.flat().data()) {}  // NOLINT
  ParamView(const ModelConfig& c, const ParamLayout& l, const T* d) : config(c), layout(l), data(d) {}

  [[nodiscard]] CMatMap<T> mat(int index) const { return tensor_map(data, layout.tensors[static_cast<std::size_t>(index)]); }
  [[nodiscard]] CRowMap<T> row(int index) const { return row_map(data, layout.tensors[static_cast<std::size_t>(index)]); }
};

/// Logits and hidden states for a packed batch.
template <typename T>
struct ForwardTrace {
  std::vector<int> row_start;
  std::vector<int> row_len;
  Mat<T> logits;               // tokens x vocab
  std::vector<Mat<T>> hidden;  // per block output, tokens x d

  [[nodiscard]] int index(int row, int pos) const { return row_start[static_cast<std::size_t>(row)] + pos; }
  [[nodiscard]] int layers() const { return static_cast<int>(hidden.size()); }
};

template <typename T>
struct LossGrad {
  double loss = 0.0;
  int scored = 0;
  Vec<T> grad;
};

namespace detail {

inline constexpr double kLnEps = 1e-5;

template <typename T>
struct LayerNormCache {
  Mat<T> hat;
  Vec<T> rstd;
};

// out = hat * g + b, with row statistics accumulated in double.
template <typename T, typename In>
void layer_norm(const In& x, const CRowMap<T>& g, const CRowMap<T>& b, LayerNormCache<T>& cache, Mat<T>& out) {
  const auto n = x.rows();
  const auto d = x.cols();
  cache.hat.resize(n, d);
  cache.rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mean = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) mean += static_cast<double>(x(i, j));
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double c = static_cast<double>(x(i, j)) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd[i] = static_cast<T>(rstd);
    for (Eigen::Index j = 0; j < d; ++j)
      cache.hat(i, j) = static_cast<T>((static_cast<double>(x(i, j)) - mean) * rstd);
  }
  out = (cache.hat.array().rowwise() * g.array()).rowwise() + b.array();
}

// Accumulates dg, db and returns dx for dout on the normalized output.
template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dout, const LayerNormCache<T>& cache, const CRowMap<T>& g, RowMap<T> dg,
                           RowMap<T> db) {
  dg += (dout.array() * cache.hat.array()).colwise().sum().matrix();
  db += dout.colwise().sum();
  Mat<T> dhat = dout.array().rowwise() * g.array();
  const auto d = static_cast<T>(dout.cols());
  Vec<T> mean_dhat = dhat.rowwise().sum() / d;
  Vec<T> mean_dhat_hat = (dhat.array() * cache.hat.array()).rowwise().sum().matrix() / d;
  Mat<T> dx = dhat;
  dx.colwise() -= mean_dhat;
  dx.array() -= cache.hat.array().colwise() * mean_dhat_hat.array();
  dx.array().colwise() *= cache.rstd.array();
  return dx;
}

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  return (T(0.5) * x.array() * (T(1) + (x.array() * inv_sqrt2).erf())).matrix();
}

template <typename T>
Mat<T> gelu_grad(const Mat<T>& x) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  const T inv_sqrt2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
  return (T(0.5) * (T(1) + (x.array() * inv_sqrt2).erf()) +
          x.array() * inv_sqrt2pi * (T(-0.5) * x.array().square()).exp())
      .matrix();
}

template <typename T>
struct BlockCache {
  Mat<T> x_in;
  LayerNormCache<T> ln1;
  Mat<T> a1;
  Mat<T> qkv;
  std::vector<Mat<T>> probs;  // [row * heads + head], each len x len
  Mat<T> att;
  Mat<T> x_mid;
  LayerNormCache<T> ln2;
  Mat<T> a2;
  Mat<T> fc_pre;
  Mat<T> fc_act;
};

template <typename T>
struct Pass {
  std::vector<int> tokens;  // packed token ids
  std::vector<int> positions;
  std::vector<int> row_start;
  std::vector<int> row_len;
  std::vector<BlockCache<T>> blocks;
  Mat<T> x_out;  // output of the last block
  LayerNormCache<T> lnf;
  Mat<T> hf;
  Mat<T> logits;
  std::vector<Mat<T>> hidden;
};

inline void pack_rows(const Batch& batch, int max_seq_len, std::vector<int>& tokens, std::vector<int>& positions,
                      std::vector<int>& row_start, std::vector<int>& row_len) {
  tokens.clear();
  positions.clear();
  row_start.clear();
  row_len.clear();
  for (int r = 0; r < batch.rows; ++r) {
    const int len = batch.lengths.empty() ? batch.seq_len : batch.lengths[static_cast<std::size_t>(r)];
    if (len > max_seq_len) throw ModelError("sequence too long: " + std::to_string(len));
    row_start.push_back(static_cast<int>(tokens.size()));
    row_len.push_back(len);
    for (int t = 0; t < len; ++t) {
      tokens.push_back(batch.token(r, t));
      positions.push_back(t);
    }
  }
}

template <typename T>
void run_forward(const ParamView<T>& p, const Batch& batch, Pass<T>& pass, bool keep_hidden) {
  const ModelConfig& c = p.config;
  const ParamLayout& lay = p.layout;
  if (batch.seq_len > c.max_seq_len) throw ModelError("sequence too long: " + std::to_string(batch.seq_len));
  pack_rows(batch, c.max_seq_len, pass.tokens, pass.positions, pass.row_start, pass.row_len);
  const int n = static_cast<int>(pass.tokens.size());
  const int d = c.d_model;
  const int hd = c.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  const auto wte = p.mat(lay.wte);
  const auto wpe = p.mat(lay.wpe);
  Mat<T> x(n, d);
  for (int i = 0; i < n; ++i) {
    const int tok = pass.tokens[static_cast<std::size_t>(i)];
    if (tok < 0 || tok >= c.vocab) throw ModelError("token id out of range");
    x.row(i) = wte.row(tok) + wpe.row(pass.positions[static_cast<std::size_t>(i)]);
  }

  pass.blocks.resize(static_cast<std::size_t>(c.layers));
  pass.hidden.clear();
  for (int l = 0; l < c.layers; ++l) {
    const auto& bi = lay.blocks[static_cast<std::size_t>(l)];
    auto& bc = pass.blocks[static_cast<std::size_t>(l)];
    bc.x_in = std::move(x);
    layer_norm<T>(bc.x_in, p.row(bi.ln1_g), p.row(bi.ln1_b), bc.ln1, bc.a1);
    bc.qkv.noalias() = bc.a1 * p.mat(bi.qkv_w);
    bc.qkv.rowwise() += p.row(bi.qkv_b);

    bc.att.setZero(n, d);
    bc.probs.resize(static_cast<std::size_t>(batch.rows * c.heads));
    for (int r = 0; r < batch.rows; ++r) {
      const int s = pass.row_start[static_cast<std::size_t>(r)];
      const int len = pass.row_len[static_cast<std::size_t>(r)];
      for (int h = 0; h < c.heads; ++h) {
        auto q = bc.qkv.block(s, h * hd, len, hd);
        auto k = bc.qkv.block(s, d + h * hd, len, hd);
        auto v = bc.qkv.block(s, 2 * d + h * hd, len, hd);
        Mat<T>& pr = bc.probs[static_cast<std::size_t>(r * c.heads + h)];
        pr.noalias() = (q * k.transpose()) * scale;
        for (int i = 0; i < len; ++i) {
          T mx = pr(i, 0);
          for (int j = 1; j <= i; ++j) mx = std::max(mx, pr(i, j));
          T sum = T(0);
          for (int j = 0; j <= i; ++j) {
            const T e = std::exp(pr(i, j) - mx);
            pr(i, j) = e;
            sum += e;
          }
          const T inv = T(1) / sum;
          for (int j = 0; j <= i; ++j) pr(i, j) *= inv;
          for (int j = i + 1; j < len; ++j) pr(i, j) = T(0);
        }
        bc.att.block(s, h * hd, len, hd).noalias() = pr * v;
      }
    }
    bc.x_mid = bc.x_in;
    bc.x_mid.noalias() += bc.att * p.mat(bi.proj_w);
    bc.x_mid.rowwise() += p.row(bi.proj_b);

    layer_norm<T>(bc.x_mid, p.row(bi.ln2_g), p.row(bi.ln2_b), bc.ln2, bc.a2);
    bc.fc_pre.noalias() = bc.a2 * p.mat(bi.fc_w);
    bc.fc_pre.rowwise() += p.row(bi.fc_b);
    bc.fc_act = gelu(bc.fc_pre);
    x = bc.x_mid;
    x.noalias() += bc.fc_act * p.mat(bi.fc2_w);
    x.rowwise() += p.row(bi.fc2_b);
    if (keep_hidden) pass.hidden.push_back(x);
  }
  pass.x_out = std::move(x);
  layer_norm<T>(pass.x_out, p.row(lay.lnf_g), p.row(lay.lnf_b), pass.lnf, pass.hf);
  pass.logits.noalias() = pass.hf * wte.transpose();
}

// Backward from dlogits (tokens x vocab) into grad (flat, accumulated).
template <typename T>
void run_backward(const ParamView<T>& p, const Batch& batch, Pass<T>& pass, const Mat<T>& dlogits, T* grad) {
  const ModelConfig& c = p.config;
  const ParamLayout& lay = p.layout;
  const int d = c.d_model;
  const int hd = c.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  auto gmat = [&](int idx) { return tensor_map(grad, lay.tensors[static_cast<std::size_t>(idx)]); };
  auto grow = [&](int idx) { return row_map(grad, lay.tensors[static_cast<std::size_t>(idx)]); };

  const auto wte = p.mat(lay.wte);
  gmat(lay.wte).noalias() += dlogits.transpose() * pass.hf;
  Mat<T> dhf = dlogits * wte;
  Mat<T> dx = layer_norm_backward<T>(dhf, pass.lnf, p.row(lay.lnf_g), grow(lay.lnf_g), grow(lay.lnf_b));

  for (int l = c.layers - 1; l >= 0; --l) {
    const auto& bi = lay.blocks[static_cast<std::size_t>(l)];
    auto& bc = pass.blocks[static_cast<std::size_t>(l)];

    gmat(bi.fc2_w).noalias() += bc.fc_act.transpose() * dx;
    grow(bi.fc2_b) += dx.colwise().sum();
    Mat<T> dpre = dx * p.mat(bi.fc2_w).transpose();
    dpre.array() *= gelu_grad(bc.fc_pre).array();
    gmat(bi.fc_w).noalias() += bc.a2.transpose() * dpre;
    grow(bi.fc_b) += dpre.colwise().sum();
    Mat<T> da2 = dpre * p.mat(bi.fc_w).transpose();
    Mat<T> dx_mid = dx + layer_norm_backward<T>(da2, bc.ln2, p.row(bi.ln2_g), grow(bi.ln2_g), grow(bi.ln2_b));

    gmat(bi.proj_w).noalias() += bc.att.transpose() * dx_mid;
    grow(bi.proj_b) += dx_mid.colwise().sum();
    Mat<T> datt = dx_mid * p.mat(bi.proj_w).transpose();

    Mat<T> dqkv = Mat<T>::Zero(datt.rows(), 3 * d);
    for (int r = 0; r < batch.rows; ++r) {
      const int s = pass.row_start[static_cast<std::size_t>(r)];
      const int len = pass.row_len[static_cast<std::size_t>(r)];
      for (int h = 0; h < c.heads; ++h) {
        const Mat<T>& pr = bc.probs[static_cast<std::size_t>(r * c.heads + h)];
        auto q = bc.qkv.block(s, h * hd, len, hd);
        auto k = bc.qkv.block(s, d + h * hd, len, hd);
        auto v = bc.qkv.block(s, 2 * d + h * hd, len, hd);
        auto dout = datt.block(s, h * hd, len, hd);
        Mat<T> dp = dout * v.transpose();
        dqkv.block(s, 2 * d + h * hd, len, hd).noalias() = pr.transpose() * dout;
        Vec<T> rowdot = (dp.array() * pr.array()).rowwise().sum();
        Mat<T> ds = pr.array() * (dp.array().colwise() - rowdot.array());
        ds *= scale;
        dqkv.block(s, h * hd, len, hd).noalias() = ds * k;
        dqkv.block(s, d + h * hd, len, hd).noalias() = ds.transpose() * q;
      }
    }
    gmat(bi.qkv_w).noalias() += bc.a1.transpose() * dqkv;
    grow(bi.qkv_b) += dqkv.colwise().sum();
    Mat<T> da1 = dqkv * p.mat(bi.qkv_w).transpose();
    dx = dx_mid + layer_norm_backward<T>(da1, bc.ln1, p.row(bi.ln1_g), grow(bi.ln1_g), grow(bi.ln1_b));
  }

  auto gwte = gmat(lay.wte);
  auto gwpe = gmat(lay.wpe);
  for (int i = 0; i < static_cast<int>(pass.tokens.size()); ++i) {
    gwte.row(pass.tokens[static_cast<std::size_t>(i)]) += dx.row(i);
    gwpe.row(pass.positions[static_cast<std::size_t>(i)]) += dx.row(i);
  }
}

// Mean masked cross-entropy; fills dlogits when requested.
template <typename T>
double masked_cross_entropy(const Batch& batch, const Pass<T>& pass, Mat<T>* dlogits, int& scored) {
  scored = batch.masked_count();
  if (scored == 0) throw ModelError("batch has no masked answer positions");
  const auto vocab = pass.logits.cols();
  if (dlogits) dlogits->setZero(pass.logits.rows(), vocab);
  double total = 0.0;
  const double inv = 1.0 / scored;
  for (int r = 0; r < batch.rows; ++r) {
    const int s = pass.row_start[static_cast<std::size_t>(r)];
    const int len = pass.row_len[static_cast<std::size_t>(r)];
    for (int t = 0; t + 1 < len; ++t) {
      if (!batch.masked(r, t)) continue;
      const int target = batch.token(r, t + 1);
      const auto row = pass.logits.row(s + t);
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < vocab; ++j) mx = std::max(mx, static_cast<double>(row(j)));
      double sum = 0.0;
      for (Eigen::Index j = 0; j < vocab; ++j) sum += std::exp(static_cast<double>(row(j)) - mx);
      const double lse = mx + std::log(sum);
      total += lse - static_cast<double>(row(target));
      if (dlogits) {
        for (Eigen::Index j = 0; j < vocab; ++j)
          (*dlogits)(s + t, j) = static_cast<T>(std::exp(static_cast<double>(row(j)) - lse) * inv);
        (*dlogits)(s + t, target) -= static_cast<T>(inv);
      }
    }
  }
  return total * inv;
}

}  // namespace detail

template <typename T>
ForwardTrace<T> forward(const ParamView<T>& p, const Batch& batch, bool keep_hidden = true) {
  detail::Pass<T> pass;
  detail::run_forward(p, batch, pass, keep_hidden);
  ForwardTrace<T> tr;
  tr.row_start = std::move(pass.row_start);
  tr.row_len = std::move(pass.row_len);
  tr.logits = std::move(pass.logits);
  tr.hidden = std::move(pass.hidden);
  return tr;
}

template <typename T>
double loss(const ParamView<T>& p, const Batch& batch) {
  detail::Pass<T> pass;
  detail::run_forward(p, batch, pass, false);
  int scored = 0;
  return detail::masked_cross_entropy<T>(batch, pass, nullptr, scored);
}

template <typename T>
LossGrad<T> loss_and_grad(const ParamView<T>& p, const Batch& batch) {
  detail::Pass<T> pass;
  detail::run_forward(p, batch, pass, false);
  LossGrad<T> out;
  Mat<T> dlogits;
  out.loss = detail::masked_cross_entropy<T>(batch, pass, &dlogits, out.scored);
  out.grad = Vec<T>::Zero(p.layout.total);
  detail::run_backward(p, batch, pass, dlogits, out.grad.data());
  return out;
}

/// Row i is the gradient of the loss on the singleton batch {examples[i]}.
template <typename T>
Mat<T> per_sample_grads(const ParamView<T>& p, std::span<const Example> examples) {
  if (examples.empty()) throw ModelError("per-sample gradients need at least one example");
  Mat<T> g(static_cast<Eigen::Index>(examples.size()), p.layout.total);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Batch b = make_batch(examples.subspan(i, 1), p.config.max_seq_len);
    g.row(static_cast<Eigen::Index>(i)) = loss_and_grad(p, b).grad.transpose();
  }
  return g;
}

/// Softmax-normalized distribution for one logits row (double precision).
template <typename Row>
Eigen::VectorXd softmax(const Row& row) {
  Eigen::VectorXd v = row.template cast<double>().transpose();
  v.array() -= v.maxCoeff();
  v = v.array().exp();
  v /= v.sum();
  return v;
}

}  // namespace emlab
