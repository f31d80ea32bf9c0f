#pragma once

// Decoder-only transformer configuration, parameter layout and state.
//
// All parameters live in one contiguous flat vector. Structured access goes
// through Eigen::Map views into that vector, so writes through either view
// are visible in the other. Flat ordering:
//
//   wte [V, d]            token embedding, also the (tied) output head
//   wpe [T, d]            learned positions
//   per block i = 0..L-1:
//     h{i}.attn.qkv.w [d, 3d]   h{i}.attn.qkv.b [3d]
//     h{i}.attn.proj.w [d, d]   h{i}.attn.proj.b [d]
//     h{i}.ffn.fc.w [d, ff]     h{i}.ffn.fc.b [ff]
//     h{i}.ffn.proj.w [ff, d]   h{i}.ffn.proj.b [d]
//     h{i}.ln1.g, h{i}.ln1.b, h{i}.ln2.g, h{i}.ln2.b   [d each]
//   lnf.g, lnf.b [d]
//
// Weight matrices are stored input-major (x * W), row-major.

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "emlab/corpus.hpp"
#include "emlab/rng.hpp"

namespace emlab {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::string name = "nano";
  int layers = 2;
  int d_model = 128;
  int heads = 4;
  int d_ff = 512;
  int vocab = Vocabulary::kSize;
  int max_seq_len = kMaxSeqLen;

  [[nodiscard]] int head_dim() const { return d_model / heads; }

  void validate() const {
    if (layers < 1 || d_model < 1 || heads < 1 || d_ff < 1 || vocab < 1 || max_seq_len < 1)
      throw ModelError("model dimensions must be positive");
    if (d_model % heads != 0) throw ModelError("d_model must be divisible by heads");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// The five named sizes.
inline ModelConfig named_config(const std::string& name) {
  ModelConfig c;
  c.name = name;
  if (name == "nano") {
    c.layers = 2, c.d_model = 128, c.heads = 4, c.d_ff = 512;
  } else if (name == "micro") {
    c.layers = 4, c.d_model = 192, c.heads = 6, c.d_ff = 768;
  } else if (name == "small") {
    c.layers = 6, c.d_model = 320, c.heads = 8, c.d_ff = 1280;
  } else if (name == "medium") {
    c.layers = 8, c.d_model = 512, c.heads = 8, c.d_ff = 2048;
  } else if (name == "large") {
    c.layers = 12, c.d_model = 768, c.heads = 12, c.d_ff = 3072;
  } else {
    throw ModelError("unknown model size: " + name);
  }
  return c;
}

enum class ParamFamily { Embedding, Attention, Ffn, Norm };

struct TensorInfo {
  std::string name;
  int rows = 0;  // rank-1 tensors have rows == 1
  int cols = 0;
  int rank = 2;
  std::int64_t offset = 0;
  ParamFamily family = ParamFamily::Embedding;
  int block = -1;  // -1 for non-block tensors
  bool decay = false;

  [[nodiscard]] std::int64_t size() const { return static_cast<std::int64_t>(rows) * cols; }
};

/// Offsets of every tensor in the flat parameter vector.
struct ParamLayout {
  std::vector<TensorInfo> tensors;
  std::int64_t total = 0;

  struct BlockIndex {
    int qkv_w, qkv_b, proj_w, proj_b, fc_w, fc_b, fc2_w, fc2_b, ln1_g, ln1_b, ln2_g, ln2_b;
  };
  int wte = 0, wpe = 1, lnf_g = 0, lnf_b = 0;
  std::vector<BlockIndex> blocks;

  explicit ParamLayout(const ModelConfig& c) {
    c.validate();
    const int d = c.d_model;
    auto add = [&](std::string name, int rows, int cols, int rank, ParamFamily fam, int block) {
      TensorInfo t;
      t.name = std::move(name);
      t.rows = rows;
      t.cols = cols;
      t.rank = rank;
      t.offset = total;
      t.family = fam;
      t.block = block;
      t.decay = rank == 2;
      total += t.size();
      tensors.push_back(std::move(t));
      return static_cast<int>(tensors.size()) - 1;
    };
    wte = add("wte", c.vocab, d, 2, ParamFamily::Embedding, -1);
    wpe = add("wpe", c.max_seq_len, d, 2, ParamFamily::Embedding, -1);
    for (int i = 0; i < c.layers; ++i) {
      const std::string p = "h" + std::to_string(i) + ".";
      BlockIndex b{};
      b.qkv_w = add(p + "attn.qkv.w", d, 3 * d, 2, ParamFamily::Attention, i);
      b.qkv_b = add(p + "attn.qkv.b", 1, 3 * d, 1, ParamFamily::Attention, i);
      b.proj_w = add(p + "attn.proj.w", d, d, 2, ParamFamily::Attention, i);
      b.proj_b = add(p + "attn.proj.b", 1, d, 1, ParamFamily::Attention, i);
      b.fc_w = add(p + "ffn.fc.w", d, c.d_ff, 2, ParamFamily::Ffn, i);
      b.fc_b = add(p + "ffn.fc.b", 1, c.d_ff, 1, ParamFamily::Ffn, i);
      b.fc2_w = add(p + "ffn.proj.w", c.d_ff, d, 2, ParamFamily::Ffn, i);
      b.fc2_b = add(p + "ffn.proj.b", 1, d, 1, ParamFamily::Ffn, i);
      b.ln1_g = add(p + "ln1.g", 1, d, 1, ParamFamily::Norm, i);
      b.ln1_b = add(p + "ln1.b", 1, d, 1, ParamFamily::Norm, i);
      b.ln2_g = add(p + "ln2.g", 1, d, 1, ParamFamily::Norm, i);
      b.ln2_b = add(p + "ln2.b", 1, d, 1, ParamFamily::Norm, i);
      blocks.push_back(b);
    }
    lnf_g = add("lnf.g", 1, d, 1, ParamFamily::Norm, -1);
    lnf_b = add("lnf.b", 1, d, 1, ParamFamily::Norm, -1);
  }

  /// [begin, end) flat range of block i.
  [[nodiscard]] std::pair<std::int64_t, std::int64_t> block_range(int i) const {
    const auto& b = blocks.at(static_cast<std::size_t>(i));
    return {tensors[static_cast<std::size_t>(b.qkv_w)].offset,
            tensors[static_cast<std::size_t>(b.ln2_b)].offset + tensors[static_cast<std::size_t>(b.ln2_b)].size()};
  }
};

template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;
template <typename T>
using RowMap = Eigen::Map<RowVec<T>>;
template <typename T>
using CRowMap = Eigen::Map<const RowVec<T>>;

template <typename T>
MatMap<T> tensor_map(T* base, const TensorInfo& t) {
  return MatMap<T>(base + t.offset, t.rows, t.cols);
}
template <typename T>
CMatMap<T> tensor_map(const T* base, const TensorInfo& t) {
  return CMatMap<T>(base + t.offset, t.rows, t.cols);
}
template <typename T>
RowMap<T> row_map(T* base, const TensorInfo& t) {
  return RowMap<T>(base + t.offset, t.cols);
}
template <typename T>
CRowMap<T> row_map(const T* base, const TensorInfo& t) {
  return CRowMap<T>(base + t.offset, t.cols);
}

/// Parameters of one model plus its architecture.
template <typename T>
class ModelState {
 public:
  using Scalar = T;

  explicit ModelState(ModelConfig config) : config_(std::move(config)), layout_(config_) {
    params_ = Vec<T>::Zero(layout_.total);
  }

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] const ParamLayout& layout() const { return layout_; }
  [[nodiscard]] std::int64_t num_params() const { return layout_.total; }

  Vec<T>& flat() { return params_; }
  [[nodiscard]] const Vec<T>& flat() const { return params_; }

  MatMap<T> tensor(int index) { return tensor_map(params_.data(), info(index)); }
  [[nodiscard]] CMatMap<T> tensor(int index) const { return tensor_map(params_.data(), info(index)); }
  [[nodiscard]] const TensorInfo& info(int index) const { return layout_.tensors.at(static_cast<std::size_t>(index)); }

  MatMap<T> tensor(const std::string& name) { return tensor(find(name)); }
  [[nodiscard]] int find(const std::string& name) const {
    for (std::size_t i = 0; i < layout_.tensors.size(); ++i)
      if (layout_.tensors[i].name == name) return static_cast<int>(i);
    throw ModelError("no tensor named " + name);
  }

  /// The output head is the same storage as the token embedding.
  MatMap<T> output_head() { return tensor(layout_.wte); }

  template <typename U>
  [[nodiscard]] ModelState<U> cast() const {
    ModelState<U> out(config_);
    out.flat() = params_.template cast<U>();
    return out;
  }

 private:
  ModelConfig config_;
  ParamLayout layout_;
  Vec<T> params_;
};

/// Parameter count excluding the tied output head (which shares wte).
inline std::int64_t parameter_count(const ModelConfig& c) { return ParamLayout(c).total; }

/// N(0, 0.02) weights, zero biases, unit/zero layer-norm scale/shift.
template <typename T = float>
ModelState<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState<T> m(config);
  Rng rng(mix_seed(seed, hash_label("init")));
  auto& p = m.flat();
  for (const auto& t : m.layout().tensors) {
    const bool is_gain = t.name.ends_with(".g");
    for (std::int64_t k = 0; k < t.size(); ++k) {
      T v = T(0);
      if (t.rank == 2) v = static_cast<T>(0.02 * rng.normal());
      else if (is_gain) v = T(1);
      p[t.offset + k] = v;
    }
  }
  return m;
}

}  // namespace emlab
