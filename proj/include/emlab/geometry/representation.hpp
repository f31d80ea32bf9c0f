#pragma once

// Hidden-state extraction at answer positions and task-conditioned RankMe.
//
// One activation row per answer position per example: the hidden state at
// position p whose next (gold) token is an answer content character. Space
// separators and the closing EOS are formatting, not task content, and are
// excluded. The same rows feed the linear probes.

#include <span>
#include <vector>

#include "emlab/corpus.hpp"
#include "emlab/geometry/spectrum.hpp"
#include "emlab/nn/transformer.hpp"

namespace emlab {

struct AnswerPosition {
  int position;  // position whose prediction is scored
  int label;     // gold next token
};

inline std::vector<AnswerPosition> content_answer_positions(const Example& ex) {
  std::vector<AnswerPosition> out;
  for (std::size_t p = 0; p + 1 < ex.tokens.size(); ++p) {
    if (!ex.mask[p]) continue;
    const int target = ex.tokens[p + 1];
    if (target == Vocabulary::kEos || target == Vocabulary::kSpace) continue;
    out.push_back({static_cast<int>(p), target});
  }
  return out;
}

/// Per-layer activation stacks at content answer positions (rows in example order).
struct AnswerStates {
  std::vector<Mat<float>> layers;  // [layer] -> rows x d_model; layers.back() is the final block
  std::vector<int> labels;
  std::vector<int> example_of_row;

  [[nodiscard]] int rows() const { return static_cast<int>(labels.size()); }
};

template <typename T>
AnswerStates collect_answer_states(const ParamView<T>& p, std::span<const Example> examples, int chunk = 256) {
  if (examples.empty()) throw GeometryError("empty diagnostic set");
  AnswerStates out;
  std::vector<std::vector<Eigen::RowVectorXf>> rows(static_cast<std::size_t>(p.config.layers));
  for (std::size_t start = 0; start < examples.size(); start += static_cast<std::size_t>(chunk)) {
    const auto part = examples.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(chunk), examples.size() - start));
    const Batch b = make_batch(part, p.config.max_seq_len);
    const auto tr = forward(p, b, true);
    for (std::size_t r = 0; r < part.size(); ++r) {
      for (const auto& ap : content_answer_positions(part[r])) {
        const int idx = tr.index(static_cast<int>(r), ap.position);
        for (int l = 0; l < p.config.layers; ++l)
          rows[static_cast<std::size_t>(l)].push_back(tr.hidden[static_cast<std::size_t>(l)].row(idx).template cast<float>());
        out.labels.push_back(ap.label);
        out.example_of_row.push_back(static_cast<int>(start + r));
      }
    }
  }
  if (out.labels.empty()) throw GeometryError("no answer positions in diagnostic set");
  for (const auto& layer_rows : rows) {
    Mat<float> m(static_cast<Eigen::Index>(layer_rows.size()), p.config.d_model);
    for (std::size_t i = 0; i < layer_rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = layer_rows[i];
    out.layers.push_back(std::move(m));
  }
  return out;
}

struct RankMeResult {
  double value = 1.0;
  bool degenerate = false;
  std::vector<double> singular_values;
};

/// RankMe of an activation stack; mean-centered by default.
template <typename Derived>
RankMeResult rankme(const Eigen::MatrixBase<Derived>& acts, bool center = true) {
  if (acts.rows() == 0) throw GeometryError("empty activation stack");
  Eigen::MatrixXd x = acts.template cast<double>();
  const double scale = x.norm();
  if (center) x.rowwise() -= x.colwise().mean();
  RankMeResult r;
  r.singular_values = singular_values(x);
  // centering identical rows leaves only round-off; count that as zero
  for (double& v : r.singular_values)
    if (v <= 1e-12 * scale) v = 0.0;
  const auto s = summarize_spectrum(r.singular_values, SpectrumSource::Representation);
  r.value = s.effective_rank;
  r.degenerate = s.degenerate;
  return r;
}

/// Task RankMe at a block output (layer index, or -1 for the final block).
template <typename T>
RankMeResult task_rankme(const ParamView<T>& p, std::span<const Example> diag, int layer = -1, bool center = true) {
  const auto states = collect_answer_states(p, diag);
  const int l = layer < 0 ? p.config.layers - 1 : layer;
  if (l >= p.config.layers) throw GeometryError("layer index out of range");
  return rankme(states.layers[static_cast<std::size_t>(l)], center);
}

}  // namespace emlab
