#pragma once

// Linear probes predicting the gold output token from hidden states at
// answer positions, and the hidden-learning statistics built from them.
//
// Probe: multinomial logistic regression on standardized features (train-split
// statistics), L2 penalty lambda = 1e-4 on the weights, full-batch gradient
// descent with backtracking line search for a fixed 500 iterations, on an
// 80/20 label-stratified split.

#include <map>
#include <optional>
#include <set>
#include <span>

#include "emlab/eval.hpp"
#include "emlab/geometry/representation.hpp"

namespace emlab {

class ProbeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProbeDataset {
  Eigen::MatrixXd features;  // rows x d
  std::vector<int> labels;
  std::string tag;  // task/level/layer/step description
  [[nodiscard]] int rows() const { return static_cast<int>(labels.size()); }
};

inline ProbeDataset probe_dataset_from_states(const AnswerStates& states, int layer) {
  if (states.rows() == 0) throw ProbeError("no answer positions");
  const int l = layer < 0 ? static_cast<int>(states.layers.size()) - 1 : layer;
  if (l >= static_cast<int>(states.layers.size())) throw ProbeError("layer index out of range");
  ProbeDataset d;
  d.features = states.layers[static_cast<std::size_t>(l)].cast<double>();
  d.labels = states.labels;
  return d;
}

template <typename T>
ProbeDataset extract_probe_dataset(const ParamView<T>& p, std::span<const Example> diag, int layer = -1) {
  if (diag.empty()) throw ProbeError("empty diagnostic set");
  return probe_dataset_from_states(collect_answer_states(p, diag), layer);
}

struct ProbeConfig {
  double lambda = 1e-4;
  int iterations = 500;
  double test_fraction = 0.2;
};

struct ProbeResult {
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  double chance = 0.0;  // majority-class frequency on the test split
  std::uint64_t split_seed = 0;
  int iterations = 0;
  int n_rows = 0;
  int n_classes = 0;
  int n_train = 0;
  int n_test = 0;
};

struct StratifiedSplit {
  std::vector<int> train;
  std::vector<int> test;
};

/// Per class, round(fraction * count) rows go to test; singleton classes stay in train.
inline StratifiedSplit stratified_split(const std::vector<int>& labels, double test_fraction, std::uint64_t seed) {
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<int>(i));
  StratifiedSplit s;
  for (auto& [label, idx] : by_class) {
    Rng rng(mix_seed(seed, hash_label("split"), static_cast<std::uint64_t>(label)));
    shuffle(idx, rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) (k < n_test ? s.test : s.train).push_back(idx[k]);
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

namespace detail {

// Mean cross-entropy + (lambda/2)|W|^2 for logits X W + b; fills gradients when asked.
inline double probe_objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y_onehot, const Eigen::MatrixXd& w,
                              const Eigen::RowVectorXd& b, double lambda, Eigen::MatrixXd* gw, Eigen::RowVectorXd* gb) {
  Eigen::MatrixXd z = x * w;
  z.rowwise() += b;
  const Eigen::VectorXd mx = z.rowwise().maxCoeff();
  z.colwise() -= mx;
  Eigen::MatrixXd e = z.array().exp();
  const Eigen::VectorXd sum = e.rowwise().sum();
  const double n = static_cast<double>(x.rows());
  const double ce = -((z.array() * y_onehot.array()).rowwise().sum() - sum.array().log()).sum() / n;
  const double obj = ce + 0.5 * lambda * w.squaredNorm();
  if (gw) {
    e.array().colwise() /= sum.array();
    const Eigen::MatrixXd d = (e - y_onehot) / n;
    *gw = x.transpose() * d + lambda * w;
    *gb = d.colwise().sum();
  }
  return obj;
}

inline double probe_accuracy(const Eigen::MatrixXd& x, const std::vector<int>& y, const Eigen::MatrixXd& w,
                             const Eigen::RowVectorXd& b) {
  if (x.rows() == 0) return std::nan("");
  Eigen::MatrixXd z = x * w;
  z.rowwise() += b;
  int hits = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < z.cols(); ++j)
      if (z(i, j) > z(i, arg)) arg = j;
    hits += static_cast<int>(arg) == y[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hits) / static_cast<double>(z.rows());
}

}  // namespace detail

inline ProbeResult train_probe(const ProbeDataset& data, std::uint64_t split_seed, const ProbeConfig& cfg = {}) {
  if (data.rows() == 0) throw ProbeError("empty probe dataset");
  if (data.features.rows() != data.rows()) throw ProbeError("features and labels differ in length");
  const std::set<int> classes(data.labels.begin(), data.labels.end());
  if (classes.size() < 2) throw ProbeError("probe needs at least two classes");
  std::map<int, int> class_index;
  for (int c : classes) class_index.emplace(c, static_cast<int>(class_index.size()));
  const int k = static_cast<int>(classes.size());

  const auto split = stratified_split(data.labels, cfg.test_fraction, split_seed);
  if (split.test.empty()) throw ProbeError("stratified split left no test rows");
  const Eigen::Index d = data.features.cols();
  auto gather = [&](const std::vector<int>& idx, Eigen::MatrixXd& x, std::vector<int>& y) {
    x.resize(static_cast<Eigen::Index>(idx.size()), d);
    y.clear();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = data.features.row(idx[i]);
      y.push_back(class_index.at(data.labels[static_cast<std::size_t>(idx[i])]));
    }
  };
  Eigen::MatrixXd xtr, xte;
  std::vector<int> ytr, yte;
  gather(split.train, xtr, ytr);
  gather(split.test, xte, yte);

  const Eigen::RowVectorXd mean = xtr.colwise().mean();
  Eigen::RowVectorXd sd = ((xtr.rowwise() - mean).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (!(sd[j] > 1e-12)) sd[j] = 1.0;
  xtr = (xtr.rowwise() - mean).array().rowwise() / sd.array();
  xte = (xte.rowwise() - mean).array().rowwise() / sd.array();

  Eigen::MatrixXd yoh = Eigen::MatrixXd::Zero(xtr.rows(), k);
  for (std::size_t i = 0; i < ytr.size(); ++i) yoh(static_cast<Eigen::Index>(i), ytr[i]) = 1.0;

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, k);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(k);
  Eigen::MatrixXd gw;
  Eigen::RowVectorXd gb;
  double step = 1.0;
  double obj = detail::probe_objective(xtr, yoh, w, b, cfg.lambda, &gw, &gb);
  for (int it = 0; it < cfg.iterations; ++it) {
    const double gnorm2 = gw.squaredNorm() + gb.squaredNorm();
    if (gnorm2 < 1e-20) break;
    step *= 2.0;
    Eigen::MatrixXd w_new;
    Eigen::RowVectorXd b_new;
    double obj_new = 0.0;
    for (int ls = 0; ls < 60; ++ls) {
      w_new = w - step * gw;
      b_new = b - step * gb;
      obj_new = detail::probe_objective(xtr, yoh, w_new, b_new, cfg.lambda, nullptr, nullptr);
      if (obj_new <= obj - 0.5 * step * gnorm2) break;
      step *= 0.5;
    }
    w = std::move(w_new);
    b = std::move(b_new);
    obj = detail::probe_objective(xtr, yoh, w, b, cfg.lambda, &gw, &gb);
  }

  ProbeResult r;
  r.split_seed = split_seed;
  r.iterations = cfg.iterations;
  r.n_rows = data.rows();
  r.n_classes = k;
  r.n_train = static_cast<int>(ytr.size());
  r.n_test = static_cast<int>(yte.size());
  r.train_accuracy = detail::probe_accuracy(xtr, ytr, w, b);
  r.test_accuracy = detail::probe_accuracy(xte, yte, w, b);
  std::map<int, int> counts;
  for (int y : yte) counts[y]++;
  int majority = 0;
  for (const auto& [c, n] : counts) majority = std::max(majority, n);
  r.chance = static_cast<double>(majority) / static_cast<double>(yte.size());
  return r;
}

struct HiddenLearningRecord {
  double init = 0.0;
  double pre_em = 0.0;
  double delta = 0.0;
  std::int64_t pre_em_step = 0;
  std::vector<double> layer_delta;
  std::optional<double> deep_shallow_ratio;  // undefined when the first-layer delta <= 0.01
};

/// Init = probe accuracy at step 0; Pre-Em = at the last checkpoint before emergence.
inline HiddenLearningRecord hidden_learning(const Series& probe, std::int64_t emergence_step,
                                            const std::vector<Series>& per_layer = {}) {
  probe.check_sorted();
  if (probe.size() == 0 || probe.steps.front() != 0) throw ProbeError("probe series must start at step 0");
  if (emergence_step <= probe.steps.front()) throw ProbeError("emergence precedes the first probed checkpoint");
  auto pre = [&](const Series& s) {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s.steps[i] < emergence_step) idx = i;
    return idx;
  };
  HiddenLearningRecord h;
  const auto i = pre(probe);
  h.init = probe.values.front();
  h.pre_em = probe.values[i];
  h.pre_em_step = probe.steps[i];
  h.delta = h.pre_em - h.init;
  for (const auto& s : per_layer) {
    s.check_sorted();
    if (s.size() == 0 || s.steps.front() != 0) throw ProbeError("per-layer probe series must start at step 0");
    h.layer_delta.push_back(s.values[pre(s)] - s.values.front());
  }
  if (h.layer_delta.size() >= 2 && h.layer_delta.front() > 0.01)
    h.deep_shallow_ratio = h.layer_delta.back() / h.layer_delta.front();
  return h;
}

}  // namespace emlab
