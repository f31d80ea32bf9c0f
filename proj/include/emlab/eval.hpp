#pragma once

// Teacher-forced evaluation of fixed test sets and the two emergence detectors.
//
// Scored positions are the answer mask (answer characters and the closing
// EOS). An item is correct iff the argmax (ties -> lowest id) is the gold
// token at every scored position. Mean log-probability pools all scored
// positions of the set.

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "emlab/corpus.hpp"
#include "emlab/nn/transformer.hpp"

namespace emlab {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SetEval {
  double accuracy = 0.0;
  double mean_logprob = 0.0;
  std::vector<std::uint8_t> correct;  // per item
  std::int64_t scored_tokens = 0;
};

template <typename T>
SetEval evaluate_set(const ParamView<T>& p, std::span<const Example> examples, int chunk = 250) {
  if (examples.empty()) throw EvalError("empty evaluation set");
  SetEval out;
  double logprob_sum = 0.0;
  int correct_items = 0;
  for (std::size_t start = 0; start < examples.size(); start += static_cast<std::size_t>(chunk)) {
    const auto part =
        examples.subspan(start, std::min<std::size_t>(static_cast<std::size_t>(chunk), examples.size() - start));
    const Batch b = make_batch(part, p.config.max_seq_len);
    const auto tr = forward(p, b, false);
    for (int r = 0; r < b.rows; ++r) {
      bool ok = true;
      for (int t = 0; t + 1 < b.lengths[static_cast<std::size_t>(r)]; ++t) {
        if (!b.masked(r, t)) continue;
        const auto row = tr.logits.row(tr.index(r, t));
        const int target = b.token(r, t + 1);
        Eigen::Index arg = 0;
        double mx = static_cast<double>(row(0));
        for (Eigen::Index j = 1; j < row.size(); ++j)
          if (static_cast<double>(row(j)) > mx) {
            mx = static_cast<double>(row(j));
            arg = j;
          }
        double sum = 0.0;
        for (Eigen::Index j = 0; j < row.size(); ++j) sum += std::exp(static_cast<double>(row(j)) - mx);
        logprob_sum += static_cast<double>(row(target)) - mx - std::log(sum);
        ++out.scored_tokens;
        ok = ok && arg == target;
      }
      out.correct.push_back(ok ? 1 : 0);
      correct_items += ok;
    }
  }
  out.accuracy = static_cast<double>(correct_items) / static_cast<double>(examples.size());
  out.mean_logprob = logprob_sum / static_cast<double>(out.scored_tokens);
  return out;
}

struct EvalRecord {
  std::int64_t step = 0;
  std::map<std::string, SetEval> sets;  // keyed by TASK_Lk
};

/// Evaluates every provided fixed set at one checkpoint.
template <typename T>
EvalRecord evaluate_checkpoint(const ParamView<T>& p, std::int64_t step,
                               const std::map<std::string, std::vector<Example>>& test_sets) {
  EvalRecord rec;
  rec.step = step;
  for (const auto& [name, set] : test_sets) rec.sets[name] = evaluate_set(p, std::span<const Example>(set));
  return rec;
}

/// (step, value) pairs sorted by step.
struct Series {
  std::vector<std::int64_t> steps;
  std::vector<double> values;

  [[nodiscard]] std::size_t size() const { return steps.size(); }
  void push(std::int64_t s, double v) {
    steps.push_back(s);
    values.push_back(v);
  }
  void check_sorted() const {
    if (steps.size() != values.size()) throw EvalError("series steps and values differ in length");
    for (std::size_t i = 1; i < steps.size(); ++i)
      if (steps[i] <= steps[i - 1]) throw EvalError("series must be strictly increasing in step");
  }
};

enum class Detector { Accuracy, Logprob };
inline std::string detector_name(Detector d) { return d == Detector::Accuracy ? "accuracy" : "logprob"; }

/// First checkpoint step s with value >= threshold at s and the next window-1 checkpoints.
inline std::optional<std::int64_t> detect_emergence_accuracy(const Series& s, double threshold = 0.5, int window = 3) {
  s.check_sorted();
  if (window < 1) throw EvalError("window must be >= 1");
  if (s.size() < static_cast<std::size_t>(window)) throw EvalError("fewer checkpoints than the sustained window");
  int run = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    run = s.values[i] >= threshold ? run + 1 : 0;
    if (run == window) return s.steps[i + 1 - static_cast<std::size_t>(window)];
  }
  return std::nullopt;
}

/// First step where the value exceeds (initial + final)/2 for >= window consecutive checkpoints.
inline std::optional<std::int64_t> detect_emergence_logprob(const Series& s, int window = 3) {
  s.check_sorted();
  if (s.size() < 2) throw EvalError("log-prob emergence needs at least the first and last checkpoints");
  if (s.size() < static_cast<std::size_t>(window)) throw EvalError("fewer checkpoints than the sustained window");
  const double first = s.values.front();
  const double last = s.values.back();
  if (first == last) return std::nullopt;
  const double mid = 0.5 * (first + last);
  int run = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    run = s.values[i] > mid ? run + 1 : 0;
    if (run == window) return s.steps[i + 1 - static_cast<std::size_t>(window)];
  }
  return std::nullopt;
}

struct Divergence {
  std::optional<double> ratio;
  bool learning_without_accuracy = false;  // log-prob emerged, accuracy never did
};

inline Divergence divergence_ratio(std::optional<std::int64_t> accuracy_step, std::optional<std::int64_t> logprob_step) {
  Divergence d;
  if (logprob_step && *logprob_step == 0) throw EvalError("log-prob emergence at step 0 gives an undefined ratio");
  if (accuracy_step && logprob_step)
    d.ratio = static_cast<double>(*accuracy_step) / static_cast<double>(*logprob_step);
  else if (!accuracy_step && logprob_step)
    d.learning_without_accuracy = true;
  return d;
}

struct SensitivityCell {
  double threshold;
  int window;
  int events = 0;
  std::map<std::string, std::optional<std::int64_t>> steps;  // per series key
};

/// Accuracy-detector events for every (threshold, window) pair.
inline std::vector<SensitivityCell> threshold_sensitivity(const std::map<std::string, Series>& accuracy,
                                                          const std::vector<double>& thresholds,
                                                          const std::vector<int>& windows) {
  std::vector<SensitivityCell> out;
  for (double th : thresholds)
    for (int w : windows) {
      SensitivityCell c{th, w, 0, {}};
      for (const auto& [key, s] : accuracy) {
        const auto e = detect_emergence_accuracy(s, th, w);
        c.steps[key] = e;
        c.events += e.has_value();
      }
      out.push_back(std::move(c));
    }
  return out;
}

}  // namespace emlab
