#pragma once

// State-based prediction: does an early geometric value order tasks the
// same way as their emergence steps?
//
// Pair universe: pairs of tasks at the same level within the same model
// size. A pair is concordant when sign(value_a - value_b) equals
// sign(step_a - step_b). Pairs with a missing value or step, or with tied
// steps or values, are excluded. Cross-class pairs mix an easy and a hard
// task; within-easy / within-hard pairs share a class.
//
// Swap test: task pairs (at one level) whose step ordering reverses between
// at least two sizes. Every size where the pair is ordered contributes one
// trial: a success when that size's value ordering predicts its step ordering.

#include <map>
#include <optional>
#include <string>

#include "emlab/analysis/stats.hpp"
#include "emlab/corpus.hpp"

namespace emlab {

struct ConcordanceItem {
  Task task;
  Level level;
  std::string size;
  std::optional<double> value;
  std::optional<std::int64_t> step;
};

struct ConcordanceCategory {
  int hits = 0;
  int total = 0;
  std::optional<double> rate;  // undefined (not 0) without pairs
  std::optional<Interval> ci;
  std::vector<double> outcomes;
};

struct ConcordanceReport {
  ConcordanceCategory cross_class;
  ConcordanceCategory within_easy;
  ConcordanceCategory within_hard;
  ConcordanceCategory swap;
  int swap_pairs = 0;
};

struct ConcordanceOptions {
  Level pair_level = Level::L3;
  Level swap_level = Level::L2;
  int resamples = 10000;
  std::uint64_t seed = 0;
};

namespace detail {

inline int sign_of(double v) { return (v > 0) - (v < 0); }

inline void finish_category(ConcordanceCategory& c, int resamples, std::uint64_t seed) {
  c.total = static_cast<int>(c.outcomes.size());
  c.hits = 0;
  for (double o : c.outcomes) c.hits += o > 0.5;
  if (c.total == 0) return;
  c.rate = static_cast<double>(c.hits) / c.total;
  c.ci = bootstrap_mean_ci(c.outcomes, resamples, 0.95, seed);
}

}  // namespace detail

inline ConcordanceReport concordance_suite(const std::vector<ConcordanceItem>& items, const ConcordanceOptions& opt = {}) {
  using detail::sign_of;
  ConcordanceReport rep;
  std::vector<std::string> sizes;
  for (const auto& it : items)
    if (std::find(sizes.begin(), sizes.end(), it.size) == sizes.end()) sizes.push_back(it.size);

  auto lookup = [&](Task t, Level l, const std::string& size) -> const ConcordanceItem* {
    for (const auto& it : items)
      if (it.task == t && it.level == l && it.size == size) return &it;
    return nullptr;
  };

  for (const auto& size : sizes) {
    for (std::size_t i = 0; i < kAllTasks.size(); ++i)
      for (std::size_t j = i + 1; j < kAllTasks.size(); ++j) {
        const auto* a = lookup(kAllTasks[i], opt.pair_level, size);
        const auto* b = lookup(kAllTasks[j], opt.pair_level, size);
        if (!a || !b || !a->value || !b->value || !a->step || !b->step) continue;
        const int ss = sign_of(static_cast<double>(*a->step - *b->step));
        const int vs = sign_of(*a->value - *b->value);
        if (ss == 0 || vs == 0) continue;
        const double outcome = ss == vs ? 1.0 : 0.0;
        const bool ha = is_hard(a->task), hb = is_hard(b->task);
        auto& cat = ha != hb ? rep.cross_class : (ha ? rep.within_hard : rep.within_easy);
        cat.outcomes.push_back(outcome);
      }
  }

  for (std::size_t i = 0; i < kAllTasks.size(); ++i)
    for (std::size_t j = i + 1; j < kAllTasks.size(); ++j) {
      std::vector<int> step_signs;
      std::vector<int> value_signs;
      for (const auto& size : sizes) {
        const auto* a = lookup(kAllTasks[i], opt.swap_level, size);
        const auto* b = lookup(kAllTasks[j], opt.swap_level, size);
        if (!a || !b || !a->step || !b->step) {
          step_signs.push_back(0);
          value_signs.push_back(0);
          continue;
        }
        step_signs.push_back(sign_of(static_cast<double>(*a->step - *b->step)));
        value_signs.push_back(a->value && b->value ? sign_of(*a->value - *b->value) : 0);
      }
      const bool up = std::count(step_signs.begin(), step_signs.end(), 1) > 0;
      const bool down = std::count(step_signs.begin(), step_signs.end(), -1) > 0;
      if (!(up && down)) continue;
      ++rep.swap_pairs;
      for (std::size_t s = 0; s < step_signs.size(); ++s) {
        if (step_signs[s] == 0) continue;
        rep.swap.outcomes.push_back(value_signs[s] == step_signs[s] ? 1.0 : 0.0);
      }
    }

  detail::finish_category(rep.cross_class, opt.resamples, mix_seed(opt.seed, 1));
  detail::finish_category(rep.within_easy, opt.resamples, mix_seed(opt.seed, 2));
  detail::finish_category(rep.within_hard, opt.resamples, mix_seed(opt.seed, 3));
  detail::finish_category(rep.swap, opt.resamples, mix_seed(opt.seed, 4));
  return rep;
}

}  // namespace emlab
