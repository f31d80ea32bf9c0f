#pragma once

// Collapse floors (RankMe minima), their scale variation, and the top-down
// layer propagation check.

#include <map>

#include "emlab/analysis/stats.hpp"
#include "emlab/eval.hpp"

namespace emlab {

struct FloorPoint {
  double value = 0.0;
  std::int64_t step = 0;
  double init = 0.0;  // value at the first checkpoint
};

/// Minimum of the series among checkpoints with step <= fraction * last step.
inline FloorPoint collapse_floor(const Series& s, double fraction = 1.0) {
  s.check_sorted();
  if (s.size() == 0) throw AnalysisError("floor of an empty series");
  const double limit = fraction * static_cast<double>(s.steps.back());
  FloorPoint f{s.values.front(), s.steps.front(), s.values.front()};
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (static_cast<double>(s.steps[i]) > limit) break;
    if (s.values[i] < f.value) {
      f.value = s.values[i];
      f.step = s.steps[i];
    }
  }
  if (!(f.value > 0)) throw AnalysisError("collapse floor must be positive");
  return f;
}

struct TaskFloorStats {
  std::vector<double> floors;  // one per size, in input order
  double mean = 0.0;
  double stdev = 0.0;  // population
  double cv = 0.0;
  std::vector<double> init_over_floor;
};

inline TaskFloorStats floor_stats_from_values(const std::vector<double>& floors, const std::vector<double>& inits = {}) {
  if (floors.size() < 2) throw AnalysisError("floor statistics need at least two sizes");
  TaskFloorStats t;
  t.floors = floors;
  for (double f : floors)
    if (!(f > 0)) throw AnalysisError("collapse floor must be positive");
  t.mean = mean_of(floors);
  t.stdev = pstdev(floors);
  t.cv = t.stdev / t.mean;
  for (std::size_t i = 0; i < inits.size() && i < floors.size(); ++i) t.init_over_floor.push_back(inits[i] / floors[i]);
  return t;
}

/// Per task: floors across sizes (one RankMe series per size).
inline std::map<std::string, TaskFloorStats> collapse_floor_stats(
    const std::map<std::string, std::vector<Series>>& per_task, double fraction = 1.0) {
  std::map<std::string, TaskFloorStats> out;
  for (const auto& [task, series] : per_task) {
    std::vector<double> floors, inits;
    for (const auto& s : series) {
      const auto f = collapse_floor(s, fraction);
      floors.push_back(f.value);
      inits.push_back(f.init);
    }
    out[task] = floor_stats_from_values(floors, inits);
  }
  return out;
}

struct TopDownVerdict {
  bool top_down = false;
  double fraction = 0.0;  // share of adjacent layer pairs with floor[l] < floor[l-1]
};

inline TopDownVerdict topdown_check(const std::vector<double>& layer_floors) {
  if (layer_floors.size() < 2) throw AnalysisError("top-down check needs at least two layers");
  int good = 0;
  const int pairs = static_cast<int>(layer_floors.size()) - 1;
  for (std::size_t l = 1; l < layer_floors.size(); ++l) good += layer_floors[l] < layer_floors[l - 1];
  return {good == pairs, static_cast<double>(good) / pairs};
}

}  // namespace emlab
