#pragma once

// Frozen published inputs shared by the unit and acceptance suites.

#include <filesystem>

#include "emlab/analysis/concordance.hpp"
#include "emlab/pipeline/csv.hpp"

namespace emlab::fixtures {

inline std::filesystem::path data_dir() { return EMLAB_TEST_DATA_DIR; }

/// Emergence steps per task x level x size with the recorded collapse floors.
inline std::vector<ConcordanceItem> emergence_floor_items() {
  const auto t = read_csv(data_dir() / "emergence_floors.csv");
  std::vector<ConcordanceItem> items;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    ConcordanceItem it{parse_task(t.at(r, "task")), parse_level(t.at(r, "level")), t.at(r, "size"), std::nullopt,
                       std::nullopt};
    if (!t.at(r, "floor").empty()) it.value = t.num(r, "floor");
    if (!t.at(r, "step").empty()) it.step = std::stoll(t.at(r, "step"));
    items.push_back(it);
  }
  return items;
}

}  // namespace emlab::fixtures
