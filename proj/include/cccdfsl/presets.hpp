#ifndef CCCDFSL_PRESETS_HPP
#define CCCDFSL_PRESETS_HPP

#include <string_view>

// Per-dataset loss-weight presets from the grid search; selectable on the
// CLI via --dataset.

namespace cccdfsl {

struct DatasetPreset {
  std::string_view name;
  double lambda1;
  double lambda2;
};

inline constexpr DatasetPreset kDatasetPresets[] = {
    {"chestx", 3.0, 0.5},
    {"isic", 3.0, 2.0},
    {"eurosat", 1.5, 0.2},
    {"cropdiseases", 1.0, 1.5},
};

inline const DatasetPreset* find_preset(std::string_view name) {
  for (const auto& p : kDatasetPresets)
    if (p.name == name) return &p;
  return nullptr;
}

} // namespace cccdfsl

#endif
