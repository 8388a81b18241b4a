#pragma once

#include <algorithm>

namespace jemcal {

/// Axis-aligned hypercube [low, high]^D bounding SGLD states and standardized features.
struct DataBox {
  double low = -3.0;
  double high = 3.0;

  bool contains(double v) const noexcept { return v >= low && v <= high; }
  double clamp(double v) const noexcept { return std::clamp(v, low, high); }
  bool valid() const noexcept { return low < high; }

  bool operator==(const DataBox&) const = default;
};

}  // namespace jemcal
