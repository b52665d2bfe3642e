#pragma once

#include <cstddef>
#include <vector>

namespace hopa {

inline constexpr int kIgnoreLabel = 255;

/// Integer class map of shape (n, h, w).
struct LabelMap {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<int> values;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_, int fill = 0)
      : n(n_), h(h_), w(w_), values(static_cast<std::size_t>(n_) * h_ * w_, fill) {}

  int& at(int b, int y, int x) {
    return values[(static_cast<std::size_t>(b) * h + y) * w + x];
  }
  int at(int b, int y, int x) const {
    return values[(static_cast<std::size_t>(b) * h + y) * w + x];
  }
  bool operator==(const LabelMap&) const = default;
};

}  // namespace hopa
