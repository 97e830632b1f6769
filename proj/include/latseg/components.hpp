#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "latseg/image.hpp"

namespace latseg {

struct PixelCoord {
  std::size_t y, x;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

struct Component {
  std::vector<PixelCoord> pixels;  // discovery order; pixels.front() is the row-major smallest
  std::size_t size() const noexcept { return pixels.size(); }
};

// 4-connected foreground components, largest first. Equal sizes keep
// row-major order of their first pixel.
inline std::vector<Component> connected_components(const Mask& mask) {
  const std::size_t h = mask.height();
  const std::size_t w = mask.width();
  std::vector<Component> comps;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> stack;

  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || seen[start]) continue;
    Component comp;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const std::size_t y = i / w;
      const std::size_t x = i % w;
      comp.pixels.push_back({y, x});
      auto visit = [&](std::size_t j) {
        if (mask[j] && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      };
      if (y > 0) visit(i - w);
      if (y + 1 < h) visit(i + w);
      if (x > 0) visit(i - 1);
      if (x + 1 < w) visit(i + 1);
    }
    comps.push_back(std::move(comp));
  }

  std::stable_sort(comps.begin(), comps.end(),
                   [](const Component& a, const Component& b) { return a.size() > b.size(); });
  return comps;
}

}  // namespace latseg
