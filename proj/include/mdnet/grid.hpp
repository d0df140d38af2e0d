#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdnet {

/// Row-major 2-D array.
template <class T>
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), data(h * w, fill) {}

  T& operator()(std::size_t y, std::size_t x) { return data[y * width + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  std::size_t size() const { return data.size(); }
  bool same_dims(std::size_t h, std::size_t w) const { return height == h && width == w; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using GrayImage = Grid<double>;          // intensities in [0, 1]
using SemanticMap = Grid<std::int32_t>;  // integer class ids

inline std::string dims_string(std::size_t h, std::size_t w) {
  return std::to_string(w) + "x" + std::to_string(h);
}

}  // namespace mdnet
