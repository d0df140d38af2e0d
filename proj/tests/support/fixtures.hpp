#pragma once

#include <array>
#include <set>
#include <vector>

#include "mdnet/grid.hpp"
#include "mdnet/metrics.hpp"
#include "mdnet/motion.hpp"
#include "mdnet/random.hpp"

namespace testing {

// IoU by explicit set intersection/union of cell indices, one class at a time.
// Cells with Ignore truth are left out of both sets.
inline std::array<double, mdnet::kNumMotionClasses> brute_force_iou(
    const mdnet::MotionLabelGrid& pred, const mdnet::MotionLabelGrid& truth,
    std::array<bool, mdnet::kNumMotionClasses>* defined = nullptr) {
  std::array<double, mdnet::kNumMotionClasses> out{};
  for (std::size_t j = 0; j < mdnet::kNumMotionClasses; ++j) {
    std::set<std::size_t> p, t;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth.data[i] == mdnet::MotionAttribute::Ignore) continue;
      if (mdnet::class_index(pred.data[i]) == j) p.insert(i);
      if (mdnet::class_index(truth.data[i]) == j) t.insert(i);
    }
    std::set<std::size_t> inter, uni = p;
    for (auto i : t) {
      if (p.count(i)) inter.insert(i);
      uni.insert(i);
    }
    if (defined) (*defined)[j] = !uni.empty();
    out[j] = uni.empty() ? 0.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
  }
  return out;
}

inline mdnet::MotionLabelGrid random_grid(mdnet::Rng& rng, std::size_t h, std::size_t w,
                                          bool with_ignore) {
  mdnet::MotionLabelGrid g(h, w);
  for (auto& v : g.data) {
    const auto k = rng.below(with_ignore ? 4 : 3);
    v = k == 3 ? mdnet::MotionAttribute::Ignore : mdnet::kMotionClasses[k];
  }
  return g;
}

inline mdnet::MotionLabelGrid grid_from_letters(std::initializer_list<const char*> rows) {
  std::vector<std::string> r(rows.begin(), rows.end());
  mdnet::MotionLabelGrid g(r.size(), r.front().size());
  for (std::size_t y = 0; y < r.size(); ++y) {
    for (std::size_t x = 0; x < g.width; ++x) g(y, x) = *mdnet::attribute_from_letter(r[y][x]);
  }
  return g;
}

// Bright axis-aligned square on a dark background. The square covers pixels
// [x0, x0+side) x [y0, y0+side); its geometric corners sit half a pixel
// outside the corner pixel centres.
struct SquareFixture {
  mdnet::GrayImage image;
  std::vector<std::array<double, 2>> corners;  // (x, y) in pixel-centre coordinates
};

inline SquareFixture square_fixture(std::size_t size = 64, std::size_t x0 = 20,
                                    std::size_t y0 = 18, std::size_t side = 24) {
  SquareFixture f;
  f.image = mdnet::GrayImage(size, size, 0.1);
  for (std::size_t y = y0; y < y0 + side; ++y) {
    for (std::size_t x = x0; x < x0 + side; ++x) f.image(y, x) = 0.9;
  }
  const double lo_x = static_cast<double>(x0) - 0.5, hi_x = static_cast<double>(x0 + side) - 0.5;
  const double lo_y = static_cast<double>(y0) - 0.5, hi_y = static_cast<double>(y0 + side) - 0.5;
  f.corners = {{lo_x, lo_y}, {hi_x, lo_y}, {lo_x, hi_y}, {hi_x, hi_y}};
  return f;
}

}  // namespace testing
