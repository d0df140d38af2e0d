#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mdnet/dataset.hpp"

namespace mdnet::data {

// Small seeded image/label set for smoke runs and the overfit check. Each
// image is tiled with square blocks; every block carries one semantic class
// whose motion attribute determines its texture (smooth bright for unstable,
// checkerboard for moving, stripes for static).
struct ToyOptions {
  std::size_t count = 4;
  std::size_t size = 64;
  std::size_t block = 16;  // multiple of 8 so every coarse cell is pure
  double noise = 0.03;
  std::uint64_t seed = 7;
};

struct ToyDataset {
  std::vector<GrayImage> images;  // quantized to 8 bits, so PGM round trips are exact
  std::vector<SemanticMap> labels;
};

ToyDataset make_toy_dataset(const ToyOptions& options = {});

std::vector<Sample> toy_samples(const ToyDataset& toy);

// Writes image_<i>.pgm, label_<i>.pgm and manifest.txt into `dir`; returns the
// manifest path.
std::filesystem::path write_toy_dataset(const ToyDataset& toy, const std::filesystem::path& dir);

}  // namespace mdnet::data
