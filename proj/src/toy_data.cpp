#include "mdnet/toy_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "mdnet/image_io.hpp"
#include "mdnet/io_util.hpp"
#include "mdnet/random.hpp"

namespace mdnet::data {

namespace {

// Two Cityscapes ids per attribute: sky/vegetation, person/car, building/road.
constexpr std::array<std::array<std::int32_t, 2>, kNumMotionClasses> kToyIds = {{
    {23, 21},
    {24, 26},
    {11, 7},
}};

double texture(std::size_t cls, std::size_t y, std::size_t x, std::size_t size) {
  switch (cls) {
    case 0:  // smooth, bright
      return 0.75 + 0.15 * static_cast<double>(y + x) / static_cast<double>(2 * size);
    case 1:  // 4-pixel checkerboard
      return ((y / 4 + x / 4) % 2 == 0) ? 0.15 : 0.6;
    default:  // 4-pixel horizontal stripes
      return (y / 4) % 2 == 0 ? 0.3 : 0.55;
  }
}

}  // namespace

ToyDataset make_toy_dataset(const ToyOptions& options) {
  if (options.count == 0 || options.block == 0 || options.block % kCellSize != 0 ||
      options.size % options.block != 0) {
    throw DatasetError("toy dataset: size must be a multiple of block, block a multiple of 8");
  }
  const std::size_t blocks_per_side = options.size / options.block;
  const std::size_t blocks = blocks_per_side * blocks_per_side;
  if (blocks < kNumMotionClasses) throw DatasetError("toy dataset: too few blocks for 3 classes");

  Rng rng(options.seed);
  ToyDataset toy;
  for (std::size_t n = 0; n < options.count; ++n) {
    std::vector<std::size_t> classes(blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
      classes[b] = b < kNumMotionClasses ? b : rng.below(kNumMotionClasses);
    }
    rng.shuffle(classes);

    GrayImage image(options.size, options.size);
    SemanticMap labels(options.size, options.size);
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t by = b / blocks_per_side * options.block;
      const std::size_t bx = b % blocks_per_side * options.block;
      const std::int32_t id = kToyIds[classes[b]][rng.below(2)];
      for (std::size_t y = by; y < by + options.block; ++y) {
        for (std::size_t x = bx; x < bx + options.block; ++x) {
          const double v = texture(classes[b], y, x, options.size) + options.noise * rng.normal();
          image(y, x) = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
          labels(y, x) = id;
        }
      }
    }
    toy.images.push_back(std::move(image));
    toy.labels.push_back(std::move(labels));
  }
  return toy;
}

std::vector<Sample> toy_samples(const ToyDataset& toy) {
  const auto mapping = LabelMapping::defaults();
  std::vector<Sample> out;
  for (std::size_t i = 0; i < toy.images.size(); ++i) {
    out.push_back(make_sample(toy.images[i], toy.labels[i], Vocabulary::cityscapes(), mapping));
    out.back().source = "toy:" + std::to_string(i);
  }
  return out;
}

std::filesystem::path write_toy_dataset(const ToyDataset& toy, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string manifest;
  for (std::size_t i = 0; i < toy.images.size(); ++i) {
    const std::string image_name = "image_" + std::to_string(i) + ".pgm";
    const std::string label_name = "label_" + std::to_string(i) + ".pgm";
    io::write_pgm(dir / image_name, toy.images[i]);
    io::write_label_pgm(dir / label_name, toy.labels[i]);
    manifest += image_name + "\t" + label_name + "\n";
  }
  const auto path = dir / "manifest.txt";
  write_file_atomic(path, manifest);
  return path;
}

}  // namespace mdnet::data
