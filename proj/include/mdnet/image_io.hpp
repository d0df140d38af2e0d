#pragma once

#include <cstdint>
#include <filesystem>

#include "mdnet/grid.hpp"
#include "mdnet/io_util.hpp"

namespace mdnet::io {

class ImageError : public IoError {
 public:
  using IoError::IoError;
};

struct RawImage {
  std::size_t channels = 1;  // 1 (gray or palette index) or 3 (RGB)
  std::uint32_t max_value = 255;
  Grid<std::uint32_t> samples[3];
};

// 8/16-bit PGM (P2, P5) or PNG, chosen by file signature.
RawImage read_raw_image(const std::filesystem::path& path);

// Intensities scaled to [0, 1]; RGB is converted with Rec. 601 luma weights.
GrayImage read_gray_image(const std::filesystem::path& path);

// Integer class ids from a single-channel image (palette PNGs yield indices).
SemanticMap read_label_image(const std::filesystem::path& path);

// 8-bit binary PGM, values rounded from [0, 1].
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// Binary PGM holding raw ids (8-bit when every id fits, else 16-bit).
void write_label_pgm(const std::filesystem::path& path, const SemanticMap& labels);

void write_png_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& image);

}  // namespace mdnet::io
