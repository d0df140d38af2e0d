#include "mdnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace mdnet::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

class PgmParser {
 public:
  PgmParser(const std::string& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  RawImage parse() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || (bytes_[1] != '2' && bytes_[1] != '5')) {
      throw ImageError(path_.string() + ": not a P2/P5 PGM file");
    }
    const bool binary = bytes_[1] == '5';
    pos_ = 2;
    const auto width = next_int("width");
    const auto height = next_int("height");
    const auto maxval = next_int("maxval");
    if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
      throw ImageError(path_.string() + ": invalid PGM header");
    }
    RawImage img;
    img.max_value = static_cast<std::uint32_t>(maxval);
    img.samples[0] = Grid<std::uint32_t>(height, width);
    auto& px = img.samples[0].data;
    if (binary) {
      ++pos_;  // single whitespace after maxval
      const std::size_t bps = maxval < 256 ? 1 : 2;
      if (bytes_.size() < pos_ + px.size() * bps) {
        throw ImageError(path_.string() + ": PGM pixel data truncated");
      }
      for (std::size_t i = 0; i < px.size(); ++i) {
        const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_ + i * bps);
        px[i] = bps == 1 ? p[0] : (static_cast<std::uint32_t>(p[0]) << 8) | p[1];
      }
    } else {
      for (auto& v : px) v = static_cast<std::uint32_t>(next_int("pixel"));
    }
    return img;
  }

 private:
  std::size_t next_int(const char* what) {
    for (;;) {
      while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
      if (pos_ < bytes_.size() && bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
        continue;
      }
      break;
    }
    std::size_t start = pos_;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw ImageError(path_.string() + ": malformed PGM (" + what + ")");
    return std::stoul(bytes_.substr(start, pos_ - start));
  }

  const std::string& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

RawImage read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ImageError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("libpng initialisation failed for " + path.string());
  }
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  RawImage img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth < 8) png_set_packing(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const std::size_t channels = png_get_channels(png, info);
  const std::size_t bytes_per_sample = depth == 16 ? 2 : 1;
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * height);
  rows.resize(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (channels != 1 && channels != 3) {
    throw ImageError(path.string() + ": unsupported PNG channel layout");
  }
  img.channels = channels;
  if (depth == 16) {
    img.max_value = 65535;
  } else if (depth < 8 && color != PNG_COLOR_TYPE_PALETTE) {
    img.max_value = (1u << depth) - 1;
  } else {
    img.max_value = 255;
  }
  for (std::size_t c = 0; c < channels; ++c) img.samples[c] = Grid<std::uint32_t>(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const png_byte* p = rows[y] + (x * channels + c) * bytes_per_sample;
        img.samples[c](y, x) =
            bytes_per_sample == 2 ? (static_cast<std::uint32_t>(p[0]) << 8) | p[1] : p[0];
      }
    }
  }
  return img;
}

}  // namespace

RawImage read_raw_image(const std::filesystem::path& path) {
  std::string head;
  try {
    head = read_file(path);
  } catch (const IoError&) {
    throw ImageError("cannot open " + path.string());
  }
  static constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (head.size() >= 8 && std::equal(kPngSig, kPngSig + 8, head.begin(),
                                     [](unsigned char a, char b) {
                                       return a == static_cast<unsigned char>(b);
                                     })) {
    return read_png(path);
  }
  return PgmParser(head, path).parse();
}

GrayImage read_gray_image(const std::filesystem::path& path) {
  const RawImage raw = read_raw_image(path);
  const auto& s0 = raw.samples[0];
  GrayImage out(s0.height, s0.width);
  // Divide rather than multiply by a reciprocal so 8-bit values written by
  // write_pgm come back bit-exact.
  const double max_value = static_cast<double>(raw.max_value);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = static_cast<double>(s0.data[i]);
    if (raw.channels == 3) {
      v = 0.299 * v + 0.587 * static_cast<double>(raw.samples[1].data[i]) +
          0.114 * static_cast<double>(raw.samples[2].data[i]);
    }
    out.data[i] = std::clamp(v / max_value, 0.0, 1.0);
  }
  return out;
}

SemanticMap read_label_image(const std::filesystem::path& path) {
  const RawImage raw = read_raw_image(path);
  if (raw.channels != 1) throw ImageError(path.string() + ": label image must be single-channel");
  const auto& s0 = raw.samples[0];
  SemanticMap out(s0.height, s0.width);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = static_cast<std::int32_t>(s0.data[i]);
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::string bytes = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                      "\n255\n";
  for (double v : image.data) {
    bytes.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  write_file_atomic(path, bytes);
}

void write_label_pgm(const std::filesystem::path& path, const SemanticMap& labels) {
  std::int32_t max_id = 0;
  for (auto v : labels.data) {
    if (v < 0 || v > 65535) throw ImageError("label id " + std::to_string(v) + " not storable in PGM");
    max_id = std::max(max_id, v);
  }
  const bool wide = max_id > 255;
  std::string bytes = "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) +
                      "\n" + (wide ? "65535" : "255") + "\n";
  for (auto v : labels.data) {
    if (wide) bytes.push_back(static_cast<char>((v >> 8) & 0xff));
    bytes.push_back(static_cast<char>(v & 0xff));
  }
  write_file_atomic(path, bytes);
}

void write_png_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& image) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ImageError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(image.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  for (std::size_t y = 0; y < image.height; ++y) {
    rows[y] = const_cast<png_bytep>(image.data.data() + y * image.width);
  }
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace mdnet::io
