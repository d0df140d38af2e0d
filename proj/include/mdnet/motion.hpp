#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include "mdnet/grid.hpp"

namespace mdnet {

// Three learnable classes plus an ignore sentinel. The numeric order of the
// learnable values is also the tie-break order used everywhere.
enum class MotionAttribute : std::uint8_t {
  Unstable = 0,
  Moving = 1,
  Static = 2,
  Ignore = 255,
};

inline constexpr std::size_t kNumMotionClasses = 3;
inline constexpr std::array<MotionAttribute, kNumMotionClasses> kMotionClasses = {
    MotionAttribute::Unstable, MotionAttribute::Moving, MotionAttribute::Static};

using MotionLabelGrid = Grid<MotionAttribute>;

constexpr std::size_t class_index(MotionAttribute a) { return static_cast<std::size_t>(a); }

constexpr bool is_learnable(MotionAttribute a) { return a != MotionAttribute::Ignore; }

constexpr char attribute_letter(MotionAttribute a) {
  switch (a) {
    case MotionAttribute::Unstable: return 'U';
    case MotionAttribute::Moving: return 'M';
    case MotionAttribute::Static: return 'S';
    case MotionAttribute::Ignore: return '.';
  }
  return '?';
}

constexpr std::string_view attribute_name(MotionAttribute a) {
  switch (a) {
    case MotionAttribute::Unstable: return "unstable";
    case MotionAttribute::Moving: return "moving";
    case MotionAttribute::Static: return "static";
    case MotionAttribute::Ignore: return "ignore";
  }
  return "?";
}

inline std::optional<MotionAttribute> attribute_from_letter(char c) {
  switch (c) {
    case 'U': return MotionAttribute::Unstable;
    case 'M': return MotionAttribute::Moving;
    case 'S': return MotionAttribute::Static;
    case '.': return MotionAttribute::Ignore;
    default: return std::nullopt;
  }
}

inline std::optional<MotionAttribute> attribute_from_name(std::string_view s) {
  if (s == "unstable") return MotionAttribute::Unstable;
  if (s == "moving") return MotionAttribute::Moving;
  if (s == "static") return MotionAttribute::Static;
  if (s == "ignore") return MotionAttribute::Ignore;
  return std::nullopt;
}

}  // namespace mdnet
