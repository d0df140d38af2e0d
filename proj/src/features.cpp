#include "mdnet/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "mdnet/dataset.hpp"
#include "mdnet/ops.hpp"

namespace mdnet::features {

namespace {

// Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy).
constexpr std::array<std::array<int, 2>, 16> kCircle = {{
    {0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0}, {3, 1}, {2, 2}, {1, 3},
    {0, 3}, {-1, 3}, {-2, 2}, {-3, 1}, {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3},
}};
constexpr std::size_t kArc = 9;
constexpr std::size_t kBorder = 3;

struct Run {
  std::size_t length = 0;
  double sum = 0.0;
};

// Longest circular run of entries with sign * d > limit; ties keep the larger sum.
Run longest_run(const std::array<double, 16>& d, double sign, double limit) {
  std::size_t first_fail = 16;
  for (std::size_t k = 0; k < 16; ++k) {
    if (!(sign * d[k] > limit)) {
      first_fail = k;
      break;
    }
  }
  Run best;
  if (first_fail == 16) {
    best.length = 16;
    for (double v : d) best.sum += std::abs(v);
    return best;
  }
  // Start right after a failing entry so no run wraps past the start.
  Run cur;
  for (std::size_t step = 1; step <= 16; ++step) {
    const double v = d[(first_fail + step) % 16];
    if (sign * v > limit) {
      ++cur.length;
      cur.sum += std::abs(v);
      if (cur.length > best.length || (cur.length == best.length && cur.sum > best.sum)) best = cur;
    } else {
      cur = Run{};
    }
  }
  return best;
}

std::array<double, 16> circle_diffs(const GrayImage& img, std::size_t y, std::size_t x) {
  std::array<double, 16> d{};
  const double c = img(y, x);
  for (std::size_t k = 0; k < 16; ++k) {
    const auto yy = static_cast<std::size_t>(static_cast<long>(y) + kCircle[k][1]);
    const auto xx = static_cast<std::size_t>(static_cast<long>(x) + kCircle[k][0]);
    d[k] = img(yy, xx) - c;
  }
  return d;
}

bool segment_test(const std::array<double, 16>& d, double threshold) {
  return longest_run(d, 1.0, threshold).length >= kArc ||
         longest_run(d, -1.0, threshold).length >= kArc;
}

}  // namespace

GrayImage corner_scores(const GrayImage& image) {
  GrayImage s(image.height, image.width, 0.0);
  if (image.height <= 2 * kBorder || image.width <= 2 * kBorder) return s;
  for (std::size_t y = kBorder; y + kBorder < image.height; ++y) {
    for (std::size_t x = kBorder; x + kBorder < image.width; ++x) {
      const auto d = circle_diffs(image, y, x);
      const Run bright = longest_run(d, 1.0, 0.0);
      const Run dark = longest_run(d, -1.0, 0.0);
      const Run& r = (bright.length > dark.length ||
                      (bright.length == dark.length && bright.sum >= dark.sum))
                         ? bright
                         : dark;
      if (r.length >= kArc) s(y, x) = r.sum;
    }
  }
  return s;
}

std::vector<Keypoint> detect_corners(const GrayImage& image, const DetectorConfig& config) {
  if (config.threshold < 0.0) throw FeatureError("detector threshold must be >= 0");
  const GrayImage score = corner_scores(image);
  const std::size_t r = config.nms_radius;
  std::vector<Keypoint> out;
  for (std::size_t y = kBorder; y + kBorder < image.height; ++y) {
    for (std::size_t x = kBorder; x + kBorder < image.width; ++x) {
      const double s = score(y, x);
      if (s <= 0.0) continue;
      if (!segment_test(circle_diffs(image, y, x), config.threshold)) continue;
      bool is_max = true;
      const std::size_t y0 = y >= r ? y - r : 0, y1 = std::min(image.height - 1, y + r);
      const std::size_t x0 = x >= r ? x - r : 0, x1 = std::min(image.width - 1, x + r);
      for (std::size_t yy = y0; yy <= y1 && is_max; ++yy) {
        for (std::size_t xx = x0; xx <= x1; ++xx) {
          const double q = score(yy, xx);
          const bool before = yy < y || (yy == y && xx < x);
          if (q > s || (q == s && before)) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) out.push_back({static_cast<double>(x), static_cast<double>(y), s});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Keypoint& a, const Keypoint& b) { return a.score > b.score; });
  if (out.size() > config.max_points) out.resize(config.max_points);
  return out;
}

double coarse_coord(double pixel) {
  return nn::upsample_source_coord(pixel, model::kStudentStride);
}

namespace {

struct PlaneView {
  const double* base;  // first channel of item n
  std::size_t channels, h, w;
};

PlaneView view(const Tensor& t, std::size_t n, const char* what) {
  if (t.rank() == 3 && n == 0) return {t.values().data(), t.dim(0), t.dim(1), t.dim(2)};
  if (t.rank() != 4 || n >= t.dim(0)) {
    throw nn::ShapeError(std::string(what) + ": expected [N,C,h,w] with item " + std::to_string(n) +
                         ", got " + nn::to_string(t.shape()));
  }
  const std::size_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  return {t.values().data() + n * c * h * w, c, h, w};
}

std::pair<nn::BilinearTap, nn::BilinearTap> taps(const PlaneView& v, const Keypoint& kp) {
  const double lim_x = static_cast<double>(v.w * model::kStudentStride);
  const double lim_y = static_cast<double>(v.h * model::kStudentStride);
  if (!(kp.x >= 0.0 && kp.x < lim_x && kp.y >= 0.0 && kp.y < lim_y)) {
    throw FeatureError("keypoint (" + std::to_string(kp.x) + ", " + std::to_string(kp.y) +
                       ") outside the image");
  }
  return {nn::bilinear_tap(coarse_coord(kp.y), v.h), nn::bilinear_tap(coarse_coord(kp.x), v.w)};
}

}  // namespace

AttributeSample attribute_at(const Tensor& probs, const Keypoint& kp, std::size_t n) {
  const PlaneView v = view(probs, n, "attribute_at");
  if (v.channels != kNumMotionClasses) {
    throw nn::ShapeError("attribute_at: expected 3 channels, got " + std::to_string(v.channels));
  }
  const auto [ty, tx] = taps(v, kp);
  AttributeSample out;
  double sum = 0.0;
  for (std::size_t c = 0; c < kNumMotionClasses; ++c) {
    out.probs[c] = nn::bilinear_sample(v.base + c * v.h * v.w, v.w, ty, tx);
    sum += out.probs[c];
  }
  if (!(sum > 0.0)) throw FeatureError("attribute_at: probabilities sum to zero");
  std::size_t best = 0;
  std::array<double, kNumMotionClasses> p{};
  for (std::size_t c = 0; c < kNumMotionClasses; ++c) p[c] = out.probs[c] / sum;
  for (std::size_t c = 1; c < kNumMotionClasses; ++c) {
    if (p[c] > p[best]) best = c;
  }
  out.attribute = kMotionClasses[best];
  out.confidence = p[best];
  return out;
}

std::vector<double> sample_descriptor(const Tensor& desc, const Keypoint& kp, std::size_t n) {
  const PlaneView v = view(desc, n, "sample_descriptor");
  const auto [ty, tx] = taps(v, kp);
  std::vector<double> d(v.channels);
  double sq = 0.0;
  for (std::size_t c = 0; c < v.channels; ++c) {
    d[c] = nn::bilinear_sample(v.base + c * v.h * v.w, v.w, ty, tx);
    sq += d[c] * d[c];
  }
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0)) throw FeatureError("degenerate descriptor: zero vector at keypoint");
  for (auto& x : d) x /= norm;
  return d;
}

FeatureSet filter_static(const FeatureSet& features, double min_static_prob) {
  FeatureSet out;
  for (const auto& f : features) {
    if (f.attribute == MotionAttribute::Static && f.confidence >= min_static_prob) out.push_back(f);
  }
  return out;
}

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

struct Neighbours {
  std::size_t best = 0;
  double d1 = std::numeric_limits<double>::infinity();
  double d2 = std::numeric_limits<double>::infinity();
};

}  // namespace

std::vector<Match> match_features(const FeatureSet& a, const FeatureSet& b,
                                  const MatchConfig& config) {
  if (!(config.ratio > 0.0 && config.ratio <= 1.0)) {
    throw FeatureError("match ratio must lie in (0, 1]");
  }
  if (a.empty() || b.empty()) return {};
  const std::size_t dim = a.front().descriptor.size();
  for (const auto* set : {&a, &b}) {
    for (const auto& f : *set) {
      if (f.descriptor.size() != dim) throw FeatureError("descriptor dimensions differ");
    }
  }
  std::vector<Neighbours> na(a.size()), nb(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double d = distance(a[i].descriptor, b[j].descriptor);
      for (auto [nn, idx] : {std::pair{&na[i], j}, std::pair{&nb[j], i}}) {
        if (d < nn->d1) {
          nn->d2 = nn->d1;
          nn->d1 = d;
          nn->best = idx;
        } else if (d < nn->d2) {
          nn->d2 = d;
        }
      }
    }
  }
  auto passes = [&](const Neighbours& n) { return n.d1 < config.ratio * n.d2; };
  std::vector<Match> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::size_t j = na[i].best;
    if (!passes(na[i])) continue;
    if (config.mutual && (nb[j].best != i || !passes(nb[j]))) continue;
    out.push_back({i, j, na[i].d1});
  }
  return out;
}

std::vector<geometry::Correspondence> to_correspondences(const FeatureSet& a, const FeatureSet& b,
                                                         std::span<const Match> matches) {
  std::vector<geometry::Correspondence> out;
  out.reserve(matches.size());
  for (const auto& m : matches) {
    out.push_back({a.at(m.a).keypoint.x, a.at(m.a).keypoint.y, b.at(m.b).keypoint.x,
                   b.at(m.b).keypoint.y});
  }
  return out;
}

FeatureSet extract_features(const GrayImage& image, const model::MdNetParams& params,
                            const ExtractOptions& options) {
  const auto keypoints = detect_corners(image, options.detector);
  const GrayImage padded = data::reflect_pad(image, model::kStudentStride);
  const auto out = model::infer(data::image_tensor(padded), params);
  FeatureSet features;
  features.reserve(keypoints.size());
  for (const auto& kp : keypoints) {
    const auto attr = attribute_at(out.motion_probs, kp);
    features.push_back({kp, attr.attribute, attr.confidence, sample_descriptor(out.descriptors, kp)});
  }
  if (options.filter_static) return filter_static(features, options.min_static_prob);
  return features;
}

std::string format_feature_file(const FeatureSet& features) {
  const std::size_t dim = features.empty() ? model::kDescriptorDim : features.front().descriptor.size();
  std::string out = "MDF1 " + std::to_string(features.size()) + " " + std::to_string(dim) + "\n";
  char buf[160];
  for (const auto& f : features) {
    if (f.descriptor.size() != dim) throw FeatureError("descriptor dimensions differ");
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %c %.17g", f.keypoint.x, f.keypoint.y,
                  f.keypoint.score, attribute_letter(f.attribute), f.confidence);
    out += buf;
    for (double v : f.descriptor) {
      std::snprintf(buf, sizeof buf, " %.17g", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

namespace {

double parse_double(const std::string& tok, const std::string& where) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size() || !std::isfinite(v)) {
    throw FeatureError(where + ": '" + tok + "' is not a finite number");
  }
  return v;
}

}  // namespace

FeatureSet parse_feature_file(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  auto where = [&] { return source + ":" + std::to_string(lineno); };

  if (!next_line()) throw FeatureError(source + ": empty feature file");
  std::istringstream header(line);
  std::string magic;
  long long count = -1, dim = -1;
  std::string extra;
  if (!(header >> magic >> count >> dim) || magic != "MDF1" || count < 0 || dim <= 0 ||
      (header >> extra)) {
    throw FeatureError(where() + ": expected header `MDF1 <count> <dim>`");
  }
  FeatureSet out;
  out.reserve(static_cast<std::size_t>(count));
  for (long long i = 0; i < count; ++i) {
    if (!next_line()) {
      throw FeatureError(source + ": header promises " + std::to_string(count) +
                         " points, file has " + std::to_string(i));
    }
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.size() != 5 + static_cast<std::size_t>(dim)) {
      throw FeatureError(where() + ": expected " + std::to_string(5 + dim) + " fields, got " +
                         std::to_string(tok.size()));
    }
    Feature f;
    f.keypoint = {parse_double(tok[0], where()), parse_double(tok[1], where()),
                  parse_double(tok[2], where())};
    const auto attr = tok[3].size() == 1 ? attribute_from_letter(tok[3][0]) : std::nullopt;
    if (!attr || !is_learnable(*attr)) {
      throw FeatureError(where() + ": attribute must be U, M or S, got '" + tok[3] + "'");
    }
    f.attribute = *attr;
    f.confidence = parse_double(tok[4], where());
    f.descriptor.reserve(static_cast<std::size_t>(dim));
    for (std::size_t k = 5; k < tok.size(); ++k) f.descriptor.push_back(parse_double(tok[k], where()));
    out.push_back(std::move(f));
  }
  if (next_line()) throw FeatureError(where() + ": unexpected data after the last point");
  return out;
}

FeatureSet read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FeatureError("cannot open " + path.string());
  return parse_feature_file(in, path.string());
}

}  // namespace mdnet::features
