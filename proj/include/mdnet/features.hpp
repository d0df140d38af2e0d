#pragma once

#include <array>
#include <filesystem>
#include <istream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mdnet/geometry.hpp"
#include "mdnet/grid.hpp"
#include "mdnet/model.hpp"
#include "mdnet/motion.hpp"

namespace mdnet::features {

using nn::Tensor;

class FeatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Keypoint {
  double x = 0;
  double y = 0;
  double score = 0;
};

struct DetectorConfig {
  double threshold = 0.08;  // intensity units, images are in [0, 1]
  std::size_t nms_radius = 3;
  std::size_t max_points = 1000;
};

// FAST-9 segment test on the 16-pixel radius-3 circle.
//
// Every pixel gets a score that does not depend on the threshold: if some
// contiguous arc of at least 9 circle pixels is strictly brighter (or strictly
// darker) than the center, the score is the sum of absolute differences along
// the longest such arc, otherwise 0. A pixel is reported when it passes the
// segment test at `threshold` and no other pixel in its (2r+1)^2 window has a
// higher score (equal scores: the first in row-major order wins). Results are
// ordered by descending score, then row-major, and cut to max_points.
std::vector<Keypoint> detect_corners(const GrayImage& image, const DetectorConfig& config);

// Dense score map used by detect_corners (exposed for tests).
GrayImage corner_scores(const GrayImage& image);

// Coarse-grid coordinate of a pixel coordinate at stride 8.
double coarse_coord(double pixel);

struct AttributeSample {
  MotionAttribute attribute = MotionAttribute::Ignore;
  double confidence = 0;
  std::array<double, kNumMotionClasses> probs{};  // interpolated, before renormalization
};

// Bilinear interpolation of item n of a [N,3,h,w] probability map at the
// keypoint, renormalized; argmax with ties to the earlier class.
AttributeSample attribute_at(const Tensor& probs, const Keypoint& kp, std::size_t n = 0);

// Bilinear interpolation of item n of a [N,K,h,w] descriptor map, L2-normalized.
std::vector<double> sample_descriptor(const Tensor& desc, const Keypoint& kp, std::size_t n = 0);

struct Feature {
  Keypoint keypoint;
  MotionAttribute attribute = MotionAttribute::Ignore;
  double confidence = 0;
  std::vector<double> descriptor;
};

using FeatureSet = std::vector<Feature>;

// Keeps Static points (order preserved). With min_static_prob > 0 a point
// also needs its Static confidence to reach that value.
FeatureSet filter_static(const FeatureSet& features, double min_static_prob = 0.0);

struct Match {
  std::size_t a = 0;
  std::size_t b = 0;
  double distance = 0;
};

struct MatchConfig {
  double ratio = 0.8;
  bool mutual = true;
};

// Nearest neighbours by Euclidean descriptor distance with Lowe's ratio test.
// With `mutual`, a pair must be each other's nearest neighbour and pass the
// ratio test from both sides, which makes match(a, b) the flip of match(b, a).
// Result ordered by index into `a`.
std::vector<Match> match_features(const FeatureSet& a, const FeatureSet& b,
                                  const MatchConfig& config = {});

std::vector<geometry::Correspondence> to_correspondences(const FeatureSet& a, const FeatureSet& b,
                                                         std::span<const Match> matches);

struct ExtractOptions {
  DetectorConfig detector;
  bool filter_static = false;
  double min_static_prob = 0.0;
};

// Detect on the image, run the network on its padded copy, attach attributes
// and descriptors, then optionally keep only static points.
FeatureSet extract_features(const GrayImage& image, const model::MdNetParams& params,
                            const ExtractOptions& options);

// Text format: header `MDF1 <count> <dim>`, then per point
// `x y score attr conf d_1 ... d_dim` with attr one of U, M, S.
std::string format_feature_file(const FeatureSet& features);
FeatureSet parse_feature_file(std::istream& in, const std::string& source);
FeatureSet read_feature_file(const std::filesystem::path& path);

}  // namespace mdnet::features
