#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdnet::geometry {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input; the message carries `source:line`.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Correspondence {
  double x1 = 0, y1 = 0;  // image 1, pixels
  double x2 = 0, y2 = 0;  // image 2, pixels
};

// Normalized eight-point estimate of F with x2^T F x1 = 0 over >= 8 points.
// Result has rank 2 and unit Frobenius norm. Throws GeometryError when the
// points are degenerate (coincident, or the nullspace is not unique enough to
// produce a finite matrix).
Mat3 eight_point(std::span<const Correspondence> corrs);

// First-order geometric error in pixels: sqrt of the Sampson error.
double sampson_distance(const Mat3& f, const Correspondence& c);

struct RansacConfig {
  double threshold_px = 1.0;
  std::size_t max_iters = 2000;
  double confidence = 0.999;
  std::uint64_t seed = 0;
  std::size_t refit_rounds = 5;
};

struct RansacResult {
  Mat3 f = Mat3::Zero();
  std::vector<bool> inliers;
  std::size_t inlier_count = 0;
  std::size_t iterations = 0;
};

// Adaptive RANSAC around eight_point with truncated-L1 scoring
// (ties keep the earlier trial), followed by refitting on the inlier set.
RansacResult estimate_fundamental_ransac(std::span<const Correspondence> corrs,
                                         const RansacConfig& config = {});

double inlier_ratio(const std::vector<bool>& mask);

struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

// Least-squares similarity mapping source onto target (Umeyama). Rotation is
// always proper. Throws when fewer than 3 pairs or the source has no spread.
Similarity umeyama(std::span<const Vec3> source, std::span<const Vec3> target, bool with_scale);

double rmse(std::span<const Vec3> source, std::span<const Vec3> target, const Similarity& t);

struct Pose {
  double timestamp = 0;  // seconds
  Vec3 position = Vec3::Zero();
};

struct Trajectory {
  std::vector<Pose> poses;  // strictly increasing timestamps
};

// Lines `timestamp x y z [ignored...]`; blank and '#' lines skipped.
Trajectory parse_trajectory(std::istream& in, const std::string& source);
Trajectory read_trajectory(const std::filesystem::path& path);
std::string format_trajectory(const Trajectory& traj);

inline constexpr double kDefaultMaxTimeDiff = 0.05;

struct Association {
  std::vector<Vec3> source;
  std::vector<Vec3> target;
  std::size_t dropped = 0;  // source poses with no target pose within the window
};

// Pairs every source pose with the nearest unused target pose in time,
// within max_dt seconds.
Association associate(const Trajectory& source, const Trajectory& target,
                      double max_dt = kDefaultMaxTimeDiff);

struct AlignmentResult {
  Similarity transform;
  double rmse = 0;
  std::size_t pairs = 0;
  std::size_t dropped = 0;
};

AlignmentResult umeyama_align(const Trajectory& source, const Trajectory& target, bool with_scale,
                              double max_dt = kDefaultMaxTimeDiff);

struct Drift {
  double dx = 0;
  double dy = 0;
  double norm = 0;
};

// Planar displacement between the last and first pose.
Drift final_drift(const Trajectory& traj);

// `drift <dx> <dy> <norm>` rounded to 2 decimals, then `drift_raw` with 4.
std::string format_drift(const Drift& d);

// Lines `x1 y1 x2 y2`.
std::vector<Correspondence> parse_correspondences(std::istream& in, const std::string& source);
std::vector<Correspondence> read_correspondences(const std::filesystem::path& path);
std::string format_correspondences(std::span<const Correspondence> corrs);

}  // namespace mdnet::geometry
