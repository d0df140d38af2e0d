#include "mdnet/geometry.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "mdnet/random.hpp"

namespace mdnet::geometry {

namespace {

// Isotropic (Hartley) normalization: centroid to origin, mean distance sqrt(2).
Mat3 normalizing_transform(std::span<const Eigen::Vector2d> pts) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const auto& p : pts) dist += (p - mean).norm();
  dist /= static_cast<double>(pts.size());
  if (!(dist > 1e-12) || !std::isfinite(dist)) {
    throw GeometryError("degenerate point set: all points coincide");
  }
  const double s = std::sqrt(2.0) / dist;
  Mat3 t;
  t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return t;
}

Mat3 enforce_rank2(const Mat3& f) {
  Eigen::JacobiSVD<Mat3> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = svd.singularValues();
  s(2) = 0.0;
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

// Unit Frobenius norm with a fixed sign so equal models compare equal.
Mat3 canonical(Mat3 f) {
  f /= f.norm();
  Eigen::Index r = 0, c = 0;
  f.cwiseAbs().maxCoeff(&r, &c);
  if (f(r, c) < 0) f = -f;
  return f;
}

}  // namespace

Mat3 eight_point(std::span<const Correspondence> corrs) {
  const std::size_t n = corrs.size();
  if (n < 8) {
    throw GeometryError("eight-point solver needs at least 8 correspondences, got " +
                        std::to_string(n));
  }
  std::vector<Eigen::Vector2d> p1(n), p2(n);
  for (std::size_t i = 0; i < n; ++i) {
    p1[i] = {corrs[i].x1, corrs[i].y1};
    p2[i] = {corrs[i].x2, corrs[i].y2};
  }
  const Mat3 t1 = normalizing_transform(p1);
  const Mat3 t2 = normalizing_transform(p2);

  Eigen::Matrix<double, Eigen::Dynamic, 9> a(static_cast<Eigen::Index>(std::max<std::size_t>(n, 9)), 9);
  a.setZero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 u = t1 * Vec3(p1[i].x(), p1[i].y(), 1.0);
    const Vec3 v = t2 * Vec3(p2[i].x(), p2[i].y(), 1.0);
    a.row(static_cast<Eigen::Index>(i)) << v.x() * u.x(), v.x() * u.y(), v.x(), v.y() * u.x(),
        v.y() * u.y(), v.y(), u.x(), u.y(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd null = svd.matrixV().col(8);
  Mat3 f;
  f << null(0), null(1), null(2), null(3), null(4), null(5), null(6), null(7), null(8);
  f = t2.transpose() * enforce_rank2(f) * t1;
  const double norm = f.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw GeometryError("eight-point solution degenerate");
  return canonical(enforce_rank2(f / norm));
}

double sampson_distance(const Mat3& f, const Correspondence& c) {
  const Vec3 x1(c.x1, c.y1, 1.0), x2(c.x2, c.y2, 1.0);
  const Vec3 fx1 = f * x1;
  const Vec3 ftx2 = f.transpose() * x2;
  const double num = x2.dot(fx1);
  const double den = fx1(0) * fx1(0) + fx1(1) * fx1(1) + ftx2(0) * ftx2(0) + ftx2(1) * ftx2(1);
  if (den <= 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(num) / std::sqrt(den);
}

namespace {

// Truncated L1 cost: inliers pay their Sampson error, everything else pays
// thr. Plain inlier counting (and, less often, the truncated quadratic) lets a
// sample with one outlier in it beat the exact model: the bent model keeps
// every true inlier under thr and absorbs the outlier. Under L1 the many small
// residuals it introduces outweigh the one outlier it saves.
struct Score {
  std::size_t count = 0;
  double cost = 0.0;
};

Score score_model(const Mat3& f, std::span<const Correspondence> corrs, double thr,
                  std::vector<bool>* mask) {
  Score s;
  if (mask) mask->assign(corrs.size(), false);
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const double d = sampson_distance(f, corrs[i]);
    if (d < thr) {
      ++s.count;
      s.cost += d;
      if (mask) (*mask)[i] = true;
    } else {
      s.cost += thr;
    }
  }
  return s;
}

std::size_t required_iterations(std::size_t inliers, std::size_t n, double confidence,
                                std::size_t cap) {
  const double w = static_cast<double>(inliers) / static_cast<double>(n);
  const double all_good = std::pow(w, 8.0);
  if (all_good >= 1.0) return 0;
  if (all_good <= 0.0) return cap;
  const double k = std::log(1.0 - confidence) / std::log(1.0 - all_good);
  if (!std::isfinite(k) || k >= static_cast<double>(cap)) return cap;
  return static_cast<std::size_t>(std::ceil(std::max(k, 0.0)));
}

}  // namespace

RansacResult estimate_fundamental_ransac(std::span<const Correspondence> corrs,
                                         const RansacConfig& config) {
  const std::size_t n = corrs.size();
  if (n < 8) {
    throw GeometryError("RANSAC needs at least 8 correspondences, got " + std::to_string(n));
  }
  if (!(config.threshold_px > 0.0)) throw GeometryError("RANSAC threshold must be positive");
  if (!(config.confidence > 0.0 && config.confidence < 1.0)) {
    throw GeometryError("RANSAC confidence must lie in (0, 1)");
  }
  if (config.max_iters == 0) throw GeometryError("RANSAC max_iters must be positive");

  Rng rng(config.seed);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::array<Correspondence, 8> sample;

  RansacResult best;
  double best_cost = 0.0;
  bool have_model = false;
  std::size_t budget = config.max_iters;
  std::size_t it = 0;
  for (; it < budget; ++it) {
    // Partial Fisher-Yates: the first 8 entries become the sample.
    for (std::size_t k = 0; k < 8; ++k) {
      std::swap(idx[k], idx[k + rng.below(n - k)]);
      sample[k] = corrs[idx[k]];
    }
    Mat3 f;
    try {
      f = eight_point(sample);
    } catch (const GeometryError&) {
      continue;
    }
    const Score sc = score_model(f, corrs, config.threshold_px, nullptr);
    if (!have_model || sc.cost < best_cost) {
      have_model = true;
      best.f = f;
      best.inlier_count = sc.count;
      best_cost = sc.cost;
      budget = std::min(budget, std::max(it + 1, required_iterations(sc.count, n, config.confidence,
                                                                     config.max_iters)));
    }
  }
  best.iterations = it;
  if (!have_model) throw GeometryError("RANSAC found no non-degenerate sample");
  score_model(best.f, corrs, config.threshold_px, &best.inliers);

  for (std::size_t round = 0; round < config.refit_rounds && best.inlier_count >= 8; ++round) {
    std::vector<Correspondence> in;
    for (std::size_t i = 0; i < n; ++i) {
      if (best.inliers[i]) in.push_back(corrs[i]);
    }
    Mat3 f;
    try {
      f = eight_point(in);
    } catch (const GeometryError&) {
      break;
    }
    std::vector<bool> mask;
    const Score sc = score_model(f, corrs, config.threshold_px, &mask);
    if (sc.cost > best_cost) break;
    const bool same = mask == best.inliers;
    best.f = f;
    best.inliers = std::move(mask);
    best.inlier_count = sc.count;
    best_cost = sc.cost;
    if (same) break;
  }
  return best;
}

double inlier_ratio(const std::vector<bool>& mask) {
  if (mask.empty()) throw GeometryError("inlier ratio of an empty mask");
  const auto count = static_cast<double>(std::count(mask.begin(), mask.end(), true));
  return count / static_cast<double>(mask.size());
}

Similarity umeyama(std::span<const Vec3> source, std::span<const Vec3> target, bool with_scale) {
  const std::size_t n = source.size();
  if (n != target.size()) {
    throw GeometryError("umeyama: " + std::to_string(n) + " source vs " +
                        std::to_string(target.size()) + " target points");
  }
  if (n < 3) throw GeometryError("umeyama: need at least 3 point pairs");
  Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_s += source[i];
    mu_t += target[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  mu_s *= inv_n;
  mu_t *= inv_n;

  double var_s = 0.0;
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 ds = source[i] - mu_s;
    var_s += ds.squaredNorm();
    cov += (target[i] - mu_t) * ds.transpose();
  }
  var_s *= inv_n;
  cov *= inv_n;
  if (!(var_s > 0.0)) throw GeometryError("umeyama: source points are all identical");

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sign(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign(2) = -1.0;

  Similarity out;
  out.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  out.scale = with_scale ? svd.singularValues().dot(sign) / var_s : 1.0;
  out.translation = mu_t - out.scale * (out.rotation * mu_s);
  return out;
}

double rmse(std::span<const Vec3> source, std::span<const Vec3> target, const Similarity& t) {
  if (source.empty()) throw GeometryError("rmse of an empty point list");
  if (source.size() != target.size()) throw GeometryError("rmse: point lists differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    sum += (t.apply(source[i]) - target[i]).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(source.size()));
}

namespace {

// Reads whitespace-separated doubles from one line.
std::vector<double> parse_numbers(const std::string& line, const std::string& where) {
  std::istringstream ss(line);
  std::vector<double> out;
  std::string tok;
  while (ss >> tok) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || !std::isfinite(v)) {
      throw FormatError(where + ": '" + tok + "' is not a finite number");
    }
    out.push_back(v);
  }
  return out;
}

bool skip_line(const std::string& line) {
  const auto b = line.find_first_not_of(" \t\r");
  return b == std::string::npos || line[b] == '#';
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

}  // namespace

Trajectory parse_trajectory(std::istream& in, const std::string& source) {
  Trajectory traj;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skip_line(line)) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto v = parse_numbers(line, where);
    if (v.size() < 4) throw FormatError(where + ": expected `timestamp x y z`");
    if (!traj.poses.empty() && !(v[0] > traj.poses.back().timestamp)) {
      throw FormatError(where + ": timestamps must be strictly increasing");
    }
    traj.poses.push_back({v[0], Vec3(v[1], v[2], v[3])});
  }
  return traj;
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_trajectory(in, path.string());
}

std::string format_trajectory(const Trajectory& traj) {
  std::string out;
  char buf[160];
  for (const auto& p : traj.poses) {
    std::snprintf(buf, sizeof buf, "%.9f %.17g %.17g %.17g\n", p.timestamp, p.position.x(),
                  p.position.y(), p.position.z());
    out += buf;
  }
  return out;
}

Association associate(const Trajectory& source, const Trajectory& target, double max_dt) {
  Association out;
  std::vector<bool> used(target.poses.size(), false);
  const auto& tp = target.poses;
  for (const auto& p : source.poses) {
    auto it = std::lower_bound(tp.begin(), tp.end(), p.timestamp,
                               [](const Pose& q, double t) { return q.timestamp < t; });
    std::size_t best = tp.size();
    double best_dt = std::numeric_limits<double>::infinity();
    for (auto cand : {it, it == tp.begin() ? tp.end() : std::prev(it)}) {
      if (cand == tp.end()) continue;
      const double dt = std::abs(cand->timestamp - p.timestamp);
      const auto k = static_cast<std::size_t>(cand - tp.begin());
      if (dt < best_dt || (dt == best_dt && k < best)) {
        best_dt = dt;
        best = k;
      }
    }
    if (best == tp.size() || best_dt > max_dt || used[best]) {
      ++out.dropped;
      continue;
    }
    used[best] = true;
    out.source.push_back(p.position);
    out.target.push_back(tp[best].position);
  }
  return out;
}

AlignmentResult umeyama_align(const Trajectory& source, const Trajectory& target, bool with_scale,
                              double max_dt) {
  const Association a = associate(source, target, max_dt);
  AlignmentResult out;
  out.transform = umeyama(a.source, a.target, with_scale);
  out.rmse = rmse(a.source, a.target, out.transform);
  out.pairs = a.source.size();
  out.dropped = a.dropped;
  return out;
}

Drift final_drift(const Trajectory& traj) {
  if (traj.poses.size() < 2) throw GeometryError("drift needs at least 2 poses");
  const Vec3 d = traj.poses.back().position - traj.poses.front().position;
  return {d.x(), d.y(), std::hypot(d.x(), d.y())};
}

std::string format_drift(const Drift& d) {
  // Adding 0.0 turns a negative zero into a positive one before printing.
  char buf[160];
  std::snprintf(buf, sizeof buf, "drift %.2f %.2f %.2f\ndrift_raw %.4f %.4f %.4f\n", d.dx + 0.0,
                d.dy + 0.0, d.norm, d.dx + 0.0, d.dy + 0.0, d.norm);
  return buf;
}

std::vector<Correspondence> parse_correspondences(std::istream& in, const std::string& source) {
  std::vector<Correspondence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skip_line(line)) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto v = parse_numbers(line, where);
    if (v.size() != 4) throw FormatError(where + ": expected `x1 y1 x2 y2`");
    out.push_back({v[0], v[1], v[2], v[3]});
  }
  return out;
}

std::vector<Correspondence> read_correspondences(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_correspondences(in, path.string());
}

std::string format_correspondences(std::span<const Correspondence> corrs) {
  std::string out;
  char buf[160];
  for (const auto& c : corrs) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g\n", c.x1, c.y1, c.x2, c.y2);
    out += buf;
  }
  return out;
}

}  // namespace mdnet::geometry
