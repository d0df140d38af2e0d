#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "mdnet/geometry.hpp"
#include "support/scenes.hpp"

using namespace mdnet;
using namespace mdnet::geometry;
using testing::planted_outlier_scene;

namespace {

Vec3 homog(double x, double y) { return {x, y, 1.0}; }

std::vector<Vec3> random_points(Rng& rng, std::size_t n) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) pts.emplace_back(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
  return pts;
}

Trajectory traj_of(std::vector<std::pair<double, Vec3>> p) {
  Trajectory t;
  for (auto& [ts, x] : p) t.poses.push_back({ts, x});
  return t;
}

}  // namespace

TEST_SUITE("eight point") {
  TEST_CASE("fewer than eight points is an error") {
    auto s = planted_outlier_scene(1, 7, 0);
    CHECK_THROWS_AS(eight_point(s.corrs), GeometryError);
    CHECK_THROWS_AS(estimate_fundamental_ransac(s.corrs), GeometryError);
  }

  TEST_CASE("noiseless scenes: epipolar identity, rank 2, unit norm") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto s = planted_outlier_scene(seed, 30, 0);
      const Mat3 f = eight_point(s.corrs);
      CHECK(std::abs(f.norm() - 1.0) < 1e-12);
      CHECK(std::abs(f.determinant()) < 1e-9);
      Eigen::JacobiSVD<Mat3> svd(f);
      CHECK(svd.singularValues()(2) < 1e-9);
      for (const auto& c : s.corrs) {
        CHECK(std::abs(homog(c.x2, c.y2).dot(f * homog(c.x1, c.y1))) < 1e-9);
        CHECK(sampson_distance(f, c) < 1e-6);
      }
      // Agrees with the rig's F up to sign.
      const Mat3 truth = s.rig.fundamental();
      CHECK(std::min((f - truth).norm(), (f + truth).norm()) < 1e-6);
    }
  }

  TEST_CASE("coincident points are degenerate") {
    std::vector<Correspondence> same(10, Correspondence{5, 5, 7, 7});
    CHECK_THROWS_AS(eight_point(same), GeometryError);
  }

  TEST_CASE("Sampson distance is in pixels for a pure horizontal shift") {
    // F for a pure x translation: epipolar lines are rows, so the distance of
    // a correspondence that is off by dy rows is dy / sqrt(2).
    Mat3 f;
    f << 0, 0, 0, 0, 0, -1, 0, 1, 0;
    CHECK(sampson_distance(f, {10, 20, 30, 20}) == doctest::Approx(0.0));
    CHECK(sampson_distance(f, {10, 20, 30, 23}) == doctest::Approx(3.0 / std::sqrt(2.0)));
  }
}

TEST_SUITE("ransac") {
  TEST_CASE("noiseless scene: every point is an inlier") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto s = planted_outlier_scene(seed, 100, 0);
      auto r = estimate_fundamental_ransac(s.corrs);
      CHECK(inlier_ratio(r.inliers) == 1.0);
      CHECK(std::abs(r.f.determinant()) <= 1e-9);
      for (const auto& c : s.corrs) CHECK(sampson_distance(r.f, c) < 1e-6);
    }
  }

  TEST_CASE("planted outliers are separated exactly") {
    std::size_t exact = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto s = planted_outlier_scene(100 + seed, 70, 30);
      RansacConfig cfg;
      cfg.seed = seed;
      auto r = estimate_fundamental_ransac(s.corrs, cfg);
      exact += r.inliers == s.inlier;
      CHECK(std::abs(r.f.determinant()) <= 1e-9);
      CHECK(r.iterations <= cfg.max_iters);
    }
    CHECK(exact >= 19);
  }

  TEST_CASE("fixed seed is deterministic") {
    auto s = planted_outlier_scene(7, 60, 40);
    RansacConfig cfg;
    cfg.seed = 3;
    auto a = estimate_fundamental_ransac(s.corrs, cfg), b = estimate_fundamental_ransac(s.corrs, cfg);
    CHECK(a.inliers == b.inliers);
    CHECK(a.iterations == b.iterations);
    CHECK(a.f == b.f);
  }

  TEST_CASE("inlier ratio arithmetic") {
    std::vector<bool> m(50, true);
    for (std::size_t i = 0; i < 4; ++i) m[i * 10] = false;
    CHECK(inlier_ratio(m) == 0.92);
    CHECK(inlier_ratio(std::vector<bool>(3, true)) == 1.0);
    CHECK_THROWS_AS(inlier_ratio({}), GeometryError);
  }
}

TEST_SUITE("umeyama") {
  TEST_CASE("identity") {
    Rng rng(1);
    auto p = random_points(rng, 10);
    auto t = umeyama(p, p, true);
    CHECK(std::abs(t.scale - 1.0) < 1e-12);
    CHECK((t.rotation - Mat3::Identity()).norm() < 1e-12);
    CHECK(t.translation.norm() < 1e-12);
  }

  TEST_CASE("recovers random similarities exactly") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      auto p = random_points(rng, 3 + rng.below(20));
      const double s0 = rng.uniform(0.2, 5.0);
      const Mat3 r0 = testing::random_rotation(rng);
      const Vec3 t0(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
      std::vector<Vec3> q;
      for (const auto& x : p) q.push_back(s0 * r0 * x + t0);
      auto t = umeyama(p, q, true);
      CHECK(std::abs(t.scale - s0) <= 1e-9);
      CHECK((t.rotation - r0).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK((t.translation - t0).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK(rmse(p, q, t) <= 1e-9);
      CHECK((t.rotation * t.rotation.transpose() - Mat3::Identity()).norm() < 1e-9);
    }
  }

  TEST_CASE("without scale the scale stays one") {
    Rng rng(3);
    auto p = random_points(rng, 8);
    const Mat3 r0 = testing::random_rotation(rng);
    std::vector<Vec3> q;
    for (const auto& x : p) q.push_back(r0 * x + Vec3(1, 2, 3));
    auto t = umeyama(p, q, false);
    CHECK(t.scale == 1.0);
    CHECK((t.rotation - r0).norm() < 1e-9);
  }

  TEST_CASE("mirrored planar target never yields a reflection") {
    std::vector<Vec3> src{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {2, 0.5, 0}};
    std::vector<Vec3> dst;
    for (const auto& p : src) dst.emplace_back(-p.x(), p.y(), p.z());
    auto t = umeyama(src, dst, true);
    CHECK(std::abs(t.rotation.determinant() - 1.0) < 1e-9);
    std::vector<Vec3> line{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}}, mirrored;
    for (const auto& p : line) mirrored.emplace_back(p.x(), -p.y(), p.z());
    CHECK(std::abs(umeyama(line, mirrored, true).rotation.determinant() - 1.0) < 1e-9);
  }

  TEST_CASE("degenerate inputs") {
    std::vector<Vec3> same(4, Vec3(1, 2, 3)), other{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    CHECK_THROWS_AS(umeyama(same, other, true), GeometryError);
    CHECK_THROWS_AS(umeyama(std::vector<Vec3>(2), std::vector<Vec3>(2), true), GeometryError);
  }

  TEST_CASE("rmse arithmetic and optimality") {
    std::vector<Vec3> a{{0, 0, 0}, {1, 0, 0}}, b{{3, 0, 0}, {5, 0, 0}};
    CHECK(rmse(a, b, Similarity{}) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
    CHECK(std::abs(rmse(a, b, Similarity{}) - 3.5355) < 1e-4);
    CHECK_THROWS_AS(rmse({}, {}, Similarity{}), GeometryError);

    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      auto p = random_points(rng, 12);
      std::vector<Vec3> q;
      const Mat3 r0 = testing::random_rotation(rng);
      for (const auto& x : p) q.push_back(1.5 * r0 * x + Vec3(rng.normal(), rng.normal(), rng.normal()));
      auto best = umeyama(p, q, true);
      const double e = rmse(p, q, best);
      for (int k = 0; k < 20; ++k) {
        Similarity other{best.scale * rng.uniform(0.8, 1.2),
                         testing::small_rotation(rng, 0.2) * best.rotation,
                         best.translation + Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.3};
        CHECK(e <= rmse(p, q, other) + 1e-12);
      }
    }
  }
}

TEST_SUITE("trajectories") {
  TEST_CASE("parsing, ordering and formatting") {
    std::istringstream in("# t x y z\n0 0 0 0\n0.1 1 2 3 0 0 0 1\n\n0.2 2 2 2\n");
    auto t = parse_trajectory(in, "t.txt");
    REQUIRE(t.poses.size() == 3);
    CHECK(t.poses[1].position == Vec3(1, 2, 3));
    std::istringstream again(format_trajectory(t));
    auto u = parse_trajectory(again, "u.txt");
    CHECK(u.poses[2].timestamp == 0.2);

    std::istringstream backwards("0 0 0 0\n0 1 1 1\n");
    try {
      parse_trajectory(backwards, "t.txt");
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("t.txt:2") != std::string::npos);
    }
    std::istringstream short_line("0 1 2\n");
    CHECK_THROWS_AS(parse_trajectory(short_line, "t.txt"), FormatError);
    std::istringstream junk("0 a b c\n");
    CHECK_THROWS_AS(parse_trajectory(junk, "t.txt"), FormatError);
  }

  TEST_CASE("association within the time window") {
    auto est = traj_of({{0.00, {0, 0, 0}}, {1.00, {1, 0, 0}}, {2.00, {2, 0, 0}}, {3.00, {3, 0, 0}}});
    auto gt = traj_of({{0.01, {0, 0, 0}}, {1.04, {1, 0, 0}}, {2.20, {2, 0, 0}}, {2.98, {3, 0, 0}}});
    auto a = associate(est, gt);
    CHECK(a.source.size() == 3);
    CHECK(a.dropped == 1);
    CHECK(a.target[2] == Vec3(3, 0, 0));
  }

  TEST_CASE("alignment of identical and transformed trajectories") {
    Rng rng(5);
    Trajectory est, gt;
    const Mat3 r0 = testing::random_rotation(rng);
    for (int i = 0; i < 20; ++i) {
      const Vec3 p(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-1, 1));
      est.poses.push_back({0.1 * i, p});
      gt.poses.push_back({0.1 * i + 0.001, 3.0 * r0 * p + Vec3(1, -1, 2)});
    }
    auto same = umeyama_align(gt, gt, true);
    CHECK(same.rmse < 1e-12);
    CHECK(same.pairs == 20);
    auto r = umeyama_align(est, gt, true);
    CHECK(r.rmse < 1e-9);
    CHECK(std::abs(r.transform.scale - 3.0) < 1e-9);
    auto noscale = umeyama_align(est, gt, false);
    CHECK(noscale.rmse > 1.0);
  }

  TEST_CASE("final drift examples") {
    auto closed = traj_of({{0, {1, 2, 0}}, {1, {5, 5, 5}}, {2, {1, 2, 7}}});
    auto d0 = final_drift(closed);
    CHECK(d0.norm == 0.0);
    CHECK(format_drift(d0).rfind("drift 0.00 0.00 0.00\n", 0) == 0);

    auto d1 = final_drift(traj_of({{0, {0, 0, 0}}, {1, {-1.2, 0.3, 0}}}));
    CHECK(std::abs(d1.norm - 1.2369) < 1e-3);
    CHECK(format_drift(d1).rfind("drift -1.20 0.30 1.24\n", 0) == 0);
    CHECK(format_drift(d1).find("drift_raw -1.2000 0.3000 1.2369") != std::string::npos);

    auto d2 = final_drift(traj_of({{0, {0, 0, 0}}, {1, {-1.9, -0.4, 3}}}));
    CHECK(std::abs(d2.norm - 1.9416) < 1e-4);
    CHECK(format_drift(d2).rfind("drift -1.90 -0.40 1.94\n", 0) == 0);

    CHECK_THROWS_AS(final_drift(traj_of({{0, {0, 0, 0}}})), GeometryError);
  }
}

TEST_SUITE("correspondence files") {
  TEST_CASE("round trip and errors") {
    auto s = planted_outlier_scene(9, 12, 3);
    std::istringstream in(format_correspondences(s.corrs));
    auto back = parse_correspondences(in, "c.txt");
    REQUIRE(back.size() == s.corrs.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].x1 == s.corrs[i].x1);
      CHECK(back[i].y2 == s.corrs[i].y2);
    }
    std::istringstream bad("1 2 3 4\n1 2 3\n");
    try {
      parse_correspondences(bad, "c.txt");
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("c.txt:2") != std::string::npos);
    }
    std::istringstream extra("1 2 3 4 5\n");
    CHECK_THROWS_AS(parse_correspondences(extra, "c.txt"), FormatError);
  }
}
