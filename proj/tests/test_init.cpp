#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "sddf/init.hpp"
#include "sddf/rng.hpp"

using namespace sddf;

namespace {

std::vector<Vec3> gaussian_blob(Rng& rng, const Vec3& center, const Vec3& sigma,
                                int n) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i)
    pts.push_back(center + sigma.cwiseProduct(rng.normal3()));
  return pts;
}

std::vector<Vec3> plane_grid(const Vec3& origin, double half, int per_side,
                             double z) {
  std::vector<Vec3> pts;
  for (int i = 0; i < per_side; ++i)
    for (int j = 0; j < per_side; ++j) {
      double u = -half + 2.0 * half * i / (per_side - 1);
      double v = -half + 2.0 * half * j / (per_side - 1);
      pts.push_back(origin + Vec3(u, v, z));
    }
  return pts;
}

std::vector<Vec3> ball_points(Rng& rng, const Vec3& center, double radius,
                              int n) {
  std::vector<Vec3> pts;
  while (static_cast<int>(pts.size()) < n) {
    Vec3 d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (d.squaredNorm() <= 1.0) pts.push_back(center + radius * d);
  }
  return pts;
}

}  // namespace

TEST_CASE("kmeans with one cluster returns the mean") {
  Rng rng(71);
  std::vector<Vec3> pts = gaussian_blob(rng, Vec3(1, 2, 3), Vec3::Ones(), 500);
  ClusterSet cs = kmeans_pp(pts, 1, {100, 9});
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= pts.size();
  CHECK((cs.centroids[0] - mean).norm() < 1e-12);
  for (int a : cs.assignment) CHECK(a == 0);
}

TEST_CASE("kmeans separates two distant blobs exactly") {
  Rng rng(72);
  std::vector<Vec3> pts = gaussian_blob(rng, Vec3::Zero(), 0.1 * Vec3::Ones(), 300);
  auto blob2 = gaussian_blob(rng, Vec3(50, 0, 0), 0.1 * Vec3::Ones(), 300);
  pts.insert(pts.end(), blob2.begin(), blob2.end());
  ClusterSet cs = kmeans_pp(pts, 2, {100, 5});
  // the optimal 2-partition is the blob split; check each blob is uniform
  for (int i = 1; i < 300; ++i) CHECK(cs.assignment[i] == cs.assignment[0]);
  for (int i = 301; i < 600; ++i) CHECK(cs.assignment[i] == cs.assignment[300]);
  CHECK(cs.assignment[0] != cs.assignment[300]);
}

TEST_CASE("kmeans is deterministic for a fixed seed") {
  Rng rng(73);
  std::vector<Vec3> pts = gaussian_blob(rng, Vec3::Zero(), Vec3::Ones(), 800);
  ClusterSet a = kmeans_pp(pts, 7, {100, 42});
  ClusterSet b = kmeans_pp(pts, 7, {100, 42});
  CHECK(a.assignment == b.assignment);
}

TEST_CASE("cube corners fit the 3-sigma sphere") {
  std::vector<Vec3> corners;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) corners.emplace_back(sx, sy, sz);
  EllipsoidFit fit = single_ellipsoid_init(corners);
  CHECK(fit.c.norm() < 1e-12);
  CHECK((fit.r - Vec3(3, 3, 3)).norm() < 1e-9);
  CHECK(fit.R.determinant() == doctest::Approx(1.0));
}

TEST_CASE("collinear points collapse to a needle with clamped radii") {
  std::vector<Vec3> pts;
  for (int k = -10; k <= 10; ++k) pts.emplace_back(0.1 * k, 0.0, 0.0);
  double var = 0.0;
  for (const auto& p : pts) var += p.x() * p.x();
  var /= pts.size();
  EllipsoidFit fit = single_ellipsoid_init(pts);
  CHECK(fit.r[0] == doctest::Approx(3.0 * std::sqrt(var)));
  CHECK(fit.r[1] == kMinRadius);
  CHECK(fit.r[2] == kMinRadius);
  // dominant axis is x (up to sign)
  CHECK(std::abs(fit.R.col(0).x()) == doctest::Approx(1.0));
}

TEST_CASE("single point gives the minimum-radius ellipsoid at that point") {
  EllipsoidFit fit = single_ellipsoid_init({Vec3(2, -1, 0.5)});
  CHECK((fit.c - Vec3(2, -1, 0.5)).norm() == 0.0);
  CHECK((fit.r - Vec3::Constant(kMinRadius)).norm() == 0.0);
}

TEST_CASE("a split plane merges into one flat ellipsoid") {
  std::vector<Vec3> pts = plane_grid(Vec3::Zero(), 2.0, 40, 0.0);
  MultiInitConfig cfg;
  cfg.seed = 3;
  MultiInitResult res = multi_ellipsoid_init(pts, 6, cfg);
  CHECK(res.merged_planar == 1);
  CHECK(static_cast<int>(res.ellipsoids.size()) >= 1);
  // merged fit spans the whole plane and is thin
  const EllipsoidFit& flat = res.ellipsoids.front();
  CHECK(flat.r.minCoeff() == doctest::Approx(kMinRadius));
  CHECK(flat.r.maxCoeff() > 2.0);
}

TEST_CASE("plane plus separated ball: one merged flat, rest on the ball") {
  Rng rng(74);
  std::vector<Vec3> pts = plane_grid(Vec3::Zero(), 2.0, 40, 0.0);
  auto ball = ball_points(rng, Vec3(0, 0, 2.0), 0.6, 600);
  pts.insert(pts.end(), ball.begin(), ball.end());

  MultiInitConfig cfg;
  cfg.seed = 11;
  MultiInitResult res = multi_ellipsoid_init(pts, 4, cfg);
  CHECK(res.merged_planar == 1);
  CHECK(static_cast<int>(res.ellipsoids.size()) == 4);
  // first fit is the merged plane; the rest sit on the ball
  CHECK(res.ellipsoids[0].r.maxCoeff() > 1.5);
  for (int k = 1; k < 4; ++k)
    CHECK((res.ellipsoids[k].c - Vec3(0, 0, 2.0)).norm() < 1.0);
}

TEST_CASE("no flat clusters reduces to plain clustering") {
  Rng rng(75);
  std::vector<Vec3> pts = ball_points(rng, Vec3::Zero(), 1.0, 400);
  auto b2 = ball_points(rng, Vec3(6, 0, 0), 1.0, 400);
  auto b3 = ball_points(rng, Vec3(0, 6, 0), 1.0, 400);
  pts.insert(pts.end(), b2.begin(), b2.end());
  pts.insert(pts.end(), b3.begin(), b3.end());

  MultiInitConfig cfg;
  cfg.seed = 21;
  cfg.beta_max = 0.01;  // nothing here is that flat
  MultiInitResult res = multi_ellipsoid_init(pts, 3, cfg);
  CHECK(res.merged_planar == 0);

  // identical to clustering + per-cluster fits with the same stream
  KMeansConfig kc = cfg.kmeans;
  kc.seed = cfg.seed;
  ClusterSet cs = kmeans_pp(pts, 3, kc);
  std::vector<std::vector<Vec3>> groups(3);
  for (size_t i = 0; i < pts.size(); ++i)
    groups[cs.assignment[i]].push_back(pts[i]);
  for (int m = 0; m < 3; ++m) {
    EllipsoidFit expect = single_ellipsoid_init(groups[m]);
    CHECK((res.ellipsoids[m].c - expect.c).norm() == 0.0);
    CHECK((res.ellipsoids[m].r - expect.r).norm() == 0.0);
    CHECK((res.ellipsoids[m].R - expect.R).norm() == 0.0);
  }
}

TEST_CASE("three-sigma fit covers most of a gaussian cluster") {
  Rng rng(76);
  int covered = 0, total = 0;
  for (int rep = 0; rep < 20; ++rep) {
    Vec3 sigma(rng.uniform(0.2, 1.5), rng.uniform(0.2, 1.5),
               rng.uniform(0.2, 1.5));
    std::vector<Vec3> pts =
        gaussian_blob(rng, 3.0 * rng.normal3(), sigma, 1000);
    EllipsoidFit fit = single_ellipsoid_init(pts);
    Mat3 q = fit.R * Vec3(1.0 / (fit.r[0] * fit.r[0]),
                          1.0 / (fit.r[1] * fit.r[1]),
                          1.0 / (fit.r[2] * fit.r[2]))
                         .asDiagonal() *
             fit.R.transpose();
    for (const auto& x : pts) {
      Vec3 d = x - fit.c;
      if (d.dot(q * d) <= 1.0) ++covered;
      ++total;
    }
  }
  CHECK(static_cast<double>(covered) / total > 0.9);
}

TEST_CASE("every returned radius respects the minimum") {
  Rng rng(77);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<Vec3> pts =
        gaussian_blob(rng, Vec3::Zero(), Vec3(1.0, 0.5, 1e-9), 400);
    MultiInitConfig cfg;
    cfg.seed = rep;
    MultiInitResult res = multi_ellipsoid_init(pts, 3, cfg);
    for (const auto& fit : res.ellipsoids)
      CHECK(fit.r.minCoeff() >= kMinRadius);
  }
}

TEST_CASE("coplanarity measure is symmetric in the pair") {
  Rng rng(78);
  for (int rep = 0; rep < 500; ++rep) {
    Vec3 ci = rng.normal3(), cj = rng.normal3();
    Vec3 ni = rng.unit_vector(), nj = rng.unit_vector();
    Vec3 d = ci - cj;
    double eta_ij = 0.5 * (std::abs(d.dot(ni)) + std::abs(d.dot(nj)));
    double eta_ji = 0.5 * (std::abs((-d).dot(nj)) + std::abs((-d).dot(ni)));
    CHECK(eta_ij == doctest::Approx(eta_ji).epsilon(1e-15));
  }
}

TEST_CASE("ellipsoid set file round-trips") {
  Rng rng(79);
  std::vector<EllipsoidFit> fits;
  for (int k = 0; k < 5; ++k) {
    EllipsoidFit f;
    f.R = lie::so3_exp(rng.uniform(0.0, 3.0) * rng.unit_vector());
    f.c = rng.normal3();
    f.r = Vec3(rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0),
               rng.uniform(0.1, 2.0));
    fits.push_back(f);
  }
  write_ellipsoid_set("fits_test.json", fits);
  auto loaded = read_ellipsoid_set("fits_test.json");
  REQUIRE(loaded.size() == fits.size());
  for (size_t k = 0; k < fits.size(); ++k) {
    CHECK((loaded[k].R - fits[k].R).norm() < 1e-12);
    CHECK((loaded[k].c - fits[k].c).norm() < 1e-12);
    CHECK((loaded[k].r - fits[k].r).norm() < 1e-12);
  }
  std::remove("fits_test.json");
}
