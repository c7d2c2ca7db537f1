#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sddf/ellipsoid.hpp"
#include "sddf/rng.hpp"
#include "support/finite_diff.hpp"
#include "support/oracles.hpp"

using namespace sddf;

namespace {

constexpr double kEps = 1e-8;

EllipsoidFrame unit_sphere() {
  return EllipsoidFrame::from_parts(Mat3::Identity(), Vec3::Zero(),
                                    Vec3::Ones());
}

Ellipsoid random_ellipsoid(Rng& rng) {
  Ellipsoid e;
  e.pose.base.R = lie::so3_exp(rng.uniform(0.0, 2.5) * rng.unit_vector());
  e.pose.base.t = 2.0 * rng.normal3();
  e.pose.xi = 0.3 * (Vec6() << rng.normal3(), rng.normal3()).finished();
  e.r0 = Vec3(rng.uniform(0.4, 1.8), rng.uniform(0.4, 1.8),
              rng.uniform(0.4, 1.8));
  e.s = 0.2 * rng.normal3();
  return e;
}

}  // namespace

TEST_CASE("to_local identity pose leaves the ray unchanged") {
  EllipsoidFrame f = unit_sphere();
  Ray ray{Vec3(1, 2, 3), Vec3(0, 1, 0)};
  auto [p, v] = to_local(ray, f);
  CHECK((p - ray.p).norm() == 0.0);
  CHECK((v - ray.v).norm() == 0.0);
}

TEST_CASE("to_local pure translation shifts the origin only") {
  EllipsoidFrame f = EllipsoidFrame::from_parts(Mat3::Identity(),
                                                Vec3(1, -2, 0.5), Vec3::Ones());
  Ray ray{Vec3(1, 2, 3), Vec3(0, 0, 1)};
  auto [p, v] = to_local(ray, f);
  CHECK((p - Vec3(0, 4, 2.5)).norm() < 1e-15);
  CHECK((v - ray.v).norm() == 0.0);
}

TEST_CASE("to_local round-trips through the pose") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    EllipsoidFrame f = test::random_frame(rng);
    Ray ray = test::random_ray(rng);
    auto [p, v] = to_local(ray, f);
    CHECK((f.R * p + f.c - ray.p).norm() < 1e-12);
    CHECK((f.R * v - ray.v).norm() < 1e-12);
    CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("forward: axis hit on the unit sphere") {
  EllipsoidEval e =
      ellipsoid_forward(Ray{Vec3(-2, 0, 0), Vec3(1, 0, 0)}, unit_sphere(), kEps);
  CHECK(e.intersection == doctest::Approx(1.0));
  CHECK(e.sign == doctest::Approx(3.0));
  CHECK(e.valid);
  CHECK(e.dist == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("forward: interior point reports the boundary behind") {
  EllipsoidEval e =
      ellipsoid_forward(Ray{Vec3(0, 0, 0), Vec3(1, 0, 0)}, unit_sphere(), kEps);
  CHECK(e.sign == doctest::Approx(-1.0));
  CHECK(e.valid);
  CHECK(e.dist == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("forward: surface behind the ray is gated to infinity") {
  EllipsoidEval e =
      ellipsoid_forward(Ray{Vec3(2, 0, 0), Vec3(1, 0, 0)}, unit_sphere(), kEps);
  CHECK(e.f_candidate == doctest::Approx(-3.0).epsilon(1e-7));
  CHECK(e.sign == doctest::Approx(3.0));
  CHECK(e.f_candidate * e.sign < 0.0);
  CHECK_FALSE(e.valid);
  CHECK(std::isinf(e.dist));
}

TEST_CASE("forward: miss falls back to the virtual plane") {
  EllipsoidEval e = ellipsoid_forward(Ray{Vec3(-2, 2, 0), Vec3(1, 0, 0)},
                                      unit_sphere(), kEps);
  CHECK(e.intersection == doctest::Approx(-3.0));
  CHECK(e.valid);
  // beta collapses to eps, leaving the plane distance minus sqrt(eps)
  CHECK(e.dist == doctest::Approx(2.0 - std::sqrt(kEps)).epsilon(1e-12));
}

TEST_CASE("forward: anisotropic radii") {
  EllipsoidFrame f = EllipsoidFrame::from_parts(Mat3::Identity(), Vec3::Zero(),
                                                Vec3(2, 1, 1));
  EllipsoidEval e = ellipsoid_forward(Ray{Vec3(-4, 0, 0), Vec3(1, 0, 0)}, f, kEps);
  CHECK(e.valid);
  CHECK(e.dist == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("backward: zero upstream gives zero gradients") {
  Rng rng(22);
  EllipsoidFrame f = test::random_frame(rng);
  EllipsoidEval e = ellipsoid_forward(test::random_ray(rng), f, kEps);
  LocalGrads g = ellipsoid_backward(e, f, 0.0, 0.0, 0.0);
  CHECK(g.p_loc.norm() == 0.0);
  CHECK(g.v_loc.norm() == 0.0);
  CHECK(g.radii.norm() == 0.0);
}

TEST_CASE("backward: distance gradient on the axis hit is -v") {
  EllipsoidFrame f = unit_sphere();
  EllipsoidEval e =
      ellipsoid_forward(Ray{Vec3(-2, 0, 0), Vec3(1, 0, 0)}, f, kEps);
  LocalGrads g = ellipsoid_backward(e, f, 0.0, 0.0, 1.0);
  CHECK((g.p_loc - Vec3(-1, 0, 0)).norm() < 1e-7);
}

TEST_CASE("backward matches finite differences on local inputs and radii") {
  Rng rng(23);
  int tested = 0;
  while (tested < 1000) {
    EllipsoidFrame f = test::random_frame(rng, 0.4, 1.8, 1.0);
    Ray ray = test::random_ray(rng, 2.5);
    EllipsoidEval e = ellipsoid_forward(ray, f, kEps);
    if (!test::well_conditioned(e)) continue;
    ++tested;

    double a = rng.normal(), b = rng.normal(), c = rng.normal();
    if (!e.valid) c = 0.0;
    LocalGrads g = ellipsoid_backward(e, f, a, b, c);

    auto objective = [&](const Eigen::VectorXd& x) {
      Vec3 p = x.segment<3>(0), v = x.segment<3>(3), r = x.segment<3>(6);
      EllipsoidFrame fr =
          EllipsoidFrame::from_parts(Mat3::Identity(), Vec3::Zero(), r);
      EllipsoidEval ev = ellipsoid_forward(Ray{p, v}, fr, kEps);
      return a * ev.intersection + b * ev.sign +
             (c != 0.0 ? c * ev.dist : 0.0);
    };
    // Work in the local frame directly: identity-pose ellipsoid.
    auto [p_loc, v_loc] = to_local(ray, f);
    Eigen::VectorXd x(9);
    x << p_loc, v_loc, f.r;
    Eigen::VectorXd fd = test::central_diff(objective, x, 1e-6);
    Eigen::VectorXd an(9);
    an << g.p_loc, g.v_loc, g.radii;
    CHECK(test::max_rel_err(an, fd) < 1e-5);
  }
}

TEST_CASE("chain_to_world: identity pose passes gradients through") {
  EllipsoidFrame f = unit_sphere();
  Ray ray{Vec3(-2, 0.1, 0.2), Vec3(1, 0, 0)};
  LocalGrads local;
  local.p_loc = Vec3(0.3, -0.4, 0.5);
  local.v_loc = Vec3(-0.1, 0.2, 0.7);
  WorldGrads w = chain_to_world(ray, f, local);
  CHECK((w.p - local.p_loc).norm() < 1e-15);
  CHECK((w.v - local.v_loc).norm() < 1e-15);
  CHECK((w.c + local.p_loc).norm() < 1e-15);
}

TEST_CASE("chain_to_world: zero local gradients give zero world gradients") {
  Rng rng(24);
  EllipsoidFrame f = test::random_frame(rng);
  WorldGrads w = chain_to_world(test::random_ray(rng), f, LocalGrads{});
  CHECK(w.p.norm() == 0.0);
  CHECK(w.v.norm() == 0.0);
  CHECK(w.R.norm() == 0.0);
  CHECK(w.c.norm() == 0.0);
  CHECK(w.log_scale.norm() == 0.0);
}

TEST_CASE("full parameter chain matches finite differences") {
  Rng rng(25);
  int tested = 0;
  while (tested < 300) {
    Ellipsoid ell = random_ellipsoid(rng);
    EllipsoidFrame f = EllipsoidFrame::from(ell);
    Ray ray = test::random_ray(rng, 2.5);
    EllipsoidEval e = ellipsoid_forward(ray, f, kEps);
    if (!test::well_conditioned(e)) continue;
    ++tested;

    double a = rng.normal(), b = rng.normal(), c = rng.normal();
    if (!e.valid) c = 0.0;
    LocalGrads local = ellipsoid_backward(e, f, a, b, c);
    WorldGrads world = chain_to_world(ray, f, local);
    Vec6 g_xi = lie::backprop_pose(world.R, world.c, ell.pose);

    // One flat parameter vector: p (3), v (3), xi (6), log-scale (3).
    auto objective = [&](const Eigen::VectorXd& x) {
      Ellipsoid pert = ell;
      pert.pose.xi = x.segment<6>(6);
      pert.s = x.segment<3>(12);
      EllipsoidFrame fr = EllipsoidFrame::from(pert);
      EllipsoidEval ev =
          ellipsoid_forward(Ray{x.segment<3>(0), x.segment<3>(3)}, fr, kEps);
      return a * ev.intersection + b * ev.sign +
             (c != 0.0 ? c * ev.dist : 0.0);
    };
    Eigen::VectorXd x(15);
    x << ray.p, ray.v, ell.pose.xi, ell.s;
    Eigen::VectorXd fd = test::central_diff(objective, x, 1e-6);
    Eigen::VectorXd an(15);
    an << world.p, world.v, g_xi, world.log_scale;
    CHECK(test::max_rel_err(an, fd) < 1e-5);
  }
}

TEST_CASE("sign indicator agrees with quadric containment") {
  Rng rng(26);
  for (int trial = 0; trial < 10000; ++trial) {
    EllipsoidFrame f = test::random_frame(rng);
    Ray ray = test::random_ray(rng);
    EllipsoidEval e = ellipsoid_forward(ray, f, kEps);
    double q = test::quadric_value(f, e.p_loc, e.v_loc, 0.0);
    if (std::abs(q) < 1e-9) continue;  // boundary: both conventions defensible
    CHECK((e.sign < 0.0) == (q < 0.0));
  }
}

TEST_CASE("intersection indicator agrees with the line discriminant") {
  Rng rng(27);
  for (int trial = 0; trial < 10000; ++trial) {
    EllipsoidFrame f = test::random_frame(rng);
    Ray ray = test::random_ray(rng);
    EllipsoidEval e = ellipsoid_forward(ray, f, kEps);
    // Discriminant of the scaled-space quadratic for the infinite line.
    Vec3 o = e.p_loc.array() / f.r.array();
    Vec3 d = e.v_loc.array() / f.r.array();
    double aa = d.squaredNorm();
    double bb = 2.0 * o.dot(d);
    double cc = o.squaredNorm() - 1.0;
    double disc = bb * bb - 4.0 * aa * cc;
    if (std::abs(disc) < 1e-9) continue;
    CHECK((e.intersection >= 0.0) == (disc >= 0.0));
  }
}

TEST_CASE("directional derivative along the ray is exactly -1") {
  Rng rng(28);
  int tested = 0;
  while (tested < 500) {
    EllipsoidFrame f = test::random_frame(rng);
    Ray ray = test::random_ray(rng);
    EllipsoidEval e = ellipsoid_forward(ray, f, kEps);
    if (!e.valid || !test::well_conditioned(e)) continue;
    ++tested;
    LocalGrads g = ellipsoid_backward(e, f, 0.0, 0.0, 1.0);
    CHECK(std::abs(e.v_loc.dot(g.p_loc) + 1.0) < 1e-9);

    // And by central differences on the world-frame position.
    double h = 1e-6;
    EllipsoidEval ep =
        ellipsoid_forward(Ray{ray.p + h * ray.v, ray.v}, f, kEps);
    EllipsoidEval em =
        ellipsoid_forward(Ray{ray.p - h * ray.v, ray.v}, f, kEps);
    if (!ep.valid || !em.valid) continue;
    CHECK(std::abs((ep.dist - em.dist) / (2.0 * h) + 1.0) < 1e-6);
  }
}

TEST_CASE("sliding the origin along the ray shifts the distance linearly") {
  Rng rng(29);
  int tested = 0;
  while (tested < 500) {
    EllipsoidFrame f = test::random_frame(rng);
    Ray ray = test::random_ray(rng);
    EllipsoidEval e = ellipsoid_forward(ray, f, kEps);
    if (!e.valid || !test::well_conditioned(e)) continue;
    double t = rng.uniform(-0.05, 0.05);
    EllipsoidEval shifted =
        ellipsoid_forward(Ray{ray.p + t * ray.v, ray.v}, f, kEps);
    if (!shifted.valid) continue;
    ++tested;
    CHECK(shifted.dist == doctest::Approx(e.dist - t).epsilon(1e-9));
  }
}

TEST_CASE("rigid co-transform leaves indicators and distance unchanged") {
  Rng rng(30);
  for (int trial = 0; trial < 1000; ++trial) {
    EllipsoidFrame f = test::random_frame(rng);
    Ray ray = test::random_ray(rng);
    EllipsoidEval e = ellipsoid_forward(ray, f, kEps);

    Mat3 xr = lie::so3_exp(rng.uniform(0.0, 3.0) * rng.unit_vector());
    Vec3 xt = 3.0 * rng.normal3();
    EllipsoidFrame ft =
        EllipsoidFrame::from_parts(xr * f.R, xr * f.c + xt, f.r);
    EllipsoidEval et =
        ellipsoid_forward(Ray{xr * ray.p + xt, xr * ray.v}, ft, kEps);

    CHECK(std::abs(e.intersection - et.intersection) < 1e-9);
    CHECK(std::abs(e.sign - et.sign) < 1e-9);
    if (std::isfinite(e.dist) && std::isfinite(et.dist))
      CHECK(std::abs(e.dist - et.dist) < 1e-9);
    else
      CHECK(std::isfinite(e.dist) == std::isfinite(et.dist));
  }
}

TEST_CASE("closed form matches the bisection oracle on intersecting rays") {
  Rng rng(31);
  int tested = 0;
  while (tested < 2000) {
    EllipsoidFrame f = test::random_frame(rng);
    Ray ray = test::random_ray(rng);
    EllipsoidEval e = ellipsoid_forward(ray, f, kEps);
    if (!e.valid || e.intersection < 1e-3) continue;
    double oracle = test::bisect_ellipsoid_sddf(ray, f);
    if (!std::isfinite(oracle)) continue;
    ++tested;
    CHECK(std::abs(e.dist - oracle) < 1e-6 * (1.0 + std::abs(oracle)));
  }
}

TEST_CASE("degenerate direction quadratic flags the evaluation") {
  // Needle ellipsoid with the ray along the long axis: t0 collapses.
  EllipsoidFrame f = EllipsoidFrame::from_parts(Mat3::Identity(), Vec3::Zero(),
                                                Vec3(1.0, 1e-7, 1e-7));
  EllipsoidEval e =
      ellipsoid_forward(Ray{Vec3(-2, 0, 0), Vec3(1, 0, 0)}, f, kEps);
  CHECK(e.degenerate);
  CHECK_FALSE(e.valid);
  CHECK(std::isinf(e.dist));
  LocalGrads g = ellipsoid_backward(e, f, 1.0, 1.0, 1.0);
  CHECK(g.p_loc.allFinite());
  CHECK(g.v_loc.allFinite());
  CHECK(g.radii.allFinite());
}
