#pragma once

#include <utility>

#include "sddf/lie.hpp"
#include "sddf/types.hpp"

namespace sddf {

/// Scaled-axis ellipsoid with a learnable pose increment and log-radii.
/// Effective radii are r0 * exp(s) componentwise; r0 and the pose base stay
/// fixed after initialization.
struct Ellipsoid {
  lie::PoseParam pose;
  Vec3 r0 = Vec3::Ones();
  Vec3 s = Vec3::Zero();

  Vec3 radii() const { return r0.cwiseProduct(s.array().exp().matrix()); }
};

/// Immutable per-evaluation snapshot of an ellipsoid: composed pose plus the
/// diagonal quadric terms. Rebuilt whenever parameters change.
struct EllipsoidFrame {
  Mat3 R;
  Vec3 c;
  Vec3 r;
  double det_q0;  // r1 r2 r3
  Vec3 q0_sq;     // r_i^2
  Vec3 q1_sq;     // (det_q0 / r_i)^2

  static EllipsoidFrame from(const Ellipsoid& e);
  static EllipsoidFrame from_parts(const Mat3& R, const Vec3& c, const Vec3& r);
};

/// Forward evaluation of one ellipsoid against one ray. Keeps the local-frame
/// quantities needed to run the analytical backward pass.
struct EllipsoidEval {
  double intersection = 0.0;  // line-hit indicator, >= 0 iff the line meets E
  double sign = 0.0;          // containment indicator, < 0 iff p inside E
  double dist = 0.0;          // distance prior, +inf when the surface is behind
  bool valid = false;         // false iff dist is +inf
  bool degenerate = false;    // direction quadratic vanished

  Vec3 p_loc, v_loc, w_loc;
  double t0 = 0.0, t1 = 0.0, t2 = 0.0;
  double beta = 0.0;          // max(intersection, 0) + eps
  double f_candidate = 0.0;   // quadratic root before the validity gate
};

/// Gradients of a scalar objective w.r.t. the local-frame inputs and radii.
struct LocalGrads {
  Vec3 p_loc = Vec3::Zero();
  Vec3 v_loc = Vec3::Zero();
  Vec3 radii = Vec3::Zero();
};

/// Gradients mapped to world-frame ray inputs and ellipsoid parameters.
/// log_scale already includes the chain through r = r0 * exp(s).
struct WorldGrads {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Mat3 R = Mat3::Zero();
  Vec3 c = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
};

/// Ray into the ellipsoid's local frame: p' = R^T (p - c), v' = R^T v.
std::pair<Vec3, Vec3> to_local(const Ray& ray, const EllipsoidFrame& frame);

EllipsoidEval ellipsoid_forward(const Ray& ray, const EllipsoidFrame& frame,
                                double eps);

/// Analytical gradients of d_i * intersection + d_s * sign + d_f * dist.
/// Distance gradients are dropped when the evaluation is invalid or
/// degenerate; indicator gradients are always produced.
LocalGrads ellipsoid_backward(const EllipsoidEval& eval,
                              const EllipsoidFrame& frame, double d_i,
                              double d_s, double d_f);

WorldGrads chain_to_world(const Ray& ray, const EllipsoidFrame& frame,
                          const LocalGrads& local);

/// Direction quadratic below this is treated as degenerate.
inline constexpr double kDegenerateT0 = 1e-12;

/// Smallest radius allowed at initialization time.
inline constexpr double kMinRadius = 0.005;

}  // namespace sddf
