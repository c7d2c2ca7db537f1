#pragma once

#include "sddf/types.hpp"

namespace sddf::lie {

/// Skew-symmetric matrix such that skew(a) * b = a x b.
Mat3 skew(const Vec3& a);

/// Inverse of skew for exactly skew-symmetric input.
Vec3 vee(const Mat3& a);

/// Rodrigues rotation exp(skew(theta)).
Mat3 so3_exp(const Vec3& theta);

/// Rotation vector with norm in [0, pi].
Vec3 so3_log(const Mat3& r);

/// Right Jacobian of SO(3): J_r = I - c1*skew + c2*skew^2.
Mat3 so3_right_jacobian(const Vec3& theta);

/// Rigid transform (rotation + translation).
struct Rigid {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Rigid() = default;
  Rigid(const Mat3& rot, const Vec3& trans) : R(rot), t(trans) {}

  Vec3 operator*(const Vec3& x) const { return R * x + t; }
  Rigid operator*(const Rigid& o) const { return {R * o.R, R * o.t + t}; }
  Rigid inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
};

/// Twist convention: xi = (rho, theta) with translation block first.
Rigid se3_exp(const Vec6& xi);

/// Local logarithm; inverse of se3_exp for rotation angles below pi.
Vec6 se3_log(const Rigid& t);

/// Right Jacobian of SE(3), block form [[J_r(theta), Q], [0, J_r(theta)]]:
/// se3_exp(xi + d) ~= se3_exp(xi) * se3_exp(se3_right_jacobian(xi) * d).
Mat6 se3_right_jacobian(const Vec6& xi);

/// Learnable pose: fixed base transform composed with an exponential
/// increment. The base is never touched by training.
struct PoseParam {
  Rigid base;
  Vec6 xi = Vec6::Zero();

  Rigid compose() const { return base * se3_exp(xi); }
};

/// Pulls a loss gradient taken w.r.t. the composed rotation/translation back
/// to the twist increment. grad_r and grad_c are d(loss)/d(entries of R) and
/// d(loss)/d(c) for the composed transform (R, c) = base * exp(xi).
Vec6 backprop_pose(const Mat3& grad_r, const Vec3& grad_c,
                   const PoseParam& pose);

/// Same, with the composed rotation already at hand.
Vec6 backprop_pose(const Mat3& grad_r, const Vec3& grad_c, const Vec6& xi,
                   const Mat3& composed_r);

namespace detail {

/// Trig ratio coefficients shared by the maps above. force_taylor selects the
/// series branch regardless of the magnitude of theta (used by tests to pin
/// branch agreement).
struct TrigCoeffs {
  double sin_t;     // sin|t| / |t|
  double one_cos;   // (1 - cos|t|) / |t|^2
  double t_sin;     // (|t| - sin|t|) / |t|^3
  double q_a;       // (cos|t| - 1) / |t|^2
  double q_b;       // (|t| - sin|t|) / |t|^3
  double q_c;       // sin|t|/|t|^3 + 2(cos|t| - 1)/|t|^4
  double q_d;       // (cos|t| - 1)/|t|^4 + 3(|t| - sin|t|)/|t|^5
};
TrigCoeffs trig_coeffs(double theta_norm, bool force_taylor = false);

constexpr double kTaylorThreshold = 0.1;

}  // namespace detail

}  // namespace sddf::lie
