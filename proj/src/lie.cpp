#include "sddf/lie.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace sddf::lie {

Mat3 skew(const Vec3& a) {
  Mat3 s;
  s << 0.0, -a.z(), a.y(),  //
      a.z(), 0.0, -a.x(),   //
      -a.y(), a.x(), 0.0;
  return s;
}

Vec3 vee(const Mat3& a) { return Vec3(a(2, 1), a(0, 2), a(1, 0)); }

namespace detail {

TrigCoeffs trig_coeffs(double t, bool force_taylor) {
  TrigCoeffs c;
  if (force_taylor || t < kTaylorThreshold) {
    // The theta^4 / theta^5 ratios cancel catastrophically in plain trig
    // below ~1e-1, so the series branch carries enough terms to stay within
    // 1e-12 of the exact values at the crossover.
    double t2 = t * t, t4 = t2 * t2, t6 = t4 * t2;
    c.sin_t = 1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0;
    c.one_cos = 0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0;
    c.t_sin = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0;
    c.q_a = -c.one_cos;
    c.q_b = c.t_sin;
    c.q_c = -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t6 / 453600.0;
    c.q_d = 1.0 / 60.0 - t2 / 1260.0 + t4 / 60480.0 - t6 / 4989600.0;
  } else {
    double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
    double st = std::sin(t);
    double half = std::sin(0.5 * t);
    double one_ct = 2.0 * half * half;  // 1 - cos(t) without cancellation
    c.sin_t = st / t;
    c.one_cos = one_ct / t2;
    c.t_sin = (t - st) / t3;
    c.q_a = -c.one_cos;
    c.q_b = c.t_sin;
    c.q_c = st / t3 - 2.0 * one_ct / t4;
    c.q_d = -one_ct / t4 + 3.0 * (t - st) / t5;
  }
  return c;
}

}  // namespace detail

Mat3 so3_exp(const Vec3& theta) {
  auto c = detail::trig_coeffs(theta.norm());
  Mat3 th = skew(theta);
  return Mat3::Identity() + c.sin_t * th + c.one_cos * th * th;
}

Vec3 so3_log(const Mat3& r) {
  double cos_angle = 0.5 * (r.trace() - 1.0);
  cos_angle = std::min(1.0, std::max(-1.0, cos_angle));
  double angle = std::acos(cos_angle);
  Vec3 axis_part(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (angle < 1e-7) {
    return 0.5 * axis_part;  // first-order
  }
  if (angle > M_PI - 1e-5) {
    // Near pi the skew part degenerates; recover the axis from the symmetric
    // part via R + R^T = 2 cos(a) I + 2 (1 - cos a) nn^T.
    Mat3 nnt = (0.5 * (r + r.transpose()) - cos_angle * Mat3::Identity()) /
               (1.0 - cos_angle);
    int k = 0;
    nnt.diagonal().maxCoeff(&k);
    Vec3 n = nnt.col(k) / std::sqrt(std::max(nnt(k, k), 1e-300));
    if (axis_part.dot(n) < 0.0) n = -n;
    return angle * n;
  }
  return (0.5 * angle / std::sin(angle)) * axis_part;
}

Mat3 so3_right_jacobian(const Vec3& theta) {
  auto c = detail::trig_coeffs(theta.norm());
  Mat3 th = skew(theta);
  return Mat3::Identity() - c.one_cos * th + c.t_sin * th * th;
}

Rigid se3_exp(const Vec6& xi) {
  Vec3 rho = xi.head<3>();
  Vec3 theta = xi.tail<3>();
  Rigid t;
  t.R = so3_exp(theta);
  t.t = so3_right_jacobian(theta).transpose() * rho;
  return t;
}

Vec6 se3_log(const Rigid& t) {
  Vec3 theta = so3_log(t.R);
  Mat3 jrt = so3_right_jacobian(theta).transpose();
  Vec6 xi;
  xi.head<3>() = jrt.partialPivLu().solve(t.t);
  xi.tail<3>() = theta;
  return xi;
}

namespace {

// Coupling block: L = R * Q, where Q is the translation-rotation block of the
// SE(3) right Jacobian.
Mat3 coupling_l(const Vec3& rho, const Vec3& theta) {
  auto c = detail::trig_coeffs(theta.norm());
  Vec3 txr = theta.cross(rho);
  Mat3 l = c.q_a * skew(rho);
  l -= c.q_b * (skew(txr) + rho * theta.transpose() -
                theta.dot(rho) * Mat3::Identity());
  l += c.q_c * txr * theta.transpose();
  l -= c.q_d * theta.cross(txr) * theta.transpose();
  return l;
}

}  // namespace

Mat6 se3_right_jacobian(const Vec6& xi) {
  Vec3 rho = xi.head<3>();
  Vec3 theta = xi.tail<3>();
  Mat3 jr = so3_right_jacobian(theta);
  Mat3 r = so3_exp(theta);
  Mat3 q = r.transpose() * coupling_l(rho, theta);
  Mat6 j = Mat6::Zero();
  j.topLeftCorner<3, 3>() = jr;
  j.topRightCorner<3, 3>() = q;
  j.bottomRightCorner<3, 3>() = jr;
  return j;
}

Vec6 backprop_pose(const Mat3& grad_r, const Vec3& grad_c, const Vec6& xi,
                   const Mat3& composed_r) {
  Mat3 w = composed_r.transpose() * grad_r;
  Vec6 g;
  g.head<3>() = composed_r.transpose() * grad_c;
  g.tail<3>() = Vec3(w(2, 1) - w(1, 2), w(0, 2) - w(2, 0), w(1, 0) - w(0, 1));
  return se3_right_jacobian(xi).transpose() * g;
}

Vec6 backprop_pose(const Mat3& grad_r, const Vec3& grad_c,
                   const PoseParam& pose) {
  Mat3 composed_r = pose.base.R * so3_exp(pose.xi.tail<3>());
  return backprop_pose(grad_r, grad_c, pose.xi, composed_r);
}

}  // namespace sddf::lie
