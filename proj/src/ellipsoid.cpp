#include "sddf/ellipsoid.hpp"

#include <cmath>
#include <limits>

namespace sddf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Off-diagonal radii-square matrix applied to a componentwise product:
// (U x)_k = sum_{j != k} r_j'^2 x_j with r' the radius on the remaining axis.
Vec3 apply_u(const Vec3& r, const Vec3& x) {
  Vec3 r2 = r.cwiseProduct(r);
  return Vec3(r2.z() * x.y() + r2.y() * x.z(),
              r2.z() * x.x() + r2.x() * x.z(),
              r2.y() * x.x() + r2.x() * x.y());
}

}  // namespace

EllipsoidFrame EllipsoidFrame::from(const Ellipsoid& e) {
  lie::Rigid t = e.pose.compose();
  return from_parts(t.R, t.t, e.radii());
}

EllipsoidFrame EllipsoidFrame::from_parts(const Mat3& R, const Vec3& c,
                                          const Vec3& r) {
  EllipsoidFrame f;
  f.R = R;
  f.c = c;
  f.r = r;
  f.det_q0 = r.x() * r.y() * r.z();
  f.q0_sq = r.cwiseProduct(r);
  Vec3 q1(f.det_q0 / r.x(), f.det_q0 / r.y(), f.det_q0 / r.z());
  f.q1_sq = q1.cwiseProduct(q1);
  return f;
}

std::pair<Vec3, Vec3> to_local(const Ray& ray, const EllipsoidFrame& frame) {
  return {frame.R.transpose() * (ray.p - frame.c), frame.R.transpose() * ray.v};
}

EllipsoidEval ellipsoid_forward(const Ray& ray, const EllipsoidFrame& frame,
                                double eps) {
  EllipsoidEval e;
  auto [p, v] = to_local(ray, frame);
  e.p_loc = p;
  e.v_loc = v;
  e.w_loc = p.cross(v);

  e.t0 = v.cwiseProduct(v).dot(frame.q1_sq);
  e.t1 = e.w_loc.cwiseProduct(e.w_loc).dot(frame.q0_sq);
  e.t2 = p.cwiseProduct(v).dot(frame.q1_sq);
  e.intersection = e.t0 - e.t1;
  e.sign = p.cwiseProduct(p).dot(frame.q1_sq) - frame.det_q0 * frame.det_q0;
  e.beta = std::max(e.intersection, 0.0) + eps;

  if (e.t0 <= kDegenerateT0) {
    e.degenerate = true;
    e.valid = false;
    e.dist = kInf;
    e.f_candidate = kInf;
    return e;
  }

  e.f_candidate = -(frame.det_q0 * std::sqrt(e.beta) + e.t2) / e.t0;
  // surface-behind gate: candidate * sign < 0 means the hit is behind the ray
  e.valid = e.f_candidate * e.sign >= 0.0;
  e.dist = e.valid ? e.f_candidate : kInf;
  return e;
}

LocalGrads ellipsoid_backward(const EllipsoidEval& eval,
                              const EllipsoidFrame& frame, double d_i,
                              double d_s, double d_f) {
  const Vec3& p = eval.p_loc;
  const Vec3& v = eval.v_loc;
  const Vec3& w = eval.w_loc;
  const Vec3& r = frame.r;

  Vec3 q0sq_w = frame.q0_sq.cwiseProduct(w);

  // dt0, dt1, dt2 w.r.t. (p', v', r)
  Vec3 g_t0_v = 2.0 * frame.q1_sq.cwiseProduct(v);
  Vec3 g_t0_r = 2.0 * r.cwiseProduct(apply_u(r, v.cwiseProduct(v)));
  Vec3 g_t1_p = 2.0 * v.cross(q0sq_w);
  Vec3 g_t1_v = -2.0 * p.cross(q0sq_w);
  Vec3 g_t1_r = 2.0 * w.cwiseProduct(w).cwiseProduct(r);
  Vec3 g_t2_p = frame.q1_sq.cwiseProduct(v);
  Vec3 g_t2_v = frame.q1_sq.cwiseProduct(p);
  Vec3 g_t2_r = 2.0 * r.cwiseProduct(apply_u(r, p.cwiseProduct(v)));

  Vec3 g_i_p = -g_t1_p;
  Vec3 g_i_v = g_t0_v - g_t1_v;
  Vec3 g_i_r = g_t0_r - g_t1_r;

  Vec3 g_s_p = 2.0 * frame.q1_sq.cwiseProduct(p);
  Vec3 g_s_r =
      2.0 * r.cwiseProduct(apply_u(r, p.cwiseProduct(p)) - frame.q1_sq);

  LocalGrads g;
  g.p_loc = d_i * g_i_p + d_s * g_s_p;
  g.v_loc = d_i * g_i_v;
  g.radii = d_i * g_i_r + d_s * g_s_r;

  // Distance gradients only exist for a finite, non-degenerate evaluation.
  if (d_f != 0.0 && eval.valid && !eval.degenerate) {
    double sqrt_beta = std::sqrt(eval.beta);
    double df_di = eval.intersection > 0.0
                       ? -frame.det_q0 / (2.0 * eval.t0 * sqrt_beta)
                       : 0.0;
    double df_dt0 = -eval.f_candidate / eval.t0;
    double df_dt2 = -1.0 / eval.t0;
    Vec3 q1_one(frame.det_q0 / r.x(), frame.det_q0 / r.y(),
                frame.det_q0 / r.z());
    Vec3 df_dr_direct = -(sqrt_beta / eval.t0) * q1_one;

    g.p_loc += d_f * (df_di * g_i_p + df_dt2 * g_t2_p);
    g.v_loc += d_f * (df_di * g_i_v + df_dt0 * g_t0_v + df_dt2 * g_t2_v);
    g.radii += d_f * (df_di * g_i_r + df_dt0 * g_t0_r + df_dt2 * g_t2_r +
                      df_dr_direct);
  }
  return g;
}

WorldGrads chain_to_world(const Ray& ray, const EllipsoidFrame& frame,
                          const LocalGrads& local) {
  WorldGrads g;
  g.p = frame.R * local.p_loc;
  g.v = frame.R * local.v_loc;
  g.c = -g.p;
  // Both p' = R^T (p - c) and v' = R^T v depend on R.
  g.R = (ray.p - frame.c) * local.p_loc.transpose() +
        ray.v * local.v_loc.transpose();
  g.log_scale = frame.r.cwiseProduct(local.radii);
  return g;
}

}  // namespace sddf
