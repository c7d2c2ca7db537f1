#include "sddf/viewopt.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include <json.hpp>

#include "sddf/parallel.hpp"

namespace sddf {

double visibility_loss(const std::vector<double>& f_hats, double d_view_max) {
  if (f_hats.empty()) return 0.0;
  double acc = 0.0;
  for (double f : f_hats) {
    double t = std::isfinite(f) ? std::min(std::max(f, 0.0), d_view_max)
                                : d_view_max;
    acc += t * t;
  }
  return -acc / (2.0 * static_cast<double>(f_hats.size()));
}

double overlap_loss(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                    double d_max) {
  if (a.empty() || b.empty()) {
    std::cerr << "overlap_loss: empty point cloud, returning 0\n";
    return 0.0;
  }
  double acc = 0.0;
  for (const auto& p : a)
    for (const auto& q : b) acc += std::min((p - q).norm(), d_max);
  return -acc / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

double risk_loss(const std::vector<double>& f_risk, double d_safe) {
  if (f_risk.empty()) return 0.0;
  double acc = 0.0;
  for (double f : f_risk) {
    if (std::isfinite(f)) acc += std::max(d_safe - f, 0.0);
  }
  return acc / static_cast<double>(f_risk.size());
}

std::vector<Vec3> fibonacci_sphere(int n) {
  std::vector<Vec3> dirs;
  dirs.reserve(n);
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    double z = 1.0 - 2.0 * (i + 0.5) / n;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double a = golden * i;
    dirs.emplace_back(r * std::cos(a), r * std::sin(a), z);
  }
  return dirs;
}

namespace {

struct PoseEval {
  double total = 0.0, overlap = 0.0, visibility = 0.0, risk = 0.0;
  Vec3 g_p = Vec3::Zero();
  Vec3 g_theta = Vec3::Zero();  // local right-increment at the current R
  int finite_rays = 0;
  double min_finite_risk = std::numeric_limits<double>::infinity();
  std::vector<Vec3> cloud;
};

PoseEval evaluate_pose(const SddfModel& model, const Vec3& p, const Mat3& R,
                       const std::vector<Vec3>& dirs,
                       const std::vector<Vec3>& risk_dirs,
                       const std::vector<Vec3>& reference,
                       const ViewOptConfig& cfg, bool with_grads) {
  PoseEval ev;
  const int n = static_cast<int>(dirs.size());

  struct RayOut {
    double f = std::numeric_limits<double>::infinity();
    Vec3 gp = Vec3::Zero(), gv = Vec3::Zero();
  };
  std::vector<RayOut> rays(n);
  ThreadPool::global().parallel_for(n, [&](int b, int e, int) {
    for (int i = b; i < e; ++i) {
      Ray ray{p, R * dirs[i]};
      rays[i].f = model_forward(ray, model).f_hat;
      if (with_grads && std::isfinite(rays[i].f)) {
        InputGrads g = input_gradients(ray, model);
        rays[i].gp = g.p;
        rays[i].gv = g.v;
      }
    }
  });

  std::vector<double> f_hats(n);
  for (int i = 0; i < n; ++i) {
    f_hats[i] = rays[i].f;
    if (std::isfinite(rays[i].f)) {
      ++ev.finite_rays;
      ev.cloud.push_back(p + rays[i].f * (R * dirs[i]));
    }
  }
  ev.visibility = visibility_loss(f_hats, cfg.d_view_max);
  ev.overlap = reference.empty() || ev.cloud.empty()
                   ? 0.0
                   : overlap_loss(reference, ev.cloud, cfg.d_max);

  // Risk rays are world-frame and depend on position only.
  std::vector<double> f_risk(risk_dirs.size());
  std::vector<Vec3> risk_gp(risk_dirs.size(), Vec3::Zero());
  ThreadPool::global().parallel_for(
      static_cast<int>(risk_dirs.size()), [&](int b, int e, int) {
        for (int i = b; i < e; ++i) {
          Ray ray{p, risk_dirs[i]};
          f_risk[i] = model_forward(ray, model).f_hat;
          if (with_grads && std::isfinite(f_risk[i]))
            risk_gp[i] = input_gradients(ray, model).p;
        }
      });
  ev.risk = risk_loss(f_risk, cfg.d_safe);
  for (double f : f_risk)
    if (std::isfinite(f)) ev.min_finite_risk = std::min(ev.min_finite_risk, f);

  ev.total = cfg.w_o * ev.overlap + cfg.w_v * ev.visibility + cfg.w_r * ev.risk;
  if (!with_grads) return ev;

  const double inv_n = 1.0 / static_cast<double>(n);
  const double pq = reference.empty() || ev.cloud.empty()
                        ? 0.0
                        : 1.0 / (static_cast<double>(reference.size()) *
                                 static_cast<double>(ev.cloud.size()));
  int cloud_idx = 0;
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(rays[i].f)) continue;
    Vec3 v_world = R * dirs[i];
    Vec3 q = ev.cloud[cloud_idx++];

    // Overlap upstream on the predicted point.
    Vec3 u_q = Vec3::Zero();
    if (pq > 0.0) {
      for (const auto& a : reference) {
        Vec3 d = q - a;
        double dist = d.norm();
        if (dist < cfg.d_max && dist > 1e-12) u_q += d / dist;
      }
      u_q *= -cfg.w_o * pq;
    }

    // Visibility upstream on the distance.
    double t = std::min(std::max(rays[i].f, 0.0), cfg.d_view_max);
    double u_f = 0.0;
    if (rays[i].f > 0.0 && rays[i].f < cfg.d_view_max)
      u_f = -cfg.w_v * inv_n * t;
    u_f += u_q.dot(v_world);  // q = p + f v

    Vec3 g_v = rays[i].f * u_q + u_f * rays[i].gv;
    ev.g_p += u_q + u_f * rays[i].gp;
    ev.g_theta += dirs[i].cross(R.transpose() * g_v);
  }

  const double inv_m = 1.0 / std::max<size_t>(1, risk_dirs.size());
  for (size_t i = 0; i < risk_dirs.size(); ++i) {
    if (!std::isfinite(f_risk[i])) continue;
    if (f_risk[i] < cfg.d_safe) ev.g_p += -cfg.w_r * inv_m * risk_gp[i];
  }
  return ev;
}

}  // namespace

namespace {

ViewOptResult optimize_against(const SddfModel& model,
                               const std::vector<Vec3>& reference,
                               const ViewPose& init_next,
                               const ViewOptConfig& cfg,
                               const std::vector<Vec3>& dirs,
                               const std::vector<Vec3>& risk_dirs) {
  ViewOptResult result;
  Vec3 p = init_next.p;
  Mat3 r0 = init_next.R;
  Vec3 theta = Vec3::Zero();  // accumulated increment: R = r0 * exp(theta)

  PoseEval ev = evaluate_pose(model, p, r0, dirs, risk_dirs, reference, cfg,
                              cfg.steps > 0);
  if (ev.finite_rays == 0)
    throw std::runtime_error(
        "next_best_view: every ray misses at the initial pose");

  result.pose = init_next;
  double best = ev.total;
  result.trace.push_back({0, ev.total, ev.overlap, ev.visibility, ev.risk});

  // Adam over [p; theta].
  Vec6 m = Vec6::Zero(), v = Vec6::Zero();
  const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;

  for (int step = 1; step <= cfg.steps; ++step) {
    Mat3 r = r0 * lie::so3_exp(theta);
    Vec6 g;
    g.head<3>() = ev.g_p;
    // Map the right-increment gradient at R back to the accumulated theta.
    g.tail<3>() = lie::so3_right_jacobian(theta).transpose() * ev.g_theta;

    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    double bc1 = 1.0 - std::pow(b1, step);
    double bc2 = 1.0 - std::pow(b2, step);
    Vec6 update;
    for (int k = 0; k < 6; ++k)
      update[k] = cfg.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + adam_eps);

    Vec3 p_new = p - update.head<3>();
    Vec3 theta_new = theta - update.tail<3>();
    if (!p_new.allFinite() || !theta_new.allFinite()) break;
    p = p_new;
    theta = theta_new;

    r = r0 * lie::so3_exp(theta);
    ev = evaluate_pose(model, p, r, dirs, risk_dirs, reference, cfg,
                       step < cfg.steps);
    result.trace.push_back({step, ev.total, ev.overlap, ev.visibility, ev.risk});
    if (ev.finite_rays > 0 && ev.total < best) {
      best = ev.total;
      result.pose.p = p;
      result.pose.R = r;
    }
  }
  return result;
}

}  // namespace

ViewOptResult next_best_view(const SddfModel& model, const ViewPose& pose_t,
                             const ViewPose& init_next,
                             const ViewOptConfig& cfg) {
  std::vector<Vec3> dirs = cfg.sensor.directions();
  std::vector<Vec3> risk_dirs = fibonacci_sphere(cfg.risk_rays);
  // Fixed reference cloud observed from the previous pose.
  PoseEval ref_eval =
      evaluate_pose(model, pose_t.p, pose_t.R, dirs, risk_dirs, {}, cfg, false);
  return optimize_against(model, ref_eval.cloud, init_next, cfg, dirs,
                          risk_dirs);
}

std::vector<Vec3> downsample_stride(const std::vector<Vec3>& cloud,
                                    int stride) {
  if (stride <= 1) return cloud;
  std::vector<Vec3> out;
  out.reserve(cloud.size() / stride + 1);
  for (size_t i = 0; i < cloud.size(); i += stride) out.push_back(cloud[i]);
  return out;
}

WaypointOptResult optimize_waypoints(const SddfModel& model,
                                     const std::vector<ViewPose>& waypoints,
                                     const ViewOptConfig& cfg) {
  if (waypoints.empty()) return {};
  std::vector<Vec3> dirs = cfg.sensor.directions();
  std::vector<Vec3> risk_dirs = fibonacci_sphere(cfg.risk_rays);

  WaypointOptResult result;
  result.poses.push_back(waypoints.front());

  std::vector<std::vector<Vec3>> clouds;
  clouds.push_back(evaluate_pose(model, waypoints[0].p, waypoints[0].R, dirs,
                                 risk_dirs, {}, cfg, false)
                       .cloud);

  for (int i = 1; i < static_cast<int>(waypoints.size()); ++i) {
    // Older clouds are thinned proportionally to their age.
    std::vector<Vec3> reference;
    for (int j = 0; j < i; ++j) {
      std::vector<Vec3> part = downsample_stride(clouds[j], i - j);
      reference.insert(reference.end(), part.begin(), part.end());
    }

    PoseEval before = evaluate_pose(model, waypoints[i].p, waypoints[i].R, dirs,
                                    risk_dirs, reference, cfg, false);

    ViewOptResult opt =
        optimize_against(model, reference, waypoints[i], cfg, dirs, risk_dirs);
    // Re-evaluate against the accumulated reference for reporting.
    PoseEval after = evaluate_pose(model, opt.pose.p, opt.pose.R, dirs,
                                   risk_dirs, reference, cfg, false);

    WaypointReportRow row;
    row.index = i;
    row.loss_before = before.total;
    row.loss_after = after.total;
    row.visibility_before = -before.visibility;
    row.visibility_after = -after.visibility;
    row.min_risk_after = after.min_finite_risk;
    result.report.push_back(row);
    result.poses.push_back(opt.pose);
    clouds.push_back(after.cloud);
  }
  return result;
}

std::vector<ViewPose> read_waypoints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read waypoints: " + path);
  nlohmann::json doc = nlohmann::json::parse(in);
  std::vector<ViewPose> poses;
  for (const auto& e : doc) {
    ViewPose pose;
    for (int k = 0; k < 3; ++k) pose.p[k] = e.at("p").at(k).get<double>();
    if (e.contains("R")) {
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
          pose.R(r, c) = e.at("R").at(3 * r + c).get<double>();
    }
    poses.push_back(pose);
  }
  return poses;
}

void write_waypoints(const std::string& path,
                     const std::vector<ViewPose>& poses) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& pose : poses) {
    nlohmann::json e;
    e["p"] = {pose.p.x(), pose.p.y(), pose.p.z()};
    std::vector<double> r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.push_back(pose.R(i, j));
    e["R"] = r;
    arr.push_back(e);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write waypoints: " + path);
  out << arr.dump(2) << "\n";
}

void write_coverage_csv(const std::string& path,
                        const std::vector<WaypointReportRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write coverage report: " + path);
  f << "waypoint,loss_before,loss_after,visibility_before,visibility_after,"
       "min_risk_after\n";
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.index,
                  r.loss_before, r.loss_after, r.visibility_before,
                  r.visibility_after, r.min_risk_after);
    f << buf;
  }
}

}  // namespace sddf
