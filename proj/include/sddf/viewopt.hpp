#pragma once

#include <string>
#include <vector>

#include "sddf/model.hpp"
#include "sddf/scene.hpp"

namespace sddf {

struct ViewPose {
  Vec3 p = Vec3::Zero();
  Mat3 R = Mat3::Identity();

  lie::Rigid rigid() const { return {R, p}; }
};

struct ViewOptConfig {
  double w_o = 1.0;   // overlap
  double w_v = 1.0;   // visibility
  double w_r = 10.0;  // collision risk
  double d_max = 1.0;       // pairwise distance clamp for overlap
  double d_safe = 0.3;      // collision margin
  double d_view_max = 10.0; // visibility clamp (also stands in for misses)
  int risk_rays = 64;
  int steps = 60;
  double lr = 0.02;
  SensorModel sensor;  // intrinsics only; pose comes from the ViewPose

  ViewOptConfig() {
    sensor.kind = SensorModel::Kind::kPinhole;
    sensor.width = 32;
    sensor.height = 24;
    sensor.hfov_deg = 90.0;
    sensor.vfov_deg = 70.0;
  }
};

/// Negative mean half-square of the forward distances, clamped to
/// [0, d_view_max]; misses count at the clamp.
double visibility_loss(const std::vector<double>& f_hats, double d_view_max);

/// Negative mean clamped pairwise distance between two clouds. Empty clouds
/// yield 0 (with a warning on stderr).
double overlap_loss(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                    double d_max);

/// Mean hinge on the safety margin over the risk-ray predictions.
double risk_loss(const std::vector<double>& f_risk, double d_safe);

/// Deterministic Fibonacci-lattice directions on the unit sphere.
std::vector<Vec3> fibonacci_sphere(int n);

struct ViewOptTraceRow {
  int step = 0;
  double total = 0.0, overlap = 0.0, visibility = 0.0, risk = 0.0;
};

struct ViewOptResult {
  ViewPose pose;
  std::vector<ViewOptTraceRow> trace;
};

/// Gradient descent (Adam over position and a local rotation increment) on
/// w_o * overlap + w_v * visibility + w_r * risk against the fixed cloud
/// observed from pose_t. Returns the best pose seen, so the final loss never
/// exceeds the initial one. Throws if every ray misses at the initial pose.
ViewOptResult next_best_view(const SddfModel& model, const ViewPose& pose_t,
                             const ViewPose& init_next,
                             const ViewOptConfig& cfg);

struct WaypointReportRow {
  int index = 0;
  double loss_before = 0.0, loss_after = 0.0;
  double visibility_before = 0.0, visibility_after = 0.0;  // -L_v, larger = more seen
  double min_risk_after = 0.0;  // smallest finite risk-ray distance
};

struct WaypointOptResult {
  std::vector<ViewPose> poses;
  std::vector<WaypointReportRow> report;
};

/// Every stride-th point of a cloud; the thinning applied to older reference
/// clouds during waypoint optimization.
std::vector<Vec3> downsample_stride(const std::vector<Vec3>& cloud,
                                    int stride);

/// Incrementally optimizes waypoints 1..n-1 against the accumulated clouds of
/// earlier waypoints; cloud j is downsampled with stride i - j when
/// optimizing waypoint i. A single waypoint is returned unchanged.
WaypointOptResult optimize_waypoints(const SddfModel& model,
                                     const std::vector<ViewPose>& waypoints,
                                     const ViewOptConfig& cfg);

std::vector<ViewPose> read_waypoints(const std::string& path);
void write_waypoints(const std::string& path,
                     const std::vector<ViewPose>& poses);
void write_coverage_csv(const std::string& path,
                        const std::vector<WaypointReportRow>& rows);

}  // namespace sddf
