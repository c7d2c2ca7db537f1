#pragma once

#include <array>
#include <string>
#include <variant>
#include <vector>

#include "sddf/lie.hpp"
#include "sddf/types.hpp"

namespace sddf {

struct Sphere {
  Vec3 center;
  double radius;
};

struct Box {
  Vec3 lo;
  Vec3 hi;
};

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
};

/// Occupied space as a union of primitives. Meshes must be watertight for
/// the inside test to be meaningful.
struct Scene {
  std::vector<std::variant<Sphere, Box, TriMesh>> primitives;
};

/// Signed directional distance of the union under the outside-in convention:
/// outside points report the first boundary ahead (+inf on a miss), inside
/// points report the nearest boundary behind as a non-positive value.
double raycast_sddf(const Scene& scene, const Ray& ray);

/// Union membership. Analytic for spheres/boxes; crossing-parity majority
/// vote over three jittered rays for meshes.
bool scene_contains(const Scene& scene, const Vec3& p);

struct SensorModel {
  enum class Kind { kLidar, kPinhole };
  Kind kind = Kind::kLidar;
  // lidar
  int az_bins = 360;
  int el_bins = 180;
  // pinhole (z forward, x right, y down)
  int width = 640;
  int height = 480;
  double hfov_deg = 94.0;
  double vfov_deg = 77.0;

  lie::Rigid pose;

  /// Unit ray directions in the sensor frame. Lidar covers azimuth
  /// [-pi, pi) x elevation [-pi/2, pi/2]; pinhole shoots one ray through
  /// each pixel center.
  std::vector<Vec3> directions() const;
};

/// Casts every sensor ray against the scene; hitting rays become samples
/// with unit labels, misses are dropped. Throws if the sensor origin lies in
/// occupied space.
std::vector<TrainingSample> synthesize(const Scene& scene,
                                       const SensorModel& sensor);

/// For every sample appends a twin placed eps behind the observed surface
/// with distance label -eps and negative sign label.
std::vector<TrainingSample> augment_negative(
    const std::vector<TrainingSample>& samples, double eps);

/// Surface points for non-negative labels, ray origins for negative ones.
std::vector<Vec3> build_point_cloud(const std::vector<TrainingSample>& samples);

/// Binary dataset: header {magic, version, count}, then per record eight
/// little-endian float32 (p, v, f, reserved) and two signed bytes (i, s).
void write_dataset(const std::string& path,
                   const std::vector<TrainingSample>& samples);
std::vector<TrainingSample> read_dataset(const std::string& path);

/// Scene description file: JSON list of primitives; mesh paths resolve
/// relative to the scene file location.
Scene load_scene_json(const std::string& path);

/// Wavefront OBJ (v / f records, polygons triangulated as fans).
TriMesh load_obj(const std::string& path);

}  // namespace sddf
