#pragma once

#include <string>
#include <vector>

#include "sddf/model.hpp"
#include "sddf/scene.hpp"

namespace sddf {

/// Row-major distance grid in meters; misses hold +inf. Row 0 is the top of
/// the image.
struct DistanceImage {
  int width = 0;
  int height = 0;
  std::vector<float> values;
  lie::Rigid pose;

  float at(int row, int col) const { return values[row * width + col]; }
};

/// One model query per pixel ray; no marching or integration.
DistanceImage render_distance_image(const SddfModel& model,
                                    const lie::Rigid& pose,
                                    const SensorModel& sensor);

/// World-frame surface points for every finite-distance ray.
std::vector<Vec3> predict_pointcloud(const SddfModel& model,
                                     const lie::Rigid& pose,
                                     const std::vector<Vec3>& directions);

/// Grayscale portable float map ("Pf", little-endian, bottom row first).
void write_pfm(const std::string& path, const DistanceImage& img);
DistanceImage read_pfm(const std::string& path);

/// 8-bit PNG with distances mapped linearly from [0, d_max] to black..white;
/// misses render white.
void write_png(const std::string& path, const DistanceImage& img,
               double d_max);

}  // namespace sddf
