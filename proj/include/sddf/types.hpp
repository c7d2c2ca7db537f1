#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace sddf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// A query ray: origin and (unit) viewing direction, world frame.
struct Ray {
  Vec3 p;
  Vec3 v;
};

/// One supervision record: ray plus distance / intersection / sign labels.
/// Sensor-derived samples carry i=1, s=1; augmented negatives carry s=-1.
struct TrainingSample {
  Vec3 p;
  Vec3 v;
  double f = 0.0;
  int i = 1;
  int s = 1;
};

}  // namespace sddf
