#pragma once

#include <string>
#include <vector>

#include "sddf/ellipsoid.hpp"
#include "sddf/types.hpp"

namespace sddf {

struct ClusterSet {
  std::vector<int> assignment;   // point index -> cluster
  std::vector<Vec3> centroids;
  int count = 0;
};

struct KMeansConfig {
  int max_iter = 100;
  std::uint64_t seed = 0;
};

/// K-means++ seeding followed by Lloyd iterations until the assignment is
/// stable or max_iter is hit. Empty clusters are reseeded from the point
/// farthest from its current centroid. Deterministic given the seed.
ClusterSet kmeans_pp(const std::vector<Vec3>& points, int k,
                     const KMeansConfig& cfg);

struct EllipsoidFit {
  Mat3 R;
  Vec3 c;
  Vec3 r;
};

/// PCA fit of one ellipsoid: centroid, eigenvector rotation (determinant
/// corrected to +1), radii 3 * sqrt(|eigenvalue|) clamped to the minimum
/// radius. Eigenvalues sorted descending, ties keeping solver order.
EllipsoidFit single_ellipsoid_init(const std::vector<Vec3>& points);

struct MultiInitConfig {
  int neighbors = 8;        // coplanarity candidates per flat cluster
  double beta_max = 0.05;   // flatness bound (mean |projection|, meters)
  double eta_max = 0.05;    // coplanarity bound (meters)
  std::uint64_t seed = 0;
  KMeansConfig kmeans;
};

struct MultiInitResult {
  std::vector<EllipsoidFit> ellipsoids;
  int merged_planar = 0;  // connected components collapsed into one fit each
};

/// Cluster, detect mutually coplanar flat clusters, merge each connected
/// group into a single ellipsoid, and re-cluster the remaining points so the
/// output has exactly `count` ellipsoids (fewer when the merged components
/// already reach the budget).
MultiInitResult multi_ellipsoid_init(const std::vector<Vec3>& points,
                                     int count, const MultiInitConfig& cfg);

Ellipsoid make_ellipsoid(const EllipsoidFit& fit);

/// JSON round-trip of a fitted ellipsoid set ({"R": 9 row-major, "c", "r"}).
void write_ellipsoid_set(const std::string& path,
                         const std::vector<EllipsoidFit>& fits);
std::vector<EllipsoidFit> read_ellipsoid_set(const std::string& path);

}  // namespace sddf
