#include "sddf/init.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>
#include <json.hpp>

#include "sddf/rng.hpp"

namespace sddf {

namespace {

int nearest_center(const std::vector<Vec3>& centers, const Vec3& x) {
  int best = 0;
  double best_d = (x - centers[0]).squaredNorm();
  for (size_t j = 1; j < centers.size(); ++j) {
    double d = (x - centers[j]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

}  // namespace

ClusterSet kmeans_pp(const std::vector<Vec3>& points, int k,
                     const KMeansConfig& cfg) {
  const int n = static_cast<int>(points.size());
  if (k < 1 || n < k) throw std::invalid_argument("kmeans_pp: need |points| >= k >= 1");

  Rng rng(cfg.seed);
  std::vector<Vec3> centers;
  centers.reserve(k);
  centers.push_back(points[rng.uniform_int(n)]);

  // D^2 seeding.
  std::vector<double> d2(n);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& ctr : centers)
        best = std::min(best, (points[i] - ctr).squaredNorm());
      d2[i] = best;
      total += best;
    }
    int pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= u) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<int>(rng.uniform_int(n));
    }
    centers.push_back(points[pick]);
  }

  ClusterSet cs;
  cs.count = k;
  cs.assignment.assign(n, -1);

  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int a = nearest_center(centers, points[i]);
      if (a != cs.assignment[i]) {
        cs.assignment[i] = a;
        changed = true;
      }
    }

    std::vector<Vec3> sums(k, Vec3::Zero());
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums[cs.assignment[i]] += points[i];
      ++counts[cs.assignment[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers[c] = sums[c] / counts[c];
        continue;
      }
      // Reseed an empty cluster from the point farthest from its centroid.
      int far_i = 0;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        double d = (points[i] - centers[cs.assignment[i]]).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far_i = i;
        }
      }
      centers[c] = points[far_i];
      cs.assignment[far_i] = c;
      changed = true;
    }
    if (!changed && iter > 0) break;
  }

  cs.centroids = centers;
  return cs;
}

EllipsoidFit single_ellipsoid_init(const std::vector<Vec3>& points) {
  if (points.empty()) throw std::invalid_argument("single_ellipsoid_init: no points");
  const double n = static_cast<double>(points.size());

  EllipsoidFit fit;
  fit.c = Vec3::Zero();
  for (const auto& x : points) fit.c += x;
  fit.c /= n;

  Mat3 cov = Mat3::Zero();
  for (const auto& x : points) {
    Vec3 d = x - fit.c;
    cov += d * d.transpose();
  }
  cov /= n;

  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  // Solver returns ascending eigenvalues; reorder descending, stable on ties.
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return es.eigenvalues()[a] > es.eigenvalues()[b];
  });

  Mat3 q;
  Vec3 lambda;
  for (int k = 0; k < 3; ++k) {
    q.col(k) = es.eigenvectors().col(order[k]);
    lambda[k] = es.eigenvalues()[order[k]];
  }
  if (q.determinant() < 0.0) q.col(2) = -q.col(2);
  fit.R = q;
  for (int k = 0; k < 3; ++k)
    fit.r[k] = std::max(kMinRadius, 3.0 * std::sqrt(std::abs(lambda[k])));
  return fit;
}

namespace {

struct FlatInfo {
  bool flat = false;
  Vec3 normal = Vec3::Zero();
};

FlatInfo flatness(const EllipsoidFit& fit, const std::vector<Vec3>& pts,
                  double beta_max) {
  // Shortest-axis direction; flatness is the mean absolute projection of the
  // cluster onto it.
  int j = 0;
  fit.r.minCoeff(&j);
  FlatInfo info;
  info.normal = fit.R.col(j);
  double beta = 0.0;
  for (const auto& p : pts) beta += std::abs(info.normal.dot(p - fit.c));
  beta /= static_cast<double>(pts.size());
  info.flat = beta < beta_max;
  return info;
}

std::vector<int> knn_indices(const std::vector<Vec3>& centers, int i, int s) {
  std::vector<int> idx;
  for (int j = 0; j < static_cast<int>(centers.size()); ++j)
    if (j != i) idx.push_back(j);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return (centers[a] - centers[i]).squaredNorm() <
           (centers[b] - centers[i]).squaredNorm();
  });
  if (static_cast<int>(idx.size()) > s) idx.resize(s);
  return idx;
}

}  // namespace

MultiInitResult multi_ellipsoid_init(const std::vector<Vec3>& points,
                                     int count, const MultiInitConfig& cfg) {
  if (static_cast<int>(points.size()) < count)
    throw std::invalid_argument("multi_ellipsoid_init: fewer points than ellipsoids");

  KMeansConfig kc = cfg.kmeans;
  kc.seed = cfg.seed;
  ClusterSet cs = kmeans_pp(points, count, kc);

  std::vector<std::vector<Vec3>> cluster_pts(count);
  for (size_t i = 0; i < points.size(); ++i)
    cluster_pts[cs.assignment[i]].push_back(points[i]);

  std::vector<EllipsoidFit> fits(count);
  std::vector<FlatInfo> flat(count);
  std::vector<Vec3> centers(count);
  for (int m = 0; m < count; ++m) {
    fits[m] = single_ellipsoid_init(cluster_pts[m]);
    flat[m] = flatness(fits[m], cluster_pts[m], cfg.beta_max);
    centers[m] = fits[m].c;
  }

  // Coplanarity graph over flat clusters.
  std::vector<std::vector<int>> adj(count);
  std::vector<bool> in_graph(count, false);
  for (int i = 0; i < count; ++i) {
    if (!flat[i].flat) continue;
    for (int j : knn_indices(centers, i, cfg.neighbors)) {
      if (!flat[j].flat) continue;
      Vec3 d = centers[i] - centers[j];
      double eta = 0.5 * (std::abs(d.dot(flat[i].normal)) +
                          std::abs(d.dot(flat[j].normal)));
      if (eta < cfg.eta_max) {
        adj[i].push_back(j);
        adj[j].push_back(i);
        in_graph[i] = in_graph[j] = true;
      }
    }
  }

  // Connected components, ordered by their smallest member.
  std::vector<int> component(count, -1);
  std::vector<std::vector<int>> components;
  for (int i = 0; i < count; ++i) {
    if (!in_graph[i] || component[i] >= 0) continue;
    std::vector<int> stack{i}, members;
    component[i] = static_cast<int>(components.size());
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      members.push_back(u);
      for (int w : adj[u]) {
        if (component[w] < 0) {
          component[w] = component[i];
          stack.push_back(w);
        }
      }
    }
    std::sort(members.begin(), members.end());
    components.push_back(std::move(members));
  }

  MultiInitResult result;
  result.merged_planar = static_cast<int>(components.size());
  if (result.merged_planar == 0) {
    result.ellipsoids = std::move(fits);
    return result;
  }

  for (const auto& comp : components) {
    std::vector<Vec3> merged;
    for (int m : comp)
      merged.insert(merged.end(), cluster_pts[m].begin(), cluster_pts[m].end());
    result.ellipsoids.push_back(single_ellipsoid_init(merged));
  }

  std::vector<Vec3> remaining;
  for (int m = 0; m < count; ++m)
    if (!in_graph[m])
      remaining.insert(remaining.end(), cluster_pts[m].begin(),
                       cluster_pts[m].end());

  int free_slots = count - result.merged_planar;
  if (free_slots <= 0 || remaining.empty()) return result;

  // Cannot split fewer points than clusters.
  free_slots = std::min<int>(free_slots, static_cast<int>(remaining.size()));
  KMeansConfig kc2 = cfg.kmeans;
  kc2.seed = cfg.seed + 1;
  ClusterSet cs2 = kmeans_pp(remaining, free_slots, kc2);
  std::vector<std::vector<Vec3>> re_pts(free_slots);
  for (size_t i = 0; i < remaining.size(); ++i)
    re_pts[cs2.assignment[i]].push_back(remaining[i]);
  for (int m = 0; m < free_slots; ++m)
    result.ellipsoids.push_back(single_ellipsoid_init(re_pts[m]));
  return result;
}

Ellipsoid make_ellipsoid(const EllipsoidFit& fit) {
  Ellipsoid e;
  e.pose.base = lie::Rigid(fit.R, fit.c);
  e.pose.xi.setZero();
  e.r0 = fit.r;
  e.s.setZero();
  return e;
}

void write_ellipsoid_set(const std::string& path,
                         const std::vector<EllipsoidFit>& fits) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : fits) {
    nlohmann::json e;
    // Eigen stores column-major; the file format is row-major.
    std::vector<double> r_row;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r_row.push_back(f.R(i, j));
    e["R"] = r_row;
    e["c"] = {f.c.x(), f.c.y(), f.c.z()};
    e["r"] = {f.r.x(), f.r.y(), f.r.z()};
    arr.push_back(e);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << arr.dump(2) << "\n";
}

std::vector<EllipsoidFit> read_ellipsoid_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json arr = nlohmann::json::parse(in);
  std::vector<EllipsoidFit> fits;
  for (const auto& e : arr) {
    EllipsoidFit f;
    const auto& r = e.at("R");
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) f.R(i, j) = r.at(3 * i + j).get<double>();
    for (int i = 0; i < 3; ++i) {
      f.c[i] = e.at("c").at(i).get<double>();
      f.r[i] = e.at("r").at(i).get<double>();
    }
    fits.push_back(f);
  }
  return fits;
}

}  // namespace sddf
