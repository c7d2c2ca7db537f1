#include "sddf/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sddf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Interval {
  double lo, hi;
};

// Entry/exit parameters of the full line p + t v against one primitive.
void sphere_intervals(const Sphere& s, const Ray& ray,
                      std::vector<Interval>& out) {
  Vec3 d = ray.p - s.center;
  double a = ray.v.squaredNorm();
  double b = 2.0 * d.dot(ray.v);
  double c = d.squaredNorm() - s.radius * s.radius;
  double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return;
  double sq = std::sqrt(disc);
  out.push_back({(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)});
}

void box_intervals(const Box& b, const Ray& ray, std::vector<Interval>& out) {
  double lo = -kInf, hi = kInf;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(ray.v[k]) < 1e-15) {
      if (ray.p[k] < b.lo[k] || ray.p[k] > b.hi[k]) return;
      continue;
    }
    double t1 = (b.lo[k] - ray.p[k]) / ray.v[k];
    double t2 = (b.hi[k] - ray.p[k]) / ray.v[k];
    if (t1 > t2) std::swap(t1, t2);
    lo = std::max(lo, t1);
    hi = std::min(hi, t2);
    if (lo > hi) return;
  }
  out.push_back({lo, hi});
}

// Moller-Trumbore over the full line (negative t allowed).
bool triangle_hit(const Vec3& a, const Vec3& b, const Vec3& c, const Ray& ray,
                  double* t_out) {
  Vec3 e1 = b - a, e2 = c - a;
  Vec3 pv = ray.v.cross(e2);
  double det = e1.dot(pv);
  if (std::abs(det) < 1e-14) return false;
  double inv = 1.0 / det;
  Vec3 tv = ray.p - a;
  double u = tv.dot(pv) * inv;
  if (u < 0.0 || u > 1.0) return false;
  Vec3 qv = tv.cross(e1);
  double w = ray.v.dot(qv) * inv;
  if (w < 0.0 || u + w > 1.0) return false;
  *t_out = e2.dot(qv) * inv;
  return true;
}

void mesh_intervals(const TriMesh& m, const Ray& ray,
                    std::vector<Interval>& out) {
  std::vector<double> ts;
  for (const auto& f : m.faces) {
    double t;
    if (triangle_hit(m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]], ray,
                     &t))
      ts.push_back(t);
  }
  if (ts.empty()) return;
  std::sort(ts.begin(), ts.end());
  // Shared edges/vertices produce duplicate crossings; collapse them.
  std::vector<double> uniq;
  for (double t : ts) {
    if (uniq.empty() || t - uniq.back() > 1e-9 * (1.0 + std::abs(t)))
      uniq.push_back(t);
  }
  // Watertight mesh: crossings pair up along the line.
  for (size_t i = 0; i + 1 < uniq.size(); i += 2)
    out.push_back({uniq[i], uniq[i + 1]});
}

std::vector<Interval> line_intervals(const Scene& scene, const Ray& ray) {
  std::vector<Interval> iv;
  for (const auto& prim : scene.primitives) {
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, Sphere>)
            sphere_intervals(p, ray, iv);
          else if constexpr (std::is_same_v<T, Box>)
            box_intervals(p, ray, iv);
          else
            mesh_intervals(p, ray, iv);
        },
        prim);
  }
  std::sort(iv.begin(), iv.end(),
            [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  // Merge the union.
  std::vector<Interval> merged;
  for (const auto& s : iv) {
    if (!merged.empty() && s.lo <= merged.back().hi)
      merged.back().hi = std::max(merged.back().hi, s.hi);
    else
      merged.push_back(s);
  }
  return merged;
}

bool primitive_contains(const Sphere& s, const Vec3& p) {
  return (p - s.center).squaredNorm() <= s.radius * s.radius;
}

bool primitive_contains(const Box& b, const Vec3& p) {
  return (p.array() >= b.lo.array()).all() && (p.array() <= b.hi.array()).all();
}

bool mesh_contains(const TriMesh& m, const Vec3& p) {
  // Crossing parity along three jittered directions, majority vote.
  static const Vec3 dirs[3] = {Vec3(0.57735, 0.57735, 0.57735).normalized(),
                               Vec3(0.8017837, -0.5345225, 0.2672612),
                               Vec3(-0.3713907, 0.5570860, 0.7427814)};
  int votes = 0;
  for (const auto& d : dirs) {
    int crossings = 0;
    Ray ray{p, d.normalized()};
    for (const auto& f : m.faces) {
      double t;
      if (triangle_hit(m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]],
                       ray, &t) &&
          t > 0.0)
        ++crossings;
    }
    if (crossings % 2 == 1) ++votes;
  }
  return votes >= 2;
}

}  // namespace

bool scene_contains(const Scene& scene, const Vec3& p) {
  for (const auto& prim : scene.primitives) {
    bool inside = std::visit(
        [&](const auto& pr) {
          using T = std::decay_t<decltype(pr)>;
          if constexpr (std::is_same_v<T, TriMesh>)
            return mesh_contains(pr, p);
          else
            return primitive_contains(pr, p);
        },
        prim);
    if (inside) return true;
  }
  return false;
}

double raycast_sddf(const Scene& scene, const Ray& ray) {
  std::vector<Interval> merged = line_intervals(scene, ray);
  // Inside iff t = 0 falls within a merged occupancy interval.
  for (const auto& s : merged) {
    if (s.lo <= 0.0 && 0.0 <= s.hi) return s.lo;  // nearest boundary behind
  }
  for (const auto& s : merged) {
    if (s.lo > 0.0) return s.lo;  // first boundary ahead
  }
  return kInf;
}

std::vector<Vec3> SensorModel::directions() const {
  std::vector<Vec3> dirs;
  if (kind == Kind::kLidar) {
    dirs.reserve(static_cast<size_t>(az_bins) * el_bins);
    for (int j = 0; j < el_bins; ++j) {
      double el = el_bins == 1
                      ? 0.0
                      : -M_PI / 2.0 + M_PI * j / static_cast<double>(el_bins - 1);
      for (int i = 0; i < az_bins; ++i) {
        double az = -M_PI + 2.0 * M_PI * i / static_cast<double>(az_bins);
        dirs.emplace_back(std::cos(el) * std::cos(az),
                          std::cos(el) * std::sin(az), std::sin(el));
      }
    }
  } else {
    dirs.reserve(static_cast<size_t>(width) * height);
    double tan_h = std::tan(hfov_deg * M_PI / 360.0);
    double tan_v = std::tan(vfov_deg * M_PI / 360.0);
    for (int row = 0; row < height; ++row) {
      double y = tan_v * (2.0 * (row + 0.5) / height - 1.0);
      for (int col = 0; col < width; ++col) {
        double x = tan_h * (2.0 * (col + 0.5) / width - 1.0);
        dirs.push_back(Vec3(x, y, 1.0).normalized());
      }
    }
  }
  return dirs;
}

std::vector<TrainingSample> synthesize(const Scene& scene,
                                       const SensorModel& sensor) {
  const Vec3 origin = sensor.pose.t;
  if (scene_contains(scene, origin))
    throw std::runtime_error("sensor pose lies inside occupied space");

  std::vector<TrainingSample> samples;
  for (const Vec3& d : sensor.directions()) {
    Vec3 v = sensor.pose.R * d;
    double f = raycast_sddf(scene, Ray{origin, v});
    if (!std::isfinite(f)) continue;
    TrainingSample s;
    s.p = origin;
    s.v = v;
    s.f = f;
    s.i = 1;
    s.s = 1;
    samples.push_back(s);
  }
  return samples;
}

std::vector<TrainingSample> augment_negative(
    const std::vector<TrainingSample>& samples, double eps) {
  std::vector<TrainingSample> out = samples;
  out.reserve(2 * samples.size());
  for (const auto& s : samples) {
    TrainingSample n;
    n.p = s.p + (s.f + eps) * s.v;
    n.v = s.v;
    n.f = -eps;
    n.i = 1;
    n.s = -1;
    out.push_back(n);
  }
  return out;
}

std::vector<Vec3> build_point_cloud(
    const std::vector<TrainingSample>& samples) {
  std::vector<Vec3> cloud;
  cloud.reserve(samples.size());
  for (const auto& s : samples)
    cloud.push_back(s.f >= 0.0 ? Vec3(s.p + s.f * s.v) : s.p);
  return cloud;
}

// ---------------------------------------------------------------------------
// Dataset file format
// ---------------------------------------------------------------------------

namespace {

constexpr char kDatasetMagic[4] = {'S', 'D', 'F', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;

void put_u32_le(std::ofstream& f, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  f.write(b, 4);
}

std::uint32_t get_u32_le(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32_le(std::ofstream& f, double v) {
  float x = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &x, 4);
  put_u32_le(f, bits);
}

double get_f32_le(std::ifstream& f) {
  std::uint32_t bits = get_u32_le(f);
  float x;
  std::memcpy(&x, &bits, 4);
  return static_cast<double>(x);
}

}  // namespace

void write_dataset(const std::string& path,
                   const std::vector<TrainingSample>& samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write dataset: " + path);
  f.write(kDatasetMagic, 4);
  put_u32_le(f, kDatasetVersion);
  put_u32_le(f, static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    for (int k = 0; k < 3; ++k) put_f32_le(f, s.p[k]);
    for (int k = 0; k < 3; ++k) put_f32_le(f, s.v[k]);
    put_f32_le(f, s.f);
    put_f32_le(f, 0.0);  // reserved
    char labels[2] = {static_cast<char>(s.i), static_cast<char>(s.s)};
    f.write(labels, 2);
  }
  if (!f) throw std::runtime_error("dataset write failed: " + path);
}

std::vector<TrainingSample> read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read dataset: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw std::runtime_error("not a dataset file: " + path);
  std::uint32_t version = get_u32_le(f);
  if (version != kDatasetVersion)
    throw std::runtime_error("dataset version " + std::to_string(version) +
                             " unsupported");
  std::uint32_t count = get_u32_le(f);
  std::vector<TrainingSample> samples(count);
  for (auto& s : samples) {
    for (int k = 0; k < 3; ++k) s.p[k] = get_f32_le(f);
    for (int k = 0; k < 3; ++k) s.v[k] = get_f32_le(f);
    s.f = get_f32_le(f);
    get_f32_le(f);  // reserved
    char labels[2];
    f.read(labels, 2);
    s.i = static_cast<signed char>(labels[0]);
    s.s = static_cast<signed char>(labels[1]);
  }
  if (!f) throw std::runtime_error("dataset truncated: " + path);
  return samples;
}

// ---------------------------------------------------------------------------
// Scene description and OBJ ingestion
// ---------------------------------------------------------------------------

TriMesh load_obj(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open OBJ: " + path);
  TriMesh mesh;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      ss >> x >> y >> z;
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        // "i", "i/t", "i/t/n", "i//n"; negative indices count from the end.
        int i = std::stoi(tok.substr(0, tok.find('/')));
        if (i < 0) i = static_cast<int>(mesh.vertices.size()) + i + 1;
        idx.push_back(i - 1);
      }
      for (size_t k = 2; k < idx.size(); ++k)
        mesh.faces.push_back({idx[0], idx[k - 1], idx[k]});
    }
  }
  return mesh;
}

Scene load_scene_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read scene: " + path);
  nlohmann::json doc = nlohmann::json::parse(in);
  Scene scene;
  auto base_dir = std::filesystem::path(path).parent_path();
  for (const auto& p : doc.at("primitives")) {
    std::string type = p.at("type").get<std::string>();
    if (type == "sphere") {
      Sphere s;
      for (int k = 0; k < 3; ++k) s.center[k] = p.at("center").at(k).get<double>();
      s.radius = p.at("radius").get<double>();
      scene.primitives.push_back(s);
    } else if (type == "box") {
      Box b;
      for (int k = 0; k < 3; ++k) {
        b.lo[k] = p.at("min").at(k).get<double>();
        b.hi[k] = p.at("max").at(k).get<double>();
      }
      scene.primitives.push_back(b);
    } else if (type == "mesh") {
      std::filesystem::path mesh_path = p.at("path").get<std::string>();
      if (mesh_path.is_relative()) mesh_path = base_dir / mesh_path;
      scene.primitives.push_back(load_obj(mesh_path.string()));
    } else {
      throw std::runtime_error("unknown primitive type: " + type);
    }
  }
  return scene;
}

}  // namespace sddf
