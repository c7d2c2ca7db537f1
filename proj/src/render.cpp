#include "sddf/render.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <zlib.h>

#include "sddf/parallel.hpp"

namespace sddf {

DistanceImage render_distance_image(const SddfModel& model,
                                    const lie::Rigid& pose,
                                    const SensorModel& sensor) {
  DistanceImage img;
  if (sensor.kind == SensorModel::Kind::kPinhole) {
    img.width = sensor.width;
    img.height = sensor.height;
  } else {
    img.width = sensor.az_bins;
    img.height = sensor.el_bins;
  }
  img.pose = pose;
  std::vector<Vec3> dirs = sensor.directions();
  img.values.resize(dirs.size());

  // Short spans keep the per-worker footprint inside the fast caches.
  constexpr int kSpan = 256;
  ThreadPool::global().parallel_for(
      static_cast<int>(dirs.size()), [&](int b, int e, int) {
        std::vector<Ray> rays(kSpan);
        std::vector<Prediction> preds(kSpan);
        for (int at = b; at < e; at += kSpan) {
          int n = std::min(kSpan, e - at);
          for (int i = 0; i < n; ++i)
            rays[i] = Ray{pose.t, pose.R * dirs[at + i]};
          model_forward_batch(rays.data(), n, model, preds.data());
          for (int i = 0; i < n; ++i)
            img.values[at + i] = static_cast<float>(preds[i].f_hat);
        }
      });
  return img;
}

std::vector<Vec3> predict_pointcloud(const SddfModel& model,
                                     const lie::Rigid& pose,
                                     const std::vector<Vec3>& directions) {
  std::vector<double> dist(directions.size());
  ThreadPool::global().parallel_for(
      static_cast<int>(directions.size()), [&](int b, int e, int) {
        for (int i = b; i < e; ++i) {
          Ray ray{pose.t, pose.R * directions[i]};
          dist[i] = model_forward(ray, model).f_hat;
        }
      });
  std::vector<Vec3> cloud;
  cloud.reserve(directions.size());
  for (size_t i = 0; i < directions.size(); ++i) {
    if (std::isfinite(dist[i]))
      cloud.push_back(pose.t + dist[i] * (pose.R * directions[i]));
  }
  return cloud;
}

void write_pfm(const std::string& path, const DistanceImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write PFM: " + path);
  f << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
  // Bottom row first, little-endian (negative scale).
  for (int row = img.height - 1; row >= 0; --row) {
    f.write(reinterpret_cast<const char*>(&img.values[row * img.width]),
            static_cast<std::streamsize>(img.width) * 4);
  }
  if (!f) throw std::runtime_error("PFM write failed: " + path);
}

DistanceImage read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read PFM: " + path);
  std::string tag;
  f >> tag;
  if (tag != "Pf") throw std::runtime_error("unsupported PFM type: " + tag);
  DistanceImage img;
  double scale;
  f >> img.width >> img.height >> scale;
  f.get();  // newline before the raster
  if (scale > 0.0) throw std::runtime_error("big-endian PFM unsupported");
  img.values.resize(static_cast<size_t>(img.width) * img.height);
  for (int row = img.height - 1; row >= 0; --row) {
    f.read(reinterpret_cast<char*>(&img.values[row * img.width]),
           static_cast<std::streamsize>(img.width) * 4);
  }
  if (!f) throw std::runtime_error("PFM truncated: " + path);
  return img;
}

namespace {

void put_be32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

void put_chunk(std::ofstream& f, const char type[4], const std::string& data) {
  std::string head;
  put_be32(head, static_cast<std::uint32_t>(data.size()));
  f.write(head.data(), 4);
  f.write(type, 4);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  std::uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data()),
              static_cast<uInt>(data.size()));
  std::string tail;
  put_be32(tail, crc);
  f.write(tail.data(), 4);
}

}  // namespace

void write_png(const std::string& path, const DistanceImage& img,
               double d_max) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write PNG: " + path);
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  f.write(reinterpret_cast<const char*>(sig), 8);

  std::string ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  put_chunk(f, "IHDR", ihdr);

  std::string raw;
  raw.reserve(static_cast<size_t>(img.height) * (img.width + 1));
  for (int row = 0; row < img.height; ++row) {
    raw.push_back(0);  // filter: none
    for (int col = 0; col < img.width; ++col) {
      float v = img.at(row, col);
      int g = 255;
      if (std::isfinite(v))
        g = static_cast<int>(
            std::round(255.0 * std::min(1.0, std::max(0.0, v / d_max))));
      raw.push_back(static_cast<char>(g));
    }
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string idat(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(idat.data()), &bound,
                reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("PNG compression failed");
  idat.resize(bound);
  put_chunk(f, "IDAT", idat);
  put_chunk(f, "IEND", "");
}

}  // namespace sddf
