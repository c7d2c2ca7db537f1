#include "sddf/model.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <memory>
#include <stdexcept>

namespace sddf {

void SddfModel::refresh_frames() {
  frames.clear();
  frames.reserve(ellipsoids.size());
  for (const auto& e : ellipsoids) frames.push_back(EllipsoidFrame::from(e));
}

Prediction compose(const PriorOutput& prior, const Vec3& residuals,
                   double alpha) {
  Prediction out;
  out.prior = prior;
  out.residuals = residuals;
  out.i_hat = std::tanh(alpha * prior.intersection) + residuals[0];
  out.s_hat = std::tanh(alpha * prior.sign) + residuals[1];
  out.f_hat = std::isfinite(prior.dist)
                  ? prior.dist + residuals[2]
                  : std::numeric_limits<double>::infinity();
  return out;
}

Prediction model_forward(const Ray& ray, const SddfModel& model,
                         ForwardCache* cache) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.prior_out = prior_forward(ray, model.frames, model.eps_stab, &c.prior);
  c.residual_active = c.prior_out.selected != kNoEllipsoid;

  Vec3 residuals = Vec3::Zero();
  if (c.residual_active) {
    const EllipsoidEval& sel = c.prior.evals[c.prior_out.selected];
    c.q = sel.p_loc + c.prior_out.dist * sel.v_loc;
    c.m = monomial_outer(c.q, sel.v_loc);
    c.z = model.latent.W[c.prior_out.selected] * c.m;
    Eigen::MatrixXd out = decode_batch(c.z, model.decoder, &c.decode);
    residuals = Vec3(out(0, 0), out(1, 0), out(2, 0));
  }
  return compose(c.prior_out, residuals, model.alpha);
}

void model_forward_batch(const Ray* rays, int count, const SddfModel& model,
                         Prediction* out) {
  constexpr int kChunk = 256;
  PriorCache cache;
  std::vector<PriorOutput> prior(kChunk);
  std::vector<int> col(kChunk);
  Eigen::MatrixXd z(model.latent_dim(), kChunk);
  Eigen::MatrixXd dec;

  for (int at = 0; at < count; at += kChunk) {
    const int n = std::min(kChunk, count - at);
    int active = 0;
    for (int k = 0; k < n; ++k) {
      prior[k] = prior_forward(rays[at + k], model.frames, model.eps_stab, &cache);
      col[k] = -1;
      if (prior[k].selected != kNoEllipsoid) {
        const EllipsoidEval& sel = cache.evals[prior[k].selected];
        Vec3 q = sel.p_loc + prior[k].dist * sel.v_loc;
        col[k] = active;
        z.col(active).noalias() =
            model.latent.W[prior[k].selected] * monomial_outer(q, sel.v_loc);
        ++active;
      }
    }
    if (active > 0) dec = decode_batch(z.leftCols(active), model.decoder, nullptr);
    for (int k = 0; k < n; ++k) {
      Vec3 residuals = col[k] >= 0 ? Vec3(dec.col(col[k])) : Vec3::Zero();
      out[at + k] = compose(prior[k], residuals, model.alpha);
    }
  }
}

ModelGrads ModelGrads::zeros_like(const SddfModel& model) {
  ModelGrads g;
  g.ellipsoids.assign(model.ellipsoids.size(), EllipsoidParamGrads{});
  for (const auto& w : model.latent.W)
    g.latent.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  g.decoder = DecoderGrads::zeros_like(model.decoder);
  return g;
}

void ModelGrads::add(const ModelGrads& other) {
  for (size_t j = 0; j < ellipsoids.size(); ++j) {
    ellipsoids[j].xi += other.ellipsoids[j].xi;
    ellipsoids[j].log_scale += other.ellipsoids[j].log_scale;
  }
  for (size_t j = 0; j < latent.size(); ++j) latent[j] += other.latent[j];
  decoder.add(other.decoder);
}

namespace {

double tanh_chain(double upstream, double alpha, double x) {
  double t = std::tanh(alpha * x);
  return upstream * alpha * (1.0 - t * t);
}

}  // namespace

void model_backward(const Ray& ray, const SddfModel& model,
                    const ForwardCache& cache, double d_ihat, double d_shat,
                    double d_fhat, ModelGrads& grads,
                    const BackwardOptions& opts) {
  UpstreamGrads up;
  up.d_ihat = d_ihat;
  up.d_shat = d_shat;
  up.d_fhat = d_fhat;
  model_backward(ray, model, cache, up, grads, opts);
}

void model_backward(const Ray& ray, const SddfModel& model,
                    const ForwardCache& cache, const UpstreamGrads& up,
                    ModelGrads& grads, const BackwardOptions& opts) {
  const PriorOutput& prior = cache.prior_out;
  const bool finite_f = std::isfinite(prior.dist);
  const double d_ihat = up.d_ihat;
  const double d_shat = up.d_shat;
  const double d_fhat = up.d_fhat;

  double d_i_prior = tanh_chain(d_ihat, model.alpha, prior.intersection) + up.d_i;
  double d_s_prior = tanh_chain(d_shat, model.alpha, prior.sign) + up.d_s;
  double d_f_prior = (finite_f ? d_fhat : 0.0) + up.d_f;

  Vec3 d_p_loc_res = Vec3::Zero();
  Vec3 d_v_loc_res = Vec3::Zero();
  double d_f_from_q = 0.0;

  if (cache.residual_active) {
    const int sel = prior.selected;
    const EllipsoidEval& eval = cache.prior.evals[sel];

    Eigen::MatrixXd d_out(3, 1);
    d_out << d_ihat, d_shat, (finite_f ? d_fhat : 0.0);
    Eigen::MatrixXd d_z =
        decode_backward(d_out, model.decoder, cache.decode, &grads.decoder);

    grads.latent[sel].noalias() += d_z.col(0) * cache.m.transpose();
    Vec100 d_m = model.latent.W[sel].transpose() * d_z.col(0);

    Vec3 d_q, d_v_direct;
    monomial_outer_backward(cache.q, eval.v_loc, d_m, &d_q, &d_v_direct);

    // q = p' + f v': split onto the local inputs and the prior distance.
    d_p_loc_res = d_q;
    d_v_loc_res = prior.dist * d_q + d_v_direct;
    d_f_from_q = eval.v_loc.dot(d_q);
  }

  if (!opts.prior_params) return;

  double d_f_total =
      d_f_prior + (opts.residual_to_prior ? d_f_from_q : 0.0);
  prior_backward(ray, model.ellipsoids, model.frames, prior, cache.prior,
                 d_i_prior, d_s_prior, d_f_total, &grads.ellipsoids);

  if (opts.residual_to_prior && cache.residual_active) {
    // p' and v' feeding the latent map depend on the selected ellipsoid pose.
    const int sel = prior.selected;
    LocalGrads lg;
    lg.p_loc = d_p_loc_res;
    lg.v_loc = d_v_loc_res;
    WorldGrads wg = chain_to_world(ray, model.frames[sel], lg);
    grads.ellipsoids[sel].xi += lie::backprop_pose(
        wg.R, wg.c, model.ellipsoids[sel].pose.xi, model.frames[sel].R);
  }
}

InputGrads input_gradients(const Ray& ray, const SddfModel& model) {
  ForwardCache cache;
  model_forward(ray, model, &cache);
  InputGrads g;
  if (!std::isfinite(cache.prior_out.dist)) return g;

  const int sel = cache.prior_out.selected;
  const EllipsoidEval& eval = cache.prior.evals[sel];
  const EllipsoidFrame& frame = model.frames[sel];

  Vec3 d_q = Vec3::Zero();
  Vec3 d_v_direct = Vec3::Zero();
  if (cache.residual_active) {
    Eigen::MatrixXd d_out(3, 1);
    d_out << 0.0, 0.0, 1.0;
    Eigen::MatrixXd d_z =
        decode_backward(d_out, model.decoder, cache.decode, nullptr);
    Vec100 d_m = model.latent.W[sel].transpose() * d_z.col(0);
    monomial_outer_backward(cache.q, eval.v_loc, d_m, &d_q, &d_v_direct);
  }

  // Local gradient of the prior distance alone.
  LocalGrads f_local = ellipsoid_backward(eval, frame, 0.0, 0.0, 1.0);

  double d_f_total = 1.0 + eval.v_loc.dot(d_q);
  Vec3 d_p_loc = d_q + d_f_total * f_local.p_loc;
  Vec3 d_v_loc =
      cache.prior_out.dist * d_q + d_v_direct + d_f_total * f_local.v_loc;

  g.p = frame.R * d_p_loc;
  g.v = frame.R * d_v_loc;
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'D', 'F', 'C'};
constexpr std::uint32_t kVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u32(std::FILE* f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  if (std::fwrite(b, 1, 4, f) != 4) throw std::runtime_error("checkpoint write failed");
}

std::uint32_t get_u32(std::FILE* f) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw std::runtime_error("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::FILE* f, double v) {
  float x = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &x, 4);
  put_u32(f, bits);
}

double get_f32(std::FILE* f) {
  std::uint32_t bits = get_u32(f);
  float x;
  std::memcpy(&x, &bits, 4);
  return static_cast<double>(x);
}

void put_matrix(std::FILE* f, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_f32(f, m(i, j));
}

void get_matrix(std::FILE* f, Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get_f32(f);
}

void put_vec(std::FILE* f, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put_f32(f, v[i]);
}

void get_vec(std::FILE* f, Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = get_f32(f);
}

}  // namespace

void save_checkpoint(const std::string& path, const SddfModel& model) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);

  std::fwrite(kMagic, 1, 4, f.get());
  put_u32(f.get(), kVersion);
  put_u32(f.get(), static_cast<std::uint32_t>(model.ellipsoids.size()));
  put_u32(f.get(), static_cast<std::uint32_t>(model.latent_dim()));
  auto widths = model.decoder.hidden_widths();
  put_u32(f.get(), static_cast<std::uint32_t>(widths.size()));
  for (int w : widths) put_u32(f.get(), static_cast<std::uint32_t>(w));

  for (const auto& e : model.ellipsoids) {
    put_matrix(f.get(), e.pose.base.R);
    put_vec(f.get(), e.pose.base.t);
    put_vec(f.get(), e.pose.xi);
    put_vec(f.get(), e.r0);
    put_vec(f.get(), e.s);
  }
  for (const auto& w : model.latent.W) put_matrix(f.get(), w);
  for (size_t l = 0; l < model.decoder.weights.size(); ++l) {
    put_matrix(f.get(), model.decoder.weights[l]);
    put_vec(f.get(), model.decoder.biases[l]);
  }
  put_f32(f.get(), model.alpha);
  put_f32(f.get(), model.decoder.leaky_slope);
  put_f32(f.get(), model.eps_stab);
}

SddfModel load_checkpoint(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4 ||
      std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t version = get_u32(f.get());
  if (version != kVersion)
    throw std::runtime_error("checkpoint version " + std::to_string(version) +
                             " unsupported (expected " +
                             std::to_string(kVersion) + ")");

  std::uint32_t count = get_u32(f.get());
  std::uint32_t dim = get_u32(f.get());
  std::uint32_t n_hidden = get_u32(f.get());
  std::vector<int> widths(n_hidden);
  for (auto& w : widths) w = static_cast<int>(get_u32(f.get()));

  SddfModel model;
  model.ellipsoids.resize(count);
  for (auto& e : model.ellipsoids) {
    Eigen::MatrixXd r0m(3, 3);
    get_matrix(f.get(), r0m);
    e.pose.base.R = r0m;
    Eigen::VectorXd v3(3), v6(6);
    get_vec(f.get(), v3);
    e.pose.base.t = v3;
    get_vec(f.get(), v6);
    e.pose.xi = v6;
    get_vec(f.get(), v3);
    e.r0 = v3;
    get_vec(f.get(), v3);
    e.s = v3;
  }
  model.latent = LatentParams::zeros(static_cast<int>(count), static_cast<int>(dim));
  for (auto& w : model.latent.W) get_matrix(f.get(), w);
  model.decoder = DecoderParams::create(static_cast<int>(dim), widths);
  for (size_t l = 0; l < model.decoder.weights.size(); ++l) {
    get_matrix(f.get(), model.decoder.weights[l]);
    Eigen::VectorXd b(model.decoder.biases[l].size());
    get_vec(f.get(), b);
    model.decoder.biases[l] = b;
  }
  model.alpha = get_f32(f.get());
  model.decoder.leaky_slope = get_f32(f.get());
  model.eps_stab = get_f32(f.get());
  model.refresh_frames();
  return model;
}

}  // namespace sddf
