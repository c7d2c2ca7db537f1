#include "sddf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "sddf/parallel.hpp"
#include "sddf/rng.hpp"
#include "sddf/scene.hpp"

namespace sddf {

LossTerms residual_loss(const Prediction& pred, const TrainingSample& label,
                        const ResidualLossWeights& w) {
  LossTerms t;
  double wi = w.i(label.i);
  double ws = w.s(label.s);
  double wf = w.f(label.f);

  t.value = wi * huber(pred.i_hat, label.i) + ws * huber(pred.s_hat, label.s);
  t.d_i = wi * huber_grad(pred.i_hat, label.i);
  t.d_s = ws * huber_grad(pred.s_hat, label.s);

  if (!std::isfinite(pred.f_hat)) {
    t.value += wf * huber(label.f + w.f_clamp, label.f);
    t.d_f = 0.0;
  } else {
    t.value += wf * huber(pred.f_hat, label.f);
    t.d_f = wf * huber_grad(pred.f_hat, label.f);
  }
  return t;
}

TotalLoss total_loss(const Prediction& pred, const TrainingSample& label,
                     const PriorLossWeights& pw,
                     const ResidualLossWeights& rw) {
  TotalLoss t;
  t.prior = prior_loss(pred.prior, label, pw);
  t.residual = residual_loss(pred, label, rw);
  t.value = t.prior.value + t.residual.value;
  return t;
}

std::vector<TensorView> trainable_tensors(SddfModel& model,
                                          const ModelGrads& grads) {
  std::vector<TensorView> v;
  char name[64];
  for (size_t j = 0; j < model.ellipsoids.size(); ++j) {
    std::snprintf(name, sizeof(name), "ellipsoid[%zu].xi", j);
    v.push_back({name, model.ellipsoids[j].pose.xi.data(),
                 grads.ellipsoids[j].xi.data(), 6});
    std::snprintf(name, sizeof(name), "ellipsoid[%zu].log_scale", j);
    v.push_back(
        {name, model.ellipsoids[j].s.data(), grads.ellipsoids[j].log_scale.data(), 3});
  }
  for (size_t j = 0; j < model.latent.W.size(); ++j) {
    std::snprintf(name, sizeof(name), "latent[%zu]", j);
    v.push_back({name, model.latent.W[j].data(), grads.latent[j].data(),
                 model.latent.W[j].size()});
  }
  for (size_t l = 0; l < model.decoder.weights.size(); ++l) {
    std::snprintf(name, sizeof(name), "decoder.weight[%zu]", l);
    v.push_back({name, model.decoder.weights[l].data(),
                 grads.decoder.weights[l].data(), model.decoder.weights[l].size()});
    std::snprintf(name, sizeof(name), "decoder.bias[%zu]", l);
    v.push_back({name, model.decoder.biases[l].data(),
                 grads.decoder.biases[l].data(), model.decoder.biases[l].size()});
  }
  return v;
}

void Adam::step(std::vector<TensorView>& tensors, double lr,
                const std::function<bool(int)>& include) {
  if (m_.empty()) {
    for (const auto& t : tensors) {
      m_.push_back(Eigen::ArrayXd::Zero(t.size));
      v_.push_back(Eigen::ArrayXd::Zero(t.size));
    }
  }
  ++step_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t k = 0; k < tensors.size(); ++k) {
    if (include && !include(static_cast<int>(k))) continue;
    TensorView& t = tensors[k];
    Eigen::Map<const Eigen::ArrayXd> g(t.grad, t.size);
    if (!g.isFinite().all())
      throw std::runtime_error("non-finite gradient in tensor " + t.name);
    m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
    v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g.square();
    Eigen::Map<Eigen::ArrayXd> p(t.value, t.size);
    p -= lr * (m_[k] / bc1) / ((v_[k] / bc2).sqrt() + cfg_.eps);
  }
}

void write_loss_log_csv(const std::string& path,
                        const std::vector<LossLogRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write loss log: " + path);
  f << "iter,phase,loss_prior,loss_residual,val_mae\n";
  char buf[160];
  for (const auto& r : rows) {
    if (r.val_mae >= 0.0)
      std::snprintf(buf, sizeof(buf), "%ld,%c,%.9g,%.9g,%.9g\n", r.iter,
                    r.phase, r.loss_prior, r.loss_residual, r.val_mae);
    else
      std::snprintf(buf, sizeof(buf), "%ld,%c,%.9g,%.9g,\n", r.iter, r.phase,
                    r.loss_prior, r.loss_residual);
    f << buf;
  }
}

TrainConfig TrainConfig::desk_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::full_scale_defaults() {
  TrainConfig cfg;
  cfg.batch_rays = 512 * 1024;
  cfg.prior_pretrain_iters = 19000;
  cfg.joint_iters = 1000;
  cfg.residual_iters = 30000;
  cfg.ellipsoid_count = 128;
  cfg.latent_dim = 256;
  cfg.decoder_widths = DecoderParams::default_widths();
  return cfg;
}

namespace {

enum class Phase { kPrior, kJoint, kResidual };

double tanh_chain(double upstream, double alpha, double x) {
  double t = std::tanh(alpha * x);
  return upstream * alpha * (1.0 - t * t);
}

struct RaySlot {
  PriorCache cache;
  PriorOutput out;
  Vec3 q = Vec3::Zero();
  Vec100 m = Vec100::Zero();
  int col = -1;
  LossTerms lp, lr;
};

struct Workspace {
  std::vector<RaySlot> slots;
  Eigen::MatrixXd z, dec_out, d_out, d_z;
  DecodeCache decode;
  ModelGrads grads;
  double lp_sum = 0.0;
  double lr_sum = 0.0;
};

// Column batch kept small enough to reuse worker-local buffers.
constexpr int kChunk = 256;

void process_chunk(const SddfModel& model, const TrainingSample* samples,
                   const int* indices, int n, Phase phase,
                   const TrainConfig& cfg, Workspace& ws) {
  const bool use_residual = phase != Phase::kPrior;
  const bool prior_grads = phase != Phase::kResidual;
  const bool res_to_prior = phase == Phase::kJoint && cfg.residual_to_prior;

  if (static_cast<int>(ws.slots.size()) < n) ws.slots.resize(n);

  int active = 0;
  for (int k = 0; k < n; ++k) {
    RaySlot& s = ws.slots[k];
    const TrainingSample& sample = samples[indices[k]];
    Ray ray{sample.p, sample.v};
    s.out = prior_forward(ray, model.frames, model.eps_stab, &s.cache);
    s.lp = prior_loss(s.out, sample, cfg.prior_weights);
    s.col = -1;
    if (use_residual && s.out.selected != kNoEllipsoid) {
      const EllipsoidEval& ev = s.cache.evals[s.out.selected];
      s.q = ev.p_loc + s.out.dist * ev.v_loc;
      s.m = monomial_outer(s.q, ev.v_loc);
      s.col = active++;
    }
  }

  if (use_residual && active > 0) {
    ws.z.resize(model.latent_dim(), active);
    for (int k = 0; k < n; ++k) {
      const RaySlot& s = ws.slots[k];
      if (s.col >= 0)
        ws.z.col(s.col).noalias() = model.latent.W[s.out.selected] * s.m;
    }
    ws.dec_out = decode_batch(ws.z, model.decoder, &ws.decode);
    ws.d_out.resize(3, active);
  }

  for (int k = 0; k < n; ++k) {
    RaySlot& s = ws.slots[k];
    const TrainingSample& sample = samples[indices[k]];
    Vec3 residuals = Vec3::Zero();
    if (s.col >= 0) residuals = ws.dec_out.col(s.col);
    if (use_residual) {
      Prediction pred = compose(s.out, residuals, model.alpha);
      s.lr = residual_loss(pred, sample, cfg.residual_weights);
      if (s.col >= 0) ws.d_out.col(s.col) = Vec3(s.lr.d_i, s.lr.d_s, s.lr.d_f);
    } else {
      s.lr = LossTerms{};
    }
    ws.lp_sum += s.lp.value;
    ws.lr_sum += s.lr.value;
  }

  if (use_residual && active > 0)
    ws.d_z = decode_backward(ws.d_out, model.decoder, ws.decode,
                             &ws.grads.decoder);

  for (int k = 0; k < n; ++k) {
    RaySlot& s = ws.slots[k];
    const TrainingSample& sample = samples[indices[k]];
    Ray ray{sample.p, sample.v};

    Vec3 d_p_loc_res = Vec3::Zero();
    Vec3 d_v_loc_res = Vec3::Zero();
    double d_f_from_q = 0.0;
    if (s.col >= 0) {
      const int sel = s.out.selected;
      const EllipsoidEval& ev = s.cache.evals[sel];
      Eigen::VectorXd d_z_col = ws.d_z.col(s.col);
      ws.grads.latent[sel].noalias() += d_z_col * s.m.transpose();
      Vec100 d_m = model.latent.W[sel].transpose() * d_z_col;
      Vec3 d_q, d_v_direct;
      monomial_outer_backward(s.q, ev.v_loc, d_m, &d_q, &d_v_direct);
      d_p_loc_res = d_q;
      d_v_loc_res = s.out.dist * d_q + d_v_direct;
      d_f_from_q = ev.v_loc.dot(d_q);
    }

    if (!prior_grads) continue;

    double d_i_prior = s.lp.d_i;
    double d_s_prior = s.lp.d_s;
    double d_f_prior = s.lp.d_f;
    if (use_residual) {
      d_i_prior += tanh_chain(s.lr.d_i, model.alpha, s.out.intersection);
      d_s_prior += tanh_chain(s.lr.d_s, model.alpha, s.out.sign);
      if (std::isfinite(s.out.dist)) d_f_prior += s.lr.d_f;
    }
    double d_f_total = d_f_prior + (res_to_prior ? d_f_from_q : 0.0);
    prior_backward(ray, model.ellipsoids, model.frames, s.out, s.cache,
                   d_i_prior, d_s_prior, d_f_total, &ws.grads.ellipsoids);

    if (res_to_prior && s.col >= 0) {
      const int sel = s.out.selected;
      LocalGrads lg;
      lg.p_loc = d_p_loc_res;
      lg.v_loc = d_v_loc_res;
      WorldGrads wg = chain_to_world(ray, model.frames[sel], lg);
      ws.grads.ellipsoids[sel].xi += lie::backprop_pose(
          wg.R, wg.c, model.ellipsoids[sel].pose.xi, model.frames[sel].R);
    }
  }
}

void zero_grads(ModelGrads& g) {
  for (auto& e : g.ellipsoids) {
    e.xi.setZero();
    e.log_scale.setZero();
  }
  for (auto& w : g.latent) w.setZero();
  for (auto& w : g.decoder.weights) w.setZero();
  for (auto& b : g.decoder.biases) b.setZero();
}

void scale_grads(ModelGrads& g, double factor) {
  for (auto& e : g.ellipsoids) {
    e.xi *= factor;
    e.log_scale *= factor;
  }
  for (auto& w : g.latent) w *= factor;
  for (auto& w : g.decoder.weights) w *= factor;
  for (auto& b : g.decoder.biases) b *= factor;
}

}  // namespace

EvalMetrics evaluate(const SddfModel& model,
                     const std::vector<TrainingSample>& samples,
                     double f_clamp) {
  EvalMetrics out;
  out.count = static_cast<int>(samples.size());
  if (samples.empty()) return out;

  ThreadPool& pool = ThreadPool::global();
  struct Acc {
    double err = 0.0;
    int sign_hits = 0, inter_hits = 0, misses = 0;
  };
  constexpr int kSpan = 256;
  std::vector<Acc> accs(pool.workers());
  pool.parallel_for(
      static_cast<int>(samples.size()), [&](int b, int e, int w) {
        Acc& a = accs[w];
        std::vector<Ray> rays(kSpan);
        std::vector<Prediction> preds(kSpan);
        for (int at = b; at < e; at += kSpan) {
          int n = std::min(kSpan, e - at);
          for (int i = 0; i < n; ++i)
            rays[i] = Ray{samples[at + i].p, samples[at + i].v};
          model_forward_batch(rays.data(), n, model, preds.data());
          for (int i = 0; i < n; ++i) {
            const TrainingSample& s = samples[at + i];
            const Prediction& pred = preds[i];
            if (std::isfinite(pred.f_hat)) {
              a.err += std::abs(pred.f_hat - s.f);
            } else {
              a.err += f_clamp;
              ++a.misses;
            }
            if ((pred.s_hat >= 0.0 ? 1 : -1) == s.s) ++a.sign_hits;
            if ((pred.i_hat >= 0.0 ? 1 : -1) == s.i) ++a.inter_hits;
          }
        }
      });

  Acc total;
  for (const Acc& a : accs) {
    total.err += a.err;
    total.sign_hits += a.sign_hits;
    total.inter_hits += a.inter_hits;
    total.misses += a.misses;
  }
  double n = static_cast<double>(samples.size());
  out.mae = total.err / n;
  out.sign_accuracy = total.sign_hits / n;
  out.intersection_accuracy = total.inter_hits / n;
  out.miss_rate = total.misses / n;
  return out;
}

TrainResult train(const std::vector<TrainingSample>& dataset,
                  const TrainConfig& cfg) {
  MultiInitConfig ic = cfg.init;
  ic.seed = cfg.seed;
  MultiInitResult init =
      multi_ellipsoid_init(build_point_cloud(dataset), cfg.ellipsoid_count, ic);
  return train(dataset, cfg, init.ellipsoids);
}

TrainResult train(const std::vector<TrainingSample>& dataset,
                  const TrainConfig& cfg,
                  const std::vector<EllipsoidFit>& init_fits) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

  TrainResult result;
  SddfModel& model = result.model;
  model.alpha = cfg.alpha;
  model.eps_stab = cfg.eps_stab;
  for (const auto& fit : init_fits) model.ellipsoids.push_back(make_ellipsoid(fit));
  const int m_count = model.ellipsoid_count();
  model.latent = LatentParams::zeros(m_count, cfg.latent_dim);
  model.decoder = DecoderParams::create(cfg.latent_dim, cfg.decoder_widths);
  Rng weight_rng(cfg.seed ^ 0x5eed5eedULL);
  model.decoder.init_kaiming(weight_rng);
  model.refresh_frames();

  long iters_a = cfg.prior_pretrain_iters;
  long iters_b = cfg.joint_iters;
  long iters_c = cfg.residual_iters;
  if (cfg.epochs == 0) iters_a = iters_b = iters_c = 0;
  const long total = iters_a + iters_b + iters_c;
  if (total == 0) return result;

  // Deterministic validation split.
  std::vector<int> train_idx, val_idx;
  for (int i = 0; i < static_cast<int>(dataset.size()); ++i) {
    if (cfg.val_stride > 1 && (i + 1) % cfg.val_stride == 0)
      val_idx.push_back(i);
    else
      train_idx.push_back(i);
  }
  std::vector<TrainingSample> val_samples;
  for (int i : val_idx) val_samples.push_back(dataset[i]);

  const int n_train = static_cast<int>(train_idx.size());
  const int batch = std::min(cfg.batch_rays, n_train);

  Rng shuffle_rng(cfg.seed + 1);
  std::vector<int> perm = train_idx;
  auto reshuffle = [&] {
    for (int i = n_train - 1; i > 0; --i) {
      int j = static_cast<int>(shuffle_rng.uniform_int(i + 1));
      std::swap(perm[i], perm[j]);
    }
  };
  reshuffle();
  int cursor = 0;

  ThreadPool& pool = ThreadPool::global();
  std::vector<Workspace> ws(pool.workers());
  for (auto& w : ws) w.grads = ModelGrads::zeros_like(model);

  Adam adam(cfg.adam);
  const int n_ell_tensors = 2 * m_count;
  auto include_for = [&](Phase phase) {
    return std::function<bool(int)>([=](int k) {
      if (phase == Phase::kPrior) return k < n_ell_tensors;
      if (phase == Phase::kResidual) return k >= n_ell_tensors;
      return true;
    });
  };

  std::vector<int> batch_idx(batch);
  for (long it = 0; it < total; ++it) {
    Phase phase = it < iters_a            ? Phase::kPrior
                  : it < iters_a + iters_b ? Phase::kJoint
                                           : Phase::kResidual;
    double lr = it < total / 2 ? cfg.lr_phase1 : cfg.lr_phase2;

    for (int k = 0; k < batch; ++k) {
      if (cursor == n_train) {
        reshuffle();
        cursor = 0;
      }
      batch_idx[k] = perm[cursor++];
    }

    for (auto& w : ws) {
      zero_grads(w.grads);
      w.lp_sum = 0.0;
      w.lr_sum = 0.0;
    }
    pool.parallel_for(batch, [&](int b, int e, int w) {
      for (int at = b; at < e; at += kChunk) {
        int n = std::min(kChunk, e - at);
        process_chunk(model, dataset.data(), batch_idx.data() + at, n, phase,
                      cfg, ws[w]);
      }
    });

    for (size_t w = 1; w < ws.size(); ++w) ws[0].grads.add(ws[w].grads);
    scale_grads(ws[0].grads, 1.0 / batch);
    double lp = 0.0, lr_loss = 0.0;
    for (const auto& w : ws) {
      lp += w.lp_sum;
      lr_loss += w.lr_sum;
    }
    lp /= batch;
    lr_loss /= batch;

    auto tensors = trainable_tensors(model, ws[0].grads);
    adam.step(tensors, lr, include_for(phase));
    if (phase != Phase::kResidual) model.refresh_frames();

    double combined = lp + lr_loss;
    char phase_tag = phase == Phase::kPrior ? 'A'
                     : phase == Phase::kJoint ? 'B'
                                              : 'C';
    bool phase_edge = it == iters_a - 1 || it == iters_a + iters_b - 1;
    if (it % cfg.eval_every == 0 || it == total - 1 || phase_edge) {
      LossLogRow row{it, phase_tag, lp, lr_loss, -1.0};
      if (!val_samples.empty())
        row.val_mae =
            evaluate(model, val_samples, cfg.residual_weights.f_clamp).mae;
      result.log.push_back(row);
    }
    if (!std::isfinite(combined) || combined > cfg.divergence_threshold)
      throw TrainDivergence("training diverged at iteration " +
                                std::to_string(it) + " (loss " +
                                std::to_string(combined) + ")",
                            result.log);
    if (cfg.observer) cfg.observer(it, phase_tag, model);
  }
  return result;
}

}  // namespace sddf
