#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "sddf/model.hpp"
#include "sddf/rng.hpp"
#include "support/finite_diff.hpp"
#include "support/oracles.hpp"

using namespace sddf;

namespace {

SddfModel random_model(Rng& rng, int m_count = 3, int dim = 8,
                       bool zero_latent = false) {
  SddfModel model;
  for (int j = 0; j < m_count; ++j) {
    Ellipsoid e;
    e.pose.base.R = lie::so3_exp(rng.uniform(0.0, 2.0) * rng.unit_vector());
    e.pose.base.t = 2.5 * rng.normal3();
    e.pose.xi = 0.2 * (Vec6() << rng.normal3(), rng.normal3()).finished();
    e.r0 = Vec3(rng.uniform(0.5, 1.6), rng.uniform(0.5, 1.6),
                rng.uniform(0.5, 1.6));
    e.s = 0.1 * rng.normal3();
    model.ellipsoids.push_back(e);
  }
  model.latent = LatentParams::zeros(m_count, dim);
  if (!zero_latent) {
    for (auto& w : model.latent.W)
      for (int i = 0; i < w.size(); ++i) w.data()[i] = 0.05 * rng.normal();
  }
  model.decoder = DecoderParams::create(dim, {12, 12});
  model.decoder.init_kaiming(rng);
  model.refresh_frames();
  return model;
}

// Configurations where finite differences stay on one smooth branch: stable
// fusion selections and pre-activations away from the rectifier kink.
bool smooth_here(const Ray& ray, const SddfModel& model) {
  ForwardCache cache;
  model_forward(ray, model, &cache);
  if (cache.prior_out.selected == kNoEllipsoid) return false;
  if (!test::well_conditioned(cache.prior.evals[cache.prior_out.selected]))
    return false;
  for (const auto& pre : cache.decode.preact)
    if (pre.size() > 0 && pre.array().abs().minCoeff() < 1e-3) return false;

  auto selections = [&](const Ray& r) {
    PriorCache c;
    PriorOutput o = prior_forward(r, model.frames, model.eps_stab, &c);
    return std::array<int, 3>{o.selected, c.argmax_i, c.argmin_s};
  };
  auto base = selections(ray);
  for (int axis = 0; axis < 3; ++axis) {
    for (double sgn : {-1.0, 1.0}) {
      Ray r = ray;
      r.p[axis] += sgn * 2e-3;
      if (selections(r) != base) return false;
      r = ray;
      r.v[axis] += sgn * 2e-3;
      if (selections(r) != base) return false;
    }
  }
  return true;
}

double model_objective(const Ray& ray, const SddfModel& model, double a,
                       double b, double c) {
  Prediction pred = model_forward(ray, model);
  return a * pred.i_hat + b * pred.s_hat + c * pred.f_hat;
}

}  // namespace

TEST_CASE("zero residual network reduces to the prior") {
  Rng rng(61);
  SddfModel model = random_model(rng, 3, 8, /*zero_latent=*/true);
  for (int trial = 0; trial < 300; ++trial) {
    Ray ray = test::random_ray(rng);
    Prediction pred = model_forward(ray, model);
    PriorOutput prior = prior_forward(ray, model.frames, model.eps_stab);
    CHECK(pred.i_hat ==
          doctest::Approx(std::tanh(model.alpha * prior.intersection)));
    CHECK(pred.s_hat == doctest::Approx(std::tanh(model.alpha * prior.sign)));
    if (std::isfinite(prior.dist))
      CHECK(pred.f_hat == doctest::Approx(prior.dist));
    else
      CHECK(std::isinf(pred.f_hat));
  }
}

TEST_CASE("missed prior yields an infinite prediction with zero residuals") {
  SddfModel model;
  Ellipsoid e;
  e.r0 = Vec3::Ones();
  model.ellipsoids.push_back(e);
  model.latent = LatentParams::zeros(1, 4);
  model.decoder = DecoderParams::create(4, {4});
  model.refresh_frames();
  // Sphere strictly behind the ray.
  Prediction pred = model_forward(Ray{Vec3(3, 0, 0), Vec3(1, 0, 0)}, model);
  CHECK(std::isinf(pred.f_hat));
  CHECK(pred.residuals.norm() == 0.0);
}

TEST_CASE("directional derivative is -1 for any parameter values") {
  Rng rng(62);
  int tested = 0;
  while (tested < 1000) {
    SddfModel model = random_model(rng);
    Ray ray = test::random_ray(rng);
    ForwardCache cache;
    Prediction pred = model_forward(ray, model, &cache);
    if (!std::isfinite(pred.f_hat)) continue;
    ++tested;
    InputGrads g = input_gradients(ray, model);
    CHECK(std::abs(ray.v.dot(g.p) + 1.0) < 1e-9);
  }
}

TEST_CASE("input gradients match finite differences") {
  Rng rng(63);
  int tested = 0;
  while (tested < 150) {
    SddfModel model = random_model(rng);
    Ray ray = test::random_ray(rng);
    if (!smooth_here(ray, model)) continue;
    ++tested;
    InputGrads g = input_gradients(ray, model);
    auto objective = [&](const Eigen::VectorXd& x) {
      return model_forward(Ray{x.segment<3>(0), x.segment<3>(3)}, model).f_hat;
    };
    Eigen::VectorXd x(6);
    x << ray.p, ray.v;
    Eigen::VectorXd fd = test::central_diff(objective, x, 1e-5);
    Eigen::VectorXd an(6);
    an << g.p, g.v;
    CHECK(test::max_rel_err(an, fd) < 1e-4);
  }
}

TEST_CASE("parameter gradients match finite differences") {
  Rng rng(64);
  int tested = 0;
  while (tested < 60) {
    SddfModel model = random_model(rng);
    Ray ray = test::random_ray(rng);
    if (!smooth_here(ray, model)) continue;
    ForwardCache cache;
    Prediction pred = model_forward(ray, model, &cache);
    if (!std::isfinite(pred.f_hat)) continue;
    ++tested;

    double a = rng.normal(), b = rng.normal(), c = rng.normal();
    ModelGrads grads = ModelGrads::zeros_like(model);
    UpstreamGrads up;
    up.d_ihat = a;
    up.d_shat = b;
    up.d_fhat = c;
    model_backward(ray, model, cache, up, grads);

    const double h = 1e-6;
    auto fd_param = [&](auto&& mutate) {
      SddfModel pert = model;
      mutate(pert, h);
      pert.refresh_frames();
      double fp = model_objective(ray, pert, a, b, c);
      pert = model;
      mutate(pert, -h);
      pert.refresh_frames();
      double fm = model_objective(ray, pert, a, b, c);
      return (fp - fm) / (2.0 * h);
    };

    const int sel = pred.prior.selected;
    // Twist and log-scale of the selected ellipsoid.
    for (int k = 0; k < 6; ++k) {
      double fd = fd_param([&](SddfModel& m, double d) {
        m.ellipsoids[sel].pose.xi[k] += d;
      });
      CHECK(test::rel_err(grads.ellipsoids[sel].xi[k], fd) < 1e-4);
    }
    for (int k = 0; k < 3; ++k) {
      double fd =
          fd_param([&](SddfModel& m, double d) { m.ellipsoids[sel].s[k] += d; });
      CHECK(test::rel_err(grads.ellipsoids[sel].log_scale[k], fd) < 1e-4);
    }
    // Latent map of the selected ellipsoid (sampled entries).
    for (int rep = 0; rep < 8; ++rep) {
      int idx = static_cast<int>(rng.uniform_int(model.latent.W[sel].size()));
      double fd = fd_param(
          [&](SddfModel& m, double d) { m.latent.W[sel].data()[idx] += d; });
      CHECK(test::rel_err(grads.latent[sel].data()[idx], fd) < 1e-4);
    }
    // Decoder weights and biases (sampled entries).
    for (size_t l = 0; l < model.decoder.weights.size(); ++l) {
      int idx = static_cast<int>(
          rng.uniform_int(model.decoder.weights[l].size()));
      double fd = fd_param([&](SddfModel& m, double d) {
        m.decoder.weights[l].data()[idx] += d;
      });
      CHECK(test::rel_err(grads.decoder.weights[l].data()[idx], fd) < 1e-4);
      int bidx =
          static_cast<int>(rng.uniform_int(model.decoder.biases[l].size()));
      fd = fd_param([&](SddfModel& m, double d) {
        m.decoder.biases[l][bidx] += d;
      });
      CHECK(test::rel_err(grads.decoder.biases[l][bidx], fd) < 1e-4);
    }
  }
}

TEST_CASE("zero upstream produces zero gradients") {
  Rng rng(65);
  SddfModel model = random_model(rng);
  Ray ray{Vec3(-4, 0, 0), Vec3(1, 0, 0)};
  ForwardCache cache;
  model_forward(ray, model, &cache);
  ModelGrads grads = ModelGrads::zeros_like(model);
  model_backward(ray, model, cache, UpstreamGrads{}, grads);
  for (const auto& e : grads.ellipsoids) {
    CHECK(e.xi.norm() == 0.0);
    CHECK(e.log_scale.norm() == 0.0);
  }
  for (const auto& w : grads.latent) CHECK(w.norm() == 0.0);
  for (const auto& w : grads.decoder.weights) CHECK(w.norm() == 0.0);
}

TEST_CASE("frozen prior receives no gradients") {
  Rng rng(66);
  int tested = 0;
  while (tested < 50) {
    SddfModel model = random_model(rng);
    Ray ray = test::random_ray(rng);
    ForwardCache cache;
    Prediction pred = model_forward(ray, model, &cache);
    if (!std::isfinite(pred.f_hat)) continue;
    ++tested;
    ModelGrads grads = ModelGrads::zeros_like(model);
    UpstreamGrads up;
    up.d_ihat = 0.5;
    up.d_shat = -0.25;
    up.d_fhat = 1.0;
    BackwardOptions opts;
    opts.prior_params = false;
    model_backward(ray, model, cache, up, grads, opts);
    for (const auto& e : grads.ellipsoids) {
      CHECK(e.xi.norm() == 0.0);
      CHECK(e.log_scale.norm() == 0.0);
    }
    // while the residual path still trains
    CHECK(grads.latent[pred.prior.selected].norm() > 0.0);
  }
}

TEST_CASE("latent maps of unselected ellipsoids are inert") {
  Rng rng(67);
  int tested = 0;
  while (tested < 100) {
    SddfModel model = random_model(rng);
    Ray ray = test::random_ray(rng);
    ForwardCache cache;
    Prediction pred = model_forward(ray, model, &cache);
    if (!std::isfinite(pred.f_hat)) continue;
    ++tested;
    int other = (pred.prior.selected + 1) % model.ellipsoid_count();
    SddfModel pert = model;
    for (int i = 0; i < pert.latent.W[other].size(); ++i)
      pert.latent.W[other].data()[i] += 10.0;
    pert.refresh_frames();
    Prediction again = model_forward(ray, pert);
    CHECK(again.f_hat == pred.f_hat);
    CHECK(again.i_hat == pred.i_hat);

    // and the backward never touches them
    ModelGrads grads = ModelGrads::zeros_like(model);
    UpstreamGrads up;
    up.d_fhat = 1.0;
    model_backward(ray, model, cache, up, grads);
    CHECK(grads.latent[other].norm() == 0.0);
  }
}

TEST_CASE("batched forward agrees with per-ray calls") {
  Rng rng(69);
  SddfModel model = random_model(rng, 4, 8);
  std::vector<Ray> rays;
  for (int k = 0; k < 700; ++k) rays.push_back(test::random_ray(rng));
  std::vector<Prediction> batch(rays.size());
  model_forward_batch(rays.data(), static_cast<int>(rays.size()), model,
                      batch.data());
  for (size_t k = 0; k < rays.size(); ++k) {
    Prediction single = model_forward(rays[k], model);
    CHECK(batch[k].i_hat == doctest::Approx(single.i_hat).epsilon(1e-12));
    CHECK(batch[k].s_hat == doctest::Approx(single.s_hat).epsilon(1e-12));
    if (std::isfinite(single.f_hat))
      CHECK(batch[k].f_hat == doctest::Approx(single.f_hat).epsilon(1e-12));
    else
      CHECK(std::isinf(batch[k].f_hat));
    CHECK(batch[k].prior.selected == single.prior.selected);
  }
}

TEST_CASE("checkpoint round-trip preserves the model to storage precision") {
  Rng rng(68);
  SddfModel model = random_model(rng, 4, 8);
  model.alpha = 1.25;
  std::string path = "ckpt_test.bin";
  save_checkpoint(path, model);
  SddfModel loaded = load_checkpoint(path);

  CHECK(loaded.ellipsoid_count() == model.ellipsoid_count());
  CHECK(loaded.latent_dim() == model.latent_dim());
  CHECK(loaded.alpha == doctest::Approx(1.25));
  for (int j = 0; j < model.ellipsoid_count(); ++j) {
    CHECK((loaded.ellipsoids[j].pose.xi - model.ellipsoids[j].pose.xi)
              .cwiseAbs()
              .maxCoeff() < 1e-6);
    CHECK((loaded.ellipsoids[j].r0 - model.ellipsoids[j].r0)
              .cwiseAbs()
              .maxCoeff() < 1e-6);
  }

  // Writing the reloaded model again is a fixed point (float32 storage).
  std::string path2 = "ckpt_test2.bin";
  save_checkpoint(path2, loaded);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string bytes_a((std::istreambuf_iterator<char>(a)),
                      std::istreambuf_iterator<char>());
  std::string bytes_b((std::istreambuf_iterator<char>(b)),
                      std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("corrupted checkpoint headers are rejected") {
  std::string path = "ckpt_bad.bin";
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE this is not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint("does_not_exist.bin"), std::runtime_error);
  std::remove(path.c_str());
}
