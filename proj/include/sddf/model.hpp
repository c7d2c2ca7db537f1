#pragma once

#include <string>
#include <vector>

#include "sddf/prior.hpp"
#include "sddf/residual.hpp"

namespace sddf {

/// Final per-ray outputs: squashed indicators plus the composed distance.
struct Prediction {
  double i_hat = 0.0;
  double s_hat = 0.0;
  double f_hat = 0.0;
  PriorOutput prior;
  Vec3 residuals = Vec3::Zero();  // (delta_i, delta_s, delta_f)
};

/// Ellipsoid prior + latent/decoder residual. frames is the evaluation
/// snapshot of the ellipsoid parameters; call refresh_frames() after any
/// parameter update.
struct SddfModel {
  std::vector<Ellipsoid> ellipsoids;
  LatentParams latent;
  DecoderParams decoder;
  double alpha = 1.0;      // indicator squash sharpness
  double eps_stab = 1e-8;  // sqrt stabilizer in the prior

  std::vector<EllipsoidFrame> frames;
  void refresh_frames();

  int ellipsoid_count() const { return static_cast<int>(ellipsoids.size()); }
  int latent_dim() const { return latent.dim(); }
};

/// Squash-and-add composition of prior outputs and residuals. An infinite
/// prior distance stays infinite; the distance residual is ignored there.
Prediction compose(const PriorOutput& prior, const Vec3& residuals,
                   double alpha);

struct ForwardCache {
  PriorCache prior;
  PriorOutput prior_out;
  bool residual_active = false;
  Vec3 q = Vec3::Zero();  // local-frame intersection point
  Vec100 m = Vec100::Zero();
  Eigen::VectorXd z;
  DecodeCache decode;
};

Prediction model_forward(const Ray& ray, const SddfModel& model,
                         ForwardCache* cache = nullptr);

/// Forward over many rays at once; the same map as per-ray model_forward
/// with the decoder amortized over column blocks.
void model_forward_batch(const Ray* rays, int count, const SddfModel& model,
                         Prediction* out);

struct ModelGrads {
  std::vector<EllipsoidParamGrads> ellipsoids;
  std::vector<Eigen::MatrixXd> latent;
  DecoderGrads decoder;

  static ModelGrads zeros_like(const SddfModel& model);
  void add(const ModelGrads& other);
};

struct BackwardOptions {
  bool prior_params = true;       // accumulate ellipsoid gradients
  bool residual_to_prior = true;  // residual gradients reach the prior via q
};

/// Upstream loss partials: the hatted slots act on the composed predictions,
/// the raw slots add directly onto the prior outputs (used when a prior loss
/// and a residual loss backpropagate together).
struct UpstreamGrads {
  double d_ihat = 0.0;
  double d_shat = 0.0;
  double d_fhat = 0.0;
  double d_i = 0.0;
  double d_s = 0.0;
  double d_f = 0.0;
};

/// Reverse pass into all trainable parameters. Requires the cache from
/// model_forward on the same ray and parameter snapshot.
void model_backward(const Ray& ray, const SddfModel& model,
                    const ForwardCache& cache, const UpstreamGrads& up,
                    ModelGrads& grads, const BackwardOptions& opts = {});

void model_backward(const Ray& ray, const SddfModel& model,
                    const ForwardCache& cache, double d_ihat, double d_shat,
                    double d_fhat, ModelGrads& grads,
                    const BackwardOptions& opts = {});

struct InputGrads {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

/// Gradients of the composed distance w.r.t. the ray inputs. Satisfies
/// v . d(f_hat)/dp = -1 whenever the distance is finite. Returns zeros for
/// rays whose prior misses everything.
InputGrads input_gradients(const Ray& ray, const SddfModel& model);

/// Binary checkpoint round-trip (little-endian float32 tensors after a
/// versioned header). Throws std::runtime_error on malformed files.
void save_checkpoint(const std::string& path, const SddfModel& model);
SddfModel load_checkpoint(const std::string& path);

}  // namespace sddf
