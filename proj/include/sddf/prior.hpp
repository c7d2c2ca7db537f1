#pragma once

#include <vector>

#include "sddf/ellipsoid.hpp"
#include "sddf/types.hpp"

namespace sddf {

/// Fused scene prior for one ray: indicator extrema over the ellipsoid set
/// and the selected distance. selected == kNoEllipsoid when every candidate
/// distance is infinite.
struct PriorOutput {
  double intersection = 0.0;
  double sign = 0.0;
  double dist = 0.0;
  int selected = -1;
};

inline constexpr int kNoEllipsoid = -1;

/// Per-ray evaluation cache kept for the backward pass.
struct PriorCache {
  std::vector<EllipsoidEval> evals;
  int argmax_i = -1;
  int argmin_s = -1;
};

/// Min/max fusion over the ellipsoid set. Intersected ellipsoids take
/// priority for the distance; ties break toward the lowest index.
PriorOutput prior_forward(const Ray& ray,
                          const std::vector<EllipsoidFrame>& frames,
                          double eps, PriorCache* cache = nullptr);

/// Per-ellipsoid trainable-parameter gradients.
struct EllipsoidParamGrads {
  Vec6 xi = Vec6::Zero();
  Vec3 log_scale = Vec3::Zero();
};

struct PriorInputGrads {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

/// Subgradient routing for the fusion: d_i flows to the arg-max intersection
/// indicator, d_s to the arg-min sign indicator, d_f to the selected
/// ellipsoid (dropped when the fused distance is infinite). When param_grads
/// is non-null it must have one entry per ellipsoid and receives accumulated
/// twist / log-scale gradients.
PriorInputGrads prior_backward(const Ray& ray,
                               const std::vector<Ellipsoid>& ellipsoids,
                               const std::vector<EllipsoidFrame>& frames,
                               const PriorOutput& out, const PriorCache& cache,
                               double d_i, double d_s, double d_f,
                               std::vector<EllipsoidParamGrads>* param_grads);

/// Huber with unit transition point, plus its derivative in the first slot.
double huber(double x, double y);
double huber_grad(double x, double y);

/// Sign-conditioned weights: labels < 0 use the heavier penalty.
struct TermWeights {
  double pos = 1.0;
  double neg = 1.0;
  double operator()(double label) const { return label < 0.0 ? neg : pos; }
};

struct PriorLossWeights {
  TermWeights i{1.0, 1.0};
  TermWeights s{1.0, 10.0};
  TermWeights f{1.0, 1.65};
  double f_clamp = 10.0;  // stands in for an infinite prior distance
};

struct LossTerms {
  double value = 0.0;
  double d_i = 0.0;
  double d_s = 0.0;
  double d_f = 0.0;
};

/// Weighted Huber sum over the three prior outputs. An infinite distance is
/// replaced by label + f_clamp and contributes no distance gradient.
LossTerms prior_loss(const PriorOutput& pred, const TrainingSample& label,
                     const PriorLossWeights& w);

}  // namespace sddf
