#include "sddf/prior.hpp"

#include <cmath>
#include <limits>

namespace sddf {

PriorOutput prior_forward(const Ray& ray,
                          const std::vector<EllipsoidFrame>& frames,
                          double eps, PriorCache* cache) {
  const int m = static_cast<int>(frames.size());
  PriorCache local;
  PriorCache& c = cache ? *cache : local;
  c.evals.clear();
  c.evals.reserve(m);

  PriorOutput out;
  bool any_hit = false;
  for (int j = 0; j < m; ++j) {
    c.evals.push_back(ellipsoid_forward(ray, frames[j], eps));
    const EllipsoidEval& e = c.evals.back();
    if (j == 0 || e.intersection > out.intersection) {
      out.intersection = e.intersection;
      c.argmax_i = j;
    }
    if (j == 0 || e.sign < out.sign) {
      out.sign = e.sign;
      c.argmin_s = j;
    }
    any_hit = any_hit || e.intersection >= 0.0;
  }

  // Distance: restrict to intersected ellipsoids when any exist.
  out.dist = std::numeric_limits<double>::infinity();
  out.selected = kNoEllipsoid;
  for (int j = 0; j < m; ++j) {
    const EllipsoidEval& e = c.evals[j];
    if (any_hit && e.intersection < 0.0) continue;
    if (e.dist < out.dist) {
      out.dist = e.dist;
      out.selected = j;
    }
  }
  if (!std::isfinite(out.dist)) out.selected = kNoEllipsoid;
  return out;
}

PriorInputGrads prior_backward(const Ray& ray,
                               const std::vector<Ellipsoid>& ellipsoids,
                               const std::vector<EllipsoidFrame>& frames,
                               const PriorOutput& out, const PriorCache& cache,
                               double d_i, double d_s, double d_f,
                               std::vector<EllipsoidParamGrads>* param_grads) {
  PriorInputGrads in;
  if (!std::isfinite(out.dist)) d_f = 0.0;

  // Collect per-ellipsoid upstream terms; at most three targets.
  const int m = static_cast<int>(frames.size());
  for (int j = 0; j < m; ++j) {
    double dij = (j == cache.argmax_i) ? d_i : 0.0;
    double dsj = (j == cache.argmin_s) ? d_s : 0.0;
    double dfj = (j == out.selected) ? d_f : 0.0;
    if (dij == 0.0 && dsj == 0.0 && dfj == 0.0) continue;

    LocalGrads local = ellipsoid_backward(cache.evals[j], frames[j], dij, dsj, dfj);
    WorldGrads world = chain_to_world(ray, frames[j], local);
    in.p += world.p;
    in.v += world.v;
    if (param_grads) {
      EllipsoidParamGrads& g = (*param_grads)[j];
      g.xi += lie::backprop_pose(world.R, world.c, ellipsoids[j].pose.xi,
                                 frames[j].R);
      g.log_scale += world.log_scale;
    }
  }
  return in;
}

double huber(double x, double y) {
  double d = std::abs(x - y);
  return d < 1.0 ? 0.5 * d * d : d - 0.5;
}

double huber_grad(double x, double y) {
  double d = x - y;
  if (d > 1.0) return 1.0;
  if (d < -1.0) return -1.0;
  return d;
}

LossTerms prior_loss(const PriorOutput& pred, const TrainingSample& label,
                     const PriorLossWeights& w) {
  LossTerms t;
  double wi = w.i(label.i);
  double ws = w.s(label.s);
  double wf = w.f(label.f);

  t.value = wi * huber(pred.intersection, label.i) +
            ws * huber(pred.sign, label.s);
  t.d_i = wi * huber_grad(pred.intersection, label.i);
  t.d_s = ws * huber_grad(pred.sign, label.s);

  double f = pred.dist;
  if (!std::isfinite(f)) {
    t.value += wf * huber(label.f + w.f_clamp, label.f);
    t.d_f = 0.0;
  } else {
    t.value += wf * huber(f, label.f);
    t.d_f = wf * huber_grad(f, label.f);
  }
  return t;
}

}  // namespace sddf
