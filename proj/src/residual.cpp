#include "sddf/residual.hpp"

#include <cmath>

namespace sddf {

Vec10 monomial_embed(const Vec3& p) {
  Vec10 e;
  e << p.x() * p.x(), p.x() * p.y(), p.x() * p.z(), p.y() * p.y(),
      p.y() * p.z(), p.z() * p.z(), p.x(), p.y(), p.z(), 1.0;
  return e;
}

Vec3 monomial_embed_backward(const Vec3& p, const Vec10& g) {
  return Vec3(
      2.0 * p.x() * g[0] + p.y() * g[1] + p.z() * g[2] + g[6],
      p.x() * g[1] + 2.0 * p.y() * g[3] + p.z() * g[4] + g[7],
      p.x() * g[2] + p.y() * g[4] + 2.0 * p.z() * g[5] + g[8]);
}

Vec100 monomial_outer(const Vec3& q, const Vec3& v) {
  Vec10 eq = monomial_embed(q);
  Vec10 ev = monomial_embed(v);
  Vec100 m;
  for (int j = 0; j < 10; ++j)
    for (int i = 0; i < 10; ++i) m[10 * j + i] = eq[i] * ev[j];
  return m;
}

void monomial_outer_backward(const Vec3& q, const Vec3& v, const Vec100& g,
                             Vec3* d_q, Vec3* d_v) {
  Vec10 eq = monomial_embed(q);
  Vec10 ev = monomial_embed(v);
  Vec10 g_eq = Vec10::Zero();
  Vec10 g_ev = Vec10::Zero();
  for (int j = 0; j < 10; ++j)
    for (int i = 0; i < 10; ++i) {
      double gij = g[10 * j + i];
      g_eq[i] += gij * ev[j];
      g_ev[j] += gij * eq[i];
    }
  if (d_q) *d_q = monomial_embed_backward(q, g_eq);
  if (d_v) *d_v = monomial_embed_backward(v, g_ev);
}

LatentParams LatentParams::zeros(int count, int dim) {
  LatentParams p;
  p.W.assign(count, Eigen::MatrixXd::Zero(dim, 100));
  return p;
}

std::vector<int> DecoderParams::hidden_widths() const {
  std::vector<int> w;
  for (int l = 0; l < hidden_count(); ++l)
    w.push_back(static_cast<int>(weights[l].rows()));
  return w;
}

const std::vector<int>& DecoderParams::default_widths() {
  static const std::vector<int> widths{256, 256, 512, 512, 256, 128, 64};
  return widths;
}

DecoderParams DecoderParams::create(int input_dim,
                                    const std::vector<int>& hidden_widths,
                                    int output_dim) {
  DecoderParams p;
  int in = input_dim;
  for (size_t l = 0; l < hidden_widths.size(); ++l) {
    int out = hidden_widths[l];
    p.weights.push_back(Eigen::MatrixXd::Zero(out, in));
    p.biases.push_back(Eigen::VectorXd::Zero(out));
    if ((l == 1 || l == 3) && in == out)
      p.skip_layers.push_back(static_cast<int>(l));
    in = out;
  }
  p.weights.push_back(Eigen::MatrixXd::Zero(output_dim, in));
  p.biases.push_back(Eigen::VectorXd::Zero(output_dim));
  return p;
}

void DecoderParams::init_kaiming(Rng& rng) {
  for (auto& w : weights) {
    double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        w(i, j) = rng.uniform(-bound, bound);
  }
  for (auto& b : biases) b.setZero();
}

namespace {

bool has_skip(const DecoderParams& p, int layer) {
  for (int s : p.skip_layers)
    if (s == layer) return true;
  return false;
}

}  // namespace

Eigen::MatrixXd decode_batch(const Eigen::MatrixXd& z,
                             const DecoderParams& params, DecodeCache* cache) {
  const int layers = static_cast<int>(params.weights.size());
  Eigen::MatrixXd x = z;
  if (cache) {
    cache->inputs.clear();
    cache->preact.clear();
  }
  for (int l = 0; l < layers; ++l) {
    Eigen::MatrixXd pre =
        (params.weights[l] * x).colwise() + params.biases[l];
    Eigen::MatrixXd next;
    if (l == layers - 1) {
      next = pre;  // linear head
    } else {
      next = pre.unaryExpr([s = params.leaky_slope](double t) {
        return t > 0.0 ? t : s * t;
      });
      if (has_skip(params, l)) next += x;
    }
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->preact.push_back(std::move(pre));
    }
    x = std::move(next);
  }
  return x;
}

Vec3 decode(const Eigen::VectorXd& z, const DecoderParams& params) {
  Eigen::MatrixXd out = decode_batch(z, params, nullptr);
  return Vec3(out(0, 0), out(1, 0), out(2, 0));
}

DecoderGrads DecoderGrads::zeros_like(const DecoderParams& params) {
  DecoderGrads g;
  for (const auto& w : params.weights)
    g.weights.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& b : params.biases)
    g.biases.push_back(Eigen::VectorXd::Zero(b.size()));
  return g;
}

void DecoderGrads::add(const DecoderGrads& other) {
  for (size_t i = 0; i < weights.size(); ++i) weights[i] += other.weights[i];
  for (size_t i = 0; i < biases.size(); ++i) biases[i] += other.biases[i];
}

Eigen::MatrixXd decode_backward(const Eigen::MatrixXd& d_out,
                                const DecoderParams& params,
                                const DecodeCache& cache, DecoderGrads* grads) {
  const int layers = static_cast<int>(params.weights.size());
  Eigen::MatrixXd d = d_out;
  for (int l = layers - 1; l >= 0; --l) {
    Eigen::MatrixXd d_pre;
    Eigen::MatrixXd skip_pass;
    if (l == layers - 1) {
      d_pre = std::move(d);
    } else {
      if (has_skip(params, l)) skip_pass = d;
      d_pre = d.binaryExpr(cache.preact[l],
                           [s = params.leaky_slope](double g, double pre) {
                             return pre > 0.0 ? g : s * g;
                           });
    }
    if (grads) {
      grads->weights[l].noalias() += d_pre * cache.inputs[l].transpose();
      grads->biases[l] += d_pre.rowwise().sum();
    }
    d.noalias() = params.weights[l].transpose() * d_pre;
    if (skip_pass.size() > 0) d += skip_pass;
  }
  return d;
}

}  // namespace sddf
