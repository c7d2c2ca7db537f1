#pragma once

#include <vector>

#include "sddf/rng.hpp"
#include "sddf/types.hpp"

namespace sddf {

using Vec10 = Eigen::Matrix<double, 10, 1>;
using Vec100 = Eigen::Matrix<double, 100, 1>;

/// Degree-2 monomial lift [x^2, xy, xz, y^2, yz, z^2, x, y, z, 1].
Vec10 monomial_embed(const Vec3& p);

/// Pullback of a gradient through monomial_embed.
Vec3 monomial_embed_backward(const Vec3& p, const Vec10& g);

/// Column-major flattening of embed(q) * embed(v)^T; entry 10*j + i holds
/// embed(q)[i] * embed(v)[j].
Vec100 monomial_outer(const Vec3& q, const Vec3& v);

/// Splits a gradient on the flattened outer product back onto q and v.
void monomial_outer_backward(const Vec3& q, const Vec3& v, const Vec100& g,
                             Vec3* d_q, Vec3* d_v);

/// One linear map per ellipsoid from the 100-dim monomial vector to the
/// latent feature space.
struct LatentParams {
  std::vector<Eigen::MatrixXd> W;  // each dim x 100

  int dim() const { return W.empty() ? 0 : static_cast<int>(W[0].rows()); }
  static LatentParams zeros(int count, int dim);
};

/// Latent feature of an intersection point and local direction under the
/// indexed ellipsoid's map.
inline Eigen::VectorXd latent_feature(const Vec3& q, const Vec3& v_loc,
                                      int index, const LatentParams& params) {
  return params.W[index] * monomial_outer(q, v_loc);
}

/// MLP decoding a latent feature into the three residuals. The last entry of
/// weights/biases is the linear head; hidden layers use a leaky rectifier
/// and additive skips where configured.
struct DecoderParams {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  std::vector<int> skip_layers;  // hidden-layer indices with identity skips
  double leaky_slope = 0.01;

  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int hidden_count() const { return static_cast<int>(weights.size()) - 1; }
  std::vector<int> hidden_widths() const;

  /// Builds a zero-initialized decoder; skips are placed at hidden layers 1
  /// and 3 whenever those layers map equal widths.
  static DecoderParams create(int input_dim,
                              const std::vector<int>& hidden_widths,
                              int output_dim = 3);
  void init_kaiming(Rng& rng);

  static const std::vector<int>& default_widths();
};

/// Layer-input and pre-activation stash from a batched forward pass.
struct DecodeCache {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> preact;
};

/// Forward over a column batch (input_dim x n) -> (3 x n).
Eigen::MatrixXd decode_batch(const Eigen::MatrixXd& z,
                             const DecoderParams& params,
                             DecodeCache* cache = nullptr);

Vec3 decode(const Eigen::VectorXd& z, const DecoderParams& params);

struct DecoderGrads {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static DecoderGrads zeros_like(const DecoderParams& params);
  void add(const DecoderGrads& other);
};

/// Reverse pass matching decode_batch; returns d(loss)/d(z) and accumulates
/// parameter gradients into grads when non-null.
Eigen::MatrixXd decode_backward(const Eigen::MatrixXd& d_out,
                                const DecoderParams& params,
                                const DecodeCache& cache,
                                DecoderGrads* grads);

}  // namespace sddf
