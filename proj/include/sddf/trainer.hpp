#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sddf/init.hpp"
#include "sddf/model.hpp"

namespace sddf {

/// Residual-head weights: distance dominates, indicators are lightly held.
struct ResidualLossWeights {
  TermWeights i{0.1, 0.1};
  TermWeights s{0.1, 0.1};
  TermWeights f{1.0, 1.1};
  double f_clamp = 10.0;
};

/// Weighted Huber sum over the squashed predictions.
LossTerms residual_loss(const Prediction& pred, const TrainingSample& label,
                        const ResidualLossWeights& w);

struct TotalLoss {
  double value = 0.0;
  LossTerms prior;     // partials w.r.t. the raw prior outputs
  LossTerms residual;  // partials w.r.t. the composed predictions
};

TotalLoss total_loss(const Prediction& pred, const TrainingSample& label,
                     const PriorLossWeights& pw, const ResidualLossWeights& rw);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named view over one trainable tensor and its gradient buffer.
struct TensorView {
  std::string name;
  double* value;
  const double* grad;
  Eigen::Index size;
};

/// Flat registry over xi/log-scale per ellipsoid, latent maps, and decoder
/// layers, in checkpoint declaration order.
std::vector<TensorView> trainable_tensors(SddfModel& model,
                                          const ModelGrads& grads);

class Adam {
 public:
  explicit Adam(const AdamConfig& cfg = {}) : cfg_(cfg) {}

  /// One update over the registry; tensors with include(index) == false are
  /// skipped. Throws on non-finite gradients, naming the tensor.
  void step(std::vector<TensorView>& tensors, double lr,
            const std::function<bool(int)>& include = nullptr);

  long step_count() const { return step_; }

 private:
  AdamConfig cfg_;
  std::vector<Eigen::ArrayXd> m_, v_;
  long step_ = 0;
};

struct LossLogRow {
  long iter = 0;
  char phase = 'A';
  double loss_prior = 0.0;
  double loss_residual = 0.0;
  double val_mae = -1.0;  // negative when not evaluated this row
};

void write_loss_log_csv(const std::string& path,
                        const std::vector<LossLogRow>& rows);

struct TrainConfig {
  int batch_rays = 2048;
  double lr_phase1 = 1e-3;
  double lr_phase2 = 1e-4;
  int epochs = -1;  // 0 skips all optimization; otherwise iteration counts rule
  // At desk scale the planar-merge initialization stands in for prior
  // pretraining: longer prior-only runs trade ray coverage for indicator
  // calibration and raise the miss rate. Full-scale settings restore it.
  int prior_pretrain_iters = 0;
  int joint_iters = 300;
  int residual_iters = 4000;
  int ellipsoid_count = 24;
  int latent_dim = 64;
  std::vector<int> decoder_widths{128, 128, 128};
  double alpha = 1.0;
  double eps_stab = 1e-8;
  PriorLossWeights prior_weights;
  ResidualLossWeights residual_weights;
  MultiInitConfig init;
  AdamConfig adam;
  bool residual_to_prior = true;  // joint phase: residual loss reaches poses
  std::uint64_t seed = 0;
  int eval_every = 250;
  int val_stride = 50;  // every n-th sample held out for validation
  double divergence_threshold = 1e6;

  /// Test hook, called after every optimizer step.
  std::function<void(long, char, const SddfModel&)> observer;

  static TrainConfig desk_defaults();
  static TrainConfig full_scale_defaults();
};

struct TrainResult {
  SddfModel model;
  std::vector<LossLogRow> log;
};

struct TrainDivergence : std::runtime_error {
  TrainDivergence(const std::string& what, std::vector<LossLogRow> rows)
      : std::runtime_error(what), log(std::move(rows)) {}
  std::vector<LossLogRow> log;
};

/// Three-phase optimization: prior-only, joint, then residual-only with the
/// prior frozen. Ellipsoids are initialized from the dataset point cloud.
TrainResult train(const std::vector<TrainingSample>& dataset,
                  const TrainConfig& cfg);

/// Same, reusing a precomputed ellipsoid initialization.
TrainResult train(const std::vector<TrainingSample>& dataset,
                  const TrainConfig& cfg,
                  const std::vector<EllipsoidFit>& init_fits);

struct EvalMetrics {
  double mae = 0.0;
  double sign_accuracy = 0.0;
  double intersection_accuracy = 0.0;
  double miss_rate = 0.0;
  int count = 0;
};

/// Mean absolute distance error plus indicator accuracies. Rays whose
/// prediction is infinite enter the MAE at f_clamp error and are reported in
/// miss_rate.
EvalMetrics evaluate(const SddfModel& model,
                     const std::vector<TrainingSample>& samples,
                     double f_clamp = 10.0);

}  // namespace sddf
