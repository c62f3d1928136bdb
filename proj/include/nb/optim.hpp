#pragma once

#include "nb/config.hpp"
#include "nb/domain.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nb::optim {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct LossResult {
  double value = 0.0;
  Mat grad; // d loss / d input, same shape as the input
};

// Single example: w[target] * -log softmax(logits)[target]. Empty weights = 1.
double cross_entropy_single(std::span<const double> logits, int target, std::span<const double> class_weights = {});

// Batch: sum_i w_i l_i / sum_i w_i, so equal weights reduce to the plain mean.
LossResult loss_cross_entropy(const Mat& logits, std::span<const int> targets,
                              std::span<const double> class_weights = {});

// Mean over all B x L entries of the per-label binary cross-entropy with logits.
LossResult loss_bce_multilabel(const Mat& logits, const Mat& labels);

// Mean over all entries of (pred - target)^2.
LossResult loss_mse(const Mat& pred, const Mat& target);

// Brain-to-target contrastive loss on cosine similarities at temperature tau.
// Throws ValidationError on a zero-norm row.
LossResult loss_clip(const Mat& pred, const Mat& target, double tau = 1.0);

struct AdamWState {
  std::vector<double> m, v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state, double lr,
                double weight_decay);

double cosine_warmup_lr(double step, double total_steps, double base_lr, double warmup_fraction = 0.1);

enum class InputMode { Flatten, Pooled };
inline constexpr std::size_t kPoolBins = 8;

Mat make_features(const ExampleSet& es, std::span<const std::size_t> indices, InputMode mode);

struct LinearDecoder {
  Mat weight; // [d_out x d_in]
  Vec bias;   // [d_out]

  std::size_t d_in() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t d_out() const { return static_cast<std::size_t>(weight.rows()); }
  Mat forward(const Mat& x) const; // [B x d_out]
};

// Uniform(-1/sqrt(d_in), 1/sqrt(d_in)) for weights and biases.
LinearDecoder init_decoder(std::size_t d_in, std::size_t d_out, std::uint64_t seed);

// Maps raw outputs to predictions: softmax, sigmoid, identity.
std::vector<Prediction> to_predictions(const Mat& outputs, ObjectiveKind objective);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_metric = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  LinearDecoder decoder;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_metric = 0.0;
};

// Trains on Train examples with early stopping on the first declared metric
// over Valid examples; returns the best-validation checkpoint.
TrainResult train_linear_decoder(const config::TaskSpec& task, const ExampleSet& es,
                                 const config::TrainerSpec& trainer, std::uint64_t seed,
                                 InputMode mode = InputMode::Flatten);

std::string history_jsonl(const std::vector<EpochRecord>& history);

} // namespace nb::optim
