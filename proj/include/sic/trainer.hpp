#pragma once

#include <cstdint>
#include <vector>

#include "sic/head.hpp"

namespace sic {

struct TrainConfig {
  Scalar learning_rate = 1e-3f;
  int epochs = 50;
  int batch_size = 8;
  int warmup_epochs = 2;
  Scalar beta1 = 0.9f;
  Scalar beta2 = 0.999f;
  Scalar eps = 1e-8f;
  Scalar weight_decay = 0.0f;
  Scalar temperature = 30.0f;
  int n_support = 3;
  Scalar b_exponent = 2.0f;
  Scalar bias = 0.0f;
  std::uint64_t seed = 0;

  void validate() const;
  HeadConfig head_config(int num_classes) const;
};

enum class LabelMode { SingleLabel, MultiLabel };

struct Sample {
  Tensor image6;
  Vec labels;  // multi-hot over classes
  int id = 0;
};

struct Dataset {
  LabelMode mode = LabelMode::SingleLabel;
  int num_classes = 0;
  std::vector<Sample> samples;

  void validate() const;
};

/// Mean over classes of the stabilized binary cross-entropy.
Scalar bce_loss(const Vec& logits, const Vec& targets);

/// Warmup ramp from 0.1*lr, hold until 50% of all iterations, then halve at
/// the 60/70/80/90% milestones.
Scalar lr_at(std::int64_t iteration, std::int64_t total_iterations, const TrainConfig& cfg);

struct AdamState {
  std::vector<Vec> m;
  std::vector<Vec> v;
  std::int64_t step = 0;

  void init(const std::vector<Tensor>& params);
};

/// One decoupled-weight-decay Adam update (weight decay 0 reduces to Adam).
/// Aborts with a diagnostic on non-finite gradients.
void adam_step(std::vector<Tensor>& params, const std::vector<Vec>& grads, AdamState& state,
               Scalar lr, const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  SicModel model;
  std::vector<EpochStats> history;
};

/// Full optimization: per-batch support resampling (batch members excluded
/// from their own pool when enough samples remain), BCE over the logits,
/// Adam with the warmup/hold/decay schedule, and post-epoch k-means support
/// extraction. Gradients flow through the support branch as well.
TrainResult train(const Dataset& dataset, BCosNetwork net, const TrainConfig& cfg);

/// Single-label: argmax accuracy. Multi-label: mean over samples and classes
/// of per-class threshold decisions sigma(mu) > 0.5.
double evaluate(const SicModel& model, const Dataset& dataset);

/// Eligible support sources per class: every class sample in single-label
/// mode, only single-positive samples in multi-label mode. Indices into
/// dataset.samples.
std::vector<std::vector<int>> support_pools(const Dataset& dataset);

}  // namespace sic
