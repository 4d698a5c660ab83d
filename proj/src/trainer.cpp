#include "sic/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sic {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0f)) throw config_error("TrainConfig: learning_rate must be positive");
  if (epochs < 1) throw config_error("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw config_error("TrainConfig: batch_size must be >= 1");
  if (warmup_epochs < 0) throw config_error("TrainConfig: warmup_epochs must be >= 0");
  if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f)) {
    throw config_error("TrainConfig: betas must lie in [0,1)");
  }
  if (!(eps > 0.0f)) throw config_error("TrainConfig: eps must be positive");
  if (weight_decay < 0.0f) throw config_error("TrainConfig: weight_decay must be >= 0");
  if (!(temperature > 0.0f)) throw config_error("TrainConfig: temperature must be positive");
  if (n_support < 1) throw config_error("TrainConfig: n_support must be >= 1");
  if (b_exponent < 1.0f) throw config_error("TrainConfig: b_exponent must be >= 1");
}

HeadConfig TrainConfig::head_config(int num_classes) const {
  HeadConfig cfg;
  cfg.temperature = temperature;
  cfg.bias = bias;
  cfg.n_support = n_support;
  cfg.num_classes = num_classes;
  cfg.b_exponent = b_exponent;
  return cfg;
}

void Dataset::validate() const {
  if (num_classes < 1) throw validation_error("Dataset: num_classes must be >= 1");
  for (const Sample& s : samples) {
    if (s.labels.size() != num_classes) throw validation_error("Dataset: label length mismatch");
    int positives = 0;
    for (Eigen::Index c = 0; c < s.labels.size(); ++c) {
      if (s.labels[c] != 0.0f && s.labels[c] != 1.0f) {
        throw validation_error("Dataset: labels must be exactly 0 or 1");
      }
      positives += s.labels[c] == 1.0f;
    }
    if (mode == LabelMode::SingleLabel && positives != 1) {
      throw validation_error("Dataset: single-label samples need exactly one positive label");
    }
    if (positives == 0 && mode == LabelMode::SingleLabel) {
      throw validation_error("Dataset: sample without a label");
    }
  }
}

Scalar bce_loss(const Vec& logits, const Vec& targets) {
  Tensor mu = make_tensor({static_cast<int>(logits.size())}, logits);
  Tensor t = make_tensor({static_cast<int>(targets.size())}, targets);
  return bce_with_logits(mu, t).scalar();
}

Scalar lr_at(std::int64_t iteration, std::int64_t total_iterations, const TrainConfig& cfg) {
  if (total_iterations < 1) throw contract_error("lr_at: total_iterations must be >= 1");
  if (iteration < 0 || iteration >= total_iterations) {
    throw contract_error("lr_at: iteration out of range");
  }
  const double warmup_iters =
      double(total_iterations) * double(cfg.warmup_epochs) / double(std::max(cfg.epochs, 1));
  if (warmup_iters > 0.0 && double(iteration) < warmup_iters) {
    const double ramp = 0.1 + 0.9 * double(iteration) / warmup_iters;
    return static_cast<Scalar>(double(cfg.learning_rate) * ramp);
  }
  const double frac = double(iteration) / double(total_iterations);
  double factor = 1.0;
  for (double milestone : {0.6, 0.7, 0.8, 0.9}) {
    if (frac >= milestone - 1e-12) factor *= 0.5;
  }
  return static_cast<Scalar>(double(cfg.learning_rate) * factor);
}

void AdamState::init(const std::vector<Tensor>& params) {
  m.clear();
  v.clear();
  for (const Tensor& p : params) {
    m.push_back(Vec::Zero(p.numel()));
    v.push_back(Vec::Zero(p.numel()));
  }
  step = 0;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Vec>& grads, AdamState& state,
               Scalar lr, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw contract_error("adam_step: state shapes do not match parameters");
  }
  for (const Vec& g : grads) {
    if (!g.allFinite()) {
      throw numeric_error("adam_step: non-finite gradient, training aborted");
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(double(cfg.beta1), double(state.step));
  const double bc2 = 1.0 - std::pow(double(cfg.beta2), double(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Vec& m = state.m[i];
    Vec& v = state.v[i];
    const Vec& g = grads[i];
    m = cfg.beta1 * m + (1.0f - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0f - cfg.beta2) * g.cwiseProduct(g);
    Vec& p = params[i].mutable_values();
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      const double mhat = double(m[j]) / bc1;
      const double vhat = double(v[j]) / bc2;
      double update = lr * mhat / (std::sqrt(vhat) + double(cfg.eps));
      if (cfg.weight_decay > 0.0f) update += double(lr) * double(cfg.weight_decay) * double(p[j]);
      p[j] = static_cast<Scalar>(double(p[j]) - update);
    }
  }
}

std::vector<std::vector<int>> support_pools(const Dataset& dataset) {
  std::vector<std::vector<int>> pools(dataset.num_classes);
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    const Vec& labels = dataset.samples[i].labels;
    int positives = 0;
    int cls = -1;
    for (Eigen::Index c = 0; c < labels.size(); ++c) {
      if (labels[c] == 1.0f) {
        ++positives;
        cls = static_cast<int>(c);
      }
    }
    // multi-label supports are drawn only from single-positive samples
    if (positives == 1) pools[cls].push_back(static_cast<int>(i));
  }
  return pools;
}

namespace {

std::vector<ClassLatents> class_latents(const Dataset& dataset,
                                        const std::vector<std::vector<int>>& pools,
                                        const BCosNetwork& net) {
  std::vector<ClassLatents> latents(pools.size());
  for (size_t c = 0; c < pools.size(); ++c) {
    latents[c].class_id = static_cast<int>(c);
    for (int idx : pools[c]) {
      const Sample& s = dataset.samples[idx];
      latents[c].sample_ids.push_back(idx);
      latents[c].vectors.push_back(net.forward(s.image6).values().cwiseMax(0.0f));
    }
  }
  return latents;
}

double dataset_accuracy(const SicModel& model, const Dataset& dataset) {
  std::int64_t hits = 0;
  std::int64_t total = 0;
  for (const Sample& s : dataset.samples) {
    const Vec mu = model.predict(s.image6).logits;
    if (dataset.mode == LabelMode::SingleLabel) {
      Eigen::Index pred, truth;
      mu.maxCoeff(&pred);
      s.labels.maxCoeff(&truth);
      hits += pred == truth;
      ++total;
    } else {
      for (Eigen::Index c = 0; c < mu.size(); ++c) {
        const bool pred = mu[c] > 0.0f;  // sigma(mu) > 0.5
        hits += pred == (s.labels[c] == 1.0f);
        ++total;
      }
    }
  }
  return double(hits) / double(total);
}

}  // namespace

TrainResult train(const Dataset& dataset, BCosNetwork net, const TrainConfig& cfg) {
  cfg.validate();
  dataset.validate();
  if (dataset.samples.empty()) throw dataset_error("train: empty dataset");

  const std::vector<std::vector<int>> pools = support_pools(dataset);
  for (size_t c = 0; c < pools.size(); ++c) {
    if (static_cast<int>(pools[c].size()) < cfg.n_support) {
      throw dataset_error("train: class " + std::to_string(c) + " has " +
                          std::to_string(pools[c].size()) + " eligible support samples, needs " +
                          std::to_string(cfg.n_support));
    }
  }

  const HeadConfig head_cfg = cfg.head_config(dataset.num_classes);
  std::mt19937 rng(static_cast<std::mt19937::result_type>(cfg.seed));
  std::vector<Tensor> params = net.parameters();
  for (Tensor& p : params) p.set_requires_grad(true);
  AdamState state;
  state.init(params);

  const int n = static_cast<int>(dataset.samples.size());
  const std::int64_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_iterations = batches_per_epoch * cfg.epochs;

  TrainResult result;
  result.model.net = net;
  result.model.head = head_cfg;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::int64_t iteration = 0;
  Scalar lr = cfg.learning_rate;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;

    for (std::int64_t b = 0; b < batches_per_epoch; ++b, ++iteration) {
      const int begin = static_cast<int>(b) * cfg.batch_size;
      const int end = std::min(begin + cfg.batch_size, n);
      std::vector<int> batch(order.begin() + begin, order.begin() + end);
      std::vector<char> in_batch(n, 0);
      for (int idx : batch) in_batch[idx] = 1;

      // per-class support draw, excluding batch members when enough remain
      std::vector<int> support_ids;
      for (int c = 0; c < dataset.num_classes; ++c) {
        std::vector<int> pool;
        for (int idx : pools[c]) {
          if (!in_batch[idx]) pool.push_back(idx);
        }
        if (static_cast<int>(pool.size()) < cfg.n_support) pool = pools[c];
        std::vector<int> chosen;
        std::sample(pool.begin(), pool.end(), std::back_inserter(chosen), cfg.n_support, rng);
        support_ids.insert(support_ids.end(), chosen.begin(), chosen.end());
      }

      Tape tape;
      TapeScope scope(tape);
      std::vector<Tensor> support_latents;
      support_latents.reserve(support_ids.size());
      for (int idx : support_ids) {
        support_latents.push_back(relu(net.forward(dataset.samples[idx].image6)));
      }
      Tensor batch_loss;
      for (int idx : batch) {
        Tensor f = net.forward(dataset.samples[idx].image6);
        Tensor mu = head_logits(f, support_latents, head_cfg);
        const Sample& s = dataset.samples[idx];
        Tensor targets = make_tensor({dataset.num_classes}, s.labels);
        Tensor loss = bce_with_logits(mu, targets);
        batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
      }
      batch_loss = scale(batch_loss, 1.0f / Scalar(batch.size()));
      backward(batch_loss);
      loss_sum += double(batch_loss.scalar()) * double(batch.size());

      std::vector<Vec> grads;
      grads.reserve(params.size());
      for (const Tensor& p : params) grads.push_back(p.grad());
      lr = lr_at(iteration, total_iterations, cfg);
      adam_step(params, grads, state, lr, cfg);
    }

    // post-epoch support refresh from the current weights
    std::vector<ClassLatents> latents = class_latents(dataset, pools, net);
    result.model.supports = extract_supports(latents, cfg.n_support, rng);

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / double(n);
    stats.accuracy = dataset_accuracy(result.model, dataset);
    stats.lr = double(lr);
    result.history.push_back(stats);
  }
  return result;
}

double evaluate(const SicModel& model, const Dataset& dataset) {
  dataset.validate();
  if (dataset.samples.empty()) throw contract_error("evaluate: empty dataset");
  if (model.supports.empty()) throw contract_error("evaluate: supports not extracted");
  return dataset_accuracy(model, dataset);
}

}  // namespace sic
