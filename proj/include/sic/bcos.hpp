#pragma once

#include <functional>
#include <optional>
#include <random>
#include <variant>
#include <vector>

#include "sic/ops.hpp"
#include "sic/tensor.hpp"

namespace sic {

/// [R,G,B] in [0,1] -> [R,G,B,1-R,1-G,1-B]; each color pair sums to 1 per pixel.
Tensor encode_image(const Tensor& rgb);

/// ||x|| * |cos(x,w_hat)|^B * sgn(cos). Returns 0 for ||x|| = 0; a zero
/// weight vector is a configuration error.
Scalar bcos_transform(const Vec& x, const Vec& w, Scalar b_exponent);

struct ConvSpec {
  int in_ch = 0;
  int out_ch = 0;
  int ksize = 3;
  int stride = 1;
  int padding = 0;
};

/// B-cos convolution: cross-correlation against unit-normalized kernels,
/// scaled per position by |cos|^(B-1). No bias, no pointwise nonlinearity.
class BCosConvLayer {
 public:
  BCosConvLayer(ConvSpec spec, Tensor kernels, Scalar b_exponent);

  Tensor forward(const Tensor& x, bool frozen_scaling) const;

  const ConvSpec& spec() const { return spec_; }
  const Tensor& kernels() const { return kernels_; }
  Tensor& kernels() { return kernels_; }
  Scalar b_exponent() const { return b_exponent_; }

 private:
  ConvSpec spec_;
  Tensor kernels_;  // [out, in, k, k]
  Scalar b_exponent_;
};

class BCosLinearLayer {
 public:
  BCosLinearLayer(Tensor weights, Scalar b_exponent);

  Tensor forward(const Tensor& x, bool frozen_scaling) const;

  int in_dim() const { return weights_.dim(1); }
  int out_dim() const { return weights_.dim(0); }
  const Tensor& weights() const { return weights_; }
  Tensor& weights() { return weights_; }
  Scalar b_exponent() const { return b_exponent_; }

 private:
  Tensor weights_;  // [out, in]
  Scalar b_exponent_;
};

/// Spatial mean per channel; exactly linear, so it enters the summary product
/// as a constant matrix.
struct GlobalAvgPoolLayer {
  Tensor forward(const Tensor& x, bool) const { return global_avg_pool(x); }
};

using Layer = std::variant<BCosConvLayer, GlobalAvgPoolLayer, BCosLinearLayer>;

class BCosNetwork {
 public:
  BCosNetwork() = default;
  BCosNetwork(int in_channels, int in_h, int in_w) : in_channels_(in_channels), in_h_(in_h), in_w_(in_w) {}

  void add(Layer layer) { layers_.push_back(std::move(layer)); }

  Tensor forward(const Tensor& image, bool frozen_scaling = false) const;
  Tensor forward_upto(const Tensor& image, int layer_count, bool frozen_scaling) const;

  int num_layers() const { return static_cast<int>(layers_.size()); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  int in_channels() const { return in_channels_; }
  int in_h() const { return in_h_; }
  int in_w() const { return in_w_; }
  Eigen::Index input_size() const { return Eigen::Index(in_channels_) * in_h_ * in_w_; }
  int latent_dim() const;

  /// Handles to trainable tensors (shared storage).
  std::vector<Tensor> parameters() const;

 private:
  int in_channels_ = 0;
  int in_h_ = 0;
  int in_w_ = 0;
  std::vector<Layer> layers_;
};

/// Stride-2 conv stack (16/32/64), global average pool, linear projection.
BCosNetwork make_default_backbone(int in_h, int in_w, Scalar b_exponent, int latent_dim, std::mt19937& rng);

/// A small random network for tests and axiom probes.
BCosNetwork make_random_conv_network(int in_channels, int in_h, int in_w, Scalar b_exponent, std::mt19937& rng);

/// The input-dependent linear map W(x) of a forward pass up to some layer:
/// W(x) * x reproduces the activations. Either an explicit matrix or a lazy
/// row evaluator backed by the frozen-scaling gradient.
class LinearSummary {
 public:
  static LinearSummary from_matrix(RowMat matrix);
  static LinearSummary from_evaluator(int units, Eigen::Index input_size, std::function<Vec(int)> row_fn);

  int units() const { return units_; }
  Eigen::Index input_size() const { return input_size_; }
  Vec row(int j) const;
  bool has_matrix() const { return matrix_.has_value(); }
  const RowMat& matrix() const;

  /// W(x) * x.
  Vec apply(const Vec& x) const;

 private:
  int units_ = 0;
  Eigen::Index input_size_ = 0;
  std::optional<RowMat> matrix_;
  std::function<Vec(int)> row_fn_;
};

enum class SummaryStrategy {
  ExplicitMatrix,   // accumulate the per-layer dynamic matrices
  FrozenGradient,   // differentiate with the alignment scalings held constant
};

/// layer is 1-based; extraction covers layers [1, layer].
LinearSummary extract_summary(const BCosNetwork& net, const Tensor& image6, int layer,
                              SummaryStrategy strategy = SummaryStrategy::FrozenGradient);

/// Per-pixel channel-summed contributions of one unit: sum_ch(row_j . x).
Tensor contribution_map(const LinearSummary& summary, const Tensor& image6, int unit);

}  // namespace sic
