#include "sic/bcos.hpp"

#include <cmath>

namespace sic {

Tensor encode_image(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw dimension_error("encode_image: input must be [3,H,W]");
  const Vec& v = rgb.values();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] >= 0.0f && v[i] <= 1.0f)) {
      throw validation_error("encode_image: values must lie in [0,1]");
    }
  }
  const Eigen::Index plane = Eigen::Index(rgb.dim(1)) * rgb.dim(2);
  Vec out(6 * plane);
  out.head(3 * plane) = v;
  out.tail(3 * plane) = Vec::Ones(3 * plane) - v;
  return make_tensor({6, rgb.dim(1), rgb.dim(2)}, std::move(out));
}

Scalar bcos_transform(const Vec& x, const Vec& w, Scalar b_exponent) {
  if (b_exponent < 1.0f) throw config_error("bcos_transform: exponent must be >= 1");
  if (x.size() != w.size()) throw dimension_error("bcos_transform: length mismatch");
  const Scalar wn = w.norm();
  if (!(wn > 0.0f)) throw config_error("bcos_transform: zero weight vector");
  const Scalar xn = x.norm();
  if (!(xn > 0.0f)) return 0.0f;
  const Scalar s = x.dot(w) / wn;
  return s * bcos_alignment_factor(s, xn, b_exponent);
}

BCosConvLayer::BCosConvLayer(ConvSpec spec, Tensor kernels, Scalar b_exponent)
    : spec_(spec), kernels_(std::move(kernels)), b_exponent_(b_exponent) {
  if (b_exponent_ < 1.0f) throw config_error("BCosConvLayer: exponent must be >= 1");
  const Shape expect{spec_.out_ch, spec_.in_ch, spec_.ksize, spec_.ksize};
  if (kernels_.shape() != expect) throw dimension_error("BCosConvLayer: kernel shape mismatch");
}

Tensor BCosConvLayer::forward(const Tensor& x, bool frozen_scaling) const {
  const int patch = spec_.in_ch * spec_.ksize * spec_.ksize;
  Tensor unit = normalize_rows(reshape(kernels_, {spec_.out_ch, patch}));
  Tensor unit4 = reshape(unit, kernels_.shape());
  Tensor s = conv2d(x, unit4, spec_.stride, spec_.padding);
  Tensor n = patch_norms(x, spec_.ksize, spec_.stride, spec_.padding);
  const int positions = s.dim(1) * s.dim(2);
  Tensor y = bcos_scale(reshape(s, {spec_.out_ch, positions}), n, b_exponent_, frozen_scaling);
  return reshape(y, s.shape());
}

BCosLinearLayer::BCosLinearLayer(Tensor weights, Scalar b_exponent)
    : weights_(std::move(weights)), b_exponent_(b_exponent) {
  if (b_exponent_ < 1.0f) throw config_error("BCosLinearLayer: exponent must be >= 1");
  if (weights_.rank() != 2) throw dimension_error("BCosLinearLayer: weights must be [out,in]");
}

Tensor BCosLinearLayer::forward(const Tensor& x, bool frozen_scaling) const {
  if (x.rank() != 1 || x.dim(0) != in_dim()) {
    throw dimension_error("BCosLinearLayer: input dimension mismatch");
  }
  Tensor unit = normalize_rows(weights_);
  Tensor s = matmul(unit, reshape(x, {in_dim(), 1}));
  Tensor n = l2_norm(x);
  Tensor y = bcos_scale(s, n, b_exponent_, frozen_scaling);
  return reshape(y, {out_dim()});
}

Tensor BCosNetwork::forward(const Tensor& image, bool frozen_scaling) const {
  return forward_upto(image, num_layers(), frozen_scaling);
}

Tensor BCosNetwork::forward_upto(const Tensor& image, int layer_count, bool frozen_scaling) const {
  if (layer_count < 1 || layer_count > num_layers()) {
    throw contract_error("BCosNetwork: layer index out of range");
  }
  if (image.rank() != 3 || image.dim(0) != in_channels_ || image.dim(1) != in_h_ || image.dim(2) != in_w_) {
    throw dimension_error("BCosNetwork: input shape mismatch");
  }
  Tensor a = image;
  for (int l = 0; l < layer_count; ++l) {
    a = std::visit([&](const auto& layer) { return layer.forward(a, frozen_scaling); }, layers_[l]);
  }
  return a;
}

int BCosNetwork::latent_dim() const {
  if (layers_.empty()) throw contract_error("BCosNetwork: no layers");
  if (const auto* lin = std::get_if<BCosLinearLayer>(&layers_.back())) return lin->out_dim();
  throw contract_error("BCosNetwork: final layer is not a linear projection");
}

std::vector<Tensor> BCosNetwork::parameters() const {
  std::vector<Tensor> params;
  for (const Layer& layer : layers_) {
    if (const auto* conv = std::get_if<BCosConvLayer>(&layer)) {
      params.push_back(conv->kernels());
    } else if (const auto* lin = std::get_if<BCosLinearLayer>(&layer)) {
      params.push_back(lin->weights());
    }
  }
  return params;
}

namespace {

Tensor random_kernels(const ConvSpec& spec, std::mt19937& rng) {
  const Eigen::Index n = Eigen::Index(spec.out_ch) * spec.in_ch * spec.ksize * spec.ksize;
  std::normal_distribution<Scalar> dist(0.0f, 1.0f);
  const Scalar scl = 1.0f / std::sqrt(Scalar(spec.in_ch * spec.ksize * spec.ksize));
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng) * scl;
  return make_tensor({spec.out_ch, spec.in_ch, spec.ksize, spec.ksize}, std::move(v));
}

Tensor random_weights(int out, int in, std::mt19937& rng) {
  std::normal_distribution<Scalar> dist(0.0f, 1.0f);
  const Scalar scl = 1.0f / std::sqrt(Scalar(in));
  Vec v(Eigen::Index(out) * in);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng) * scl;
  return make_tensor({out, in}, std::move(v));
}

}  // namespace

BCosNetwork make_default_backbone(int in_h, int in_w, Scalar b_exponent, int latent_dim, std::mt19937& rng) {
  BCosNetwork net(6, in_h, in_w);
  int channels = 6;
  for (int out_ch : {16, 32, 64}) {
    ConvSpec spec{channels, out_ch, 3, 2, 1};
    net.add(BCosConvLayer(spec, random_kernels(spec, rng), b_exponent));
    channels = out_ch;
  }
  net.add(GlobalAvgPoolLayer{});
  net.add(BCosLinearLayer(random_weights(latent_dim, channels, rng), b_exponent));
  return net;
}

BCosNetwork make_random_conv_network(int in_channels, int in_h, int in_w, Scalar b_exponent,
                                     std::mt19937& rng) {
  BCosNetwork net(in_channels, in_h, in_w);
  ConvSpec c1{in_channels, 4, 3, 2, 1};
  net.add(BCosConvLayer(c1, random_kernels(c1, rng), b_exponent));
  ConvSpec c2{4, 6, 3, 1, 1};
  net.add(BCosConvLayer(c2, random_kernels(c2, rng), b_exponent));
  net.add(GlobalAvgPoolLayer{});
  net.add(BCosLinearLayer(random_weights(5, 6, rng), b_exponent));
  return net;
}

LinearSummary LinearSummary::from_matrix(RowMat matrix) {
  LinearSummary s;
  s.units_ = static_cast<int>(matrix.rows());
  s.input_size_ = matrix.cols();
  s.matrix_ = std::move(matrix);
  return s;
}

LinearSummary LinearSummary::from_evaluator(int units, Eigen::Index input_size,
                                            std::function<Vec(int)> row_fn) {
  LinearSummary s;
  s.units_ = units;
  s.input_size_ = input_size;
  s.row_fn_ = std::move(row_fn);
  return s;
}

Vec LinearSummary::row(int j) const {
  if (j < 0 || j >= units_) throw contract_error("LinearSummary: unit out of range");
  if (matrix_) return matrix_->row(j);
  return row_fn_(j);
}

const RowMat& LinearSummary::matrix() const {
  if (!matrix_) throw contract_error("LinearSummary: no explicit matrix available");
  return *matrix_;
}

Vec LinearSummary::apply(const Vec& x) const {
  if (x.size() != input_size_) throw dimension_error("LinearSummary: input size mismatch");
  if (matrix_) return (*matrix_) * x;
  Vec out(units_);
  for (int j = 0; j < units_; ++j) out[j] = row_fn_(j).dot(x);
  return out;
}

namespace {

struct ConvWindow {
  int ho, wo;
};

// Dynamic matrix of one conv layer at its recorded input: row (oc,q) holds
// factor(oc,q) * w_hat_oc scattered over window q.
RowMat explicit_conv_matrix(const BCosConvLayer& layer, const Tensor& input) {
  const ConvSpec& sp = layer.spec();
  const int h = input.dim(1), w = input.dim(2);
  const int ho = (h + 2 * sp.padding - sp.ksize) / sp.stride + 1;
  const int wo = (w + 2 * sp.padding - sp.ksize) / sp.stride + 1;
  const int positions = ho * wo;
  const int patch = sp.in_ch * sp.ksize * sp.ksize;

  Tensor unit = normalize_rows(reshape(layer.kernels(), {sp.out_ch, patch}));
  Tensor s = conv2d(input, reshape(unit, layer.kernels().shape()), sp.stride, sp.padding);
  Tensor n = patch_norms(input, sp.ksize, sp.stride, sp.padding);
  Eigen::Map<const RowMat> unit_m(unit.values().data(), sp.out_ch, patch);

  RowMat m = RowMat::Zero(Eigen::Index(sp.out_ch) * positions, input.numel());
  for (int oc = 0; oc < sp.out_ch; ++oc) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const int q = oy * wo + ox;
        const Scalar sv = s.values()[(Eigen::Index(oc) * ho + oy) * wo + ox];
        const Scalar factor = bcos_alignment_factor(sv, n.values()[q], layer.b_exponent());
        const Eigen::Index row = Eigen::Index(oc) * positions + q;
        int col = 0;
        for (int c = 0; c < sp.in_ch; ++c) {
          for (int ky = 0; ky < sp.ksize; ++ky) {
            const int iy = oy * sp.stride + ky - sp.padding;
            for (int kx = 0; kx < sp.ksize; ++kx, ++col) {
              const int ix = ox * sp.stride + kx - sp.padding;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              m(row, (Eigen::Index(c) * h + iy) * w + ix) = factor * unit_m(oc, col);
            }
          }
        }
      }
    }
  }
  return m;
}

RowMat explicit_pool_matrix(const Tensor& input) {
  const int c = input.dim(0);
  const Eigen::Index hw = Eigen::Index(input.dim(1)) * input.dim(2);
  RowMat m = RowMat::Zero(c, input.numel());
  for (int i = 0; i < c; ++i) {
    m.row(i).segment(i * hw, hw).setConstant(1.0f / Scalar(hw));
  }
  return m;
}

RowMat explicit_linear_matrix(const BCosLinearLayer& layer, const Tensor& input) {
  Tensor unit = normalize_rows(layer.weights());
  Eigen::Map<const RowMat> unit_m(unit.values().data(), layer.out_dim(), layer.in_dim());
  const Scalar n = l2_norm(input).scalar();
  RowMat m(layer.out_dim(), layer.in_dim());
  for (int j = 0; j < layer.out_dim(); ++j) {
    const Scalar s = unit_m.row(j).dot(input.values());
    m.row(j) = bcos_alignment_factor(s, n, layer.b_exponent()) * unit_m.row(j);
  }
  return m;
}

}  // namespace

LinearSummary extract_summary(const BCosNetwork& net, const Tensor& image6, int layer,
                              SummaryStrategy strategy) {
  if (layer < 1 || layer > net.num_layers()) {
    throw contract_error("extract_summary: layer index out of range");
  }
  if (strategy == SummaryStrategy::ExplicitMatrix) {
    RowMat acc;
    Tensor a = image6;
    for (int l = 0; l < layer; ++l) {
      RowMat wl;
      const Layer& entry = net.layers()[l];
      if (const auto* conv = std::get_if<BCosConvLayer>(&entry)) {
        wl = explicit_conv_matrix(*conv, a);
      } else if (std::get_if<GlobalAvgPoolLayer>(&entry)) {
        wl = explicit_pool_matrix(a);
      } else {
        wl = explicit_linear_matrix(std::get<BCosLinearLayer>(entry), a);
      }
      acc = (l == 0) ? std::move(wl) : RowMat(wl * acc);
      a = std::visit([&](const auto& lay) { return lay.forward(a, false); }, entry);
    }
    return LinearSummary::from_matrix(std::move(acc));
  }

  // Frozen-scaling gradient: one backward pass per requested row.
  const Tensor activations = net.forward_upto(image6, layer, true);
  const int units = static_cast<int>(activations.numel());
  BCosNetwork net_copy = net;  // layers hold shared tensor handles; copy is cheap
  Tensor image_copy = image6.clone();
  return LinearSummary::from_evaluator(units, image6.numel(), [net_copy, image_copy, layer](int j) {
    Tape tape;
    TapeScope scope(tape);
    Tensor x = image_copy.clone().set_requires_grad(true);
    Tensor out = net_copy.forward_upto(x, layer, true);
    backward(select(reshape(out, {static_cast<int>(out.numel())}), j));
    return x.grad();
  });
}

Tensor contribution_map(const LinearSummary& summary, const Tensor& image6, int unit) {
  if (unit < 0 || unit >= summary.units()) throw contract_error("contribution_map: unit out of range");
  if (image6.rank() != 3) throw dimension_error("contribution_map: image must be [ch,H,W]");
  if (image6.numel() != summary.input_size()) {
    throw dimension_error("contribution_map: summary/input size mismatch");
  }
  const int ch = image6.dim(0), h = image6.dim(1), w = image6.dim(2);
  const Vec row = summary.row(unit);
  const Vec& x = image6.values();
  Vec map = Vec::Zero(Eigen::Index(h) * w);
  for (int c = 0; c < ch; ++c) {
    const Eigen::Index base = Eigen::Index(c) * h * w;
    for (Eigen::Index p = 0; p < Eigen::Index(h) * w; ++p) {
      map[p] += row[base + p] * x[base + p];
    }
  }
  return make_tensor({h, w}, std::move(map));
}

}  // namespace sic
