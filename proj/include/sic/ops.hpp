#pragma once

#include <cmath>
#include <vector>

#include "sic/tensor.hpp"

namespace sic {

/// |s/n|^(B-1) with the cosine clamped into [0,1]; 0 where n is zero, 1 for
/// B == 1. Shared by the tape op and the explicit summary matrices so both
/// routes use identical arithmetic.
inline Scalar bcos_alignment_factor(Scalar s, Scalar n, Scalar b_exponent) {
  if (b_exponent == 1.0f) return 1.0f;
  if (n <= 0.0f) return 0.0f;
  const Scalar c = std::min(std::fabs(s) / n, 1.0f);
  if (b_exponent == 2.0f) return c;
  return std::pow(c, b_exponent - 1.0f);
}

// Differentiable operations. Values are computed eagerly; when a tape is
// active and an input participates in gradient flow, a backward closure is
// recorded. Shapes must match exactly -- the only broadcasting anywhere is
// scalar-tensor (scale / add_scalar).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);
Tensor add_scalar(const Tensor& a, Scalar value);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation. input [ci,H,W], kernels [co,ci,k,k] -> [co,H',W'] with
/// H' = (H + 2*padding - k)/stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding);

Tensor relu(const Tensor& x);

/// Euclidean norm of the flattened tensor -> [1]. Gradient at the zero
/// vector is defined as zero.
Tensor l2_norm(const Tensor& x);

Tensor sum(const Tensor& x);  // -> [1]

/// [c,h,w] -> [c], mean over the spatial grid.
Tensor global_avg_pool(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

Tensor select(const Tensor& x, Eigen::Index index);  // -> [1]

/// Stack equal-length vectors as rows -> [n,d].
Tensor concat_rows(const std::vector<Tensor>& rows);

/// Per-window L2 norms over the conv receptive fields -> [H'*W'].
Tensor patch_norms(const Tensor& input, int ksize, int stride, int padding);

/// Row-wise unit normalization of a [r,c] matrix. Zero rows are a
/// configuration error (B-cos weights must have positive norm) unless
/// allow_zero_rows is set, in which case they stay zero and receive no
/// gradient (used for not-yet-informative support vectors during training).
Tensor normalize_rows(const Tensor& w, bool allow_zero_rows = false);

/// The B-cos alignment scaling. s holds linear responses [m,p] against
/// unit-normalized weights, n the corresponding input norms [p]. Returns
/// s .* |s/n|^(B-1) (zero where n is zero; factor 1 when B == 1). With
/// frozen_scaling the factor is treated as a constant in backward, which
/// turns the op into the dynamic linear map of Eq-style summaries.
Tensor bcos_scale(const Tensor& s, const Tensor& n, Scalar b_exponent, bool frozen_scaling = false);

/// Sums over contiguous groups: [sum(group_sizes)] -> [num_groups].
/// Accumulation is in ascending index order.
Tensor class_sums(const Tensor& x, const std::vector<int>& group_sizes);

/// Mean binary cross-entropy over classes, numerically stabilized.
/// targets must be exactly 0/1 and are treated as constants.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

/// Backpropagates from a scalar recorded on an active tape.
void backward(const Tensor& output);

}  // namespace sic
