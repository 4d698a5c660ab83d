#pragma once

#include <functional>
#include <random>
#include <vector>

#include "sic/ops.hpp"
#include "sic/tensor.hpp"

namespace sic::testing {

// Central finite differences against the tape gradient. The callable must
// build a one-element tensor from the given leaves; it is invoked both under
// a tape (analytic pass) and eagerly (perturbed passes).
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct FdResult {
  double max_rel_err = 0.0;
  Eigen::Index checked = 0;
};

// Error relative to the gradient's own magnitude. Per-entry denominators are
// not resolvable in f32 (the FD quotient carries ~eps*|f|/2h of rounding
// noise), so deviations are measured against the infinity norm of the
// gradient vector, with a small absolute floor for all-zero gradients.
inline double fd_rel_err(double analytic, double numeric, double grad_scale, double floor_abs = 0.05) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), grad_scale, floor_abs});
  return std::fabs(analytic - numeric) / denom;
}

// Full-Jacobian check for an op with tensor output: analytic rows come from
// one backward per output element, numeric columns from one central
// difference per input element. Keeping |f| at single-element magnitude keeps
// the f32 quotient noise an order below the 1e-3 budget.
using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

inline FdResult fd_check_jacobian(const TensorFn& fn, std::vector<Tensor> leaves, double h = 1e-3,
                                  double floor_abs = 0.02) {
  for (Tensor& t : leaves) t.set_requires_grad(true);
  const Eigen::Index out_size = fn(leaves).numel();
  // rows[j] = gradient of output element j w.r.t. every leaf, concatenated.
  std::vector<Vec> rows(out_size);
  for (Eigen::Index j = 0; j < out_size; ++j) {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = fn(leaves);
    backward(select(out, j));
    Eigen::Index total = 0;
    for (const Tensor& t : leaves) total += t.numel();
    rows[j].resize(total);
    Eigen::Index offset = 0;
    for (const Tensor& t : leaves) {
      rows[j].segment(offset, t.numel()) = t.grad();
      offset += t.numel();
    }
  }
  std::vector<double> row_scale(out_size);
  for (Eigen::Index j = 0; j < out_size; ++j) {
    row_scale[j] = rows[j].size() ? double(rows[j].cwiseAbs().maxCoeff()) : 0.0;
  }
  FdResult result;
  Eigen::Index col = 0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Vec& data = leaves[li].mutable_values();
    for (Eigen::Index i = 0; i < data.size(); ++i, ++col) {
      const Scalar original = data[i];
      data[i] = original + static_cast<Scalar>(h);
      const Vec up = fn(leaves).values();
      data[i] = original - static_cast<Scalar>(h);
      const Vec down = fn(leaves).values();
      data[i] = original;
      for (Eigen::Index j = 0; j < out_size; ++j) {
        const double numeric = (double(up[j]) - double(down[j])) / (2.0 * h);
        result.max_rel_err = std::max(
            result.max_rel_err, fd_rel_err(rows[j][col], numeric, row_scale[j], floor_abs));
        ++result.checked;
      }
    }
  }
  return result;
}

inline FdResult fd_check(const ScalarFn& fn, std::vector<Tensor> leaves, double h = 1e-3,
                         double floor_abs = 0.05) {
  for (Tensor& t : leaves) t.set_requires_grad(true);
  std::vector<Vec> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = fn(leaves);
    backward(out);
    for (const Tensor& t : leaves) analytic.push_back(t.grad());
  }
  double grad_scale = 0.0;
  for (const Vec& g : analytic) {
    if (g.size()) grad_scale = std::max(grad_scale, double(g.cwiseAbs().maxCoeff()));
  }
  FdResult result;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Vec& data = leaves[li].mutable_values();
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      const Scalar original = data[i];
      data[i] = original + static_cast<Scalar>(h);
      const double up = fn(leaves).scalar();
      data[i] = original - static_cast<Scalar>(h);
      const double down = fn(leaves).scalar();
      data[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      result.max_rel_err = std::max(
          result.max_rel_err, fd_rel_err(analytic[li][i], numeric, grad_scale, floor_abs));
      ++result.checked;
    }
  }
  return result;
}

inline Tensor random_tensor(Shape shape, std::mt19937& rng, Scalar lo = -2.0f, Scalar hi = 2.0f) {
  std::uniform_real_distribution<Scalar> dist(lo, hi);
  Vec v(shape_numel(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return make_tensor(std::move(shape), std::move(v));
}

// Pushes every entry at least `margin` away from zero (ReLU kink guard).
inline Tensor away_from_zero(Tensor t, Scalar margin = 0.05f) {
  Vec& v = t.mutable_values();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::fabs(v[i]) < margin) v[i] = v[i] < 0 ? -margin : margin;
  }
  return t;
}

}  // namespace sic::testing
