#include "sic/tensor.hpp"

#include <utility>

namespace sic {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Eigen::Index shape_numel(const Shape& shape) {
  Eigen::Index n = 1;
  for (int d : shape) {
    if (d < 0) throw dimension_error("negative dimension in shape");
    n *= d;
  }
  return n;
}

Tensor make_tensor(Shape shape, Vec values) {
  if (shape_numel(shape) != values.size()) {
    throw dimension_error("tensor data length does not match shape");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) {
  Vec v = Vec::Zero(shape_numel(shape));
  return make_tensor(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, Scalar value) {
  Vec v = Vec::Constant(shape_numel(shape), value);
  return make_tensor(std::move(shape), std::move(v));
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values) {
  Vec v = Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
  return make_tensor(std::move(shape), std::move(v));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw contract_error("use of empty tensor");
  return impl_->shape;
}

Eigen::Index Tensor::numel() const { return values().size(); }

int Tensor::dim(int i) const {
  const Shape& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size())) throw contract_error("dim index out of range");
  return s[i];
}

const Vec& Tensor::values() const {
  if (!impl_) throw contract_error("use of empty tensor");
  return impl_->data;
}

Scalar Tensor::value_at(Eigen::Index flat_index) const {
  if (flat_index < 0 || flat_index >= numel()) throw contract_error("flat index out of range");
  return values()[flat_index];
}

Scalar Tensor::scalar() const {
  if (numel() != 1) throw contract_error("scalar() requires a one-element tensor");
  return values()[0];
}

Vec& Tensor::mutable_values() {
  if (!impl_) throw contract_error("use of empty tensor");
  return impl_->data;
}

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw contract_error("use of empty tensor");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::has_grad() const { return impl_ && impl_->grad != nullptr; }

const Vec& Tensor::grad() const {
  if (!has_grad()) throw contract_error("tensor has no gradient; run backward first");
  return *impl_->grad;
}

Tensor Tensor::clone() const {
  return make_tensor(shape(), values());
}

std::uint64_t Tape::next_id() {
  static std::uint64_t counter = 0;
  return ++counter;
}

int Tape::ensure_node(const Tensor& t) {
  detail::TensorImpl* impl = t.impl();
  if (!impl) throw contract_error("use of empty tensor");
  if (impl->tape == this && impl->tape_id == id_ && impl->node >= 0) return impl->node;
  // (Re-)register: a tensor carried over from an earlier tape becomes a fresh
  // leaf here; its old gradient buffer is dropped.
  impl->tape = this;
  impl->tape_id = id_;
  impl->node = static_cast<int>(grads_.size());
  impl->needs_grad = impl->requires_grad;
  impl->grad = std::make_shared<Vec>();
  grads_.push_back(impl->grad);
  sizes_.push_back(impl->data.size());
  return impl->node;
}

void Tape::record(std::vector<int> input_nodes, int output_node, std::function<void()> backward_fn) {
  (void)input_nodes;
  ops_.push_back(Op{output_node, std::move(backward_fn)});
}

void Tape::backward(const Tensor& output) {
  if (output.numel() != 1) throw contract_error("backward requires a scalar output");
  detail::TensorImpl* impl = output.impl();
  if (!impl || impl->tape != this || impl->tape_id != id_ || impl->node < 0) {
    throw contract_error("backward output was not produced under this tape");
  }
  for (size_t i = 0; i < grads_.size(); ++i) {
    grads_[i]->setZero(sizes_[i]);
  }
  (*grads_[impl->node])[0] = 1.0f;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    it->backward();
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void check_finite(const Tensor& t, const char* op_name) {
  if (!t.values().allFinite()) {
    throw numeric_error(std::string("non-finite values produced by ") + op_name);
  }
}

}  // namespace sic
