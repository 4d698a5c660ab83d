#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "sic/errors.hpp"

namespace sic {

using Scalar = float;
using Vec = Eigen::VectorXf;
using Mat = Eigen::MatrixXf;
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<int>;

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  Vec data;                    // flattened, row-major
  bool requires_grad = false;  // leaf flag set by the user
  Tape* tape = nullptr;        // tape this tensor is registered on, if any
  std::uint64_t tape_id = 0;   // guards against address reuse of dead tapes
  int node = -1;
  bool needs_grad = false;  // requires_grad or downstream of such a leaf
  std::shared_ptr<Vec> grad;  // shared with the tape's node slot
};

}  // namespace detail

/// Dense f32 tensor handle. Copies share storage; values are immutable once
/// the tensor has entered a computation (mutation is reserved for parameter
/// initialization and optimizer updates between tapes).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Scalar value);
  static Tensor from(Shape shape, std::vector<Scalar> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  Eigen::Index numel() const;
  int dim(int i) const;

  const Vec& values() const;
  Scalar value_at(Eigen::Index flat_index) const;
  /// Scalar value of a one-element tensor.
  Scalar scalar() const;

  /// Direct write access; only valid for leaves outside an active computation.
  Vec& mutable_values();

  Tensor& set_requires_grad(bool flag);
  bool requires_grad() const;
  bool has_grad() const;
  const Vec& grad() const;

  /// Deep copy with fresh (unregistered) identity.
  Tensor clone() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> shared_impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
  friend class Tape;
  friend Tensor make_tensor(Shape, Vec);
};

Tensor make_tensor(Shape shape, Vec values);

/// Reverse-mode tape. Operations append backward closures in topological
/// order; backward() replays them once, in reverse. Single-threaded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Populates gradients of every recorded tensor reachable from `output`.
  /// `output` must be a one-element tensor recorded on this tape.
  void backward(const Tensor& output);

  int num_ops() const { return static_cast<int>(ops_.size()); }
  std::uint64_t id() const { return id_; }

  // Registration is normally implicit via ops; exposed for op implementations.
  int ensure_node(const Tensor& t);
  std::shared_ptr<Vec> node_grad(int node) const { return grads_[node]; }
  void record(std::vector<int> input_nodes, int output_node, std::function<void()> backward_fn);

 private:
  struct Op {
    int output = -1;
    std::function<void()> backward;
  };
  std::uint64_t id_ = next_id();
  static std::uint64_t next_id();
  std::vector<Op> ops_;
  std::vector<std::shared_ptr<Vec>> grads_;
  std::vector<Eigen::Index> sizes_;
};

/// RAII scope making `tape` the active tape on this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

Eigen::Index shape_numel(const Shape& shape);
void check_finite(const Tensor& t, const char* op_name);

}  // namespace sic
