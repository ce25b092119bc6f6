#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pkml/errors.hpp"

namespace pkml::ad {

using Shape = std::vector<int>;

int shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;   // row-major
  std::vector<double> grad;   // empty until a backward pass populates it
  bool requires_grad = false;
  std::int64_t node_id = -1;  // id on the tape that last recorded this tensor
};
}  // namespace detail

// Dense multi-dimensional array of doubles, the substrate for every learnable
// model in the toolkit. Copying a Tensor copies a handle; storage is shared.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int size() const { return static_cast<int>(impl_->data.size()); }
  // Row/column view of rank-1 and rank-2 tensors. Rank-1 counts as one row.
  int rows() const;
  int cols() const;

  bool requires_grad() const { return impl_->requires_grad; }
  std::int64_t node_id() const { return impl_->node_id; }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> data_mut() { return impl_->data; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> grad_mut() { return impl_->grad; }

  // Resets the gradient to zeros (keeps it allocated).
  void zero_grad();
  // Returns the gradient buffer to the never-populated state.
  void clear_grad();

  double operator[](int i) const { return impl_->data[static_cast<std::size_t>(i)]; }
  double operator()(int r, int c) const;
  void set(int i, double v) { impl_->data[static_cast<std::size_t>(i)] = v; }
  void set(int r, int c, double v);

  // Value of a one-element tensor.
  double value() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape;
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Records every operation of one forward pass so that backward() can replay
// them in exact reverse order. Single-threaded per instance; independent
// tapes share nothing.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- recorded operations -------------------------------------------------
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
  Tensor scale(const Tensor& a, double c);
  // Adds a length-n bias vector to every row of a [m x n] tensor. This is the
  // only broadcast the engine supports.
  Tensor add_row_vector(const Tensor& a, const Tensor& bias);
  Tensor relu(const Tensor& a);
  Tensor softmax_rows(const Tensor& a);
  Tensor transpose(const Tensor& a);
  Tensor concat_rows(std::span<const Tensor> parts);
  Tensor concat_cols(std::span<const Tensor> parts);
  Tensor slice_rows(const Tensor& a, int start, int count);
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);
  Tensor mse_loss(const Tensor& pred, const Tensor& target);

  // Reverse sweep from a scalar loss. Gradients of leaf tensors accumulate
  // additively (the optimizer step zeroes them); gradients of tensors created
  // on this tape are reset at the start of every sweep.
  void backward(const Tensor& loss);

  std::size_t num_ops() const { return ops_.size(); }

 private:
  using Impl = detail::TensorImpl;
  using ImplPtr = std::shared_ptr<Impl>;

  struct Op {
    const char* kind;
    std::vector<ImplPtr> inputs;
    ImplPtr out;
    std::function<void(const Op&)> back;
  };

  Tensor record(const char* kind, std::vector<Tensor> inputs, Shape out_shape,
                std::function<void(const Op&)> back);
  static bool any_requires_grad(const std::vector<Tensor>& ts);

  std::vector<Op> ops_;
  std::int64_t next_id_ = 0;
};

// Accumulates g into t.grad if t requires a gradient; allocates lazily.
namespace detail {
void accumulate_grad(TensorImpl& t, std::span<const double> g);
}

}  // namespace pkml::ad
