#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "diffe/errors.hpp"

namespace diffe {

using Shape = std::vector<int>;

int shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

// One node of the reverse-mode tape. `backward` reads the gradient of the
// node's output and accumulates into the inputs' gradient buffers.
struct GradNode {
  const char* op = "";
  std::vector<Tensor> inputs;
  std::function<void(std::span<const double> out_grad)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool grad_touched = false;  // set when a backward pass accumulated here
  std::shared_ptr<GradNode> node;  // null for leaves
};

// Value-semantics handle to an n-d array of doubles, row-major. Copying a
// Tensor copies the handle, not the buffer; ops never mutate their inputs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int numel() const { return static_cast<int>(impl_->data.size()); }

  std::span<double> values() { return impl_->data; }
  std::span<const double> values() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  bool grad_touched() const { return impl_->grad_touched; }
  std::span<double> grad();             // allocates zeros on first use
  std::span<const double> grad() const; // throws if never touched
  void zero_grad();

  // Scalar read; requires numel() == 1.
  double item() const;

  // New leaf with a copy of the values and no graph history.
  Tensor detach() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode sweep from a scalar root. Zeroes the gradients of every
// tensor reachable from `root`, seeds d(root)/d(root) = 1 and visits each
// graph node exactly once in reverse topological order. Fan-out adds.
void backward(const Tensor& root);

// While alive, ops on this thread record no tape (inference mode).
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Parameters (requires_grad leaves) reachable from `out`'s graph. Used by
// tests to assert which networks a computation actually consumed.
std::vector<std::shared_ptr<TensorImpl>> reachable_parameters(const Tensor& out);

// Throws NumericError when the span contains NaN or Inf.
void check_finite(std::span<const double> values, const char* what);

}  // namespace diffe
