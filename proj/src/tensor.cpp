#include "diffe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace diffe {

int shape_numel(const Shape& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("shape dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) {
  impl_ = std::make_shared<TensorImpl>();
  impl_->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return Tensor(std::move(shape), requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (static_cast<size_t>(shape_numel(shape)) != data.size())
    throw DimensionError("from_data: " + shape_str(shape) + " does not hold " + std::to_string(data.size()) +
                         " values");
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

std::span<double> Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) throw Error("tensor has no gradient");
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  impl_->grad_touched = false;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

namespace {

// Iterative post-order DFS over the tape. Returns tensors in an order where
// every node appears after all tensors that depend on it once reversed.
std::vector<std::shared_ptr<TensorImpl>> topo_order(const std::shared_ptr<TensorImpl>& root) {
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    std::shared_ptr<TensorImpl> impl;
    size_t next_child = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    const auto& node = f.impl->node;
    if (node && f.next_child < node->inputs.size()) {
      auto child = node->inputs[f.next_child++].impl();
      if (child && !seen.count(child.get())) {
        seen.insert(child.get());
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.impl);
      stack.pop_back();
    }
  }
  return order;  // children before parents; reverse for the sweep
}

}  // namespace

void backward(const Tensor& root) {
  if (!root.defined()) throw Error("backward on undefined tensor");
  if (root.numel() != 1) throw DimensionError("backward requires a scalar root, got " + shape_str(root.shape()));
  auto order = topo_order(root.impl());
  for (auto& impl : order) {
    impl->grad.assign(impl->data.size(), 0.0);
    impl->grad_touched = false;
  }
  root.impl()->grad[0] = 1.0;
  root.impl()->grad_touched = true;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& impl = *it;
    if (impl->node && impl->node->backward) impl->node->backward(impl->grad);
  }
}

std::vector<std::shared_ptr<TensorImpl>> reachable_parameters(const Tensor& out) {
  std::vector<std::shared_ptr<TensorImpl>> params;
  if (!out.defined()) return params;
  for (auto& impl : topo_order(out.impl()))
    if (!impl->node && impl->requires_grad) params.push_back(impl);
  return params;
}

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace diffe
