// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include "reko/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace reko {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) {
      throw TensorError("tensor extents must be positive, got " +
                        shape_str(shape));
    }
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw TensorError("from_data: shape " + shape_str(shape) + " needs " +
                      std::to_string(shape_numel(shape)) + " values, got " +
                      std::to_string(data.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw TensorError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw TensorError("axis " + std::to_string(axis) +
                      " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw TensorError("use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw TensorError("use of undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw TensorError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) {
    throw TensorError("at(): rank mismatch for shape " + shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw TensorError("at(): index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) {
    throw TensorError("set_requires_grad on non-leaf tensor");
  }
  impl_->requires_grad = value;
}

bool Tensor::is_leaf() const {
  return impl_ && impl_->node == nullptr && !impl_->consumed;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw TensorError("tensor has no gradient");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const {
  return from_data(shape(), impl_->data, false);
}

Tensor Tensor::clone() const {
  return from_data(shape(), impl_->data, impl_->requires_grad && is_leaf());
}

std::string_view Tensor::op_name() const {
  if (impl_ && impl_->node) return impl_->node->op;
  return "leaf";
}

std::vector<double>& Tensor::grad_buffer() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data,
                           std::string_view op, std::vector<Tensor> inputs,
                           detail::BackwardFn bw) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw TensorError(std::string(op) + ": non-finite output");
    }
  }
  bool needs_grad = false;
  for (const auto& in : inputs) {
    if (!in.impl_) continue;
    if (in.impl_->consumed) {
      throw TensorError(std::string(op) +
                        ": input belongs to an already consumed graph");
    }
    needs_grad = needs_grad || in.requires_grad();
  }
  Tensor out = from_data(std::move(shape), std::move(data), needs_grad);
  if (needs_grad) {
    out.impl_->node = std::make_unique<detail::Node>(
        detail::Node{op, std::move(inputs), std::move(bw)});
  }
  return out;
}

void Tensor::backward() const {
  if (!impl_) throw TensorError("backward on undefined tensor");
  if (impl_->consumed) {
    throw TensorError("backward: graph already consumed by a previous pass");
  }
  if (numel() != 1) {
    throw TensorError("backward requires a scalar loss, got shape " +
                      shape_str(shape()));
  }
  if (!impl_->requires_grad) {
    throw TensorError("backward on a tensor that does not require grad");
  }

  // Iterative post-order DFS gives a topological order of op outputs.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<const detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      auto* child = t->node->inputs[next++].impl_.get();
      if (child == nullptr) continue;
      if (child->consumed) {
        throw TensorError("backward: graph already consumed by a previous pass");
      }
      if (child->requires_grad && child->node && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  impl_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* t = *it;
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
    t->node->backward(t->grad, t->node->inputs);
  }
  for (auto* t : order) {
    t->node.reset();
    t->grad.clear();
    t->grad.shrink_to_fit();
    t->consumed = true;
  }
}

}  // namespace reko
