// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace reko {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for shape mismatches, bad arguments and non-finite results.
class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tensor;

namespace detail {

using BackwardFn =
    std::function<void(std::span<const double>, std::span<Tensor>)>;

// One recorded operation. The closure receives the gradient of the op's
// output and accumulates into the gradients of its inputs.
struct Node {
  std::string_view op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::unique_ptr<Node> node;
};

}  // namespace detail

/// Dense row-major tensor of doubles with define-by-run reverse-mode
/// autodiff. Copies are shallow handles sharing the same storage; use
/// clone() for a deep copy.
///
/// An op whose inputs do not require gradients records nothing, so frozen
/// networks run without building a graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access, intended for leaves (optimizers, initializers).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Same data, no history, no gradient participation.
  Tensor detach() const;
  Tensor clone() const;

  /// Reverse pass from a scalar. Gradients accumulate into every
  /// requires_grad leaf reachable from this tensor. The recorded graph is
  /// released afterwards; a second backward through it throws.
  void backward() const;

  std::string_view op_name() const;

  // Used by op implementations.
  static Tensor make_result(Shape shape, std::vector<double> data,
                            std::string_view op,
                            std::vector<Tensor> inputs,
                            detail::BackwardFn bw);
  std::vector<double>& grad_buffer();
  const detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

/// Fixed negative slope used everywhere a leaky ReLU appears.
inline constexpr double kLeakySlope = 0.2;

Tensor leaky_relu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
/// log(sum(exp(x))) along `axis`, stabilised by subtracting the max.
Tensor logsumexp(const Tensor& x, std::size_t axis);
/// x / max(||x||_2, eps) along `axis`.
Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps = 1e-8);

// ---- structural -----------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);  // rank 2
/// Slice `index` of axis 0, dropping that axis.
Tensor select(const Tensor& x, std::size_t index);
/// Concatenate along `axis`; all other extents must agree.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Columns of a rank-2 tensor, in the given order.
Tensor gather_columns(const Tensor& x, std::span<const std::size_t> columns);
/// Stack equal-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

struct ConvParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_padding = 0;  // transposed convolution only
};

/// x: N×Cin×H×W, weight: Cout×Cin×k×k, bias: Cout (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              ConvParams params);
/// x: N×Cin×H×W, weight: Cin×Cout×k×k, bias: Cout (may be undefined).
/// Output extent (H−1)·stride − 2·padding + k + output_padding.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight,
                        const Tensor& bias, ConvParams params);

}  // namespace reko
