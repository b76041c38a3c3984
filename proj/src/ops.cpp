// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "reko/tensor.hpp"

namespace reko {

namespace {

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(std::string_view op, const Shape& shape,
                     std::size_t axis) {
  if (axis >= shape.size()) {
    throw TensorError(std::string(op) + ": axis " + std::to_string(axis) +
                      " invalid for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

// Elementwise unary op with derivative expressed through (x, y).
template <typename F, typename D>
Tensor unary(std::string_view op, const Tensor& x, F f, D dfdx) {
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return Tensor::make_result(
      x.shape(), std::move(out), op, {x},
      [dfdx](std::span<const double> g, std::span<Tensor> in) {
        if (!in[0].requires_grad()) return;
        auto xv = in[0].data();
        auto& gx = in[0].grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i]);
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  return Tensor::make_result(
      a.shape(), std::move(out), "add", {a, b},
      [](std::span<const double> g, std::span<Tensor> in) {
        for (auto& t : in) {
          if (!t.requires_grad()) continue;
          auto& gt = t.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  return Tensor::make_result(
      a.shape(), std::move(out), "sub", {a, b},
      [](std::span<const double> g, std::span<Tensor> in) {
        if (in[0].requires_grad()) {
          auto& ga = in[0].grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (in[1].requires_grad()) {
          auto& gb = in[1].grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto as = a.data();
  auto bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  return Tensor::make_result(
      a.shape(), std::move(out), "mul", {a, b},
      [](std::span<const double> g, std::span<Tensor> in) {
        auto av = in[0].data();
        auto bv = in[1].data();
        if (in[0].requires_grad()) {
          auto& ga = in[0].grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (in[1].requires_grad()) {
          auto& gb = in[1].grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
      });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      "add_scalar", a, [value](double x) { return x + value; },
      [](double) { return 1.0; });
}

Tensor leaky_relu(const Tensor& x) {
  return unary(
      "leaky_relu", x,
      [](double v) { return v > 0.0 ? v : kLeakySlope * v; },
      [](double v) { return v > 0.0 ? 1.0 : kLeakySlope; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); },
      [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); },
      [](double v) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; },
      [](double v) { return 2.0 * v; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::make_result(
      {1}, {total}, "sum", {x},
      [](std::span<const double> g, std::span<Tensor> in) {
        if (!in[0].requires_grad()) return;
        for (auto& v : in[0].grad_buffer()) v += g[0];
      });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, std::size_t axis) {
  const auto s = split_axis("sum", x.shape(), axis);
  auto xs = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      const double* row = xs.data() + (o * s.extent + k) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
    }
  }
  return Tensor::make_result(
      drop_axis(x.shape(), axis), std::move(out), "sum_axis", {x},
      [s](std::span<const double> g, std::span<Tensor> in) {
        if (!in[0].requires_grad()) return;
        auto& gx = in[0].grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t k = 0; k < s.extent; ++k) {
            double* dst = gx.data() + (o * s.extent + k) * s.inner;
            const double* src = g.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
          }
        }
      });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const double n = static_cast<double>(x.dim(axis));
  return scale(sum(x, axis), 1.0 / n);
}

Tensor logsumexp(const Tensor& x, std::size_t axis) {
  const auto s = split_axis("logsumexp", x.shape(), axis);
  auto xs = x.data();
  std::vector<double> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) {
        m = std::max(m, xs[(o * s.extent + k) * s.inner + i]);
      }
      double acc = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        acc += std::exp(xs[(o * s.extent + k) * s.inner + i] - m);
      }
      out[o * s.inner + i] = m + std::log(acc);
    }
  }
  std::vector<double> lse = out;
  return Tensor::make_result(
      drop_axis(x.shape(), axis), std::move(out), "logsumexp", {x},
      [s, lse = std::move(lse)](std::span<const double> g,
                                std::span<Tensor> in) {
        if (!in[0].requires_grad()) return;
        auto xv = in[0].data();
        auto& gx = in[0].grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t k = 0; k < s.extent; ++k) {
            for (std::size_t i = 0; i < s.inner; ++i) {
              const std::size_t idx = (o * s.extent + k) * s.inner + i;
              const std::size_t r = o * s.inner + i;
              gx[idx] += g[r] * std::exp(xv[idx] - lse[r]);
            }
          }
        }
      });
}

Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps) {
  const auto s = split_axis("l2_normalize", x.shape(), axis);
  auto xs = x.data();
  std::vector<double> norms(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const double v = xs[(o * s.extent + k) * s.inner + i];
        norms[o * s.inner + i] += v * v;
      }
    }
  }
  for (auto& n : norms) n = std::sqrt(n);
  std::vector<double> out(xs.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t idx = (o * s.extent + k) * s.inner + i;
        out[idx] = xs[idx] / std::max(norms[o * s.inner + i], eps);
      }
    }
  }
  std::vector<double> y = out;
  return Tensor::make_result(
      x.shape(), std::move(out), "l2_normalize", {x},
      [s, eps, norms = std::move(norms), y = std::move(y)](
          std::span<const double> g, std::span<Tensor> in) {
        if (!in[0].requires_grad()) return;
        auto& gx = in[0].grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const double n = norms[o * s.inner + i];
            const double r = std::max(n, eps);
            // Below eps the divisor is constant and the map is linear.
            double dot = 0.0;
            if (n > eps) {
              for (std::size_t k = 0; k < s.extent; ++k) {
                const std::size_t idx = (o * s.extent + k) * s.inner + i;
                dot += y[idx] * g[idx];
              }
            }
            for (std::size_t k = 0; k < s.extent; ++k) {
              const std::size_t idx = (o * s.extent + k) * s.inner + i;
              gx[idx] += (g[idx] - y[idx] * dot) / r;
            }
          }
        }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw TensorError("reshape: cannot view " + shape_str(x.shape()) +
                      " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(
      std::move(shape), std::move(out), "reshape", {x},
      [](std::span<const double> g, std::span<Tensor> in) {
        if (!in[0].requires_grad()) return;
        auto& gx = in[0].grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) {
    throw TensorError("transpose: expected rank 2, got " +
                      shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = xs[r * cols + c];
  }
  return Tensor::make_result(
      {cols, rows}, std::move(out), "transpose", {x},
      [rows, cols](std::span<const double> g, std::span<Tensor> in) {
        if (!in[0].requires_grad()) return;
        auto& gx = in[0].grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            gx[r * cols + c] += g[c * rows + r];
          }
        }
      });
}

Tensor select(const Tensor& x, std::size_t index) {
  if (x.rank() < 2) {
    throw TensorError("select: expected rank >= 2, got " +
                      shape_str(x.shape()));
  }
  if (index >= x.dim(0)) {
    throw TensorError("select: index " + std::to_string(index) +
                      " out of range for shape " + shape_str(x.shape()));
  }
  Shape rest(x.shape().begin() + 1, x.shape().end());
  const std::size_t inner = shape_numel(rest);
  const std::size_t offset = index * inner;
  auto xs = x.data();
  std::vector<double> out(xs.begin() + static_cast<std::ptrdiff_t>(offset),
                          xs.begin() +
                              static_cast<std::ptrdiff_t>(offset + inner));
  return Tensor::make_result(
      std::move(rest), std::move(out), "select", {x},
      [offset](std::span<const double> g, std::span<Tensor> in) {
        if (!in[0].requires_grad()) return;
        auto& gx = in[0].grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
      });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw TensorError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const auto base = split_axis("concat", first, axis);
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) ok = false;
    }
    if (!ok) {
      throw TensorError("concat: shape " + shape_str(s) +
                        " incompatible with " + shape_str(first) +
                        " along axis " + std::to_string(axis));
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out(base.outer * total * base.inner);
  std::size_t start = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto ps = parts[p].data();
    const std::size_t n = extents[p];
    for (std::size_t o = 0; o < base.outer; ++o) {
      std::copy_n(ps.data() + o * n * base.inner, n * base.inner,
                  out.data() + (o * total + start) * base.inner);
    }
    start += n;
  }
  const std::size_t outer = base.outer;
  const std::size_t inner = base.inner;
  return Tensor::make_result(
      std::move(out_shape), std::move(out), "concat",
      std::vector<Tensor>(parts.begin(), parts.end()),
      [extents, total, outer, inner](std::span<const double> g,
                                     std::span<Tensor> in) {
        std::size_t begin = 0;
        for (std::size_t p = 0; p < in.size(); ++p) {
          const std::size_t n = extents[p];
          if (in[p].requires_grad()) {
            auto& gp = in[p].grad_buffer();
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src = g.data() + (o * total + begin) * inner;
              double* dst = gp.data() + o * n * inner;
              for (std::size_t i = 0; i < n * inner; ++i) dst[i] += src[i];
            }
          }
          begin += n;
        }
      });
}

Tensor gather_columns(const Tensor& x, std::span<const std::size_t> columns) {
  if (x.rank() != 2) {
    throw TensorError("gather_columns: expected rank 2, got " +
                      shape_str(x.shape()));
  }
  if (columns.empty()) throw TensorError("gather_columns: no columns");
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  for (auto c : columns) {
    if (c >= cols) {
      throw TensorError("gather_columns: column " + std::to_string(c) +
                        " out of range for shape " + shape_str(x.shape()));
    }
  }
  const std::size_t k = columns.size();
  auto xs = x.data();
  std::vector<double> out(rows * k);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = xs[r * cols + columns[j]];
  }
  std::vector<std::size_t> idx(columns.begin(), columns.end());
  return Tensor::make_result(
      {rows, k}, std::move(out), "gather_columns", {x},
      [rows, cols, idx = std::move(idx)](std::span<const double> g,
                                         std::span<Tensor> in) {
        if (!in[0].requires_grad()) return;
        auto& gx = in[0].grad_buffer();
        const std::size_t k = idx.size();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < k; ++j) {
            gx[r * cols + idx[j]] += g[r * k + j];
          }
        }
      });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw TensorError("stack: no inputs");
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  Shape unit{1};
  const Shape& first = parts[0].shape();
  unit.insert(unit.end(), first.begin(), first.end());
  for (const auto& p : parts) {
    if (p.shape() != first) {
      throw TensorError("stack: shape " + shape_str(p.shape()) +
                        " differs from " + shape_str(first));
    }
    lifted.push_back(reshape(p, unit));
  }
  return concat(lifted, 0);
}

}  // namespace reko
