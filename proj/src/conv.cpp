// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Core>
#include <cstdint>
#include <cstdlib>
#include <new>
#include <string>
#include <vector>

#include "reko/tensor.hpp"

namespace reko {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

Eigen::Index ei(std::size_t n) { return static_cast<Eigen::Index>(n); }

constexpr std::size_t kAlign = 64;

template <class T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) {
    const std::size_t bytes = (n * sizeof(T) + kAlign - 1) / kAlign * kAlign;
    void* p = std::aligned_alloc(kAlign, bytes == 0 ? kAlign : bytes);
    if (p == nullptr) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) { std::free(p); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

bool aligned(const double* p) {
  return reinterpret_cast<std::uintptr_t>(p) % kAlign == 0;
}

// One GEMM operand: a row-major rows×cols block, optionally transposed.
struct Operand {
  const double* data;
  std::size_t rows, cols;
  bool transposed = false;

  std::size_t out_rows() const { return transposed ? cols : rows; }
  std::size_t out_cols() const { return transposed ? rows : cols; }
};

// c = a·b, or c += a·b. Every buffer Eigen sees starts on a 64-byte
// boundary, so vector peeling and therefore rounding are identical from
// run to run.
void gemm(Operand a, Operand b, double* c, bool accumulate) {
  Buffer sa, sb;
  if (!aligned(a.data)) {
    sa.assign(a.data, a.data + a.rows * a.cols);
    a.data = sa.data();
  }
  if (!aligned(b.data)) {
    sb.assign(b.data, b.data + b.rows * b.cols);
    b.data = sb.data();
  }
  const std::size_t m = a.out_rows();
  const std::size_t n = b.out_cols();
  Buffer result;
  double* dst = c;
  if (accumulate || !aligned(c)) {
    result.resize(m * n);
    dst = result.data();
  }
  const ConstMatMap ma(a.data, ei(a.rows), ei(a.cols));
  const ConstMatMap mb(b.data, ei(b.rows), ei(b.cols));
  MatMap mc(dst, ei(m), ei(n));
  if (a.transposed && b.transposed) {
    mc.noalias() = ma.transpose() * mb.transpose();
  } else if (a.transposed) {
    mc.noalias() = ma.transpose() * mb;
  } else if (b.transposed) {
    mc.noalias() = ma * mb.transpose();
  } else {
    mc.noalias() = ma * mb;
  }
  if (dst == c) return;
  if (accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] += dst[i];
  } else {
    std::copy(dst, dst + m * n, c);
  }
}

// Geometry of a convolution from an image (channels×in_h×in_w) to an
// out_h×out_w grid of k×k windows.
struct ConvGeom {
  std::size_t channels;
  std::size_t in_h, in_w;
  std::size_t out_h, out_w;
  std::size_t k, stride, pad;

  std::size_t col_rows() const { return channels * k * k; }
  std::size_t col_cols() const { return out_h * out_w; }
};

void im2col(const double* img, const ConvGeom& g, double* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 &&
                                iy < static_cast<std::ptrdiff_t>(g.in_h) &&
                                ix < static_cast<std::ptrdiff_t>(g.in_w);
            row[oy * g.out_w + ox] =
                inside ? img[(c * g.in_h + static_cast<std::size_t>(iy)) *
                                 g.in_w +
                             static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add windows back into the image.
void col2im(const double* col, const ConvGeom& g, double* img) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((c * g.k + ky) * g.k + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            img[(c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w +
                static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

struct ConvShapes {
  std::size_t n, cin, h, w, cout, k;
};

ConvShapes check_conv(std::string_view op, const Tensor& x, const Tensor& w,
                      const Tensor& b, bool transposed) {
  if (x.rank() != 4) {
    throw TensorError(std::string(op) + ": input must be N×C×H×W, got " +
                      shape_str(x.shape()));
  }
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
    throw TensorError(std::string(op) + ": weight must be square k×k, got " +
                      shape_str(w.shape()));
  }
  ConvShapes s{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
               transposed ? w.dim(1) : w.dim(0), w.dim(2)};
  const std::size_t w_in = transposed ? w.dim(0) : w.dim(1);
  if (w_in != s.cin) {
    throw TensorError(std::string(op) + ": input has " +
                      std::to_string(s.cin) + " channels but weight " +
                      shape_str(w.shape()) + " expects " +
                      std::to_string(w_in));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != s.cout)) {
    throw TensorError(std::string(op) + ": bias shape " +
                      shape_str(b.shape()) + " does not match " +
                      std::to_string(s.cout) + " output channels");
  }
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw TensorError("matmul: incompatible shapes " + shape_str(a.shape()) +
                      " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  std::vector<double> out(m * n);
  gemm({a.data().data(), m, k}, {b.data().data(), k, n}, out.data(), false);
  return Tensor::make_result(
      {m, n}, std::move(out), "matmul", {a, b},
      [m, k, n](std::span<const double> g, std::span<Tensor> in) {
        if (in[0].requires_grad()) {
          gemm({g.data(), m, n}, {in[1].data().data(), k, n, true},
               in[0].grad_buffer().data(), true);
        }
        if (in[1].requires_grad()) {
          gemm({in[0].data().data(), m, k, true}, {g.data(), m, n},
               in[1].grad_buffer().data(), true);
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              ConvParams params) {
  const auto s = check_conv("conv2d", x, weight, bias, false);
  if (params.stride == 0) throw TensorError("conv2d: stride must be positive");
  if (s.h + 2 * params.padding < s.k || s.w + 2 * params.padding < s.k) {
    throw TensorError("conv2d: kernel " + std::to_string(s.k) +
                      " larger than padded input " + shape_str(x.shape()));
  }
  const ConvGeom g{s.cin,
                   s.h,
                   s.w,
                   (s.h + 2 * params.padding - s.k) / params.stride + 1,
                   (s.w + 2 * params.padding - s.k) / params.stride + 1,
                   s.k,
                   params.stride,
                   params.padding};
  const std::size_t rows = g.col_rows();
  const std::size_t cols = g.col_cols();
  const std::size_t in_size = s.cin * s.h * s.w;
  const std::size_t out_size = s.cout * cols;

  std::vector<Buffer> col_all(s.n, Buffer(rows * cols));
  std::vector<double> out(s.n * out_size);
  const Buffer wbuf(weight.data().begin(), weight.data().end());
  for (std::size_t i = 0; i < s.n; ++i) {
    im2col(x.data().data() + i * in_size, g, col_all[i].data());
    double* o = out.data() + i * out_size;
    gemm({wbuf.data(), s.cout, rows}, {col_all[i].data(), rows, cols}, o,
         false);
    if (bias.defined()) {
      for (std::size_t c = 0; c < s.cout; ++c) {
        const double b = bias.data()[c];
        for (std::size_t p = 0; p < cols; ++p) o[c * cols + p] += b;
      }
    }
  }

  return Tensor::make_result(
      {s.n, s.cout, g.out_h, g.out_w}, std::move(out), "conv2d",
      {x, weight, bias},
      [s, g, col_all = std::move(col_all)](std::span<const double> grad,
                                           std::span<Tensor> in) {
        const std::size_t rows = g.col_rows();
        const std::size_t cols = g.col_cols();
        const std::size_t in_size = s.cin * s.h * s.w;
        const std::size_t out_size = s.cout * cols;
        const Buffer wbuf(in[1].data().begin(), in[1].data().end());
        Buffer dcol(in[0].requires_grad() ? rows * cols : 0);
        for (std::size_t i = 0; i < s.n; ++i) {
          const double* gi = grad.data() + i * out_size;
          if (in[1].requires_grad()) {
            gemm({gi, s.cout, cols}, {col_all[i].data(), rows, cols, true},
                 in[1].grad_buffer().data(), true);
          }
          if (in[2].defined() && in[2].requires_grad()) {
            auto& gb = in[2].grad_buffer();
            for (std::size_t c = 0; c < s.cout; ++c) {
              double acc = 0.0;
              for (std::size_t p = 0; p < cols; ++p) acc += gi[c * cols + p];
              gb[c] += acc;
            }
          }
          if (in[0].requires_grad()) {
            gemm({wbuf.data(), s.cout, rows, true}, {gi, s.cout, cols},
                 dcol.data(), false);
            col2im(dcol.data(), g,
                   in[0].grad_buffer().data() + i * in_size);
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight,
                        const Tensor& bias, ConvParams params) {
  const auto s = check_conv("conv_transpose2d", x, weight, bias, true);
  if (params.stride == 0) {
    throw TensorError("conv_transpose2d: stride must be positive");
  }
  if (params.output_padding >= params.stride) {
    throw TensorError("conv_transpose2d: output_padding must be < stride");
  }
  const auto out_extent = [&](std::size_t in) -> std::size_t {
    const auto e = static_cast<std::ptrdiff_t>((in - 1) * params.stride) -
                   2 * static_cast<std::ptrdiff_t>(params.padding) +
                   static_cast<std::ptrdiff_t>(s.k + params.output_padding);
    if (e <= 0) {
      throw TensorError("conv_transpose2d: empty output for input " +
                        shape_str(x.shape()));
    }
    return static_cast<std::size_t>(e);
  };
  const std::size_t oh = out_extent(s.h);
  const std::size_t ow = out_extent(s.w);
  // The forward of a transposed convolution is the data-adjoint of a
  // convolution mapping the output image back onto the input grid.
  const ConvGeom g{s.cout, oh, ow, s.h, s.w, s.k, params.stride,
                   params.padding};
  const std::size_t rows = g.col_rows();  // cout·k·k
  const std::size_t cols = g.col_cols();  // h·w
  const std::size_t in_size = s.cin * cols;
  const std::size_t out_size = s.cout * oh * ow;

  std::vector<double> out(s.n * out_size, 0.0);
  Buffer col(rows * cols);
  const Buffer wbuf(weight.data().begin(), weight.data().end());
  for (std::size_t i = 0; i < s.n; ++i) {
    gemm({wbuf.data(), s.cin, rows, true},
         {x.data().data() + i * in_size, s.cin, cols}, col.data(), false);
    double* img = out.data() + i * out_size;
    col2im(col.data(), g, img);
    if (bias.defined()) {
      for (std::size_t c = 0; c < s.cout; ++c) {
        const double b = bias.data()[c];
        for (std::size_t p = 0; p < oh * ow; ++p) img[c * oh * ow + p] += b;
      }
    }
  }

  return Tensor::make_result(
      {s.n, s.cout, oh, ow}, std::move(out), "conv_transpose2d",
      {x, weight, bias},
      [s, g](std::span<const double> grad, std::span<Tensor> in) {
        const std::size_t rows = g.col_rows();
        const std::size_t cols = g.col_cols();
        const std::size_t in_size = s.cin * cols;
        const std::size_t plane = g.in_h * g.in_w;
        const std::size_t out_size = s.cout * plane;
        const Buffer wbuf(in[1].data().begin(), in[1].data().end());
        Buffer dcol(rows * cols);
        for (std::size_t i = 0; i < s.n; ++i) {
          const double* gimg = grad.data() + i * out_size;
          if (in[2].defined() && in[2].requires_grad()) {
            auto& gb = in[2].grad_buffer();
            for (std::size_t c = 0; c < s.cout; ++c) {
              double acc = 0.0;
              for (std::size_t p = 0; p < plane; ++p) acc += gimg[c * plane + p];
              gb[c] += acc;
            }
          }
          if (!in[0].requires_grad() && !in[1].requires_grad()) continue;
          im2col(gimg, g, dcol.data());
          if (in[0].requires_grad()) {
            gemm({wbuf.data(), s.cin, rows}, {dcol.data(), rows, cols},
                 in[0].grad_buffer().data() + i * in_size, true);
          }
          if (in[1].requires_grad()) {
            gemm({in[0].data().data() + i * in_size, s.cin, cols},
                 {dcol.data(), rows, cols, true}, in[1].grad_buffer().data(),
                 true);
          }
        }
      });
}

}  // namespace reko
