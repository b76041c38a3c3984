// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include "reko/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace reko {

namespace {

double eval_at(const ScalarFn& f, const Shape& shape,
               const std::vector<double>& values) {
  const Tensor out = f(Tensor::from_data(shape, values, false));
  const double v = out.item();
  if (!std::isfinite(v)) {
    throw TensorError("grad_check: function is non-finite near the point");
  }
  return v;
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor& point, double h) {
  const Shape shape = point.shape();
  std::vector<double> values(point.data().begin(), point.data().end());

  Tensor leaf = Tensor::from_data(shape, values, true);
  Tensor loss = f(leaf);
  if (loss.numel() != 1) {
    throw TensorError("grad_check: function must return a scalar, got " +
                      shape_str(loss.shape()));
  }
  std::vector<double> analytic(values.size(), 0.0);
  if (loss.requires_grad()) {
    loss.backward();
    if (leaf.has_grad()) {
      std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    }
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x0 = values[i];
    values[i] = x0 + h;
    const double up = eval_at(f, shape, values);
    values[i] = x0 - h;
    const double down = eval_at(f, shape, values);
    values[i] = x0;
    const double numeric = (up - down) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace reko
