// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>

#include "reko/tensor.hpp"

namespace reko {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares the reverse-mode gradient of `f` at `point` with central
/// differences of step `h`. Returns the largest
/// |analytic − numeric| / max(1, |numeric|) over all coordinates.
/// Throws TensorError if `f` is non-finite anywhere it is probed.
double grad_check(const ScalarFn& f, const Tensor& point, double h = 1e-3);

}  // namespace reko
