// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "reko/tensor.hpp"

namespace reko {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed and a label, so that
/// e.g. the student init and the projection heads never share a stream.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Gaussian tensor with the given standard deviation.
Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad = false);
/// Uniform tensor on [lo, hi).
Tensor rand_uniform(Shape shape, double lo, double hi, Rng& rng,
                    bool requires_grad = false);

}  // namespace reko
