// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "reko/tensor.hpp"

namespace reko {

/// Encoder activation of one image viewed as channels × regions, where
/// region i is spatial cell (i / width, i % width).
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Tensor values;  // channels × (height·width)

  /// Views a c×h×w tensor (or 1×c×h×w) as c×(h·w); gradients flow through.
  static FeatureMap from_chw(const Tensor& chw);
  /// Sample `index` of an N×c×h×w batch.
  static FeatureMap from_batch(const Tensor& nchw, std::size_t index);

  std::size_t regions() const { return height * width; }
};

enum class AttentionSource { teacher, student };

struct AttentionMap {
  Tensor values;  // (h·w), all entries ≥ 0
  AttentionSource source = AttentionSource::teacher;
};

/// Ordered crucial-region indices: descending attention, ties toward the
/// smaller index. Any region finder producing this type can drive the
/// region-restricted losses.
struct RegionSet {
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
};

/// Parameter-free attention: channel mean of absolute feature values.
AttentionMap attention_map(const FeatureMap& f,
                           AttentionSource source = AttentionSource::teacher);

/// The `k` regions with the largest attention. Throws unless
/// 1 ≤ k ≤ number of regions.
RegionSet top_k_regions(const AttentionMap& a, std::size_t k);

/// Columns of `f` at `r.indices`, in order: channels × K.
Tensor gather_regions(const FeatureMap& f, const RegionSet& r);

}  // namespace reko
