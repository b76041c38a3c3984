// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include "reko/attention.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace reko {

FeatureMap FeatureMap::from_chw(const Tensor& chw) {
  Shape s = chw.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3) {
    throw TensorError("FeatureMap: expected c×h×w, got " +
                      shape_str(chw.shape()));
  }
  return FeatureMap{s[0], s[1], s[2], reshape(chw, {s[0], s[1] * s[2]})};
}

FeatureMap FeatureMap::from_batch(const Tensor& nchw, std::size_t index) {
  if (nchw.rank() != 4) {
    throw TensorError("FeatureMap: expected N×c×h×w, got " +
                      shape_str(nchw.shape()));
  }
  return from_chw(select(nchw, index));
}

AttentionMap attention_map(const FeatureMap& f, AttentionSource source) {
  if (f.channels == 0) throw TensorError("attention_map: no channels");
  return AttentionMap{mean(abs(f.values), 0), source};
}

RegionSet top_k_regions(const AttentionMap& a, std::size_t k) {
  const auto values = a.values.data();
  const std::size_t n = values.size();
  if (k < 1 || k > n) {
    throw TensorError("top_k_regions: K=" + std::to_string(k) +
                      " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(k),
                    order.end(), [&](std::size_t l, std::size_t r) {
                      if (values[l] != values[r]) return values[l] > values[r];
                      return l < r;
                    });
  order.resize(k);
  return RegionSet{std::move(order)};
}

Tensor gather_regions(const FeatureMap& f, const RegionSet& r) {
  for (auto i : r.indices) {
    if (i >= f.regions()) {
      throw TensorError("gather_regions: region " + std::to_string(i) +
                        " outside a map of " + std::to_string(f.regions()) +
                        " regions");
    }
  }
  return gather_columns(f.values, r.indices);
}

}  // namespace reko
