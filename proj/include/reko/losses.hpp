// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "reko/attention.hpp"
#include "reko/tensor.hpp"

namespace reko {

/// Frozen random linear map from feature channels to the shared embedding
/// space. The weight never requires grad, so no optimizer can touch it.
struct ProjectionHead {
  Tensor weight;  // embed_dim × in_channels
  std::uint64_t seed = 0;

  /// Unit Gaussian entries scaled by 1/sqrt(in_channels).
  static ProjectionHead random(std::size_t in_channels, std::size_t embed_dim,
                               std::uint64_t seed);
  static ProjectionHead from_weight(Tensor weight);

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t embed_dim() const { return weight.dim(0); }
};

/// Student and teacher heads are independent draws into the same space.
struct HeadPair {
  ProjectionHead student;
  ProjectionHead teacher;

  static HeadPair make(std::size_t student_channels,
                       std::size_t teacher_channels, std::size_t embed_dim,
                       std::uint64_t seed);
};

enum class Baseline {
  reko,
  region_dis,
  l2_regions,
  hinton_l1,
  attention_transfer,
  none,
};

std::string_view to_string(Baseline b);
std::optional<Baseline> parse_baseline(std::string_view name);
bool is_contrastive(Baseline b);
bool uses_regions(Baseline b);

struct DistillConfig {
  double alpha = 1.0;
  std::size_t k = 16;
  double tau = 0.07;
  std::size_t embed_dim = 64;
  bool normalize_embeddings = true;
  Baseline baseline = Baseline::reko;

  /// Throws std::invalid_argument on τ ≤ 0, α < 0, embed_dim 0, or K < 2
  /// with a contrastive objective.
  void validate() const;
};

/// head.weight · feats (d×M), optionally with unit-norm columns.
Tensor project(const ProjectionHead& head, const Tensor& feats,
               bool normalize);

/// −log softmax of the positive logit among {positive} ∪ negatives, with
/// logits v·k/τ. `negatives` is d×N, N ≥ 1.
Tensor info_nce(const Tensor& query, const Tensor& positive,
                const Tensor& negatives, double tau);

/// Sum over the M matched columns of InfoNCE where query i is student
/// column i, its positive is teacher column i and its negatives are the
/// other teacher columns. Inputs are raw features (c×M); the heads and
/// cfg.normalize_embeddings are applied here.
Tensor patch_contrast(const Tensor& student_cols, const Tensor& teacher_cols,
                      const HeadPair& heads, const DistillConfig& cfg);

/// Contrastive distillation over every region of one image.
Tensor region_dis(const FeatureMap& fs, const FeatureMap& ft,
                  const HeadPair& heads, const DistillConfig& cfg);
/// Contrastive distillation restricted to the crucial regions.
Tensor reko_loss(const FeatureMap& fs, const FeatureMap& ft,
                 const RegionSet& regions, const HeadPair& heads,
                 const DistillConfig& cfg);
/// Mean squared distance of projected columns over the crucial regions.
Tensor l2_regions(const FeatureMap& fs, const FeatureMap& ft,
                  const RegionSet& regions, const HeadPair& heads,
                  bool normalize);
/// Mean absolute difference of generated images.
Tensor hinton_l1(const Tensor& image_s, const Tensor& image_t);
/// Squared L2 distance of L2-normalised attention maps.
Tensor attention_transfer(const FeatureMap& fs, const FeatureMap& ft);

/// Cosine similarity of projected student region `query_region` against
/// every projected teacher region; values in [−1, 1].
Tensor similarity_map(const FeatureMap& fs, const FeatureMap& ft,
                      std::size_t query_region, const HeadPair& heads);

/// Batch mean of `reko_loss`/`region_dis`/... as selected by cfg.baseline,
/// with crucial regions taken from the teacher's attention. Image
/// arguments are only needed for hinton_l1. Returns a zero scalar for
/// Baseline::none.
Tensor distillation_loss(std::span<const FeatureMap> fs,
                         std::span<const FeatureMap> ft,
                         const Tensor& images_s, const Tensor& images_t,
                         const HeadPair& heads, const DistillConfig& cfg);

}  // namespace reko
