// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include "reko/losses.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "reko/random.hpp"

namespace reko {

ProjectionHead ProjectionHead::random(std::size_t in_channels,
                                      std::size_t embed_dim,
                                      std::uint64_t seed) {
  if (in_channels == 0 || embed_dim == 0) {
    throw std::invalid_argument("ProjectionHead: dimensions must be positive");
  }
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in_channels));
  return ProjectionHead{randn({embed_dim, in_channels}, stddev, rng, false),
                        seed};
}

ProjectionHead ProjectionHead::from_weight(Tensor weight) {
  if (weight.rank() != 2) {
    throw TensorError("ProjectionHead: weight must be d×c, got " +
                      shape_str(weight.shape()));
  }
  return ProjectionHead{weight.detach(), 0};
}

HeadPair HeadPair::make(std::size_t student_channels,
                        std::size_t teacher_channels, std::size_t embed_dim,
                        std::uint64_t seed) {
  return HeadPair{
      ProjectionHead::random(student_channels, embed_dim,
                             derive_seed(seed, "head.student")),
      ProjectionHead::random(teacher_channels, embed_dim,
                             derive_seed(seed, "head.teacher"))};
}

namespace {

constexpr std::array<std::pair<Baseline, std::string_view>, 6> kBaselineNames{{
    {Baseline::reko, "reko"},
    {Baseline::region_dis, "region_dis"},
    {Baseline::l2_regions, "l2_regions"},
    {Baseline::hinton_l1, "hinton_l1"},
    {Baseline::attention_transfer, "attention_transfer"},
    {Baseline::none, "none"},
}};

void require_same_regions(std::string_view op, const FeatureMap& fs,
                          const FeatureMap& ft) {
  if (fs.height != ft.height || fs.width != ft.width) {
    throw TensorError(std::string(op) + ": student grid " +
                      std::to_string(fs.height) + "×" +
                      std::to_string(fs.width) + " vs teacher grid " +
                      std::to_string(ft.height) + "×" +
                      std::to_string(ft.width));
  }
}

}  // namespace

std::string_view to_string(Baseline b) {
  for (const auto& [value, name] : kBaselineNames) {
    if (value == b) return name;
  }
  return "unknown";
}

std::optional<Baseline> parse_baseline(std::string_view name) {
  for (const auto& [value, n] : kBaselineNames) {
    if (n == name) return value;
  }
  return std::nullopt;
}

bool is_contrastive(Baseline b) {
  return b == Baseline::reko || b == Baseline::region_dis;
}

bool uses_regions(Baseline b) {
  return b == Baseline::reko || b == Baseline::l2_regions;
}

void DistillConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("distill.tau must be > 0");
  if (!(alpha >= 0.0)) throw std::invalid_argument("distill.alpha must be >= 0");
  if (embed_dim == 0) throw std::invalid_argument("distill.embed_dim must be > 0");
  if (uses_regions(baseline) && k < 1) {
    throw std::invalid_argument("distill.K must be >= 1");
  }
  if (baseline == Baseline::reko && k < 2) {
    throw std::invalid_argument(
        "distill.K must be >= 2 for a contrastive objective");
  }
}

Tensor project(const ProjectionHead& head, const Tensor& feats,
               bool normalize) {
  if (feats.rank() != 2 || feats.dim(0) != head.in_channels()) {
    throw TensorError("project: head expects " +
                      std::to_string(head.in_channels()) +
                      " channels, features are " + shape_str(feats.shape()));
  }
  Tensor z = matmul(head.weight, feats);
  return normalize ? l2_normalize(z, 0, 1e-8) : z;
}

Tensor info_nce(const Tensor& query, const Tensor& positive,
                const Tensor& negatives, double tau) {
  if (!(tau > 0.0)) throw TensorError("info_nce: temperature must be > 0");
  if (query.rank() != 1 || positive.shape() != query.shape()) {
    throw TensorError("info_nce: query " + shape_str(query.shape()) +
                      " and positive " + shape_str(positive.shape()) +
                      " must be equal-length vectors");
  }
  const std::size_t d = query.dim(0);
  if (negatives.rank() != 2 || negatives.dim(0) != d) {
    throw TensorError("info_nce: negatives must be " + std::to_string(d) +
                      "×N, got " + shape_str(negatives.shape()));
  }
  const double inv_tau = 1.0 / tau;
  Tensor pos = scale(sum(mul(query, positive)), inv_tau);
  Tensor neg = scale(reshape(matmul(reshape(query, {1, d}), negatives),
                             {negatives.dim(1)}),
                     inv_tau);
  const std::array<Tensor, 2> parts{pos, neg};
  return sub(logsumexp(concat(parts, 0), 0), pos);
}

Tensor patch_contrast(const Tensor& student_cols, const Tensor& teacher_cols,
                      const HeadPair& heads, const DistillConfig& cfg) {
  if (!(cfg.tau > 0.0)) {
    throw TensorError("patch_contrast: temperature must be > 0");
  }
  if (student_cols.rank() != 2 || teacher_cols.rank() != 2 ||
      student_cols.dim(1) != teacher_cols.dim(1)) {
    throw TensorError("patch_contrast: column mismatch " +
                      shape_str(student_cols.shape()) + " vs " +
                      shape_str(teacher_cols.shape()));
  }
  if (student_cols.dim(1) < 2) {
    throw TensorError("patch_contrast: need at least 2 regions for negatives");
  }
  const double inv_tau = 1.0 / cfg.tau;
  Tensor q = project(heads.student, student_cols, cfg.normalize_embeddings);
  Tensor k = project(heads.teacher, teacher_cols, cfg.normalize_embeddings);
  // Row i of the logits holds query i against every teacher key; the
  // diagonal entry is the positive, the rest are its negatives.
  Tensor logits = scale(matmul(transpose(q), k), inv_tau);
  Tensor positives = scale(sum(mul(q, k), 0), inv_tau);
  return sum(sub(logsumexp(logits, 1), positives));
}

Tensor region_dis(const FeatureMap& fs, const FeatureMap& ft,
                  const HeadPair& heads, const DistillConfig& cfg) {
  require_same_regions("region_dis", fs, ft);
  return patch_contrast(fs.values, ft.values, heads, cfg);
}

Tensor reko_loss(const FeatureMap& fs, const FeatureMap& ft,
                 const RegionSet& regions, const HeadPair& heads,
                 const DistillConfig& cfg) {
  require_same_regions("reko_loss", fs, ft);
  if (regions.size() < 2) {
    throw TensorError("reko_loss: K=" + std::to_string(regions.size()) +
                      " leaves no negatives, need K >= 2");
  }
  return patch_contrast(gather_regions(fs, regions),
                        gather_regions(ft, regions), heads, cfg);
}

Tensor l2_regions(const FeatureMap& fs, const FeatureMap& ft,
                  const RegionSet& regions, const HeadPair& heads,
                  bool normalize) {
  require_same_regions("l2_regions", fs, ft);
  if (regions.size() < 1) throw TensorError("l2_regions: empty region set");
  Tensor q = project(heads.student, gather_regions(fs, regions), normalize);
  Tensor k = project(heads.teacher, gather_regions(ft, regions), normalize);
  return scale(sum(square(sub(q, k))),
               1.0 / static_cast<double>(regions.size()));
}

Tensor hinton_l1(const Tensor& image_s, const Tensor& image_t) {
  if (image_s.shape() != image_t.shape()) {
    throw TensorError("hinton_l1: image shapes " + shape_str(image_s.shape()) +
                      " and " + shape_str(image_t.shape()) + " differ");
  }
  return mean(abs(sub(image_s, image_t)));
}

Tensor attention_transfer(const FeatureMap& fs, const FeatureMap& ft) {
  require_same_regions("attention_transfer", fs, ft);
  Tensor as = l2_normalize(attention_map(fs, AttentionSource::student).values,
                           0, 1e-8);
  Tensor at = l2_normalize(attention_map(ft).values, 0, 1e-8);
  return sum(square(sub(as, at)));
}

Tensor similarity_map(const FeatureMap& fs, const FeatureMap& ft,
                      std::size_t query_region, const HeadPair& heads) {
  require_same_regions("similarity_map", fs, ft);
  if (query_region >= fs.regions()) {
    throw TensorError("similarity_map: query region " +
                      std::to_string(query_region) + " outside " +
                      std::to_string(fs.regions()) + " regions");
  }
  const std::array<std::size_t, 1> col{query_region};
  Tensor q = project(heads.student, gather_columns(fs.values, col), true);
  Tensor k = project(heads.teacher, ft.values, true);
  return reshape(matmul(transpose(q), k), {ft.regions()});
}

Tensor distillation_loss(std::span<const FeatureMap> fs,
                         std::span<const FeatureMap> ft,
                         const Tensor& images_s, const Tensor& images_t,
                         const HeadPair& heads, const DistillConfig& cfg) {
  if (cfg.baseline == Baseline::none) return Tensor::scalar(0.0);
  if (cfg.baseline == Baseline::hinton_l1) {
    return hinton_l1(images_s, images_t);
  }
  if (fs.size() != ft.size() || fs.empty()) {
    throw TensorError("distillation_loss: batch sizes " +
                      std::to_string(fs.size()) + " and " +
                      std::to_string(ft.size()));
  }
  Tensor total;
  for (std::size_t n = 0; n < fs.size(); ++n) {
    Tensor term;
    switch (cfg.baseline) {
      case Baseline::region_dis:
        term = region_dis(fs[n], ft[n], heads, cfg);
        break;
      case Baseline::reko:
      case Baseline::l2_regions: {
        const RegionSet regions =
            top_k_regions(attention_map(ft[n]), cfg.k);
        term = cfg.baseline == Baseline::reko
                   ? reko_loss(fs[n], ft[n], regions, heads, cfg)
                   : l2_regions(fs[n], ft[n], regions, heads,
                                cfg.normalize_embeddings);
        break;
      }
      case Baseline::attention_transfer:
        term = attention_transfer(fs[n], ft[n]);
        break;
      default:
        throw TensorError("distillation_loss: unsupported baseline");
    }
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(fs.size()));
}

}  // namespace reko
