// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "reko/attention.hpp"
#include "reko/losses.hpp"
#include "reko/models.hpp"
#include "reko/synth.hpp"

namespace reko {

/// PSNR is reported for images in [−1, 1] (peak 2) and capped here.
inline constexpr double kPsnrCap = 99.0;

struct QualityMetrics {
  double fg_mse = 0.0;  // pixels under the object mask
  double bg_mse = 0.0;  // pixels outside it
  double mse = 0.0;     // all pixels
  double psnr = 0.0;

  nlohmann::json to_json() const;
  static QualityMetrics from_json(const nlohmann::json& j);
};

double psnr_from_mse(double mse);

/// Squared errors of `outputs` (N×C×S×S) against the targets of `samples`,
/// pooled over pixels and channels.
QualityMetrics quality_from_outputs(const Tensor& outputs,
                                    const std::vector<Sample>& samples);
/// Runs `model` over `split` in batches. Throws on an empty split.
QualityMetrics quality_metrics(const Generator& model,
                               const std::vector<Sample>& split,
                               std::size_t batch_size = 16);

/// Majority-vote downsampling of an S×S mask to a grid; a cell is object
/// when at least half of its pixels are (ties count as object).
std::vector<std::uint8_t> downsample_mask(std::span<const std::uint8_t> mask,
                                          std::size_t size,
                                          std::size_t grid_h,
                                          std::size_t grid_w);

/// |P_K ∩ object cells| / |P_K ∪ object cells|.
double region_iou(const RegionSet& regions, std::span<const std::uint8_t> mask,
                  std::size_t size, std::size_t grid_h, std::size_t grid_w);

/// Mean teacher-attention IoU of the top-k regions over `split`.
double mean_attention_iou(const Generator& teacher,
                          const std::vector<Sample>& split, std::size_t k);

/// Mean over regions of cos(s_i, t_i) − mean_{j≠i} cos(s_i, t_j) on
/// projected features.
double diagonality(const FeatureMap& fs, const FeatureMap& ft,
                   const HeadPair& heads);
/// Average diagonality over `samples` using each model's bottleneck.
double diagonality(const Generator& student, const Generator& teacher,
                   const std::vector<Sample>& samples, const HeadPair& heads);

/// Population variance of the final third of `series`; needs ≥ 6 points.
double stability_score(std::span<const double> series);

struct MetricsReport {
  QualityMetrics quality;
  double region_iou = 0.0;
  double diagonality = 0.0;
  double metric_variance = 0.0;

  nlohmann::json to_json() const;
};

// ---- image export ---------------------------------------------------------

/// 8-bit grayscale PGM of `values` (h×w) mapped linearly from [lo, hi].
void write_pgm(const std::filesystem::path& path, std::span<const double> values,
               std::size_t h, std::size_t w, double lo, double hi);
/// Same with per-image min-max normalisation.
void write_pgm_minmax(const std::filesystem::path& path,
                      std::span<const double> values, std::size_t h,
                      std::size_t w);
/// 8-bit PPM of C×H×W images in [−1, 1] placed side by side.
void write_ppm_panel(const std::filesystem::path& path,
                     std::span<const Tensor> images);

}  // namespace reko
