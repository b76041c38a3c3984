// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include "reko/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "reko/serialize.hpp"

namespace reko {

nlohmann::json QualityMetrics::to_json() const {
  return {{"fg_mse", fg_mse}, {"bg_mse", bg_mse}, {"mse", mse}, {"psnr", psnr}};
}

QualityMetrics QualityMetrics::from_json(const nlohmann::json& j) {
  return {j.at("fg_mse").get<double>(), j.at("bg_mse").get<double>(),
          j.at("mse").get<double>(), j.at("psnr").get<double>()};
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(4.0 / mse));
}

QualityMetrics quality_from_outputs(const Tensor& outputs,
                                    const std::vector<Sample>& samples) {
  if (samples.empty()) throw TensorError("quality metrics: empty split");
  if (outputs.rank() != 4 || outputs.dim(0) != samples.size() ||
      Shape(outputs.shape().begin() + 1, outputs.shape().end()) !=
          samples[0].target.shape()) {
    throw TensorError("quality metrics: outputs " +
                      shape_str(outputs.shape()) + " do not match " +
                      std::to_string(samples.size()) + " samples of " +
                      shape_str(samples[0].target.shape()));
  }
  const auto out = outputs.data();
  const std::size_t channels = outputs.dim(1);
  const std::size_t plane = outputs.dim(2) * outputs.dim(3);
  double fg = 0.0, bg = 0.0;
  std::size_t n_fg = 0, n_bg = 0;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto target = samples[n].target.data();
    const auto& mask = samples[n].mask;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = out[(n * channels + c) * plane + p] -
                         target[c * plane + p];
        if (mask[p]) {
          fg += d * d;
          ++n_fg;
        } else {
          bg += d * d;
          ++n_bg;
        }
      }
    }
  }
  QualityMetrics q;
  q.fg_mse = n_fg ? fg / static_cast<double>(n_fg) : 0.0;
  q.bg_mse = n_bg ? bg / static_cast<double>(n_bg) : 0.0;
  q.mse = (fg + bg) / static_cast<double>(n_fg + n_bg);
  q.psnr = psnr_from_mse(q.mse);
  return q;
}

QualityMetrics quality_metrics(const Generator& model,
                               const std::vector<Sample>& split,
                               std::size_t batch_size) {
  if (split.empty()) throw TensorError("quality metrics: empty split");
  std::vector<Tensor> outs;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(split.size(), start + batch_size);
         ++i) {
      idx.push_back(i);
    }
    outs.push_back(model.translate(batch_inputs(split, idx)).detach());
  }
  return quality_from_outputs(concat(outs, 0), split);
}

std::vector<std::uint8_t> downsample_mask(std::span<const std::uint8_t> mask,
                                          std::size_t size,
                                          std::size_t grid_h,
                                          std::size_t grid_w) {
  if (grid_h == 0 || grid_w == 0 || size % grid_h || size % grid_w) {
    throw TensorError("downsample_mask: " + std::to_string(size) +
                      " pixels not divisible into a " +
                      std::to_string(grid_h) + "×" + std::to_string(grid_w) +
                      " grid");
  }
  if (mask.size() != size * size) {
    throw TensorError("downsample_mask: mask has " +
                      std::to_string(mask.size()) + " pixels, expected " +
                      std::to_string(size * size));
  }
  const std::size_t ch = size / grid_h;
  const std::size_t cw = size / grid_w;
  std::vector<std::uint8_t> cells(grid_h * grid_w, 0);
  for (std::size_t gy = 0; gy < grid_h; ++gy) {
    for (std::size_t gx = 0; gx < grid_w; ++gx) {
      std::size_t on = 0;
      for (std::size_t y = gy * ch; y < (gy + 1) * ch; ++y) {
        for (std::size_t x = gx * cw; x < (gx + 1) * cw; ++x) {
          on += mask[y * size + x] ? 1 : 0;
        }
      }
      cells[gy * grid_w + gx] = 2 * on >= ch * cw ? 1 : 0;
    }
  }
  return cells;
}

double region_iou(const RegionSet& regions, std::span<const std::uint8_t> mask,
                  std::size_t size, std::size_t grid_h, std::size_t grid_w) {
  const auto cells = downsample_mask(mask, size, grid_h, grid_w);
  std::vector<std::uint8_t> picked(cells.size(), 0);
  for (auto i : regions.indices) {
    if (i >= picked.size()) {
      throw TensorError("region_iou: region " + std::to_string(i) +
                        " outside the grid");
    }
    picked[i] = 1;
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    inter += (picked[i] && cells[i]) ? 1 : 0;
    uni += (picked[i] || cells[i]) ? 1 : 0;
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

double mean_attention_iou(const Generator& teacher,
                          const std::vector<Sample>& split, std::size_t k) {
  if (split.empty()) throw TensorError("mean_attention_iou: empty split");
  const std::size_t grid = teacher.spec().bottleneck_size();
  double total = 0.0;
  for (std::size_t start = 0; start < split.size(); start += 16) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(split.size(), start + 16); ++i) {
      idx.push_back(i);
    }
    const Tensor feats = teacher.forward(batch_inputs(split, idx)).bottleneck;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto regions = top_k_regions(
          attention_map(FeatureMap::from_batch(feats, b)), k);
      const Sample& s = split[idx[b]];
      total += region_iou(regions, s.mask, s.size(), grid, grid);
    }
  }
  return total / static_cast<double>(split.size());
}

double diagonality(const FeatureMap& fs, const FeatureMap& ft,
                   const HeadPair& heads) {
  if (fs.regions() != ft.regions() || fs.regions() < 2) {
    throw TensorError("diagonality: need matching grids with >= 2 regions");
  }
  const Tensor q = project(heads.student, fs.values, true);
  const Tensor k = project(heads.teacher, ft.values, true);
  const Tensor cos = matmul(transpose(q), k);
  const auto c = cos.data();
  const std::size_t m = fs.regions();
  double score = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double off = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) off += c[i * m + j];
    }
    score += c[i * m + i] - off / static_cast<double>(m - 1);
  }
  return score / static_cast<double>(m);
}

double diagonality(const Generator& student, const Generator& teacher,
                   const std::vector<Sample>& samples, const HeadPair& heads) {
  if (samples.empty()) throw TensorError("diagonality: no samples");
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Tensor x = batch_inputs(samples, idx);
  const Tensor fs = student.forward(x).bottleneck.detach();
  const Tensor ft = teacher.forward(x).bottleneck.detach();
  double total = 0.0;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    total += diagonality(FeatureMap::from_batch(fs, n),
                         FeatureMap::from_batch(ft, n), heads);
  }
  return total / static_cast<double>(samples.size());
}

double stability_score(std::span<const double> series) {
  if (series.size() < 6) {
    throw TensorError("stability_score: need >= 6 eval points, got " +
                      std::to_string(series.size()));
  }
  const std::size_t tail = series.size() / 3;
  const auto last = series.subspan(series.size() - tail);
  const double mean =
      std::accumulate(last.begin(), last.end(), 0.0) /
      static_cast<double>(tail);
  double var = 0.0;
  for (double v : last) var += (v - mean) * (v - mean);
  return var / static_cast<double>(tail);
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = quality.to_json();
  j["region_iou"] = region_iou;
  j["diagonality"] = diagonality;
  j["metric_variance"] = metric_variance;
  return j;
}

namespace {

std::uint8_t to_byte(double v, double lo, double hi) {
  const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_pgm(const std::filesystem::path& path,
               std::span<const double> values, std::size_t h, std::size_t w,
               double lo, double hi) {
  if (values.size() != h * w) {
    throw TensorError("write_pgm: " + std::to_string(values.size()) +
                      " values for a " + std::to_string(h) + "×" +
                      std::to_string(w) + " image");
  }
  std::ostringstream os;
  os << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : values) os.put(static_cast<char>(to_byte(v, lo, hi)));
  write_file_atomic(path, os.str());
}

void write_pgm_minmax(const std::filesystem::path& path,
                      std::span<const double> values, std::size_t h,
                      std::size_t w) {
  if (values.empty()) throw TensorError("write_pgm_minmax: no values");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  write_pgm(path, values, h, w, *lo, *hi);
}

void write_ppm_panel(const std::filesystem::path& path,
                     std::span<const Tensor> images) {
  if (images.empty()) throw TensorError("write_ppm_panel: no images");
  const Shape& s = images[0].shape();
  if (s.size() != 3 || (s[0] != 3 && s[0] != 1)) {
    throw TensorError("write_ppm_panel: expected C×H×W with C in {1,3}, got " +
                      shape_str(s));
  }
  for (const auto& img : images) {
    if (img.shape() != s) throw TensorError("write_ppm_panel: ragged images");
  }
  const std::size_t c = s[0], h = s[1], w = s[2];
  std::ostringstream os;
  os << "P6\n" << w * images.size() << ' ' << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (const auto& img : images) {
      const auto d = img.data();
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const std::size_t src = c == 3 ? ch : 0;
          os.put(static_cast<char>(to_byte(d[(src * h + y) * w + x], -1.0, 1.0)));
        }
      }
    }
  }
  write_file_atomic(path, os.str());
}

}  // namespace reko
