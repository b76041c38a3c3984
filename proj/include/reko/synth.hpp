// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reko/tensor.hpp"

namespace reko {

/// Paired translation example: striped texture painted onto 1–3 ellipses,
/// background untouched.
struct Sample {
  Tensor input;   // C×S×S in [−1, 1]
  Tensor target;  // C×S×S in [−1, 1]; equals input wherever mask == 0
  std::vector<std::uint8_t> mask;  // S×S, 1 = object
  std::uint64_t seed = 0;

  std::size_t size() const { return input.dim(1); }
  double mask_fraction() const;
};

struct SynthOptions {
  std::size_t image_size = 64;
  double min_mask_fraction = 0.15;
  double max_mask_fraction = 0.35;
  std::size_t stripe_period = 4;
};

/// Deterministic in (seed, options).
Sample generate_sample(std::uint64_t seed, const SynthOptions& options = {});

/// Seed of sample `index` in a dataset generated from `dataset_seed`.
std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index);

// Sample file:
//   "RKSM" | u32 version | input tensor record | target tensor record |
//   "RKMK" | u32 rank=2 | u64 h | u64 w | u8 mask[h·w] | u64 seed
void write_sample(const std::filesystem::path& path, const Sample& s);
Sample read_sample(const std::filesystem::path& path);

struct DatasetManifest {
  std::uint32_t format_version = 1;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
  SynthOptions options;
  std::vector<std::string> files;      // train files first, then eval
  std::vector<std::string> checksums;  // sha256 per file

  std::size_t sample_count() const { return n_train + n_eval; }
  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

/// Writes every sample plus `manifest.json` under `out_dir`.
DatasetManifest generate_dataset(std::uint64_t seed, std::size_t n_train,
                                 std::size_t n_eval,
                                 const std::filesystem::path& out_dir,
                                 const SynthOptions& options = {});

/// In-memory dataset; samples are generated directly or loaded from disk.
struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> eval;

  static Dataset generate(std::uint64_t seed, std::size_t n_train,
                          std::size_t n_eval, const SynthOptions& options = {});
  /// Loads `dir/manifest.json` and every listed file, verifying checksums.
  static Dataset load(const std::filesystem::path& dir);
};

/// Stacks images of the given samples into an N×C×S×S batch.
Tensor batch_inputs(const std::vector<Sample>& samples,
                    std::span<const std::size_t> indices);
Tensor batch_targets(const std::vector<Sample>& samples,
                     std::span<const std::size_t> indices);

}  // namespace reko
