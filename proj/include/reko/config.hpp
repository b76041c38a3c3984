// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reko/synth.hpp"
#include "reko/trainer.hpp"

namespace reko {

/// Bad config file, unknown key or malformed override.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 512;
  std::size_t n_eval = 64;
  std::string dir;  // empty: generate in memory
  SynthOptions synth;
};

struct ExperimentConfig {
  DataConfig data;
  TrainConfig train;
  std::string teacher_checkpoint;
  std::string student_checkpoint;
  std::vector<std::uint64_t> ablation_seeds{0, 1, 2, 3, 4};
  std::vector<double> sweep_alphas{0.5, 1.0, 2.0, 4.0};
  std::vector<std::size_t> sweep_ks{8, 16, 32};
  std::size_t eval_samples = 32;
  std::size_t viz_samples = 4;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);

  /// Sorted-key compact JSON; the hash input.
  std::string canonical() const;
  /// SHA-256 of canonical().
  std::string hash() const;
};

/// Sets `path=value` in `j`. The dotted path must already exist; the value
/// is parsed as JSON and falls back to a plain string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Defaults, then the file (if any), then each override in order.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides);

/// The dataset named by `cfg`: loaded from cfg.dir when it holds a manifest,
/// generated in memory otherwise.
Dataset load_or_generate(const DataConfig& cfg);

}  // namespace reko
