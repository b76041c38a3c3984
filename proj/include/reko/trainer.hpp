// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "reko/losses.hpp"
#include "reko/metrics.hpp"
#include "reko/models.hpp"
#include "reko/synth.hpp"

namespace reko {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  bool adversarial = false;
  double adv_weight = 0.1;
  std::size_t eval_every = 1;
  GeneratorSpec teacher;
  std::size_t student_width = 8;
  DiscriminatorSpec discriminator;
  DistillConfig distill;

  GeneratorSpec student_spec() const;
  /// Throws std::invalid_argument on any out-of-range field.
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are an error.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;
  double origin = 0.0;       // reconstruction L1
  double distill = 0.0;      // unweighted distillation loss
  double adversarial = 0.0;  // weighted adversarial term
  double total = 0.0;        // what was minimised: origin + α·distill + adversarial
  std::optional<QualityMetrics> eval;

  nlohmann::json to_json() const;
};

/// Per-run history. Epoch 0 holds the evaluation of the initial model.
struct RunRecord {
  nlohmann::json config;
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
  std::vector<std::string> checkpoints;

  void append(EpochRecord e) { epochs.push_back(std::move(e)); }
  /// One QualityMetrics field (fg_mse, bg_mse, mse, psnr) at every evaluated
  /// epoch after initialisation.
  std::vector<double> eval_series(std::string_view metric = "fg_mse") const;
  const QualityMetrics& initial_eval() const;
  const QualityMetrics& final_eval() const;

  /// One JSON object per epoch, newline-terminated. Wall time is kept out
  /// so identical runs produce identical bytes.
  std::string to_jsonl() const;
};

/// Thrown when a loss goes non-finite; carries the history up to the
/// failing epoch.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, RunRecord record)
      : std::runtime_error(what), record_(std::move(record)) {}
  const RunRecord& record() const { return record_; }

 private:
  RunRecord record_;
};

struct RunOptions {
  /// When set, the checkpoint, `record.jsonl` and `train_config.json` are
  /// written here.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TeacherRun {
  Generator teacher;
  RunRecord record;
};

TeacherRun train_teacher(const TrainConfig& cfg, const Dataset& data,
                         const RunOptions& options = {});

struct StudentRun {
  Generator student;
  HeadPair heads;
  RunRecord record;
};

/// Distils into a fresh student. The teacher is only read; its parameters
/// must not require grad.
StudentRun distill_student(const TrainConfig& cfg, const Generator& teacher,
                           const Dataset& data, const RunOptions& options = {});

/// Projection heads a distillation run with this config uses.
HeadPair make_heads(const TrainConfig& cfg);

struct GridRun {
  std::string label;
  TrainConfig config;
  StudentRun run;
};

/// {crucial regions, contrastive} ∈ {0,1}²: none, region_dis, l2_regions,
/// reko. Runs execute on up to `threads` workers.
std::vector<GridRun> run_ablation_grid(const TrainConfig& base,
                                       const Generator& teacher,
                                       const Dataset& data,
                                       std::size_t threads = 1);

/// One reko run per (α, K) pair, all with the base seed.
std::vector<GridRun> run_sensitivity_sweep(const TrainConfig& base,
                                           const Generator& teacher,
                                           const Dataset& data,
                                           const std::vector<double>& alphas,
                                           const std::vector<std::size_t>& ks,
                                           std::size_t threads = 1);

/// Parallelism cap from REKO_THREADS (default: hardware concurrency).
std::size_t default_threads();

/// Runs the jobs on up to `threads` workers; exceptions are rethrown after
/// all workers finish.
void run_parallel(std::vector<std::function<void()>> jobs, std::size_t threads);

}  // namespace reko
