// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include "reko/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "reko/random.hpp"
#include "reko/serialize.hpp"

namespace reko {

namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
  if (!j.is_object()) {
    throw std::invalid_argument(where + " must be a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw std::invalid_argument("unknown config key '" + where +
                                  (where.empty() ? "" : ".") + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config key '") + key +
                                "' has the wrong type");
  }
}

json distill_to_json(const DistillConfig& d) {
  return {{"alpha", d.alpha},
          {"K", d.k},
          {"tau", d.tau},
          {"embed_dim", d.embed_dim},
          {"normalize_embeddings", d.normalize_embeddings},
          {"baseline", std::string(to_string(d.baseline))}};
}

DistillConfig distill_from_json(const json& j) {
  reject_unknown(j,
                 {"alpha", "K", "tau", "embed_dim", "normalize_embeddings",
                  "baseline"},
                 "distill");
  DistillConfig d;
  read(j, "alpha", d.alpha);
  read(j, "K", d.k);
  read(j, "tau", d.tau);
  read(j, "embed_dim", d.embed_dim);
  read(j, "normalize_embeddings", d.normalize_embeddings);
  if (j.contains("baseline")) {
    const auto name = j.at("baseline").get<std::string>();
    const auto b = parse_baseline(name);
    if (!b) throw std::invalid_argument("unknown baseline '" + name + "'");
    d.baseline = *b;
  }
  return d;
}

// Teacher outputs on the training split, computed once per run.
struct TeacherCache {
  std::vector<FeatureMap> features;
  std::vector<Tensor> images;
};

TeacherCache cache_teacher(const Generator& teacher,
                           const std::vector<Sample>& train) {
  TeacherCache cache;
  constexpr std::size_t kChunk = 16;
  for (std::size_t start = 0; start < train.size(); start += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(train.size(), start + kChunk);
         ++i) {
      idx.push_back(i);
    }
    const auto out = teacher.forward(batch_inputs(train, idx));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      cache.features.push_back(FeatureMap::from_batch(out.bottleneck, b));
      cache.images.push_back(select(out.image, b));
    }
  }
  return cache;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n,
                                                    std::size_t batch_size,
                                                    Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<long>(start),
                         order.begin() +
                             static_cast<long>(std::min(n, start + batch_size)));
  }
  return batches;
}

struct EpochSums {
  double origin = 0.0, distill = 0.0, adversarial = 0.0, total = 0.0;
  std::size_t steps = 0;

  EpochRecord finish(std::size_t epoch) const {
    const double n = static_cast<double>(steps);
    return EpochRecord{epoch, origin / n, distill / n, adversarial / n,
                       total / n, std::nullopt};
  }
};

void finish_run(RunRecord& record, const Generator& model,
                std::chrono::steady_clock::time_point start,
                const RunOptions& options, const json& extra_meta) {
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  if (!options.out_dir) return;
  const auto& dir = *options.out_dir;
  const auto manifest = model.save(dir / "checkpoint", extra_meta);
  record.checkpoints.push_back(manifest.string());
  write_file_atomic(dir / "record.jsonl", record.to_jsonl());
  write_file_atomic(dir / "train_config.json", record.config.dump(2) + "\n");
}

bool should_eval(const TrainConfig& cfg, std::size_t epoch) {
  return epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
}

}  // namespace

GeneratorSpec TrainConfig::student_spec() const {
  GeneratorSpec s = teacher;
  s.base_width = student_width;
  return s;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be > 0");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (eval_every == 0) throw std::invalid_argument("eval_every must be > 0");
  if (!(adv_weight >= 0.0)) {
    throw std::invalid_argument("adv_weight must be >= 0");
  }
  teacher.validate();
  student_spec().validate();
  distill.validate();
  const std::size_t regions =
      teacher.bottleneck_size() * teacher.bottleneck_size();
  if (uses_regions(distill.baseline) && distill.k > regions) {
    throw std::invalid_argument("distill.K=" + std::to_string(distill.k) +
                                " exceeds the " + std::to_string(regions) +
                                " bottleneck regions");
  }
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"seed", seed},
          {"adversarial", adversarial},
          {"adv_weight", adv_weight},
          {"eval_every", eval_every},
          {"teacher", teacher.to_json()},
          {"student_width", student_width},
          {"discriminator",
           {{"base_width", discriminator.base_width},
            {"layers", discriminator.layers},
            {"least_squares", discriminator.least_squares}}},
          {"distill", distill_to_json(distill)}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"epochs", "batch_size", "lr", "beta1", "beta2", "seed",
                  "adversarial", "adv_weight", "eval_every", "teacher",
                  "student_width", "discriminator", "distill"},
                 "train");
  TrainConfig c;
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "lr", c.lr);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "seed", c.seed);
  read(j, "adversarial", c.adversarial);
  read(j, "adv_weight", c.adv_weight);
  read(j, "eval_every", c.eval_every);
  read(j, "student_width", c.student_width);
  if (j.contains("teacher")) {
    reject_unknown(j["teacher"],
                   {"base_width", "depth", "image_size", "channels",
                    "res_blocks"},
                   "train.teacher");
    c.teacher = GeneratorSpec::from_json(j["teacher"]);
  }
  if (j.contains("discriminator")) {
    const auto& d = j["discriminator"];
    reject_unknown(d, {"base_width", "layers", "least_squares"},
                   "train.discriminator");
    read(d, "base_width", c.discriminator.base_width);
    read(d, "layers", c.discriminator.layers);
    read(d, "least_squares", c.discriminator.least_squares);
  }
  if (j.contains("distill")) c.distill = distill_from_json(j["distill"]);
  return c;
}

json EpochRecord::to_json() const {
  json j{{"epoch", epoch},
         {"origin", origin},
         {"distill", distill},
         {"adversarial", adversarial},
         {"total", total}};
  if (eval) j["eval"] = eval->to_json();
  return j;
}

std::vector<double> RunRecord::eval_series(std::string_view metric) const {
  double QualityMetrics::*field = nullptr;
  if (metric == "fg_mse") field = &QualityMetrics::fg_mse;
  else if (metric == "bg_mse") field = &QualityMetrics::bg_mse;
  else if (metric == "mse") field = &QualityMetrics::mse;
  else if (metric == "psnr") field = &QualityMetrics::psnr;
  else throw std::invalid_argument("unknown metric '" + std::string(metric) + "'");
  std::vector<double> out;
  for (const auto& e : epochs) {
    if (e.epoch > 0 && e.eval) out.push_back((*e.eval).*field);
  }
  return out;
}

const QualityMetrics& RunRecord::initial_eval() const {
  if (epochs.empty() || !epochs.front().eval) {
    throw std::logic_error("run record has no initial evaluation");
  }
  return *epochs.front().eval;
}

const QualityMetrics& RunRecord::final_eval() const {
  for (auto it = epochs.rbegin(); it != epochs.rend(); ++it) {
    if (it->eval) return *it->eval;
  }
  throw std::logic_error("run record has no evaluation");
}

std::string RunRecord::to_jsonl() const {
  std::ostringstream os;
  for (const auto& e : epochs) os << e.to_json().dump() << '\n';
  return os.str();
}

HeadPair make_heads(const TrainConfig& cfg) {
  return HeadPair::make(cfg.student_spec().bottleneck_channels(),
                        cfg.teacher.bottleneck_channels(),
                        cfg.distill.embed_dim, derive_seed(cfg.seed, "heads"));
}

TeacherRun train_teacher(const TrainConfig& cfg, const Dataset& data,
                         const RunOptions& options) {
  cfg.validate();
  if (data.train.empty() || data.eval.empty()) {
    throw std::invalid_argument("train_teacher: dataset has an empty split");
  }
  const auto start = std::chrono::steady_clock::now();
  Generator teacher(cfg.teacher, derive_seed(cfg.seed, "teacher"));
  Adam opt(teacher.parameter_tensors(), {cfg.lr, cfg.beta1, cfg.beta2});
  std::optional<Discriminator> disc;
  std::optional<Adam> opt_d;
  if (cfg.adversarial) {
    disc.emplace(cfg.discriminator, derive_seed(cfg.seed, "teacher.disc"));
    opt_d.emplace(disc->parameter_tensors(),
                  AdamOptions{cfg.lr, cfg.beta1, cfg.beta2});
  }

  RunRecord record;
  record.config = cfg.to_json();
  record.config["role"] = "teacher";
  record.append(
      EpochRecord{0, 0, 0, 0, 0, quality_metrics(teacher, data.eval)});

  Rng shuffle(derive_seed(cfg.seed, "shuffle"));
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochSums sums;
    for (const auto& batch : epoch_batches(data.train.size(), cfg.batch_size,
                                           shuffle)) {
      const Tensor x = batch_inputs(data.train, batch);
      const Tensor y = batch_targets(data.train, batch);
      try {
        const Tensor out = teacher.translate(x);
        Tensor origin = mean(abs(sub(out, y)));
        Tensor total = origin;
        double adv = 0.0;
        if (disc) {
          Tensor g_adv = scale(disc->generator_loss(out), cfg.adv_weight);
          adv = g_adv.item();
          total = add(total, g_adv);
        }
        sums.origin += origin.item();
        sums.adversarial += adv;
        sums.total += total.item();
        ++sums.steps;
        total.backward();
        opt.step();
        opt.zero_grad();
        if (disc) {
          opt_d->zero_grad();
          disc->loss_real_fake(y, out.detach()).backward();
          opt_d->step();
          opt_d->zero_grad();
        }
      } catch (const TensorError& e) {
        throw TrainingError("teacher training diverged at epoch " +
                                std::to_string(epoch) + ": " + e.what(),
                            record);
      }
    }
    EpochRecord rec = sums.finish(epoch);
    if (should_eval(cfg, epoch)) rec.eval = quality_metrics(teacher, data.eval);
    if (options.on_epoch) options.on_epoch(rec);
    record.append(std::move(rec));
  }
  teacher.set_trainable(false);
  finish_run(record, teacher, start, options, {{"role", "teacher"}});
  return {std::move(teacher), std::move(record)};
}

StudentRun distill_student(const TrainConfig& cfg, const Generator& teacher,
                           const Dataset& data, const RunOptions& options) {
  cfg.validate();
  if (data.train.empty() || data.eval.empty()) {
    throw std::invalid_argument("distill_student: dataset has an empty split");
  }
  const GeneratorSpec sspec = cfg.student_spec();
  const GeneratorSpec& tspec = teacher.spec();
  if (tspec.image_size != sspec.image_size ||
      tspec.bottleneck_size() != sspec.bottleneck_size() ||
      tspec.channels != sspec.channels) {
    throw std::invalid_argument(
        "distill_student: teacher bottleneck " +
        std::to_string(tspec.bottleneck_size()) + "×" +
        std::to_string(tspec.bottleneck_size()) +
        " does not match student bottleneck " +
        std::to_string(sspec.bottleneck_size()) + "×" +
        std::to_string(sspec.bottleneck_size()));
  }
  for (const auto& p : teacher.parameters()) {
    if (p.tensor.requires_grad()) {
      throw std::invalid_argument("distill_student: teacher must be frozen");
    }
  }
  TrainConfig effective = cfg;
  effective.teacher = tspec;

  const auto start = std::chrono::steady_clock::now();
  const TeacherCache cache = cache_teacher(teacher, data.train);
  const HeadPair heads = make_heads(effective);
  Generator student(sspec, derive_seed(cfg.seed, "student"));
  Adam opt(student.parameter_tensors(), {cfg.lr, cfg.beta1, cfg.beta2});
  std::optional<Discriminator> disc;
  std::optional<Adam> opt_d;
  if (cfg.adversarial) {
    disc.emplace(cfg.discriminator, derive_seed(cfg.seed, "student.disc"));
    opt_d.emplace(disc->parameter_tensors(),
                  AdamOptions{cfg.lr, cfg.beta1, cfg.beta2});
  }

  RunRecord record;
  record.config = effective.to_json();
  record.config["role"] = "student";
  record.append(
      EpochRecord{0, 0, 0, 0, 0, quality_metrics(student, data.eval)});

  Rng shuffle(derive_seed(cfg.seed, "shuffle"));
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochSums sums;
    for (const auto& batch : epoch_batches(data.train.size(), cfg.batch_size,
                                           shuffle)) {
      const Tensor x = batch_inputs(data.train, batch);
      const Tensor y = batch_targets(data.train, batch);
      std::vector<FeatureMap> ft;
      std::vector<Tensor> t_images;
      for (auto i : batch) {
        ft.push_back(cache.features[i]);
        t_images.push_back(cache.images[i]);
      }
      try {
        const auto out = student.forward(x);
        std::vector<FeatureMap> fs;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          fs.push_back(FeatureMap::from_batch(out.bottleneck, b));
        }
        Tensor origin = mean(abs(sub(out.image, y)));
        Tensor distill = distillation_loss(fs, ft, out.image,
                                           stack(t_images), heads, cfg.distill);
        Tensor total = add(origin, scale(distill, cfg.distill.alpha));
        double adv = 0.0;
        if (disc) {
          Tensor g_adv = scale(disc->generator_loss(out.image), cfg.adv_weight);
          adv = g_adv.item();
          total = add(total, g_adv);
        }
        sums.origin += origin.item();
        sums.distill += distill.item();
        sums.adversarial += adv;
        sums.total += total.item();
        ++sums.steps;
        total.backward();
        opt.step();
        opt.zero_grad();
        if (disc) {
          // The discriminator sees only the reconstruction task.
          opt_d->zero_grad();
          disc->loss_real_fake(y, out.image.detach()).backward();
          opt_d->step();
          opt_d->zero_grad();
        }
      } catch (const TensorError& e) {
        throw TrainingError("distillation diverged at epoch " +
                                std::to_string(epoch) + ": " + e.what(),
                            record);
      }
    }
    EpochRecord rec = sums.finish(epoch);
    if (should_eval(cfg, epoch)) rec.eval = quality_metrics(student, data.eval);
    if (options.on_epoch) options.on_epoch(rec);
    record.append(std::move(rec));
  }
  finish_run(record, student, start, options, {{"role", "student"}});
  return {std::move(student), heads, std::move(record)};
}

std::size_t default_threads() {
  if (const char* env = std::getenv("REKO_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void run_parallel(std::vector<std::function<void()>> jobs,
                  std::size_t threads) {
  threads = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        jobs[i]();
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
}

namespace {

std::vector<GridRun> run_grid(std::vector<GridRun> grid,
                              const Generator& teacher, const Dataset& data,
                              std::size_t threads) {
  std::vector<std::optional<StudentRun>> results(grid.size());
  std::vector<std::function<void()>> jobs;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    jobs.emplace_back([&, i] {
      results[i].emplace(distill_student(grid[i].config, teacher, data));
    });
  }
  run_parallel(std::move(jobs), threads);
  std::vector<GridRun> out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out.push_back(GridRun{grid[i].label, grid[i].config,
                          std::move(*results[i])});
  }
  return out;
}

// Placeholder run slot until the grid executes.
StudentRun empty_run() {
  return StudentRun{Generator(GeneratorSpec{2, 1, 2, 1, 0}, 0), {}, {}};
}

}  // namespace

std::vector<GridRun> run_ablation_grid(const TrainConfig& base,
                                       const Generator& teacher,
                                       const Dataset& data,
                                       std::size_t threads) {
  const std::pair<const char*, Baseline> cells[] = {
      {"none", Baseline::none},
      {"cd_only", Baseline::region_dis},
      {"cr_only", Baseline::l2_regions},
      {"reko", Baseline::reko},
  };
  std::vector<GridRun> grid;
  for (const auto& [label, baseline] : cells) {
    TrainConfig cfg = base;
    cfg.distill.baseline = baseline;
    grid.push_back(GridRun{label, cfg, empty_run()});
  }
  return run_grid(std::move(grid), teacher, data, threads);
}

std::vector<GridRun> run_sensitivity_sweep(const TrainConfig& base,
                                           const Generator& teacher,
                                           const Dataset& data,
                                           const std::vector<double>& alphas,
                                           const std::vector<std::size_t>& ks,
                                           std::size_t threads) {
  if (alphas.empty() || ks.empty()) {
    throw std::invalid_argument("sensitivity sweep needs non-empty α and K lists");
  }
  std::vector<GridRun> grid;
  for (double alpha : alphas) {
    for (std::size_t k : ks) {
      TrainConfig cfg = base;
      cfg.distill.baseline = Baseline::reko;
      cfg.distill.alpha = alpha;
      cfg.distill.k = k;
      std::ostringstream label;
      label << "alpha=" << alpha << ",K=" << k;
      grid.push_back(GridRun{label.str(), cfg, empty_run()});
    }
  }
  return run_grid(std::move(grid), teacher, data, threads);
}

}  // namespace reko
