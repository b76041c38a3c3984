// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0
//
// reko: dataset generation, teacher training, distillation, ablations,
// sweeps, evaluation and visualisation from one JSON config.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/program_options.hpp>
#include <nlohmann/json.hpp>

#include "reko/config.hpp"
#include "reko/metrics.hpp"
#include "reko/serialize.hpp"
#include "reko/trainer.hpp"

namespace fs = std::filesystem;
namespace po = boost::program_options;
using json = nlohmann::json;
using namespace reko;

namespace {

constexpr int kUsage = 2;
constexpr int kFailure = 1;

const std::vector<std::string> kCommands = {
    "gen-data", "train-teacher", "distill", "ablate", "sweep", "eval", "viz"};

struct Invocation {
  std::string command;
  std::optional<fs::path> config_path;
  ExperimentConfig config;
  fs::path out_root;
  bool force = false;
};

struct RunContext {
  const Invocation& inv;
  fs::path dir;
  std::vector<fs::path> external_artifacts;
};

std::string utc_stamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

std::optional<fs::path> completed_run(const fs::path& root,
                                      const std::string& prefix) {
  if (!fs::is_directory(root)) return std::nullopt;
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto name = entry.path().filename().string();
    if (name.rfind(prefix, 0) != 0) continue;
    const auto manifest = entry.path() / "run_manifest.json";
    if (!fs::exists(manifest)) continue;
    const json m = json::parse(read_file(manifest), nullptr, false);
    if (!m.is_discarded() && m.value("exit_status", -1) == 0) {
      return entry.path();
    }
  }
  return std::nullopt;
}

void write_json(const fs::path& path, const json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

fs::path checkpoint_manifest(const std::string& configured,
                             const char* key) {
  if (configured.empty()) {
    throw std::runtime_error(std::string(key) +
                             " is not set (use --set " + key + "=PATH)");
  }
  fs::path p = configured;
  if (fs::is_directory(p)) p /= "manifest.json";
  if (!fs::exists(p)) {
    throw std::runtime_error(std::string(key) + " not found: " + p.string());
  }
  return p;
}

Generator load_frozen(const std::string& configured, const char* key) {
  Generator g = Generator::load(checkpoint_manifest(configured, key));
  g.set_trainable(false);
  return g;
}

std::vector<Sample> head(const std::vector<Sample>& split, std::size_t n) {
  return {split.begin(),
          split.begin() + static_cast<long>(std::min(n, split.size()))};
}

void print_epoch(const EpochRecord& e) {
  std::cout << "epoch " << e.epoch << "  origin " << e.origin;
  if (e.distill != 0.0) std::cout << "  distill " << e.distill;
  if (e.adversarial != 0.0) std::cout << "  adv " << e.adversarial;
  if (e.eval) std::cout << "  eval fg_mse " << e.eval->fg_mse;
  std::cout << std::endl;
}

double student_region_iou(const Generator& student,
                          const std::vector<Sample>& split, std::size_t k) {
  return mean_attention_iou(student, split, k);
}

MetricsReport report(const Generator& student, const Generator* teacher,
                     const ExperimentConfig& cfg, const Dataset& data,
                     const RunRecord* record) {
  MetricsReport r;
  r.quality = quality_metrics(student, data.eval);
  r.region_iou = student_region_iou(student, data.eval, cfg.train.distill.k);
  if (teacher) {
    TrainConfig tc = cfg.train;
    tc.teacher = teacher->spec();
    tc.student_width = student.spec().base_width;
    r.diagonality = diagonality(student, *teacher,
                                head(data.eval, cfg.eval_samples),
                                make_heads(tc));
  }
  if (record) {
    const auto series = record->eval_series("mse");
    if (series.size() >= 6) r.metric_variance = stability_score(series);
  }
  return r;
}

void save_record(const fs::path& dir, const RunRecord& record) {
  fs::create_directories(dir);
  write_file_atomic(dir / "record.jsonl", record.to_jsonl());
}

// ---- commands -------------------------------------------------------------

void cmd_gen_data(RunContext& ctx) {
  const auto& d = ctx.inv.config.data;
  const fs::path target = d.dir.empty() ? ctx.dir / "data" : fs::path(d.dir);
  const auto m = generate_dataset(d.seed, d.n_train, d.n_eval, target, d.synth);
  if (!d.dir.empty()) ctx.external_artifacts.push_back(target / "manifest.json");
  std::cout << "wrote " << m.sample_count() << " samples to " << target.string()
            << std::endl;
}

void cmd_train_teacher(RunContext& ctx) {
  const auto& cfg = ctx.inv.config;
  const Dataset data = load_or_generate(cfg.data);
  RunOptions opts;
  opts.out_dir = ctx.dir;
  opts.on_epoch = print_epoch;
  const auto run = train_teacher(cfg.train, data, opts);
  const auto& init = run.record.initial_eval();
  const auto& fin = run.record.final_eval();
  json metrics = {
      {"initial", init.to_json()},
      {"final", fin.to_json()},
      {"fg_mse_reduction", fin.fg_mse > 0 ? init.fg_mse / fin.fg_mse : 0.0},
      {"attention_iou",
       mean_attention_iou(run.teacher, data.eval, cfg.train.distill.k)},
      {"parameter_count", run.teacher.parameter_count()}};
  write_json(ctx.dir / "metrics.json", metrics);
  std::cout << "teacher checkpoint: " << (ctx.dir / "checkpoint").string()
            << std::endl;
}

void cmd_distill(RunContext& ctx) {
  const auto& cfg = ctx.inv.config;
  const Generator teacher =
      load_frozen(cfg.teacher_checkpoint, "teacher_checkpoint");
  const Dataset data = load_or_generate(cfg.data);
  RunOptions opts;
  opts.out_dir = ctx.dir;
  opts.on_epoch = print_epoch;
  const auto run = distill_student(cfg.train, teacher, data, opts);
  json metrics = report(run.student, &teacher, cfg, data, &run.record).to_json();
  metrics["parameter_ratio"] =
      static_cast<double>(teacher.parameter_count()) /
      static_cast<double>(run.student.parameter_count());
  write_json(ctx.dir / "metrics.json", metrics);
  std::cout << "student checkpoint: " << (ctx.dir / "checkpoint").string()
            << std::endl;
}

json mean_std(const std::vector<double>& v) {
  const double mean =
      std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {{"values", v},
          {"mean", mean},
          {"std", std::sqrt(var / static_cast<double>(v.size()))}};
}

void cmd_ablate(RunContext& ctx) {
  const auto& cfg = ctx.inv.config;
  const Generator teacher =
      load_frozen(cfg.teacher_checkpoint, "teacher_checkpoint");
  const Dataset data = load_or_generate(cfg.data);
  std::map<std::string, std::vector<double>> fg;
  for (auto seed : cfg.ablation_seeds) {
    TrainConfig base = cfg.train;
    base.seed = seed;
    for (const auto& g :
         run_ablation_grid(base, teacher, data, default_threads())) {
      const double v = g.run.record.final_eval().fg_mse;
      fg[g.label].push_back(v);
      save_record(ctx.dir / (g.label + "-seed" + std::to_string(seed)),
                  g.run.record);
      std::cout << g.label << " seed " << seed << " fg_mse " << v << std::endl;
    }
  }
  json cells;
  for (const auto& [label, values] : fg) cells[label] = mean_std(values);
  const double none = cells["none"]["mean"].get<double>();
  const double reko = cells["reko"]["mean"].get<double>();
  write_json(ctx.dir / "results.json",
             {{"fg_mse", cells},
              {"seeds", cfg.ablation_seeds},
              {"reko_gain_over_none", (none - reko) / none}});
}

void cmd_sweep(RunContext& ctx) {
  const auto& cfg = ctx.inv.config;
  const Generator teacher =
      load_frozen(cfg.teacher_checkpoint, "teacher_checkpoint");
  const Dataset data = load_or_generate(cfg.data);
  TrainConfig none_cfg = cfg.train;
  none_cfg.distill.baseline = Baseline::none;
  const auto none = distill_student(none_cfg, teacher, data);
  const double none_fg = none.record.final_eval().fg_mse;
  save_record(ctx.dir / "none", none.record);
  json runs = json::array();
  double lo = INFINITY, hi = -INFINITY;
  bool all_beat = true;
  for (const auto& g : run_sensitivity_sweep(cfg.train, teacher, data,
                                             cfg.sweep_alphas, cfg.sweep_ks,
                                             default_threads())) {
    const double v = g.run.record.final_eval().fg_mse;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    all_beat = all_beat && v < none_fg;
    runs.push_back({{"alpha", g.config.distill.alpha},
                    {"K", g.config.distill.k},
                    {"fg_mse", v}});
    save_record(ctx.dir / g.label, g.run.record);
    std::cout << g.label << " fg_mse " << v << std::endl;
  }
  write_json(ctx.dir / "results.json", {{"none_fg_mse", none_fg},
                                        {"runs", runs},
                                        {"spread", hi - lo},
                                        {"all_beat_none", all_beat}});
}

void cmd_eval(RunContext& ctx) {
  const auto& cfg = ctx.inv.config;
  const Generator student =
      load_frozen(cfg.student_checkpoint, "student_checkpoint");
  std::optional<Generator> teacher;
  if (!cfg.teacher_checkpoint.empty()) {
    teacher = load_frozen(cfg.teacher_checkpoint, "teacher_checkpoint");
  }
  const Dataset data = load_or_generate(cfg.data);
  const json metrics =
      report(student, teacher ? &*teacher : nullptr, cfg, data, nullptr)
          .to_json();
  write_json(ctx.dir / "metrics.json", metrics);
  std::cout << metrics.dump(2) << std::endl;
}

std::vector<double> upscale(std::span<const double> grid, std::size_t g,
                            std::size_t factor) {
  const std::size_t n = g * factor;
  std::vector<double> out(n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      out[y * n + x] = grid[(y / factor) * g + x / factor];
    }
  }
  return out;
}

void cmd_viz(RunContext& ctx) {
  const auto& cfg = ctx.inv.config;
  const Generator teacher =
      load_frozen(cfg.teacher_checkpoint, "teacher_checkpoint");
  const Generator student =
      load_frozen(cfg.student_checkpoint, "student_checkpoint");
  const Dataset data = load_or_generate(cfg.data);
  TrainConfig tc = cfg.train;
  tc.teacher = teacher.spec();
  tc.student_width = student.spec().base_width;
  const HeadPair heads = make_heads(tc);
  const auto samples = head(data.eval, cfg.viz_samples);
  const std::size_t g = teacher.spec().bottleneck_size();
  const std::size_t factor = teacher.spec().image_size / g;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::vector<std::size_t> idx{i};
    const Tensor x = batch_inputs(samples, idx);
    const auto t_out = teacher.forward(x);
    const auto s_out = student.forward(x);
    const auto ft = FeatureMap::from_batch(t_out.bottleneck, 0);
    const auto fs = FeatureMap::from_batch(s_out.bottleneck, 0);
    const auto ta = attention_map(ft, AttentionSource::teacher);
    const auto sa = attention_map(fs, AttentionSource::student);
    const std::string tag = std::to_string(i);
    write_pgm_minmax(ctx.dir / ("attention_teacher_" + tag + ".pgm"),
                     upscale(ta.values.data(), g, factor), g * factor,
                     g * factor);
    write_pgm_minmax(ctx.dir / ("attention_student_" + tag + ".pgm"),
                     upscale(sa.values.data(), g, factor), g * factor,
                     g * factor);
    const auto top = top_k_regions(ta, 1).indices.front();
    const Tensor sim = similarity_map(fs, ft, top, heads);
    write_pgm(ctx.dir / ("similarity_" + tag + ".pgm"),
              upscale(sim.data(), g, factor), g * factor, g * factor, -1.0,
              1.0);
    const std::vector<Tensor> panel{samples[i].input, select(t_out.image, 0),
                                    select(s_out.image, 0), samples[i].target};
    write_ppm_panel(ctx.dir / ("panel_" + tag + ".ppm"), panel);
  }
  std::cout << "wrote " << samples.size() << " panels to " << ctx.dir.string()
            << std::endl;
}

void dispatch(RunContext& ctx) {
  const auto& c = ctx.inv.command;
  if (c == "gen-data") return cmd_gen_data(ctx);
  if (c == "train-teacher") return cmd_train_teacher(ctx);
  if (c == "distill") return cmd_distill(ctx);
  if (c == "ablate") return cmd_ablate(ctx);
  if (c == "sweep") return cmd_sweep(ctx);
  if (c == "eval") return cmd_eval(ctx);
  if (c == "viz") return cmd_viz(ctx);
}

json artifact_checksums(const RunContext& ctx) {
  json out = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(ctx.dir)) {
    if (e.is_regular_file() && e.path().filename() != "run_manifest.json") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    out[fs::relative(f, ctx.dir).generic_string()] = sha256_file(f);
  }
  for (const auto& f : ctx.external_artifacts) {
    out[fs::absolute(f).generic_string()] = sha256_file(f);
  }
  return out;
}

int run(const Invocation& inv) {
  const std::string hash = inv.config.hash();
  const std::string prefix = inv.command + "-" + hash.substr(0, 12) + "-";
  if (!inv.force) {
    if (const auto done = completed_run(inv.out_root, prefix)) {
      std::cerr << "error: " << inv.command
                << " already completed for this config at " << done->string()
                << " (use --force to run again)\n";
      return kFailure;
    }
  }
  RunContext ctx{inv, inv.out_root / (prefix + utc_stamp()), {}};
  if (fs::exists(ctx.dir)) fs::remove_all(ctx.dir);
  fs::create_directories(ctx.dir);
  write_file_atomic(ctx.dir / "config.json", inv.config.canonical());

  const auto start = std::chrono::steady_clock::now();
  int status = 0;
  std::string error;
  try {
    dispatch(ctx);
  } catch (const std::exception& e) {
    status = kFailure;
    error = e.what();
  }
  json manifest = {
      {"command", inv.command},
      {"config_path",
       inv.config_path ? fs::absolute(*inv.config_path).string() : ""},
      {"config_hash", hash},
      {"output_dir", fs::absolute(ctx.dir).string()},
      {"artifacts", artifact_checksums(ctx)},
      {"exit_status", status},
      {"wall_seconds", std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - start)
                           .count()}};
  if (status) manifest["error"] = error;
  write_json(ctx.dir / "run_manifest.json", manifest);
  if (status) std::cerr << "error: " << error << "\n";
  else std::cout << "run directory: " << ctx.dir.string() << std::endl;
  return status;
}

void usage(std::ostream& os, const po::options_description& opts) {
  os << "usage: reko <command> [options]\n\ncommands:";
  for (const auto& c : kCommands) os << ' ' << c;
  os << "\n\n" << opts << "\nREKO_THREADS caps ablate/sweep parallelism.\n";
}

}  // namespace

int main(int argc, char** argv) {
  po::options_description opts("options");
  opts.add_options()("help,h", "show this message")(
      "config", po::value<std::string>(), "JSON config file")(
      "set", po::value<std::vector<std::string>>()->composing(),
      "override a config value: dotted.path=value (repeatable)")(
      "out", po::value<std::string>()->default_value("runs"),
      "root directory for run outputs")(
      "seed", po::value<std::uint64_t>(), "shorthand for --set train.seed=N")(
      "force", "run even if this config already completed");
  po::options_description hidden;
  hidden.add_options()("command", po::value<std::string>());
  po::options_description all;
  all.add(opts).add(hidden);
  po::positional_options_description pos;
  pos.add("command", 1);

  Invocation inv;
  try {
    po::variables_map vm;
    po::store(po::command_line_parser(argc, argv)
                  .options(all)
                  .positional(pos)
                  .run(),
              vm);
    po::notify(vm);
    if (vm.count("help")) {
      usage(std::cout, opts);
      return 0;
    }
    if (!vm.count("command")) {
      usage(std::cerr, opts);
      return kUsage;
    }
    inv.command = vm["command"].as<std::string>();
    if (std::find(kCommands.begin(), kCommands.end(), inv.command) ==
        kCommands.end()) {
      std::cerr << "error: unknown command '" << inv.command << "'\n";
      usage(std::cerr, opts);
      return kUsage;
    }
    std::vector<std::string> sets;
    if (vm.count("set")) sets = vm["set"].as<std::vector<std::string>>();
    if (vm.count("seed")) {
      sets.push_back("train.seed=" +
                     std::to_string(vm["seed"].as<std::uint64_t>()));
    }
    if (vm.count("config")) inv.config_path = vm["config"].as<std::string>();
    inv.config = load_config(inv.config_path, sets);
    inv.out_root = vm["out"].as<std::string>();
    inv.force = vm.count("force") > 0;
  } catch (const po::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    usage(std::cerr, opts);
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  try {
    return run(inv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
