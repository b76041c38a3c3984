// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#include "reko/config.hpp"

#include <fstream>
#include <set>

#include "reko/serialize.hpp"

namespace reko {

namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw ConfigError("unknown config key '" + where + "." + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + "." + key +
                      "' has the wrong type");
  }
}

json synth_to_json(const SynthOptions& o) {
  return {{"image_size", o.image_size},
          {"min_mask_fraction", o.min_mask_fraction},
          {"max_mask_fraction", o.max_mask_fraction},
          {"stripe_period", o.stripe_period}};
}

}  // namespace

void ExperimentConfig::validate() const {
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (data.n_train == 0 || data.n_eval == 0) {
    throw ConfigError("data.n_train and data.n_eval must be > 0");
  }
  if (!(data.synth.min_mask_fraction > 0.0 &&
        data.synth.min_mask_fraction < data.synth.max_mask_fraction &&
        data.synth.max_mask_fraction < 1.0)) {
    throw ConfigError("data.synth mask band must satisfy 0 < min < max < 1");
  }
  if (data.synth.image_size != train.teacher.image_size) {
    throw ConfigError("data.synth.image_size (" +
                      std::to_string(data.synth.image_size) +
                      ") differs from train.teacher.image_size (" +
                      std::to_string(train.teacher.image_size) + ")");
  }
  if (ablation_seeds.empty()) throw ConfigError("ablation.seeds is empty");
  if (sweep_alphas.empty() || sweep_ks.empty()) {
    throw ConfigError("sweep.alphas and sweep.ks must be non-empty");
  }
  if (eval_samples == 0 || viz_samples == 0) {
    throw ConfigError("eval.samples and eval.viz_samples must be > 0");
  }
}

json ExperimentConfig::to_json() const {
  json train_json = train.to_json();
  json distill_json = train_json["distill"];
  train_json.erase("distill");
  return {{"data",
           {{"seed", data.seed},
            {"n_train", data.n_train},
            {"n_eval", data.n_eval},
            {"dir", data.dir},
            {"synth", synth_to_json(data.synth)}}},
          {"train", train_json},
          {"distill", distill_json},
          {"teacher_checkpoint", teacher_checkpoint},
          {"student_checkpoint", student_checkpoint},
          {"ablation", {{"seeds", ablation_seeds}}},
          {"sweep", {{"alphas", sweep_alphas}, {"ks", sweep_ks}}},
          {"eval", {{"samples", eval_samples}, {"viz_samples", viz_samples}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  reject_unknown(j,
                 {"data", "train", "distill", "teacher_checkpoint",
                  "student_checkpoint", "ablation", "sweep", "eval"},
                 "config");
  ExperimentConfig c;
  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, {"seed", "n_train", "n_eval", "dir", "synth"}, "data");
    read(d, "seed", c.data.seed, "data");
    read(d, "n_train", c.data.n_train, "data");
    read(d, "n_eval", c.data.n_eval, "data");
    read(d, "dir", c.data.dir, "data");
    if (d.contains("synth")) {
      const auto& s = d["synth"];
      reject_unknown(s,
                     {"image_size", "min_mask_fraction", "max_mask_fraction",
                      "stripe_period"},
                     "data.synth");
      read(s, "image_size", c.data.synth.image_size, "data.synth");
      read(s, "min_mask_fraction", c.data.synth.min_mask_fraction,
           "data.synth");
      read(s, "max_mask_fraction", c.data.synth.max_mask_fraction,
           "data.synth");
      read(s, "stripe_period", c.data.synth.stripe_period, "data.synth");
    }
  }
  if (j.contains("train") || j.contains("distill")) {
    json train_json = j.value("train", json::object());
    if (train_json.contains("distill")) {
      throw ConfigError("distill settings belong in the top-level 'distill' "
                        "section, not under 'train'");
    }
    if (j.contains("distill")) train_json["distill"] = j["distill"];
    try {
      c.train = TrainConfig::from_json(train_json);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  read(j, "teacher_checkpoint", c.teacher_checkpoint, "config");
  read(j, "student_checkpoint", c.student_checkpoint, "config");
  if (j.contains("ablation")) {
    reject_unknown(j["ablation"], {"seeds"}, "ablation");
    read(j["ablation"], "seeds", c.ablation_seeds, "ablation");
  }
  if (j.contains("sweep")) {
    reject_unknown(j["sweep"], {"alphas", "ks"}, "sweep");
    read(j["sweep"], "alphas", c.sweep_alphas, "sweep");
    read(j["sweep"], "ks", c.sweep_ks, "sweep");
  }
  if (j.contains("eval")) {
    reject_unknown(j["eval"], {"samples", "viz_samples"}, "eval");
    read(j["eval"], "samples", c.eval_samples, "eval");
    read(j["eval"], "viz_samples", c.viz_samples, "eval");
  }
  return c;
}

std::string ExperimentConfig::canonical() const { return to_json().dump(); }

std::string ExperimentConfig::hash() const { return sha256_hex(canonical()); }

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (!node->is_object() || !node->contains(key)) {
      throw ConfigError("override '" + assignment + "': unknown key '" + path +
                        "'");
    }
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = std::move(value);
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides) {
  json merged = ExperimentConfig{}.to_json();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config '" + file->string() + "'");
    json parsed = json::parse(in, nullptr, false);
    if (parsed.is_discarded()) {
      throw ConfigError("config '" + file->string() + "' is not valid JSON");
    }
    ExperimentConfig::from_json(parsed);  // rejects unknown keys
    merged.merge_patch(parsed);
  }
  for (const auto& o : overrides) apply_override(merged, o);
  ExperimentConfig cfg = ExperimentConfig::from_json(merged);
  cfg.validate();
  return cfg;
}

Dataset load_or_generate(const DataConfig& cfg) {
  if (!cfg.dir.empty() &&
      std::filesystem::exists(std::filesystem::path(cfg.dir) / "manifest.json")) {
    Dataset d = Dataset::load(cfg.dir);
    const auto m = DatasetManifest::from_json(
        json::parse(read_file(std::filesystem::path(cfg.dir) / "manifest.json")));
    if (m.seed != cfg.seed || m.n_train != cfg.n_train ||
        m.n_eval != cfg.n_eval ||
        synth_to_json(m.options) != synth_to_json(cfg.synth)) {
      throw std::runtime_error("dataset at '" + cfg.dir +
                               "' was generated with different data settings");
    }
    return d;
  }
  return Dataset::generate(cfg.seed, cfg.n_train, cfg.n_eval, cfg.synth);
}

}  // namespace reko
