// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// writes every measured number to acceptance_results.json in the working
// directory. Exit status is non-zero when any criterion fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "grad_cases.hpp"
#include "oracles.hpp"
#include "reko/attention.hpp"
#include "reko/grad_check.hpp"
#include "reko/losses.hpp"
#include "reko/metrics.hpp"
#include "reko/serialize.hpp"
#include "reko/synth.hpp"
#include "reko/trainer.hpp"
#include "test_util.hpp"

using namespace reko;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::size_t kSeeds = 5;

json results = json::object();
int failures = 0;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const std::string& id, bool pass, const std::string& summary, json detail) {
  std::cout << id << " " << (pass ? "PASS" : "FAIL") << "  " << summary << std::endl;
  detail["pass"] = pass;
  detail["summary"] = summary;
  results[id] = std::move(detail);
  if (!pass) ++failures;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation.
double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

fs::path scratch() {
  static const fs::path p = [] {
    const fs::path r = fs::temp_directory_path() /
                       ("reko_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(r);
    fs::create_directories(r);
    return r;
  }();
  return p;
}

std::string head_digest(const HeadPair& h) {
  return sha256_hex(testutil::bytes(h.student.weight) + testutil::bytes(h.teacher.weight));
}

std::map<std::string, std::string> tree_checksums(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) {
      out[fs::relative(e.path(), dir).generic_string()] = sha256_file(e.path());
    }
  }
  return out;
}

// ---- C1 -------------------------------------------------------------------

void gradient_fidelity() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_case;
  json per_case = json::object();
  for (const auto& c : gradcases::all_cases()) {
    std::mt19937_64 rng(std::hash<std::string>{}(c.name));
    double w = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto s = gradcases::sample(c, rng);
      w = std::max(w, grad_check(s.f, s.point));
    }
    per_case[c.name] = w;
    if (w > worst) {
      worst = w;
      worst_case = c.name;
    }
  }
  const double elapsed = seconds_since(t0);
  const bool pass = worst < 1e-3 && elapsed < 60.0;
  report("C1", pass,
         std::to_string(per_case.size()) + " cases x 20 points, max rel err " + fmt(worst) +
             " (" + worst_case + "), " + fmt(elapsed, 3) + " s",
         {{"max_rel_error", worst}, {"seconds", elapsed}, {"cases", per_case}});
}

// ---- C2 -------------------------------------------------------------------

struct Wrapped {
  FeatureMap fs, ft;
  HeadPair heads;
};

Wrapped wrap(const oracle::Instance& x) {
  return {FeatureMap::from_chw(Tensor::from_data({x.cs, 1, x.m}, x.fs)),
          FeatureMap::from_chw(Tensor::from_data({x.ct, 1, x.m}, x.ft)),
          {ProjectionHead::from_weight(Tensor::from_data({x.d, x.cs}, x.ws)),
           ProjectionHead::from_weight(Tensor::from_data({x.d, x.ct}, x.wt))}};
}

void oracle_equivalence() {
  std::mt19937_64 rng(2);
  double err_reko = 0, err_dis = 0, err_l2 = 0, err_sim = 0, err_reduction = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const bool normalize = trial % 2 == 0;
    const double tau = normalize ? 0.07 : 0.9;
    const auto x = oracle::random_instance(rng, 4, 6, 5, 9);
    const auto w = wrap(x);
    DistillConfig cfg;
    cfg.tau = tau;
    cfg.normalize_embeddings = normalize;
    cfg.k = 4;
    std::vector<std::size_t> perm(9);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const RegionSet r{{perm.begin(), perm.begin() + 4}};

    err_reko = std::max(err_reko, std::abs(reko_loss(w.fs, w.ft, r, w.heads, cfg).item() -
                                           oracle::reko(x, r.indices, tau, normalize)));
    const double dis = region_dis(w.fs, w.ft, w.heads, cfg).item();
    err_dis = std::max(err_dis, std::abs(dis - oracle::region_dis(x, tau, normalize)));
    err_l2 = std::max(err_l2, std::abs(l2_regions(w.fs, w.ft, r, w.heads, normalize).item() -
                                       oracle::l2_regions(x, r.indices, normalize)));
    const std::size_t q = static_cast<std::size_t>(trial) % 9;
    const auto sim = similarity_map(w.fs, w.ft, q, w.heads);
    const auto ref = oracle::similarity(x, q);
    for (std::size_t j = 0; j < 9; ++j) {
      err_sim = std::max(err_sim, std::abs(sim.data()[j] - ref[j]));
    }
    cfg.k = 9;
    const auto all = top_k_regions(attention_map(w.ft), 9);
    err_reduction = std::max(
        err_reduction, std::abs(reko_loss(w.fs, w.ft, all, w.heads, cfg).item() - dis));
  }
  const double worst = std::max({err_reko, err_dis, err_l2, err_sim, err_reduction});
  report("C2", worst <= 1e-9,
         "50 instances, max abs err reko " + fmt(err_reko, 2) + ", region_dis " +
             fmt(err_dis, 2) + ", l2_regions " + fmt(err_l2, 2) + ", similarity " +
             fmt(err_sim, 2) + ", K=hw reduction " + fmt(err_reduction, 2),
         {{"reko", err_reko},
          {"region_dis", err_dis},
          {"l2_regions", err_l2},
          {"similarity_map", err_sim},
          {"k_equals_hw_reduction", err_reduction}});
}

// ---- C3 -------------------------------------------------------------------

void closed_forms() {
  const Tensor v = Tensor::from_data({3}, {1, 0, 0});
  const Tensor same = Tensor::from_data({3, 1}, {1, 0, 0});
  const Tensor ortho = Tensor::from_data({3, 2}, {0, 0, 1, 0, 0, 1});
  const double e = 2.718281828459045;
  const double equal = info_nce(v, v, same, 0.3).item();
  const double t1 = info_nce(v, v, ortho, 1.0).item();
  const double t05 = info_nce(v, v, ortho, 0.5).item();
  const double d_equal = std::abs(equal - std::log(2.0));
  const double d1 = std::abs(t1 - std::log(1.0 + 2.0 / e));
  const double d05 = std::abs(t05 - std::log(1.0 + 2.0 / (e * e)));
  const bool pass = d_equal <= 1e-9 && d1 <= 1e-9 && d05 <= 1e-9;
  report("C3", pass,
         "ln2 " + fmt(equal, 10) + ", tau=1 " + fmt(t1, 10) + ", tau=0.5 " + fmt(t05, 10) +
             " (max err " + fmt(std::max({d_equal, d1, d05}), 2) + ")",
         {{"equal_pos_neg", equal},
          {"tau_1", t1},
          {"tau_0_5", t05},
          {"printed_tau_0_5_decimal", 0.239538},
          {"max_error_vs_formula", std::max({d_equal, d1, d05})}});
}

// ---- training experiments -------------------------------------------------

TrainConfig base_config(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  return c;
}

double final_fg(const StudentRun& r) { return r.record.final_eval().fg_mse; }

std::vector<Sample> first(const std::vector<Sample>& s, std::size_t n) {
  return {s.begin(), s.begin() + static_cast<std::ptrdiff_t>(std::min(n, s.size()))};
}

}  // namespace

int main() {
  std::cout << std::setprecision(6);
  const auto t_all = Clock::now();
  gradient_fidelity();
  oracle_equivalence();
  closed_forms();

  std::cout << "generating 512/64 dataset (seed 0)" << std::endl;
  const Dataset data = Dataset::generate(0, 512, 64);
  const auto eval32 = first(data.eval, 32);

  // C5: three teachers.
  std::vector<Generator> teachers;
  std::vector<double> ious, reductions;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto t0 = Clock::now();
    auto run = train_teacher(base_config(s), data);
    const double iou = mean_attention_iou(run.teacher, data.eval, 16);
    const double red = run.record.initial_eval().fg_mse / run.record.final_eval().fg_mse;
    std::cout << "  teacher seed " << s << ": IoU " << iou << ", fg MSE "
              << run.record.initial_eval().fg_mse << " -> " << run.record.final_eval().fg_mse
              << " (" << red << "x), " << seconds_since(t0) << " s" << std::endl;
    ious.push_back(iou);
    reductions.push_back(red);
    teachers.push_back(std::move(run.teacher));
  }
  const double random_iou = oracle::random_iou_expectation(64, 16, 16);
  {
    const double m = mean(ious);
    report("C5", m >= 0.28,
           "mean top-16 teacher IoU over 3 seeds " + fmt(m) + " (random " + fmt(random_iou, 3) +
               ", ratio " + fmt(m / random_iou, 3) + "); fg-MSE reduction " +
               fmt(*std::min_element(reductions.begin(), reductions.end()), 3) + "x to " +
               fmt(*std::max_element(reductions.begin(), reductions.end()), 3) + "x",
           {{"iou_per_seed", ious},
            {"mean_iou", m},
            {"random_baseline_iou", random_iou},
            {"fg_mse_reduction_per_seed", reductions}});
  }
  const Generator& teacher = teachers[0];

  // C6 / C7 / C4: ablation grid per student seed against teacher seed 0.
  const std::string teacher_before = testutil::digest(teacher);
  std::map<std::string, std::vector<double>> fg;
  std::vector<double> diag_reko, diag_none;
  std::vector<GridRun> seed0_grid;
  bool heads_frozen = true;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const auto t0 = Clock::now();
    const auto cfg = base_config(s);
    const std::string heads_before = head_digest(make_heads(cfg));
    auto grid = run_ablation_grid(cfg, teacher, data, default_threads());
    const StudentRun* reko_run = nullptr;
    const StudentRun* none_run = nullptr;
    for (const auto& g : grid) {
      fg[g.label].push_back(final_fg(g.run));
      if (g.label == "reko") reko_run = &g.run;
      if (g.label == "none") none_run = &g.run;
      if (g.config.distill.baseline != Baseline::none) {
        heads_frozen = heads_frozen && head_digest(g.run.heads) == heads_before;
      }
    }
    const HeadPair heads = make_heads(cfg);
    diag_reko.push_back(diagonality(reko_run->student, teacher, eval32, heads));
    diag_none.push_back(diagonality(none_run->student, teacher, eval32, heads));
    std::cout << "  student seed " << s << ": fg none " << fg["none"].back() << ", cd_only "
              << fg["cd_only"].back() << ", cr_only " << fg["cr_only"].back() << ", reko "
              << fg["reko"].back() << "; diagonality reko " << diag_reko.back() << " none "
              << diag_none.back() << ", " << seconds_since(t0) << " s" << std::endl;
    if (s == 0) seed0_grid = std::move(grid);
  }
  const bool teacher_frozen = testutil::digest(teacher) == teacher_before;

  {
    const auto zero_cfg = [] {
      auto c = base_config(0);
      c.distill.alpha = 0.0;
      return c;
    }();
    const auto zero = distill_student(zero_cfg, teacher, data);
    const StudentRun* none0 = nullptr;
    for (const auto& g : seed0_grid) {
      if (g.label == "none") none0 = &g.run;
    }
    const bool same_weights = testutil::digest(zero.student) == testutil::digest(none0->student);
    // The distill column is a diagnostic (the unweighted loss is still
    // computed at α = 0); everything that was minimised or measured must match.
    bool same_record = zero.record.epochs.size() == none0->record.epochs.size();
    for (std::size_t i = 0; same_record && i < zero.record.epochs.size(); ++i) {
      auto a = zero.record.epochs[i].to_json();
      auto b = none0->record.epochs[i].to_json();
      a.erase("distill");
      b.erase("distill");
      same_record = a.dump() == b.dump() &&
                    testutil::bit_equal(zero.record.epochs[i].total, none0->record.epochs[i].total) &&
                    testutil::bit_equal(zero.record.epochs[i].origin, none0->record.epochs[i].origin);
    }
    report("C4", teacher_frozen && heads_frozen && same_weights && same_record,
           std::string("teacher ") + (teacher_frozen ? "unchanged" : "CHANGED") + " over " +
               std::to_string(kSeeds * 4) + " runs, heads " +
               (heads_frozen ? "unchanged" : "CHANGED") + ", alpha=0 vs none: weights " +
               (same_weights ? "identical" : "DIFFER") + ", record " +
               (same_record ? "identical" : "DIFFERS"),
           {{"teacher_byte_identical", teacher_frozen},
            {"heads_byte_identical", heads_frozen},
            {"alpha0_weights_identical", same_weights},
            {"alpha0_record_identical", same_record}});
  }

  {
    const double none = mean(fg["none"]), cd = mean(fg["cd_only"]), rk = mean(fg["reko"]),
                 cr = mean(fg["cr_only"]);
    const auto pooled = [&](const std::string& a, const std::string& b) {
      const double sa = stddev(fg[a]), sb = stddev(fg[b]);
      return std::sqrt((sa * sa + sb * sb) / 2.0);
    };
    const double improvement = 1.0 - rk / none;
    const bool hard = rk < none && improvement >= 0.10;
    const double sd_upper = pooled("reko", "cd_only");
    const double sd_lower = pooled("cd_only", "none");
    const bool link_upper = rk <= cd, link_lower = cd <= none;
    const bool upper_ok = link_upper || rk - cd <= sd_upper;
    const bool lower_ok = link_lower || cd - none <= sd_lower;
    std::string note;
    if (!link_upper && upper_ok) note += "; DEVIATION reko > cd_only within one pooled SD";
    if (!link_lower && lower_ok) note += "; DEVIATION cd_only > none within one pooled SD";
    report("C6", hard && upper_ok && lower_ok,
           "mean fg MSE over 5 seeds: reko " + fmt(rk) + ", cd_only " + fmt(cd) + ", none " +
               fmt(none) + " (cr_only " + fmt(cr) + "); reko improves " +
               fmt(100 * improvement, 3) + "%" + note,
           {{"fg_mse", fg},
            {"mean", {{"reko", rk}, {"cd_only", cd}, {"cr_only", cr}, {"none", none}}},
            {"sd",
             {{"reko", stddev(fg["reko"])},
              {"cd_only", stddev(fg["cd_only"])},
              {"cr_only", stddev(fg["cr_only"])},
              {"none", stddev(fg["none"])}}},
            {"relative_improvement", improvement},
            {"pooled_sd_reko_cd", sd_upper},
            {"pooled_sd_cd_none", sd_lower},
            {"reko_le_cd_only", link_upper},
            {"cd_only_le_none", link_lower}});
  }

  {
    bool all = true;
    for (std::size_t s = 0; s < kSeeds; ++s) all = all && diag_reko[s] > diag_none[s];
    report("C7", all,
           "diagonality on 32 eval samples, reko mean " + fmt(mean(diag_reko)) + " vs none " +
               fmt(mean(diag_none)) + ", reko higher on " +
               std::to_string(std::count_if(
                   diag_reko.begin(), diag_reko.end(),
                   [&, i = std::size_t{0}](double d) mutable { return d > diag_none[i++]; })) +
               "/5 seeds",
           {{"reko", diag_reko}, {"none", diag_none}});
  }

  // C8: adversarial stability.
  {
    std::vector<double> st_reko, st_none;
    for (std::uint64_t s = 0; s < kSeeds; ++s) {
      const auto t0 = Clock::now();
      auto cfg = base_config(s);
      cfg.adversarial = true;
      auto none_cfg = cfg;
      none_cfg.distill.baseline = Baseline::none;
      const auto r = distill_student(cfg, teacher, data);
      const auto n = distill_student(none_cfg, teacher, data);
      st_reko.push_back(stability_score(r.record.eval_series("mse")));
      st_none.push_back(stability_score(n.record.eval_series("mse")));
      std::cout << "  adversarial seed " << s << ": stability reko " << st_reko.back()
                << " none " << st_none.back() << ", final fg reko " << final_fg(r) << " none "
                << final_fg(n) << ", " << seconds_since(t0) << " s" << std::endl;
    }
    const double mr = mean(st_reko), mn = mean(st_none);
    report("C8", mr < mn,
           "mean stability (variance of last-third eval MSE) reko " + fmt(mr) + " vs none " +
               fmt(mn) + ", ratio reko/none " + fmt(mr / mn, 3),
           {{"reko", st_reko}, {"none", st_none}, {"ratio", mr / mn}});
  }

  // C9: α × K sensitivity at seed 0.
  {
    const auto t0 = Clock::now();
    const double none0 = fg["none"][0];
    const auto sweep = run_sensitivity_sweep(base_config(0), teacher, data, {0.5, 1, 2, 4},
                                             {8, 16, 32}, default_threads());
    json grid = json::array();
    bool all = true;
    double lo = 1e9, hi = -1e9;
    for (const auto& g : sweep) {
      const double v = final_fg(g.run);
      all = all && v < none0;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      grid.push_back({{"alpha", g.config.distill.alpha}, {"K", g.config.distill.k}, {"fg_mse", v}});
      std::cout << "  alpha " << g.config.distill.alpha << " K " << g.config.distill.k
                << ": fg " << v << std::endl;
    }
    report("C9", all && sweep.size() == 12,
           std::to_string(sweep.size()) + " runs vs none " + fmt(none0) + ": fg MSE in [" +
               fmt(lo) + ", " + fmt(hi) + "], spread " + fmt(hi - lo, 3) + ", " +
               fmt(seconds_since(t0), 3) + " s",
           {{"none", none0}, {"grid", grid}, {"min", lo}, {"max", hi}, {"spread", hi - lo}});
  }

  // C10: determinism and round-trips.
  {
    TrainConfig tiny;
    tiny.epochs = 2;
    tiny.teacher = GeneratorSpec{.base_width = 8, .depth = 2, .image_size = 16, .res_blocks = 1};
    tiny.student_width = 2;
    tiny.distill.k = 4;
    tiny.distill.embed_dim = 16;
    SynthOptions small;
    small.image_size = 16;
    const Dataset tiny_data = Dataset::generate(1, 12, 4, small);
    std::vector<std::map<std::string, std::string>> sums;
    for (const char* tag : {"a", "b"}) {
      RunOptions o;
      o.out_dir = scratch() / tag;
      const auto t = train_teacher(tiny, tiny_data, o);
      RunOptions so;
      so.out_dir = scratch() / (std::string(tag) + "_student");
      distill_student(tiny, t.teacher, tiny_data, so);
      auto a = tree_checksums(*o.out_dir);
      for (const auto& [k, v] : tree_checksums(*so.out_dir)) a["student/" + k] = v;
      sums.push_back(std::move(a));
    }
    const bool same_artifacts = sums[0] == sums[1] && !sums[0].empty();

    const fs::path ddir = scratch() / "data";
    generate_dataset(0, 512, 64, ddir);
    const Dataset loaded = Dataset::load(ddir);
    bool data_exact = loaded.train.size() == 512 && loaded.eval.size() == 64;
    for (std::size_t i = 0; data_exact && i < 512; ++i) {
      data_exact = testutil::bytes(loaded.train[i].input) == testutil::bytes(data.train[i].input) &&
                   testutil::bytes(loaded.train[i].target) == testutil::bytes(data.train[i].target) &&
                   loaded.train[i].mask == data.train[i].mask;
    }
    for (std::size_t i = 0; data_exact && i < 64; ++i) {
      data_exact = testutil::bytes(loaded.eval[i].input) == testutil::bytes(data.eval[i].input) &&
                   testutil::bytes(loaded.eval[i].target) == testutil::bytes(data.eval[i].target) &&
                   loaded.eval[i].mask == data.eval[i].mask;
    }

    const auto manifest = teacher.save(scratch() / "ckpt");
    const Generator back = Generator::load(manifest);
    const bool ckpt_exact = testutil::bytes(back) == testutil::bytes(teacher) &&
                            back.spec() == teacher.spec();

    report("C10", same_artifacts && data_exact && ckpt_exact,
           std::to_string(sums[0].size()) + " artifact checksums " +
               (same_artifacts ? "identical" : "DIFFER") + " across two runs; dataset round-trip " +
               (data_exact ? "bit-exact" : "MISMATCH") + "; checkpoint round-trip " +
               (ckpt_exact ? "bit-exact" : "MISMATCH"),
           {{"artifact_checksums_identical", same_artifacts},
            {"artifact_count", sums[0].size()},
            {"dataset_round_trip", data_exact},
            {"checkpoint_round_trip", ckpt_exact}});
  }

  results["wall_seconds"] = seconds_since(t_all);
  std::ofstream("acceptance_results.json") << results.dump(2) << "\n";
  fs::remove_all(scratch());
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << " in "
            << fmt(seconds_since(t_all), 5) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
