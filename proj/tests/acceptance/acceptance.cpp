// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
//
//   acceptance [--only 1,4,10] [--pretrain N] [--joint N] [--seeds N] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dynmask/eval.hpp"
#include "dynmask/losses.hpp"
#include "dynmask/ops.hpp"
#include "dynmask/trainer.hpp"
#include "support/grad_suite.hpp"

using namespace dynmask;
namespace fs = std::filesystem;

namespace {

struct Settings {
  std::set<int> only;
  int pretrain_steps = 800;
  int joint_steps = 1000;
  int seeds = 3;
  int channels = 8;
  fs::path work = fs::temp_directory_path() / "dynmask_acceptance";
};

struct Verdict {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Verdict> g_verdicts;

void report(int id, bool pass, const std::string& title, const std::string& detail) {
  std::printf("[%s] criterion %d: %s | %s\n", pass ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  g_verdicts.push_back({id, pass, detail});
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& s) {
  std::printf("  %s\n", s.c_str());
  std::fflush(stdout);
}

// 1 ---------------------------------------------------------------------------

void gradient_suite_check() {
  const auto t0 = std::chrono::steady_clock::now();
  int passed = 0, total = 0;
  double worst = 0;
  std::string worst_name;
  for (const auto& c : testing::gradient_suite()) {
    const auto r = c.run(3);
    ++total;
    const bool ok = r.entries_checked > 0 && r.max_rel_error < testing::kGradTolerance;
    passed += ok;
    if (!ok) note("grad check failed: " + c.name + ": " + r.describe());
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = c.name;
    }
  }
  const double secs = seconds_since(t0);
  report(1, passed == total && secs < 300.0, "gradient suite (float64 finite differences)",
         fmt("%d/%d cases, worst rel err %.2e (%s), %.1f s (limit 300 s)", passed, total, worst, worst_name.c_str(),
             secs));
}

// 2 ---------------------------------------------------------------------------

NdArray<double> rand_array(const Shape& s, std::mt19937_64& rng) {
  NdArray<double> a(s);
  for (auto& v : a.values()) v = uniform(rng, -1.0, 1.0);
  return a;
}

void zero_offset_check() {
  std::mt19937_64 rng(20240);
  double worst = 0;
  for (int draw = 0; draw < 20; ++draw) {
    const int c = 1 + static_cast<int>(rng() % 6), o = 1 + static_cast<int>(rng() % 6);
    const int h = 3 + static_cast<int>(rng() % 14), w = 3 + static_cast<int>(rng() % 14);
    const auto x = ops::constant(rand_array(Shape{c, h, w}, rng));
    const auto k = ops::constant(rand_array(Shape{o, c, 3, 3}, rng));
    const auto b = ops::constant(rand_array(Shape{o}, rng));
    const auto ref = ops::conv2d(x, k, b, 1, 1);
    const auto got = ops::deform_conv2d(x, k, b, ops::constant(NdArray<double>(Shape{18, h, w})));
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(got.value()[i] - ref.value()[i]));
  }
  report(2, worst < 1e-6, "deformable conv with zero offsets equals conv2d",
         fmt("20 random draws, max abs diff %.3e (limit 1e-6)", worst));
}

// 3 ---------------------------------------------------------------------------

void loss_closed_form_check() {
  std::mt19937_64 rng(31);
  CostModel cost;
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    std::vector<Tensor<double>> batch;
    std::array<double, kNumRungs> f{};
    double e = 0;
    for (int i = 0; i < n; ++i) {
      std::array<double, kNumRungs> p{};
      double s = 0;
      for (auto& v : p) s += (v = -std::log(1.0 - uniform01(rng)));
      for (std::size_t k = 0; k < kNumRungs; ++k) {
        p[k] /= s;
        f[k] += p[k] / n;
        e += p[k] * cost.costs[k] / n;
      }
      batch.push_back(ops::constant(NdArray<double>(Shape{kNumRungs}, std::vector<double>(p.begin(), p.end()))));
    }
    double h = 0;
    for (double v : f) h += v * std::log(v);
    h /= kNumRungs;
    const auto b = budget_loss(batch, cost);
    worst = std::max({worst, std::abs(b.loss.item() - std::max(e / cost.target - 1.0, 0.0)),
                      std::abs(entropy_loss(batch).item() - h)});
  }
  // The two worked examples.
  const std::vector<Tensor<double>> uniform{
      ops::constant(NdArray<double>(Shape{kNumRungs}, std::vector<double>(kNumRungs, 0.25)))};
  const double uni_err = std::abs(entropy_loss(uniform).item() + std::log(4.0) / 4.0);
  CostModel over;  // one-hot rung 2 gives E(C) = 1.2 C_t
  over.target = cost.costs[1] / 1.2;
  const std::vector<Tensor<double>> rung2{
      ops::constant(NdArray<double>(Shape{kNumRungs}, std::vector<double>{0, 1, 0, 0}))};
  const double budget_err = std::abs(budget_loss(rung2, over).loss.item() - 0.2);
  worst = std::max({worst, uni_err, budget_err});
  report(3, worst < 1e-9, "budget and entropy losses match closed forms",
         fmt("50 random simplex batches + 2 worked examples, max abs err %.2e (limit 1e-9)", worst));
}

// 4 ---------------------------------------------------------------------------

void cost_bookkeeping_check() {
  CostModel cost;
  const auto s = cost_from_histogram({0.35, 0.34, 0.21, 0.10}, cost);
  const double expected = 0.6439;
  const bool exact4 = std::abs(s.expected_cost - expected) < 0.5e-4;
  const bool coarse = std::abs(s.expected_cost - 0.64) < 0.005 && std::round(s.delta_pct) == -54.0;
  report(4, exact4, "cost bookkeeping: histogram (0.35,0.34,0.21,0.10) -> E(C) = 0.6439 to 4 decimals",
         fmt("computed E(C) = %.4f, delta %.1f%%; agrees with 0.64 / -54%% at two decimals: %s; "
             "the histogram sum is %.4f to 4 decimals, so 0.6439 is not reachable",
             s.expected_cost, s.delta_pct, coarse ? "yes" : "no", s.expected_cost));
}

// 10 --------------------------------------------------------------------------

void ap_oracle_check() {
  // Prediction: first 20 cells of a 10x10 grid. Ground truth: first m cells, IoU m/20.
  std::vector<MaskGrid> preds, gts;
  for (int m : {20, 19, 16, 12, 8}) {
    auto p = MaskGrid::zeros(10), g = MaskGrid::zeros(10);
    for (int i = 0; i < 20; ++i) p.values[static_cast<std::size_t>(i)] = 1.0F;
    for (int i = 0; i < m; ++i) g.values[static_cast<std::size_t>(i)] = 1.0F;
    preds.push_back(p);
    gts.push_back(g);
  }
  double brute = 0;
  for (int t = 50; t <= 95; t += 5) {
    int hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      int inter = 0, uni = 0;
      for (std::size_t c = 0; c < preds[i].values.size(); ++c) {
        const bool a = preds[i].values[c] > 0.5F, b = gts[i].values[c] > 0.5F;
        inter += a && b;
        uni += a || b;
      }
      hits += inter * 100 >= t * uni;
    }
    brute += hits / 5.0;
  }
  brute /= 10.0;
  const double ap = mask_ap(preds, gts).ap;
  report(10, std::abs(ap - brute) < 1e-12, "oracle-AP matches brute-force enumeration",
         fmt("IoUs {1.0, 0.95, 0.80, 0.60, 0.40}: mask_ap %.6f, enumeration %.6f", ap, brute));
}

// 11 --------------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(DYNMASK_CLI) + " " + args + " >>'" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism_check(const Settings& s) {
  const auto root = s.work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cfg =
      " --set dataset.counts='{\"disk\":6,\"rectangle\":6,\"star\":6,\"blob\":6}' --set model.channels=4"
      " --set trainer.pretrain_steps=10 --set trainer.joint_steps=10 --set trainer.batch_size=4";
  std::vector<std::string> reports;
  bool ok = true;
  for (const char* run : {"a", "b"}) {
    const auto dir = root / run;
    const auto log = root / (std::string(run) + ".log");
    ok = ok && run_cli("gen --seed 11 --out '" + (dir / "data").string() + "'" + cfg, log) == 0;
    ok = ok && run_cli("train --seed 5 --data '" + (dir / "data").string() + "' --out '" + (dir / "train").string() +
                           "'" + cfg,
                       log) == 0;
    ok = ok && run_cli("eval --checkpoint '" + (dir / "train" / "checkpoint.dmck").string() + "' --data '" +
                           (dir / "data").string() + "' --out '" + (dir / "eval").string() + "'" + cfg,
                       log) == 0;
    reports.push_back(slurp(dir / "eval" / "report.json"));
  }
  const bool same_report = ok && !reports[0].empty() && reports[0] == reports[1];
  const bool same_ckpt =
      slurp(root / "a" / "train" / "checkpoint.dmck") == slurp(root / "b" / "train" / "checkpoint.dmck");
  const bool same_log = slurp(root / "a" / "train" / "train_log.jsonl") == slurp(root / "b" / "train" / "train_log.jsonl");
  report(11, same_report, "two gen -> train -> eval runs give byte-identical reports",
         fmt("commands ok: %s; report.json identical: %s (%zu bytes); checkpoint identical: %s; train log identical: %s",
             ok ? "yes" : "no", same_report ? "yes" : "no", reports[0].size(), same_ckpt ? "yes" : "no",
             same_log ? "yes" : "no"));
}

// 5-9 -------------------------------------------------------------------------

struct SeedOutcome {
  std::array<double, kNumRungs> hard_iou{};
  double cv_mask = 0, cv_edge = 0;
  int hard_count = 0;
  double train_cost = 0;  // mean E(C) over the last 100 joint steps
  double dyn_iou = 0, dyn_cost = 0, size_iou = 0, size_cost = 0;
  RungHistogram dyn_hist{};
};

double coefficient_of_variation(const std::array<double, kNumRungs>& v) {
  double mu = 0;
  for (double x : v) mu += x / kNumRungs;
  double var = 0;
  for (double x : v) var += (x - mu) * (x - mu) / kNumRungs;
  return std::sqrt(var) / mu;
}

std::string hist_str(const RungHistogram& h) { return fmt("(%.3f, %.3f, %.3f, %.3f)", h[0], h[1], h[2], h[3]); }

DatasetSpec training_dataset_spec() {
  DatasetSpec spec;
  spec.counts = {100, 100, 100, 100};
  spec.sizes.min_size = 60;
  spec.sizes.max_size = 220;
  spec.seed = 2024;
  return spec;
}

TrainConfig train_config(const Settings& s, std::uint64_t seed, double entropy_weight) {
  TrainConfig tc;
  tc.seed = seed;
  tc.pretrain_steps = s.pretrain_steps;
  tc.joint_steps = s.joint_steps;
  tc.cost.target = 0.64;
  tc.cost.entropy_weight = entropy_weight;
  return tc;
}

double last100_cost(const std::vector<double>& costs) {
  const std::size_t n = std::min<std::size_t>(100, costs.size());
  double sum = 0;
  for (std::size_t i = costs.size() - n; i < costs.size(); ++i) sum += costs[i];
  return n ? sum / static_cast<double>(n) : 0.0;
}

std::vector<double> run_joint(Trainer& tr) {
  std::vector<double> costs;
  tr.train_joint([&](const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    costs.push_back(j.at("expected_cost").get<double>());
    const int step = j.at("step").get<int>();
    if ((step + 1) % 250 == 0) note("joint step " + std::to_string(step + 1) + ": " + line);
  });
  return costs;
}

EvalReport eval_policy(const MaskModel<float>& model, const LoadedDataset& data, const Policy& p,
                       const CostModel& cost) {
  EvalOptions o;
  o.policy = p;
  o.split = "eval";
  o.cost = cost;
  return evaluate(model, data, o);
}

void training_criteria(const Settings& s, const std::set<int>& wanted) {
  const auto data_dir = s.work / "train_data";
  fs::remove_all(data_dir);
  generate_dataset(training_dataset_spec(), data_dir);
  const auto data = load_dataset(data_dir);
  std::vector<int> hard_all;
  for (int i : data.split("all")) {
    if (data.instances[static_cast<std::size_t>(i)].record.difficulty == Difficulty::kHard) hard_all.push_back(i);
  }
  note(fmt("dataset: %zu instances (%zu eval, %zu hard overall); model channels %d; %d pretrain + %d joint steps",
           data.instances.size(), data.split("eval").size(), hard_all.size(), s.channels, s.pretrain_steps,
           s.joint_steps));

  ModelConfig mc;
  mc.channels = s.channels;
  std::vector<SeedOutcome> out;
  std::vector<std::uint8_t> seed1_pretrained;
  for (int seed = 1; seed <= s.seeds; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    SeedOutcome r;
    MaskModel<float> model(mc, mix_seed(static_cast<std::uint64_t>(seed), {0x1417ULL}));
    const auto tc = train_config(s, static_cast<std::uint64_t>(seed), 1.0);
    Trainer tr(model, data, tc);
    tr.pretrain();
    if (seed == 1) {
      seed1_pretrained = serialize_checkpoint(make_checkpoint(model, &tr.optimizer(), tr.steps_taken(), 0, false));
    }

    const auto fixed_hard_iou = [&] {
      std::array<double, kNumRungs> v{};
      for (int k = 1; k <= kNumRungs; ++k) {
        v[static_cast<std::size_t>(k - 1)] =
            eval_policy(model, data, Policy::fixed(k), tc.cost).mean_iou_by_difficulty.at("hard");
      }
      return v;
    };
    {
      const auto pre_iou = fixed_hard_iou();
      const auto rl = rung_losses(model, data, hard_all);
      std::array<double, kNumRungs> m{}, e{};
      for (std::size_t i = 0; i < hard_all.size(); ++i) {
        for (std::size_t k = 0; k < kNumRungs; ++k) {
          m[k] += rl.mask[i][k] / static_cast<double>(hard_all.size());
          e[k] += rl.edge[i][k] / static_cast<double>(hard_all.size());
        }
      }
      r.cv_mask = coefficient_of_variation(m);
      r.cv_edge = coefficient_of_variation(e);
      r.hard_count = static_cast<int>(hard_all.size());
      note(fmt("seed %d pretrained (%.0f s): hard IoU by rung %.4f %.4f %.4f %.4f; mean mask loss %s, edge loss %s",
               seed, seconds_since(t0), pre_iou[0], pre_iou[1], pre_iou[2], pre_iou[3],
               hist_str(m).c_str(), hist_str(e).c_str()));
    }

    if (wanted.count(5) || wanted.count(6) || wanted.count(7) || wanted.count(9)) {
      r.train_cost = last100_cost(run_joint(tr));
      // Criterion 5 is read off the fully trained model, not the pretrained one.
      r.hard_iou = fixed_hard_iou();
      const auto dyn = eval_policy(model, data, Policy::dynamic(), tc.cost);
      const auto size = eval_policy(model, data, Policy::size_based(), tc.cost);
      r.dyn_iou = dyn.mean_iou;
      r.dyn_cost = dyn.cost.expected_cost;
      r.dyn_hist = dyn.distribution.overall;
      r.size_iou = size.mean_iou;
      r.size_cost = size.cost.expected_cost;
      note(fmt("seed %d joint done (%.0f s total): train E(C) last 100 = %.4f; eval dynamic IoU %.4f E %.4f hist %s; "
               "size-based IoU %.4f E %.4f; hard IoU by fixed rung %.4f %.4f %.4f %.4f",
               seed, seconds_since(t0), r.train_cost, r.dyn_iou, r.dyn_cost, hist_str(r.dyn_hist).c_str(), r.size_iou,
               r.size_cost, r.hard_iou[0], r.hard_iou[1], r.hard_iou[2], r.hard_iou[3]));
    }
    out.push_back(r);
  }

  if (wanted.count(5)) {
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto& h = out[i].hard_iou;
      double min_margin = 1;
      for (std::size_t k = 1; k < kNumRungs; ++k) min_margin = std::min(min_margin, h[k] - h[k - 1]);
      ok = ok && min_margin > 0;
      detail += fmt("%sseed %zu: %.4f < %.4f < %.4f < %.4f (min margin %+.4f)", i ? "; " : "", i + 1, h[0], h[1],
                    h[2], h[3], min_margin);
    }
    report(5, ok, "hard-split mean IoU strictly increases with fixed rung 14 -> 112 (after joint training)", detail);
  }
  if (wanted.count(6)) {
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double rel = out[i].train_cost / 0.64 - 1.0;
      ok = ok && std::abs(rel) <= 0.10;
      detail += fmt("%sseed %zu: %.4f (%+.1f%%)", i ? "; " : "", i + 1, out[i].train_cost, 100 * rel);
    }
    report(6, ok, "joint training tracks C_t = 0.64 within 10% (last 100 steps)", detail);
  }
  if (wanted.count(7)) {
    int wins = 0;
    std::string detail;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto& r = out[i];
      const bool matched = std::abs(r.dyn_cost / r.size_cost - 1.0) <= 0.10;
      const bool better = r.dyn_iou >= r.size_iou;
      wins += matched && better;
      detail += fmt("%sseed %zu: dynamic %.4f @ %.3f vs size-based %.4f @ %.3f (cost %s, IoU %s)", i ? "; " : "",
                    i + 1, r.dyn_iou, r.dyn_cost, r.size_iou, r.size_cost, matched ? "matched" : "NOT matched",
                    better ? ">=" : "<");
    }
    report(7, wins >= 2, "dynamic >= size-based mean IoU at matched cost in >= 2 of 3 seeds",
           fmt("%d/%zu seeds; ", wins, out.size()) + detail);
  }
  if (wanted.count(8)) {
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < out.size(); ++i) {
      ok = ok && out[i].cv_edge > out[i].cv_mask && out[i].hard_count >= 100;
      detail += fmt("%sseed %zu: CV edge %.4f vs mask %.4f", i ? "; " : "", i + 1, out[i].cv_edge, out[i].cv_mask);
    }
    report(8, ok, "edge loss varies across rungs more than mask loss (pretrained, hard instances)",
           fmt("%d hard instances; ", out.empty() ? 0 : out[0].hard_count) + detail);
  }
  if (wanted.count(9)) {
    bool on_ok = true;
    std::string detail;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double lo = *std::min_element(out[i].dyn_hist.begin(), out[i].dyn_hist.end());
      on_ok = on_ok && lo >= 0.05;
      detail += fmt("%sentropy on, seed %zu: %s", i ? "; " : "", i + 1, hist_str(out[i].dyn_hist).c_str());
    }
    // Same pretrained start as seed 1, entropy term removed.
    MaskModel<float> model(mc, 0);
    restore_checkpoint(parse_checkpoint(seed1_pretrained), model);
    const auto tc = train_config(s, 1, 0.0);
    Trainer tr(model, data, tc);
    const double off_cost = last100_cost(run_joint(tr));
    const auto off = eval_policy(model, data, Policy::dynamic(), tc.cost);
    const double off_lo = *std::min_element(off.distribution.overall.begin(), off.distribution.overall.end());
    detail += fmt("; entropy off, seed 1: %s (train E(C) %.4f)", hist_str(off.distribution.overall).c_str(), off_cost);
    report(9, on_ok && off_lo < 0.01,
           "selection distribution: no rung < 5% with entropy, some rung < 1% without (eval split)", detail);
  }
}

}  // namespace

int main(int argc, char** argv) {
  Settings s;
  std::string only;
  CLI::App app("dynmask acceptance run");
  app.add_option("--only", only, "Comma-separated criteria to run (default: all)");
  app.add_option("--pretrain", s.pretrain_steps, "Pretraining steps per seed");
  app.add_option("--joint", s.joint_steps, "Joint training steps per seed");
  app.add_option("--seeds", s.seeds, "Number of training seeds");
  app.add_option("--channels", s.channels, "Model width");
  app.add_option("--work", s.work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  for (std::stringstream ss(only); std::getline(ss, only, ',');) s.only.insert(std::stoi(only));
  auto wanted = [&](int id) { return s.only.empty() || s.only.count(id) > 0; };
  fs::create_directories(s.work);

  const auto t0 = std::chrono::steady_clock::now();
  if (wanted(1)) gradient_suite_check();
  if (wanted(2)) zero_offset_check();
  if (wanted(3)) loss_closed_form_check();
  if (wanted(4)) cost_bookkeeping_check();
  if (wanted(10)) ap_oracle_check();
  if (wanted(11)) determinism_check(s);
  std::set<int> train_ids;
  for (int id = 5; id <= 9; ++id) {
    if (wanted(id)) train_ids.insert(id);
  }
  if (!train_ids.empty()) training_criteria(s, train_ids);

  int failed = 0;
  std::sort(g_verdicts.begin(), g_verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  std::printf("\nsummary (%.0f s):", seconds_since(t0));
  for (const auto& v : g_verdicts) {
    std::printf(" %d=%s", v.id, v.pass ? "PASS" : "FAIL");
    failed += !v.pass;
  }
  std::printf("\n");
  return failed == 0 ? 0 : 1;
}
