// dynmask: dataset generation, training, evaluation and policy comparison.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dynmask/config.hpp"
#include "dynmask/error.hpp"
#include "dynmask/eval.hpp"

namespace fs = std::filesystem;
using namespace dynmask;

namespace {

enum ExitCode { kOk = 0, kUnexpected = 1, kConfig = 2, kData = 3, kNumerical = 4 };

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::int64_t seed = -1;
};

fs::path resolve_out(const CommonFlags& f) {
  if (!f.out.empty()) return f.out;
  if (const char* env = std::getenv("DYNMASK_OUT")) return env;
  throw ConfigError("no output directory: pass --out or set DYNMASK_OUT");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

RunConfig resolve_config(const CommonFlags& f, std::vector<std::string> extra) {
  std::vector<std::string> all = f.sets;
  all.insert(all.end(), extra.begin(), extra.end());
  return load_run_config(f.config, all);
}

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--set", f.sets, "Override a key, e.g. --set trainer.joint_steps=500");
  cmd->add_option("--out", f.out, "Output directory (default: $DYNMASK_OUT)");
  cmd->add_option("--seed", f.seed, "Seed for this command's randomness");
}

int cmd_gen(const CommonFlags& f) {
  std::vector<std::string> extra;
  if (f.seed >= 0) extra.push_back("dataset.seed=" + std::to_string(f.seed));
  const auto cfg = resolve_config(f, extra);
  const auto out = resolve_out(f);
  ensure_dir(out);
  const auto manifest = generate_dataset(cfg.dataset, out);
  write_text(out / "run_config.json", cfg.json.dump(2) + "\n");
  std::cout << "wrote " << manifest.size() << " instances to " << out.string() << " (config " << cfg.hash_hex()
            << ")\n";
  return kOk;
}

struct TrainFlags {
  std::string data;
  std::string policy;
  int rung = 0;
  double budget = -1;
};

int cmd_train(const CommonFlags& f, const TrainFlags& t) {
  std::vector<std::string> extra;
  if (f.seed >= 0) extra.push_back("trainer.seed=" + std::to_string(f.seed));
  if (!t.policy.empty()) extra.push_back("trainer.policy=\"" + t.policy + "\"");
  if (t.rung > 0) extra.push_back("trainer.rung=" + std::to_string(t.rung));
  if (t.budget >= 0) extra.push_back("cost.target=" + nlohmann::json(t.budget).dump());
  const auto cfg = resolve_config(f, extra);
  const auto out = resolve_out(f);
  const auto data = load_dataset(t.data, cfg.edge_threshold);
  ensure_dir(out);

  MaskModel<float> model(cfg.model, mix_seed(cfg.trainer.seed, {0x1417ULL}));
  Trainer trainer(model, data, cfg.trainer);
  {
    std::ofstream log(out / "pretrain_log.jsonl", std::ios::binary);
    trainer.pretrain([&](const std::string& line) { log << line << '\n'; });
  }
  {
    std::ofstream log(out / "train_log.jsonl", std::ios::binary);
    trainer.train_joint([&](const std::string& line) { log << line << '\n'; });
  }
  const bool switch_trained = cfg.trainer.policy.kind == PolicyKind::kDynamic && cfg.trainer.joint_steps > 0;
  save_checkpoint(out / "checkpoint.dmck",
                  make_checkpoint(model, &trainer.optimizer(), trainer.steps_taken(), cfg.hash(), switch_trained));
  write_text(out / "run_config.json", cfg.json.dump(2) + "\n");
  std::cout << "trained " << cfg.trainer.policy.name() << " for " << cfg.trainer.pretrain_steps << "+"
            << cfg.trainer.joint_steps << " steps; checkpoint in " << out.string() << "\n";
  return kOk;
}

struct EvalFlags {
  std::string checkpoint;
  std::string data;
  std::string policy;
  int rung = 0;
  bool overlays = false;
};

// Loads a checkpoint into a fresh model; the dynamic policy needs switch weights.
MaskModel<float> load_model(const fs::path& path, const Policy& policy, std::uint64_t config_hash) {
  const auto ckpt = load_checkpoint(path);
  if (const auto warning = config_hash_warning(ckpt, config_hash); !warning.empty()) {
    std::cerr << "warning: " << warning << "\n";
  }
  if (policy.kind == PolicyKind::kDynamic && !ckpt.has_switch()) {
    throw ConfigError("policy 'dynamic' needs switch weights, but " + path.string() +
                      " was trained without the switch");
  }
  MaskModel<float> model(ckpt.model_config(), 0);
  restore_checkpoint(ckpt, model);
  return model;
}

int cmd_eval(const CommonFlags& f, const EvalFlags& e) {
  std::vector<std::string> extra;
  if (!e.policy.empty()) extra.push_back("eval.policy=\"" + e.policy + "\"");
  if (e.rung > 0) extra.push_back("eval.rung=" + std::to_string(e.rung));
  if (e.overlays) extra.push_back("eval.overlays=true");
  const auto cfg = resolve_config(f, extra);
  const auto out = resolve_out(f);
  const auto policy = Policy::parse(cfg.eval.policy, cfg.eval.rung, cfg.dataset.image_side);
  auto model = load_model(e.checkpoint, policy, cfg.hash());
  const auto data = load_dataset(e.data, cfg.edge_threshold);
  ensure_dir(out);
  EvalOptions opts;
  opts.policy = policy;
  opts.split = cfg.eval.split;
  opts.config_hash = cfg.hash();
  opts.cost = cfg.cost;
  if (cfg.eval.overlays) opts.overlay_dir = out / "overlays";
  const auto report = evaluate(model, data, opts);
  write_report(report, out);
  std::cout << report.policy << ": oracle-AP " << report.ap.ap << ", mean IoU " << report.mean_iou << ", E(C) "
            << report.cost.expected_cost << " (" << report.cost.delta_pct << "%)\n";
  return kOk;
}

struct CompareFlags {
  std::vector<std::string> reports;
  std::vector<std::string> runs;  // label=policy@checkpoint
  std::string data;
};

int cmd_compare(const CommonFlags& f, const CompareFlags& c) {
  const auto cfg = resolve_config(f, {});
  const auto out = resolve_out(f);
  std::vector<EvalReport> reports;
  std::vector<std::string> labels;
  for (const auto& path : c.reports) {
    reports.push_back(read_report(path));
    labels.push_back(fs::path(path).parent_path().filename().string());
  }
  if (!c.runs.empty()) {
    if (c.data.empty()) throw ConfigError("compare: --run needs --data");
    const auto data = load_dataset(c.data, cfg.edge_threshold);
    for (const auto& run : c.runs) {
      const auto eq = run.find('=');
      const auto at = run.find('@');
      if (eq == std::string::npos || at == std::string::npos || at < eq) {
        throw ConfigError("compare: --run expects label=policy@checkpoint, got '" + run + "'");
      }
      const auto policy = Policy::parse(run.substr(eq + 1, at - eq - 1), cfg.eval.rung, cfg.dataset.image_side);
      const auto model = load_model(run.substr(at + 1), policy, cfg.hash());
      EvalOptions opts;
      opts.policy = policy;
      opts.split = cfg.eval.split;
      opts.config_hash = cfg.hash();
      opts.cost = cfg.cost;
      reports.push_back(evaluate(model, data, opts));
      labels.push_back(run.substr(0, eq));
    }
  }
  if (reports.size() < 2) throw ConfigError("compare: need at least two runs (--report or --run)");
  ensure_dir(out);
  const auto table = compare_csv(reports, labels);
  write_text(out / "compare.csv", table);
  std::cout << table;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic mask-resolution instance segmentation on synthetic shapes"};
  app.require_subcommand(1);
  CommonFlags common;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_common(gen, common);

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Pretrain, then train jointly with the chosen policy");
  add_common(train, common);
  train->add_option("--data", tf.data, "Dataset directory (from gen)")->required();
  train->add_option("--policy", tf.policy, "dynamic | size_based | fixed | fixed:K");
  train->add_option("--rung", tf.rung, "Rung for the fixed policy (1..4)");
  train->add_option("--budget", tf.budget, "Target expected cost C_t");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint under a policy");
  add_common(eval, common);
  eval->add_option("--checkpoint", ef.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", ef.data, "Dataset directory")->required();
  eval->add_option("--policy", ef.policy, "dynamic | size_based | fixed | fixed:K");
  eval->add_option("--rung", ef.rung, "Rung for the fixed policy (1..4)");
  eval->add_flag("--overlays", ef.overlays, "Write GT/prediction contour PNGs");

  CompareFlags cf;
  auto* compare = app.add_subcommand("compare", "Side-by-side table of evaluated runs");
  add_common(compare, common);
  compare->add_option("--report", cf.reports, "report.json of an evaluated run (repeatable)");
  compare->add_option("--run", cf.runs, "label=policy@checkpoint evaluated on --data (repeatable)");
  compare->add_option("--data", cf.data, "Dataset directory for --run entries");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen(common);
    if (*train) return cmd_train(common, tf);
    if (*eval) return cmd_eval(common, ef);
    if (*compare) return cmd_compare(common, cf);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUnexpected;
}
