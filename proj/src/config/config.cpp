#include "dynmask/config.hpp"

#include <fstream>
#include <sstream>

#include "dynmask/error.hpp"

namespace dynmask {

using json = nlohmann::ordered_json;

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t RunConfig::hash() const { return fnv1a64(json.dump()); }

std::string RunConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

json default_config_json() {
  const DatasetSpec ds;
  const ModelConfig mc;
  const CostModel cm;
  const TrainConfig tc;
  const EvalSection ev;
  json j;
  j["dataset"] = {
      {"counts", {{"disk", 150}, {"rectangle", 150}, {"star", 150}, {"blob", 150}}},
      {"seed", ds.seed},
      {"image_side", ds.image_side},
      {"min_size", ds.sizes.min_size},
      {"max_size", ds.sizes.max_size},
      {"max_instances_per_scene", ds.max_instances_per_scene},
      {"eval_fraction", ds.eval_fraction},
      {"edge_threshold", static_cast<double>(kDefaultEdgeThreshold)},
  };
  j["model"] = {
      {"channels", mc.channels},
      {"msm_conv_channels", mc.msm_conv_channels},
      {"msm_hidden", mc.msm_hidden},
      {"offset_init_gain", mc.offset_init_gain},
  };
  j["cost"] = {
      {"costs", cm.costs},
      {"target", cm.target},
      {"lambda_edge", cm.lambda_edge},
      {"lambda_reg", cm.lambda_reg},
      {"entropy_weight", cm.entropy_weight},
      {"tau_start", cm.tau_start},
      {"tau_end", cm.tau_end},
  };
  j["trainer"] = {
      {"seed", tc.seed},
      {"pretrain_steps", tc.pretrain_steps},
      {"joint_steps", tc.joint_steps},
      {"batch_size", tc.batch_size},
      {"learning_rate", tc.learning_rate},
      {"momentum", tc.momentum},
      {"milestones", tc.milestones},
      {"lr_decay", tc.lr_decay},
      {"max_grad_norm", tc.max_grad_norm},
      {"policy", "dynamic"},
      {"rung", kNumRungs},
  };
  j["eval"] = {
      {"policy", ev.policy},
      {"rung", ev.rung},
      {"split", ev.split},
      {"overlays", ev.overlays},
  };
  return j;
}

namespace {

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // Integers may not silently become fractions; floats accept integers.
    return !(a.is_number_integer() && b.is_number_float());
  }
  return a.type() == b.type();
}

std::string join(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

}  // namespace

void merge_config(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config: " + (where.empty() ? "document" : where) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = join(where, key);
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      merge_config(slot, value, path);
    } else if (!same_kind(slot, value)) {
      throw ConfigError("config: '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                        std::string(value.type_name()));
    } else if (slot.is_number_float()) {
      slot = value.get<double>();
    } else {
      slot = value;
    }
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    json wrapped = json::object();
    wrapped[*it] = std::move(patch);
    patch = std::move(wrapped);
  }
  merge_config(doc, patch);
}

RunConfig config_from_json(const json& doc) {
  RunConfig rc;
  rc.json = doc;
  try {
    const auto& d = doc.at("dataset");
    for (auto f : kAllFamilies) {
      rc.dataset.counts[static_cast<std::size_t>(f)] = d.at("counts").at(std::string(family_name(f))).get<int>();
    }
    rc.dataset.seed = d.at("seed").get<std::uint64_t>();
    rc.dataset.image_side = d.at("image_side").get<int>();
    rc.dataset.sizes.min_size = d.at("min_size").get<double>();
    rc.dataset.sizes.max_size = d.at("max_size").get<double>();
    rc.dataset.max_instances_per_scene = d.at("max_instances_per_scene").get<int>();
    rc.dataset.eval_fraction = d.at("eval_fraction").get<double>();
    rc.edge_threshold = d.at("edge_threshold").get<float>();

    const auto& m = doc.at("model");
    rc.model.channels = m.at("channels").get<int>();
    rc.model.image_side = rc.dataset.image_side;
    rc.model.msm_conv_channels = m.at("msm_conv_channels").get<int>();
    rc.model.msm_hidden = m.at("msm_hidden").get<int>();
    rc.model.offset_init_gain = m.at("offset_init_gain").get<double>();

    const auto& c = doc.at("cost");
    const auto costs = c.at("costs").get<std::vector<double>>();
    if (costs.size() != kNumRungs) throw ConfigError("config: cost.costs needs 4 entries");
    std::copy(costs.begin(), costs.end(), rc.cost.costs.begin());
    rc.cost.target = c.at("target").get<double>();
    rc.cost.lambda_edge = c.at("lambda_edge").get<double>();
    rc.cost.lambda_reg = c.at("lambda_reg").get<double>();
    rc.cost.entropy_weight = c.at("entropy_weight").get<double>();
    rc.cost.tau_start = c.at("tau_start").get<double>();
    rc.cost.tau_end = c.at("tau_end").get<double>();

    const auto& t = doc.at("trainer");
    rc.trainer.seed = t.at("seed").get<std::uint64_t>();
    rc.trainer.pretrain_steps = t.at("pretrain_steps").get<int>();
    rc.trainer.joint_steps = t.at("joint_steps").get<int>();
    rc.trainer.batch_size = t.at("batch_size").get<int>();
    rc.trainer.learning_rate = t.at("learning_rate").get<double>();
    rc.trainer.momentum = t.at("momentum").get<double>();
    rc.trainer.milestones = t.at("milestones").get<std::vector<double>>();
    rc.trainer.lr_decay = t.at("lr_decay").get<double>();
    rc.trainer.max_grad_norm = t.at("max_grad_norm").get<double>();
    rc.trainer.policy = Policy::parse(t.at("policy").get<std::string>(), t.at("rung").get<int>(), rc.dataset.image_side);
    rc.trainer.cost = rc.cost;

    const auto& e = doc.at("eval");
    rc.eval.policy = e.at("policy").get<std::string>();
    rc.eval.rung = e.at("rung").get<int>();
    rc.eval.split = e.at("split").get<std::string>();
    rc.eval.overlays = e.at("overlays").get<bool>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  if (rc.model.channels < 4 || rc.model.channels % 4 != 0) {
    throw ConfigError("config: model.channels must be a positive multiple of 4");
  }
  if (rc.model.msm_conv_channels < 1 || rc.model.msm_hidden < 1) {
    throw ConfigError("config: switch layer widths must be positive");
  }
  if (!(rc.edge_threshold > 0.0F && rc.edge_threshold <= 1.0F)) {
    throw ConfigError("config: dataset.edge_threshold must lie in (0, 1]");
  }
  if (rc.eval.split != "train" && rc.eval.split != "eval" && rc.eval.split != "all") {
    throw ConfigError("config: eval.split must be train, eval or all");
  }
  Policy::parse(rc.eval.policy, rc.eval.rung, rc.dataset.image_side);
  rc.cost.validate();
  rc.trainer.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json doc = default_config_json();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    json patch;
    try {
      patch = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(file.string() + ": " + e.what());
    }
    merge_config(doc, patch);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

}  // namespace dynmask
