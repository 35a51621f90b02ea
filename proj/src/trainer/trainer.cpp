#include "dynmask/trainer.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "dynmask/error.hpp"

namespace dynmask {

using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (pretrain_steps < 0 || joint_steps < 0) throw ConfigError("trainer: step counts must be >= 0");
  if (batch_size < 1) throw ConfigError("trainer: batch_size must be positive");
  if (!(learning_rate >= 0)) throw ConfigError("trainer: learning rate must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("trainer: momentum must lie in [0, 1)");
  for (double m : milestones) {
    if (!(m > 0 && m <= 1)) throw ConfigError("trainer: milestones are fractions of joint_steps in (0, 1]");
  }
  if (!(lr_decay > 0)) throw ConfigError("trainer: lr_decay must be positive");
  if (!(max_grad_norm >= 0)) throw ConfigError("trainer: max_grad_norm must be >= 0");
  cost.validate();
}

double TrainConfig::joint_lr(int step) const {
  double lr = learning_rate;
  for (double m : milestones) {
    if (step >= static_cast<int>(std::lround(m * joint_steps))) lr *= lr_decay;
  }
  return lr;
}

double SgdMomentum::step(ParamStore<float>& params, double lr,
                         const std::function<bool(const std::string&)>& include) {
  std::vector<Tensor<float>> active;
  std::vector<std::string> names;
  double sq = 0;
  for (const auto& [name, param] : params.all()) {
    if (!param.has_grad() || (include && !include(name))) continue;
    for (float g : param.grad().values()) sq += static_cast<double>(g) * g;
    active.push_back(param);
    names.push_back(name);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) return norm;
  const double scale = max_grad_norm_ > 0 && norm > max_grad_norm_ ? max_grad_norm_ / norm : 1.0;
  const auto mu = static_cast<float>(momentum_);
  const auto rate = static_cast<float>(lr);
  const auto gs = static_cast<float>(scale);
  for (std::size_t n = 0; n < active.size(); ++n) {
    const auto& name = names[n];
    Tensor<float> p = active[n];
    auto& v = buffers_[name];
    if (v.size() != p.size()) v = NdArray<float>(p.shape());
    const auto g = p.grad().values();
    auto w = p.mutable_value().values();
    auto vb = v.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      vb[i] = mu * vb[i] + gs * g[i];
      w[i] -= rate * vb[i];
    }
  }
  return norm;
}

BatchSampler::BatchSampler(std::vector<int> indices, int batch_size, std::uint64_t seed)
    : indices_(std::move(indices)), batch_size_(batch_size), seed_(seed) {
  if (indices_.empty()) throw DataError("sampler: the training split is empty");
  if (batch_size_ < 1) throw ConfigError("sampler: batch size must be positive");
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::mt19937_64 rng(mix_seed(seed_, {epoch_}));
  for (std::size_t i = indices_.size(); i > 1; --i) {
    std::swap(indices_[i - 1], indices_[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i) - 1))]);
  }
  pos_ = 0;
}

std::vector<int> BatchSampler::next() {
  std::vector<int> batch;
  batch.reserve(static_cast<std::size_t>(batch_size_));
  while (static_cast<int>(batch.size()) < batch_size_) {
    if (pos_ == indices_.size()) {
      ++epoch_;
      reshuffle();
    }
    batch.push_back(indices_[pos_++]);
  }
  return batch;
}

std::uint64_t gumbel_seed(std::uint64_t seed, int instance_id, int step) {
  return mix_seed(seed, {0x6B3DULL, static_cast<std::uint64_t>(instance_id), static_cast<std::uint64_t>(step)});
}

namespace {

constexpr std::uint64_t kPretrainStream = 1;
constexpr std::uint64_t kJointStream = 2;

bool is_switch_param(const std::string& name) { return name.rfind("msm.", 0) == 0; }

Tensor<float> one_hot(int k) {
  NdArray<float> v(Shape{kNumRungs});
  v[static_cast<std::size_t>(k - 1)] = 1.0F;
  return ops::constant(std::move(v));
}

Tensor<float> all_ones() { return ops::constant(NdArray<float>(Shape{kNumRungs}, 1.0F)); }

// Backbone passes shared by the instances of one batch.
class PyramidCache {
 public:
  PyramidCache(const MaskModel<float>& model, const LoadedDataset& data) : model_(model), data_(data) {}
  const PyramidFeatures<float>& get(int scene) {
    auto it = cache_.find(scene);
    if (it == cache_.end()) {
      const auto& s = data_.scenes[static_cast<std::size_t>(scene)];
      it = cache_.emplace(scene, model_.backbone().forward(image_tensor<float>(s.rgb, s.side, s.side))).first;
    }
    return it->second;
  }

 private:
  const MaskModel<float>& model_;
  const LoadedDataset& data_;
  std::map<int, PyramidFeatures<float>> cache_;
};

void require_finite(double v, const char* what, const char* phase, int step) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string("non-finite ") + what + " at " + phase + " step " + std::to_string(step));
  }
}

}  // namespace

Trainer::Trainer(MaskModel<float>& model, const LoadedDataset& data, const TrainConfig& cfg)
    : model_(model), data_(data), cfg_(cfg), opt_(cfg.momentum, cfg.max_grad_norm) {
  cfg_.validate();
}

double Trainer::pretrain_loss(const std::vector<int>& batch) const {
  NoGradGuard no_grad;
  PyramidCache pyramids(model_, data_);
  std::vector<Tensor<float>> gates;
  std::vector<RegionLadder<float>> ladders;
  std::vector<const InstanceTargets*> targets;
  for (int idx : batch) {
    const auto& inst = data_.instances.at(static_cast<std::size_t>(idx));
    gates.push_back(all_ones());
    ladders.push_back(model_.rfpn().forward(pyramids.get(inst.scene), inst.record.box));
    targets.push_back(&inst.targets);
  }
  return mask_loss(gates, ladders, targets).item();
}

LossReport Trainer::pretrain_step(const std::vector<int>& batch, double lr) {
  model_.params().zero_grad();
  PyramidCache pyramids(model_, data_);
  std::vector<Tensor<float>> gates;
  std::vector<RegionLadder<float>> ladders;
  std::vector<const InstanceTargets*> targets;
  for (int idx : batch) {
    const auto& inst = data_.instances.at(static_cast<std::size_t>(idx));
    gates.push_back(all_ones());
    ladders.push_back(model_.rfpn().forward(pyramids.get(inst.scene), inst.record.box));
    targets.push_back(&inst.targets);
  }
  const auto loss = mask_loss(gates, ladders, targets);
  LossReport report = combine_losses(loss.item(), 0, 0, 0, cfg_.cost, static_cast<int>(batch.size()));
  report.total = report.mask;
  require_finite(report.total, "loss", "pretrain", static_cast<int>(steps_));
  loss.backward();
  require_finite(opt_.step(model_.params(), lr, [](const std::string& n) { return !is_switch_param(n); }),
                 "gradient norm", "pretrain", static_cast<int>(steps_));
  ++steps_;
  return report;
}

JointStepResult Trainer::joint_step(const std::vector<int>& batch, int step, double lr) {
  model_.params().zero_grad();
  const double tau = cfg_.cost.tau_at(step, cfg_.joint_steps);
  const Policy& policy = cfg_.policy;
  const bool dynamic = policy.kind == PolicyKind::kDynamic;

  PyramidCache pyramids(model_, data_);
  std::vector<Tensor<float>> gates, probs;
  std::vector<RegionLadder<float>> ladders;
  std::vector<const InstanceTargets*> targets;
  JointStepResult result;
  for (int idx : batch) {
    const auto& inst = data_.instances.at(static_cast<std::size_t>(idx));
    const auto& box = inst.record.box;
    const auto& pyr = pyramids.get(inst.scene);
    const auto roi = model_.rfpn().roi_input(pyr, box);
    int k = kNumRungs;
    if (dynamic) {
      std::mt19937_64 rng(gumbel_seed(cfg_.seed, inst.record.id, step));
      auto decision = dynamic_select(roi, model_.msm(), SwitchMode::kTrainSampled, tau, rng);
      k = decision.k;
      gates.push_back(decision.y);
      probs.push_back(decision.probs);
      // Every rung is evaluated: the unselected losses drive the switch's gradient.
      ladders.push_back(model_.rfpn().forward(pyr, box, roi, kNumRungs));
    } else {
      k = policy.kind == PolicyKind::kFixed ? policy.rung
                                            : size_based_select(box.w, box.h, policy.w0, policy.h0, policy.k0);
      gates.push_back(one_hot(k));
      ladders.push_back(model_.rfpn().forward(pyr, box, roi, k));
    }
    ++result.rung_counts[static_cast<std::size_t>(k - 1)];
    targets.push_back(&inst.targets);
  }

  LossTerms<float> terms;
  terms.mask = mask_loss(gates, ladders, targets);
  terms.edge = edge_loss(gates, ladders, targets);
  if (dynamic) {
    auto budget = budget_loss(probs, cfg_.cost);
    terms.budget = budget.loss;
    terms.expected_cost = budget.expected_cost;
    if (cfg_.cost.entropy_weight > 0) terms.entropy = entropy_loss(probs);
  }
  const auto total = total_loss(terms, cfg_.cost, static_cast<int>(batch.size()), &result.report);
  if (!dynamic) {
    double c = 0;
    for (int k = 1; k <= kNumRungs; ++k) c += result.rung_counts[k - 1] * cfg_.cost.cost(k);
    result.report.expected_cost = c / static_cast<double>(batch.size());
  }
  require_finite(result.report.total, "loss", "joint", step);
  total.backward();
  const double grad_norm =
      dynamic ? opt_.step(model_.params(), lr)
              : opt_.step(model_.params(), lr, [](const std::string& n) { return !is_switch_param(n); });
  require_finite(grad_norm, "gradient norm", "joint", step);
  ++steps_;
  return result;
}

void Trainer::pretrain(const LogSink& log) {
  if (cfg_.pretrain_steps == 0) return;
  BatchSampler sampler(data_.split("train"), cfg_.batch_size, mix_seed(cfg_.seed, {kPretrainStream}));
  for (int step = 0; step < cfg_.pretrain_steps; ++step) {
    const auto report = pretrain_step(sampler.next(), cfg_.learning_rate);
    if (log) {
      json j;
      j["phase"] = "pretrain";
      j["step"] = step;
      j["lr"] = cfg_.learning_rate;
      j["L_mask"] = report.mask;
      log(j.dump());
    }
  }
}

void Trainer::train_joint(const LogSink& log) {
  if (cfg_.joint_steps == 0) return;
  BatchSampler sampler(data_.split("train"), cfg_.batch_size, mix_seed(cfg_.seed, {kJointStream}));
  for (int step = 0; step < cfg_.joint_steps; ++step) {
    const double lr = cfg_.joint_lr(step);
    const auto r = joint_step(sampler.next(), step, lr);
    if (log) {
      json j;
      j["phase"] = "joint";
      j["step"] = step;
      j["lr"] = lr;
      j["tau"] = cfg_.cost.tau_at(step, cfg_.joint_steps);
      j["L_mask"] = r.report.mask;
      j["L_edge"] = r.report.edge;
      j["L_budget"] = r.report.budget;
      j["L_entropy"] = r.report.entropy;
      j["L_reg"] = r.report.reg;
      j["L_total"] = r.report.total;
      j["expected_cost"] = r.report.expected_cost;
      j["batch"] = r.report.batch;
      j["rung_counts"] = r.rung_counts;
      log(j.dump());
    }
  }
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'M', 'C', 'K'};
constexpr std::uint8_t kFloat32Tag = 1;
const std::string kMomentumPrefix = "momentum/";
const std::string kModelMeta = "meta/model";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& in, std::string origin) : in_(in), origin_(std::move(origin)) {}
  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw DataError(origin_ + ": truncated while reading " + what + " at byte " + std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_), in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

const NdArray<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

bool Checkpoint::has_switch() const {
  for (const auto& [n, t] : tensors) {
    if (is_switch_param(n)) return true;
  }
  return false;
}

ModelConfig Checkpoint::model_config() const {
  const auto* meta = find(kModelMeta);
  if (!meta || meta->size() != 5) throw DataError("checkpoint: missing model shape record");
  ModelConfig cfg;
  cfg.channels = static_cast<int>((*meta)[0]);
  cfg.image_side = static_cast<int>((*meta)[1]);
  cfg.msm_conv_channels = static_cast<int>((*meta)[2]);
  cfg.msm_hidden = static_cast<int>((*meta)[3]);
  cfg.offset_init_gain = (*meta)[4];
  return cfg;
}

Checkpoint make_checkpoint(const MaskModel<float>& model, const SgdMomentum* opt, std::uint64_t step,
                           std::uint64_t config_hash, bool include_switch) {
  Checkpoint ck;
  ck.config_hash = config_hash;
  ck.step = step;
  const auto& cfg = model.config();
  ck.tensors.emplace_back(kModelMeta, NdArray<float>(Shape{5}, std::vector<float>{
                                                                   static_cast<float>(cfg.channels),
                                                                   static_cast<float>(cfg.image_side),
                                                                   static_cast<float>(cfg.msm_conv_channels),
                                                                   static_cast<float>(cfg.msm_hidden),
                                                                   static_cast<float>(cfg.offset_init_gain)}));
  for (const auto& [name, t] : model.params().all()) {
    if (!include_switch && is_switch_param(name)) continue;
    ck.tensors.emplace_back(name, t.value());
  }
  if (opt) {
    for (const auto& [name, v] : opt->buffers()) {
      if (!include_switch && is_switch_param(name)) continue;
      ck.tensors.emplace_back(kMomentumPrefix + name, v);
    }
  }
  return ck;
}

void restore_checkpoint(const Checkpoint& ckpt, MaskModel<float>& model, SgdMomentum* opt) {
  const bool with_switch = ckpt.has_switch();
  for (const auto& [name, param] : model.params().all()) {
    if (!with_switch && is_switch_param(name)) continue;
    const auto* t = ckpt.find(name);
    if (!t) throw DataError("checkpoint: missing parameter " + name);
    if (t->shape() != param.shape()) {
      throw DataError("checkpoint: parameter " + name + " has shape " + shape_str(t->shape()) +
                      ", model expects " + shape_str(param.shape()));
    }
    Tensor<float> p = param;
    p.mutable_value() = *t;
  }
  if (opt) {
    opt->buffers().clear();
    for (const auto& [name, t] : ckpt.tensors) {
      if (name.rfind(kMomentumPrefix, 0) == 0) opt->buffers()[name.substr(kMomentumPrefix.size())] = t;
    }
  }
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(ckpt.version);
  w.u64(ckpt.config_hash);
  w.u64(ckpt.step);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(kFloat32Tag);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.values()) w.u32(std::bit_cast<std::uint32_t>(v));
  }
  return std::move(w.out);
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.str(4, "magic") != std::string(kMagic, 4)) throw DataError(origin + ": not a checkpoint (bad magic)");
  Checkpoint ck;
  ck.version = r.u32("version");
  if (ck.version != kCheckpointVersion) {
    throw DataError(origin + ": unsupported checkpoint version " + std::to_string(ck.version));
  }
  ck.config_hash = r.u64("config hash");
  ck.step = r.u64("step counter");
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32("name length");
    std::string name = r.str(len, "tensor name");
    if (r.u8("dtype tag") != kFloat32Tag) throw DataError(origin + ": tensor " + name + " has unknown dtype");
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw DataError(origin + ": tensor " + name + " has implausible rank");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("shape");
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    r.need(numel * 4, "tensor data");
    NdArray<float> t(shape);
    for (auto& v : t.values()) v = std::bit_cast<float>(r.u32("tensor data"));
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw DataError(origin + ": trailing bytes after last tensor");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path.string());
}

std::string config_hash_warning(const Checkpoint& ckpt, std::uint64_t expected_hash) {
  if (ckpt.config_hash == expected_hash) return {};
  char buf[128];
  std::snprintf(buf, sizeof buf, "checkpoint config hash %016llx differs from current config %016llx",
                static_cast<unsigned long long>(ckpt.config_hash),
                static_cast<unsigned long long>(expected_hash));
  return buf;
}

}  // namespace dynmask
