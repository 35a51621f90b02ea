#include "dynmask/eval.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dynmask/error.hpp"
#include "dynmask/png_io.hpp"

namespace dynmask {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::vector<double> iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

ApResult ap_from_ious(const std::vector<double>& ious) {
  ApResult r;
  r.thresholds = iou_thresholds();
  for (double t : r.thresholds) {
    std::size_t hits = 0;
    for (double v : ious) hits += v >= t;
    r.accuracy.push_back(ious.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ious.size()));
  }
  double s = 0;
  for (double a : r.accuracy) s += a;
  r.ap = s / static_cast<double>(r.accuracy.size());
  return r;
}

ApResult mask_ap(const std::vector<MaskGrid>& preds, const std::vector<MaskGrid>& gts) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("mask_ap: " + std::to_string(preds.size()) + " predictions for " +
                                std::to_string(gts.size()) + " ground truths");
  }
  std::vector<double> ious;
  ious.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) ious.push_back(iou(preds[i], gts[i]));
  return ap_from_ious(ious);
}

RungHistogram rung_histogram(const std::vector<int>& selections) {
  RungHistogram h{};
  for (int k : selections) {
    if (k < 1 || k > kNumRungs) throw std::out_of_range("rung index " + std::to_string(k) + " not in 1..4");
    h[static_cast<std::size_t>(k - 1)] += 1.0;
  }
  if (!selections.empty()) {
    for (auto& v : h) v /= static_cast<double>(selections.size());
  }
  return h;
}

CostSummary cost_from_histogram(const RungHistogram& fractions, const CostModel& cost) {
  CostSummary s;
  for (int k = 1; k <= kNumRungs; ++k) s.expected_cost += fractions[static_cast<std::size_t>(k - 1)] * cost.cost(k);
  s.delta_pct = (s.expected_cost / cost.largest() - 1.0) * 100.0;
  return s;
}

CostSummary cost_report(const std::vector<int>& selections, const CostModel& cost) {
  CostSummary s;
  for (int k : selections) s.expected_cost += cost.cost(fixed_select(k));
  if (!selections.empty()) s.expected_cost /= static_cast<double>(selections.size());
  s.delta_pct = (s.expected_cost / cost.largest() - 1.0) * 100.0;
  return s;
}

DistributionReport distribution_report(const std::vector<int>& selections, const std::vector<ShapeFamily>& classes) {
  if (selections.size() != classes.size()) throw std::invalid_argument("distribution_report: length mismatch");
  DistributionReport d;
  d.overall = rung_histogram(selections);
  std::map<std::string, std::vector<int>> by_class, by_difficulty;
  for (std::size_t i = 0; i < selections.size(); ++i) {
    by_class[std::string(family_name(classes[i]))].push_back(selections[i]);
    by_difficulty[std::string(difficulty_name(difficulty_of(classes[i])))].push_back(selections[i]);
  }
  for (const auto& [name, sel] : by_class) d.per_class[name] = rung_histogram(sel);
  for (const auto& [name, sel] : by_difficulty) d.per_difficulty[name] = rung_histogram(sel);
  return d;
}

double mean_rung(const RungHistogram& h) {
  double m = 0;
  for (int k = 1; k <= kNumRungs; ++k) m += k * h[static_cast<std::size_t>(k - 1)];
  return m;
}

// ---- report I/O -------------------------------------------------------------

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json histogram_json(const RungHistogram& h) { return json(std::vector<double>(h.begin(), h.end())); }

RungHistogram histogram_from(const json& j) {
  RungHistogram h{};
  if (!j.is_array() || j.size() != kNumRungs) throw DataError("report: rung histogram needs 4 entries");
  for (int k = 0; k < kNumRungs; ++k) h[static_cast<std::size_t>(k)] = j[static_cast<std::size_t>(k)].get<double>();
  return h;
}

}  // namespace

std::string EvalReport::to_json() const {
  json j;
  j["policy"] = policy;
  j["split"] = split;
  j["config_hash"] = hex64(config_hash);
  j["instances"] = instances;
  j["oracle_ap"] = ap.ap;
  json thr = json::array();
  for (std::size_t i = 0; i < ap.thresholds.size(); ++i) {
    thr.push_back({{"iou", ap.thresholds[i]}, {"accuracy", ap.accuracy[i]}});
  }
  j["per_threshold"] = thr;
  j["mean_iou"] = mean_iou;
  j["mean_iou_by_difficulty"] = mean_iou_by_difficulty;
  j["rung_histogram"] = histogram_json(distribution.overall);
  json cls = json::object();
  for (const auto& [name, h] : distribution.per_class) cls[name] = histogram_json(h);
  j["class_histograms"] = cls;
  json dif = json::object();
  for (const auto& [name, h] : distribution.per_difficulty) dif[name] = histogram_json(h);
  j["difficulty_histograms"] = dif;
  j["expected_cost"] = cost.expected_cost;
  j["cost_delta_pct"] = cost.delta_pct;
  json inst = json::array();
  for (const auto& r : per_instance) {
    inst.push_back({{"id", r.id}, {"family", family_name(r.family)}, {"rung", r.rung}, {"iou", r.iou}});
  }
  j["per_instance"] = inst;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    EvalReport r;
    r.policy = j.at("policy").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    r.instances = j.at("instances").get<int>();
    r.ap.ap = j.at("oracle_ap").get<double>();
    for (const auto& t : j.at("per_threshold")) {
      r.ap.thresholds.push_back(t.at("iou").get<double>());
      r.ap.accuracy.push_back(t.at("accuracy").get<double>());
    }
    r.mean_iou = j.at("mean_iou").get<double>();
    for (const auto& [k, v] : j.at("mean_iou_by_difficulty").items()) r.mean_iou_by_difficulty[k] = v.get<double>();
    r.distribution.overall = histogram_from(j.at("rung_histogram"));
    for (const auto& [k, v] : j.at("class_histograms").items()) r.distribution.per_class[k] = histogram_from(v);
    for (const auto& [k, v] : j.at("difficulty_histograms").items()) r.distribution.per_difficulty[k] = histogram_from(v);
    r.cost.expected_cost = j.at("expected_cost").get<double>();
    r.cost.delta_pct = j.at("cost_delta_pct").get<double>();
    for (const auto& e : j.at("per_instance")) {
      r.per_instance.push_back(InstanceResult{e.at("id").get<int>(), parse_family(e.at("family").get<std::string>()),
                                              e.at("rung").get<int>(), e.at("iou").get<double>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  } catch (const std::logic_error& e) {
    throw DataError(std::string("malformed evaluation report: ") + e.what());
  }
}

std::string EvalReport::csv_header() {
  return "policy,split,instances,oracle_ap,mean_iou,mean_iou_easy,mean_iou_hard,expected_cost,delta_pct,"
         "frac_r14,frac_r28,frac_r56,frac_r112,config_hash";
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

double lookup(const std::map<std::string, double>& m, const std::string& key) {
  auto it = m.find(key);
  return it == m.end() ? std::nan("") : it->second;
}

}  // namespace

std::string EvalReport::csv_row() const {
  std::ostringstream os;
  os << policy << ',' << split << ',' << instances << ',' << num(ap.ap) << ',' << num(mean_iou) << ','
     << num(lookup(mean_iou_by_difficulty, "easy")) << ',' << num(lookup(mean_iou_by_difficulty, "hard")) << ','
     << num(cost.expected_cost) << ',' << num(cost.delta_pct);
  for (double f : distribution.overall) os << ',' << num(f);
  os << ',' << hex64(config_hash);
  return os.str();
}

void write_report(const EvalReport& report, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "report.json", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "report.json").string());
    out << report.to_json();
  }
  std::ofstream out(dir / "report.csv", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "report.csv").string());
  out << EvalReport::csv_header() << '\n' << report.csv_row() << '\n';
}

EvalReport read_report(const fs::path& json_path) {
  std::ifstream in(json_path, std::ios::binary);
  if (!in) throw DataError("cannot open report " + json_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return EvalReport::from_json(ss.str());
}

std::string compare_csv(const std::vector<EvalReport>& reports, const std::vector<std::string>& labels) {
  std::ostringstream os;
  os << "run,policy,oracle_ap,mean_iou,expected_cost,delta_pct\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    os << (i < labels.size() ? labels[i] : r.policy) << ',' << r.policy << ',' << num(r.ap.ap) << ','
       << num(r.mean_iou) << ',' << num(r.cost.expected_cost) << ',' << num(r.cost.delta_pct) << '\n';
  }
  return os.str();
}

// ---- evaluation ---------------------------------------------------------------

MaskGrid eval_resolution_mask(const Tensor<float>& soft_mask) {
  const int r = soft_mask.dim(-1);
  if (soft_mask.size() != static_cast<std::size_t>(r) * r) {
    throw ShapeError("eval: prediction must be square, got " + shape_str(soft_mask.shape()));
  }
  const auto v = soft_mask.value().values();
  const auto soft = MaskGrid::from_values(r, std::vector<float>(v.begin(), v.end()), false);
  return binarize(resize_bilinear(soft, kRungSizes.back()));
}

namespace {

void write_overlay(const fs::path& path, const MaskGrid& gt, const MaskGrid& pred) {
  const int r = gt.resolution;
  const auto gt_edge = laplacian_edge(gt, 0.25F);
  const auto pred_edge = laplacian_edge(pred, 0.25F);
  Image8 img{r, r, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(r) * r * 3, 0)};
  for (std::size_t p = 0; p < gt.values.size(); ++p) {
    std::uint8_t* px = &img.pixels[3 * p];
    if (gt.values[p] > 0.5F) px[0] = px[1] = px[2] = 60;
    if (pred.values[p] > 0.5F) px[2] = 140;
    if (gt_edge.values[p] > 0.5F) px[1] = 255;
    if (pred_edge.values[p] > 0.5F) px[0] = 255;
  }
  write_png(path, img);
}

}  // namespace

EvalReport evaluate(const MaskModel<float>& model, const LoadedDataset& data, const EvalOptions& opts) {
  const auto indices = data.split(opts.split);
  if (indices.empty()) throw DataError("eval: split '" + opts.split + "' has no instances");
  if (!opts.overlay_dir.empty()) {
    std::error_code ec;
    fs::create_directories(opts.overlay_dir, ec);
    if (ec) throw DataError("cannot create " + opts.overlay_dir.string() + ": " + ec.message());
  }
  NoGradGuard no_grad;
  EvalReport report;
  report.policy = opts.policy.name();
  report.split = opts.split;
  report.config_hash = opts.config_hash;
  report.instances = static_cast<int>(indices.size());

  std::vector<int> selections;
  std::vector<ShapeFamily> families;
  std::vector<double> ious;
  std::map<std::string, std::pair<double, int>> by_difficulty;
  int cached_scene = -1;
  PyramidFeatures<float> pyr;
  std::mt19937_64 unused_rng(0);
  for (int idx : indices) {
    const auto& inst = data.instances[static_cast<std::size_t>(idx)];
    if (inst.scene != cached_scene) {
      const auto& s = data.scenes[static_cast<std::size_t>(inst.scene)];
      pyr = model.backbone().forward(image_tensor<float>(s.rgb, s.side, s.side));
      cached_scene = inst.scene;
    }
    const auto& box = inst.record.box;
    const auto roi = model.rfpn().roi_input(pyr, box);
    int k = kNumRungs;
    switch (opts.policy.kind) {
      case PolicyKind::kFixed: k = fixed_select(opts.policy.rung); break;
      case PolicyKind::kSizeBased:
        k = size_based_select(box.w, box.h, opts.policy.w0, opts.policy.h0, opts.policy.k0);
        break;
      case PolicyKind::kDynamic:
        k = dynamic_select(roi, model.msm(), SwitchMode::kInferArgmax, 1.0, unused_rng).k;
        break;
    }
    const auto ladder = model.rfpn().forward(pyr, box, roi, k);
    const auto pred = eval_resolution_mask(ladder.mask_probs[k - 1]);
    const auto& gt = inst.targets.masks[kNumRungs - 1];
    const double v = iou(pred, gt);
    if (!opts.overlay_dir.empty()) {
      char name[48];
      std::snprintf(name, sizeof name, "overlay_%06d.png", inst.record.id);
      write_overlay(opts.overlay_dir / name, gt, pred);
    }
    selections.push_back(k);
    families.push_back(inst.record.family);
    ious.push_back(v);
    auto& acc = by_difficulty[std::string(difficulty_name(inst.record.difficulty))];
    acc.first += v;
    acc.second += 1;
    report.per_instance.push_back(InstanceResult{inst.record.id, inst.record.family, k, v});
  }
  report.ap = ap_from_ious(ious);
  double s = 0;
  for (double v : ious) s += v;
  report.mean_iou = s / static_cast<double>(ious.size());
  for (const auto& [name, acc] : by_difficulty) report.mean_iou_by_difficulty[name] = acc.first / acc.second;
  report.distribution = distribution_report(selections, families);
  report.cost = cost_report(selections, opts.cost);
  return report;
}

RungLosses rung_losses(const MaskModel<float>& model, const LoadedDataset& data, const std::vector<int>& indices) {
  NoGradGuard no_grad;
  RungLosses out;
  int cached_scene = -1;
  PyramidFeatures<float> pyr;
  for (int idx : indices) {
    const auto& inst = data.instances.at(static_cast<std::size_t>(idx));
    if (inst.scene != cached_scene) {
      const auto& s = data.scenes[static_cast<std::size_t>(inst.scene)];
      pyr = model.backbone().forward(image_tensor<float>(s.rgb, s.side, s.side));
      cached_scene = inst.scene;
    }
    const auto ladder = model.rfpn().forward(pyr, inst.record.box);
    std::array<double, kNumRungs> m{}, e{};
    for (int k = 1; k <= kNumRungs; ++k) {
      NdArray<float> onehot(Shape{kNumRungs});
      onehot[static_cast<std::size_t>(k - 1)] = 1.0F;
      const std::vector<Tensor<float>> gate{ops::constant(std::move(onehot))};
      const std::vector<RegionLadder<float>> ladders{ladder};
      const std::vector<const InstanceTargets*> targets{&inst.targets};
      m[static_cast<std::size_t>(k - 1)] = mask_loss(gate, ladders, targets).item();
      e[static_cast<std::size_t>(k - 1)] = edge_loss(gate, ladders, targets).item();
    }
    out.mask.push_back(m);
    out.edge.push_back(e);
  }
  return out;
}

}  // namespace dynmask
