#include <doctest.h>

#include <cmath>
#include <random>

#include "dynmask/error.hpp"
#include "dynmask/losses.hpp"
#include "dynmask/msm.hpp"
#include "dynmask/ops.hpp"
#include "dynmask/params.hpp"

using namespace dynmask;

namespace {

using TD = Tensor<double>;

TD vec4(std::array<double, 4> v) { return ops::constant(NdArray<double>(Shape{4}, std::vector<double>(v.begin(), v.end()))); }

// Random soft predictions and binary targets at every rung.
struct Fixture {
  RegionLadder<double> ladder;
  InstanceTargets targets;
};

Fixture make_fixture(std::mt19937_64& rng) {
  Fixture f;
  f.ladder.rungs = 4;
  for (int k = 1; k <= 4; ++k) {
    const int r = rung_size(k);
    NdArray<double> p(Shape{r, r});
    for (auto& v : p.values()) v = uniform(rng, 0.05, 0.95);
    f.ladder.mask_probs[k - 1] = ops::constant(p);
    f.ladder.soft_edges[k - 1] = soft_laplacian_edge(f.ladder.mask_probs[k - 1]);
    auto m = MaskGrid::zeros(r);
    for (auto& v : m.values) v = uniform01(rng) < 0.5 ? 1.0F : 0.0F;
    f.targets.masks[k - 1] = m;
    f.targets.edges[k - 1] = laplacian_edge(m);
  }
  return f;
}

// Direct BCE oracle in double, with the same epsilon clamp.
double bce(const NdArray<double>& p, const std::vector<float>& t) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double q = std::clamp(p[i], ops::kBceEpsilon, 1.0 - ops::kBceEpsilon);
    s += -(t[i] * std::log(q) + (1 - t[i]) * std::log(1 - q));
  }
  return s / static_cast<double>(t.size());
}

std::vector<TD> random_simplex_batch(std::mt19937_64& rng, int n) {
  std::vector<TD> batch;
  for (int i = 0; i < n; ++i) {
    std::array<double, 4> e{};
    double s = 0;
    for (auto& v : e) s += (v = -std::log(1.0 - uniform01(rng)));
    for (auto& v : e) v /= s;
    batch.push_back(vec4(e));
  }
  return batch;
}

}  // namespace

TEST_CASE("mask_loss gating") {
  std::mt19937_64 rng(1);
  auto f = make_fixture(rng);

  SUBCASE("perfect prediction at the selected rung costs nothing") {
    const auto& gt = f.targets.masks[1];
    NdArray<double> perfect(Shape{28, 28});
    for (std::size_t i = 0; i < gt.values.size(); ++i) perfect[i] = gt.values[i];
    f.ladder.mask_probs[1] = ops::constant(perfect);
    const auto l = mask_loss<double>({vec4({0, 1, 0, 0})}, {f.ladder}, {&f.targets});
    CHECK(l.item() < 1e-6);
  }
  SUBCASE("one-hot gate ignores the other rungs") {
    const auto before = mask_loss<double>({vec4({0, 0, 1, 0})}, {f.ladder}, {&f.targets}).item();
    auto g = f;
    g.ladder.mask_probs[0] = ops::constant(NdArray<double>(Shape{14, 14}, 0.01));
    g.ladder.mask_probs[3] = ops::constant(NdArray<double>(Shape{112, 112}, 0.99));
    CHECK(mask_loss<double>({vec4({0, 0, 1, 0})}, {g.ladder}, {&g.targets}).item() == before);
    // A truncated ladder is fine as long as the missing rungs are gated off.
    g.ladder.mask_probs[3] = TD();
    CHECK(mask_loss<double>({vec4({0, 0, 1, 0})}, {g.ladder}, {&g.targets}).item() == before);
    CHECK_THROWS(mask_loss<double>({vec4({0, 0, 0, 1})}, {g.ladder}, {&g.targets}));
  }
  SUBCASE("uniform soft gate averages the four rung BCEs") {
    double oracle = 0;
    for (int k = 0; k < 4; ++k) oracle += 0.25 * bce(f.ladder.mask_probs[k].value(), f.targets.masks[k].values);
    const auto l = mask_loss<double>({vec4({0.25, 0.25, 0.25, 0.25})}, {f.ladder}, {&f.targets});
    CHECK(l.item() == doctest::Approx(oracle).epsilon(1e-12));
  }
  SUBCASE("averaged over the batch") {
    auto g = make_fixture(rng);
    const auto y1 = vec4({1, 0, 0, 0});
    const auto y2 = vec4({0, 0, 0, 1});
    const double a = mask_loss<double>({y1}, {f.ladder}, {&f.targets}).item();
    const double b = mask_loss<double>({y2}, {g.ladder}, {&g.targets}).item();
    CHECK(mask_loss<double>({y1, y2}, {f.ladder, g.ladder}, {&f.targets, &g.targets}).item() ==
          doctest::Approx((a + b) / 2).epsilon(1e-12));
  }
}

TEST_CASE("edge_loss") {
  std::mt19937_64 rng(2);
  auto f = make_fixture(rng);
  SUBCASE("matches BCE of the soft edge against the GT edge, gated") {
    const auto l = edge_loss<double>({vec4({0, 0, 0, 1})}, {f.ladder}, {&f.targets});
    CHECK(l.item() == doctest::Approx(bce(f.ladder.soft_edges[3].value(), f.targets.edges[3].values)).epsilon(1e-12));
  }
  SUBCASE("constant 0.5 prediction has no interior edge response") {
    f.ladder.mask_probs[2] = ops::constant(NdArray<double>(Shape{56, 56}, 0.5));
    f.ladder.soft_edges[2] = soft_laplacian_edge(f.ladder.mask_probs[2]);
    const auto& e = f.ladder.soft_edges[2].value();
    for (int y = 1; y < 55; ++y)
      for (int x = 1; x < 55; ++x) CHECK(e[y * 56 + x] == 0.0);
    const auto l = edge_loss<double>({vec4({0, 0, 1, 0})}, {f.ladder}, {&f.targets});
    CHECK(l.item() == doctest::Approx(bce(e, f.targets.edges[2].values)).epsilon(1e-12));
  }
  SUBCASE("a sharp fine mask beats an upsampled coarse one on a star") {
    std::mt19937_64 srng(31);
    const auto inst = generate_instance(ShapeFamily::kStar, srng);
    const auto fine = crop_gt(inst, 112);
    const auto gt_edge = laplacian_edge(fine);
    NdArray<double> perfect(Shape{112, 112});
    for (std::size_t i = 0; i < fine.values.size(); ++i) perfect[i] = fine.values[i];
    const auto coarse = resize_bilinear(crop_gt(inst, 14), 112);
    NdArray<double> blurry(Shape{112, 112});
    for (std::size_t i = 0; i < coarse.values.size(); ++i) blurry[i] = coarse.values[i];
    const double sharp = bce(soft_laplacian_edge(ops::constant(perfect)).value(), gt_edge.values);
    const double soft = bce(soft_laplacian_edge(ops::constant(blurry)).value(), gt_edge.values);
    CHECK(sharp < soft);
  }
}

TEST_CASE("budget_loss examples") {
  CostModel cost;
  cost.target = 1.0;
  auto b = budget_loss<double>({vec4({1, 0, 0, 0})}, cost);
  CHECK(b.loss.item() == 0.0);
  CHECK(b.expected_cost.item() == doctest::Approx(0.23));

  cost.target = 0.4;
  CHECK(budget_loss<double>({vec4({0, 0, 0, 1})}, cost).loss.item() == doctest::Approx(2.5).epsilon(1e-12));

  // E(C) = 1.2 C_t
  cost.target = 1.01 / 1.2;
  CHECK(budget_loss<double>({vec4({0, 0, 1, 0})}, cost).loss.item() == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("entropy_loss examples") {
  CHECK(entropy_loss<double>({vec4({0.25, 0.25, 0.25, 0.25})}).item() == doctest::Approx(-std::log(4.0) / 4));
  CHECK(std::abs(entropy_loss<double>({vec4({0, 0, 1, 0})}).item()) < 1e-9);
  const auto two = ops::constant(NdArray<double>(Shape{2}, 0.5));
  CHECK(entropy_loss<double>({two}).item() == doctest::Approx(-std::log(2.0) / 2));
  // Batch-level: two opposite one-hots average to a uniform pair of rungs.
  CHECK(entropy_loss<double>({vec4({1, 0, 0, 0}), vec4({0, 1, 0, 0})}).item() ==
        doctest::Approx(2 * 0.5 * std::log(0.5) / 4));
}

TEST_CASE("budget and entropy match their closed forms on random simplex batches") {
  std::mt19937_64 rng(3);
  CostModel cost;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 9;
    const auto batch = random_simplex_batch(rng, n);
    std::array<double, 4> f{};
    double e = 0;
    for (const auto& p : batch)
      for (int k = 0; k < 4; ++k) {
        f[k] += p.value()[k] / n;
        e += p.value()[k] * cost.costs[k] / n;
      }
    double h = 0;
    for (double v : f) h += v * std::log(std::max(v, kEntropyEpsilon));
    h /= 4;
    const auto b = budget_loss(batch, cost);
    CHECK(std::abs(b.expected_cost.item() - e) < 1e-9);
    CHECK(std::abs(b.loss.item() - std::max(e / cost.target - 1.0, 0.0)) < 1e-9);
    CHECK(std::abs(entropy_loss(batch).item() - h) < 1e-9);
    CHECK(entropy_loss(batch).item() >= -std::log(4.0) / 4 - 1e-12);
  }
}

TEST_CASE("total_loss") {
  CostModel cost;
  SUBCASE("arithmetic") {
    const auto r = combine_losses(1.0, 0.5, 0.2, -0.3, cost);
    CHECK(r.total == doctest::Approx(1.01));
    CHECK(r.reg == doctest::Approx(-0.1));
    cost.lambda_edge = 0;
    cost.lambda_reg = 0;
    CHECK(combine_losses(1.0, 0.5, 0.2, -0.3, cost).total == 1.0);
  }
  SUBCASE("tensor path agrees with the report") {
    LossTerms<double> t;
    t.mask = ops::constant(NdArray<double>(Shape{}, 1.0));
    t.edge = ops::constant(NdArray<double>(Shape{}, 0.5));
    t.budget = ops::constant(NdArray<double>(Shape{}, 0.2));
    t.entropy = ops::constant(NdArray<double>(Shape{}, -0.3));
    LossReport report;
    const auto total = total_loss(t, cost, 8, &report);
    CHECK(total.item() == doctest::Approx(1.01));
    CHECK(report.total == doctest::Approx(1.01));
    CHECK(report.batch == 8);
  }
  SUBCASE("a violated budget sends gradient into the switch") {
    ModelConfig cfg;
    cfg.channels = 4;
    ParamStore<double> store(4);
    SwitchNet<double> msm(store, cfg);
    std::mt19937_64 rng(4);
    NdArray<double> x(Shape{4, 14, 14});
    for (auto& v : x.values()) v = uniform(rng, -1, 1);
    LossTerms<double> t;
    t.mask = ops::constant(NdArray<double>(Shape{}, 0.7));
    t.edge = ops::constant(NdArray<double>(Shape{}, 0.1));
    cost.target = 0.3;
    const auto b = budget_loss<double>({msm.forward(ops::constant(x))}, cost);
    t.budget = b.loss;
    REQUIRE(b.loss.item() > 0);
    store.zero_grad();
    total_loss(t, cost, 1, nullptr).backward();
    double norm = 0;
    for (const auto& [name, p] : store.all())
      if (p.has_grad())
        for (double g : p.grad().values()) norm += g * g;
    CHECK(norm > 0);
  }
}

TEST_CASE("cost model") {
  CostModel c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.tau_at(0, 100) == doctest::Approx(1.0));
  CHECK(c.tau_at(99, 100) == doctest::Approx(0.1));
  CHECK(c.tau_at(50, 101) == doctest::Approx(0.55));
  auto bad = c;
  bad.costs = {0.23, 0.62, 0.62, 1.4};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.target = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
