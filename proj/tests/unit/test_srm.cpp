#include <doctest.h>

#include <numeric>

#include "../common/oracles.hpp"
#include "promptrl/errors.hpp"
#include "promptrl/srm.hpp"

using namespace promptrl;

namespace {

State random_state(Rng& rng, int h, int w, int c) {
  State s(h, w, c);
  for (double& v : s.data) v = uniform(rng, -1, 1);
  return s;
}

Array2<std::uint8_t> random_target(Rng& rng, int h, int w) {
  Array2<std::uint8_t> g(h, w);
  for (auto& v : g.data) v = uniform01(rng) < 0.4;
  return g;
}

// Finite differences on a random subset of coordinates.
double subset_error(const SrmNet& net, const std::vector<double>& params, const State* s_c,
                    const State& s_t, const Array2<std::uint8_t>& g, Rng& rng, std::size_t n) {
  std::vector<double> grad(params.size(), 0.0);
  srm_loss_and_grad(net, params, s_c, s_t, g, grad);
  std::vector<double> a, f;
  std::vector<double> x = params;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = uniform_index(rng, params.size());
    const double h = 1e-6, x0 = x[i];
    x[i] = x0 + h;
    const double lp = srm_loss(srm_forward(net, x, s_c, s_t), g);
    x[i] = x0 - h;
    const double lm = srm_loss(srm_forward(net, x, s_c, s_t), g);
    x[i] = x0;
    a.push_back(grad[i]);
    f.push_back((lp - lm) / (2 * h));
  }
  return oracle::relative_error(a, f);
}

}  // namespace

TEST_CASE("output lies strictly in (0, 1) with the declared shape") {
  Rng rng(1);
  for (Branch b : {Branch::Implicit, Branch::Explicit}) {
    const SrmModel m(b, 5, 4, 3, 2);
    const State s_t = random_state(rng, 5, 4, 3), s_c = random_state(rng, 5, 4, 3);
    const SrmOutput y = srm_forward(m, &s_c, s_t);
    CHECK(y.h == 5);
    CHECK(y.w == 4);
    for (double v : y.data) CHECK((v > 0.0 && v < 1.0));
  }
}

TEST_CASE("implicit branch ignores the semantic state; explicit requires it") {
  Rng rng(2);
  const SrmModel imp(Branch::Implicit, 4, 4, 3, 3);
  const State s_t = random_state(rng, 4, 4, 3);
  const SrmOutput base = srm_forward(imp, nullptr, s_t);
  for (int i = 0; i < 10; ++i) {
    const State s_c = random_state(rng, 4, 4, 3);
    CHECK(srm_forward(imp, &s_c, s_t) == base);
  }
  const SrmModel exp(Branch::Explicit, 4, 4, 3, 3);
  CHECK_THROWS_AS(srm_forward(exp, nullptr, s_t), UsageError);
  const State wrong = random_state(rng, 3, 4, 3);
  CHECK_THROWS_AS(srm_forward(imp, nullptr, wrong), ArchitectureError);
}

TEST_CASE("explicit branch reacts to the semantic state") {
  Rng rng(3);
  const SrmModel exp(Branch::Explicit, 4, 4, 3, 4);
  const State s_t = random_state(rng, 4, 4, 3);
  const State a = random_state(rng, 4, 4, 3), b = random_state(rng, 4, 4, 3);
  CHECK_FALSE(srm_forward(exp, &a, s_t) == srm_forward(exp, &b, s_t));
}

TEST_CASE("implicit gradient matches central differences on every parameter") {
  Rng rng(4);
  const SrmModel m(Branch::Implicit, 3, 3, 2, 5);
  for (int draw = 0; draw < 3; ++draw) {
    const State s_t = random_state(rng, 3, 3, 2);
    const auto g = random_target(rng, 3, 3);
    std::vector<double> params = m.params;
    for (double& p : params) p += uniform(rng, -0.05, 0.05);
    std::vector<double> grad(params.size(), 0.0);
    srm_loss_and_grad(m.net, params, nullptr, s_t, g, grad);
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& x) {
          return srm_loss(srm_forward(m.net, x, nullptr, s_t), g);
        },
        params);
    CHECK(oracle::relative_error(grad, fd) <= 1e-4);
  }
}

TEST_CASE("explicit gradient matches central differences on sampled parameters") {
  Rng rng(5);
  const SrmModel m(Branch::Explicit, 3, 3, 2, 6);
  for (int draw = 0; draw < 3; ++draw) {
    const State s_t = random_state(rng, 3, 3, 2), s_c = random_state(rng, 3, 3, 2);
    const auto g = random_target(rng, 3, 3);
    CHECK(subset_error(m.net, m.params, &s_c, s_t, g, rng, 400) <= 1e-4);
  }
}

TEST_CASE("loss is non-negative and matches the Dice + BCE oracle") {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const int h = 1 + static_cast<int>(uniform_index(rng, 8));
    const int w = 1 + static_cast<int>(uniform_index(rng, 8));
    SrmOutput y(h, w);
    for (double& v : y.data) v = uniform01(rng);
    if (i % 10 == 0) y.data[0] = 0.0;  // exercises the clamp
    const auto g = random_target(rng, h, w);
    const double l = srm_loss(y, g);
    CHECK(l >= 0.0);
    CHECK(std::abs(l - oracle::srm_loss(y, g)) <= 1e-9);
  }
}

TEST_CASE("labels threshold the map at 0.5 per cell") {
  const GridSpec grid = build_grid(160, 160, 16, 16);
  Rng rng(7);
  SrmOutput y(10, 10);
  for (double& v : y.data) v = uniform01(rng);
  y.data[5] = 0.5;
  for (int a = 0; a < 100; ++a) {
    const Pixel p = action_to_point(grid, a);
    const Label expected = y.data[static_cast<std::size_t>(a)] >= 0.5 ? Label::Positive
                                                                       : Label::Negative;
    CHECK(label_prompt(y, grid, p) == expected);
    CHECK(label_prompt(y, grid, {p.y - 8, p.x + 7}) == expected);
  }
}

TEST_CASE("eval prompts break ties towards the smallest index") {
  const GridSpec grid = build_grid(160, 160, 16, 16);
  const SrmOutput flat(10, 10, 0.5);
  const auto [pos, neg] = init_eval_prompts(flat, grid);
  CHECK(pos == PromptPoint{8, 8, Label::Positive});
  CHECK(neg == PromptPoint{8, 8, Label::Negative});
}

TEST_CASE("ground truth downsampling thresholds the block average") {
  GroundTruth gt(4, 4, 0);
  gt.at(0, 0) = gt.at(0, 1) = 1;            // half of block (0,0)
  gt.at(2, 2) = 1;                          // a quarter of block (1,1)
  gt.at(0, 2) = gt.at(0, 3) = gt.at(1, 2) = 1;  // three quarters of block (0,1)
  const auto d = downsample_gt(gt, 2, 2);
  CHECK(d.at(0, 0) == 1);
  CHECK(d.at(0, 1) == 1);
  CHECK(d.at(1, 0) == 0);
  CHECK(d.at(1, 1) == 0);
}

TEST_CASE("srm_update: q=0 is a no-op, q steps reduce the loss on one sample") {
  const GridSpec grid = build_grid(160, 160, 16, 16);
  const SyntheticBackend be(grid);
  const Scene s = generate_scene("u", 160, 160, 17);
  const FeatureMap f = be.encode(s);
  const MaskProb prev(160, 160, 1.0);
  SrmModel m(Branch::Implicit, 10, 10, 8, 7);
  const auto before = m.params;
  CHECK(srm_update(m, f, nullptr, prev, s.gt(), 0, 1e-3).empty());
  CHECK(m.params == before);
  const auto losses = srm_update(m, f, nullptr, prev, s.gt(), 30, 1e-3);
  CHECK(losses.size() == 30);
  CHECK(losses.back() < losses.front());
  CHECK(m.updates == 30);

  SrmModel e(Branch::Explicit, 10, 10, 8, 8);
  CHECK_THROWS_AS(srm_update(e, f, nullptr, prev, s.gt(), 1, 1e-3), UsageError);
}

TEST_CASE("semantic state modulates features by the map") {
  FeatureMap f(2, 2, 2, 2.0);
  SemanticMap m(2, 2, 0.25);
  for (double v : semantic_state(f, m).data) CHECK(v == 0.5);
}
