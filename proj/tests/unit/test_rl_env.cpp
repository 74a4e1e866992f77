#include <doctest.h>

#include "promptrl/errors.hpp"
#include "promptrl/rl_env.hpp"
#include "promptrl/srm.hpp"

using namespace promptrl;

namespace {

const GridSpec kGrid = build_grid(160, 160, 16, 16);

Scene box_scene() {
  GroundTruth gt(160, 160, 0);
  for (int y = 32; y < 96; ++y)
    for (int x = 32; x < 96; ++x) gt.at(y, x) = 1;
  return Scene("box", gt, 2);
}

// SRM whose output is sigmoid(bias) everywhere.
SrmModel constant_srm(double bias) {
  SrmModel m(Branch::Implicit, 10, 10, 8, 1);
  m.net.zero_head(m.params);
  m.params.back() = bias;
  return m;
}

}  // namespace

TEST_CASE("build_state examples") {
  Rng rng(1);
  FeatureMap f(10, 10, 8);
  for (double& v : f.data) v = uniform(rng, -1, 1);
  CHECK(build_state(f, MaskProb(160, 160, 1.0)) == State(f));
  for (double v : build_state(f, MaskProb(160, 160, 0.0)).data) CHECK(v == 0.0);
  const State half = build_state(f, MaskProb(160, 160, 0.5));
  for (std::size_t i = 0; i < f.data.size(); ++i) CHECK(half.data[i] == 0.5 * f.data[i]);
}

TEST_CASE("reward examples") {
  GroundTruth gt(80, 80, 0);
  gt.at(40, 40) = 1;
  CHECK(reward(gt, {40, 40}) == 1.0);
  gt.at(40, 40) = 0;
  CHECK(reward(gt, {40, 40}) == -1.0);
  CHECK(reward(GroundTruth(80, 80, 1), {3, 7}) == 1.0);
  CHECK_THROWS_AS(reward(gt, {80, 0}), BoundsError);
  CHECK_THROWS_AS(reward(gt, {0, -1}), BoundsError);
}

TEST_CASE("train init with a single background pixel picks it as the negative") {
  GroundTruth gt(160, 160, 1);
  gt.at(77, 13) = 0;
  const Scene s("almost_full", gt, 3);
  const SyntheticBackend be(kGrid);
  Environment env(kGrid, be, s, {15, LabelSource::Gt, InitMode::Srm});
  Rng rng(5);
  env.reset(EpisodeMode::Train, rng);
  REQUIRE(env.prompts().size() == 2);
  CHECK(env.prompts().points[0].label == Label::Positive);
  CHECK(gt.at(env.prompts().points[0].y, env.prompts().points[0].x) == 1);
  CHECK(env.prompts().points[1] == PromptPoint{77, 13, Label::Negative});
}

TEST_CASE("train init is reproducible and rejects single-class scenes") {
  const SyntheticBackend be(kGrid);
  const Scene s = box_scene();
  Environment a(kGrid, be, s, {15, LabelSource::Gt, InitMode::Srm});
  Environment b(kGrid, be, s, {15, LabelSource::Gt, InitMode::Srm});
  Rng r1(9), r2(9);
  a.reset(EpisodeMode::Train, r1);
  b.reset(EpisodeMode::Train, r2);
  CHECK(a.prompts().points == b.prompts().points);
  CHECK(a.state() == b.state());

  const Scene empty("empty", GroundTruth(160, 160, 0), 1);
  Environment e(kGrid, be, empty, {15, LabelSource::Gt, InitMode::Srm});
  CHECK_THROWS_AS(e.reset(EpisodeMode::Train, r1), InitError);
}

TEST_CASE("eval init needs an SRM") {
  const SyntheticBackend be(kGrid);
  const Scene s = box_scene();
  Environment env(kGrid, be, s, {15, LabelSource::Srm, InitMode::Srm});
  Rng rng(1);
  CHECK_THROWS_AS(env.reset(EpisodeMode::Eval, rng), UsageError);
}

TEST_CASE("eval init uses the argmax and argmin cells of the SRM map") {
  SrmOutput y(10, 10, 0.5);
  y.at(2, 3) = 0.9;
  y.at(7, 1) = 0.1;
  const auto [pos, neg] = init_eval_prompts(y, kGrid);
  CHECK(pos == PromptPoint{40, 56, Label::Positive});
  CHECK(neg == PromptPoint{120, 24, Label::Negative});
}

TEST_CASE("episode transcript") {
  const SyntheticBackend be(kGrid);
  const Scene s = box_scene();
  Environment env(kGrid, be, s, {5, LabelSource::Gt, InitMode::Srm});
  Rng rng(2);
  CHECK_THROWS_AS(env.step(0), UsageError);
  env.reset(EpisodeMode::Train, rng);
  // Action 22 is cell (2,2), centre (40,40): foreground.
  const Transition t1 = env.step(22, -1.5, 0.25);
  CHECK(t1.reward == 1.0);
  CHECK(t1.log_prob == -1.5);
  CHECK(t1.value == 0.25);
  CHECK(env.prompts().points.back() == PromptPoint{40, 40, Label::Positive});
  CHECK_FALSE(t1.done);
  const Transition t2 = env.step(0);
  CHECK(t2.reward == -1.0);
  CHECK(env.prompts().points.back().label == Label::Negative);
  for (int a : {1, 2, 3}) env.step(a);
  CHECK(env.done());
  CHECK(env.prompts().size() == 7);
  CHECK(env.rewards().size() == 5);
  CHECK_THROWS_AS(env.step(4), UsageError);
}

TEST_CASE("horizon of one finishes after a single step") {
  const SyntheticBackend be(kGrid);
  const Scene s = box_scene();
  Environment env(kGrid, be, s, {1, LabelSource::Gt, InitMode::Srm});
  Rng rng(2);
  env.reset(EpisodeMode::Train, rng);
  CHECK(env.step(55).done);
}

TEST_CASE("srm labels follow the map threshold regardless of the ground truth") {
  const SyntheticBackend be(kGrid);
  const Scene s = box_scene();
  const SrmModel zero = constant_srm(-60.0);
  Environment env(kGrid, be, s, {3, LabelSource::Srm, InitMode::Srm}, &zero);
  Rng rng(4);
  env.reset(EpisodeMode::Train, rng);
  env.step(22);  // foreground
  CHECK(env.chosen_labels().back() == Label::Negative);

  const SrmModel half = constant_srm(0.0);  // exactly 0.5: ties are positive
  Environment env2(kGrid, be, s, {3, LabelSource::Srm, InitMode::Srm}, &half);
  env2.reset(EpisodeMode::Train, rng);
  env2.step(0);  // background
  CHECK(env2.chosen_labels().back() == Label::Positive);
}

TEST_CASE("other label sources") {
  const SyntheticBackend be(kGrid);
  const SyntheticSemanticProvider sp(kGrid, 0.0);
  const Scene s = box_scene();
  Rng rng(6);

  Environment pos(kGrid, be, s, {2, LabelSource::Positive, InitMode::Srm});
  pos.reset(EpisodeMode::Train, rng);
  pos.step(0);
  CHECK(pos.chosen_labels().back() == Label::Positive);

  Environment clip(kGrid, be, s, {2, LabelSource::ClipMap, InitMode::Srm}, nullptr, &sp);
  clip.reset(EpisodeMode::Train, rng);
  clip.step(33);  // interior of the box in the semantic map
  clip.step(99);
  CHECK(clip.chosen_labels() == std::vector<Label>{Label::Positive, Label::Negative});

  Environment last(kGrid, be, s, {2, LabelSource::LastMask, InitMode::Srm});
  last.reset(EpisodeMode::Train, rng);  // the positive init prompt reveals the box
  last.step(22);
  last.step(99);
  CHECK(last.chosen_labels() == std::vector<Label>{Label::Positive, Label::Negative});

  Environment no_map(kGrid, be, s, {2, LabelSource::ClipMap, InitMode::Srm});
  no_map.reset(EpisodeMode::Train, rng);
  CHECK_THROWS_AS(no_map.step(0), UsageError);
}

TEST_CASE("ground-truth labels are always correct and rewards stay in {-1, +1}") {
  const SyntheticBackend be(kGrid);
  Rng rng(8);
  for (int ep = 0; ep < 20; ++ep) {
    const Scene s = generate_scene("p", 160, 160, rng());
    Environment env(kGrid, be, s, {15, LabelSource::Gt, InitMode::Srm});
    env.reset(EpisodeMode::Train, rng);
    int hits = 0;
    for (int t = 0; t < 15; ++t) {
      const Transition tr = env.step(static_cast<int>(uniform_index(rng, 100)));
      CHECK((tr.reward == 1.0 || tr.reward == -1.0));
      hits += tr.reward > 0;
    }
    CHECK(env.prompts().size() == 17);
    for (const PromptPoint& p : env.prompts().points) {
      if (p.label == Label::Positive) CHECK(s.gt().at(p.y, p.x) == 1);
    }
    const double fr = hits / 15.0;
    CHECK((fr >= 0.0 && fr <= 1.0));
  }
}

TEST_CASE("random eval init places two prompts without an SRM") {
  const SyntheticBackend be(kGrid);
  const Scene s = box_scene();
  Environment env(kGrid, be, s, {3, LabelSource::Positive, InitMode::Random});
  Rng rng(3);
  env.reset(EpisodeMode::Eval, rng);
  CHECK(env.prompts().size() == 2);
  CHECK(env.prompts().points[1].label == Label::Negative);
}

TEST_CASE("step records serialize with the documented fields") {
  const StepRecord r{3, 7, 42, {72, 40}, Label::Positive, 1.0, 0.5};
  const auto j = to_json(r);
  for (const char* k : {"episode", "step", "action", "point_y", "point_x", "label", "reward",
                        "cumulative_fr"}) {
    CHECK(j.contains(k));
  }
  CHECK(j.at("label") == "positive");
}
