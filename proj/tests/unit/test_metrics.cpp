#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "../common/oracles.hpp"
#include "promptrl/errors.hpp"
#include "promptrl/metrics.hpp"

using namespace promptrl;

namespace {

BinaryMask mask(int h, int w, std::initializer_list<int> ones) {
  BinaryMask m(h, w, 0);
  for (int i : ones) m.data[static_cast<std::size_t>(i)] = 1;
  return m;
}

BinaryMask complement(const BinaryMask& m) {
  BinaryMask c = m;
  for (auto& v : c.data) v = !v;
  return c;
}

MaskProb as_prob(const BinaryMask& m) {
  MaskProb p(m.h, m.w);
  for (std::size_t i = 0; i < m.data.size(); ++i) p.data[i] = m.data[i];
  return p;
}

struct Pair {
  MaskProb prob;
  BinaryMask pred, gt;
};

Pair random_pair(Rng& rng) {
  const int h = 1 + static_cast<int>(uniform_index(rng, 10));
  const int w = 1 + static_cast<int>(uniform_index(rng, 10));
  const double dg = uniform01(rng);
  Pair p{MaskProb(h, w), BinaryMask(h, w), BinaryMask(h, w)};
  for (std::size_t i = 0; i < p.gt.data.size(); ++i) {
    p.prob.data[i] = uniform01(rng);
    p.gt.data[i] = uniform01(rng) < dg;
  }
  p.pred = binarize(p.prob);
  return p;
}

}  // namespace

TEST_CASE("iou examples") {
  const BinaryMask g = mask(3, 3, {0, 4});
  CHECK(iou(g, g) == 1.0);
  CHECK(iou(mask(3, 3, {1}), mask(3, 3, {2})) == 0.0);
  CHECK(iou(mask(3, 3, {0}), g) == 0.5);
  CHECK(iou(mask(3, 3, {}), mask(3, 3, {})) == 1.0);
  CHECK_THROWS_AS(iou(mask(2, 2, {}), mask(3, 3, {})), InputError);
}

TEST_CASE("mae examples") {
  const BinaryMask g = mask(2, 3, {1, 5});
  CHECK(mae(as_prob(g), g) == 0.0);
  CHECK(mae(as_prob(complement(g)), g) == 1.0);
}

TEST_CASE("ber examples") {
  const BinaryMask g = mask(2, 2, {0, 1});
  CHECK(ber(g, g) == 0.0);
  CHECK(ber(mask(2, 2, {0, 1, 2, 3}), g) == doctest::Approx(50.0));
  // Absent foreground: its recall counts as 1.
  CHECK(ber(mask(2, 2, {0}), mask(2, 2, {})) == doctest::Approx(100.0 * (1 - (1 + 0.75) / 2)));
}

TEST_CASE("f_measure examples") {
  const BinaryMask g = mask(2, 2, {0});
  CHECK(f_measure(g, g) == doctest::Approx(1.0));
  CHECK(f_measure(mask(2, 2, {}), g) == 0.0);
  // precision 0.5, recall 1
  CHECK(f_measure(mask(2, 2, {0, 1}), g) == doctest::Approx(1.3 * 0.5 / 1.15).epsilon(1e-12));
  CHECK(f_measure(mask(2, 2, {0, 1}), g) == doctest::Approx(0.5652).epsilon(1e-4));
}

TEST_CASE("e_measure examples") {
  const BinaryMask g = mask(3, 3, {0, 1, 4});
  CHECK(e_measure(g, g) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(e_measure(complement(g), g) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(e_measure(mask(2, 2, {}), mask(2, 2, {})) == 1.0);
  CHECK(e_measure(mask(2, 2, {0}), mask(2, 2, {})) == 0.75);
  CHECK(e_measure(mask(2, 2, {0}), mask(2, 2, {0, 1, 2, 3})) == 0.25);
}

TEST_CASE("foreground rate examples") {
  const BinaryMask g = mask(2, 2, {0});
  std::vector<Pixel> on(15, Pixel{0, 0}), off(15, Pixel{1, 1});
  CHECK(foreground_rate(on, g, 15) == 1.0);
  CHECK(foreground_rate(off, g, 15) == 0.0);
  std::vector<Pixel> mixed(on.begin(), on.begin() + 9);
  mixed.insert(mixed.end(), off.begin(), off.begin() + 6);
  CHECK(foreground_rate(mixed, g, 15) == doctest::Approx(0.6));
  CHECK_THROWS_AS(foreground_rate(std::vector<Pixel>{{5, 5}}, g, 1), BoundsError);
}

TEST_CASE("binarize thresholds at 0.5 inclusive") {
  MaskProb p(1, 3);
  p.data = {0.4999, 0.5, 0.9};
  CHECK(binarize(p).data == std::vector<std::uint8_t>{0, 1, 1});
}

TEST_CASE("every metric matches its scalar-loop oracle") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Pair p = random_pair(rng);
    CHECK(iou(p.pred, p.gt) == doctest::Approx(oracle::iou(p.pred, p.gt)).epsilon(1e-9));
    CHECK(std::abs(mae(p.prob, p.gt) - oracle::mae(p.prob, p.gt)) <= 1e-12);
    CHECK(std::abs(ber(p.pred, p.gt) - oracle::ber(p.pred, p.gt)) <= 1e-9);
    CHECK(std::abs(f_measure(p.pred, p.gt) - oracle::f_measure(p.pred, p.gt)) <= 1e-9);
    CHECK(std::abs(e_measure(p.pred, p.gt) - oracle::e_measure(p.pred, p.gt)) <= 1e-9);
  }
}

TEST_CASE("range invariants") {
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const Pair p = random_pair(rng);
    const ImageMetrics m = evaluate_mask(p.prob, p.gt);
    CHECK((m.iou >= 0 && m.iou <= 1));
    CHECK((m.mae >= 0 && m.mae <= 1));
    CHECK((m.ber >= 0 && m.ber <= 100));
    CHECK((m.f_beta >= 0 && m.f_beta <= 1));
    CHECK((m.e_phi >= 0 && m.e_phi <= 1 + 1e-12));
  }
}

TEST_CASE("ber is symmetric under complementing both masks") {
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const Pair p = random_pair(rng);
    CHECK(ber(complement(p.pred), complement(p.gt)) == doctest::Approx(ber(p.pred, p.gt)));
  }
}

TEST_CASE("iou and f_measure are invariant under a shared pixel permutation") {
  Rng rng(14);
  for (int i = 0; i < 200; ++i) {
    const Pair p = random_pair(rng);
    std::vector<std::size_t> idx(p.gt.data.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    BinaryMask pp = p.pred, gp = p.gt;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      pp.data[k] = p.pred.data[idx[k]];
      gp.data[k] = p.gt.data[idx[k]];
    }
    CHECK(iou(pp, gp) == iou(p.pred, p.gt));
    CHECK(f_measure(pp, gp) == doctest::Approx(f_measure(p.pred, p.gt)).epsilon(1e-12));
  }
}

TEST_CASE("report aggregates, serializes and round-trips") {
  MetricsReport r;
  r.run_id = "run-x";
  r.policy = "trained";
  r.label_source = "srm";
  r.T = 2;
  r.images.push_back({"a", {{0.2, 0.1, 10, 0.3, 0.4}, {0.4, 0.1, 10, 0.3, 0.4}}, 0.5});
  r.images.push_back({"b", {{0.6, 0.3, 30, 0.5, 0.6}, {0.8, 0.3, 30, 0.5, 0.6}}, 1.0});
  const auto curve = r.mean_curve();
  CHECK(curve[0].iou == doctest::Approx(0.4));
  CHECK(curve[1].iou == doctest::Approx(0.6));
  CHECK(r.mean_final().ber == doctest::Approx(20));
  CHECK(r.mean_fr() == doctest::Approx(0.75));

  const MetricsReport back = report_from_json(to_json(r));
  CHECK(to_json(back) == to_json(r));

  std::ostringstream rec;
  write_records(r, rec);
  int lines = 0;
  std::istringstream in(rec.str());
  for (std::string line; std::getline(in, line);) {
    CHECK_NOTHROW(nlohmann::json::parse(line));
    ++lines;
  }
  CHECK(lines == 6);

  std::ostringstream text;
  write_text_report(r, text);
  CHECK(text.str().find("mean FR") != std::string::npos);
}
