#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latseg/ranking.hpp"
#include "support.hpp"

using namespace latseg;

namespace {

DirectionReport report(std::string id, double loss, double distance) {
  DirectionReport r;
  r.direction_id = std::move(id);
  r.loss = loss;
  r.distance = distance;
  r.fit.final_loss = loss;
  r.fit.distance = distance;
  return r;
}

double norm2(const std::vector<double>& v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

}  // namespace

TEST(ScaleDirection, Examples) {
  DirectionVector h{"h", {0.6, 0.0, -0.8}, 1.0};
  const auto same = scale_direction(h, 1.0);
  EXPECT_EQ(same.components, h.components);
  EXPECT_EQ(same.id, "h");

  const auto five = scale_direction(h);
  EXPECT_NEAR(norm2(five.components), 5.0, 1e-12);
  EXPECT_EQ(five.id, "h");
  EXPECT_EQ(five.scale, 5.0);

  const auto zero = scale_direction(h, 0.0);
  EXPECT_EQ(norm2(zero.components), 0.0);

  EXPECT_THROW(scale_direction(h, std::nan("")), DataError);
  EXPECT_THROW(scale_direction(h, INFINITY), DataError);
}

TEST(RankDirections, Examples) {
  const auto r = rank_directions({report("a", 0.1, 0.5), report("b", 0.2, 2.0), report("c", 10.0, 99.0)});
  EXPECT_EQ(r.shortlist, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(r.selected, "b");

  EXPECT_EQ(rank_directions({report("only", 3.0, 0.0)}).selected, "only");

  const auto eq = rank_directions({report("a", 0.3, 1.0), report("b", 0.1, 1.0), report("c", 0.2, 1.0)}, 1.0);
  EXPECT_EQ(eq.selected, "b");

  EXPECT_THROW(rank_directions({}), DataError);
  EXPECT_THROW(rank_directions({report("a", 0, 0)}, 0.0), DataError);
  EXPECT_THROW(rank_directions({report("a", 0, 0)}, 1.5), DataError);
}

TEST(RankDirections, ShortlistSize) {
  EXPECT_EQ(shortlist_size(1, 0.7), 1u);
  EXPECT_EQ(shortlist_size(2, 0.7), 1u);
  EXPECT_EQ(shortlist_size(3, 0.7), 2u);
  EXPECT_EQ(shortlist_size(8, 0.7), 6u);
  EXPECT_EQ(shortlist_size(10, 0.7), 7u);
  EXPECT_EQ(shortlist_size(120, 0.7), 84u);
  EXPECT_EQ(shortlist_size(5, 0.01), 1u);
  EXPECT_EQ(shortlist_size(5, 1.0), 5u);
}

TEST(RankDirections, TiesResolvedById) {
  const auto r = rank_directions({report("z", 0.1, 1.0), report("m", 0.1, 1.0), report("a", 0.5, 1.0)}, 1.0);
  EXPECT_EQ(r.selected, "m");
  EXPECT_EQ(r.shortlist, (std::vector<std::string>{"m", "z", "a"}));
}

TEST(RankDirections, Properties) {
  auto rng = make_rng(31, {});
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + rng() % 12;
    std::vector<DirectionReport> reports;
    for (std::size_t i = 0; i < n; ++i) {
      // coarse values so ties occur
      reports.push_back(report(direction_id(i), (rng() % 5) * 0.1, (rng() % 4) * 0.5));
    }
    const double q = uniform(rng, 0.05, 1.0);
    const auto base = rank_directions(reports, q);

    auto shuffled = reports;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto again = rank_directions(shuffled, q);
    EXPECT_EQ(again.selected, base.selected);
    EXPECT_EQ(again.shortlist, base.shortlist);

    EXPECT_EQ(base.shortlist.size(), shortlist_size(n, q));
    EXPECT_NE(std::find(base.shortlist.begin(), base.shortlist.end(), base.selected), base.shortlist.end());

    // nothing outside the shortlist has a smaller loss than anything inside it
    double worst_kept = 0.0;
    for (const auto& r : reports) {
      if (std::count(base.shortlist.begin(), base.shortlist.end(), r.direction_id)) worst_kept = std::max(worst_kept, r.loss);
    }
    for (const auto& r : reports) {
      if (!std::count(base.shortlist.begin(), base.shortlist.end(), r.direction_id)) EXPECT_GE(r.loss, worst_kept);
    }

    auto boosted = reports;
    for (auto& r : boosted) {
      if (r.direction_id == base.selected) r.distance += uniform(rng, 0.0, 3.0);
    }
    EXPECT_EQ(rank_directions(boosted, q).selected, base.selected);
  }
}

TEST(SelectionJson, Layout) {
  std::vector<DirectionReport> reports{report("a", 0.1, 0.5), report("b", 0.2, 2.0), report("c", 10.0, 99.0)};
  const auto j = selection_to_json(rank_directions(reports), reports);
  EXPECT_EQ(j["selected"], "b");
  EXPECT_EQ(j["shortlist"].size(), 2u);
  ASSERT_EQ(j["reports"].size(), 3u);
  EXPECT_EQ(j["reports"][2]["id"], "c");
  EXPECT_EQ(j["reports"][2]["loss"].get<double>(), 10.0);
  EXPECT_EQ(j["reports"][2]["distance"].get<double>(), 99.0);
}

TEST(SyntheticSource, Deterministic) {
  const auto a = synthetic_affine_source(SuiteSpec{}, 5);
  const auto b = synthetic_affine_source(SuiteSpec{}, 5);
  EXPECT_EQ(a.ground_truth(), b.ground_truth());
  for (std::size_t i : {0u, 7u, 1000u}) {
    const auto x = a.at(i), y = b.at(i);
    EXPECT_EQ(x.id, y.id);
    EXPECT_EQ(x.image, y.image);
    EXPECT_EQ(x.shifted, y.shifted);
    EXPECT_EQ(*x.gt_mask, *y.gt_mask);
  }
  const auto c = synthetic_affine_source(SuiteSpec{}, 6);
  EXPECT_NE(c.at(0).image, a.at(0).image);
}

TEST(SyntheticSource, NoiseFreeDecompositionIsExact) {
  SuiteSpec spec;
  spec.noise_sigma = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto src = synthetic_affine_source(spec, seed);
    EXPECT_EQ(restoration_loss(take(src, 0, 8), *src.ground_truth()), 0.0);
    EXPECT_GE(oracle::grid_separation(*src.ground_truth()), spec.margin_delta);
  }
}

TEST(SyntheticSource, AssignmentMatchesMaskWhereGapIsClear) {
  const SuiteSpec spec;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto src = synthetic_affine_source(spec, seed);
    const auto& pair = *src.ground_truth();
    for (std::size_t k = 0; k < 8; ++k) {
      const auto s = src.at(k);
      const auto labels = assignment_labels(s, pair);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const Color c = s.image.pixel(i), d = s.shifted.pixel(i);
        const double gap = std::abs(distance(pair.a1(c), d) - distance(pair.a2(c), d));
        if (gap > 2 * spec.noise_sigma) EXPECT_EQ(labels[i] == 1, (*s.gt_mask)[i] == 1) << s.id << " pixel " << i;
      }
    }
  }
}

TEST(SyntheticSource, InvalidSpec) {
  SuiteSpec none;
  none.candidates = {CandidateKind::Identity, CandidateKind::Warp};
  EXPECT_THROW(synthetic_direction_suite(none, 0), DataError);
  SuiteSpec two;
  two.candidates = {CandidateKind::Segmenting, CandidateKind::Segmenting};
  EXPECT_THROW(synthetic_direction_suite(two, 0), DataError);
  SuiteSpec margin;
  margin.margin_delta = 0.0;
  EXPECT_THROW(synthetic_affine_source(margin, 0), DataError);
  SuiteSpec impossible;
  impossible.margin_delta = 5.0;
  EXPECT_THROW(synthetic_affine_source(impossible, 0), DataError);
}

TEST(SyntheticSuite, Shape) {
  const SuiteSpec spec;
  const auto suite = synthetic_direction_suite(spec, 3);
  ASSERT_EQ(suite.size(), spec.candidates.size());
  for (std::size_t k = 0; k < suite.size(); ++k) {
    EXPECT_EQ(suite[k].direction.id, direction_id(k));
    EXPECT_EQ(suite[k].direction.components.size(), kLatentDim);
    EXPECT_NEAR(norm2(suite[k].direction.components), 1.0, 1e-12);
    EXPECT_EQ(suite[k].source->kind(), spec.candidates[k]);
  }
  const auto id = suite[1].source->at(4);
  ASSERT_EQ(spec.candidates[1], CandidateKind::Identity);
  double worst = 0.0;
  for (std::size_t i = 0; i < id.image.values().size(); ++i) {
    worst = std::max(worst, std::abs(id.image.values()[i] - id.shifted.values()[i]));
  }
  EXPECT_LT(worst, 10 * spec.noise_sigma);

  SuiteSpec quiet = spec;
  quiet.noise_sigma = 0.0;
  const auto warp = synthetic_direction_suite(quiet, 3)[2].source->at(0);
  ASSERT_EQ(spec.candidates[2], CandidateKind::Warp);
  EXPECT_EQ(warp.shifted(5, 8), warp.image(5, 0));
  EXPECT_EQ(warp.shifted(5, 0), warp.image(5, 24));
}

TEST(SyntheticSuite, FitsSeparateCandidateKinds) {
  const SuiteSpec spec;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto suite = synthetic_direction_suite(spec, seed);
    FitConfig cfg;
    cfg.seed = seed;
    std::vector<DirectionReport> reports;
    for (const auto& c : suite) reports.push_back(DirectionReport::from_fit(c.direction.id, fit_operators(*c.source, cfg)));
    const double seg_loss = reports[spec.segmenting_index()].loss;
    for (std::size_t k = 0; k < suite.size(); ++k) {
      EXPECT_EQ(reports[k].loss, reports[k].fit.final_loss);
      if (spec.candidates[k] == CandidateKind::GlobalAffine) EXPECT_LT(reports[k].distance, 0.1) << k;
      if (spec.candidates[k] == CandidateKind::Warp) EXPECT_GE(reports[k].loss, 3 * seg_loss) << k;
    }
    EXPECT_EQ(rank_directions(reports).selected, direction_id(spec.segmenting_index())) << "seed " << seed;
  }
}
