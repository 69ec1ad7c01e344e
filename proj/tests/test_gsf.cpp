#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "gsf/scoring.hpp"
#include "support.hpp"

using namespace gsf;
using gsf::fixture::random_query;
using gsf::fixture::small_model;

namespace {

std::vector<std::vector<std::size_t>> as_vectors(const GroupSet& gs) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t k = 0; k < gs.size(); ++k) out.emplace_back(gs[k].begin(), gs[k].end());
  return out;
}

}  // namespace

TEST(EnumerateGroups, Counts) {
  EXPECT_EQ(enumerate_groups(3, 2).size(), 6u);
  EXPECT_EQ(enumerate_groups(3, 1).size(), 3u);
  EXPECT_EQ(enumerate_groups(4, 2).size(), 12u);
  EXPECT_EQ(enumerate_groups(5, 5).size(), 120u);
  EXPECT_EQ(enumerate_groups(3, 2).origin(), GroupOrigin::full);
}

TEST(EnumerateGroups, LexicographicExhaustiveDistinct) {
  const auto groups = as_vectors(enumerate_groups(4, 3));
  EXPECT_TRUE(std::is_sorted(groups.begin(), groups.end()));
  EXPECT_EQ(std::set(groups.begin(), groups.end()).size(), groups.size());
  for (const auto& g : groups) EXPECT_EQ(std::set(g.begin(), g.end()).size(), 3u);
  EXPECT_EQ(as_vectors(enumerate_groups(3, 2)),
            (std::vector<std::vector<std::size_t>>{{0, 1}, {0, 2}, {1, 0}, {1, 2}, {2, 0}, {2, 1}}));
}

TEST(EnumerateGroups, Errors) {
  EXPECT_THROW(enumerate_groups(2, 3), InvalidArgument);
  EXPECT_THROW(enumerate_groups(3, 0), InvalidArgument);
  EXPECT_THROW(enumerate_groups(120, 64), InvalidArgument);  // guard
  EXPECT_THROW(enumerate_groups(12, 7), InvalidArgument);    // 12P7 = 3991680
}

TEST(EnumerateGroups, GuardBoundary) {
  EXPECT_EQ(permutation_count(10, 6), 151200u);
  EXPECT_NO_THROW(enumerate_groups(10, 6));
  EXPECT_EQ(permutation_count(120, 64), std::numeric_limits<std::size_t>::max());
}

TEST(CircularWindows, WindowsOfShuffledOrder) {
  const std::vector<std::size_t> order{3, 1, 4, 2};
  EXPECT_EQ(as_vectors(circular_windows(order, 2)),
            (std::vector<std::vector<std::size_t>>{{3, 1}, {1, 4}, {4, 2}, {2, 3}}));
}

TEST(SampleGroups, LinearCountAndOccurrenceLaw) {
  Rng rng(5);
  const auto gs = sample_groups(6, 3, rng);
  EXPECT_EQ(gs.size(), 6u);
  EXPECT_EQ(gs.origin(), GroupOrigin::sampled);
  for (std::size_t n = 1; n <= 12; ++n) {
    for (std::size_t m = 1; m <= n; ++m) {
      const auto s = sample_groups(n, m, rng);
      ASSERT_EQ(s.size(), n);
      std::vector<std::vector<int>> pos(n, std::vector<int>(m, 0));
      for (std::size_t k = 0; k < s.size(); ++k) {
        EXPECT_EQ(std::set(s[k].begin(), s[k].end()).size(), m);
        for (std::size_t p = 0; p < m; ++p) pos[s[k][p]][p] += 1;
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < m; ++p) EXPECT_EQ(pos[i][p], 1) << n << ' ' << m;
      }
    }
  }
  EXPECT_THROW(sample_groups(2, 3, rng), InvalidArgument);
}

TEST(SampleGroups, WrapAroundWhenFewerSlotsThanGroupSize) {
  Rng rng(6);
  const auto gs = sample_groups(2, 3, rng, /*allow_wrap=*/true);
  EXPECT_EQ(gs.size(), 2u);
  const auto occ = gs.occurrences(2);
  EXPECT_EQ(occ[0] + occ[1], 6u);
}

TEST(BuildGroupInput, ConcatenatesInGroupOrder) {
  QueryList q;
  q.docs = {{{1.0, 2.0}, 0.0}, {{3.0, 4.0}, 1.0}, {{5.0, 6.0}, 0.0}};
  q.mask = {1, 1, 0};
  const std::vector<std::size_t> a{0}, ab{0, 1}, ba{1, 0}, masked{0, 2};
  EXPECT_EQ(build_group_input(q, a), (std::vector<double>{1, 2}));
  EXPECT_EQ(build_group_input(q, ab), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(build_group_input(q, ba), (std::vector<double>{3, 4, 1, 2}));
  EXPECT_THROW(build_group_input(q, masked), InvalidArgument);
  q.context = {9.0};
  EXPECT_EQ(build_group_input(q, ab, 1), (std::vector<double>{9, 1, 2, 3, 4}));
}

TEST(BuildGroupInput, WidthForLargeGroups) {
  GsfModel m;
  m.group_size = 64;
  m.feature_dim = 136;
  EXPECT_EQ(m.input_width(), 8704u);
}

TEST(Aggregate, ConstantGroupScoresHandEnumeration) {
  const auto gs = enumerate_groups(3, 2);
  Matrix scores(gs.size(), 2);
  for (std::size_t k = 0; k < gs.size(); ++k) scores(k, 0) = 1.0;
  const Mask mask(3, 1);
  EXPECT_EQ(aggregate(scores, gs, mask, Aggregation::sum), (ScoreVector{2, 2, 2}));
  EXPECT_EQ(aggregate(scores, gs, mask, Aggregation::mean), (ScoreVector{0.5, 0.5, 0.5}));
}

TEST(Aggregate, SingletonGroupsSumEqualsMean) {
  const auto gs = enumerate_groups(4, 1);
  Matrix scores(4, 1, std::vector<double>{0.3, -1.0, 2.5, 0.0});
  const Mask mask(4, 1);
  EXPECT_EQ(aggregate(scores, gs, mask, Aggregation::sum), aggregate(scores, gs, mask, Aggregation::mean));
  EXPECT_EQ(aggregate(scores, gs, mask, Aggregation::sum), (ScoreVector{0.3, -1.0, 2.5, 0.0}));
}

TEST(Aggregate, MaskedAndUncoveredSlots) {
  GroupSet gs(1, GroupOrigin::sampled);
  const std::vector<std::size_t> g0{0};
  gs.push_back(g0);
  Matrix scores(1, 1, 4.0);
  const auto f = aggregate(scores, gs, Mask{1, 0}, Aggregation::mean);
  EXPECT_EQ(f[0], 4.0);
  EXPECT_EQ(f[1], kExcludedScore);
  EXPECT_THROW(aggregate(scores, gs, Mask{1, 1}, Aggregation::mean), InvalidArgument);
  EXPECT_THROW(aggregate(Matrix(2, 1), gs, Mask{1, 1}, Aggregation::mean), DimensionError);
}

TEST(Aggregate, SumAndMeanInduceTheSameRanking) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(5), m = 1 + rng.below(std::min<std::size_t>(n, 3));
    const GroupSet gs = trial % 2 ? enumerate_groups(n, m) : sample_groups(n, m, rng);
    Matrix scores(gs.size(), m);
    for (double& v : scores.values()) v = rng.normal();
    const Mask mask(n, 1);
    EXPECT_EQ(rank(aggregate(scores, gs, mask, Aggregation::sum)),
              rank(aggregate(scores, gs, mask, Aggregation::mean)));
  }
}

TEST(RouteScoreGradient, IsAdjointOfAggregate) {
  Rng rng(10);
  for (auto how : {Aggregation::sum, Aggregation::mean}) {
    const auto gs = enumerate_groups(4, 2);
    Matrix scores(gs.size(), 2);
    for (double& v : scores.values()) v = rng.normal();
    const std::vector<double> dscore{0.3, -0.7, 1.1, 0.2};
    const Mask mask(4, 1);
    const auto f = aggregate(scores, gs, mask, how);
    const Matrix d = route_score_gradient(dscore, gs, mask, how);
    // <dscore, A s> == <A^T dscore, s>
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < 4; ++i) lhs += dscore[i] * f[i];
    for (std::size_t i = 0; i < scores.size(); ++i) rhs += d.values()[i] * scores.values()[i];
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

TEST(ScoreList, GroupSizeOneIsUnivariate) {
  const auto model = small_model(1, 3, {6, 4}, true, 21);
  Rng rng(22);
  auto q = random_query(5, 3, rng);
  Rng s1(1);
  const auto before = score_list(model, q, ScoringMode::sampled, s1);
  q.docs[3].features = {9.0, -9.0, 0.5};
  Rng s2(2);
  const auto after = score_list(model, q, ScoringMode::sampled, s2);
  for (std::size_t i : {0, 1, 2, 4}) EXPECT_EQ(before[i], after[i]);
  EXPECT_NE(before[3], after[3]);
}

TEST(ScoreList, DuplicateDocumentsScoreIdenticallyUnderFullEnumeration) {
  const auto model = small_model(3, 2, {5}, true, 31);
  Rng rng(32);
  auto q = random_query(5, 2, rng);
  q.docs[1].features = q.docs[0].features;
  Rng s(0);
  const auto f = score_list(model, q, ScoringMode::full, s);
  EXPECT_NEAR(f[0], f[1], 1e-12);
}

TEST(ScoreList, FullModeIsPermutationInvariant) {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(6), m = 1 + rng.below(std::min<std::size_t>(n, 3));
    const auto model = small_model(m, 2, {4, 3}, trial % 2 == 0, 100 + trial);
    const auto q = random_query(n, 2, rng);
    const auto perm = rng.permutation(n);
    QueryList p = q;
    for (std::size_t i = 0; i < n; ++i) p.docs[i] = q.docs[perm[i]];
    Rng a(0), b(0);
    const auto fq = score_list(model, q, ScoringMode::full, a);
    const auto fp = score_list(model, p, ScoringMode::full, b);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_LE(std::abs(fp[i] - fq[perm[i]]), 1e-9 * std::max(1.0, std::abs(fq[perm[i]])));
    }
  }
}

TEST(ScoreList, SampledModeUsesOneNetworkRowPerDocument) {
  const auto model = small_model(3, 2, {4}, false, 51);
  Rng rng(52);
  const auto q = random_query(7, 2, rng);
  const auto scored = score_list_detailed(model, q, ScoringMode::sampled, rng);
  EXPECT_EQ(scored.network_rows, 7u);
  const auto full = score_list_detailed(model, q, ScoringMode::full, rng);
  EXPECT_EQ(full.network_rows, 210u);
}

TEST(ScoreList, SampledMeansConvergeToFullEnumeration) {
  const auto model = small_model(2, 3, {6, 4}, true, 61);
  Rng rng(62);
  const auto q = random_query(5, 3, rng);
  Rng unused(0);
  const auto exact = score_list(model, q, ScoringMode::full, unused);
  const int draws = 200;
  std::vector<double> sum(5, 0.0), sq(5, 0.0);
  for (int t = 0; t < draws; ++t) {
    Rng r = Rng(63).split("draw", t);
    const auto f = score_list(model, q, ScoringMode::sampled, r);
    for (std::size_t i = 0; i < 5; ++i) {
      sum[i] += f[i];
      sq[i] += f[i] * f[i];
    }
  }
  for (std::size_t i = 0; i < 5; ++i) {
    const double mean = sum[i] / draws;
    const double var = (sq[i] - draws * mean * mean) / (draws - 1);
    const double se = std::sqrt(var / draws);
    // 3 SE per slot keeps the family-wise false alarm rate near 1% over 5 slots
    EXPECT_LE(std::abs(mean - exact[i]), 3 * se + 1e-12) << "slot " << i;
  }
}

TEST(ScoreList, PaddedSlotsAreExcludedAndIgnored) {
  const auto model = small_model(2, 2, {4}, true, 71);
  Rng rng(72);
  auto q = random_query(4, 2, rng);
  q.mask = {1, 1, 0, 1};
  Rng a(3);
  const auto f = score_list(model, q, ScoringMode::sampled, a);
  EXPECT_EQ(f[2], kExcludedScore);
  q.docs[2].features = {1e300, -1e300};  // poison
  Rng b(3);
  EXPECT_EQ(score_list(model, q, ScoringMode::sampled, b), f);
  const auto order = rank(f);
  EXPECT_EQ(std::count(order.begin(), order.end(), 2u), 0);
}

TEST(ScoreList, FewerValidSlotsThanGroupSizeFallsBack) {
  const auto model = small_model(4, 2, {4}, true, 81);
  Rng rng(82);
  const auto q = random_query(2, 2, rng);
  for (auto mode : {ScoringMode::full, ScoringMode::sampled}) {
    const auto f = score_list(model, q, mode, rng);
    EXPECT_TRUE(std::isfinite(f[0]) && std::isfinite(f[1]));
  }
}

TEST(ScoreList, DimensionMismatchThrows) {
  const auto model = small_model(2, 3, {4}, true, 91);
  Rng rng(92);
  const auto q = random_query(4, 2, rng);
  EXPECT_THROW(score_list(model, q, ScoringMode::sampled, rng), DimensionError);
}

TEST(Rank, DescendingWithStableTies) {
  EXPECT_EQ(rank(std::vector<double>{0.1, 0.9, 0.5}), (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(rank(std::vector<double>{1.0, 1.0, 1.0}), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(rank(std::vector<double>{0.2, kExcludedScore, 0.7}), (std::vector<std::size_t>{2, 0}));
}
