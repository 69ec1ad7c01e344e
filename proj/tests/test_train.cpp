#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "gsf/train.hpp"
#include "support.hpp"

using namespace gsf;

namespace {

std::vector<double> flat_params(GsfModel& m) {
  std::vector<double> out;
  for (auto v : nn::parameter_views(m.net)) out.insert(out.end(), v.begin(), v.end());
  for (const auto& l : m.net.hidden) {
    if (l.norm) {
      out.insert(out.end(), l.norm->running_mean.begin(), l.norm->running_mean.end());
      out.insert(out.end(), l.norm->running_var.begin(), l.norm->running_var.end());
    }
  }
  return out;
}

// Lists where the single relevant document is the one with the largest feature.
Dataset argmax_task(std::size_t queries, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<QueryList> qs;
  for (std::size_t i = 0; i < queries; ++i) {
    QueryList q;
    q.query_id = std::to_string(i);
    std::size_t best = 0;
    for (std::size_t j = 0; j < n; ++j) {
      q.docs.push_back({{rng.normal()}, 0.0});
      if (q.docs[j].features[0] > q.docs[best].features[0]) best = j;
    }
    q.docs[best].label = 1.0;
    q.mask.assign(n, 1);
    qs.push_back(std::move(q));
  }
  return fixture::make_dataset(qs);
}

TrainConfig small_config() {
  TrainConfig c;
  c.hidden_dims = {8, 4};
  c.batch_size = 8;
  c.list_size = 10;
  c.steps = 20;
  c.eval_every = 10;
  return c;
}

}  // namespace

TEST(TrainConfig, Validation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  auto c = small_config();
  c.group_size = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = small_config();
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = small_config();
  c.hidden_dims = {4, 0};
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = small_config();
  c.eval_metrics = "bogus";
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(TrainConfig, Defaults) {
  const TrainConfig c;
  EXPECT_EQ(c.hidden_dims, (std::vector<std::size_t>{64, 32, 16}));
  EXPECT_TRUE(c.use_batch_norm);
  EXPECT_EQ(c.learning_rate, 0.005);
  EXPECT_EQ(c.batch_size, 128u);
  EXPECT_EQ(c.steps, 30000u);
}

TEST(Train, ZeroStepsReturnsInitialModel) {
  const auto ds = argmax_task(10, 5, 1);
  auto c = small_config();
  c.steps = 0;
  auto trained = train(c, ds, Dataset{}).model;
  auto init = make_model(c, ds.feature_dim);
  EXPECT_EQ(flat_params(trained), flat_params(init));
}

TEST(Train, LossHalvesOnSeparableTask) {
  const auto ds = argmax_task(200, 10, 2);
  TrainConfig c;
  c.group_size = 1;
  c.steps = 2000;
  c.batch_size = 16;
  c.list_size = 10;
  c.eval_every = 500;
  c.seed = 3;
  const auto result = train(c, ds, Dataset{});
  const auto& h = result.report.loss_history;
  ASSERT_EQ(h.size(), 2000u);
  const double start = h.front();
  const double end = std::accumulate(h.end() - 100, h.end(), 0.0) / 100.0;
  EXPECT_LE(end, 0.5 * start) << "start " << start << " end " << end;
  ASSERT_EQ(result.report.points.size(), 4u);
  for (std::size_t i = 1; i < result.report.points.size(); ++i) {
    EXPECT_GT(result.report.points[i].step, result.report.points[i - 1].step);
  }
}

TEST(Train, DeterministicForSeed) {
  const auto ds = argmax_task(30, 6, 4);
  auto c = small_config();
  c.group_size = 2;
  c.seed = 17;
  auto a = train(c, ds, ds).model;
  auto b = train(c, ds, ds).model;
  EXPECT_EQ(flat_params(a), flat_params(b));
  c.seed = 18;
  auto d = train(c, ds, ds).model;
  EXPECT_NE(flat_params(a), flat_params(d));
}

TEST(Train, ReportsValidationMetrics) {
  const auto ds = argmax_task(20, 6, 5);
  auto c = small_config();
  std::vector<std::size_t> seen;
  const auto r = train(c, ds, ds, [&](const EvalPoint& p) { seen.push_back(p.step); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{10, 20}));
  ASSERT_EQ(r.report.points.back().metrics.size(), 3u);
  EXPECT_EQ(r.report.points.back().metrics[0].first, "ndcg@1");
}

TEST(Train, IpwNeedsBinaryLabels) {
  Rng rng(6);
  const auto ds = fixture::make_dataset({fixture::random_query(5, 2, rng, 3)});
  auto c = small_config();
  c.loss = LossKind::ipw_softmax;
  EXPECT_THROW(train(c, ds, Dataset{}), InvalidArgument);
}

TEST(Train, DivergenceIsReportedWithStep) {
  // Adagrad moves every touched parameter by about the learning rate on the
  // first step, so a huge rate overflows the next forward pass.
  const auto ds = argmax_task(10, 5, 7);
  auto c = small_config();
  c.batch_size = 10;
  c.learning_rate = 1e300;
  try {
    train(c, ds, Dataset{});
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 2u);
    EXPECT_NE(std::string(e.what()).find("at step 2"), std::string::npos) << e.what();
  }
}

TEST(Gradcheck, GroupwiseSoftmax) {
  Rng rng(8);
  const auto q = fixture::random_query(5, 3, rng, 2);
  auto c = small_config();
  c.group_size = 2;
  const auto rep = gradcheck(c, q);
  EXPECT_LE(rep.max_rel_error, 1e-4);
  EXPECT_GT(rep.checked, 50u);
}

TEST(Gradcheck, UnivariatePairwise) {
  Rng rng(9);
  const auto q = fixture::random_query(5, 3, rng, 3);
  auto c = small_config();
  c.group_size = 1;
  c.loss = LossKind::pairwise_logistic;
  EXPECT_LE(gradcheck(c, q).max_rel_error, 1e-4);
}

TEST(Gradcheck, ZeroLabelQueryHasZeroGradient) {
  Rng rng(10);
  auto q = fixture::random_query(4, 2, rng);
  for (auto& d : q.docs) d.label = 0.0;
  auto c = small_config();
  c.group_size = 2;
  const auto rep = gradcheck(c, q);
  EXPECT_TRUE(rep.all_zero);
  EXPECT_EQ(rep.max_abs_grad, 0.0);
}

TEST(BatchObjective, RoutedGradientsSumToScoreGradient) {
  Rng rng(11);
  for (auto agg : {Aggregation::sum, Aggregation::mean}) {
    const auto q = fixture::random_query(6, 2, rng);
    const auto gs = enumerate_groups(6, 3);
    std::vector<double> dscore(6);
    for (double& v : dscore) v = rng.normal();
    const Matrix routed = route_score_gradient(dscore, gs, q.mask, agg);
    const auto count = gs.occurrences(6);
    std::vector<double> back(6, 0.0);
    for (std::size_t k = 0; k < gs.size(); ++k) {
      for (std::size_t p = 0; p < 3; ++p) back[gs[k][p]] += routed(k, p);
    }
    for (std::size_t i = 0; i < 6; ++i) {
      const double expected = agg == Aggregation::sum ? dscore[i] * count[i] : dscore[i];
      EXPECT_NEAR(back[i], expected, 1e-12);
    }
  }
}

TEST(BatchObjective, QueryWeightingMixesGradients) {
  Rng rng(12);
  auto a = fixture::random_query(4, 2, rng);
  auto b = fixture::random_query(4, 2, rng);
  for (std::size_t i = 0; i < 4; ++i) {
    a.docs[i].label = i == 0 ? 2.0 : (i == 1 ? 1.0 : 0.0);  // weight 3
    b.docs[i].label = i == 2 ? 1.0 : 0.0;                   // weight 1
  }
  // No batch norm, so each query's contribution is independent of the other rows.
  const auto model = fixture::small_model(1, 2, {5}, false, 13);
  const std::vector<GroupSet> ga{enumerate_groups(4, 1)}, gb{enumerate_groups(4, 1)};
  const std::vector<QueryList> la{a}, lb{b}, both{a, b};
  const std::vector<GroupSet> gboth{ga[0], gb[0]};
  const auto oa = batch_objective(model, la, ga, LossKind::softmax_xent, false, true);
  const auto ob = batch_objective(model, lb, gb, LossKind::softmax_xent, false, true);
  const auto weighted = batch_objective(model, both, gboth, LossKind::softmax_xent, true, true);
  const auto plain = batch_objective(model, both, gboth, LossKind::softmax_xent, false, true);
  EXPECT_EQ(weighted.weight_sum, 4.0);
  EXPECT_EQ(plain.weight_sum, 2.0);
  EXPECT_NEAR(weighted.loss, (3 * oa.loss + ob.loss) / 4, 1e-14);
  auto gw = weighted.grads, gp = plain.grads, g1 = oa.grads, g2 = ob.grads;
  auto vw = nn::parameter_views(gw), vp = nn::parameter_views(gp);
  auto v1 = nn::parameter_views(g1), v2 = nn::parameter_views(g2);
  double diff = 0.0;
  for (std::size_t t = 0; t < vw.size(); ++t) {
    for (std::size_t i = 0; i < vw[t].size(); ++i) {
      EXPECT_NEAR(vw[t][i], 0.75 * v1[t][i] + 0.25 * v2[t][i], 1e-12);
      EXPECT_NEAR(vp[t][i], 0.5 * v1[t][i] + 0.5 * v2[t][i], 1e-12);
      diff = std::max(diff, std::abs(vw[t][i] - vp[t][i]));
    }
  }
  EXPECT_GT(diff, 1e-6);
}

TEST(Sweep, StatisticsHelpers) {
  const std::vector<double> xs{1, 2, 3};
  EXPECT_NEAR(ci95_half_width(xs), 2.4841377117195456, 1e-9);
  EXPECT_EQ(ci95_half_width(std::vector<double>{0.4}), 0.0);
  const std::vector<double> a{0.5, 0.7, 0.9, 0.4, 0.8}, b{0.45, 0.6, 0.92, 0.3, 0.7};
  EXPECT_NEAR(paired_t_test(a, b), 0.04886016543355393, 1e-9);
  EXPECT_EQ(paired_t_test(a, a), 1.0);
}

TEST(Sweep, RowsPerGroupSize) {
  const auto ds = argmax_task(20, 6, 14);
  auto c = small_config();
  c.steps = 5;
  const std::vector<std::size_t> ms{1, 2, 3};
  const auto rows = run_group_size_sweep(c, ms, 2, "ndcg@5", ds, ds);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2].group_size, 3u);
  EXPECT_EQ(rows[0].p_value_vs_first, 1.0);
  const std::vector<std::size_t> one{2};
  const auto single = run_group_size_sweep(c, one, 1, "ndcg@5", ds, ds);
  EXPECT_EQ(single[0].ci95, 0.0);
}
