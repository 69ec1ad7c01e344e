#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "gsf/data.hpp"
#include "gsf/error.hpp"
#include "gsf/loss.hpp"
#include "gsf/metrics.hpp"
#include "gsf/nn.hpp"
#include "gsf/rng.hpp"
#include "gsf/scoring.hpp"

namespace gsf {

struct TrainConfig {
  std::size_t group_size = 1;
  std::vector<std::size_t> hidden_dims{64, 32, 16};
  bool use_batch_norm = true;
  double learning_rate = 0.005;
  std::size_t batch_size = 128;
  std::size_t steps = 30000;
  std::size_t list_size = 200;
  LossKind loss = LossKind::softmax_xent;
  std::uint64_t seed = 0;
  bool query_weighting = false;
  std::size_t eval_every = 1000;
  Aggregation aggregation = Aggregation::mean;
  double clip_norm = 0.0;  // global-norm clipping; 0 disables
  double adagrad_initial = 0.1;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;
  std::string eval_metrics = "ndcg@1,ndcg@5,ndcg@10";

  void validate() const {
    if (group_size == 0) throw InvalidArgument("group_size must be >= 1");
    if (hidden_dims.empty() || std::find(hidden_dims.begin(), hidden_dims.end(), 0u) != hidden_dims.end()) {
      throw InvalidArgument("hidden_dims must be a non-empty list of positive sizes");
    }
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
    if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
    if (list_size == 0) throw InvalidArgument("list_size must be >= 1");
    if (eval_every == 0) throw InvalidArgument("eval_every must be >= 1");
    if (clip_norm < 0.0) throw InvalidArgument("clip_norm must be >= 0");
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw InvalidArgument("bn_momentum must be in [0,1)");
    if (!(bn_epsilon > 0.0)) throw InvalidArgument("bn_epsilon must be positive");
    parse_metrics(eval_metrics);
  }

  ModelShape model_shape(std::size_t feature_dim, std::size_t context_dim = 0) const {
    ModelShape s;
    s.group_size = group_size;
    s.feature_dim = feature_dim;
    s.context_dim = context_dim;
    s.hidden_dims = hidden_dims;
    s.batch_norm = use_batch_norm;
    s.aggregation = aggregation;
    return s;
  }
};

inline GsfModel make_model(const TrainConfig& config, std::size_t feature_dim, std::size_t context_dim = 0) {
  GsfModel model = make_model(config.model_shape(feature_dim, context_dim), Rng(config.seed).split("init"));
  for (auto& layer : model.net.hidden) {
    if (layer.norm) {
      layer.norm->momentum = config.bn_momentum;
      layer.norm->epsilon = config.bn_epsilon;
    }
  }
  return model;
}

/// Weighted listwise objective over a batch of lists with fixed groups:
/// L = sum_q w_q l_q / sum_q w_q, where w_q is the query's label sum under
/// query weighting and 1 otherwise.
struct BatchObjective {
  double loss = 0.0;
  double weight_sum = 0.0;
  std::vector<double> query_losses;
  nn::Gradients grads;       // filled when requested and weight_sum > 0
  nn::ForwardCache cache;
  std::size_t network_rows = 0;
};

inline BatchObjective batch_objective(const GsfModel& model, std::span<const QueryList> lists,
                                      std::span<const GroupSet> groups, LossKind kind, bool query_weighting,
                                      bool with_gradients) {
  if (lists.size() != groups.size()) throw DimensionError("batch_objective: one group set per list");
  std::size_t rows = 0;
  for (const GroupSet& gs : groups) rows += gs.size();
  Matrix inputs(rows, model.input_width());
  std::vector<std::size_t> offset(lists.size() + 1, 0);
  for (std::size_t q = 0; q < lists.size(); ++q) {
    for (std::size_t k = 0; k < groups[q].size(); ++k) {
      build_group_input(lists[q], groups[q][k], model.context_dim, inputs.row(offset[q] + k));
    }
    offset[q + 1] = offset[q] + groups[q].size();
  }
  BatchObjective obj;
  obj.network_rows = rows;
  if (rows == 0) return obj;
  auto fwd = nn::forward(model.net, inputs, nn::Mode::train);

  std::vector<LossOutput> losses;
  std::vector<double> weights;
  for (std::size_t q = 0; q < lists.size(); ++q) {
    const QueryList& list = lists[q];
    Matrix group_scores(groups[q].size(), model.group_size);
    for (std::size_t k = 0; k < groups[q].size(); ++k) {
      auto src = fwd.outputs.row(offset[q] + k);
      std::copy(src.begin(), src.end(), group_scores.row(k).begin());
    }
    if (groups[q].empty()) {
      losses.push_back(LossOutput{0.0, std::vector<double>(list.size(), 0.0), 0.0});
      weights.push_back(0.0);
      continue;
    }
    const auto scores = aggregate(group_scores, groups[q], list.mask, model.aggregation);
    const auto labels = list.labels();
    const auto w = list.weights();
    LossOutput lo = compute_loss(kind, labels, w, scores, list.mask);
    weights.push_back(query_weighting ? lo.query_weight : 1.0);
    losses.push_back(std::move(lo));
  }
  for (std::size_t q = 0; q < lists.size(); ++q) {
    obj.weight_sum += weights[q];
    obj.loss += weights[q] * losses[q].value;
    obj.query_losses.push_back(losses[q].value);
  }
  if (obj.weight_sum > 0.0) obj.loss /= obj.weight_sum;

  if (with_gradients && obj.weight_sum > 0.0) {
    Matrix dout(rows, model.group_size);
    for (std::size_t q = 0; q < lists.size(); ++q) {
      if (groups[q].empty() || weights[q] == 0.0) continue;
      std::vector<double> g = losses[q].score_grad;
      for (double& v : g) v *= weights[q] / obj.weight_sum;
      const Matrix routed = route_score_gradient(g, groups[q], lists[q].mask, model.aggregation);
      for (std::size_t k = 0; k < routed.rows(); ++k) {
        auto src = routed.row(k);
        std::copy(src.begin(), src.end(), dout.row(offset[q] + k).begin());
      }
    }
    obj.grads = nn::backward(model.net, fwd.cache, dout).grads;
  }
  obj.cache = std::move(fwd.cache);
  return obj;
}

struct EvalPoint {
  std::size_t step = 0;
  double train_loss = 0.0;  // mean batch loss since the previous point
  double seconds_per_step = 0.0;
  std::vector<std::pair<std::string, double>> metrics;  // empty without validation data
};

struct TrainReport {
  std::vector<EvalPoint> points;
  std::vector<double> loss_history;  // one batch loss per step
};

struct TrainResult {
  GsfModel model;
  TrainReport report;
};

/// Mini-batch Adagrad training with sampled groups redrawn every step.
inline TrainResult train(const TrainConfig& config, const Dataset& train_ds, const Dataset& valid_ds,
                         const std::function<void(const EvalPoint&)>& on_eval = {}) {
  config.validate();
  if (train_ds.empty()) throw InvalidArgument("train: empty training set");
  if (!valid_ds.empty() && valid_ds.feature_dim != train_ds.feature_dim) {
    throw DimensionError("train: validation feature dimension differs from training");
  }
  if (config.loss == LossKind::ipw_softmax && train_ds.label_kind != LabelKind::binary) {
    throw InvalidArgument("train: ipw_softmax needs binary click labels");
  }
  const std::size_t context_dim = train_ds.queries.front().context.size();
  TrainResult result{make_model(config, train_ds.feature_dim, context_dim), {}};
  GsfModel& model = result.model;
  if (config.steps == 0) return result;

  const Rng root(config.seed);
  BatchStream stream(train_ds.size(), config.batch_size, root.split("batches"));
  Rng list_rng = root.split("lists");
  Rng group_rng = root.split("groups");
  auto adagrad = nn::make_adagrad_state(model.net, config.adagrad_initial);
  const auto metrics = parse_metrics(config.eval_metrics);

  double interval_loss = 0.0;
  std::size_t interval_steps = 0;
  auto interval_start = std::chrono::steady_clock::now();
  std::vector<QueryList> lists;
  std::vector<GroupSet> groups;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    lists.clear();
    groups.clear();
    for (std::size_t qi : stream.next()) {
      lists.push_back(normalize_list(train_ds.queries[qi], config.list_size, list_rng));
      groups.push_back(form_groups(lists.back(), config.group_size, ScoringMode::sampled, group_rng));
    }
    std::size_t rows = 0;
    for (const auto& g : groups) rows += g.size();
    const bool trainable = !(model.net.has_batch_norm() && rows < 2);
    if (trainable) {
      BatchObjective obj;
      try {
        obj = batch_objective(model, lists, groups, config.loss, config.query_weighting, true);
      } catch (const NumericError& e) {
        throw DivergenceError(step, e.what());
      }
      if (!std::isfinite(obj.loss)) throw DivergenceError(step);
      if (obj.weight_sum > 0.0) {
        if (config.clip_norm > 0.0) {
          const double norm = nn::global_norm(obj.grads);
          if (!std::isfinite(norm)) throw DivergenceError(step, "non-finite gradient norm");
          if (norm > config.clip_norm) nn::scale(obj.grads, config.clip_norm / norm);
        }
        nn::adagrad_step(model.net, obj.grads, adagrad, config.learning_rate);
        nn::update_running_stats(model.net, obj.cache);
      }
      result.report.loss_history.push_back(obj.loss);
      interval_loss += obj.loss;
    } else {
      result.report.loss_history.push_back(0.0);
    }
    ++interval_steps;

    if (step % config.eval_every == 0 || step == config.steps) {
      const auto now = std::chrono::steady_clock::now();
      EvalPoint pt;
      pt.step = step;
      pt.train_loss = interval_loss / static_cast<double>(interval_steps);
      pt.seconds_per_step =
          std::chrono::duration<double>(now - interval_start).count() / static_cast<double>(interval_steps);
      if (!valid_ds.empty()) {
        pt.metrics = evaluate(model, valid_ds, metrics, ScoringMode::sampled, root.split("valid").seed()).metrics;
      }
      if (on_eval) on_eval(pt);
      result.report.points.push_back(std::move(pt));
      interval_loss = 0.0;
      interval_steps = 0;
      interval_start = std::chrono::steady_clock::now();
    }
  }
  return result;
}

struct GradcheckReport {
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // parameters whose +-h perturbation crossed a ReLU kink
  bool all_zero = true;
};

/// Relative error with a floor on the denominator so that gradients that are
/// zero up to roundoff do not register as failures.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Denominator floor for a central difference of a loss of size `loss`:
/// rounding in the two evaluations leaves about eps * |loss| / step of
/// absolute noise, and the floor sits 1e5 times above that.
inline double finite_difference_floor(double loss, double step) {
  return std::max(1e-7, 1e5 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(loss)) / step);
}

namespace detail {

inline std::vector<std::uint8_t> relu_pattern(const nn::ForwardCache& cache) {
  std::vector<std::uint8_t> p;
  for (const auto& l : cache.layers) {
    for (double v : l.pre_activation.values()) p.push_back(v > 0.0);
  }
  return p;
}

}  // namespace detail

/// Compares the end-to-end analytic gradient (loss -> aggregation -> g ->
/// parameters) with central differences on one list, using one fixed draw
/// of sampled groups.
inline GradcheckReport gradcheck(const TrainConfig& config, const QueryList& sample, double step = 1e-5) {
  if (sample.docs.empty()) throw InvalidArgument("gradcheck: empty sample");
  GsfModel model = make_model(config, sample.docs.front().features.size(), sample.context.size());
  Rng group_rng = Rng(config.seed).split("gradcheck-groups");
  std::vector<QueryList> lists{sample};
  std::vector<GroupSet> groups{form_groups(sample, config.group_size, ScoringMode::sampled, group_rng)};
  BatchObjective base = batch_objective(model, lists, groups, config.loss, config.query_weighting, true);

  GradcheckReport report;
  if (base.weight_sum == 0.0) {
    base.grads = nn::gradients_like(model.net);
  }
  const auto base_pattern = detail::relu_pattern(base.cache);
  auto params = nn::parameter_views(model.net);
  auto analytic = nn::parameter_views(base.grads);
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double a = analytic[t][i];
      report.all_zero = report.all_zero && a == 0.0;
      report.max_abs_grad = std::max(report.max_abs_grad, std::abs(a));
      const double orig = params[t][i];
      params[t][i] = orig + step;
      auto plus = batch_objective(model, lists, groups, config.loss, config.query_weighting, false);
      params[t][i] = orig - step;
      auto minus = batch_objective(model, lists, groups, config.loss, config.query_weighting, false);
      params[t][i] = orig;
      if (detail::relu_pattern(plus.cache) != base_pattern || detail::relu_pattern(minus.cache) != base_pattern) {
        ++report.skipped_kinks;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * step);
      report.max_rel_error = std::max(report.max_rel_error, relative_error(a, numeric, finite_difference_floor(base.loss, step)));
      ++report.checked;
    }
  }
  return report;
}

struct SweepRow {
  std::size_t group_size = 0;
  double mean = 0.0;
  double ci95 = 0.0;  // half width of the 95% t interval
  std::vector<double> trials;
  double p_value_vs_first = 1.0;  // two-sided paired t-test against the first row
};

/// Half width of the 95% Student-t confidence interval of the mean.
inline double ci95_half_width(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  boost::math::students_t dist(static_cast<double>(n - 1));
  return boost::math::quantile(boost::math::complement(dist, 0.025)) * sd / std::sqrt(static_cast<double>(n));
}

/// Two-sided paired t-test p-value for H0: mean(a - b) = 0.
inline double paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("paired_t_test: samples differ in size");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) return mean == 0.0 ? 1.0 : 0.0;
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(static_cast<double>(n - 1));
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

/// Trains `trials` models per group size and evaluates `metric` on the test
/// set. Trial t uses the same derived seed for every group size, so rows are
/// paired by trial.
inline std::vector<SweepRow> run_group_size_sweep(const TrainConfig& base, std::span<const std::size_t> group_sizes,
                                                  std::size_t trials, const std::string& metric,
                                                  const Dataset& train_ds, const Dataset& test_ds) {
  if (trials == 0) throw InvalidArgument("sweep: trials must be >= 1");
  const MetricSpec spec = parse_metric(metric);
  const std::vector<MetricSpec> specs{spec};
  const Rng root(base.seed);
  std::vector<SweepRow> rows;
  for (std::size_t m : group_sizes) {
    if (m > base.list_size) throw InvalidArgument("sweep: group size exceeds list size");
    SweepRow row;
    row.group_size = m;
    for (std::size_t t = 0; t < trials; ++t) {
      TrainConfig cfg = base;
      cfg.group_size = m;
      cfg.seed = root.split("trial", t).seed();
      cfg.eval_every = cfg.steps > 0 ? cfg.steps : 1;
      const auto trained = train(cfg, train_ds, Dataset{});
      const auto rep = evaluate(trained.model, test_ds, specs, ScoringMode::sampled, Rng(cfg.seed).split("test").seed());
      row.trials.push_back(rep.at(spec.name));
    }
    for (double v : row.trials) row.mean += v;
    row.mean /= static_cast<double>(trials);
    row.ci95 = ci95_half_width(row.trials);
    rows.push_back(std::move(row));
  }
  for (SweepRow& r : rows) r.p_value_vs_first = paired_t_test(r.trials, rows.front().trials);
  return rows;
}

}  // namespace gsf
