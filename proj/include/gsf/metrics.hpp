#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gsf/data.hpp"
#include "gsf/error.hpp"
#include "gsf/rng.hpp"
#include "gsf/scoring.hpp"

namespace gsf {

/// sum_{r=1..min(k,n)} (2^y_r - 1) / log2(r + 1)
inline double dcg_at_k(std::span<const double> labels_in_rank_order, std::size_t k) {
  if (k == 0) throw InvalidArgument("dcg_at_k: k must be >= 1");
  double dcg = 0.0;
  const std::size_t n = std::min(k, labels_in_rank_order.size());
  for (std::size_t r = 0; r < n; ++r) {
    dcg += (std::exp2(labels_in_rank_order[r]) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg;
}

/// NDCG@k of `ranking` (slot indices, best first). Returns nullopt when the
/// query has no relevant document; such queries are left out of means.
/// An empty mask means every slot is valid.
inline std::optional<double> ndcg_at_k(std::span<const double> labels, std::span<const std::size_t> ranking,
                                       std::size_t k, const Mask& mask = {}) {
  const auto valid = [&](std::size_t i) { return mask.empty() || mask[i] != 0; };
  std::vector<std::uint8_t> seen(labels.size(), 0);
  for (std::size_t slot : ranking) {
    if (slot >= labels.size() || !valid(slot) || seen[slot]) {
      throw InvalidArgument("ndcg_at_k: ranking is not a permutation of the valid slots");
    }
    seen[slot] = 1;
  }
  std::vector<double> ideal;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!valid(i)) continue;
    if (!seen[i]) throw InvalidArgument("ndcg_at_k: ranking is not a permutation of the valid slots");
    ideal.push_back(labels[i]);
  }
  if (std::none_of(ideal.begin(), ideal.end(), [](double y) { return y > 0.0; })) return std::nullopt;
  std::stable_sort(ideal.begin(), ideal.end(), std::greater<>());
  std::vector<double> ranked;
  ranked.reserve(ranking.size());
  for (std::size_t slot : ranking) ranked.push_back(labels[slot]);
  return dcg_at_k(ranked, k) / dcg_at_k(ideal, k);
}

inline double mrr(std::span<const std::size_t> click_ranks) {
  if (click_ranks.empty()) throw InvalidArgument("mrr: no ranks");
  double s = 0.0;
  for (std::size_t r : click_ranks) {
    if (r == 0) throw InvalidArgument("mrr: ranks are 1-based");
    s += 1.0 / static_cast<double>(r);
  }
  return s / static_cast<double>(click_ranks.size());
}

struct ClickRecord {
  std::string session_id;
  std::size_t rank = 1;  // 1-based rank of the clicked document
  double weight = 1.0;   // inverse propensity weight
};

/// (sum w_i / rank_i) / (sum w_i)
inline double wmrr(std::span<const ClickRecord> records) {
  double num = 0.0, den = 0.0;
  for (const ClickRecord& r : records) {
    if (r.rank == 0) throw InvalidArgument("wmrr: ranks are 1-based");
    if (r.weight < 0.0) throw InvalidArgument("wmrr: negative weight");
    num += r.weight / static_cast<double>(r.rank);
    den += r.weight;
  }
  if (!(den > 0.0)) throw InvalidArgument("wmrr: weights sum to zero");
  return num / den;
}

struct MetricSpec {
  enum class Kind { ndcg, mrr, wmrr } kind = Kind::ndcg;
  std::size_t k = 0;
  std::string name;
};

inline MetricSpec parse_metric(std::string_view s) {
  if (s == "mrr") return {MetricSpec::Kind::mrr, 0, "mrr"};
  if (s == "wmrr") return {MetricSpec::Kind::wmrr, 0, "wmrr"};
  if (s.starts_with("ndcg@")) {
    std::size_t k = 0;
    if (detail::parse_index(s.substr(5), k) && k > 0) return {MetricSpec::Kind::ndcg, k, std::string(s)};
  }
  throw InvalidArgument("unknown metric '" + std::string(s) + "'");
}

/// Comma-separated metric names.
inline std::vector<MetricSpec> parse_metrics(std::string_view list) {
  std::vector<MetricSpec> out;
  while (!list.empty()) {
    const auto comma = list.find(',');
    std::string_view item = list.substr(0, comma);
    if (!item.empty()) out.push_back(parse_metric(item));
    if (comma == std::string_view::npos) break;
    list.remove_prefix(comma + 1);
  }
  if (out.empty()) throw InvalidArgument("no metrics requested");
  return out;
}

struct EvalReport {
  std::vector<std::pair<std::string, double>> metrics;  // in request order
  std::size_t used = 0;
  std::size_t discarded = 0;

  double at(std::string_view name) const {
    for (const auto& [k, v] : metrics) {
      if (k == name) return v;
    }
    throw InvalidArgument("metric '" + std::string(name) + "' not in report");
  }
};

/// Per-query metric values for an already-ranked list. Returns nullopt for
/// queries without any relevant document. MRR/WMRR use the first relevant
/// document in the ranking (the click, for click data).
inline std::optional<std::vector<double>> query_metrics(const QueryList& q, std::span<const std::size_t> ranking,
                                                        std::span<const MetricSpec> metrics) {
  const auto labels = q.labels();
  std::vector<double> values;
  values.reserve(metrics.size());
  std::size_t first_rel = 0;
  while (first_rel < ranking.size() && !(labels[ranking[first_rel]] > 0.0)) ++first_rel;
  if (first_rel == ranking.size()) return std::nullopt;
  for (const MetricSpec& m : metrics) {
    switch (m.kind) {
      case MetricSpec::Kind::ndcg: values.push_back(*ndcg_at_k(labels, ranking, m.k, q.mask)); break;
      case MetricSpec::Kind::mrr:
      case MetricSpec::Kind::wmrr: values.push_back(1.0 / static_cast<double>(first_rel + 1)); break;
    }
  }
  return values;
}

/// Scores and ranks every query, then averages each metric over the queries
/// that have a relevant document. WMRR weights each query by the weight of
/// its first relevant document. Query i draws groups from seed/"eval"/i.
inline EvalReport evaluate(const GsfModel& model, const Dataset& ds, std::span<const MetricSpec> metrics,
                           ScoringMode mode, std::uint64_t seed) {
  const Rng root(seed);
  std::vector<double> sums(metrics.size(), 0.0);
  std::vector<double> weight_sums(metrics.size(), 0.0);
  EvalReport report;
  for (std::size_t qi = 0; qi < ds.queries.size(); ++qi) {
    const QueryList& q = ds.queries[qi];
    Rng rng = root.split("eval", qi);
    const auto scores = score_list(model, q, mode, rng);
    const auto ranking = rank(scores);
    const auto values = query_metrics(q, ranking, metrics);
    if (!values) {
      ++report.discarded;
      continue;
    }
    ++report.used;
    std::size_t first_rel = 0;
    while (!(q.docs[ranking[first_rel]].label > 0.0)) ++first_rel;
    const double w = q.docs[ranking[first_rel]].weight;
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      const double qw = metrics[m].kind == MetricSpec::Kind::wmrr ? w : 1.0;
      sums[m] += qw * (*values)[m];
      weight_sums[m] += qw;
    }
  }
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    const double v = weight_sums[m] > 0.0 ? sums[m] / weight_sums[m] : 0.0;
    report.metrics.emplace_back(metrics[m].name, v);
  }
  return report;
}

}  // namespace gsf
