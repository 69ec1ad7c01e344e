#pragma once

// Shared fixtures for the unit tests.

#include <cstddef>
#include <string>
#include <vector>

#include "gsf/data.hpp"
#include "gsf/rng.hpp"
#include "gsf/scoring.hpp"

namespace gsf::fixture {

/// n documents with standard-normal features and labels drawn from [0, max_label].
inline QueryList random_query(std::size_t n, std::size_t dim, Rng& rng, std::size_t max_label = 4,
                              const std::string& id = "q") {
  QueryList q;
  q.query_id = id;
  for (std::size_t i = 0; i < n; ++i) {
    Document d;
    for (std::size_t j = 0; j < dim; ++j) d.features.push_back(rng.normal());
    d.label = static_cast<double>(rng.below(max_label + 1));
    q.docs.push_back(std::move(d));
  }
  q.mask.assign(n, 1);
  return q;
}

/// Small model whose batch-norm running statistics are non-trivial.
inline GsfModel small_model(std::size_t m, std::size_t dim, std::vector<std::size_t> hidden, bool bn,
                            std::uint64_t seed, Aggregation agg = Aggregation::mean) {
  ModelShape shape;
  shape.group_size = m;
  shape.feature_dim = dim;
  shape.hidden_dims = std::move(hidden);
  shape.batch_norm = bn;
  shape.aggregation = agg;
  Rng rng(seed);
  GsfModel model = make_model(shape, rng);
  Rng p = rng.split("stats");
  for (auto& l : model.net.hidden) {
    for (double& b : l.affine.bias) b = 0.1 * p.normal();
    if (l.norm) {
      for (double& v : l.norm->running_mean) v = 0.2 * p.normal();
      for (double& v : l.norm->running_var) v = 0.5 + p.uniform();
    }
  }
  return model;
}

inline Dataset make_dataset(std::vector<QueryList> queries) {
  Dataset ds;
  ds.feature_dim = queries.empty() || queries.front().docs.empty() ? 0 : queries.front().docs.front().features.size();
  ds.queries = std::move(queries);
  bool binary = true;
  for (const auto& q : ds.queries) {
    for (const auto& d : q.docs) binary = binary && (d.label == 0.0 || d.label == 1.0);
  }
  ds.label_kind = binary ? LabelKind::binary : LabelKind::graded;
  return ds;
}

}  // namespace gsf::fixture
