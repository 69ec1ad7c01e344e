#pragma once

// Groupwise scoring: the shared network g maps an ordered group of m
// documents to m scores; a document's final score is the sum or the mean of
// the scores it receives across the groups that contain it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gsf/data.hpp"
#include "gsf/error.hpp"
#include "gsf/matrix.hpp"
#include "gsf/nn.hpp"
#include "gsf/rng.hpp"

namespace gsf {

/// Score carried by masked-out slots; ranks below everything and is skipped by losses.
inline constexpr double kExcludedScore = -std::numeric_limits<double>::infinity();

/// Largest group set full enumeration will build.
inline constexpr std::size_t kMaxEnumeratedGroups = 1'000'000;

using ScoreVector = std::vector<double>;
using Group = std::span<const std::size_t>;

enum class GroupOrigin { full, sampled };
enum class ScoringMode { full, sampled };
enum class Aggregation { sum, mean };

/// Ordered m-tuples stored back to back.
class GroupSet {
 public:
  GroupSet() = default;
  GroupSet(std::size_t group_size, GroupOrigin origin) : m_(group_size), origin_(origin) {}

  std::size_t group_size() const noexcept { return m_; }
  GroupOrigin origin() const noexcept { return origin_; }
  std::size_t size() const noexcept { return m_ ? flat_.size() / m_ : 0; }
  bool empty() const noexcept { return flat_.empty(); }

  Group operator[](std::size_t k) const noexcept { return {flat_.data() + k * m_, m_}; }

  void push_back(Group g) {
    if (g.size() != m_) throw DimensionError("group size mismatch");
    flat_.insert(flat_.end(), g.begin(), g.end());
  }

  /// Rewrites every index i as slots[i].
  GroupSet remapped(std::span<const std::size_t> slots) const {
    GroupSet out(m_, origin_);
    out.flat_.reserve(flat_.size());
    for (std::size_t i : flat_) out.flat_.push_back(slots[i]);
    return out;
  }

  /// Number of groups containing each index in [0, n), counting repeats.
  std::vector<std::size_t> occurrences(std::size_t n) const {
    std::vector<std::size_t> c(n, 0);
    for (std::size_t i : flat_) c.at(i) += 1;
    return c;
  }

 private:
  std::size_t m_ = 0;
  GroupOrigin origin_ = GroupOrigin::full;
  std::vector<std::size_t> flat_;
};

/// n! / (n - m)!, saturating at SIZE_MAX.
inline std::size_t permutation_count(std::size_t n, std::size_t m) noexcept {
  std::size_t total = 1;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t f = n - k;
    if (total > std::numeric_limits<std::size_t>::max() / f) return std::numeric_limits<std::size_t>::max();
    total *= f;
  }
  return total;
}

/// Every ordered m-tuple of distinct indices in [0, n_valid), lexicographically.
inline GroupSet enumerate_groups(std::size_t n_valid, std::size_t m,
                                 std::size_t max_groups = kMaxEnumeratedGroups) {
  if (m == 0 || m > n_valid) {
    throw InvalidArgument("enumerate_groups: need 1 <= m <= n (m=" + std::to_string(m) +
                          ", n=" + std::to_string(n_valid) + ")");
  }
  const std::size_t count = permutation_count(n_valid, m);
  if (count > max_groups) {
    throw InvalidArgument("full enumeration refused: " + std::to_string(n_valid) + "!/(" +
                          std::to_string(n_valid) + "-" + std::to_string(m) + ")! groups exceeds " +
                          std::to_string(max_groups));
  }
  GroupSet gs(m, GroupOrigin::full);
  std::vector<std::size_t> cur;
  std::vector<bool> used(n_valid, false);
  cur.reserve(m);
  // depth-first in index order yields lexicographic output
  auto rec = [&](auto&& self) -> void {
    if (cur.size() == m) {
      gs.push_back(cur);
      return;
    }
    for (std::size_t i = 0; i < n_valid; ++i) {
      if (used[i]) continue;
      used[i] = true;
      cur.push_back(i);
      self(self);
      cur.pop_back();
      used[i] = false;
    }
  };
  rec(rec);
  return gs;
}

/// The n circular length-m windows over `order`. Every element lands in
/// exactly m groups, once at each within-group position. When m exceeds
/// the order length the windows wrap more than once and repeat elements.
inline GroupSet circular_windows(std::span<const std::size_t> order, std::size_t m) {
  if (m == 0 || order.empty()) throw InvalidArgument("circular_windows: empty order or m = 0");
  const std::size_t n = order.size();
  GroupSet gs(m, GroupOrigin::sampled);
  std::vector<std::size_t> g(m);
  for (std::size_t start = 0; start < n; ++start) {
    for (std::size_t p = 0; p < m; ++p) g[p] = order[(start + p) % n];
    gs.push_back(g);
  }
  return gs;
}

/// Monte Carlo group set: shuffle once, take the circular windows.
inline GroupSet sample_groups(std::size_t n_valid, std::size_t m, Rng& rng, bool allow_wrap = false) {
  if (m == 0 || n_valid == 0 || (m > n_valid && !allow_wrap)) {
    throw InvalidArgument("sample_groups: need 1 <= m <= n (m=" + std::to_string(m) + ", n=" +
                          std::to_string(n_valid) + ")");
  }
  const auto order = rng.permutation(n_valid);
  return circular_windows(order, m);
}

struct GsfModel {
  std::size_t group_size = 1;
  std::size_t feature_dim = 0;
  std::size_t context_dim = 0;  // query-level prefix; 0 disables it
  nn::ScoringNet net;
  Aggregation aggregation = Aggregation::mean;

  std::size_t input_width() const noexcept { return context_dim + group_size * feature_dim; }

  void validate() const {
    if (group_size == 0) throw InvalidArgument("group size must be >= 1");
    if (net.input_dim() != input_width() || net.output_dim() != group_size) {
      throw DimensionError("net is " + std::to_string(net.input_dim()) + "->" +
                           std::to_string(net.output_dim()) + ", model needs " +
                           std::to_string(input_width()) + "->" + std::to_string(group_size));
    }
  }
};

struct ModelShape {
  std::size_t group_size = 1;
  std::size_t feature_dim = 0;
  std::size_t context_dim = 0;
  std::vector<std::size_t> hidden_dims{64, 32, 16};
  bool batch_norm = true;
  Aggregation aggregation = Aggregation::mean;
};

inline GsfModel make_model(const ModelShape& shape, const Rng& rng) {
  if (shape.group_size == 0 || shape.feature_dim == 0) throw InvalidArgument("make_model: zero dimension");
  GsfModel model;
  model.group_size = shape.group_size;
  model.feature_dim = shape.feature_dim;
  model.context_dim = shape.context_dim;
  model.aggregation = shape.aggregation;
  nn::NetShape ns;
  ns.input_dim = model.input_width();
  ns.hidden_dims = shape.hidden_dims;
  ns.output_dim = shape.group_size;
  ns.batch_norm = shape.batch_norm;
  model.net = nn::build_net(ns, rng);
  return model;
}

/// Writes the network input for one group into `out`: the optional context
/// prefix, then the group's feature vectors in group order.
inline void build_group_input(const QueryList& q, Group g, std::size_t context_dim, std::span<double> out) {
  const std::size_t dim = q.docs.empty() ? 0 : q.docs.front().features.size();
  if (out.size() != context_dim + g.size() * dim) throw DimensionError("build_group_input: output width mismatch");
  if (context_dim) {
    if (q.context.size() != context_dim) throw DimensionError("query context has the wrong width");
    std::copy(q.context.begin(), q.context.end(), out.begin());
  }
  std::size_t off = context_dim;
  for (std::size_t slot : g) {
    if (slot >= q.docs.size() || !q.mask[slot]) {
      throw InvalidArgument("build_group_input: slot " + std::to_string(slot) + " is masked or out of range");
    }
    const auto& f = q.docs[slot].features;
    if (f.size() != dim) throw DimensionError("document feature width mismatch");
    std::copy(f.begin(), f.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
    off += dim;
  }
}

inline std::vector<double> build_group_input(const QueryList& q, Group g, std::size_t context_dim = 0) {
  const std::size_t dim = q.docs.empty() ? 0 : q.docs.front().features.size();
  std::vector<double> out(context_dim + g.size() * dim);
  build_group_input(q, g, context_dim, out);
  return out;
}

/// Per-slot score from per-group score rows (one row of width m per group).
/// Slots with mask 0 get kExcludedScore; a valid slot that no group covers is an error.
inline ScoreVector aggregate(const Matrix& group_scores, const GroupSet& gs, const Mask& mask,
                             Aggregation how) {
  if (group_scores.rows() != gs.size() || group_scores.cols() != gs.group_size()) {
    throw DimensionError("aggregate: need one m-vector per group");
  }
  const std::size_t n = mask.size();
  ScoreVector f(n, 0.0);
  std::vector<std::size_t> count(n, 0);
  for (std::size_t k = 0; k < gs.size(); ++k) {
    Group g = gs[k];
    for (std::size_t p = 0; p < g.size(); ++p) {
      if (g[p] >= n || !mask[g[p]]) throw InvalidArgument("aggregate: group references a masked slot");
      f[g[p]] += group_scores(k, p);
      count[g[p]] += 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) {
      f[i] = kExcludedScore;
      continue;
    }
    if (count[i] == 0) throw InvalidArgument("aggregate: slot " + std::to_string(i) + " is in no group");
    if (how == Aggregation::mean) f[i] /= static_cast<double>(count[i]);
  }
  return f;
}

/// Adjoint of aggregate(): routes dL/df to each group-output entry.
inline Matrix route_score_gradient(std::span<const double> score_grad, const GroupSet& gs, const Mask& mask,
                                   Aggregation how) {
  const auto count = gs.occurrences(mask.size());
  Matrix d(gs.size(), gs.group_size());
  for (std::size_t k = 0; k < gs.size(); ++k) {
    Group g = gs[k];
    for (std::size_t p = 0; p < g.size(); ++p) {
      double v = score_grad[g[p]];
      if (how == Aggregation::mean) v /= static_cast<double>(count[g[p]]);
      d(k, p) = v;
    }
  }
  return d;
}

/// Groups over the valid slots of `q`, expressed as slot indices. Full mode
/// falls back to sampled windows (with wrap-around) when fewer than m slots are valid.
inline GroupSet form_groups(const QueryList& q, std::size_t m, ScoringMode mode, Rng& rng,
                            std::size_t max_groups = kMaxEnumeratedGroups) {
  const auto slots = q.valid_slots();
  if (slots.empty()) return GroupSet(m, mode == ScoringMode::full ? GroupOrigin::full : GroupOrigin::sampled);
  if (mode == ScoringMode::full && m <= slots.size()) {
    return enumerate_groups(slots.size(), m, max_groups).remapped(slots);
  }
  return sample_groups(slots.size(), m, rng, /*allow_wrap=*/true).remapped(slots);
}

/// Stacks the network inputs for every group into one batch matrix.
inline Matrix group_inputs(const GsfModel& model, const QueryList& q, const GroupSet& gs) {
  Matrix in(gs.size(), model.input_width());
  for (std::size_t k = 0; k < gs.size(); ++k) build_group_input(q, gs[k], model.context_dim, in.row(k));
  return in;
}

struct ScoredList {
  ScoreVector scores;
  GroupSet groups;
  Matrix group_scores;
  std::size_t network_rows = 0;  // rows pushed through g
};

inline ScoredList score_list_detailed(const GsfModel& model, const QueryList& q, ScoringMode mode, Rng& rng) {
  model.validate();
  if (!q.docs.empty() && q.docs.front().features.size() != model.feature_dim) {
    throw DimensionError("query '" + q.query_id + "' has " + std::to_string(q.docs.front().features.size()) +
                         " features, model expects " + std::to_string(model.feature_dim));
  }
  if (q.mask.size() != q.docs.size()) throw DimensionError("mask length differs from document count");
  ScoredList out;
  out.groups = form_groups(q, model.group_size, mode, rng);
  if (out.groups.empty()) {
    out.scores.assign(q.size(), kExcludedScore);
    return out;
  }
  const Matrix in = group_inputs(model, q, out.groups);
  out.network_rows = in.rows();
  out.group_scores = nn::infer(model.net, in);
  out.scores = aggregate(out.group_scores, out.groups, q.mask, model.aggregation);
  return out;
}

inline ScoreVector score_list(const GsfModel& model, const QueryList& q, ScoringMode mode, Rng& rng) {
  return score_list_detailed(model, q, mode, rng).scores;
}

/// Slots in descending score order; ties keep ascending slot order and
/// excluded slots are dropped.
inline std::vector<std::size_t> rank(std::span<const double> scores) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] != kExcludedScore) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace gsf
