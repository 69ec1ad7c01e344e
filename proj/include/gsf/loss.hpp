#pragma once

// Ranking losses over one query's per-slot scores. Every loss returns its
// value and the gradient with respect to the scores; masked-out slots are
// skipped entirely and receive zero gradient.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gsf/data.hpp"
#include "gsf/error.hpp"

namespace gsf {

enum class LossKind { softmax_xent, ipw_softmax, listnet, pairwise_logistic };

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::softmax_xent: return "softmax_xent";
    case LossKind::ipw_softmax: return "ipw_softmax";
    case LossKind::listnet: return "listnet";
    case LossKind::pairwise_logistic: return "pairwise_logistic";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  if (s == "softmax_xent") return LossKind::softmax_xent;
  if (s == "ipw_softmax") return LossKind::ipw_softmax;
  if (s == "listnet") return LossKind::listnet;
  if (s == "pairwise_logistic") return LossKind::pairwise_logistic;
  throw InvalidArgument("unknown loss '" + std::string(s) + "'");
}

struct LossOutput {
  double value = 0.0;
  std::vector<double> score_grad;  // per slot, 0 on masked slots
  double query_weight = 0.0;       // sum of valid labels
};

namespace detail {

inline void check_shapes(std::size_t labels, std::size_t scores, std::size_t mask) {
  if (labels != scores || labels != mask) {
    throw DimensionError("loss: labels/scores/mask lengths differ (" + std::to_string(labels) + "/" +
                         std::to_string(scores) + "/" + std::to_string(mask) + ")");
  }
}

// log(1 + e^x) without overflow
inline double softplus(double x) noexcept { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log-softmax over valid slots; masked slots get -inf
inline std::vector<double> log_softmax(std::span<const double> t, const Mask& mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (mask[i]) mx = std::max(mx, t[i]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (mask[i]) sum += std::exp(t[i] - mx);
  }
  const double log_z = mx + std::log(sum);
  std::vector<double> out(t.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (mask[i]) out[i] = t[i] - log_z;
  }
  return out;
}

}  // namespace detail

inline double query_weight(std::span<const double> labels, const Mask& mask) {
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (mask[i]) s += labels[i];
  }
  return s;
}

/// Max-subtracted softmax over the valid slots; masked slots get 0.
inline std::vector<double> softmax(std::span<const double> scores, const Mask& mask) {
  if (scores.size() != mask.size()) throw DimensionError("softmax: scores/mask length mismatch");
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw InvalidArgument("softmax: no valid slot");
  }
  auto ls = detail::log_softmax(scores, mask);
  std::vector<double> p(scores.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mask[i]) p[i] = std::exp(ls[i]);
  }
  return p;
}

/// -sum (y_i / Y) log p_i with Y = sum y_i. A query with Y = 0 has zero loss and gradient.
inline LossOutput softmax_xent(std::span<const double> labels, std::span<const double> scores, const Mask& mask) {
  detail::check_shapes(labels.size(), scores.size(), mask.size());
  LossOutput out;
  out.score_grad.assign(scores.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (mask[i] && labels[i] < 0.0) throw InvalidArgument("softmax_xent: negative label");
  }
  const double total = query_weight(labels, mask);
  out.query_weight = total;
  if (total <= 0.0) return out;
  const auto ls = detail::log_softmax(scores, mask);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask[i]) continue;
    const double target = labels[i] / total;
    if (target > 0.0) out.value -= target * ls[i];
    out.score_grad[i] = std::exp(ls[i]) - target;
  }
  return out;
}

/// -sum over clicked slots of w_i log p_i. Weights are required (non-NaN) on clicked slots.
inline LossOutput ipw_softmax(std::span<const double> clicks, std::span<const double> weights,
                              std::span<const double> scores, const Mask& mask) {
  detail::check_shapes(clicks.size(), scores.size(), mask.size());
  if (weights.size() != clicks.size()) throw DimensionError("ipw_softmax: weights length mismatch");
  LossOutput out;
  out.score_grad.assign(scores.size(), 0.0);
  double total_w = 0.0;
  for (std::size_t i = 0; i < clicks.size(); ++i) {
    if (!mask[i]) continue;
    if (clicks[i] != 0.0 && clicks[i] != 1.0) throw InvalidArgument("ipw_softmax: clicks must be 0 or 1");
    if (clicks[i] == 1.0) {
      if (std::isnan(weights[i])) {
        throw InvalidArgument("ipw_softmax: clicked slot " + std::to_string(i) + " has no weight");
      }
      if (weights[i] < 0.0) throw InvalidArgument("ipw_softmax: negative weight");
      total_w += weights[i];
    }
    out.query_weight += clicks[i];
  }
  if (out.query_weight == 0.0) return out;
  const auto ls = detail::log_softmax(scores, mask);
  for (std::size_t i = 0; i < clicks.size(); ++i) {
    if (!mask[i]) continue;
    double g = total_w * std::exp(ls[i]);
    if (clicks[i] == 1.0) {
      out.value -= weights[i] * ls[i];
      g -= weights[i];
    }
    out.score_grad[i] = g;
  }
  return out;
}

/// Cross entropy between softmax(labels) and softmax(scores).
inline LossOutput listnet(std::span<const double> labels, std::span<const double> scores, const Mask& mask) {
  detail::check_shapes(labels.size(), scores.size(), mask.size());
  LossOutput out;
  out.score_grad.assign(scores.size(), 0.0);
  out.query_weight = query_weight(labels, mask);
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) return out;
  const auto target = softmax(labels, mask);
  const auto ls = detail::log_softmax(scores, mask);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask[i]) continue;
    out.value -= target[i] * ls[i];
    out.score_grad[i] = std::exp(ls[i]) - target[i];
  }
  return out;
}

/// sum over pairs with y_i > y_j of log(1 + exp(-(s_i - s_j))).
inline LossOutput pairwise_logistic(std::span<const double> labels, std::span<const double> scores,
                                    const Mask& mask) {
  detail::check_shapes(labels.size(), scores.size(), mask.size());
  LossOutput out;
  out.score_grad.assign(scores.size(), 0.0);
  out.query_weight = query_weight(labels, mask);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (!mask[j] || !(labels[i] > labels[j])) continue;
      const double diff = scores[i] - scores[j];
      out.value += detail::softplus(-diff);
      const double g = detail::sigmoid(-diff);  // -(d loss / d diff)
      out.score_grad[i] -= g;
      out.score_grad[j] += g;
    }
  }
  return out;
}

/// Dispatch by kind; `weights` is only read by ipw_softmax.
inline LossOutput compute_loss(LossKind kind, std::span<const double> labels, std::span<const double> weights,
                               std::span<const double> scores, const Mask& mask) {
  switch (kind) {
    case LossKind::softmax_xent: return softmax_xent(labels, scores, mask);
    case LossKind::ipw_softmax: return ipw_softmax(labels, weights, scores, mask);
    case LossKind::listnet: return listnet(labels, scores, mask);
    case LossKind::pairwise_logistic: return pairwise_logistic(labels, scores, mask);
  }
  throw InvalidArgument("unknown loss kind");
}

}  // namespace gsf
