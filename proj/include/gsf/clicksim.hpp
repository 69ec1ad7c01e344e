#pragma once

// Position-biased click simulation. Rank r is examined with probability
// (1/r)^eta; an examined document attracts a click with probability
// 1 - noise when relevant and noise otherwise. The first attracted
// examined document is the session's only click.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gsf/data.hpp"
#include "gsf/error.hpp"
#include "gsf/rng.hpp"

namespace gsf {

inline constexpr std::size_t kMaxPresented = 6;

struct BiasModel {
  double eta = 1.0;
  double click_noise = 0.0;

  double examination(std::size_t rank) const { return std::pow(1.0 / static_cast<double>(rank), eta); }
  /// Inverse of the examination probability.
  double propensity_weight(std::size_t rank) const { return std::pow(static_cast<double>(rank), eta); }
  double perception(bool relevant) const { return relevant ? 1.0 - click_noise : click_noise; }

  void validate() const {
    if (!(eta >= 0.0)) throw InvalidArgument("bias: eta must be >= 0");
    if (!(click_noise >= 0.0 && click_noise < 1.0)) throw InvalidArgument("bias: click noise must be in [0,1)");
  }
};

struct SessionOutcome {
  std::optional<std::size_t> clicked_slot;
  std::size_t clicked_rank = 0;   // 1-based, 0 without a click
  std::vector<std::uint8_t> examined;   // per presented rank
  std::vector<std::uint8_t> attracted;  // examined and perceived relevant
};

/// Simulates one session over the first kMaxPresented entries of `presented`.
inline SessionOutcome simulate_session(const QueryList& q, std::span<const std::size_t> presented,
                                       const BiasModel& bias, Rng& rng) {
  const std::size_t shown = std::min(presented.size(), kMaxPresented);
  SessionOutcome out;
  out.examined.assign(shown, 0);
  out.attracted.assign(shown, 0);
  for (std::size_t r = 0; r < shown; ++r) {
    const std::size_t slot = presented[r];
    if (slot >= q.size() || !q.mask[slot]) throw InvalidArgument("simulate_session: invalid presented slot");
    const bool seen = rng.bernoulli(bias.examination(r + 1));
    const bool perceived = rng.bernoulli(bias.perception(q.docs[slot].label > 0.0));
    out.examined[r] = seen;
    out.attracted[r] = seen && perceived;
    if (out.attracted[r] && !out.clicked_slot) {
      out.clicked_slot = slot;
      out.clicked_rank = r + 1;
    }
  }
  return out;
}

/// One logged session that received a click.
struct ClickSession {
  std::string session_id;
  QueryList presented;  // presented documents in display order, labels = clicks
  std::size_t clicked_rank = 0;
  double weight = 1.0;
};

struct ClickLog {
  std::vector<ClickSession> sessions;
  std::size_t feature_dim = 0;
};

using Ranker = std::function<std::vector<std::size_t>(const QueryList&)>;

/// Logs `sessions_per_query` sessions for every query under `ranker`,
/// keeping only sessions with a click. Session s of query i uses the
/// stream rng/"session"/(i * sessions_per_query + s).
inline ClickLog build_click_log(const Dataset& ds, const Ranker& ranker, const BiasModel& bias, const Rng& rng,
                                std::size_t sessions_per_query) {
  bias.validate();
  if (ds.label_kind != LabelKind::binary) throw InvalidArgument("click simulation needs binary relevance labels");
  ClickLog log;
  log.feature_dim = ds.feature_dim;
  for (std::size_t qi = 0; qi < ds.queries.size(); ++qi) {
    const QueryList& q = ds.queries[qi];
    const auto ranking = ranker(q);
    const std::size_t shown = std::min(ranking.size(), kMaxPresented);
    for (std::size_t s = 0; s < sessions_per_query; ++s) {
      Rng srng = rng.split("session", qi * sessions_per_query + s);
      const auto outcome = simulate_session(q, ranking, bias, srng);
      if (!outcome.clicked_slot) continue;
      ClickSession cs;
      cs.session_id = q.query_id + "-" + std::to_string(s);
      cs.presented.query_id = cs.session_id;
      cs.presented.context = q.context;
      cs.clicked_rank = outcome.clicked_rank;
      cs.weight = bias.propensity_weight(outcome.clicked_rank);
      for (std::size_t r = 0; r < shown; ++r) {
        Document d = q.docs[ranking[r]];
        d.label = r + 1 == outcome.clicked_rank ? 1.0 : 0.0;
        d.weight = r + 1 == outcome.clicked_rank ? cs.weight : 1.0;
        cs.presented.docs.push_back(std::move(d));
      }
      cs.presented.mask.assign(cs.presented.docs.size(), 1);
      log.sessions.push_back(std::move(cs));
    }
  }
  return log;
}

/// Click log as a binary-label dataset carrying propensity weights.
inline Dataset to_dataset(const ClickLog& log) {
  Dataset ds;
  ds.feature_dim = log.feature_dim;
  ds.label_kind = LabelKind::binary;
  ds.has_weights = true;
  for (const ClickSession& s : log.sessions) ds.queries.push_back(s.presented);
  return ds;
}

/// Builds the click log and writes it in the weighted LETOR variant.
inline ClickLog build_click_dataset(const Dataset& ds, const Ranker& ranker, const BiasModel& bias, const Rng& rng,
                                   std::size_t sessions_per_query, std::ostream& out) {
  ClickLog log = build_click_log(ds, ranker, bias, rng, sessions_per_query);
  write_letor(out, to_dataset(log), /*with_weights=*/true);
  return log;
}

}  // namespace gsf
