#pragma once

// LETOR / SVMLight-with-qid ingestion, feature standardization, list
// padding/resampling and mini-batch scheduling.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gsf/error.hpp"
#include "gsf/rng.hpp"

namespace gsf {

using Mask = std::vector<std::uint8_t>;

struct Document {
  std::vector<double> features;
  double label = 0.0;
  // Inverse propensity weight from click logs; 1 when the data carries none.
  double weight = 1.0;
};

/// One query's documents. Slots with mask 0 are padding: zero features,
/// label 0, and never read by scoring, losses or metrics.
struct QueryList {
  std::string query_id;
  std::vector<Document> docs;
  Mask mask;
  std::vector<double> context;  // optional query-level features

  std::size_t size() const noexcept { return docs.size(); }

  std::size_t valid_count() const noexcept {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }

  std::vector<std::size_t> valid_slots() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) out.push_back(i);
    }
    return out;
  }

  std::vector<double> labels() const {
    std::vector<double> out(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) out[i] = docs[i].label;
    return out;
  }

  std::vector<double> weights() const {
    std::vector<double> out(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) out[i] = docs[i].weight;
    return out;
  }
};

enum class LabelKind { graded, binary };

struct Dataset {
  std::vector<QueryList> queries;
  std::size_t feature_dim = 0;
  LabelKind label_kind = LabelKind::graded;
  bool has_weights = false;  // at least one line carried a w: token

  std::size_t size() const noexcept { return queries.size(); }
  bool empty() const noexcept { return queries.empty(); }
};

struct LetorLine {
  std::string query_id;
  double label = 0.0;
  std::vector<std::pair<std::size_t, double>> features;  // 1-based index, value
  std::optional<double> weight;
};

namespace detail {

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

inline bool parse_index(std::string_view s, std::size_t& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses "<label> qid:<id> [w:<weight>] <idx>:<val> ... [# comment]".
inline LetorLine parse_letor_line(std::string_view line, std::size_t line_no = 0) {
  if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  std::vector<std::string_view> tokens;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    std::size_t start = pos;
    while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos > start) tokens.push_back(line.substr(start, pos - start));
  }
  if (tokens.empty()) throw ParseError(line_no, "empty line");

  LetorLine out;
  if (!detail::parse_double(tokens[0], out.label)) {
    throw ParseError(line_no, "malformed label '" + std::string(tokens[0]) + "'");
  }
  if (out.label < 0.0) throw ParseError(line_no, "negative label");
  if (tokens.size() < 2 || !tokens[1].starts_with("qid:") || tokens[1].size() == 4) {
    throw ParseError(line_no, "expected qid:<id> after the label");
  }
  out.query_id = std::string(tokens[1].substr(4));

  std::unordered_set<std::size_t> seen;
  for (std::size_t t = 2; t < tokens.size(); ++t) {
    std::string_view tok = tokens[t];
    const auto colon = tok.find(':');
    if (colon == std::string_view::npos || colon == 0) {
      throw ParseError(line_no, "malformed token '" + std::string(tok) + "'");
    }
    std::string_view key = tok.substr(0, colon);
    std::string_view val = tok.substr(colon + 1);
    if (key == "w") {
      double w = 0.0;
      if (!detail::parse_double(val, w) || w < 0.0) {
        throw ParseError(line_no, "malformed weight '" + std::string(val) + "'");
      }
      if (out.weight) throw ParseError(line_no, "duplicate weight token");
      out.weight = w;
      continue;
    }
    std::size_t index = 0;
    if (!detail::parse_index(key, index) || index == 0) {
      throw ParseError(line_no, "malformed feature index '" + std::string(key) + "'");
    }
    double value = 0.0;
    if (!detail::parse_double(val, value)) {
      throw ParseError(line_no, "non-numeric value at feature " + std::to_string(index));
    }
    if (!seen.insert(index).second) {
      throw ParseError(line_no, "duplicate feature index " + std::to_string(index));
    }
    out.features.emplace_back(index, value);
  }
  return out;
}

/// Groups lines by qid in first-seen order (qids need not be contiguous).
inline Dataset load_dataset(std::istream& in, std::optional<std::size_t> expected_dim = std::nullopt) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<LetorLine>> groups;
  std::size_t max_index = 0;
  std::size_t line_no = 0;
  bool any_weight = false;
  bool binary = true;
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view sv = raw;
    if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
    std::string_view body = sv.substr(0, sv.find('#'));
    if (body.find_first_not_of(" \t") == std::string_view::npos) continue;
    LetorLine parsed = parse_letor_line(sv, line_no);
    for (const auto& [idx, v] : parsed.features) {
      if (expected_dim && idx > *expected_dim) {
        throw ParseError(line_no, "feature index " + std::to_string(idx) + " exceeds expected dimension " +
                                      std::to_string(*expected_dim));
      }
      max_index = std::max(max_index, idx);
    }
    any_weight = any_weight || parsed.weight.has_value();
    binary = binary && (parsed.label == 0.0 || parsed.label == 1.0);
    auto [it, inserted] = groups.try_emplace(parsed.query_id);
    if (inserted) order.push_back(parsed.query_id);
    it->second.push_back(std::move(parsed));
  }
  if (order.empty()) throw ParseError(0, "no data lines");

  Dataset ds;
  ds.feature_dim = expected_dim.value_or(max_index);
  ds.label_kind = binary ? LabelKind::binary : LabelKind::graded;
  ds.has_weights = any_weight;
  ds.queries.reserve(order.size());
  for (const std::string& qid : order) {
    QueryList q;
    q.query_id = qid;
    for (LetorLine& l : groups[qid]) {
      Document d;
      d.features.assign(ds.feature_dim, 0.0);
      for (const auto& [idx, v] : l.features) d.features[idx - 1] = v;
      d.label = l.label;
      d.weight = l.weight.value_or(1.0);
      q.docs.push_back(std::move(d));
    }
    q.mask.assign(q.docs.size(), 1);
    ds.queries.push_back(std::move(q));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path, std::optional<std::size_t> expected_dim = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open '" + path + "'");
  return load_dataset(in, expected_dim);
}

/// Writes valid documents back out in LETOR form. Zero-valued features are
/// omitted except the last one, so a reload recovers the same dimension.
inline void write_letor(std::ostream& out, const Dataset& ds, bool with_weights = false) {
  for (const QueryList& q : ds.queries) {
    for (std::size_t i = 0; i < q.docs.size(); ++i) {
      if (!q.mask[i]) continue;
      const Document& d = q.docs[i];
      out << detail::format_double(d.label) << " qid:" << q.query_id;
      if (with_weights) out << " w:" << detail::format_double(d.weight);
      for (std::size_t j = 0; j < d.features.size(); ++j) {
        if (d.features[j] != 0.0 || j + 1 == d.features.size()) {
          out << ' ' << (j + 1) << ':' << detail::format_double(d.features[j]);
        }
      }
      out << '\n';
    }
  }
}

/// Per-feature v' = (sign(v) log(1 + |v|) - shift) / scale.
struct FeatureTransform {
  std::vector<double> shift;
  std::vector<double> scale;

  static double compress(double v) noexcept { return std::copysign(std::log1p(std::abs(v)), v); }
  static double expand(double c) noexcept { return std::copysign(std::expm1(std::abs(c)), c); }

  double apply(std::size_t j, double v) const noexcept { return (compress(v) - shift[j]) / scale[j]; }
  double invert(std::size_t j, double t) const noexcept { return expand(t * scale[j] + shift[j]); }
};

/// Fits shift/scale on the masked-in documents of `train`. Degenerate
/// features get scale 1.
inline FeatureTransform fit_transform(const Dataset& train) {
  if (train.empty()) throw InvalidArgument("fit_transform: empty training set");
  const std::size_t dim = train.feature_dim;
  FeatureTransform t;
  t.shift.assign(dim, 0.0);
  t.scale.assign(dim, 0.0);  // sum of squared deviations until the end
  std::size_t count = 0;
  // running mean: a constant column keeps its exact value as the shift
  for (const QueryList& q : train.queries) {
    for (std::size_t i = 0; i < q.docs.size(); ++i) {
      if (!q.mask[i]) continue;
      ++count;
      for (std::size_t j = 0; j < dim; ++j) {
        const double x = FeatureTransform::compress(q.docs[i].features[j]);
        const double d = x - t.shift[j];
        t.shift[j] += d / static_cast<double>(count);
        t.scale[j] += d * (x - t.shift[j]);
      }
    }
  }
  if (count == 0) throw InvalidArgument("fit_transform: no valid documents");
  for (double& s : t.scale) {
    s = std::sqrt(s / static_cast<double>(count));
    if (!(s > 1e-12)) s = 1.0;
  }
  return t;
}

inline Dataset apply_transform(Dataset ds, const FeatureTransform& t) {
  if (t.shift.size() != ds.feature_dim) {
    throw DimensionError("apply_transform: transform has " + std::to_string(t.shift.size()) +
                         " features, dataset has " + std::to_string(ds.feature_dim));
  }
  for (QueryList& q : ds.queries) {
    for (std::size_t i = 0; i < q.docs.size(); ++i) {
      if (!q.mask[i]) continue;
      auto& f = q.docs[i].features;
      for (std::size_t j = 0; j < f.size(); ++j) f[j] = t.apply(j, f[j]);
    }
  }
  return ds;
}

/// Pads with masked-out zero documents, or keeps a uniform random subset of
/// `target_n` valid documents (in their original order) when the list is longer.
inline QueryList normalize_list(const QueryList& q, std::size_t target_n, Rng& rng) {
  if (target_n == 0) throw InvalidArgument("normalize_list: target size must be >= 1");
  std::vector<std::size_t> keep = q.valid_slots();
  if (keep.size() > target_n) {
    // partial Fisher-Yates
    for (std::size_t i = 0; i < target_n; ++i) {
      std::swap(keep[i], keep[i + rng.below(keep.size() - i)]);
    }
    keep.resize(target_n);
    std::sort(keep.begin(), keep.end());
  }
  const std::size_t dim = q.docs.empty() ? 0 : q.docs.front().features.size();
  QueryList out;
  out.query_id = q.query_id;
  out.context = q.context;
  out.docs.reserve(target_n);
  for (std::size_t i : keep) out.docs.push_back(q.docs[i]);
  out.mask.assign(out.docs.size(), 1);
  while (out.docs.size() < target_n) {
    out.docs.push_back(Document{std::vector<double>(dim, 0.0), 0.0, 1.0});
    out.mask.push_back(0);
  }
  return out;
}

/// Endless stream of query-index batches; the query order is reshuffled at
/// the start of every epoch and the last batch of an epoch may be short.
class BatchStream {
 public:
  BatchStream(std::size_t num_queries, std::size_t batch_size, Rng rng)
      : order_(num_queries), batch_size_(batch_size), rng_(std::move(rng)) {
    if (batch_size == 0) throw InvalidArgument("batch size must be >= 1");
    if (num_queries == 0) throw InvalidArgument("cannot batch an empty dataset");
    for (std::size_t i = 0; i < num_queries; ++i) order_[i] = i;
    pos_ = order_.size();
  }

  std::span<const std::size_t> next() {
    if (pos_ >= order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
      ++epoch_;
    }
    const std::size_t len = std::min(batch_size_, order_.size() - pos_);
    std::span<const std::size_t> batch(order_.data() + pos_, len);
    pos_ += len;
    return batch;
  }

  /// Number of epochs started so far.
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  Rng rng_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace gsf
