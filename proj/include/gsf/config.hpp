#pragma once

// Flat key=value configuration. The same keys back the CLI flags
// (--group-size sets group_size), so a file and flags compose: file first,
// explicit flags on top.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gsf/error.hpp"
#include "gsf/train.hpp"

namespace gsf {

struct PipelineConfig {
  TrainConfig train;
  bool standardize = true;  // fit a log/standardize feature transform on the training data
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::size_t to_count(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  if (!parse_index(v, out)) throw InvalidArgument(std::string(key) + ": expected a non-negative integer");
  return out;
}

inline double to_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  if (!parse_double(v, out)) throw InvalidArgument(std::string(key) + ": expected a number");
  return out;
}

inline bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw InvalidArgument(std::string(key) + ": expected true or false");
}

}  // namespace detail

inline std::vector<std::size_t> parse_count_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (true) {
    const auto comma = v.find(',');
    out.push_back(detail::to_count(key, detail::trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

inline Aggregation parse_aggregation(std::string_view v) {
  if (v == "sum") return Aggregation::sum;
  if (v == "mean") return Aggregation::mean;
  throw InvalidArgument("aggregation: expected sum or mean");
}

inline void set_config_value(PipelineConfig& cfg, std::string_view key, std::string_view value) {
  TrainConfig& t = cfg.train;
  value = detail::trim(value);
  if (key == "group_size") t.group_size = detail::to_count(key, value);
  else if (key == "hidden" || key == "hidden_dims") t.hidden_dims = parse_count_list(key, value);
  else if (key == "batch_norm") t.use_batch_norm = detail::to_bool(key, value);
  else if (key == "learning_rate") t.learning_rate = detail::to_real(key, value);
  else if (key == "batch_size") t.batch_size = detail::to_count(key, value);
  else if (key == "steps") t.steps = detail::to_count(key, value);
  else if (key == "list_size") t.list_size = detail::to_count(key, value);
  else if (key == "loss") t.loss = parse_loss_kind(value);
  else if (key == "seed") t.seed = detail::to_count(key, value);
  else if (key == "query_weighting") t.query_weighting = detail::to_bool(key, value);
  else if (key == "eval_every") t.eval_every = detail::to_count(key, value);
  else if (key == "aggregation") t.aggregation = parse_aggregation(value);
  else if (key == "clip_norm") t.clip_norm = detail::to_real(key, value);
  else if (key == "adagrad_initial") t.adagrad_initial = detail::to_real(key, value);
  else if (key == "bn_momentum") t.bn_momentum = detail::to_real(key, value);
  else if (key == "eval_metrics" || key == "metrics") t.eval_metrics = std::string(value);
  else if (key == "standardize") cfg.standardize = detail::to_bool(key, value);
  else throw InvalidArgument("unknown config key '" + std::string(key) + "'");
}

/// Reads "key = value" lines; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open config '" + path + "'");
  std::vector<std::pair<std::string, std::string>> out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    line = line.substr(0, line.find('#'));
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected key=value");
    out.emplace_back(std::string(detail::trim(line.substr(0, eq))), std::string(detail::trim(line.substr(eq + 1))));
  }
  return out;
}

inline void apply_config_file(PipelineConfig& cfg, const std::string& path) {
  for (const auto& [k, v] : read_config_file(path)) set_config_value(cfg, k, v);
}

}  // namespace gsf
