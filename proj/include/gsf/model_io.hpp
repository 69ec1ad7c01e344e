#pragma once

// Versioned JSON model files:
//   {format_version, group_size, feature_dim, context_dim, input_dim,
//    aggregation, layers: [{type, dims, ...values}], transform?}
// Layers are listed input to output; the last affine layer is the head.

#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsf/data.hpp"
#include "gsf/error.hpp"
#include "gsf/metrics.hpp"
#include "gsf/scoring.hpp"

namespace gsf {

inline constexpr int kModelFormatVersion = 1;

struct ModelFile {
  GsfModel model;
  std::optional<FeatureTransform> transform;  // applied to raw features before scoring
};

namespace detail {

using nlohmann::json;

inline json affine_json(const nn::AffineLayer& a) {
  return {{"type", "affine"},
          {"dims", {a.in_dim(), a.out_dim()}},
          {"weights", std::vector<double>(a.weights.values().begin(), a.weights.values().end())},
          {"bias", a.bias}};
}

template <class T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw ParseError(0, std::string("model: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("model: bad field '") + key + "': " + e.what());
  }
}

inline nn::AffineLayer affine_from_json(const json& j) {
  const auto dims = field<std::vector<std::size_t>>(j, "dims");
  if (dims.size() != 2) throw ParseError(0, "model: affine dims must have two entries");
  nn::AffineLayer a;
  a.weights = Matrix(dims[0], dims[1], field<std::vector<double>>(j, "weights"));
  a.bias = field<std::vector<double>>(j, "bias");
  if (a.bias.size() != dims[1]) throw ParseError(0, "model: affine bias length mismatch");
  return a;
}

inline nn::BatchNormLayer batch_norm_from_json(const json& j) {
  const auto dims = field<std::vector<std::size_t>>(j, "dims");
  if (dims.size() != 1) throw ParseError(0, "model: batch_norm dims must have one entry");
  nn::BatchNormLayer bn;
  bn.gamma = field<std::vector<double>>(j, "gamma");
  bn.beta = field<std::vector<double>>(j, "beta");
  bn.running_mean = field<std::vector<double>>(j, "running_mean");
  bn.running_var = field<std::vector<double>>(j, "running_var");
  bn.momentum = field<double>(j, "momentum");
  bn.epsilon = field<double>(j, "epsilon");
  for (const auto* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) {
    if (v->size() != dims[0]) throw ParseError(0, "model: batch_norm vector length mismatch");
  }
  return bn;
}

}  // namespace detail

inline nlohmann::json model_to_json(const ModelFile& file) {
  using nlohmann::json;
  const GsfModel& m = file.model;
  json layers = json::array();
  for (const auto& h : m.net.hidden) {
    layers.push_back(detail::affine_json(h.affine));
    if (h.norm) {
      const auto& bn = *h.norm;
      layers.push_back({{"type", "batch_norm"},
                        {"dims", {bn.dim()}},
                        {"gamma", bn.gamma},
                        {"beta", bn.beta},
                        {"running_mean", bn.running_mean},
                        {"running_var", bn.running_var},
                        {"momentum", bn.momentum},
                        {"epsilon", bn.epsilon}});
    }
    if (h.relu) layers.push_back({{"type", "relu"}, {"dims", {h.affine.out_dim()}}});
  }
  layers.push_back(detail::affine_json(m.net.head));
  json j = {{"format_version", kModelFormatVersion},
            {"group_size", m.group_size},
            {"feature_dim", m.feature_dim},
            {"context_dim", m.context_dim},
            {"input_dim", m.input_width()},
            {"aggregation", m.aggregation == Aggregation::sum ? "sum" : "mean"},
            {"layers", layers}};
  if (file.transform) j["transform"] = {{"shift", file.transform->shift}, {"scale", file.transform->scale}};
  return j;
}

inline ModelFile model_from_json(const nlohmann::json& j) {
  const int version = detail::field<int>(j, "format_version");
  if (version != kModelFormatVersion) {
    throw ParseError(0, "model: unsupported format_version " + std::to_string(version));
  }
  ModelFile file;
  GsfModel& m = file.model;
  m.group_size = detail::field<std::size_t>(j, "group_size");
  m.feature_dim = detail::field<std::size_t>(j, "feature_dim");
  m.context_dim = j.value("context_dim", std::size_t{0});
  const auto agg = detail::field<std::string>(j, "aggregation");
  if (agg != "sum" && agg != "mean") throw ParseError(0, "model: unknown aggregation '" + agg + "'");
  m.aggregation = agg == "sum" ? Aggregation::sum : Aggregation::mean;

  const auto& layers = j.at("layers");
  if (!layers.is_array() || layers.empty()) throw ParseError(0, "model: no layers");
  std::optional<nn::HiddenLayer> current;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const auto type = detail::field<std::string>(l, "type");
    const bool last = i + 1 == layers.size();
    if (type == "affine") {
      if (current) m.net.hidden.push_back(std::move(*current));
      current.reset();
      if (last) {
        m.net.head = detail::affine_from_json(l);
      } else {
        current = nn::HiddenLayer{detail::affine_from_json(l), std::nullopt, false};
      }
    } else if (type == "batch_norm" && current && !current->norm && !current->relu) {
      current->norm = detail::batch_norm_from_json(l);
    } else if (type == "relu" && current && !current->relu) {
      current->relu = true;
    } else {
      throw ParseError(0, "model: unexpected layer '" + type + "' at position " + std::to_string(i));
    }
    if (last && type != "affine") throw ParseError(0, "model: the last layer must be affine");
  }
  for (std::size_t k = 0; k < m.net.hidden.size(); ++k) {
    const std::size_t in = k == 0 ? m.net.input_dim() : m.net.hidden[k - 1].affine.out_dim();
    if (m.net.hidden[k].affine.in_dim() != in) throw ParseError(0, "model: layer dimensions do not chain");
  }
  const std::size_t last_width = m.net.hidden.empty() ? m.net.head.in_dim() : m.net.hidden.back().affine.out_dim();
  if (m.net.head.in_dim() != last_width) throw ParseError(0, "model: head input width does not chain");
  try {
    m.validate();
  } catch (const Error& e) {
    throw ParseError(0, std::string("model: ") + e.what());
  }
  if (j.contains("input_dim") && detail::field<std::size_t>(j, "input_dim") != m.input_width()) {
    throw ParseError(0, "model: input_dim disagrees with the layer stack");
  }
  if (j.contains("transform")) {
    FeatureTransform t;
    t.shift = detail::field<std::vector<double>>(j["transform"], "shift");
    t.scale = detail::field<std::vector<double>>(j["transform"], "scale");
    if (t.shift.size() != m.feature_dim || t.scale.size() != m.feature_dim) {
      throw ParseError(0, "model: transform width mismatch");
    }
    file.transform = std::move(t);
  }
  return file;
}

inline void save_model(const std::string& path, const ModelFile& file) {
  std::ofstream out(path);
  if (!out) throw ParseError(0, "cannot write '" + path + "'");
  out << model_to_json(file).dump(1) << '\n';
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, std::string("model: invalid JSON: ") + e.what());
  }
  return model_from_json(j);
}

/// metric<TAB>value lines, then used and discarded counts.
inline void write_report_tsv(std::ostream& out, const EvalReport& r) {
  std::ostringstream buf;
  buf.precision(17);
  for (const auto& [name, v] : r.metrics) buf << name << '\t' << v << '\n';
  buf << "used\t" << r.used << '\n' << "discarded\t" << r.discarded << '\n';
  out << buf.str();
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [name, v] : r.metrics) metrics[name] = v;
  return {{"metrics", metrics}, {"used", r.used}, {"discarded", r.discarded}};
}

}  // namespace gsf
