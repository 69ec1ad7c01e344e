#pragma once

// Command-line front end: train, eval, rank, gen-clicks, gradcheck, sweep.
// Exit codes: 0 success, 1 IO/data error, 2 numeric divergence or failed
// gradient check, 64 usage error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gsf/clicksim.hpp"
#include "gsf/config.hpp"
#include "gsf/data.hpp"
#include "gsf/error.hpp"
#include "gsf/metrics.hpp"
#include "gsf/model_io.hpp"
#include "gsf/scoring.hpp"
#include "gsf/train.hpp"

namespace gsf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitData = 1;
inline constexpr int kExitNumeric = 2;
inline constexpr int kExitUsage = 64;

namespace detail {

/// Usage problems detected after CLI11 parsing (bad values, bad combos).
class UsageError : public Error {
 public:
  using Error::Error;
};

inline std::uint64_t default_seed() {
  if (const char* env = std::getenv("GSF_SEED")) {
    std::uint64_t s = 0;
    if (gsf::detail::parse_index(env, s)) return s;
  }
  return 0;
}

// Train flags are plain strings keyed by config name; only flags that were
// given on the command line override the config file.
struct TrainFlags {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> options;

  void add(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    options.emplace_back(key, app.add_option(flag, values[key], help));
  }

  // sweep takes --m for its list of group sizes, so it skips the -m alias
  void attach(CLI::App& app, bool short_group_size = true) {
    add(app, short_group_size ? "--group-size,-m" : "--group-size", "group_size", "documents per group (m)");
    add(app, "--hidden", "hidden", "hidden layer sizes, comma separated");
    add(app, "--batch-norm", "batch_norm", "batch normalization between layers (true|false)");
    add(app, "--lr,--learning-rate", "learning_rate", "Adagrad learning rate");
    add(app, "--batch-size", "batch_size", "queries per mini-batch");
    add(app, "--steps", "steps", "training steps");
    add(app, "--list-size", "list_size", "documents kept per training list");
    add(app, "--loss", "loss", "softmax_xent|ipw_softmax|listnet|pairwise_logistic");
    add(app, "--query-weighting", "query_weighting", "weight query losses by label sum (true|false)");
    add(app, "--eval-every", "eval_every", "validation interval in steps");
    add(app, "--aggregation", "aggregation", "sum|mean");
    add(app, "--clip-norm", "clip_norm", "global gradient norm clip, 0 = off");
    add(app, "--adagrad-initial", "adagrad_initial", "initial Adagrad accumulator");
    add(app, "--bn-momentum", "bn_momentum", "decay of batch-norm running statistics");
    add(app, "--eval-metrics", "eval_metrics", "validation metrics, comma separated");
    add(app, "--standardize", "standardize", "log-standardize features (true|false)");
  }

  PipelineConfig build(const std::string& config_path, std::uint64_t seed) const {
    PipelineConfig cfg;
    cfg.train.seed = seed;
    try {
      if (!config_path.empty()) apply_config_file(cfg, config_path);
      for (const auto& [key, opt] : options) {
        if (opt->count() > 0) set_config_value(cfg, key, values.at(key));
      }
      cfg.train.validate();
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

inline Dataset load_for_model(const std::string& path, const ModelFile& mf) {
  Dataset ds = load_dataset(path);
  if (ds.feature_dim > mf.model.feature_dim) {
    throw DimensionError("data has " + std::to_string(ds.feature_dim) + " features, model expects " +
                         std::to_string(mf.model.feature_dim));
  }
  if (ds.feature_dim < mf.model.feature_dim) {
    // trailing all-zero features are legal in LETOR files; widen
    for (auto& q : ds.queries) {
      for (auto& d : q.docs) d.features.resize(mf.model.feature_dim, 0.0);
    }
    ds.feature_dim = mf.model.feature_dim;
  }
  if (mf.transform) ds = apply_transform(std::move(ds), *mf.transform);
  return ds;
}

inline ScoringMode parse_mode(const std::string& s) {
  if (s == "full") return ScoringMode::full;
  if (s == "sampled") return ScoringMode::sampled;
  throw UsageError("--mode must be full or sampled");
}

/// Writes to `path` or to `fallback` when path is empty or "-".
class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) {
    if (path.empty() || path == "-") {
      stream_ = &fallback;
    } else {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw ParseError(0, "cannot write '" + path + "'");
      stream_ = file_.get();
    }
  }
  std::ostream& get() { return *stream_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream* stream_ = nullptr;
};

inline nlohmann::json eval_point_json(const EvalPoint& p) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [k, v] : p.metrics) metrics[k] = v;
  return {{"step", p.step}, {"train_loss", p.train_loss}, {"seconds_per_step", p.seconds_per_step},
          {"metrics", metrics}};
}

}  // namespace detail

/// Runs the CLI with argv-style arguments (args[0] is the program name).
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Groupwise scoring functions for learning to rank"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::uint64_t seed = detail::default_seed();
  std::string data, valid, config, model_out = "model.json", report_out, model_path, out_path;
  std::string metrics = "ndcg@1,ndcg@5,ndcg@10,mrr,wmrr", mode = "sampled", format = "tsv";

  auto* train_cmd = app.add_subcommand("train", "train a model");
  detail::TrainFlags train_flags;
  train_cmd->add_option("--data", data, "training data (LETOR)")->required();
  train_cmd->add_option("--valid", valid, "validation data (LETOR)");
  train_cmd->add_option("--config", config, "flat key=value config file");
  train_cmd->add_option("--model-out", model_out, "model JSON path");
  train_cmd->add_option("--report-out", report_out, "JSON-lines report path (default stdout)");
  train_cmd->add_option("--seed", seed, "root seed (default $GSF_SEED or 0)");
  train_flags.attach(*train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model");
  eval_cmd->add_option("--model", model_path, "model JSON")->required();
  eval_cmd->add_option("--data", data, "evaluation data (LETOR)")->required();
  eval_cmd->add_option("--metrics", metrics, "comma separated: ndcg@K, mrr, wmrr");
  eval_cmd->add_option("--mode", mode, "full|sampled");
  eval_cmd->add_option("--format", format, "tsv|json");
  eval_cmd->add_option("--out", out_path, "report path (default stdout)");
  eval_cmd->add_option("--seed", seed, "group sampling seed");

  auto* rank_cmd = app.add_subcommand("rank", "rank documents per query");
  rank_cmd->add_option("--model", model_path, "model JSON")->required();
  rank_cmd->add_option("--data", data, "data to rank (LETOR)")->required();
  rank_cmd->add_option("--out", out_path, "TSV path (default stdout)");
  rank_cmd->add_option("--mode", mode, "full|sampled");
  rank_cmd->add_option("--seed", seed, "group sampling seed");

  auto* clicks_cmd = app.add_subcommand("gen-clicks", "simulate position-biased clicks");
  double eta = 1.0, noise = 0.0;
  std::size_t sessions = 10, ranker_feature = 0;
  std::string ranker_model;
  clicks_cmd->add_option("--data", data, "binary-relevance data (LETOR)")->required();
  clicks_cmd->add_option("--out", out_path, "click-log LETOR path (default stdout)");
  clicks_cmd->add_option("--eta", eta, "position bias severity");
  clicks_cmd->add_option("--noise", noise, "click noise in [0,1)");
  clicks_cmd->add_option("--sessions", sessions, "sessions per query");
  auto* rf = clicks_cmd->add_option("--ranker-feature", ranker_feature, "present by this 1-based feature, descending");
  auto* rm = clicks_cmd->add_option("--ranker-model", ranker_model, "present by this model's ranking");
  rf->excludes(rm);
  clicks_cmd->add_option("--seed", seed, "simulation seed");

  auto* grad_cmd = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
  std::size_t gc_m = 2, gc_n = 4, gc_features = 3;
  std::string gc_hidden = "8,4", gc_loss = "softmax_xent";
  bool gc_bn = true;
  double gc_threshold = 1e-4;
  grad_cmd->add_option("--group-size,-m", gc_m, "group size");
  grad_cmd->add_option("--list-size", gc_n, "documents in the random list");
  grad_cmd->add_option("--features", gc_features, "features per document");
  grad_cmd->add_option("--hidden", gc_hidden, "hidden layer sizes");
  grad_cmd->add_option("--loss", gc_loss, "loss name");
  grad_cmd->add_option("--batch-norm", gc_bn, "use batch normalization");
  grad_cmd->add_option("--threshold", gc_threshold, "max relative error accepted");
  grad_cmd->add_option("--seed", seed, "seed");

  auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate over group sizes");
  detail::TrainFlags sweep_flags;
  std::string m_values = "1,2,4", test_path, sweep_metric = "ndcg@5";
  std::size_t trials = 10;
  sweep_cmd->add_option("--data", data, "training data (LETOR)")->required();
  sweep_cmd->add_option("--test", test_path, "held-out data (LETOR)")->required();
  sweep_cmd->add_option("--m", m_values, "group sizes, comma separated");
  sweep_cmd->add_option("--trials", trials, "trials per group size");
  sweep_cmd->add_option("--metric", sweep_metric, "metric to report");
  sweep_cmd->add_option("--config", config, "flat key=value config file");
  sweep_cmd->add_option("--out", out_path, "TSV path (default stdout)");
  sweep_cmd->add_option("--seed", seed, "root seed");
  sweep_flags.attach(*sweep_cmd, false);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*train_cmd) {
      const PipelineConfig cfg = train_flags.build(config, seed);
      Dataset train_ds = load_dataset(data);
      Dataset valid_ds;
      if (!valid.empty()) valid_ds = load_dataset(valid, train_ds.feature_dim);
      std::optional<FeatureTransform> transform;
      if (cfg.standardize) {
        transform = fit_transform(train_ds);
        train_ds = apply_transform(std::move(train_ds), *transform);
        if (!valid_ds.empty()) valid_ds = apply_transform(std::move(valid_ds), *transform);
      }
      detail::Output report(report_out, out);
      auto result = train(cfg.train, train_ds, valid_ds, [&](const EvalPoint& p) {
        report.get() << detail::eval_point_json(p).dump() << '\n';
        report.get().flush();
      });
      save_model(model_out, ModelFile{std::move(result.model), transform});
      return kExitOk;
    }
    if (*eval_cmd) {
      const auto specs = [&] {
        try {
          return parse_metrics(metrics);
        } catch (const InvalidArgument& e) {
          throw detail::UsageError(e.what());
        }
      }();
      if (format != "tsv" && format != "json") throw detail::UsageError("--format must be tsv or json");
      const ScoringMode sm = detail::parse_mode(mode);
      const ModelFile mf = load_model(model_path);
      const Dataset ds = detail::load_for_model(data, mf);
      const EvalReport rep = evaluate(mf.model, ds, specs, sm, seed);
      detail::Output o(out_path, out);
      if (format == "json") {
        o.get() << report_to_json(rep).dump() << '\n';
      } else {
        write_report_tsv(o.get(), rep);
      }
      return kExitOk;
    }
    if (*rank_cmd) {
      const ScoringMode sm = detail::parse_mode(mode);
      const ModelFile mf = load_model(model_path);
      const Dataset ds = detail::load_for_model(data, mf);
      detail::Output o(out_path, out);
      std::ostringstream buf;
      buf.precision(17);
      const Rng root(seed);
      for (std::size_t qi = 0; qi < ds.queries.size(); ++qi) {
        const QueryList& q = ds.queries[qi];
        Rng rng = root.split("eval", qi);
        const auto scores = score_list(mf.model, q, sm, rng);
        const auto order = rank(scores);
        for (std::size_t r = 0; r < order.size(); ++r) {
          buf << q.query_id << '\t' << (r + 1) << '\t' << order[r] << '\t' << scores[order[r]] << '\n';
        }
      }
      o.get() << buf.str();
      return kExitOk;
    }
    if (*clicks_cmd) {
      BiasModel bias{eta, noise};
      try {
        bias.validate();
      } catch (const InvalidArgument& e) {
        throw detail::UsageError(e.what());
      }
      const Dataset ds = load_dataset(data);
      Ranker ranker;
      std::optional<ModelFile> mf;
      if (!ranker_model.empty()) {
        mf = load_model(ranker_model);
        ranker = [&, root = Rng(seed).split("ranker")](const QueryList& q) {
          QueryList scored = q;
          for (auto& d : scored.docs) d.features.resize(mf->model.feature_dim, 0.0);
          if (mf->transform) {
            for (auto& d : scored.docs) {
              for (std::size_t j = 0; j < d.features.size(); ++j) d.features[j] = mf->transform->apply(j, d.features[j]);
            }
          }
          Rng rng = root.split(q.query_id);
          return rank(score_list(mf->model, scored, ScoringMode::sampled, rng));
        };
      } else if (ranker_feature > 0) {
        if (ranker_feature > ds.feature_dim) throw detail::UsageError("--ranker-feature exceeds feature count");
        ranker = [f = ranker_feature - 1](const QueryList& q) {
          std::vector<double> s(q.size());
          for (std::size_t i = 0; i < q.size(); ++i) s[i] = q.mask[i] ? q.docs[i].features[f] : kExcludedScore;
          return rank(s);
        };
      } else {
        ranker = [](const QueryList& q) { return q.valid_slots(); };
      }
      detail::Output o(out_path, out);
      const ClickLog log = build_click_dataset(ds, ranker, bias, Rng(seed).split("clicks"), sessions, o.get());
      err << log.sessions.size() << " sessions with a click\n";
      return kExitOk;
    }
    if (*grad_cmd) {
      PipelineConfig cfg;
      try {
        set_config_value(cfg, "hidden", gc_hidden);
        cfg.train.loss = parse_loss_kind(gc_loss);
      } catch (const InvalidArgument& e) {
        throw detail::UsageError(e.what());
      }
      if (gc_m == 0 || gc_n == 0 || gc_features == 0) throw detail::UsageError("gradcheck sizes must be >= 1");
      cfg.train.group_size = gc_m;
      cfg.train.use_batch_norm = gc_bn;
      cfg.train.seed = seed;
      Rng rng = Rng(seed).split("gradcheck-sample");
      QueryList q;
      q.query_id = "gradcheck";
      for (std::size_t i = 0; i < gc_n; ++i) {
        Document d;
        for (std::size_t j = 0; j < gc_features; ++j) d.features.push_back(rng.normal());
        if (cfg.train.loss == LossKind::ipw_softmax) {
          d.label = i == 0 ? 1.0 : 0.0;
          d.weight = 1.0 + rng.uniform(0.0, 4.0);
        } else {
          d.label = static_cast<double>(rng.below(3));
        }
        q.docs.push_back(std::move(d));
      }
      q.mask.assign(gc_n, 1);
      const GradcheckReport rep = gradcheck(cfg.train, q);
      out << "max_rel_error\t" << rep.max_rel_error << "\nchecked\t" << rep.checked << "\nskipped_kinks\t"
          << rep.skipped_kinks << '\n';
      return rep.max_rel_error <= gc_threshold ? kExitOk : kExitNumeric;
    }
    if (*sweep_cmd) {
      const PipelineConfig cfg = sweep_flags.build(config, seed);
      std::vector<std::size_t> ms;
      try {
        ms = parse_count_list("m", m_values);
        parse_metric(sweep_metric);
      } catch (const InvalidArgument& e) {
        throw detail::UsageError(e.what());
      }
      Dataset train_ds = load_dataset(data);
      Dataset test_ds = load_dataset(test_path, train_ds.feature_dim);
      if (cfg.standardize) {
        const auto t = fit_transform(train_ds);
        train_ds = apply_transform(std::move(train_ds), t);
        test_ds = apply_transform(std::move(test_ds), t);
      }
      const auto rows = run_group_size_sweep(cfg.train, ms, trials, sweep_metric, train_ds, test_ds);
      detail::Output o(out_path, out);
      std::ostringstream buf;
      buf.precision(10);
      buf << "m\tmean\tci95\tp_vs_first\ttrials\n";
      for (const auto& r : rows) {
        buf << r.group_size << '\t' << r.mean << '\t' << r.ci95 << '\t' << r.p_value_vs_first << '\t';
        for (std::size_t t = 0; t < r.trials.size(); ++t) buf << (t ? "," : "") << r.trials[t];
        buf << '\n';
      }
      o.get() << buf.str();
      return kExitOk;
    }
  } catch (const detail::UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace gsf::cli
