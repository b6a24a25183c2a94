#pragma once

#include <cstdint>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nfard/csv.hpp"
#include "nfard/detector.hpp"
#include "nfard/error.hpp"
#include "nfard/eval.hpp"
#include "nfard/metrics.hpp"
#include "nfard/model.hpp"
#include "nfard/zoo.hpp"

namespace nfard::cli {

constexpr std::uint64_t kDefaultMasterSeed = 42;

/// Default master seed: NFARD_SEED from the environment if set, otherwise a
/// fixed constant. An explicit --seed flag wins over both.
inline std::uint64_t default_master_seed() {
  if (const char* env = std::getenv("NFARD_SEED")) {
    std::string s(env);
    try {
      return static_cast<std::uint64_t>(std::stoull(s));
    } catch (const std::exception&) {
      throw ConfigError("NFARD_SEED is not a valid unsigned integer: '" + s + "'");
    }
  }
  return kDefaultMasterSeed;
}

/// "frac:0.25", "second-last", or a 1-based layer index.
inline LayerPolicy parse_layer_policy(const std::string& s) {
  if (s == "second-last") return LayerPolicy::second_last();
  if (s.rfind("frac:", 0) == 0) return LayerPolicy::fraction_of_depth(parse_double(s.substr(5)));
  return LayerPolicy::explicit_index(static_cast<std::size_t>(parse_int(s)));
}

/// "eu=1,ac=120"
inline std::map<std::string, double> parse_weights(const std::string& s) {
  std::map<std::string, double> out;
  for (std::string_view part : split_csv_line(s)) {
    part = trim(part);
    if (part.empty()) continue;
    auto eq = part.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("weight entry '" + std::string(part) + "' is not name=value");
    out[std::string(trim(part.substr(0, eq)))] = parse_double(trim(part.substr(eq + 1)));
  }
  if (out.empty()) throw ConfigError("empty weight list");
  return out;
}

namespace detail {

struct DetectArgs {
  std::string victim, suspect, data, report;
  std::vector<std::string> refs;
  std::string mode = "black";
  double alpha = -1.0;  // sentinel: use the mode default
  bool alpha_set = false;
  std::size_t suite_size = 1000;
  std::string layer = "frac:0.25";
  std::string weights = "eu=1,ac=120";
  bool no_log = false;
};

inline DecisionConfig build_config(const DetectArgs& a) {
  DecisionConfig cfg = DecisionConfig::defaults(mode_from_string(a.mode));
  if (a.alpha_set) cfg.alpha = a.alpha;
  cfg.suite_size = a.suite_size;
  cfg.layer_policy = parse_layer_policy(a.layer);
  cfg.weights = parse_weights(a.weights);
  cfg.log_approx = !a.no_log;
  cfg.validate();
  return cfg;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << content;
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace detail

/// Entry point shared by the binary and the tests. `args` excludes the
/// program name. Exit codes: 0 success (detect: negative verdict), 2
/// positive verdict, 1 any error.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Neuron-functionality reuse detector"};
  app.set_config("--config", "", "key=value config file; command-line flags take precedence");
  app.require_subcommand(1);

  // zoo-build
  auto* zb = app.add_subcommand("zoo-build", "Build the mini model-reuse benchmark");
  std::string zb_out = "zoo";
  std::uint64_t zb_seed = default_master_seed();
  std::string zb_scale = "standard";
  zb->add_option("--out", zb_out, "output directory");
  zb->add_option("--seed", zb_seed, "master seed (default: NFARD_SEED or 42)");
  zb->add_option("--scale", zb_scale, "standard | smoke");

  // detect
  auto* dt = app.add_subcommand("detect", "Judge one suspect against a victim");
  detail::DetectArgs da;
  dt->add_option("--victim", da.victim, "victim model JSON")->required();
  dt->add_option("--suspect", da.suspect, "suspect model JSON")->required();
  dt->add_option("--ref", da.refs, "reference model JSON (repeat, at least 2)")->required();
  dt->add_option("--data", da.data, "dataset CSV")->required();
  dt->add_option("--mode", da.mode, "black | white");
  auto* alpha_opt = dt->add_option("--alpha", da.alpha, "decision parameter (default per mode)");
  dt->add_option("--n", da.suite_size, "test-suite size");
  dt->add_option("--layer", da.layer, "frac:F | second-last | K");
  dt->add_option("--weights", da.weights, "metric weights, e.g. eu=1,ac=120");
  dt->add_flag("--no-log", da.no_log, "black-box ablation: skip the logarithm");
  dt->add_option("--report", da.report, "write the detection report JSON here");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Run the full zoo evaluation");
  std::string ev_zoo, ev_json;
  detail::DetectArgs ea;
  ev->add_option("--zoo", ev_zoo, "zoo directory")->required();
  ev->add_option("--mode", ea.mode, "black | white");
  auto* ev_alpha = ev->add_option("--alpha", ea.alpha, "decision parameter (default per mode)");
  ev->add_option("--n", ea.suite_size, "test-suite size");
  ev->add_option("--weights", ea.weights, "metric weights");
  ev->add_flag("--no-log", ea.no_log, "black-box ablation: skip the logarithm");
  ev->add_option("--json", ev_json, "write the summary JSON here");

  // roc
  auto* rc = app.add_subcommand("roc", "Sweep alpha and emit ROC points");
  std::string rc_zoo, rc_mode = "black", rc_out;
  std::vector<double> rc_alphas;
  rc->add_option("--zoo", rc_zoo, "zoo directory")->required();
  rc->add_option("--mode", rc_mode, "black | white");
  rc->add_option("--alphas", rc_alphas, "alpha values (comma separated)")->delimiter(',');
  rc->add_option("--out", rc_out, "ROC CSV path")->required();

  // extract
  auto* ex = app.add_subcommand("extract", "Materialize a neuron matrix as CSV");
  std::string ex_model, ex_data, ex_layer = "frac:0.25", ex_out;
  bool ex_blackbox = false;
  ex->add_option("--model", ex_model, "model JSON")->required();
  ex->add_option("--data", ex_data, "dataset CSV")->required();
  ex->add_option("--layer", ex_layer, "frac:F | second-last | K");
  ex->add_flag("--blackbox", ex_blackbox, "emit the log-probability matrix instead");
  ex->add_option("--out", ex_out, "output CSV path")->required();

  // suite-size-sweep
  auto* sw = app.add_subcommand("suite-size-sweep", "F1 across test-suite sizes, both modes");
  std::string sw_zoo, sw_out;
  std::vector<std::size_t> sw_sizes;
  sw->add_option("--zoo", sw_zoo, "zoo directory")->required();
  sw->add_option("--sizes", sw_sizes, "suite sizes (comma separated)")
      ->delimiter(',')
      ->required();
  sw->add_option("--out", sw_out, "sweep CSV path")->required();

  args.insert(args.begin(), "nfard");
  std::vector<char*> argv;
  argv.reserve(args.size());
  for (auto& a : args) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*zb) {
      ZooManifest man = build_zoo(zb_out, zb_seed, ZooScale::from_name(zb_scale));
      std::size_t victims = 0, surrogates = 0, references = 0;
      for (const auto& m : man.models) {
        if (m.role == "victim") ++victims;
        if (m.role == "surrogate") ++surrogates;
        if (m.role == "reference") ++references;
      }
      out << "zoo written to " << zb_out << ": " << victims << " victims, " << surrogates
          << " surrogates, " << references << " references, " << man.tasks.size() << " tasks\n";
      return 0;
    }
    if (*dt) {
      da.alpha_set = alpha_opt->count() > 0;
      DecisionConfig cfg = detail::build_config(da);
      if (da.refs.size() < 2) throw ConfigError("detect needs at least 2 --ref models");
      MlpModel victim = load_model(da.victim);
      MlpModel suspect = load_model(da.suspect);
      std::vector<MlpModel> refs;
      for (const auto& p : da.refs) refs.push_back(load_model(p));
      Dataset data = load_dataset(da.data);
      DetectionReport rep = detect(victim, suspect, refs, data, cfg);
      if (!da.report.empty())
        detail::write_text_file(da.report, report_to_json(rep).dump(1) + "\n");
      out << "mode=" << to_string(rep.mode) << " alpha=" << format_double(cfg.alpha)
          << " weighted_sum=" << format_double(rep.weighted_sum)
          << " verdict=" << (rep.verdict ? "positive" : "negative") << '\n';
      for (const auto& w : rep.warnings) err << "warning: " << w << '\n';
      return rep.verdict ? 2 : 0;
    }
    if (*ev) {
      ea.alpha_set = ev_alpha->count() > 0;
      DecisionConfig cfg = detail::build_config(ea);
      Zoo zoo = load_zoo(ev_zoo);
      EvalSummary sum = evaluate(zoo, cfg);
      out << render_summary_text(sum);
      if (!ev_json.empty())
        detail::write_text_file(ev_json, summary_to_json(sum).dump(1) + "\n");
      return 0;
    }
    if (*rc) {
      DecisionConfig cfg = DecisionConfig::defaults(mode_from_string(rc_mode));
      if (rc_alphas.empty()) rc_alphas = default_roc_alphas();
      if (rc_alphas.size() < 2) throw ConfigError("roc needs at least 2 alphas");
      Zoo zoo = load_zoo(rc_zoo);
      std::vector<RocPoint> points = roc(zoo, cfg, rc_alphas);
      save_roc_csv(points, rc_out);
      out << "auc=" << format_double(roc_auc(points)) << " points=" << points.size() << '\n';
      return 0;
    }
    if (*ex) {
      MlpModel model = load_model(ex_model);
      Dataset data = load_dataset(ex_data);
      NeuronMatrix nm;
      if (ex_blackbox) {
        nm = approx_neuron_matrix(predict_proba(model, data.x), kProbFloor, model_id_of(model));
      } else {
        std::size_t k = parse_layer_policy(ex_layer).resolve(model.num_layers());
        nm = extract_neuron_matrix(model, data.x, k, model_id_of(model));
      }
      save_neuron_matrix(nm, ex_out);
      out << "wrote " << nm.samples() << "x" << nm.neurons() << " matrix to " << ex_out << '\n';
      return 0;
    }
    if (*sw) {
      Zoo zoo = load_zoo(sw_zoo);
      std::vector<SweepRow> rows = suite_size_sweep(zoo, sw_sizes);
      save_sweep_csv(rows, sw_out);
      out << "wrote " << rows.size() << " sweep rows to " << sw_out << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << "error: no subcommand\n";
  return 1;
}

}  // namespace nfard::cli
