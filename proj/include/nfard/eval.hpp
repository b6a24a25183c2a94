#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfard/csv.hpp"
#include "nfard/detector.hpp"
#include "nfard/error.hpp"
#include "nfard/model.hpp"
#include "nfard/zoo.hpp"

namespace nfard {

struct Zoo {
  std::string dir;
  ZooManifest manifest;
  std::map<std::string, MlpModel> models;
  std::map<std::string, Dataset> datasets;
};

inline Zoo load_zoo(const std::string& dir) {
  namespace fs = std::filesystem;
  Zoo zoo;
  zoo.dir = dir;
  zoo.manifest = load_manifest((fs::path(dir) / "manifest.json").string());
  for (const auto& t : zoo.manifest.tasks)
    zoo.datasets.emplace(t.id, load_dataset((fs::path(dir) / "data" / (t.id + ".csv")).string()));
  for (const auto& rec : zoo.manifest.models)
    zoo.models.emplace(rec.id, load_model((fs::path(dir) / rec.path).string()));
  return zoo;
}

/// One victim/suspect pairing of the evaluation protocol. Positives are the
/// victim's surrogates, negatives every fold-2 reference; decision
/// references always come from fold 1.
struct DetectionCase {
  std::string victim_id;
  std::string suspect_id;
  bool positive = false;
  std::string type;  // technique for positives, "negative" otherwise
  std::vector<std::string> reference_ids;
};

inline std::vector<std::string> fold1_references(const ZooManifest& man, const std::string& arch,
                                                 const std::string& task) {
  std::vector<std::string> out;
  for (const auto& m : man.models)
    if (m.role == "reference" && m.fold == 1 && m.arch_id == arch && m.task_id == task)
      out.push_back(m.id);
  return out;
}

inline std::vector<DetectionCase> detection_cases(const ZooManifest& man) {
  std::vector<DetectionCase> cases;
  for (const auto& v : man.models) {
    if (v.role != "victim") continue;
    std::vector<std::string> victim_refs = fold1_references(man, v.arch_id, v.task_id);
    for (const auto& s : man.models) {
      if (s.role == "surrogate" && s.lineage == v.id) {
        DetectionCase c;
        c.victim_id = v.id;
        c.suspect_id = s.id;
        c.positive = true;
        c.type = s.technique;
        // Transfer changes the task, so its baseline population shares the
        // suspect's architecture and dataset instead of the victim's.
        c.reference_ids = s.technique == "transfer"
                              ? fold1_references(man, s.arch_id, s.task_id)
                              : victim_refs;
        cases.push_back(std::move(c));
      } else if (s.role == "reference" && s.fold == 2) {
        DetectionCase c;
        c.victim_id = v.id;
        c.suspect_id = s.id;
        c.positive = false;
        c.type = "negative";
        c.reference_ids = victim_refs;
        cases.push_back(std::move(c));
      }
    }
  }
  return cases;
}

struct CaseProfile {
  DetectionCase c;
  DistanceProfile profile;
};

/// Distance stage for the whole roster; decisions are applied separately so
/// alpha sweeps reuse this work. One test suite per victim.
inline std::vector<CaseProfile> compute_case_profiles(const Zoo& zoo, const DecisionConfig& cfg) {
  cfg.validate();
  std::vector<DetectionCase> cases = detection_cases(zoo.manifest);
  if (cases.empty()) throw ConfigError("zoo produced no detection cases");
  std::map<std::string, Matrix> suites;
  std::vector<CaseProfile> out;
  out.reserve(cases.size());
  for (auto& c : cases) {
    const MlpModel& victim = zoo.models.at(c.victim_id);
    auto it = suites.find(c.victim_id);
    if (it == suites.end()) {
      const Dataset& data = zoo.datasets.at(zoo.manifest.find(c.victim_id).task_id);
      std::vector<std::size_t> suite = select_test_suite(victim, data, cfg.suite_size);
      it = suites.emplace(c.victim_id, gather_rows(data.x, suite)).first;
    }
    std::vector<MlpModel> refs;
    refs.reserve(c.reference_ids.size());
    for (const auto& rid : c.reference_ids) refs.push_back(zoo.models.at(rid));
    CaseProfile cp;
    cp.profile = compute_distances(victim, zoo.models.at(c.suspect_id), refs, it->second, cfg);
    cp.c = std::move(c);
    out.push_back(std::move(cp));
  }
  return out;
}

struct TypeStats {
  std::string type;
  std::size_t detected = 0;
  std::size_t total = 0;
  std::map<std::string, double> mean_distance;
  std::map<std::string, double> std_distance;
  double mean_decision = 0.0;
  double std_decision = 0.0;
};

struct EvalSummary {
  Mode mode = Mode::Blackbox;
  double alpha = 0.0;
  std::map<std::string, double> weights;
  std::size_t suite_size = 0;
  bool log_approx = true;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::vector<TypeStats> types;
};

inline double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  double p = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  double r = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

inline EvalSummary summarize(const std::vector<CaseProfile>& profiles, const DecisionConfig& cfg) {
  EvalSummary sum;
  sum.mode = cfg.mode;
  sum.alpha = cfg.alpha;
  sum.weights = cfg.weights;
  sum.suite_size = cfg.suite_size;
  sum.log_approx = cfg.log_approx;

  std::vector<std::string> type_order;
  std::map<std::string, std::vector<const CaseProfile*>> by_type;
  for (const auto& cp : profiles) {
    if (!by_type.count(cp.c.type)) type_order.push_back(cp.c.type);
    by_type[cp.c.type].push_back(&cp);
  }

  std::map<const CaseProfile*, DetectionReport> reports;
  for (const auto& cp : profiles) reports.emplace(&cp, decide(cp.profile, cfg));

  for (const auto& type : type_order) {
    TypeStats ts;
    ts.type = type;
    std::map<std::string, std::vector<double>> xs;
    std::vector<double> ds;
    for (const CaseProfile* cp : by_type[type]) {
      const DetectionReport& rep = reports.at(cp);
      ++ts.total;
      if (rep.verdict) ++ts.detected;
      for (const auto& [name, x] : cp->profile.suspect_distances) xs[name].push_back(x);
      ds.push_back(rep.weighted_sum);
      if (cp->c.positive) {
        if (rep.verdict)
          ++sum.tp;
        else
          ++sum.fn;
      } else {
        if (rep.verdict)
          ++sum.fp;
        else
          ++sum.tn;
      }
    }
    auto mean_std = [](const std::vector<double>& v) {
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      return std::pair<double, double>(mean, std::sqrt(var / static_cast<double>(v.size())));
    };
    for (const auto& [name, v] : xs) {
      auto [m, s] = mean_std(v);
      ts.mean_distance[name] = m;
      ts.std_distance[name] = s;
    }
    auto [md, sd] = mean_std(ds);
    ts.mean_decision = md;
    ts.std_decision = sd;
    sum.types.push_back(std::move(ts));
  }

  sum.precision =
      (sum.tp + sum.fp) ? static_cast<double>(sum.tp) / static_cast<double>(sum.tp + sum.fp) : 0.0;
  sum.recall =
      (sum.tp + sum.fn) ? static_cast<double>(sum.tp) / static_cast<double>(sum.tp + sum.fn) : 0.0;
  sum.f1 = f1_score(sum.tp, sum.fp, sum.fn);
  return sum;
}

inline EvalSummary evaluate(const Zoo& zoo, const DecisionConfig& cfg) {
  return summarize(compute_case_profiles(zoo, cfg), cfg);
}

inline nlohmann::json summary_to_json(const EvalSummary& sum) {
  nlohmann::json j;
  j["mode"] = to_string(sum.mode);
  j["alpha"] = sum.alpha;
  j["weights"] = sum.weights;
  j["suite_size"] = sum.suite_size;
  j["log_approx"] = sum.log_approx;
  j["tp"] = sum.tp;
  j["fp"] = sum.fp;
  j["fn"] = sum.fn;
  j["tn"] = sum.tn;
  j["precision"] = sum.precision;
  j["recall"] = sum.recall;
  j["f1"] = sum.f1;
  nlohmann::json types = nlohmann::json::array();
  for (const auto& ts : sum.types) {
    nlohmann::json tj;
    tj["type"] = ts.type;
    tj["detected"] = ts.detected;
    tj["total"] = ts.total;
    tj["mean_distance"] = ts.mean_distance;
    tj["std_distance"] = ts.std_distance;
    tj["mean_decision"] = ts.mean_decision;
    tj["std_decision"] = ts.std_decision;
    types.push_back(std::move(tj));
  }
  j["types"] = std::move(types);
  return j;
}

inline std::string render_summary_text(const EvalSummary& sum) {
  std::ostringstream os;
  os << "mode=" << to_string(sum.mode) << " alpha=" << format_double(sum.alpha)
     << " n=" << sum.suite_size;
  os << " weights=";
  bool first = true;
  for (const auto& [name, w] : sum.weights) {
    if (!first) os << ',';
    os << name << '=' << format_double(w);
    first = false;
  }
  if (!sum.log_approx) os << " no-log";
  os << '\n';
  os << "type            detected/total  eu mean+-std          ac mean+-std          decision mean+-std\n";
  char line[256];
  for (const auto& ts : sum.types) {
    double eu_m = ts.mean_distance.count("eu") ? ts.mean_distance.at("eu") : 0.0;
    double eu_s = ts.std_distance.count("eu") ? ts.std_distance.at("eu") : 0.0;
    double ac_m = ts.mean_distance.count("ac") ? ts.mean_distance.at("ac") : 0.0;
    double ac_s = ts.std_distance.count("ac") ? ts.std_distance.at("ac") : 0.0;
    std::snprintf(line, sizeof(line), "%-15s %3zu/%-3zu         %9.4g+-%-9.4g  %9.4g+-%-9.4g  %9.4g+-%-9.4g\n",
                  ts.type.c_str(), ts.detected, ts.total, eu_m, eu_s, ac_m, ac_s,
                  ts.mean_decision, ts.std_decision);
    os << line;
  }
  char tail[160];
  std::snprintf(tail, sizeof(tail),
                "tp=%zu fp=%zu fn=%zu tn=%zu  precision=%.4f recall=%.4f f1=%.4f\n", sum.tp,
                sum.fp, sum.fn, sum.tn, sum.precision, sum.recall, sum.f1);
  os << tail;
  return os.str();
}

// ---------------------------------------------------------------------------
// ROC over alpha and suite-size sweeps

struct RocPoint {
  double alpha = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
};

inline std::vector<RocPoint> roc_points(const std::vector<CaseProfile>& profiles,
                                        const DecisionConfig& cfg,
                                        const std::vector<double>& alphas) {
  if (alphas.size() < 2) throw ConfigError("roc needs at least 2 alpha values");
  std::size_t positives = 0, negatives = 0;
  for (const auto& cp : profiles) (cp.c.positive ? positives : negatives) += 1;
  if (positives == 0 || negatives == 0)
    throw ConfigError("roc needs both positive and negative cases");
  std::vector<RocPoint> points;
  for (double alpha : alphas) {
    DecisionConfig c = cfg;
    c.alpha = alpha;
    std::size_t tp = 0, fp = 0;
    for (const auto& cp : profiles) {
      bool verdict = decide(cp.profile, c).verdict;
      if (verdict) (cp.c.positive ? tp : fp) += 1;
    }
    points.push_back({alpha, static_cast<double>(tp) / static_cast<double>(positives),
                      static_cast<double>(fp) / static_cast<double>(negatives)});
  }
  return points;
}

/// Trapezoidal area under the (FPR, TPR) polyline after sorting by FPR.
inline double roc_auc(std::vector<RocPoint> points) {
  if (points.size() < 2) throw ConfigError("auc needs at least 2 points");
  std::sort(points.begin(), points.end(), [](const RocPoint& a, const RocPoint& b) {
    if (a.fpr != b.fpr) return a.fpr < b.fpr;
    return a.tpr < b.tpr;
  });
  double auc = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    auc += 0.5 * (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr);
  return auc;
}

/// Extreme endpoints first so the swept curve always pins (1,1) and (0,0).
inline std::vector<double> default_roc_alphas() {
  return {-1e6, -10.0, -5.0, -3.0, -2.0, -1.5, -1.0, -0.75, -0.5, -0.25, 0.0,
          0.1,  0.25,  0.4,  0.55, 0.7,  0.85, 1.0,  1.25,  1.5,  1.75,  2.0,
          2.5,  3.0,   3.5,  4.0,  5.0,  6.5,  8.0,  10.0,  15.0, 25.0,  50.0,
          100.0, 1e6};
}

inline std::vector<RocPoint> roc(const Zoo& zoo, const DecisionConfig& cfg,
                                 const std::vector<double>& alphas) {
  return roc_points(compute_case_profiles(zoo, cfg), cfg, alphas);
}

inline void save_roc_csv(const std::vector<RocPoint>& points, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "alpha,tpr,fpr\n";
  for (const auto& p : points)
    f << format_double(p.alpha) << ',' << format_double(p.tpr) << ',' << format_double(p.fpr)
      << '\n';
  if (!f) throw IoError("write failed for '" + path + "'");
}

struct SweepRow {
  std::size_t n = 0;
  Mode mode = Mode::Blackbox;
  double f1 = 0.0;
};

/// cmd_evaluate at every requested suite size, in both access modes.
inline std::vector<SweepRow> suite_size_sweep(const Zoo& zoo, const std::vector<std::size_t>& sizes) {
  if (sizes.empty()) throw ConfigError("sweep needs at least one size");
  std::vector<SweepRow> rows;
  for (Mode mode : {Mode::Whitebox, Mode::Blackbox}) {
    for (std::size_t n : sizes) {
      DecisionConfig cfg = DecisionConfig::defaults(mode);
      cfg.suite_size = n;
      rows.push_back({n, mode, evaluate(zoo, cfg).f1});
    }
  }
  return rows;
}

inline void save_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "n,mode,f1\n";
  for (const auto& r : rows)
    f << r.n << ',' << to_string(r.mode) << ',' << format_double(r.f1) << '\n';
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace nfard
