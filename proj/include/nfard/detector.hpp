#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfard/align.hpp"
#include "nfard/error.hpp"
#include "nfard/matrix.hpp"
#include "nfard/metrics.hpp"
#include "nfard/model.hpp"

namespace nfard {

enum class Mode { Whitebox, Blackbox };

inline std::string to_string(Mode m) {
  return m == Mode::Whitebox ? "whitebox" : "blackbox";
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "whitebox" || s == "white") return Mode::Whitebox;
  if (s == "blackbox" || s == "black") return Mode::Blackbox;
  throw ConfigError("unknown mode '" + s + "'");
}

/// Which layer white-box homogeneous detection taps.
struct LayerPolicy {
  enum class Kind { Fraction, SecondLast, Explicit };
  Kind kind = Kind::Fraction;
  double fraction = 0.25;
  std::size_t explicit_layer = 1;

  static LayerPolicy fraction_of_depth(double f) { return {Kind::Fraction, f, 1}; }
  static LayerPolicy second_last() { return {Kind::SecondLast, 0.25, 1}; }
  static LayerPolicy explicit_index(std::size_t k) { return {Kind::Explicit, 0.25, k}; }

  /// 1-based tap index for a model with `num_layers` layers.
  std::size_t resolve(std::size_t num_layers) const {
    switch (kind) {
      case Kind::Fraction: {
        if (fraction <= 0.0 || fraction >= 1.0)
          throw ConfigError("layer fraction must be inside (0,1)");
        auto k = static_cast<std::size_t>(
            std::llround(fraction * static_cast<double>(num_layers)));
        std::size_t hi = num_layers > 1 ? num_layers - 1 : 1;
        return std::clamp<std::size_t>(k, 1, hi);
      }
      case Kind::SecondLast:
        if (num_layers < 2) throw DimensionError("second-last layer needs at least 2 layers");
        return num_layers - 1;
      case Kind::Explicit:
        return explicit_layer;
    }
    throw ConfigError("unknown layer policy");
  }
};

struct DecisionConfig {
  double alpha = 0.85;
  std::map<std::string, double> weights = {{"eu", 1.0}, {"ac", 120.0}};
  Mode mode = Mode::Blackbox;
  std::size_t suite_size = 1000;
  LayerPolicy layer_policy;
  /// false reproduces the no-logarithm ablation: black-box neuron matrices
  /// hold raw probabilities instead of log-probabilities.
  bool log_approx = true;

  static DecisionConfig defaults(Mode mode) {
    DecisionConfig cfg;
    cfg.mode = mode;
    cfg.alpha = mode == Mode::Whitebox ? 3.5 : 0.85;
    return cfg;
  }

  void validate() const {
    if (suite_size < 1) throw ConfigError("suite_size must be >= 1");
    if (weights.empty()) throw ConfigError("weights must not be empty");
    bool any_positive = false;
    for (const auto& [name, w] : weights) {
      if (name != "eu" && name != "ac") throw ConfigError("unknown metric '" + name + "'");
      if (w < 0.0) throw ConfigError("weight for '" + name + "' is negative");
      if (w > 0.0) any_positive = true;
    }
    if (!any_positive) throw ConfigError("at least one metric weight must be positive");
  }
};

/// Shannon entropy in nats, with 0 log 0 = 0.
inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

/// Indices of the n samples on which the victim is least confident
/// (highest prediction entropy), ties broken by ascending index. The
/// samples themselves are never perturbed.
inline std::vector<std::size_t> select_test_suite(const MlpModel& victim, const Dataset& data,
                                                  std::size_t n) {
  if (n > data.size())
    throw DimensionError("suite size " + std::to_string(n) + " exceeds dataset size " +
                         std::to_string(data.size()));
  Matrix probs = predict_proba(victim, data.x);
  std::vector<double> ent(probs.rows());
  std::vector<double> row(probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    for (std::size_t j = 0; j < probs.cols(); ++j) row[j] = probs(i, j);
    ent[i] = entropy(row);
  }
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (ent[a] != ent[b]) return ent[a] > ent[b];
    return a < b;
  });
  idx.resize(n);
  return idx;
}

inline Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= x.rows()) throw DimensionError("row index out of range");
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(idx[r], c);
  }
  return out;
}

struct Quartiles {
  double q1, median, q3;
};

/// Sorts ascending and interpolates linearly at fractional position
/// q * (len - 1).
inline Quartiles quartiles(std::vector<double> values) {
  if (values.size() < 2) throw DimensionError("quartiles need at least 2 values");
  std::sort(values.begin(), values.end());
  auto at = [&](double q) {
    double pos = q * static_cast<double>(values.size() - 1);
    auto lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, values.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
  };
  return {at(0.25), at(0.5), at(0.75)};
}

/// IQR rule over the pooled set {x, y_1..y_R}: d = median - alpha * IQR - x.
/// Positive d means x sits below the outlier fence, i.e. suspiciously close.
inline double decision_value(double x, const std::vector<double>& ys, double alpha) {
  if (ys.size() < 2) throw DimensionError("decision_value needs at least 2 references");
  std::vector<double> pool;
  pool.reserve(ys.size() + 1);
  pool.push_back(x);
  pool.insert(pool.end(), ys.begin(), ys.end());
  Quartiles q = quartiles(std::move(pool));
  return q.median - alpha * (q.q3 - q.q1) - x;
}

/// Distances of one victim/suspect/reference constellation, before any
/// decision parameters are applied. Computing these once lets alpha sweeps
/// re-decide cheaply.
struct DistanceProfile {
  std::string suspect_id;
  std::vector<std::string> reference_ids;
  std::map<std::string, double> suspect_distances;
  std::vector<std::map<std::string, double>> reference_distances;
  Mode mode = Mode::Blackbox;
  std::optional<std::size_t> layer_used;
  bool hetero = false;
  std::vector<std::string> warnings;
};

struct MetricDecision {
  std::string metric;
  double suspect_distance = 0.0;
  std::vector<double> reference_distances;
  double decision_value = 0.0;
};

struct DetectionReport {
  std::string suspect_id;
  std::vector<std::string> reference_ids;
  std::vector<MetricDecision> metrics;
  double weighted_sum = 0.0;
  bool verdict = false;
  Mode mode = Mode::Blackbox;
  std::optional<std::size_t> layer_used;
  bool hetero = false;
  std::vector<std::string> warnings;
};

inline std::string model_id_of(const MlpModel& m) {
  if (m.meta.is_object() && m.meta.contains("id") && m.meta["id"].is_string())
    return m.meta["id"].get<std::string>();
  return {};
}

namespace detail {

// In heterogeneous mode every victim/model pair is aligned, equal widths
// included, so references face the same least-squares fit as the suspect.
inline std::map<std::string, double> pair_distances(const NeuronMatrix& hv,
                                                    const NeuronMatrix& hg, bool align,
                                                    std::vector<std::string>& warnings,
                                                    const std::string& other_id) {
  const NeuronMatrix* a = &hv;
  const NeuronMatrix* b = &hg;
  NeuronMatrix aa, bb;
  if (align) {
    std::size_t wide = std::max(hv.values.cols(), hg.values.cols());
    if (alignment_underdetermined(hv.values.rows(), wide))
      warnings.push_back("underdetermined alignment vs '" + other_id + "': " +
                         std::to_string(hv.values.rows()) + " samples for source width " +
                         std::to_string(wide));
    auto aligned = hetero_align(hv, hg);
    aa = std::move(aligned.first);
    bb = std::move(aligned.second);
    a = &aa;
    b = &bb;
  }
  return {{"eu", dist_eu(*a, *b)}, {"ac", dist_ac(*a, *b)}};
}

inline NeuronMatrix blackbox_matrix(const MlpModel& m, const Matrix& suite_x, bool log_approx) {
  Matrix probs = predict_proba(m, suite_x);
  return log_approx ? approx_neuron_matrix(probs, kProbFloor, model_id_of(m))
                    : prob_neuron_matrix(probs, model_id_of(m));
}

}  // namespace detail

/// Distance stage of Algorithm 1 against an already-selected test suite.
/// Routing: white-box homogeneous taps one shared layer; white-box
/// heterogeneous taps each model's second-last layer and aligns per pair;
/// black-box uses (log-)probability matrices, aligned when class counts
/// differ.
inline DistanceProfile compute_distances(const MlpModel& victim, const MlpModel& suspect,
                                         const std::vector<MlpModel>& references,
                                         const Matrix& suite_x, const DecisionConfig& cfg) {
  cfg.validate();
  if (references.size() < 2)
    throw DimensionError("detection needs at least 2 references, got " +
                         std::to_string(references.size()));
  if (suite_x.rows() == 0) throw DimensionError("empty test suite");

  DistanceProfile prof;
  prof.suspect_id = model_id_of(suspect);
  prof.mode = cfg.mode;
  for (const MlpModel& r : references) prof.reference_ids.push_back(model_id_of(r));

  if (cfg.mode == Mode::Whitebox) {
    prof.hetero = suspect.arch_string() != victim.arch_string();
    if (!prof.hetero) {
      for (const MlpModel& r : references)
        if (r.arch_string() != victim.arch_string())
          throw DimensionError("homogeneous white-box detection requires reference architecture " +
                               victim.arch_string() + ", got " + r.arch_string());
      std::size_t k = cfg.layer_policy.resolve(victim.num_layers());
      prof.layer_used = k;
      NeuronMatrix hv = extract_neuron_matrix(victim, suite_x, k, model_id_of(victim));
      NeuronMatrix hs = extract_neuron_matrix(suspect, suite_x, k, prof.suspect_id);
      prof.suspect_distances =
          detail::pair_distances(hv, hs, false, prof.warnings, prof.suspect_id);
      for (std::size_t i = 0; i < references.size(); ++i) {
        NeuronMatrix hr = extract_neuron_matrix(references[i], suite_x, k, prof.reference_ids[i]);
        prof.reference_distances.push_back(
            detail::pair_distances(hv, hr, false, prof.warnings, prof.reference_ids[i]));
      }
    } else {
      if (cfg.layer_policy.kind == LayerPolicy::Kind::Explicit)
        prof.warnings.push_back(
            "explicit layer policy ignored: heterogeneous comparison taps second-last layers");
      std::size_t kv = LayerPolicy::second_last().resolve(victim.num_layers());
      prof.layer_used = kv;
      NeuronMatrix hv = extract_neuron_matrix(victim, suite_x, kv, model_id_of(victim));
      NeuronMatrix hs = extract_neuron_matrix(
          suspect, suite_x, LayerPolicy::second_last().resolve(suspect.num_layers()),
          prof.suspect_id);
      prof.suspect_distances = detail::pair_distances(hv, hs, true, prof.warnings, prof.suspect_id);
      for (std::size_t i = 0; i < references.size(); ++i) {
        const MlpModel& r = references[i];
        NeuronMatrix hr = extract_neuron_matrix(
            r, suite_x, LayerPolicy::second_last().resolve(r.num_layers()), prof.reference_ids[i]);
        prof.reference_distances.push_back(
            detail::pair_distances(hv, hr, true, prof.warnings, prof.reference_ids[i]));
      }
    }
  } else {
    prof.hetero = suspect.num_classes() != victim.num_classes();
    if (!prof.hetero)
      for (const MlpModel& r : references)
        if (r.num_classes() != victim.num_classes())
          throw DimensionError(
              "homogeneous black-box detection requires reference class count " +
              std::to_string(victim.num_classes()) + ", got " + std::to_string(r.num_classes()));
    NeuronMatrix hv = detail::blackbox_matrix(victim, suite_x, cfg.log_approx);
    NeuronMatrix hs = detail::blackbox_matrix(suspect, suite_x, cfg.log_approx);
    prof.suspect_distances =
        detail::pair_distances(hv, hs, prof.hetero, prof.warnings, prof.suspect_id);
    for (std::size_t i = 0; i < references.size(); ++i) {
      NeuronMatrix hr = detail::blackbox_matrix(references[i], suite_x, cfg.log_approx);
      prof.reference_distances.push_back(
          detail::pair_distances(hv, hr, prof.hetero, prof.warnings, prof.reference_ids[i]));
    }
  }
  return prof;
}

/// Decision stage: per-metric IQR rule, then the weighted verdict.
inline DetectionReport decide(const DistanceProfile& prof, const DecisionConfig& cfg) {
  cfg.validate();
  DetectionReport rep;
  rep.suspect_id = prof.suspect_id;
  rep.reference_ids = prof.reference_ids;
  rep.mode = prof.mode;
  rep.layer_used = prof.layer_used;
  rep.hetero = prof.hetero;
  rep.warnings = prof.warnings;
  for (const auto& [name, weight] : cfg.weights) {
    auto it = prof.suspect_distances.find(name);
    if (it == prof.suspect_distances.end())
      throw ConfigError("metric '" + name + "' missing from distance profile");
    MetricDecision md;
    md.metric = name;
    md.suspect_distance = it->second;
    for (const auto& ref : prof.reference_distances)
      md.reference_distances.push_back(ref.at(name));
    md.decision_value = decision_value(md.suspect_distance, md.reference_distances, cfg.alpha);
    rep.weighted_sum += weight * md.decision_value;
    rep.metrics.push_back(std::move(md));
  }
  rep.verdict = rep.weighted_sum > 0.0;
  return rep;
}

inline DetectionReport detect(const MlpModel& victim, const MlpModel& suspect,
                              const std::vector<MlpModel>& references, const Dataset& data,
                              const DecisionConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> suite = select_test_suite(victim, data, cfg.suite_size);
  Matrix suite_x = gather_rows(data.x, suite);
  return decide(compute_distances(victim, suspect, references, suite_x, cfg), cfg);
}

/// Same as detect per element; the test suite is selected once and shared.
inline std::vector<DetectionReport> detect_batch(const MlpModel& victim,
                                                 const std::vector<MlpModel>& suspects,
                                                 const std::vector<MlpModel>& references,
                                                 const Dataset& data, const DecisionConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> suite = select_test_suite(victim, data, cfg.suite_size);
  Matrix suite_x = gather_rows(data.x, suite);
  std::vector<DetectionReport> out;
  out.reserve(suspects.size());
  for (const MlpModel& s : suspects)
    out.push_back(decide(compute_distances(victim, s, references, suite_x, cfg), cfg));
  return out;
}

inline nlohmann::json report_to_json(const DetectionReport& rep) {
  nlohmann::json j;
  j["suspect_id"] = rep.suspect_id;
  j["reference_ids"] = rep.reference_ids;
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& md : rep.metrics) {
    nlohmann::json mj;
    mj["metric"] = md.metric;
    mj["suspect_distance"] = md.suspect_distance;
    mj["reference_distances"] = md.reference_distances;
    mj["decision_value"] = md.decision_value;
    metrics.push_back(std::move(mj));
  }
  j["metrics"] = std::move(metrics);
  j["weighted_sum"] = rep.weighted_sum;
  j["verdict"] = rep.verdict;
  j["mode"] = to_string(rep.mode);
  if (rep.layer_used)
    j["layer_used"] = *rep.layer_used;
  else
    j["layer_used"] = nullptr;
  j["hetero"] = rep.hetero;
  j["warnings"] = rep.warnings;
  return j;
}

}  // namespace nfard
