#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "nfard/csv.hpp"
#include "nfard/error.hpp"
#include "nfard/matrix.hpp"
#include "nfard/model.hpp"

namespace nfard {

enum class NeuronSource {
  WhiteboxLayer,
  BlackboxLogprob,
  /// Ablation variant: raw probabilities, no logarithm taken.
  BlackboxProb,
};

inline std::string to_string(NeuronSource s) {
  switch (s) {
    case NeuronSource::WhiteboxLayer: return "whitebox_layer";
    case NeuronSource::BlackboxLogprob: return "blackbox_logprob";
    case NeuronSource::BlackboxProb: return "blackbox_prob";
  }
  throw ConfigError("unknown neuron source");
}

inline NeuronSource neuron_source_from_string(const std::string& s) {
  if (s == "whitebox_layer") return NeuronSource::WhiteboxLayer;
  if (s == "blackbox_logprob") return NeuronSource::BlackboxLogprob;
  if (s == "blackbox_prob") return NeuronSource::BlackboxProb;
  throw ParseError("unknown neuron source '" + s + "'");
}

/// Rows are test samples, columns are neurons; column i is the neuron
/// vector of neuron i over the suite.
struct NeuronMatrix {
  Matrix values;
  NeuronSource source = NeuronSource::WhiteboxLayer;
  std::string model_id;
  std::optional<std::size_t> layer_index;

  std::size_t samples() const { return values.rows(); }
  std::size_t neurons() const { return values.cols(); }
};

/// White-box tap of layer k (1-based; k = L gives pre-softmax logits).
inline NeuronMatrix extract_neuron_matrix(const MlpModel& m, const Matrix& x, std::size_t k,
                                          std::string model_id = {}) {
  NeuronMatrix nm;
  nm.values = layer_output(m, x, k);
  nm.source = NeuronSource::WhiteboxLayer;
  nm.model_id = std::move(model_id);
  nm.layer_index = k;
  return nm;
}

constexpr double kProbFloor = 1e-12;

inline void check_probability_rows(const Matrix& probs) {
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      double p = probs(i, j);
      if (p < 0.0 || p > 1.0 + 1e-9)
        throw ParseError("probability entry out of [0,1] at row " + std::to_string(i));
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw ParseError("probability row " + std::to_string(i) + " sums to " + format_double(sum));
  }
}

/// Black-box logit approximation: elementwise log of the output
/// probabilities, floored so quantized or saturated models stay finite.
inline NeuronMatrix approx_neuron_matrix(const Matrix& probs, double floor = kProbFloor,
                                         std::string model_id = {}) {
  check_probability_rows(probs);
  NeuronMatrix nm;
  nm.values = Matrix(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i)
    for (std::size_t j = 0; j < probs.cols(); ++j)
      nm.values(i, j) = std::log(std::max(probs(i, j), floor));
  nm.source = NeuronSource::BlackboxLogprob;
  nm.model_id = std::move(model_id);
  return nm;
}

/// Ablation counterpart of approx_neuron_matrix: probabilities used
/// directly as neuron values.
inline NeuronMatrix prob_neuron_matrix(const Matrix& probs, std::string model_id = {}) {
  check_probability_rows(probs);
  NeuronMatrix nm;
  nm.values = probs;
  nm.source = NeuronSource::BlackboxProb;
  nm.model_id = std::move(model_id);
  return nm;
}

namespace detail {

inline void check_same_shape(const NeuronMatrix& a, const NeuronMatrix& b, const char* what) {
  if (a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols())
    throw DimensionError(std::string(what) + ": shapes " + std::to_string(a.values.rows()) + "x" +
                         std::to_string(a.values.cols()) + " vs " +
                         std::to_string(b.values.rows()) + "x" + std::to_string(b.values.cols()));
}

}  // namespace detail

/// Average Euclidean distance between corresponding neuron vectors.
inline double dist_eu(const NeuronMatrix& hv, const NeuronMatrix& hs) {
  detail::check_same_shape(hv, hs, "dist_eu");
  const Matrix& a = hv.values;
  const Matrix& b = hs.values;
  double total = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double d = a(i, j) - b(i, j);
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(a.cols());
}

constexpr double kZeroColumnNorm = 1e-12;

/// Average cosine distance (1 - cosine similarity) between corresponding
/// neuron vectors. Zero columns: both zero contributes 0, exactly one
/// contributes 1.
inline double dist_ac(const NeuronMatrix& hv, const NeuronMatrix& hs) {
  detail::check_same_shape(hv, hs, "dist_ac");
  const Matrix& a = hv.values;
  const Matrix& b = hs.values;
  double total = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      na += a(i, j) * a(i, j);
      nb += b(i, j) * b(i, j);
      dot += a(i, j) * b(i, j);
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    bool za = na < kZeroColumnNorm, zb = nb < kZeroColumnNorm;
    if (za && zb) continue;
    if (za || zb) {
      total += 1.0;
      continue;
    }
    total += 1.0 - dot / (na * nb);
  }
  return total / static_cast<double>(a.cols());
}

// ---------------------------------------------------------------------------
// Activation-matrix CSV: first line `n,m,source,layer`, then n rows of m
// shortest-round-trip floats. `layer` is empty for black-box sources.

inline void save_neuron_matrix(const NeuronMatrix& nm, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << nm.values.rows() << ',' << nm.values.cols() << ',' << to_string(nm.source) << ',';
  if (nm.layer_index) f << *nm.layer_index;
  f << '\n';
  for (std::size_t i = 0; i < nm.values.rows(); ++i) {
    for (std::size_t j = 0; j < nm.values.cols(); ++j) {
      if (j) f << ',';
      f << format_double(nm.values(i, j));
    }
    f << '\n';
  }
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline NeuronMatrix load_neuron_matrix(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line)) throw ParseError("empty activation-matrix file '" + path + "'");
  auto header = split_csv_line(trim(line));
  if (header.size() != 4)
    throw ParseError("activation-matrix header needs 4 fields, found " +
                     std::to_string(header.size()));
  NeuronMatrix nm;
  std::size_t n = static_cast<std::size_t>(parse_int(trim(header[0])));
  std::size_t m = static_cast<std::size_t>(parse_int(trim(header[1])));
  nm.source = neuron_source_from_string(std::string(trim(header[2])));
  if (!trim(header[3]).empty())
    nm.layer_index = static_cast<std::size_t>(parse_int(trim(header[3])));
  std::vector<double> flat;
  flat.reserve(n * m);
  while (std::getline(f, line)) {
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    auto fields = split_csv_line(sv);
    if (fields.size() != m)
      throw ParseError("activation-matrix row has " + std::to_string(fields.size()) +
                       " fields, expected " + std::to_string(m));
    for (auto fld : fields) flat.push_back(parse_double(trim(fld)));
  }
  if (flat.size() != n * m)
    throw ParseError("activation-matrix row count mismatch in '" + path + "'");
  nm.values = Matrix(n, m, std::move(flat));
  return nm;
}

}  // namespace nfard
