#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfard/csv.hpp"
#include "nfard/error.hpp"
#include "nfard/matrix.hpp"
#include "nfard/rng.hpp"

namespace nfard {

/// Fully connected network: ReLU after every hidden layer, affine output.
/// weights[l] has shape (layer_dims[l], layer_dims[l+1]); inputs are rows.
struct MlpModel {
  std::vector<std::size_t> layer_dims;
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t num_layers() const { return weights.size(); }
  std::size_t input_dim() const { return layer_dims.empty() ? 0 : layer_dims.front(); }
  std::size_t num_classes() const { return layer_dims.empty() ? 0 : layer_dims.back(); }

  /// Architecture descriptor, e.g. "20-32-16-8". Two models are considered
  /// homogeneous for white-box comparison exactly when these match.
  std::string arch_string() const {
    std::string s;
    for (std::size_t i = 0; i < layer_dims.size(); ++i) {
      if (i) s += '-';
      s += std::to_string(layer_dims[i]);
    }
    return s;
  }

  void validate() const {
    if (layer_dims.size() < 2) throw DimensionError("model needs at least input and output dims");
    if (weights.size() != layer_dims.size() - 1 || biases.size() != weights.size())
      throw DimensionError("model layer count mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != layer_dims[l] || weights[l].cols() != layer_dims[l + 1])
        throw DimensionError("weight matrix " + std::to_string(l) + " has wrong shape");
      if (!weights[l].all_finite())
        throw NumericalError("non-finite weight in layer " + std::to_string(l));
      if (biases[l].size() != layer_dims[l + 1])
        throw DimensionError("bias vector " + std::to_string(l) + " has wrong length");
      for (double b : biases[l])
        if (!std::isfinite(b)) throw NumericalError("non-finite bias in layer " + std::to_string(l));
    }
  }
};

struct Dataset {
  Matrix x;                    // n x d
  std::vector<int> labels;     // n entries in [0, num_classes)
  std::size_t num_classes = 0;

  std::size_t size() const { return x.rows(); }

  void validate() const {
    if (labels.size() != x.rows()) throw DimensionError("dataset label count mismatch");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
        throw ParseError("dataset label " + std::to_string(y) + " out of range");
  }
};

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
/// Consumption order is fixed (layer by layer, row-major) so a seed pins
/// the exact initial parameters.
inline MlpModel init_model(const std::vector<std::size_t>& layer_dims, std::uint64_t seed) {
  if (layer_dims.size() < 2) throw DimensionError("init_model needs at least two dims");
  for (std::size_t d : layer_dims)
    if (d == 0) throw DimensionError("init_model: zero-width layer");
  MlpModel m;
  m.layer_dims = layer_dims;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    std::size_t in = layer_dims[l], out = layer_dims[l + 1];
    double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(in, out);
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t j = 0; j < out; ++j) w(i, j) = rng.uniform(-limit, limit);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(out, 0.0);
  }
  return m;
}

/// Pre-activations z_l = a_{l-1} W_l + b_l for every layer plus the
/// post-activation inputs, as needed by backprop.
struct ForwardTrace {
  std::vector<Matrix> pre;   // one per layer
  std::vector<Matrix> post;  // post[0] is the input itself
};

inline Matrix affine(const Matrix& a, const Matrix& w, const std::vector<double>& b) {
  Matrix z = matmul(a, w);
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += b[j];
  return z;
}

inline Matrix relu(const Matrix& z) {
  Matrix a = z;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (a(i, j) < 0.0) a(i, j) = 0.0;
  return a;
}

inline ForwardTrace forward_trace(const MlpModel& m, const Matrix& x) {
  if (x.cols() != m.input_dim())
    throw DimensionError("forward: input dim " + std::to_string(x.cols()) + " expected " +
                         std::to_string(m.input_dim()));
  ForwardTrace t;
  t.post.push_back(x);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    Matrix z = affine(t.post.back(), m.weights[l], m.biases[l]);
    t.pre.push_back(z);
    if (l + 1 < m.num_layers())
      t.post.push_back(relu(z));
    else
      t.post.push_back(std::move(z));
  }
  return t;
}

/// Per-layer outputs (post-ReLU for hidden layers, logits for the last),
/// the logits again for convenience, and softmax probabilities.
struct ForwardResult {
  std::vector<Matrix> activations;
  Matrix logits;
  Matrix probs;
};

/// Logits only.
inline Matrix forward(const MlpModel& m, const Matrix& x) {
  if (x.cols() != m.input_dim())
    throw DimensionError("forward: input dim " + std::to_string(x.cols()) + " expected " +
                         std::to_string(m.input_dim()));
  Matrix a = x;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    a = affine(a, m.weights[l], m.biases[l]);
    if (l + 1 < m.num_layers()) a = relu(a);
  }
  return a;
}

/// Output of layer `k` (1-based): post-ReLU for hidden layers, pre-softmax
/// logits for k = num_layers(). These are the neuron outputs compared by
/// the white-box metrics.
inline Matrix layer_output(const MlpModel& m, const Matrix& x, std::size_t k) {
  if (k < 1 || k > m.num_layers())
    throw DimensionError("layer_output: layer index " + std::to_string(k) + " out of range");
  Matrix a = x;
  for (std::size_t l = 0; l < k; ++l) {
    a = affine(a, m.weights[l], m.biases[l]);
    if (l + 1 < m.num_layers()) a = relu(a);
  }
  return a;
}

inline Matrix softmax_rows(const Matrix& logits);

inline ForwardResult forward_all(const MlpModel& m, const Matrix& x) {
  ForwardTrace t = forward_trace(m, x);
  ForwardResult r;
  r.activations.assign(t.post.begin() + 1, t.post.end());
  r.logits = t.pre.back();
  r.probs = softmax_rows(r.logits);
  return r;
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double mx = logits(i, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      double e = std::exp(logits(i, j) - mx);
      p(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < logits.cols(); ++j) p(i, j) /= sum;
  }
  return p;
}

inline Matrix predict_proba(const MlpModel& m, const Matrix& x) {
  return softmax_rows(forward(m, x));
}

inline std::vector<int> predict(const MlpModel& m, const Matrix& x) {
  Matrix logits = forward(m, x);
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

inline double accuracy(const MlpModel& m, const Dataset& ds) {
  if (ds.size() == 0) throw DimensionError("accuracy on empty dataset");
  std::vector<int> pred = predict(m, ds.x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == ds.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

struct TrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 0.05;
  std::size_t batch_size = 64;
  double l2 = 0.0;
  std::uint64_t seed = 0;
  /// Per-layer: true freezes that layer's weights and bias entirely.
  std::vector<bool> freeze_mask;
  /// Optional per-layer 0/1 masks multiplied into the weights after every
  /// update, keeping pruned connections at zero.
  std::vector<Matrix> weight_masks;
};

struct Gradients {
  std::vector<Matrix> dw;
  std::vector<std::vector<double>> db;
};

/// Mean cross-entropy over the batch and its parameter gradients.
inline double loss_and_gradients(const MlpModel& m, const Matrix& x,
                                 const std::vector<int>& labels, Gradients& g) {
  if (labels.size() != x.rows()) throw DimensionError("loss: label count mismatch");
  const std::size_t n = x.rows();
  if (n == 0) throw DimensionError("loss on empty batch");
  ForwardTrace t = forward_trace(m, x);
  Matrix probs = softmax_rows(t.pre.back());

  double loss = 0.0;
  Matrix delta = probs;  // dL/dz for the last layer: (p - onehot)/n
  for (std::size_t i = 0; i < n; ++i) {
    double p = std::max(probs(i, static_cast<std::size_t>(labels[i])), 1e-300);
    loss -= std::log(p);
    delta(i, static_cast<std::size_t>(labels[i])) -= 1.0;
  }
  loss /= static_cast<double>(n);
  double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < delta.rows(); ++i)
    for (std::size_t j = 0; j < delta.cols(); ++j) delta(i, j) *= inv_n;

  g.dw.assign(m.num_layers(), Matrix());
  g.db.assign(m.num_layers(), {});
  for (std::size_t l = m.num_layers(); l-- > 0;) {
    g.dw[l] = matmul_transa(t.post[l], delta);
    std::vector<double> db(delta.cols(), 0.0);
    for (std::size_t i = 0; i < delta.rows(); ++i)
      for (std::size_t j = 0; j < delta.cols(); ++j) db[j] += delta(i, j);
    g.db[l] = std::move(db);
    if (l > 0) {
      Matrix prev = matmul_transb(delta, m.weights[l]);
      // ReLU gate on the pre-activation of layer l (1-based: t.pre[l-1]).
      for (std::size_t i = 0; i < prev.rows(); ++i)
        for (std::size_t j = 0; j < prev.cols(); ++j)
          if (t.pre[l - 1](i, j) <= 0.0) prev(i, j) = 0.0;
      delta = std::move(prev);
    }
  }
  return loss;
}

/// Distillation / extraction objective: mean KL divergence from the target
/// distribution to the temperature-softened student distribution, scaled by
/// T^2 so gradient magnitudes stay comparable across temperatures.
inline double soft_loss_and_gradients(const MlpModel& m, const Matrix& x, const Matrix& targets,
                                      double temperature, Gradients& g) {
  if (targets.rows() != x.rows() || targets.cols() != m.num_classes())
    throw DimensionError("soft loss: target shape mismatch");
  if (temperature <= 0.0) throw ConfigError("soft loss: temperature must be positive");
  const std::size_t n = x.rows();
  if (n == 0) throw DimensionError("soft loss on empty batch");
  ForwardTrace t = forward_trace(m, x);
  Matrix scaled = t.pre.back();
  for (std::size_t i = 0; i < scaled.rows(); ++i)
    for (std::size_t j = 0; j < scaled.cols(); ++j) scaled(i, j) /= temperature;
  Matrix probs = softmax_rows(scaled);

  double loss = 0.0;
  Matrix delta(probs.rows(), probs.cols());
  double coef = temperature / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      double tv = targets(i, j);
      if (tv > 0.0) loss += tv * (std::log(tv) - std::log(std::max(probs(i, j), 1e-300)));
      delta(i, j) = coef * (probs(i, j) - tv);
    }
  loss *= temperature * temperature / static_cast<double>(n);

  g.dw.assign(m.num_layers(), Matrix());
  g.db.assign(m.num_layers(), {});
  for (std::size_t l = m.num_layers(); l-- > 0;) {
    g.dw[l] = matmul_transa(t.post[l], delta);
    std::vector<double> db(delta.cols(), 0.0);
    for (std::size_t i = 0; i < delta.rows(); ++i)
      for (std::size_t j = 0; j < delta.cols(); ++j) db[j] += delta(i, j);
    g.db[l] = std::move(db);
    if (l > 0) {
      Matrix prev = matmul_transb(delta, m.weights[l]);
      for (std::size_t i = 0; i < prev.rows(); ++i)
        for (std::size_t j = 0; j < prev.cols(); ++j)
          if (t.pre[l - 1](i, j) <= 0.0) prev(i, j) = 0.0;
      delta = std::move(prev);
    }
  }
  return loss;
}

namespace detail {

inline void apply_update(MlpModel& m, const Gradients& g, const TrainConfig& cfg) {
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    if (l < cfg.freeze_mask.size() && cfg.freeze_mask[l]) continue;
    Matrix& w = m.weights[l];
    const Matrix& dw = g.dw[l];
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j)
        w(i, j) -= cfg.learning_rate * (dw(i, j) + cfg.l2 * w(i, j));
    if (l < cfg.weight_masks.size() && !cfg.weight_masks[l].empty()) {
      const Matrix& mask = cfg.weight_masks[l];
      if (mask.rows() != w.rows() || mask.cols() != w.cols())
        throw DimensionError("weight mask shape mismatch at layer " + std::to_string(l));
      for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) *= mask(i, j);
    }
    for (std::size_t j = 0; j < m.biases[l].size(); ++j)
      m.biases[l][j] -= cfg.learning_rate * g.db[l][j];
  }
}

inline Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx, std::size_t lo,
                          std::size_t hi) {
  Matrix out(hi - lo, x.cols());
  for (std::size_t r = lo; r < hi; ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r - lo, c) = x(idx[r], c);
  return out;
}

}  // namespace detail

/// Mini-batch SGD from the given starting point. Deterministic for a fixed
/// config: one Fisher-Yates shuffle per epoch from cfg.seed.
inline MlpModel train_from(MlpModel m, const Dataset& ds, const TrainConfig& cfg) {
  ds.validate();
  m.validate();
  if (ds.num_classes != m.num_classes())
    throw DimensionError("train: dataset classes != model classes");
  if (cfg.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (cfg.learning_rate <= 0.0) throw ConfigError("train: learning_rate must be positive");

  // Masks clamp the starting point too, so pruned weights stay pruned even
  // before the first update.
  TrainConfig cfg_local = cfg;
  for (std::size_t l = 0; l < cfg_local.weight_masks.size() && l < m.num_layers(); ++l) {
    const Matrix& mask = cfg_local.weight_masks[l];
    if (mask.empty()) continue;
    Matrix& w = m.weights[l];
    if (mask.rows() != w.rows() || mask.cols() != w.cols())
      throw DimensionError("weight mask shape mismatch at layer " + std::to_string(l));
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) *= mask(i, j);
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  Gradients g;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < ds.size(); start += cfg.batch_size) {
      std::size_t stop = std::min(start + cfg.batch_size, ds.size());
      Matrix bx = detail::gather_rows(ds.x, order, start, stop);
      std::vector<int> by(stop - start);
      for (std::size_t r = start; r < stop; ++r) by[r - start] = ds.labels[order[r]];
      double loss = loss_and_gradients(m, bx, by, g);
      if (!std::isfinite(loss)) throw TrainingError("loss diverged to non-finite value");
      detail::apply_update(m, g, cfg_local);
    }
  }
  m.validate();
  return m;
}

inline MlpModel train(const std::vector<std::size_t>& layer_dims, const Dataset& ds,
                      const TrainConfig& cfg) {
  return train_from(init_model(layer_dims, cfg.seed), ds, cfg);
}

/// SGD against fixed soft targets (teacher probabilities at `temperature`).
inline MlpModel train_soft(MlpModel m, const Matrix& x, const Matrix& targets, double temperature,
                           const TrainConfig& cfg) {
  m.validate();
  if (x.rows() != targets.rows()) throw DimensionError("train_soft: row count mismatch");
  if (cfg.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(x.rows());
  std::iota(order.begin(), order.end(), 0);
  Gradients g;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < x.rows(); start += cfg.batch_size) {
      std::size_t stop = std::min(start + cfg.batch_size, x.rows());
      Matrix bx = detail::gather_rows(x, order, start, stop);
      Matrix bt = detail::gather_rows(targets, order, start, stop);
      double loss = soft_loss_and_gradients(m, bx, bt, temperature, g);
      if (!std::isfinite(loss)) throw TrainingError("soft loss diverged to non-finite value");
      detail::apply_update(m, g, cfg);
    }
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Serialization

/// Each layer's weights are stored as one flat row-major array with shape
/// (layer output width x layer input width); shapes come from layer_dims.
inline nlohmann::json model_to_json(const MlpModel& m) {
  m.validate();
  nlohmann::json j;
  j["layer_dims"] = m.layer_dims;
  j["activation"] = "relu";
  nlohmann::json ws = nlohmann::json::array();
  for (const Matrix& w : m.weights) {
    nlohmann::json flat = nlohmann::json::array();
    for (std::size_t out = 0; out < w.cols(); ++out)
      for (std::size_t in = 0; in < w.rows(); ++in) flat.push_back(w(in, out));
    ws.push_back(std::move(flat));
  }
  j["weights"] = std::move(ws);
  j["biases"] = m.biases;
  j["meta"] = m.meta;
  return j;
}

inline MlpModel model_from_json(const nlohmann::json& j) {
  MlpModel m;
  try {
    m.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    if (m.layer_dims.size() < 2) throw ParseError("layer_dims needs at least two entries");
    if (j.at("activation").get<std::string>() != "relu")
      throw ParseError("unsupported activation '" + j.at("activation").get<std::string>() + "'");
    const auto& ws = j.at("weights");
    if (ws.size() != m.layer_dims.size() - 1)
      throw ParseError("weights: expected " + std::to_string(m.layer_dims.size() - 1) +
                       " layers, found " + std::to_string(ws.size()));
    for (std::size_t l = 0; l < ws.size(); ++l) {
      std::size_t in = m.layer_dims[l], out = m.layer_dims[l + 1];
      const auto& flat = ws[l];
      if (flat.size() != in * out)
        throw ParseError("weights[" + std::to_string(l) + "]: expected " +
                         std::to_string(in * out) + " values, found " +
                         std::to_string(flat.size()));
      Matrix w(in, out);
      std::size_t idx = 0;
      for (std::size_t o = 0; o < out; ++o)
        for (std::size_t i = 0; i < in; ++i) w(i, o) = flat[idx++].get<double>();
      m.weights.push_back(std::move(w));
    }
    m.biases = j.at("biases").get<std::vector<std::vector<double>>>();
    if (j.contains("meta")) m.meta = j.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model JSON: ") + e.what());
  }
  m.validate();
  return m;
}

inline void save_model(const MlpModel& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << model_to_json(m).dump(1) << '\n';
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline MlpModel load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("invalid JSON in '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

/// Dataset CSV: one header line `# n=<n> d=<d> classes=<m>` then per row
/// d feature values followed by the integer label.
inline void save_dataset(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "# n=" << ds.size() << " d=" << ds.x.cols() << " classes=" << ds.num_classes << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t jx = 0; jx < ds.x.cols(); ++jx) {
      if (jx) f << ',';
      f << format_double(ds.x(i, jx));
    }
    f << ',' << ds.labels[i] << '\n';
  }
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string header;
  if (!std::getline(f, header)) throw ParseError("empty dataset file '" + path + "'");
  std::size_t n = 0, d = 0, classes = 0;
  if (std::sscanf(header.c_str(), "# n=%zu d=%zu classes=%zu", &n, &d, &classes) != 3)
    throw ParseError("bad dataset header in '" + path + "'");
  if (d == 0 || classes == 0) throw ParseError("degenerate dataset header in '" + path + "'");

  Dataset ds;
  ds.num_classes = classes;
  std::vector<double> flat;
  flat.reserve(n * d);
  ds.labels.reserve(n);
  std::string line;
  while (std::getline(f, line)) {
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    auto fields = split_csv_line(sv);
    if (fields.size() != d + 1)
      throw ParseError("dataset row has " + std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(d + 1));
    for (std::size_t jx = 0; jx < d; ++jx) flat.push_back(parse_double(trim(fields[jx])));
    ds.labels.push_back(static_cast<int>(parse_int(trim(fields[d]))));
  }
  if (ds.labels.size() != n)
    throw ParseError("dataset row count " + std::to_string(ds.labels.size()) +
                     " does not match header n=" + std::to_string(n));
  ds.x = Matrix(n, d, std::move(flat));
  ds.validate();
  return ds;
}

}  // namespace nfard
