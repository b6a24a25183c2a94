#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfard/error.hpp"
#include "nfard/matrix.hpp"
#include "nfard/model.hpp"
#include "nfard/rng.hpp"

namespace nfard {

/// Gaussian class clusters: per-class mean drawn once from the seed, unit
/// spread around it. Labels cycle 0,1,...,C-1 so classes stay balanced
/// within one sample.
inline Dataset synth_dataset(std::uint64_t seed, std::size_t num_classes, std::size_t d_in,
                             std::size_t n) {
  if (num_classes < 2) throw ConfigError("synth_dataset needs at least 2 classes");
  if (d_in == 0) throw ConfigError("synth_dataset needs d_in >= 1");
  Rng rng(seed);
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(d_in));
  for (auto& mu : means)
    for (double& v : mu) v = rng.uniform(-1.2, 1.2);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.x = Matrix(n, d_in);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = i % num_classes;
    ds.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < d_in; ++j) ds.x(i, j) = means[c][j] + rng.normal();
  }
  return ds;
}

enum class FinetuneScope { Last, All };

inline FinetuneScope scope_from_string(const std::string& s) {
  if (s == "last") return FinetuneScope::Last;
  if (s == "all") return FinetuneScope::All;
  throw ConfigError("unknown fine-tune scope '" + s + "'");
}

namespace detail {

inline void check_task(const MlpModel& victim, const Dataset& data, const char* what) {
  if (data.num_classes != victim.num_classes())
    throw DimensionError(std::string(what) + ": dataset has " + std::to_string(data.num_classes) +
                         " classes, victim expects " + std::to_string(victim.num_classes()));
  if (data.x.cols() != victim.input_dim())
    throw DimensionError(std::string(what) + ": dataset dim " + std::to_string(data.x.cols()) +
                         ", victim expects " + std::to_string(victim.input_dim()));
}

inline std::vector<bool> freeze_all_but_last(const MlpModel& m) {
  std::vector<bool> mask(m.num_layers(), true);
  mask.back() = false;
  return mask;
}

}  // namespace detail

/// Continues training from the victim's weights. scope=Last freezes every
/// hidden layer; callers pass a reduced learning rate through cfg.
inline MlpModel finetune(const MlpModel& victim, const Dataset& data, FinetuneScope scope,
                         TrainConfig cfg) {
  detail::check_task(victim, data, "finetune");
  if (scope == FinetuneScope::Last) cfg.freeze_mask = detail::freeze_all_but_last(victim);
  return train_from(victim, data, cfg);
}

/// Like finetune, but the last layer is freshly re-initialized first.
inline MlpModel retrain(const MlpModel& victim, const Dataset& data, FinetuneScope scope,
                        TrainConfig cfg) {
  detail::check_task(victim, data, "retrain");
  MlpModel m = victim;
  std::size_t last = m.num_layers() - 1;
  std::size_t in = m.layer_dims[last], out = m.layer_dims[last + 1];
  Rng rng(derive_seed(cfg.seed, "retrain-init"));
  double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out; ++j) m.weights[last](i, j) = rng.uniform(-limit, limit);
  std::fill(m.biases[last].begin(), m.biases[last].end(), 0.0);
  if (scope == FinetuneScope::Last) cfg.freeze_mask = detail::freeze_all_but_last(m);
  return train_from(std::move(m), data, cfg);
}

/// 0/1 masks zeroing the `ratio` fraction of smallest-magnitude weights
/// across all layers (global threshold, biases excluded).
inline std::vector<Matrix> global_prune_masks(const MlpModel& m, double ratio) {
  if (ratio < 0.0 || ratio >= 1.0) throw ConfigError("prune ratio must be in [0,1)");
  std::vector<double> mags;
  for (const Matrix& w : m.weights)
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) mags.push_back(std::abs(w(i, j)));
  auto count = static_cast<std::size_t>(
      std::ceil(ratio * static_cast<double>(mags.size())));
  std::vector<Matrix> masks;
  if (count == 0) {
    for (const Matrix& w : m.weights) {
      Matrix mask(w.rows(), w.cols());
      for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) mask(i, j) = 1.0;
      masks.push_back(std::move(mask));
    }
    return masks;
  }
  std::sort(mags.begin(), mags.end());
  double threshold = mags[count - 1];
  for (const Matrix& w : m.weights) {
    Matrix mask(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j)
        mask(i, j) = std::abs(w(i, j)) <= threshold ? 0.0 : 1.0;
    masks.push_back(std::move(mask));
  }
  return masks;
}

/// Global magnitude pruning followed by mask-honoring fine-tuning: pruned
/// positions stay exactly zero through every update.
inline MlpModel prune(const MlpModel& victim, const Dataset& data, double ratio, TrainConfig cfg) {
  detail::check_task(victim, data, "prune");
  cfg.weight_masks = global_prune_masks(victim, ratio);
  return train_from(victim, data, cfg);
}

// ---------------------------------------------------------------------------
// Quantization

/// IEEE 754 binary64 -> binary16 -> binary64 round trip with
/// round-to-nearest-even, via the binary32 intermediate.
inline double round_to_half(double v) {
  auto f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  std::uint32_t sign = bits >> 31;
  std::int32_t exp = static_cast<std::int32_t>((bits >> 23) & 0xff) - 127;
  std::uint32_t mant = bits & 0x7fffff;

  std::uint16_t half;
  if (exp == 128) {  // inf / nan
    half = static_cast<std::uint16_t>((sign << 15) | 0x7c00 | (mant ? 0x200 : 0));
  } else if (exp > 15) {  // overflow -> inf
    half = static_cast<std::uint16_t>((sign << 15) | 0x7c00);
  } else if (exp >= -14) {  // normal half
    std::uint32_t m = mant >> 13;
    std::uint32_t rest = mant & 0x1fff;
    if (rest > 0x1000 || (rest == 0x1000 && (m & 1))) ++m;  // ties to even
    std::uint32_t e = static_cast<std::uint32_t>(exp + 15);
    half = static_cast<std::uint16_t>((sign << 15) | (e << 10) | m);  // mantissa carry bumps e
  } else if (exp >= -25) {  // subnormal half (-25 still rounds to nearest)
    std::uint32_t full = mant | 0x800000;
    int shift = -exp - 14 + 13;
    std::uint32_t m = full >> shift;
    std::uint32_t rest = full & ((1u << shift) - 1);
    std::uint32_t halfway = 1u << (shift - 1);
    if (rest > halfway || (rest == halfway && (m & 1))) ++m;
    half = static_cast<std::uint16_t>((sign << 15) | m);
  } else {  // underflow -> zero
    half = static_cast<std::uint16_t>(sign << 15);
  }

  std::uint32_t hsign = (half >> 15) & 1;
  std::uint32_t hexp = (half >> 10) & 0x1f;
  std::uint32_t hmant = half & 0x3ff;
  std::uint32_t out;
  if (hexp == 0x1f) {
    out = (hsign << 31) | 0x7f800000 | (hmant << 13);
  } else if (hexp == 0) {
    if (hmant == 0) {
      out = hsign << 31;
    } else {
      int e = 0;
      std::uint32_t m = hmant;
      while (!(m & 0x400)) {
        m <<= 1;
        --e;
      }
      m &= 0x3ff;
      out = (hsign << 31) | (static_cast<std::uint32_t>(e - 14 + 127) << 23) | (m << 13);
    }
  } else {
    out = (hsign << 31) | ((hexp - 15 + 127) << 23) | (hmant << 13);
  }
  float back;
  std::memcpy(&back, &out, sizeof(back));
  return static_cast<double>(back);
}

enum class QuantMode { F16, Q8 };

inline QuantMode quant_mode_from_string(const std::string& s) {
  if (s == "f16") return QuantMode::F16;
  if (s == "q8") return QuantMode::Q8;
  throw ConfigError("unknown quantization mode '" + s + "'");
}

/// f16 rounds every weight and bias to the nearest half-precision value;
/// q8 applies per-layer affine quantization (scale = (max-min)/255, min
/// maps to level 0) to the weights, leaving biases untouched. A constant
/// layer (max = min) passes through unchanged.
inline MlpModel quantize(const MlpModel& victim, QuantMode mode) {
  MlpModel m = victim;
  if (mode == QuantMode::F16) {
    for (Matrix& w : m.weights)
      for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) = round_to_half(w(i, j));
    for (auto& b : m.biases)
      for (double& v : b) v = round_to_half(v);
    return m;
  }
  for (Matrix& w : m.weights) {
    double lo = w(0, 0), hi = w(0, 0);
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) {
        lo = std::min(lo, w(i, j));
        hi = std::max(hi, w(i, j));
      }
    if (hi == lo) continue;
    double scale = (hi - lo) / 255.0;
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) {
        double q = std::round((w(i, j) - lo) / scale);
        w(i, j) = lo + q * scale;
      }
  }
  return m;
}

/// Feature-extraction transfer: the victim's hidden layers are reused as a
/// frozen trunk, and only the fresh last layer trains on the new task.
inline MlpModel transfer(const MlpModel& victim, const Dataset& new_data, TrainConfig cfg) {
  if (new_data.x.cols() != victim.input_dim())
    throw DimensionError("transfer: dataset dim " + std::to_string(new_data.x.cols()) +
                         ", victim expects " + std::to_string(victim.input_dim()));
  MlpModel m = victim;
  std::size_t last = m.num_layers() - 1;
  std::size_t in = m.layer_dims[last], out = new_data.num_classes;
  m.layer_dims[last + 1] = out;
  Rng rng(derive_seed(cfg.seed, "transfer-init"));
  double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out; ++j) w(i, j) = rng.uniform(-limit, limit);
  m.weights[last] = std::move(w);
  m.biases[last].assign(out, 0.0);
  cfg.freeze_mask = detail::freeze_all_but_last(m);
  return train_from(std::move(m), new_data, cfg);
}

/// Vanilla knowledge distillation: the student minimizes the KL divergence
/// between the temperature-softened victim and student distributions over
/// the transfer set's inputs (soft labels only).
inline MlpModel distill(const MlpModel& victim, const std::vector<std::size_t>& student_dims,
                        const Dataset& data, double temperature, const TrainConfig& cfg) {
  if (student_dims.back() != victim.num_classes())
    throw DimensionError("distill: student output dim " + std::to_string(student_dims.back()) +
                         " != victim classes " + std::to_string(victim.num_classes()));
  if (student_dims.front() != victim.input_dim())
    throw DimensionError("distill: student input dim mismatch");
  Matrix logits = forward(victim, data.x);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) /= temperature;
  Matrix soft_targets = softmax_rows(logits);
  MlpModel student = init_model(student_dims, derive_seed(cfg.seed, "distill-init"));
  return train_soft(std::move(student), data.x, soft_targets, temperature, cfg);
}

/// Knockoff-style extraction: the student is trained purely on the victim's
/// probability outputs over the query inputs; ground-truth labels never
/// enter.
inline MlpModel extract_steal(const MlpModel& victim, const std::vector<std::size_t>& student_dims,
                              const Matrix& query_x, const TrainConfig& cfg) {
  if (query_x.rows() == 0) throw DimensionError("extract_steal: empty query set");
  if (student_dims.back() != victim.num_classes())
    throw DimensionError("extract_steal: student output dim " +
                         std::to_string(student_dims.back()) + " != victim classes " +
                         std::to_string(victim.num_classes()));
  if (student_dims.front() != query_x.cols() || student_dims.front() != victim.input_dim())
    throw DimensionError("extract_steal: input dim mismatch");
  Matrix targets = predict_proba(victim, query_x);
  MlpModel student = init_model(student_dims, derive_seed(cfg.seed, "extract-init"));
  return train_soft(std::move(student), query_x, targets, 1.0, cfg);
}

// ---------------------------------------------------------------------------
// Zoo construction

struct ZooTask {
  std::string id;
  std::uint64_t generator_seed = 0;
  std::size_t num_classes = 0;
  std::size_t d_in = 0;
  std::size_t n = 0;
};

struct ZooModelRecord {
  std::string id;
  std::string path;
  std::string role;       // victim | surrogate | reference
  std::string lineage;    // victim id for surrogates, empty otherwise
  std::string technique;  // surrogates only
  std::string arch_id;
  std::string task_id;
  std::uint64_t seed = 0;
  int fold = 0;  // references only: 1 = decision references, 2 = negatives
};

struct ZooManifest {
  std::uint64_t master_seed = 0;
  std::string scale_name;
  std::vector<ZooTask> tasks;
  std::vector<ZooModelRecord> models;

  const ZooModelRecord& find(const std::string& id) const {
    for (const auto& m : models)
      if (m.id == id) return m;
    throw ConfigError("manifest has no model '" + id + "'");
  }
};

/// Training budgets for one zoo build. `standard` is the acceptance-grade
/// preset; `smoke` is only for fast functional tests.
struct ZooScale {
  std::string name = "standard";
  std::size_t dataset_n = 2000;
  std::size_t base_epochs = 150;
  double base_lr = 0.05;
  std::size_t batch_size = 64;
  double l2 = 1e-4;
  std::size_t finetune_epochs = 20;
  std::size_t recovery_epochs = 80;
  std::size_t transfer_epochs = 80;
  std::size_t distill_epochs = 4800;
  double distill_temperature = 4.0;
  std::size_t extract_epochs = 2400;
  std::size_t extract_query_n = 4000;
  double extract_jitter = 0.15;
  double student_l2 = 3e-4;

  static ZooScale standard() { return {}; }

  static ZooScale smoke() {
    ZooScale s;
    s.name = "smoke";
    s.dataset_n = 240;
    s.base_epochs = 30;
    s.finetune_epochs = 8;
    s.recovery_epochs = 12;
    s.transfer_epochs = 20;
    s.distill_epochs = 40;
    s.extract_epochs = 40;
    s.extract_query_n = 240;
    return s;
  }

  static ZooScale from_name(const std::string& name) {
    if (name == "standard" || name == "default") return standard();
    if (name == "smoke") return smoke();
    throw ConfigError("unknown zoo scale '" + name + "'");
  }
};

namespace detail {

inline std::vector<std::size_t> arch_dims(const std::string& arch_id, std::size_t d_in,
                                          std::size_t classes) {
  if (arch_id == "mlp-s") return {d_in, 32, 16, classes};
  if (arch_id == "mlp-l") return {d_in, 64, 32, classes};
  throw ConfigError("unknown architecture '" + arch_id + "'");
}

}  // namespace detail

inline nlohmann::json manifest_to_json(const ZooManifest& man) {
  nlohmann::json j;
  j["master_seed"] = man.master_seed;
  j["scale"] = man.scale_name;
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : man.tasks) {
    nlohmann::json tj;
    tj["id"] = t.id;
    tj["generator_seed"] = t.generator_seed;
    tj["num_classes"] = t.num_classes;
    tj["d_in"] = t.d_in;
    tj["n"] = t.n;
    tasks.push_back(std::move(tj));
  }
  j["tasks"] = std::move(tasks);
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : man.models) {
    nlohmann::json mj;
    mj["id"] = m.id;
    mj["path"] = m.path;
    mj["role"] = m.role;
    if (!m.lineage.empty()) mj["lineage"] = m.lineage;
    if (!m.technique.empty()) mj["technique"] = m.technique;
    mj["arch"] = m.arch_id;
    mj["task"] = m.task_id;
    mj["seed"] = m.seed;
    if (m.fold) mj["fold"] = m.fold;
    models.push_back(std::move(mj));
  }
  j["models"] = std::move(models);
  return j;
}

inline ZooManifest manifest_from_json(const nlohmann::json& j) {
  ZooManifest man;
  try {
    man.master_seed = j.at("master_seed").get<std::uint64_t>();
    man.scale_name = j.at("scale").get<std::string>();
    for (const auto& tj : j.at("tasks")) {
      ZooTask t;
      t.id = tj.at("id").get<std::string>();
      t.generator_seed = tj.at("generator_seed").get<std::uint64_t>();
      t.num_classes = tj.at("num_classes").get<std::size_t>();
      t.d_in = tj.at("d_in").get<std::size_t>();
      t.n = tj.at("n").get<std::size_t>();
      man.tasks.push_back(std::move(t));
    }
    for (const auto& mj : j.at("models")) {
      ZooModelRecord m;
      m.id = mj.at("id").get<std::string>();
      m.path = mj.at("path").get<std::string>();
      m.role = mj.at("role").get<std::string>();
      m.lineage = mj.value("lineage", std::string{});
      m.technique = mj.value("technique", std::string{});
      m.arch_id = mj.at("arch").get<std::string>();
      m.task_id = mj.at("task").get<std::string>();
      m.seed = mj.at("seed").get<std::uint64_t>();
      m.fold = mj.value("fold", 0);
      man.models.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed manifest JSON: ") + e.what());
  }
  return man;
}

inline void validate_manifest(const ZooManifest& man) {
  std::map<std::string, const ZooModelRecord*> by_id;
  for (const auto& m : man.models) {
    if (!by_id.emplace(m.id, &m).second) throw ConfigError("duplicate model id '" + m.id + "'");
    if (m.role != "victim" && m.role != "surrogate" && m.role != "reference")
      throw ConfigError("model '" + m.id + "' has unknown role '" + m.role + "'");
  }
  std::map<std::string, const ZooTask*> tasks;
  for (const auto& t : man.tasks) tasks.emplace(t.id, &t);
  for (const auto& m : man.models) {
    if (!tasks.count(m.task_id))
      throw ConfigError("model '" + m.id + "' references unknown task '" + m.task_id + "'");
    if (m.role == "surrogate") {
      auto it = by_id.find(m.lineage);
      if (it == by_id.end() || it->second->role != "victim")
        throw ConfigError("surrogate '" + m.id + "' lineage does not resolve to a victim");
      if (m.technique.empty()) throw ConfigError("surrogate '" + m.id + "' missing technique");
    } else {
      if (!m.lineage.empty()) throw ConfigError(m.role + " '" + m.id + "' must have no lineage");
    }
    if (m.role == "reference" && m.fold != 1 && m.fold != 2)
      throw ConfigError("reference '" + m.id + "' needs fold 1 or 2");
  }
}

inline void save_manifest(const ZooManifest& man, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << manifest_to_json(man).dump(1) << '\n';
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline ZooManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("invalid JSON in '" + path + "': " + e.what());
  }
  ZooManifest man = manifest_from_json(j);
  validate_manifest(man);
  return man;
}

/// Builds the complete mini benchmark: two tasks, two architectures, one
/// victim per architecture on task-a, eleven surrogates per victim, ten
/// references per (architecture, task) pair split into two folds. Every
/// model and dataset is a pure function of master_seed.
inline ZooManifest build_zoo(const std::string& out_dir, std::uint64_t master_seed,
                             const ZooScale& scale) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "models", ec);
  if (ec) throw IoError("cannot create '" + out_dir + "/models': " + ec.message());
  fs::create_directories(fs::path(out_dir) / "data", ec);
  if (ec) throw IoError("cannot create '" + out_dir + "/data': " + ec.message());

  ZooManifest man;
  man.master_seed = master_seed;
  man.scale_name = scale.name;

  const std::size_t d_in = 20;
  man.tasks.push_back({"task-a", derive_seed(master_seed, "data:task-a"), 8, d_in, scale.dataset_n});
  man.tasks.push_back({"task-b", derive_seed(master_seed, "data:task-b"), 5, d_in, scale.dataset_n});
  std::map<std::string, Dataset> data;
  for (const auto& t : man.tasks) {
    Dataset ds = synth_dataset(t.generator_seed, t.num_classes, t.d_in, t.n);
    save_dataset(ds, (fs::path(out_dir) / "data" / (t.id + ".csv")).string());
    data.emplace(t.id, std::move(ds));
  }
  auto classes_of = [&](const std::string& task_id) {
    for (const auto& t : man.tasks)
      if (t.id == task_id) return t.num_classes;
    throw ConfigError("unknown task '" + task_id + "'");
  };

  TrainConfig base;
  base.epochs = scale.base_epochs;
  base.learning_rate = scale.base_lr;
  base.batch_size = scale.batch_size;
  base.l2 = scale.l2;

  auto emit = [&](const MlpModel& model, ZooModelRecord rec) {
    MlpModel tagged = model;
    tagged.meta["id"] = rec.id;
    tagged.meta["role"] = rec.role;
    tagged.meta["arch"] = rec.arch_id;
    tagged.meta["task"] = rec.task_id;
    if (!rec.lineage.empty()) tagged.meta["lineage"] = rec.lineage;
    if (!rec.technique.empty()) tagged.meta["technique"] = rec.technique;
    rec.path = "models/" + rec.id + ".json";
    save_model(tagged, (fs::path(out_dir) / rec.path).string());
    man.models.push_back(std::move(rec));
  };

  const std::vector<std::string> archs = {"mlp-s", "mlp-l"};
  for (const std::string& arch : archs) {
    const std::string victim_task = "task-a";
    const std::string other_task = "task-b";
    const std::string other_arch = arch == "mlp-s" ? "mlp-l" : "mlp-s";
    const Dataset& dsa = data.at(victim_task);
    const Dataset& dsb = data.at(other_task);
    const std::string vid = "victim__" + arch + "__" + victim_task;

    TrainConfig vcfg = base;
    vcfg.seed = derive_seed(master_seed, vid);
    MlpModel victim =
        train(detail::arch_dims(arch, d_in, classes_of(victim_task)), dsa, vcfg);
    emit(victim, {vid, "", "victim", "", "", arch, victim_task, vcfg.seed, 0});

    auto surrogate = [&](const std::string& technique, const std::string& s_arch,
                         const std::string& s_task, auto&& make) {
      std::string sid = vid + "__" + technique;
      TrainConfig scfg = base;
      scfg.seed = derive_seed(master_seed, sid);
      MlpModel s = make(scfg);
      emit(s, {sid, "", "surrogate", vid, technique, s_arch, s_task, scfg.seed, 0});
    };

    surrogate("finetune-last", arch, victim_task, [&](TrainConfig c) {
      c.epochs = scale.finetune_epochs;
      c.learning_rate = 0.1 * scale.base_lr;
      return finetune(victim, dsa, FinetuneScope::Last, c);
    });
    surrogate("finetune-all", arch, victim_task, [&](TrainConfig c) {
      c.epochs = scale.finetune_epochs;
      c.learning_rate = 0.1 * scale.base_lr;
      return finetune(victim, dsa, FinetuneScope::All, c);
    });
    surrogate("retrain-last", arch, victim_task, [&](TrainConfig c) {
      c.epochs = scale.recovery_epochs;
      return retrain(victim, dsa, FinetuneScope::Last, c);
    });
    surrogate("retrain-all", arch, victim_task, [&](TrainConfig c) {
      c.epochs = scale.recovery_epochs;
      return retrain(victim, dsa, FinetuneScope::All, c);
    });
    surrogate("prune-0.3", arch, victim_task, [&](TrainConfig c) {
      c.epochs = scale.recovery_epochs;
      c.learning_rate = 0.1 * scale.base_lr;
      return prune(victim, dsa, 0.3, c);
    });
    surrogate("prune-0.6", arch, victim_task, [&](TrainConfig c) {
      c.epochs = scale.recovery_epochs;
      c.learning_rate = 0.1 * scale.base_lr;
      return prune(victim, dsa, 0.6, c);
    });
    surrogate("quant-f16", arch, victim_task,
              [&](TrainConfig) { return quantize(victim, QuantMode::F16); });
    surrogate("quant-q8", arch, victim_task,
              [&](TrainConfig) { return quantize(victim, QuantMode::Q8); });
    surrogate("transfer", arch, other_task, [&](TrainConfig c) {
      c.epochs = scale.transfer_epochs;
      return transfer(victim, dsb, c);
    });
    surrogate("distill", other_arch, victim_task, [&](TrainConfig c) {
      c.epochs = scale.distill_epochs;
      c.l2 = scale.student_l2;
      return distill(victim, detail::arch_dims(other_arch, d_in, classes_of(victim_task)), dsa,
                     scale.distill_temperature, c);
    });
    surrogate("extract", other_arch, victim_task, [&](TrainConfig c) {
      c.epochs = scale.extract_epochs;
      c.l2 = scale.student_l2;
      // Knockoff-style query set: domain samples near the task distribution,
      // jittered with a seed of their own so no training input is reused.
      Rng qrng(derive_seed(master_seed, vid + "__extract__queries"));
      Matrix queries(scale.extract_query_n, d_in);
      for (std::size_t i = 0; i < queries.rows(); ++i)
        for (std::size_t j = 0; j < d_in; ++j)
          queries(i, j) = dsa.x(i % dsa.x.rows(), j) + scale.extract_jitter * qrng.normal();
      return extract_steal(victim, detail::arch_dims(other_arch, d_in, classes_of(victim_task)),
                           queries, c);
    });
  }

  for (const std::string& arch : archs)
    for (const auto& task : man.tasks)
      for (std::size_t i = 0; i < 10; ++i) {
        char suffix[8];
        std::snprintf(suffix, sizeof(suffix), "%02zu", i);
        std::string rid = "ref__" + arch + "__" + task.id + "__" + suffix;
        TrainConfig rcfg = base;
        rcfg.seed = derive_seed(master_seed, rid);
        MlpModel ref = train(detail::arch_dims(arch, d_in, task.num_classes), data.at(task.id), rcfg);
        emit(ref, {rid, "", "reference", "", "", arch, task.id, rcfg.seed, i < 5 ? 1 : 2});
      }

  validate_manifest(man);
  save_manifest(man, (fs::path(out_dir) / "manifest.json").string());
  return man;
}

}  // namespace nfard
