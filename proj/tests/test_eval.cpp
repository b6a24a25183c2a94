#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nfard/error.hpp>
#include <nfard/eval.hpp>

#include "helpers.hpp"

using nfard::DecisionConfig;
using nfard::Mode;
using nfard::Zoo;

namespace {

const Zoo& smoke_zoo() {
  static Zoo zoo = [] {
    std::string dir = testutil::temp_path("zoo-eval");
    nfard::build_zoo(dir, 11, nfard::ZooScale::smoke());
    return nfard::load_zoo(dir);
  }();
  return zoo;
}

DecisionConfig smoke_config(Mode mode) {
  DecisionConfig cfg = DecisionConfig::defaults(mode);
  cfg.suite_size = 120;
  return cfg;
}

std::string slurp(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("loading a zoo materializes every model and dataset", "[eval]") {
  const Zoo& zoo = smoke_zoo();
  REQUIRE(zoo.models.size() == 64);
  REQUIRE(zoo.datasets.size() == 2);
  REQUIRE(zoo.datasets.at("task-a").num_classes == 8);
  REQUIRE(zoo.datasets.at("task-b").num_classes == 5);
  REQUIRE(zoo.models.count("victim__mlp-l__task-a") == 1);
  REQUIRE_THROWS_AS(nfard::load_zoo(testutil::temp_path("no-zoo")), nfard::IoError);
}

TEST_CASE("detection cases follow the evaluation protocol", "[eval]") {
  const Zoo& zoo = smoke_zoo();
  std::vector<nfard::DetectionCase> cases = nfard::detection_cases(zoo.manifest);
  REQUIRE(cases.size() == 62);

  std::size_t positives = 0, negatives = 0;
  std::set<std::string> fold2_ids;
  for (const auto& m : zoo.manifest.models)
    if (m.role == "reference" && m.fold == 2) fold2_ids.insert(m.id);

  for (const auto& c : cases) {
    REQUIRE(c.reference_ids.size() == 5);
    const auto& victim = zoo.manifest.find(c.victim_id);
    REQUIRE(victim.role == "victim");
    const auto& suspect = zoo.manifest.find(c.suspect_id);
    for (const auto& rid : c.reference_ids) {
      const auto& ref = zoo.manifest.find(rid);
      REQUIRE(ref.role == "reference");
      REQUIRE(ref.fold == 1);
      if (c.type == "transfer") {
        REQUIRE(ref.arch_id == suspect.arch_id);
        REQUIRE(ref.task_id == suspect.task_id);
      } else {
        REQUIRE(ref.arch_id == victim.arch_id);
        REQUIRE(ref.task_id == victim.task_id);
      }
    }
    if (c.positive) {
      ++positives;
      REQUIRE(suspect.role == "surrogate");
      REQUIRE(suspect.lineage == c.victim_id);
      REQUIRE(c.type == suspect.technique);
    } else {
      ++negatives;
      REQUIRE(c.type == "negative");
      REQUIRE(fold2_ids.count(c.suspect_id) == 1);
    }
  }
  REQUIRE(positives == 22);
  REQUIRE(negatives == 40);
}

TEST_CASE("f1 handles degenerate confusion counts", "[eval]") {
  REQUIRE(nfard::f1_score(0, 0, 0) == 0.0);
  REQUIRE(nfard::f1_score(22, 0, 0) == 1.0);
  REQUIRE(nfard::f1_score(1, 1, 1) == 0.5);
  REQUIRE(nfard::f1_score(0, 5, 7) == 0.0);
}

TEST_CASE("summaries keep the confusion matrix consistent", "[eval]") {
  const Zoo& zoo = smoke_zoo();
  nfard::EvalSummary sum = nfard::evaluate(zoo, smoke_config(Mode::Blackbox));
  REQUIRE(sum.tp + sum.fn == 22);
  REQUIRE(sum.fp + sum.tn == 40);
  REQUIRE(sum.types.size() == 12);
  std::size_t detected_total = 0;
  for (const auto& ts : sum.types) {
    REQUIRE(ts.total == (ts.type == "negative" ? 40 : 2));
    REQUIRE(ts.detected <= ts.total);
    detected_total += ts.detected;
  }
  REQUIRE(detected_total == sum.tp + sum.fp);
  REQUIRE(sum.f1 == nfard::f1_score(sum.tp, sum.fp, sum.fn));
  REQUIRE(sum.f1 >= 0.0);
  REQUIRE(sum.f1 <= 1.0);

  std::string text = nfard::render_summary_text(sum);
  REQUIRE(text.find("mode=blackbox") != std::string::npos);
  REQUIRE(text.find("tp=") != std::string::npos);
  REQUIRE(text.find("negative") != std::string::npos);

  nlohmann::json j = nfard::summary_to_json(sum);
  REQUIRE(j["tp"].get<std::size_t>() == sum.tp);
  REQUIRE(j["types"].size() == 12);
  REQUIRE(j["mode"] == "blackbox");
}

TEST_CASE("evaluation is deterministic", "[eval]") {
  const Zoo& zoo = smoke_zoo();
  DecisionConfig cfg = smoke_config(Mode::Whitebox);
  nfard::EvalSummary a = nfard::evaluate(zoo, cfg);
  nfard::EvalSummary b = nfard::evaluate(zoo, cfg);
  REQUIRE(nfard::summary_to_json(a).dump() == nfard::summary_to_json(b).dump());
}

TEST_CASE("an oversized suite is rejected", "[eval]") {
  const Zoo& zoo = smoke_zoo();
  DecisionConfig cfg = DecisionConfig::defaults(Mode::Blackbox);
  cfg.suite_size = 100000;
  REQUIRE_THROWS_AS(nfard::evaluate(zoo, cfg), nfard::DimensionError);
}

TEST_CASE("roc endpoints pin the extreme alphas", "[eval]") {
  const Zoo& zoo = smoke_zoo();
  DecisionConfig cfg = smoke_config(Mode::Blackbox);
  std::vector<nfard::CaseProfile> profiles = nfard::compute_case_profiles(zoo, cfg);
  std::vector<nfard::RocPoint> pts = nfard::roc_points(profiles, cfg, {-1e6, 0.85, 1e6});
  REQUIRE(pts.size() == 3);
  REQUIRE(pts[0].tpr == 1.0);
  REQUIRE(pts[0].fpr == 1.0);
  REQUIRE(pts[2].tpr == 0.0);
  REQUIRE(pts[2].fpr == 0.0);
  REQUIRE(pts[1].tpr >= 0.0);
  REQUIRE(pts[1].tpr <= 1.0);

  REQUIRE_THROWS_AS(nfard::roc_points(profiles, cfg, {0.85}), nfard::ConfigError);
  std::vector<nfard::CaseProfile> only_pos;
  only_pos.push_back(profiles.front());
  only_pos.push_back(profiles.front());
  only_pos[0].c.positive = only_pos[1].c.positive = true;
  REQUIRE_THROWS_AS(nfard::roc_points(only_pos, cfg, {0.0, 1.0}), nfard::ConfigError);
}

TEST_CASE("default alpha grid spans both extremes", "[eval]") {
  std::vector<double> alphas = nfard::default_roc_alphas();
  REQUIRE(alphas.size() >= 20);
  REQUIRE(*std::min_element(alphas.begin(), alphas.end()) <= -1e5);
  REQUIRE(*std::max_element(alphas.begin(), alphas.end()) >= 1e5);
  REQUIRE(std::count(alphas.begin(), alphas.end(), 0.85) == 1);
  REQUIRE(std::count(alphas.begin(), alphas.end(), 3.5) == 1);
}

TEST_CASE("auc of hand-built polylines", "[eval]") {
  std::vector<nfard::RocPoint> diag = {{0, 0.0, 0.0}, {1, 1.0, 1.0}};
  REQUIRE(nfard::roc_auc(diag) == 0.5);
  std::vector<nfard::RocPoint> perfect = {{0, 0.0, 0.0}, {1, 1.0, 0.0}, {2, 1.0, 1.0}};
  REQUIRE(nfard::roc_auc(perfect) == 1.0);
  std::vector<nfard::RocPoint> mid = {{0, 0.0, 0.0}, {1, 0.5, 0.5}, {2, 1.0, 1.0}};
  REQUIRE(nfard::roc_auc(mid) == 0.5);
  REQUIRE_THROWS_AS(nfard::roc_auc({{0, 0.0, 0.0}}), nfard::ConfigError);
}

TEST_CASE("roc CSV uses the documented header", "[eval]") {
  std::string path = testutil::temp_path("roc.csv");
  nfard::save_roc_csv({{0.85, 1.0, 0.25}, {3.5, 0.5, 0.0}}, path);
  std::string contents = slurp(path);
  REQUIRE(contents == "alpha,tpr,fpr\n0.85,1,0.25\n3.5,0.5,0\n");
  std::filesystem::remove(path);
}

TEST_CASE("suite-size sweep covers both modes at each size", "[eval]") {
  const Zoo& zoo = smoke_zoo();
  std::vector<nfard::SweepRow> rows = nfard::suite_size_sweep(zoo, {60, 240});
  REQUIRE(rows.size() == 4);
  std::size_t white = 0, black = 0;
  for (const auto& r : rows) {
    REQUIRE((r.n == 60 || r.n == 240));  // 240 uses the whole smoke dataset
    REQUIRE(r.f1 >= 0.0);
    REQUIRE(r.f1 <= 1.0);
    (r.mode == Mode::Whitebox ? white : black) += 1;
  }
  REQUIRE(white == 2);
  REQUIRE(black == 2);

  std::string path = testutil::temp_path("sweep.csv");
  nfard::save_sweep_csv(rows, path);
  std::string contents = slurp(path);
  REQUIRE(contents.rfind("n,mode,f1\n", 0) == 0);
  REQUIRE(contents.find("whitebox") != std::string::npos);
  REQUIRE(contents.find("blackbox") != std::string::npos);
  std::filesystem::remove(path);

  REQUIRE_THROWS_AS(nfard::suite_size_sweep(zoo, {}), nfard::ConfigError);
}
