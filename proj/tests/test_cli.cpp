#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "helpers.hpp"
#include "nfard/cli.hpp"

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  RunResult r;
  r.code = nfard::cli::run(std::move(args), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// One smoke zoo, built through the CLI itself, shared by every test below.
struct CliZoo {
  std::string dir;
  RunResult build;
};

const CliZoo& cli_zoo() {
  static CliZoo z = [] {
    CliZoo zz;
    zz.dir = testutil::temp_path("zoo-cli");
    zz.build = run_cli({"zoo-build", "--out", zz.dir, "--seed", "13", "--scale", "smoke"});
    return zz;
  }();
  return z;
}

std::string model_path(const std::string& id) {
  return cli_zoo().dir + "/models/" + id + ".json";
}

std::string data_path(const std::string& task) {
  return cli_zoo().dir + "/data/" + task + ".csv";
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string first_line(const std::string& s) {
  auto nl = s.find('\n');
  return nl == std::string::npos ? s : s.substr(0, nl);
}

}  // namespace

TEST_CASE("cli: zoo-build reports the roster", "[cli]") {
  const CliZoo& z = cli_zoo();
  REQUIRE(z.build.code == 0);
  REQUIRE(z.build.out == "zoo written to " + z.dir +
                             ": 2 victims, 22 surrogates, 40 references, 2 tasks\n");
  REQUIRE(z.build.err.empty());
  REQUIRE(std::filesystem::exists(z.dir + "/manifest.json"));
  REQUIRE(std::filesystem::exists(model_path("victim__mlp-s__task-a")));
  REQUIRE(std::filesystem::exists(data_path("task-a")));
}

TEST_CASE("cli: detect flags a victim against itself", "[cli]") {
  std::string report = testutil::temp_path("cli-report.json");
  RunResult r = run_cli({"detect", "--victim", model_path("victim__mlp-s__task-a"),
                         "--suspect", model_path("victim__mlp-s__task-a"),
                         "--ref", model_path("ref__mlp-s__task-a__00"),
                         "--ref", model_path("ref__mlp-s__task-a__01"),
                         "--data", data_path("task-a"), "--n", "120",
                         "--report", report});
  INFO(r.out << r.err);
  REQUIRE(r.code == 2);
  REQUIRE(r.out.rfind("mode=blackbox alpha=0.85 ", 0) == 0);
  REQUIRE(r.out.find("verdict=positive") != std::string::npos);

  nlohmann::json j = nlohmann::json::parse(slurp(report));
  REQUIRE(j["verdict"].get<bool>());
  REQUIRE(j["suspect_id"] == "victim__mlp-s__task-a");
  REQUIRE(j["mode"] == "blackbox");
  REQUIRE(j["layer_used"].is_null());
  REQUIRE(j["metrics"].size() == 2);
  REQUIRE(j["reference_ids"].size() == 2);
}

TEST_CASE("cli: detect honours an explicit alpha", "[cli]") {
  RunResult r = run_cli({"detect", "--victim", model_path("victim__mlp-s__task-a"),
                         "--suspect", model_path("victim__mlp-s__task-a"),
                         "--ref", model_path("ref__mlp-s__task-a__00"),
                         "--ref", model_path("ref__mlp-s__task-a__01"),
                         "--data", data_path("task-a"), "--n", "120", "--alpha", "50"});
  INFO(r.out << r.err);
  REQUIRE(r.code == 0);
  REQUIRE(r.out.find("alpha=50 ") != std::string::npos);
  REQUIRE(r.out.find("verdict=negative") != std::string::npos);
}

TEST_CASE("cli: detect white mode taps a hidden layer", "[cli]") {
  // alpha 0 makes the verdict hinge on the pooled median alone, which is
  // strictly positive for honestly trained references.
  RunResult r = run_cli({"detect", "--victim", model_path("victim__mlp-s__task-a"),
                         "--suspect", model_path("victim__mlp-s__task-a"),
                         "--ref", model_path("ref__mlp-s__task-a__00"),
                         "--ref", model_path("ref__mlp-s__task-a__01"),
                         "--data", data_path("task-a"), "--n", "120",
                         "--mode", "white", "--alpha", "0"});
  INFO(r.out << r.err);
  REQUIRE(r.code == 2);
  REQUIRE(r.out.rfind("mode=whitebox alpha=0 ", 0) == 0);
  REQUIRE(r.out.find("verdict=positive") != std::string::npos);
}

TEST_CASE("cli: detect rejects a single reference", "[cli]") {
  RunResult r = run_cli({"detect", "--victim", model_path("victim__mlp-s__task-a"),
                         "--suspect", model_path("victim__mlp-s__task-a"),
                         "--ref", model_path("ref__mlp-s__task-a__00"),
                         "--data", data_path("task-a"), "--n", "120"});
  REQUIRE(r.code == 1);
  REQUIRE(r.err.find("error:") != std::string::npos);
  REQUIRE(r.err.find("at least 2") != std::string::npos);
}

TEST_CASE("cli: detect surfaces file errors", "[cli]") {
  RunResult r = run_cli({"detect", "--victim", "/nonexistent/model.json",
                         "--suspect", model_path("victim__mlp-s__task-a"),
                         "--ref", model_path("ref__mlp-s__task-a__00"),
                         "--ref", model_path("ref__mlp-s__task-a__01"),
                         "--data", data_path("task-a")});
  REQUIRE(r.code == 1);
  REQUIRE(r.err.rfind("error:", 0) == 0);
}

TEST_CASE("cli: evaluate prints the summary table", "[cli]") {
  std::string json_path = testutil::temp_path("cli-eval.json");
  RunResult r = run_cli({"evaluate", "--zoo", cli_zoo().dir, "--n", "120",
                         "--json", json_path});
  INFO(r.out << r.err);
  REQUIRE(r.code == 0);
  REQUIRE(first_line(r.out) == "mode=blackbox alpha=0.85 n=120 weights=ac=120,eu=1");
  REQUIRE(r.out.find("negative") != std::string::npos);
  REQUIRE(r.out.find("tp=") != std::string::npos);

  nlohmann::json j = nlohmann::json::parse(slurp(json_path));
  REQUIRE(j["mode"] == "blackbox");
  REQUIRE(j["suite_size"] == 120);
  REQUIRE(j["tp"].get<std::size_t>() + j["fn"].get<std::size_t>() == 22);
  REQUIRE(j["fp"].get<std::size_t>() + j["tn"].get<std::size_t>() == 40);
  double f1 = j["f1"].get<double>();
  REQUIRE(f1 >= 0.0);
  REQUIRE(f1 <= 1.0);
  REQUIRE(j["types"].size() == 12);
}

TEST_CASE("cli: evaluate no-log marks the header", "[cli]") {
  RunResult r = run_cli({"evaluate", "--zoo", cli_zoo().dir, "--n", "120", "--no-log"});
  INFO(r.out << r.err);
  REQUIRE(r.code == 0);
  REQUIRE(first_line(r.out) == "mode=blackbox alpha=0.85 n=120 weights=ac=120,eu=1 no-log");
}

TEST_CASE("cli: roc refuses fewer than two alphas", "[cli]") {
  RunResult r = run_cli({"roc", "--zoo", cli_zoo().dir, "--alphas", "0.85",
                         "--out", testutil::temp_path("cli-roc.csv")});
  REQUIRE(r.code == 1);
  REQUIRE(r.err.find("at least 2 alphas") != std::string::npos);
}

TEST_CASE("cli: roc rejects a zoo smaller than the test suite", "[cli]") {
  // The sweep always runs at the full suite size of 1000; a smoke-scale zoo
  // only carries 240 samples per task, so this must fail loudly rather than
  // silently shrink the suite.
  RunResult r = run_cli({"roc", "--zoo", cli_zoo().dir, "--alphas", "-1000000,1000000",
                         "--out", testutil::temp_path("cli-roc2.csv")});
  REQUIRE(r.code == 1);
  REQUIRE(r.err.rfind("error:", 0) == 0);
}

TEST_CASE("cli: roc missing --out is a parse error", "[cli]") {
  RunResult r = run_cli({"roc", "--zoo", cli_zoo().dir});
  REQUIRE(r.code != 0);
  REQUIRE_FALSE(r.err.empty());
}

TEST_CASE("cli: extract writes a second-last layer matrix", "[cli]") {
  std::string out_path = testutil::temp_path("cli-extract.csv");
  RunResult r = run_cli({"extract", "--model", model_path("victim__mlp-s__task-a"),
                         "--data", data_path("task-a"), "--layer", "second-last",
                         "--out", out_path});
  INFO(r.out << r.err);
  REQUIRE(r.code == 0);
  REQUIRE(r.out == "wrote 240x16 matrix to " + out_path + "\n");

  nfard::NeuronMatrix nm = nfard::load_neuron_matrix(out_path);
  REQUIRE(nm.samples() == 240);
  REQUIRE(nm.neurons() == 16);
  REQUIRE(nm.source == nfard::NeuronSource::WhiteboxLayer);
  REQUIRE(nm.layer_index.has_value());
  REQUIRE(*nm.layer_index == 2);
}

TEST_CASE("cli: extract blackbox round-trips log-probabilities", "[cli]") {
  std::string out_path = testutil::temp_path("cli-extract-bb.csv");
  RunResult r = run_cli({"extract", "--model", model_path("victim__mlp-s__task-a"),
                         "--data", data_path("task-a"), "--blackbox", "--out", out_path});
  INFO(r.out << r.err);
  REQUIRE(r.code == 0);
  REQUIRE(r.out == "wrote 240x8 matrix to " + out_path + "\n");

  nfard::NeuronMatrix nm = nfard::load_neuron_matrix(out_path);
  REQUIRE(nm.source == nfard::NeuronSource::BlackboxLogprob);
  REQUIRE_FALSE(nm.layer_index.has_value());

  nfard::MlpModel model = nfard::load_model(model_path("victim__mlp-s__task-a"));
  nfard::Dataset ds = nfard::load_dataset(data_path("task-a"));
  nfard::NeuronMatrix direct = nfard::approx_neuron_matrix(
      nfard::predict_proba(model, ds.x), nfard::kProbFloor, "victim__mlp-s__task-a");
  REQUIRE(nm.values.rows() == direct.values.rows());
  REQUIRE(nm.values.cols() == direct.values.cols());
  for (std::size_t i = 0; i < nm.values.rows(); ++i)
    for (std::size_t j = 0; j < nm.values.cols(); ++j) {
      REQUIRE(nm.values(i, j) == direct.values(i, j));
      REQUIRE(nm.values(i, j) <= 0.0);
    }
}

TEST_CASE("cli: extract explicit layer index", "[cli]") {
  std::string out_path = testutil::temp_path("cli-extract-l1.csv");
  RunResult r = run_cli({"extract", "--model", model_path("victim__mlp-s__task-a"),
                         "--data", data_path("task-a"), "--layer", "1", "--out", out_path});
  REQUIRE(r.code == 0);
  REQUIRE(r.out == "wrote 240x32 matrix to " + out_path + "\n");

  RunResult bad = run_cli({"extract", "--model", model_path("victim__mlp-s__task-a"),
                           "--data", data_path("task-a"), "--layer", "9",
                           "--out", testutil::temp_path("cli-extract-l9.csv")});
  REQUIRE(bad.code == 1);
  REQUIRE(bad.err.rfind("error:", 0) == 0);
}

TEST_CASE("cli: suite-size sweep emits both modes", "[cli]") {
  std::string out_path = testutil::temp_path("cli-sweep.csv");
  RunResult r = run_cli({"suite-size-sweep", "--zoo", cli_zoo().dir,
                         "--sizes", "60,120", "--out", out_path});
  INFO(r.out << r.err);
  REQUIRE(r.code == 0);
  REQUIRE(r.out == "wrote 4 sweep rows to " + out_path + "\n");

  std::string csv = slurp(out_path);
  REQUIRE(csv.rfind("n,mode,f1\n", 0) == 0);
  REQUIRE(csv.find("whitebox") != std::string::npos);
  REQUIRE(csv.find("blackbox") != std::string::npos);
}

TEST_CASE("cli: help and bad subcommands", "[cli]") {
  RunResult help = run_cli({"--help"});
  REQUIRE(help.code == 0);
  REQUIRE(help.out.find("zoo-build") != std::string::npos);
  REQUIRE(help.out.find("detect") != std::string::npos);

  RunResult bad = run_cli({"frobnicate"});
  REQUIRE(bad.code != 0);

  RunResult none = run_cli({});
  REQUIRE(none.code != 0);
}

TEST_CASE("cli: parse_layer_policy forms", "[cli]") {
  using nfard::LayerPolicy;
  LayerPolicy sl = nfard::cli::parse_layer_policy("second-last");
  REQUIRE(sl.kind == LayerPolicy::Kind::SecondLast);

  LayerPolicy fr = nfard::cli::parse_layer_policy("frac:0.4");
  REQUIRE(fr.kind == LayerPolicy::Kind::Fraction);
  REQUIRE(fr.fraction == 0.4);

  LayerPolicy ex = nfard::cli::parse_layer_policy("3");
  REQUIRE(ex.kind == LayerPolicy::Kind::Explicit);
  REQUIRE(ex.explicit_layer == 3);

  REQUIRE_THROWS_AS(nfard::cli::parse_layer_policy("frac:x"), nfard::ParseError);
  REQUIRE_THROWS_AS(nfard::cli::parse_layer_policy("junk"), nfard::ParseError);
}

TEST_CASE("cli: parse_weights forms", "[cli]") {
  auto w = nfard::cli::parse_weights("eu=1,ac=120");
  REQUIRE(w.size() == 2);
  REQUIRE(w.at("eu") == 1.0);
  REQUIRE(w.at("ac") == 120.0);

  auto spaced = nfard::cli::parse_weights(" eu = 3 , ac = 4 ");
  REQUIRE(spaced.at("eu") == 3.0);
  REQUIRE(spaced.at("ac") == 4.0);

  auto single = nfard::cli::parse_weights("eu=2");
  REQUIRE(single.size() == 1);

  REQUIRE_THROWS_AS(nfard::cli::parse_weights("noequals"), nfard::ConfigError);
  REQUIRE_THROWS_AS(nfard::cli::parse_weights(""), nfard::ConfigError);
}

TEST_CASE("cli: config file sets flags and the command line wins", "[cli]") {
  std::string cfg_path = testutil::temp_path("cli-config.ini");
  {
    std::ofstream f(cfg_path);
    f << "[detect]\nalpha=50\n";
  }

  std::vector<std::string> base = {"--config", cfg_path, "detect",
                                   "--victim", model_path("victim__mlp-s__task-a"),
                                   "--suspect", model_path("victim__mlp-s__task-a"),
                                   "--ref", model_path("ref__mlp-s__task-a__00"),
                                   "--ref", model_path("ref__mlp-s__task-a__01"),
                                   "--data", data_path("task-a"), "--n", "120"};

  RunResult from_file = run_cli(base);
  INFO(from_file.out << from_file.err);
  REQUIRE(from_file.code == 0);
  REQUIRE(from_file.out.find("alpha=50 ") != std::string::npos);
  REQUIRE(from_file.out.find("verdict=negative") != std::string::npos);

  std::vector<std::string> override_args = base;
  override_args.push_back("--alpha");
  override_args.push_back("0");
  RunResult overridden = run_cli(override_args);
  INFO(overridden.out << overridden.err);
  REQUIRE(overridden.code == 2);
  REQUIRE(overridden.out.find("alpha=0 ") != std::string::npos);
  REQUIRE(overridden.out.find("verdict=positive") != std::string::npos);
}

TEST_CASE("cli: NFARD_SEED overrides the default master seed", "[cli]") {
  unsetenv("NFARD_SEED");
  REQUIRE(nfard::cli::default_master_seed() == nfard::cli::kDefaultMasterSeed);
  REQUIRE(nfard::cli::kDefaultMasterSeed == 42);

  setenv("NFARD_SEED", "7", 1);
  REQUIRE(nfard::cli::default_master_seed() == 7);

  setenv("NFARD_SEED", "junk", 1);
  REQUIRE_THROWS_AS(nfard::cli::default_master_seed(), nfard::ConfigError);

  unsetenv("NFARD_SEED");
}
