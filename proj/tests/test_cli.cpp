#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "peg/evolution.hpp"
#include "peg/harness.hpp"

using namespace peg;

namespace {

std::string temp_dir(const std::string& stem) {
  auto p = std::filesystem::temp_directory_path() / (stem + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

int run_cli(const std::string& args, const std::string& stdout_path = "/dev/null") {
  std::string cmd = std::string(PEG_BIN) + " " + args + " >" + stdout_path + " 2>/dev/null";
  int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("run emits a full report directory") {
  std::string dir = temp_dir("peg-cli-run");
  CHECK(run_cli("run --preset brd-trace --out " + dir) == 0);
  CHECK(std::filesystem::exists(dir + "/metrics.csv"));
  CHECK(std::filesystem::exists(dir + "/records.jsonl"));
  CHECK_FALSE(std::filesystem::exists(dir + "/report.svg"));  // plots are opt-in
  CHECK(std::filesystem::exists(dir + "/summary.json"));
  CHECK(std::filesystem::exists(dir + "/config.json"));
  CHECK(std::filesystem::exists(dir + "/trace-brd-trace-s0.jsonl"));

  SUBCASE("the seed flag reaches the run id") {
    std::string d2 = temp_dir("peg-cli-seed");
    CHECK(run_cli("run --preset brd-trace --seed 9 --out " + d2) == 0);
    CHECK(std::filesystem::exists(d2 + "/trace-brd-trace-s9.jsonl"));
    std::filesystem::remove_all(d2);
  }
  SUBCASE("report re-emits in place with the svg chart") {
    CHECK(run_cli("report --in " + dir) == 0);
    CHECK(std::filesystem::exists(dir + "/report.svg"));  // --format defaults to csv,json,svg
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("run honors a config document") {
  std::string dir = temp_dir("peg-cli-cfg");
  {
    std::ofstream f(dir + "/cfg.json");
    f << R"({"preset":"brd-trace","seed":3,"out_dir":")" << dir << R"(/out",)"
      << R"("formats":["csv","json"]})" << "\n";
  }
  CHECK(run_cli("run --config " + dir + "/cfg.json") == 0);
  CHECK(std::filesystem::exists(dir + "/out/metrics.csv"));
  CHECK(std::filesystem::exists(dir + "/out/records.jsonl"));
  CHECK_FALSE(std::filesystem::exists(dir + "/out/report.svg"));  // formats come from the config
  CHECK(std::filesystem::exists(dir + "/out/trace-brd-trace-s3.jsonl"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("configuration mistakes exit with 2") {
  std::string dir = temp_dir("peg-cli-bad");
  CHECK(run_cli("run --preset nonsense --out " + dir) == 2);
  CHECK(run_cli("run --preset brd-trace") == 2);  // --out is mandatory
  CHECK(run_cli("run --config " + dir + "/missing.json --out " + dir) == 2);
  {
    std::ofstream f(dir + "/broken.json");
    f << "{\"presett\": \"peg\"}\n";
  }
  CHECK(run_cli("run --config " + dir + "/broken.json --out " + dir) == 2);
  {
    std::ofstream f(dir + "/notjson.json");
    f << "oops\n";
  }
  CHECK(run_cli("run --config " + dir + "/notjson.json --out " + dir) == 2);
  CHECK(run_cli("run --bogus-flag") == 2);
  CHECK(run_cli("") == 2);  // a subcommand is required
  std::filesystem::remove_all(dir);
}

TEST_CASE("runtime failures exit with 3") {
  CHECK(run_cli("eval --checkpoint /nonexistent-ckpt --dataset /nonexistent.ds") == 3);
  CHECK(run_cli("report --in /nonexistent-report-dir") == 3);
}

TEST_CASE("eval prints the metrics table") {
  std::string dir = temp_dir("peg-cli-eval");
  SynthSpec spec;
  spec.num_identities = 5;
  spec.samples_per_identity = 16;
  spec.dim = 6;
  spec.intra_std = 0.15;
  spec.seed = 42;
  FeatureDataset ds = generate_synthetic(spec);
  ds = split_query_gallery(ds, 0.2, 1);
  save_dataset(ds, dir + "/data.ds", true);

  GenerationConfig cfg;
  cfg.crs.ref_layers = {8, 4};
  cfg.crs.M = 4;
  cfg.crs.ref_iters = 20;
  cfg.crs.kmeans_iters = 10;
  Population pop = make_initial_population({{6, 8, 4}}, 2, HyperParams{}, 5);
  pop.generation = 1;
  RunContext ctx;
  ctx.run_id = "cli";
  save_generation(dir + "/gen-1", pop, cfg, ctx);

  std::string out = dir + "/stdout.txt";
  CHECK(run_cli("eval --checkpoint " + dir + "/gen-1 --dataset " + dir + "/data.ds", out) == 0);
  std::string text = slurp(out);
  CHECK(text.rfind("run_id,generation,model_id,crs,", 0) == 0);
  CHECK(text.find("cli-eval") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("help exits cleanly") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("run --help") == 0);
}
