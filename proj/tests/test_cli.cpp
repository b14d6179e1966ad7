#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dgfn/cli.hpp"

using namespace dgfn;
namespace fs = std::filesystem;

namespace {

struct OutputRootGuard {
  fs::path root;
  explicit OutputRootGuard(const char* leaf) {
    root = fs::temp_directory_path() / leaf;
    fs::remove_all(root);
    fs::create_directories(root);
    setenv(kOutputRootEnvVar, root.c_str(), 1);
  }
  ~OutputRootGuard() { unsetenv(kOutputRootEnvVar); }
};

struct CaptureStdout {
  std::ostringstream ss;
  std::streambuf* old;
  CaptureStdout() : old(std::cout.rdbuf(ss.rdbuf())) {}
  ~CaptureStdout() { std::cout.rdbuf(old); }
  std::string str() const { return ss.str(); }
};

int cli(std::initializer_list<const char*> args) {
  std::vector<const char*> argv{"dgfn"};
  argv.insert(argv.end(), args.begin(), args.end());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path write_config(const fs::path& dir, const char* name, const std::string& text) {
  fs::create_directories(dir);
  fs::path p = dir / name;
  std::ofstream f(p);
  f << text;
  return p;
}

const char* kTrainToml =
    "[env]\n"
    "dims = 2\n"
    "side = 7\n"
    "[policy]\n"
    "hidden = [16]\n"
    "[trainer]\n"
    "algorithm = \"gfn\"\n"
    "total_steps = 30\n"
    "metric_every = 10\n"
    "batch_size = 8\n"
    "[experiment]\n"
    "seeds = [0]\n"
    "out_dir = \"cli-train\"\n"
    "window_capacity = 500\n";

}  // namespace

TEST_CASE("cli lists presets") {
  CaptureStdout cap;
  REQUIRE(cli({"presets"}) == 0);
  std::string out = cap.str();
  REQUIRE(out.find("hypergrid-desk-gfn-tb\n") != std::string::npos);
  REQUIRE(out.find("hypergrid-bench-12-dgfn-subtb\n") != std::string::npos);
  std::size_t lines = 0;
  for (char c : out) lines += c == '\n';
  REQUIRE(lines == 16);
}

TEST_CASE("cli maps argument problems to exit code 2") {
  CaptureStdout cap;
  REQUIRE(cli({}) == 2);                            // missing subcommand
  REQUIRE(cli({"train", "--nope"}) == 2);           // unknown flag
  REQUIRE(cli({"train"}) == 2);                     // neither config nor preset
  REQUIRE(cli({"train", "--preset", "bogus"}) == 2);
  REQUIRE(cli({"train", "--config", "/no/such/file.toml"}) == 2);
  REQUIRE(cli({"plot-data", "--out", "x"}) == 2);   // missing required dirs
  REQUIRE(cli({"sweep", "--preset", "hypergrid-desk-dgfn-tb"}) == 2);  // no --ti/--tu

  OutputRootGuard guard("dgfn-test-cli-badcfg");
  fs::path bad = write_config(guard.root, "bad.toml", "[env]\nside = 1\n");
  REQUIRE(cli({"train", "--config", bad.string().c_str()}) == 2);
  fs::path both = write_config(guard.root, "ok.toml", kTrainToml);
  REQUIRE(cli({"train", "--config", both.string().c_str(), "--preset",
               "hypergrid-desk-gfn-tb"}) == 2);
}

TEST_CASE("cli help succeeds") {
  CaptureStdout cap;
  REQUIRE(cli({"--help"}) == 0);
  REQUIRE(cli({"train", "--help"}) == 0);
}

TEST_CASE("cli trains from a config file") {
  OutputRootGuard guard("dgfn-test-cli-train");
  fs::path cfg_path = write_config(guard.root, "run.toml", kTrainToml);

  CaptureStdout cap;
  REQUIRE(cli({"train", "--config", cfg_path.string().c_str()}) == 0);
  std::string out = cap.str();
  REQUIRE(out.find("seed 0:") != std::string::npos);
  REQUIRE(out.find("aggregate:") != std::string::npos);
  REQUIRE(fs::exists(guard.root / "cli-train" / "seed-0" / "metrics.csv"));
  REQUIRE(fs::exists(guard.root / "cli-train" / "aggregate.csv"));

  SECTION("seed and output overrides") {
    CaptureStdout cap2;
    REQUIRE(cli({"train", "--config", cfg_path.string().c_str(), "--seeds", "5,6",
                 "--out", "cli-other"}) == 0);
    REQUIRE(fs::exists(guard.root / "cli-other" / "seed-5" / "metrics.csv"));
    REQUIRE(fs::exists(guard.root / "cli-other" / "seed-6" / "metrics.csv"));
  }

  SECTION("plot-data consumes training output") {
    fs::path run_dir = guard.root / "cli-train" / "seed-0";
    CaptureStdout cap2;
    REQUIRE(cli({"plot-data", run_dir.string().c_str(), "--out",
                 (guard.root / "panels").string().c_str()}) == 0);
    REQUIRE(fs::exists(guard.root / "panels" / "modes_frac_panel.csv"));
    REQUIRE(fs::exists(guard.root / "panels" / "l1_panel.csv"));
  }

  SECTION("resume flag is accepted on completed runs") {
    CaptureStdout cap2;
    REQUIRE(cli({"train", "--config", cfg_path.string().c_str(), "--resume"}) == 0);
  }
}

TEST_CASE("cli sweep") {
  OutputRootGuard guard("dgfn-test-cli-sweep");
  std::string toml(kTrainToml);
  toml.replace(toml.find("\"gfn\""), 5, "\"dgfn\"");
  toml.replace(toml.find("total_steps = 30"), 16, "total_steps = 10");
  toml.replace(toml.find("out_dir = \"cli-train\""), 21, "out_dir = \"cli-sweep\"");
  fs::path cfg_path = write_config(guard.root, "sweep.toml", toml);

  CaptureStdout cap;
  REQUIRE(cli({"sweep", "--config", cfg_path.string().c_str(), "--ti", "0,5", "--tu",
               "2"}) == 0);
  std::string out = cap.str();
  REQUIRE(out.find("sweep: 2 cells") != std::string::npos);
  REQUIRE(out.find("best cell:") != std::string::npos);
  REQUIRE(fs::exists(guard.root / "cli-sweep" / "sweep.csv"));
  REQUIRE(fs::exists(guard.root / "cli-sweep" / "best.json"));
}

TEST_CASE("cli oracle export") {
  OutputRootGuard guard("dgfn-test-cli-oracle");
  CaptureStdout cap;
  REQUIRE(cli({"oracle", "--preset", "hypergrid-desk-gfn-tb", "--out",
               "oracle-out"}) == 0);
  REQUIRE(fs::exists(guard.root / "oracle-out" / "oracle.csv"));
  REQUIRE(cap.str().find("wrote ") != std::string::npos);
}

TEST_CASE("cli maps runtime failures to exit code 3") {
  OutputRootGuard guard("dgfn-test-cli-fail");
  CaptureStdout cap;
  REQUIRE(cli({"plot-data", (guard.root / "nonexistent-run").string().c_str(),
               "--out", (guard.root / "panels").string().c_str()}) == 3);
}
