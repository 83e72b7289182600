#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "levylab/common.hpp"
#include "levylab/experiment.hpp"

using namespace levylab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json ou_superposition() {
  return json::parse(R"({
    "kind": "superposition",
    "coefficients": {"name": "ou", "params": {"theta": 1.0, "sigma": 1.0}, "gamma": 1.0},
    "driver": {"nu": {"kind": "atomic", "dim": 1, "atoms": [{"mark": 0.8, "mass": 0.5}, {"mark": 0.3, "mass": 1.0}]},
               "truncation": {"l": 0.5}},
    "initial": {"kind": "normal", "mean": 0.0, "sd": 1.0},
    "T": 0.5, "h": 0.05, "N": 2000, "martingale": false
  })");
}

json small_limit() {
  return json::parse(R"({
    "kind": "limit",
    "coefficients": {"name": "ou", "params": {"theta": 1.0, "sigma": 1.0}},
    "initial": {"kind": "normal", "mean": 0.0, "sd": 1.0},
    "perturbation": {"drift_shift": 1.0},
    "schedule": [1, 2, 4],
    "T": 0.5, "h": 0.05, "N": 1000
  })");
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("levylab_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("manifest validation lists every problem") {
  json j = ou_superposition();
  j["driver"]["truncation"]["l"] = -1.0;
  j["N"] = 0;
  j["h"] = 2.0;
  j.erase("initial");
  const auto errs = RunManifest::from_json(j).validation_errors();
  CHECK(errs.size() >= 4);
  bool l_msg = false;
  for (const auto& e : errs) l_msg |= e.find("truncation level l must be > 0") != std::string::npos;
  CHECK(l_msg);
  CHECK_THROWS_AS(RunManifest::from_json(j).validate(), ConfigError);

  json k = ou_superposition();
  k["kind"] = "nonsense";
  CHECK_FALSE(RunManifest::from_json(k).validation_errors().empty());
  CHECK(RunManifest::from_json(ou_superposition()).validation_errors().empty());
  CHECK(RunManifest::from_json(small_limit()).validation_errors().empty());
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.json"), ConfigError);
}

TEST_CASE("manifest JSON round trip keeps kind, seed and config") {
  json j = small_limit();
  j["seed"] = 42;
  const auto m = RunManifest::from_json(j);
  REQUIRE(m.seed);
  CHECK(*m.seed == 42);
  CHECK(m.to_json() == j);
}

TEST_CASE("zero-coefficient superposition passes with zero residuals") {
  const json j = json::parse(R"({
    "kind": "superposition",
    "coefficients": {"name": "zero", "params": {"dim": 1}},
    "initial": {"kind": "dirac", "x": 0.0},
    "T": 0.5, "h": 0.1, "N": 100
  })");
  const Bundle b = run_manifest(RunManifest::from_json(j), 1, 1);
  CHECK(b.pass);
  for (const Table& t : b.tables)
    if (t.name == "fpe_residuals") {
      const auto col = std::find(t.columns.begin(), t.columns.end(), "residual") - t.columns.begin();
      REQUIRE(col < static_cast<long>(t.columns.size()));
      for (const auto& r : t.rows) CHECK(std::stod(r[col]) == 0.0);
    }
}

TEST_CASE("bundles replay bit for bit across worker counts") {
  for (const json& j : {ou_superposition(), small_limit()}) {
    const RunManifest m = RunManifest::from_json(j);
    const fs::path dir = scratch(m.kind);
    write_bundle(run_manifest(m, 11, 1), dir.string(), 1);
    CHECK(fs::exists(dir / "summary.json"));
    for (int w : {1, 4, 8}) {
      const ReplayReport r = replay_bundle(dir.string(), w);
      CHECK(r.identical);
      for (const auto& d : r.diffs) MESSAGE(d);
    }
    // A different seed must show up as a difference.
    json alt = json::parse(std::ifstream(dir / "manifest.json"));
    alt["seed"] = 12;
    std::ofstream(dir / "manifest.json") << alt.dump(2);
    CHECK_FALSE(replay_bundle(dir.string(), 1).identical);
    fs::remove_all(dir);
  }
  CHECK_THROWS_AS(replay_bundle("/nonexistent/bundle", 1), ConfigError);
}

TEST_CASE("format_real round-trips doubles") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23}) CHECK(std::stod(format_real(v)) == v);
}

TEST_CASE("command-line exit codes") {
  const char* cli = std::getenv("LEVYLAB_CLI");
  if (!cli) {
    MESSAGE("LEVYLAB_CLI not set; skipping");
    return;
  }
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  std::ofstream(dir / "good.json") << small_limit().dump();
  json bad = small_limit();
  bad["N"] = -3;
  std::ofstream(dir / "bad.json") << bad.dump();
  auto run = [&](const std::string& args) {
    const int s = std::system((std::string(cli) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  CHECK(run("validate " + (dir / "good.json").string()) == 0);
  CHECK(run("validate " + (dir / "bad.json").string()) == 2);
  const int rc = run("run " + (dir / "good.json").string() + " --seed 5 --workers 2 --out " + (dir / "b").string());
  CHECK((rc == 0 || rc == 1));
  CHECK(run("replay " + (dir / "b").string() + " --workers 3") == rc);
  CHECK(run("run " + (dir / "missing.json").string() + " --out " + (dir / "c").string()) == 2);
  fs::remove_all(dir);
}
