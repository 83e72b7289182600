// levylab: validate, run and replay experiment manifests.

#include <cstdio>
#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "levylab/experiment.hpp"
#include "levylab/kernels.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo laboratory for Levy-driven SDEs and filters"};
  app.require_subcommand(1);

  std::string manifest_path, out_dir, bundle_dir;
  std::uint64_t seed = 0;
  int workers = 1;

  auto* validate = app.add_subcommand("validate", "check a manifest without running it");
  validate->add_option("manifest", manifest_path, "manifest JSON file")->required();

  auto* run = app.add_subcommand("run", "run a manifest and write a bundle");
  run->add_option("manifest", manifest_path, "manifest JSON file")->required();
  auto* seed_opt = run->add_option("--seed", seed, "master seed (overrides the manifest)");
  run->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir, "bundle directory")->required();

  auto* replay = app.add_subcommand("replay", "re-run a bundle and compare every table");
  replay->add_option("bundle", bundle_dir, "bundle directory")->required();
  replay->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) {
      const auto m = levylab::load_manifest(manifest_path);
      const auto errs = m.validation_errors();
      if (errs.empty()) {
        std::cout << "manifest OK (" << m.kind << ")\n";
        return 0;
      }
      std::cerr << "manifest rejected:\n";
      for (const auto& e : errs) std::cerr << "  - " << e << "\n";
      return 2;
    }
    if (*run) {
      const auto m = levylab::load_manifest(manifest_path);
      const std::uint64_t s = *seed_opt ? seed : m.seed.value_or(1);
      const auto b = levylab::run_manifest(m, s, workers);
      levylab::write_bundle(b, out_dir, workers);
      std::cout << m.kind << " isa=" << levylab::kernels::isa_name(levylab::kernels::active_isa())
                << " seed=" << s << " verdict=" << (b.pass ? "PASS" : "FAIL") << "\n";
      return b.pass ? 0 : 1;
    }
    const auto rep = levylab::replay_bundle(bundle_dir, workers);
    if (rep.identical) {
      std::cout << "replay identical; verdict=" << (rep.pass ? "PASS" : "FAIL") << "\n";
      return rep.pass ? 0 : 1;
    }
    std::cout << "replay differs:\n";
    for (const auto& d : rep.diffs) std::cout << "  " << d << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
