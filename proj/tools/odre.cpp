// Command-line front end: odre --manifest m.json [--out dir] [--seed n] [--threads n]

#include "odre/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Simulation and verification of observation-driven models in random environments"};
  std::string manifest;
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  app.add_option("--manifest", manifest, "experiment manifest (JSON)")->required();
  auto* out_opt = app.add_option("--out", out, "output directory (overrides manifest.output)");
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides manifest.seed)");
  app.add_option("--threads", threads, "worker threads for replicas")->check(CLI::PositiveNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : odre::cli::kUsage;
  }

  odre::cli::RunOptions opt;
  if (*out_opt) opt.out = out;
  if (*seed_opt) opt.seed = seed;
  opt.threads = threads;
  try {
    const auto result = odre::cli::run(odre::cli::read_manifest(manifest), opt);
    std::cout << result.summary << '\n';
    return result.exit_code;
  } catch (const odre::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return odre::cli::kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return odre::cli::kUsage;
  }
}
