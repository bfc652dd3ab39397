// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

// Experiment runner. Exit status: 0 success, 1 runtime failure or failed
// check, 2 config parse error, 3 training divergence.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "moekit/errors.hpp"
#include "moekit/experiment.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw moekit::IoError("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moekit: sparse mixture-of-experts experiment runner"};
  app.require_subcommand(1);

  CLI::App* run = app.add_subcommand("run", "execute an experiment config");
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  run->add_option("config", config_path, "path to a key = value config file")
      ->required();
  CLI::Option* out_opt =
      run->add_option("--out", out_dir, "output directory (overrides config)");
  CLI::Option* seed_opt =
      run->add_option("--seed", seed, "seed override");
  CLI::Option* steps_opt =
      run->add_option("--steps", steps, "step-count override");

  CLI11_PARSE(app, argc, argv);

  moekit::ExperimentConfig cfg;
  try {
    cfg = moekit::parse_config(read_file(config_path));
  } catch (const moekit::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const moekit::Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  // Flag overrides beat file values.
  if (seed_opt->count() > 0) cfg.train.seed = seed;
  if (steps_opt->count() > 0) {
    if (steps < 1) {
      std::cerr << "--steps must be >= 1\n";
      return 2;
    }
    cfg.train.steps = static_cast<int>(steps);
  }
  std::string out = out_opt->count() > 0 ? out_dir : cfg.out_dir;

  try {
    return moekit::run_experiment(cfg, out, std::cout);
  } catch (const moekit::Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}
