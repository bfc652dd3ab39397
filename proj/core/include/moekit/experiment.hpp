// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_EXPERIMENT_HPP_
#define MOEKIT_EXPERIMENT_HPP_

#include <iosfwd>
#include <string>
#include <vector>

#include "moekit/routing.hpp"
#include "moekit/trainer.hpp"

namespace moekit {

enum class ExperimentKind { kTrain, kCompare, kGradCheck, kBalanceStudy };

std::string kind_name(ExperimentKind kind);

// A fully validated experiment. Every field has a config-file key; parsing
// applies defaults so a round trip through render_config is lossless.
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kTrain;
  TrainConfig train;
  // compare experiments run these strategies over `compare_tokens` tokens.
  std::vector<RoutingStrategy> compare;
  int compare_tokens = 256;
  std::string out_dir = "out";
};

// "top<k>" or "<z>top1"; n is the total expert count the strategy must
// partition. Throws ConfigError on an unknown form or a mismatch with n.
RoutingStrategy parse_strategy(const std::string& name, int n);

// Flat `key = value` lines; `[section]` headers are cosmetic and `#` lines
// are comments. Keys are globally unique. Unknown keys, duplicate keys,
// type mismatches, and constraint violations throw ParseError naming the
// key and line. The result has every default filled in.
ExperimentConfig parse_config(const std::string& text);

// Effective-config echo. parse_config(render_config(c)) reproduces c
// exactly, doubles included.
std::string render_config(const ExperimentConfig& cfg);

// Executes the experiment, writing the effective config, metric records,
// and a summary under out_dir. Progress goes to `log`. Returns the process
// exit status: 0 success, 1 failed check, 3 divergence.
int run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                   std::ostream& log);

}  // namespace moekit

#endif  // MOEKIT_EXPERIMENT_HPP_
