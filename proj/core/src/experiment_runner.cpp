// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "json.hpp"
#include "moekit/cluster_sim.hpp"
#include "moekit/errors.hpp"
#include "moekit/experiment.hpp"
#include "moekit/gradcheck.hpp"
#include "moekit/synthetic_task.hpp"
#include "moekit/tape.hpp"

namespace moekit {

namespace {

using nlohmann::json;

constexpr double kGradCheckTolerance = 1e-4;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open output file: " + path.string());
  return out;
}

json record_to_json(const StepRecord& rec) {
  json cv = json::array();
  for (const auto& v : rec.cv) {
    if (v.has_value()) {
      cv.push_back(*v);
    } else {
      cv.push_back(nullptr);
    }
  }
  return json{{"step", rec.step},
              {"loss", rec.loss},
              {"aux", rec.aux},
              {"cv", cv},
              {"drop", rec.drop_fraction},
              {"matmul_flops", rec.cumulative.matmul_flops},
              {"elementwise_flops", rec.cumulative.elementwise_flops},
              {"comm_entries", rec.cumulative.comm_entries}};
}

// Mean of the defined per-layer c_v values; empty when none are defined.
std::optional<double> mean_cv(const StepRecord& rec) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : rec.cv) {
    if (v.has_value()) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

// Mean of per-step mean c_v over records [lo, hi).
double window_mean_cv(const std::vector<StepRecord>& recs, std::size_t lo,
                      std::size_t hi) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = lo; i < hi && i < recs.size(); ++i) {
    if (auto m = mean_cv(recs[i])) {
      sum += *m;
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

int run_train(const ExperimentConfig& cfg, const std::filesystem::path& dir,
              std::ostream& log) {
  std::ofstream metrics = open_out(dir / "metrics.jsonl");
  int every = std::max(1, cfg.train.steps / 10);
  TrainResult result = train(cfg.train, [&](const StepRecord& rec) {
    metrics << record_to_json(rec).dump() << "\n";
    if (rec.step % every == 0 || rec.step + 1 == cfg.train.steps) {
      log << "step " << rec.step << "/" << cfg.train.steps << " loss "
          << rec.loss << " aux " << rec.aux << "\n";
    }
  });

  json summary{{"kind", "train"},
               {"steps_completed", result.records.size()},
               {"final_loss", result.final_loss},
               {"diverged", result.diverged},
               {"matmul_flops", result.total_cost.matmul_flops},
               {"elementwise_flops", result.total_cost.elementwise_flops},
               {"comm_entries", result.total_cost.comm_entries}};
  open_out(dir / "summary.json") << summary.dump(2) << "\n";

  if (result.diverged) {
    log << "run diverged after " << result.records.size() << " steps\n";
    return 3;
  }
  log << "final loss " << result.final_loss << " over last "
      << std::min<std::size_t>(50, result.records.size()) << " steps\n";
  return 0;
}

int run_compare(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                std::ostream& log) {
  std::vector<StrategyCost> rows =
      compare_strategies(cfg.train.model, cfg.compare, cfg.train.model.mode,
                         cfg.compare_tokens, cfg.train.seed);
  std::string table = format_comparison(rows);
  open_out(dir / "comparison.txt") << table;
  json recs = json::array();
  for (const StrategyCost& r : rows) {
    recs.push_back(json{{"name", r.name},
                        {"capacity", r.capacity},
                        {"expert_flops", r.expert_flops},
                        {"total_flops", r.total_flops},
                        {"matmul_flops", r.matmul_flops},
                        {"elementwise_flops", r.elementwise_flops},
                        {"comm_entries", r.comm_entries}});
  }
  open_out(dir / "comparison.json") << recs.dump(2) << "\n";
  log << table;
  return 0;
}

int run_gradcheck(const ExperimentConfig& cfg,
                  const std::filesystem::path& dir, std::ostream& log) {
  // Probe batch is fixed at 2 sequences: the check is quadratic in model
  // size, so the config's dims control the runtime, not its batch.
  const TrainConfig& tc = cfg.train;
  SyntheticTask task =
      SyntheticTask::make(tc.model.vocab, tc.clusters, tc.model.seq_len,
                          tc.seed, tc.task_branch, tc.task_noise);
  Batch batch = generate_batch(task, 2, 0);
  TransformerModel model(tc.model, tc.seed);
  GradCheckResult res =
      finite_diff_check(model.parameters(), [&](Tape& tape) {
        return model.forward(tape, batch.inputs, batch.targets).loss;
      });

  bool pass = res.max_rel_err < kGradCheckTolerance;
  json summary{{"kind", "gradcheck"},
               {"strategy", tc.model.strategy.name()},
               {"max_rel_err", res.max_rel_err},
               {"checked", res.checked},
               {"inconclusive", res.inconclusive},
               {"worst_param", res.worst_name},
               {"worst_coord", res.worst_coord},
               {"tolerance", kGradCheckTolerance},
               {"pass", pass}};
  open_out(dir / "gradcheck.json") << summary.dump(2) << "\n";
  log << "gradcheck " << tc.model.strategy.name() << ": max rel err "
      << res.max_rel_err << " over " << res.checked << " coordinates ("
      << res.inconclusive << " inconclusive) "
      << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : 1;
}

int run_balance_study(const ExperimentConfig& cfg,
                      const std::filesystem::path& dir, std::ostream& log) {
  std::ofstream curves = open_out(dir / "balance.jsonl");
  json summary{{"kind", "balance-study"}};
  bool diverged = false;

  for (bool with_aux : {true, false}) {
    TrainConfig tc = cfg.train;
    if (!with_aux) tc.model.aux_alpha = 0.0;
    const char* label = with_aux ? "aux" : "noaux";
    log << "balance-study run '" << label << "' (alpha "
        << tc.model.aux_alpha << ")\n";
    TrainResult result = train(tc, [&](const StepRecord& rec) {
      json j = record_to_json(rec);
      j["run"] = label;
      curves << j.dump() << "\n";
    });
    diverged = diverged || result.diverged;

    std::size_t n = result.records.size();
    std::size_t tenth = std::max<std::size_t>(1, n / 10);
    summary[label] = json{
        {"final_loss", result.final_loss},
        {"diverged", result.diverged},
        {"cv_first_tenth", window_mean_cv(result.records, 0, tenth)},
        {"cv_last_tenth", window_mean_cv(result.records, n - tenth, n)}};
  }

  open_out(dir / "summary.json") << summary.dump(2) << "\n";
  log << "aux run c_v " << summary["aux"]["cv_first_tenth"] << " -> "
      << summary["aux"]["cv_last_tenth"] << ", noaux run c_v "
      << summary["noaux"]["cv_first_tenth"] << " -> "
      << summary["noaux"]["cv_last_tenth"] << "\n";
  return diverged ? 3 : 0;
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                   std::ostream& log) {
  std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir.string());

  ExperimentConfig effective = cfg;
  effective.out_dir = out_dir;
  open_out(dir / "effective.cfg") << render_config(effective);

  switch (cfg.kind) {
    case ExperimentKind::kTrain: return run_train(effective, dir, log);
    case ExperimentKind::kCompare: return run_compare(effective, dir, log);
    case ExperimentKind::kGradCheck: return run_gradcheck(effective, dir, log);
    case ExperimentKind::kBalanceStudy:
      return run_balance_study(effective, dir, log);
  }
  return 1;
}

}  // namespace moekit
