// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0
//
// Integration gate: ten end-to-end checks over the assembled artifact, each
// printed as a single [PASS]/[FAIL] line with its measured evidence and
// enforced wall-clock budget. Run one with --criterion <n> or all with no
// arguments; the exit status is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "moekit/cluster_sim.hpp"
#include "moekit/gradcheck.hpp"
#include "moekit/moe_layer.hpp"
#include "moekit/rng.hpp"
#include "moekit/trainer.hpp"

using namespace moekit;

namespace {

char detail_buf[512];

std::string fmt(const char* f, ...) {
  va_list args;
  va_start(args, f);
  std::vsnprintf(detail_buf, sizeof(detail_buf), f, args);
  va_end(args);
  return detail_buf;
}

ModelConfig table_model(const RoutingStrategy& s) {
  ModelConfig cfg;
  cfg.vocab = 64;
  cfg.hidden = 64;
  cfg.intermediate = 256;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.seq_len = 16;
  cfg.strategy = s;
  cfg.gamma = 1.25;
  return cfg;
}

std::vector<RoutingStrategy> five_strategies(int n) {
  return {RoutingStrategy::topk(1, n), RoutingStrategy::topk(2, n),
          RoutingStrategy::topk(4, n), RoutingStrategy::ktop1(2, n / 2),
          RoutingStrategy::ktop1(4, n / 4)};
}

// ---- criterion 1: uniform 1x capacity equalizes expert compute -----------

bool limited_mode_equalizes(std::string& detail) {
  auto rows = compare_strategies(table_model(RoutingStrategy::topk(1, 8)),
                                 five_strategies(8), CapacityMode::kLimited, 256, 17);
  bool flops_equal = true, caps_equal = true;
  double worst_spread = 0.0;
  for (const StrategyCost& r : rows) {
    flops_equal = flops_equal && r.expert_flops == rows[0].expert_flops;
    caps_equal = caps_equal && r.capacity == rows[0].capacity;
    double rel = std::abs(static_cast<double>(r.total_flops) /
                              static_cast<double>(rows[0].total_flops) -
                          1.0);
    worst_spread = std::max(worst_spread, rel);
  }
  detail = fmt("5 strategies, expert_flops %llu %s, capacity %lld, total spread %.4f%%",
               static_cast<unsigned long long>(rows[0].expert_flops),
               flops_equal ? "all equal" : "DIFFER",
               static_cast<long long>(rows[0].capacity), worst_spread * 100.0);
  return flops_equal && caps_equal && worst_spread <= 1e-3;
}

// ---- criterion 2: standard capacity scales with selections per token -----

bool standard_mode_scales(std::string& detail) {
  auto rows = compare_strategies(table_model(RoutingStrategy::topk(1, 8)),
                                 five_strategies(8), CapacityMode::kStandard, 256, 17);
  bool ok = rows[1].expert_flops == 2 * rows[0].expert_flops &&
            rows[2].expert_flops == 4 * rows[0].expert_flops &&
            rows[3].expert_flops == rows[1].expert_flops &&
            rows[4].expert_flops == rows[2].expert_flops &&
            rows[3].comm_entries == rows[1].comm_entries &&
            rows[4].comm_entries == rows[2].comm_entries;
  detail = fmt("expert_flops top1=%llu top2=%.3fx top4=%.3fx, 2top1==top2 %s, 4top1==top4 %s",
               static_cast<unsigned long long>(rows[0].expert_flops),
               static_cast<double>(rows[1].expert_flops) /
                   static_cast<double>(rows[0].expert_flops),
               static_cast<double>(rows[2].expert_flops) /
                   static_cast<double>(rows[0].expert_flops),
               rows[3].expert_flops == rows[1].expert_flops ? "yes" : "NO",
               rows[4].expert_flops == rows[2].expert_flops ? "yes" : "NO");
  return ok;
}

// ---- criterion 3: per-layer communication identity ------------------------

bool comm_identity(std::string& detail) {
  Rng rng(29);
  int checked = 0;
  for (int it = 0; it < 24; ++it) {
    std::int64_t t = 4 + static_cast<std::int64_t>(rng.uniform_int(60));
    std::int64_t m = 4 + static_cast<std::int64_t>(rng.uniform_int(12));
    int n = 2 + static_cast<int>(rng.uniform_int(7));
    RoutingStrategy s;
    if (rng.uniform() < 0.5) {
      int k = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
      s = RoutingStrategy::topk(k, n);
    } else {
      int z = 2;
      while (n % z != 0) n += 1;
      s = RoutingStrategy::ktop1(z, n / z);
    }
    MoeLayerConfig cfg;
    cfg.strategy = s;
    cfg.gamma = rng.uniform(1.0, 2.0);
    cfg.mode = rng.uniform() < 0.5 ? CapacityMode::kStandard : CapacityMode::kLimited;
    Rng init(rng.next_u64());
    MoeFfnParams params = MoeFfnParams::init("moe", m, 2 * m, s, init, 0.2);
    Tensor x = Tensor::randn({t, m}, init);
    CostCounter counter;
    Tape tape(&counter);
    MoeLayerOut out = moe_ffn_layer(tape.input(x, "x"), params, cfg);
    std::uint64_t expect = 2ull * static_cast<std::uint64_t>(s.n) *
                           static_cast<std::uint64_t>(out.plan.capacity) *
                           static_cast<std::uint64_t>(m);
    if (out.layer_cost.comm_entries != expect) {
      detail = fmt("layer %d (%s, t=%lld, m=%lld): comm %llu, expected %llu", it,
                   s.name().c_str(), static_cast<long long>(t), static_cast<long long>(m),
                   static_cast<unsigned long long>(out.layer_cost.comm_entries),
                   static_cast<unsigned long long>(expect));
      return false;
    }
    checked += 1;
  }
  detail = fmt("2*E*C*M held exactly for %d random layer shapes", checked);
  return checked >= 20;
}

// ---- criterion 4: finite differences over a full block --------------------

bool block_gradcheck(std::string& detail) {
  double worst = 0.0;
  std::size_t checked = 0, inconclusive = 0;
  std::string worst_strategy;
  for (const RoutingStrategy& s : five_strategies(4)) {
    ModelConfig cfg;
    cfg.vocab = 16;
    cfg.hidden = 8;
    cfg.intermediate = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.seq_len = 8;
    cfg.strategy = s;
    TransformerModel model(cfg, 41);
    std::vector<int> tokens = {3, 7, 1, 12, 9, 0, 5, 14};
    std::vector<int> targets = {7, 1, 12, 9, 0, 5, 14, 2};
    GradCheckResult res = finite_diff_check(
        model.parameters(),
        [&](Tape& t) { return model.forward(t, tokens, targets).loss; });
    if (res.max_rel_err > worst) {
      worst = res.max_rel_err;
      worst_strategy = s.name();
    }
    checked += res.checked;
    inconclusive += res.inconclusive;
  }
  detail = fmt("%zu coordinates over 5 strategies, %zu inconclusive, max rel err %.3g (%s)",
               checked, inconclusive, worst, worst_strategy.c_str());
  return worst < 1e-4 && checked > 0;
}

// ---- criterion 5: dispersion statistic against a two-pass oracle ----------

bool cv_oracle(std::string& detail) {
  Rng rng(31);
  double worst = 0.0;
  int compared = 0;
  for (int it = 0; it < 1000; ++it) {
    std::size_t n = 1 + static_cast<std::size_t>(rng.uniform_int(32));
    std::vector<std::int64_t> counts(n);
    for (auto& c : counts) c = static_cast<std::int64_t>(rng.uniform_int(200));
    double mean = 0.0;
    for (auto c : counts) mean += static_cast<double>(c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (auto c : counts) {
      double d = static_cast<double>(c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    auto got = coefficient_of_variation(counts);
    if (mean == 0.0) {
      if (got.has_value()) {
        detail = fmt("case %d: zero mean should yield no value", it);
        return false;
      }
      continue;
    }
    double expect = std::sqrt(var) / mean;
    worst = std::max(worst, std::abs(*got - expect));
    compared += 1;
  }
  detail = fmt("%d vectors, worst |error| %.3g", compared, worst);
  return worst < 1e-12;
}

// ---- criterion 6: dispatch plan property suite ----------------------------

bool dispatch_properties(std::string& detail) {
  Rng rng(37);
  int cases = 0;
  for (int it = 0; it < 10000; ++it) {
    std::int64_t t = 1 + static_cast<std::int64_t>(rng.uniform_int(24));
    std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(6));
    int k = 1 + static_cast<int>(rng.uniform_int(
                    static_cast<std::uint64_t>(std::min<std::int64_t>(3, n))));
    std::int64_t c = 1 + static_cast<std::int64_t>(rng.uniform_int(5));
    std::vector<TokenSelections> sel(static_cast<std::size_t>(t));
    for (auto& ts : sel) {
      std::vector<int> ids(static_cast<std::size_t>(n));
      for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
      for (int r = 0; r < k; ++r) {
        std::size_t j = static_cast<std::size_t>(r) + static_cast<std::size_t>(rng.uniform_int(
                                                          static_cast<std::uint64_t>(n - r)));
        std::swap(ids[static_cast<std::size_t>(r)], ids[j]);
        ts.push_back({ids[static_cast<std::size_t>(r)], 1.0 / k});
      }
    }
    DispatchPlan plan = build_dispatch_plan(sel, c, n);

    // Replay with per-expert counters; verify order, slots, and conservation.
    std::vector<std::int64_t> used(static_cast<std::size_t>(n), 0);
    std::size_t drops = 0, idx = 0;
    for (std::int64_t tok = 0; tok < t; ++tok) {
      for (int r = 0; r < k; ++r, ++idx) {
        const PlanEntry& e = plan.entries[idx];
        const Selection& s = sel[static_cast<std::size_t>(tok)][static_cast<std::size_t>(r)];
        std::int64_t& u = used[static_cast<std::size_t>(s.expert)];
        bool fit = u < c;
        bool ok = e.token == tok && e.rank == r && e.expert == s.expert &&
                  e.dropped == !fit && e.slot == (fit ? static_cast<std::int32_t>(u) : -1) &&
                  (!fit || (e.weight > 0.0 && e.weight <= 1.0));
        if (!ok) {
          detail = fmt("case %d: entry %zu mismatches the replay", it, idx);
          return false;
        }
        if (fit) u += 1;
        else drops += 1;
      }
    }
    std::int64_t assigned = 0;
    for (std::int64_t e = 0; e < n; ++e) {
      if (plan.expert_counts[static_cast<std::size_t>(e)] != used[static_cast<std::size_t>(e)] ||
          used[static_cast<std::size_t>(e)] > c) {
        detail = fmt("case %d: expert %lld count wrong", it, static_cast<long long>(e));
        return false;
      }
      assigned += used[static_cast<std::size_t>(e)];
    }
    if (assigned + static_cast<std::int64_t>(drops) !=
            static_cast<std::int64_t>(plan.entries.size()) ||
        drops != plan.total_drops()) {
      detail = fmt("case %d: conservation violated", it);
      return false;
    }
    if (build_dispatch_plan(sel, c, n).content_hash() != plan.content_hash()) {
      detail = fmt("case %d: rebuild changed the plan", it);
      return false;
    }
    cases += 1;
  }

  // Bypass subset: tokens whose selections all dropped pass through the MoE
  // layer bit-exactly.
  Rng brng(41);
  int bypassed = 0;
  for (int it = 0; it < 50; ++it) {
    std::int64_t t = 4, m = 4;
    RoutingStrategy s = RoutingStrategy::topk(1, 2);
    MoeFfnParams params = MoeFfnParams::init("moe", m, 8, s, brng, 0.3);
    // Only w[0][0] is live, so the expert-0 logit is 50 * x[0]; lifting
    // feature 0 below keeps every token on expert 0.
    for (Parameter& r : params.routers) {
      std::fill(r.value.values().begin(), r.value.values().end(), 0.0);
      r.value.values()[0] = 50.0;
    }
    Tensor x = Tensor::randn({t, m}, brng);
    for (std::int64_t tok = 0; tok < t; ++tok)
      x.values()[static_cast<std::size_t>(tok * m)] =
          std::abs(x.values()[static_cast<std::size_t>(tok * m)]) + 0.5;
    MoeLayerConfig cfg;
    cfg.strategy = s;
    cfg.gamma = 1.0;  // capacity 2 of 4: tokens 2 and 3 drop
    Tape tape;
    MoeLayerOut out = moe_ffn_layer(tape.input(x, "x"), params, cfg);
    for (std::int64_t tok = 0; tok < t; ++tok) {
      if (!out.plan.token_fully_dropped(tok)) continue;
      for (std::int64_t col = 0; col < m; ++col) {
        if (out.y.tensor().values()[static_cast<std::size_t>(tok * m + col)] !=
            x.values()[static_cast<std::size_t>(tok * m + col)]) {
          detail = fmt("bypass case %d: token %lld not bit-exact", it,
                       static_cast<long long>(tok));
          return false;
        }
      }
      bypassed += 1;
    }
  }
  detail = fmt("%d random plans replayed, %d bypass tokens bit-exact", cases, bypassed);
  return cases >= 10000 && bypassed > 0;
}

// ---- criterion 7: the balance loss flattens expert load -------------------

double mean_cv(const TrainResult& res, std::size_t begin, std::size_t end) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = begin; i < end && i < res.records.size(); ++i) {
    for (const auto& cv : res.records[i].cv) {
      if (cv.has_value()) {
        sum += *cv;
        n += 1;
      }
    }
  }
  return n ? sum / static_cast<double>(n) : std::nan("");
}

bool balance_improves(std::string& detail) {
  TrainConfig cfg;
  cfg.model.strategy = RoutingStrategy::topk(2, 8);
  cfg.steps = 3000;
  cfg.seed = 11;
  TrainResult aux = train(cfg);
  TrainConfig no = cfg;
  no.model.aux_alpha = 0.0;
  TrainResult noaux = train(no);

  double aux_first = mean_cv(aux, 0, 300);
  double aux_last = mean_cv(aux, 2700, 3000);
  double no_last = mean_cv(noaux, 2700, 3000);
  detail = fmt("c_v with loss %.4f -> %.4f over training; without loss ends at %.4f",
               aux_first, aux_last, no_last);
  return aux_last < no_last && aux_last < aux_first && !aux.diverged && !noaux.diverged;
}

// ---- criterion 8: prototyped routing converges at least as well -----------

bool prototyping_converges(std::string& detail) {
  int wins = 0;
  double sum_top1 = 0.0, sum_proto = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg;
    cfg.model.strategy = RoutingStrategy::topk(1, 8);
    cfg.steps = 600;
    cfg.seed = seed;
    TrainResult top1 = train(cfg);
    TrainConfig proto = cfg;
    proto.model.strategy = RoutingStrategy::ktop1(2, 4);
    TrainResult two = train(proto);
    if (two.final_loss <= top1.final_loss) wins += 1;
    sum_top1 += top1.final_loss;
    sum_proto += two.final_loss;
  }
  detail = fmt("2top1 final loss <= top1 in %d/5 paired seeds (means %.4f vs %.4f)", wins,
               sum_proto / 5.0, sum_top1 / 5.0);
  return wins >= 4;
}

// ---- criterion 9: prototyped selection shortens the critical path ---------

bool routing_path_shrinks(std::string& detail) {
  std::string parts;
  for (int n : {8, 32, 128}) {
    RoutingOpCount topk = routing_op_count(RoutingStrategy::topk(4, n), 1024);
    RoutingOpCount proto = routing_op_count(RoutingStrategy::ktop1(4, n / 4), 1024);
    if (proto.critical_path >= topk.critical_path) {
      detail = fmt("n=%d: prototyped path %llu is not shorter than %llu", n,
                   static_cast<unsigned long long>(proto.critical_path),
                   static_cast<unsigned long long>(topk.critical_path));
      return false;
    }
    parts += fmt("n=%d %llu<%llu ", n, static_cast<unsigned long long>(proto.critical_path),
                 static_cast<unsigned long long>(topk.critical_path));
  }
  for (std::int64_t t : {1, 64, 1000}) {
    RoutingOpCount a = routing_op_count(RoutingStrategy::topk(1, 32), t);
    RoutingOpCount b = routing_op_count(RoutingStrategy::ktop1(1, 32), t);
    if (a.total != b.total || a.critical_path != b.critical_path) {
      detail = fmt("t=%lld: top1 and 1top1 disagree", static_cast<long long>(t));
      return false;
    }
  }
  detail = fmt("critical path 4top1 < top4 at %s; top1 == 1top1 exactly", parts.c_str());
  return true;
}

// ---- criterion 10: degenerate forms collapse to their references ----------

bool degenerate_forms(std::string& detail) {
  // One expert: the layer is the plain FFN, bit for bit.
  Rng rng(43);
  for (int it = 0; it < 20; ++it) {
    std::int64_t t = 2 + static_cast<std::int64_t>(rng.uniform_int(10));
    std::int64_t m = 4, i = 8;
    RoutingStrategy s = RoutingStrategy::topk(1, 1);
    MoeFfnParams params = MoeFfnParams::init("moe", m, i, s, rng, 0.3);
    Tensor x = Tensor::randn({t, m}, rng);
    Tape ta, tb;
    MoeLayerConfig cfg;
    cfg.strategy = s;
    MoeLayerOut routed = moe_ffn_layer(ta.input(x, "x"), params, cfg);
    Value plain = expert_ffn(tb.input(x, "x"), params.experts[0]);
    for (std::int64_t j = 0; j < t * m; ++j) {
      if (routed.y.tensor().values()[static_cast<std::size_t>(j)] !=
          plain.tensor().values()[static_cast<std::size_t>(j)]) {
        detail = fmt("single-expert case %d differs from the plain ffn at %lld", it,
                     static_cast<long long>(j));
        return false;
      }
    }
  }

  // One prototype: expert choice equals top-1 over the same router.
  std::int64_t m = 6;
  int n = 8;
  Tensor w = Tensor::randn({m, n}, rng, 0.5);
  int agreed = 0;
  for (int it = 0; it < 1000; ++it) {
    Tensor x = Tensor::randn({1, m}, rng);
    auto proto = select_prototyped(x, {&w});
    Tape tape;
    RoutingResult rr = route(tape.input(x, "x"), {tape.input(w, "w")},
                             RoutingStrategy::topk(1, n));
    if (proto[0][0].expert != rr.experts[0][0]) {
      detail = fmt("input %d: prototyped picked %d, top-1 picked %d", it,
                   proto[0][0].expert, rr.experts[0][0]);
      return false;
    }
    agreed += 1;
  }
  detail = fmt("single expert bit-exact on 20 inputs; single prototype agreed on %d/1000",
               agreed);
  return agreed == 1000;
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  bool (*run)(std::string&);
};

const Criterion kCriteria[] = {
    {1, "uniform capacity budget equalizes expert flops", 10.0, limited_mode_equalizes},
    {2, "standard capacity scales expert flops with selections", 10.0, standard_mode_scales},
    {3, "per-layer communication equals 2*E*C*M", 5.0, comm_identity},
    {4, "full-block gradients match finite differences", 60.0, block_gradcheck},
    {5, "load dispersion statistic matches a two-pass oracle", 1.0, cv_oracle},
    {6, "dispatch plans hold capacity, order, and bypass invariants", 30.0,
     dispatch_properties},
    {7, "the balance loss flattens expert load over training", 600.0, balance_improves},
    {8, "prototyped routing converges at least as well as top-1", 1800.0,
     prototyping_converges},
    {9, "prototyping shortens the routing critical path", 1.0, routing_path_shrinks},
    {10, "degenerate configurations collapse to their references", 5.0, degenerate_forms},
};

int run_one(const Criterion& c) {
  std::string detail;
  auto start = std::chrono::steady_clock::now();
  bool pass = false;
  try {
    pass = c.run(detail);
  } catch (const std::exception& e) {
    detail = std::string("threw: ") + e.what();
  }
  double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool in_budget = elapsed <= c.budget_seconds;
  bool ok = pass && in_budget;
  std::printf("[%s] criterion %d: %s; %s (%.2f s%s)\n", ok ? "PASS" : "FAIL", c.id, c.name,
              detail.c_str(), elapsed,
              in_budget ? "" : fmt(", over the %.0f s budget", c.budget_seconds).c_str());
  std::fflush(stdout);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  int want = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      want = std::atoi(argv[i + 1]);
      i += 1;
    } else {
      std::fprintf(stderr, "usage: %s [--criterion <1..10>]\n", argv[0]);
      return 2;
    }
  }
  if (want != 0 && (want < 1 || want > 10)) {
    std::fprintf(stderr, "criterion must be in 1..10, got %d\n", want);
    return 2;
  }
  int failures = 0;
  for (const Criterion& c : kCriteria) {
    if (want == 0 || c.id == want) failures += run_one(c);
  }
  return failures;
}
