// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#include "moekit/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "moekit/errors.hpp"

namespace moekit {

namespace {

struct RawEntry {
  std::string value;
  int line = 0;
};

using RawMap = std::map<std::string, RawEntry>;

const char* const kKnownKeys[] = {
    // general
    "kind", "out", "seed", "steps",
    // model
    "vocab", "hidden", "intermediate", "heads", "layers", "seq_len", "causal",
    "init_stddev", "moe_attention",
    // routing
    "strategy", "N", "Z", "F", "gamma", "capacity_mode", "aux_alpha",
    "renormalize_gates",
    // optimizer
    "lr", "beta1", "beta2", "eps", "weight_decay", "warmup",
    // task
    "batch", "clusters", "task_branch", "task_noise",
    // compare
    "tokens", "strategies"};

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& msg) { throw ParseError(msg); }

[[noreturn]] void fail_key(const std::string& key, int line,
                           const std::string& msg) {
  fail("config: key '" + key + "' (line " + std::to_string(line) + "): " + msg);
}

RawMap tokenize(const std::string& text) {
  RawMap raw;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        fail("config: malformed section header at line " +
             std::to_string(lineno));
      }
      continue;  // sections are cosmetic
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      fail("config: expected 'key = value' at line " + std::to_string(lineno));
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      fail("config: empty key at line " + std::to_string(lineno));
    }
    auto it = raw.find(key);
    if (it != raw.end()) {
      fail("config: duplicate key '" + key + "' at lines " +
           std::to_string(it->second.line) + " and " + std::to_string(lineno));
    }
    raw[key] = RawEntry{value, lineno};
  }
  return raw;
}

void reject_unknown(const RawMap& raw) {
  const RawEntry* worst = nullptr;
  const std::string* worst_key = nullptr;
  for (const auto& [key, entry] : raw) {
    bool known = std::any_of(std::begin(kKnownKeys), std::end(kKnownKeys),
                             [&](const char* k) { return key == k; });
    if (!known && (!worst || entry.line < worst->line)) {
      worst = &entry;
      worst_key = &key;
    }
  }
  if (worst) {
    fail("config: unknown key '" + *worst_key + "' at line " +
         std::to_string(worst->line));
  }
}

// Typed getters. Each parses the whole value or reports the key and line.
class Fields {
 public:
  explicit Fields(const RawMap& raw) : raw_(raw) {}

  bool has(const std::string& key) const { return raw_.count(key) != 0; }

  int line(const std::string& key) const { return raw_.at(key).line; }

  // Line of the first present key in `keys`, for attributing cross-key
  // constraint failures; 0 when all were defaulted.
  int line_of_any(std::initializer_list<const char*> keys) const {
    for (const char* k : keys) {
      if (has(k)) return line(k);
    }
    return 0;
  }

  std::string str(const std::string& key, const std::string& dflt) const {
    auto it = raw_.find(key);
    return it == raw_.end() ? dflt : it->second.value;
  }

  std::string required(const std::string& key) const {
    auto it = raw_.find(key);
    if (it == raw_.end()) fail("config: missing required key '" + key + "'");
    return it->second.value;
  }

  std::int64_t i64(const std::string& key, std::int64_t dflt) const {
    auto it = raw_.find(key);
    if (it == raw_.end()) return dflt;
    try {
      std::size_t pos = 0;
      std::int64_t v = std::stoll(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      fail_key(key, it->second.line,
               "expected integer, got '" + it->second.value + "'");
    }
  }

  std::uint64_t u64(const std::string& key, std::uint64_t dflt) const {
    auto it = raw_.find(key);
    if (it == raw_.end()) return dflt;
    try {
      if (!it->second.value.empty() && it->second.value[0] == '-') {
        throw std::invalid_argument("");
      }
      std::size_t pos = 0;
      std::uint64_t v = std::stoull(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      fail_key(key, it->second.line,
               "expected unsigned integer, got '" + it->second.value + "'");
    }
  }

  double f64(const std::string& key, double dflt) const {
    auto it = raw_.find(key);
    if (it == raw_.end()) return dflt;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      fail_key(key, it->second.line,
               "expected number, got '" + it->second.value + "'");
    }
  }

  bool boolean(const std::string& key, bool dflt) const {
    auto it = raw_.find(key);
    if (it == raw_.end()) return dflt;
    if (it->second.value == "true") return true;
    if (it->second.value == "false") return false;
    fail_key(key, it->second.line,
             "expected true or false, got '" + it->second.value + "'");
  }

 private:
  const RawMap& raw_;
};

ExperimentKind parse_kind(const Fields& f) {
  std::string v = f.str("kind", "train");
  if (v == "train") return ExperimentKind::kTrain;
  if (v == "compare") return ExperimentKind::kCompare;
  if (v == "gradcheck") return ExperimentKind::kGradCheck;
  if (v == "balance-study") return ExperimentKind::kBalanceStudy;
  fail_key("kind", f.has("kind") ? f.line("kind") : 0,
           "expected train|compare|gradcheck|balance-study, got '" + v + "'");
}

CapacityMode parse_mode(const Fields& f) {
  std::string v = f.str("capacity_mode", "standard");
  if (v == "standard") return CapacityMode::kStandard;
  if (v == "limited") return CapacityMode::kLimited;
  fail_key("capacity_mode",
           f.has("capacity_mode") ? f.line("capacity_mode") : 0,
           "expected standard|limited, got '" + v + "'");
}

// strategy = top<k> | <z>top1 | ktop1 (the last takes Z and optionally F).
RoutingStrategy resolve_strategy(const Fields& f, int n) {
  std::string name = f.required("strategy");
  int line = f.line("strategy");
  RoutingStrategy s;
  try {
    if (name == "ktop1") {
      if (!f.has("Z")) {
        fail_key("strategy", line, "strategy ktop1 requires key Z");
      }
      int z = static_cast<int>(f.i64("Z", 0));
      int dflt_f = (z > 0 && n % z == 0) ? n / z : 0;
      int ff = static_cast<int>(f.i64("F", dflt_f));
      if (z < 1 || ff < 1 || z * ff != n) {
        fail_key(f.has("F") ? "F" : "Z", f.has("F") ? f.line("F") : f.line("Z"),
                 "Z*F must equal N (Z=" + std::to_string(z) +
                     ", F=" + std::to_string(ff) + ", N=" + std::to_string(n) +
                     ")");
      }
      s = RoutingStrategy::ktop1(z, ff);
    } else {
      s = parse_strategy(name, n);
      // Explicit Z/F keys must agree with the named form when present.
      if (f.has("Z") && f.i64("Z", 0) != s.z) {
        fail_key("Z", f.line("Z"), "conflicts with strategy '" + name + "'");
      }
      if (f.has("F") && f.i64("F", 0) != s.f) {
        fail_key("F", f.line("F"), "conflicts with strategy '" + name + "'");
      }
    }
  } catch (const ConfigError& e) {
    fail_key("strategy", line, e.what());
  }
  return s;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kTrain: return "train";
    case ExperimentKind::kCompare: return "compare";
    case ExperimentKind::kGradCheck: return "gradcheck";
    case ExperimentKind::kBalanceStudy: return "balance-study";
  }
  return "train";
}

RoutingStrategy parse_strategy(const std::string& name, int n) {
  auto all_digits = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
      return std::isdigit(c) != 0;
    });
  };
  if (name.rfind("top", 0) == 0 && all_digits(name.substr(3))) {
    int k = std::stoi(name.substr(3));
    return RoutingStrategy::topk(k, n);
  }
  std::size_t pos = name.find("top1");
  if (pos != std::string::npos && pos + 4 == name.size() &&
      all_digits(name.substr(0, pos))) {
    int z = std::stoi(name.substr(0, pos));
    if (z < 1 || n % z != 0) {
      throw ConfigError("strategy '" + name + "': " + std::to_string(z) +
                        " prototypes must evenly divide N=" +
                        std::to_string(n));
    }
    return RoutingStrategy::ktop1(z, n / z);
  }
  throw ConfigError("unknown strategy '" + name +
                    "' (expected top<k> or <z>top1)");
}

ExperimentConfig parse_config(const std::string& text) {
  RawMap raw = tokenize(text);
  reject_unknown(raw);
  Fields f(raw);

  ExperimentConfig cfg;
  cfg.kind = parse_kind(f);
  cfg.out_dir = f.str("out", "out");

  TrainConfig& tc = cfg.train;
  tc.seed = f.u64("seed", 0);
  tc.steps = static_cast<int>(f.i64("steps", 1000));
  tc.batch = static_cast<int>(f.i64("batch", 16));
  tc.clusters = static_cast<int>(f.i64("clusters", 8));
  tc.task_branch = static_cast<int>(f.i64("task_branch", 2));
  tc.task_noise = f.f64("task_noise", 0.05);

  ModelConfig& mc = tc.model;
  mc.vocab = static_cast<int>(f.i64("vocab", 64));
  mc.hidden = static_cast<int>(f.i64("hidden", 32));
  mc.intermediate = static_cast<int>(f.i64("intermediate", 64));
  mc.heads = static_cast<int>(f.i64("heads", 2));
  mc.layers = static_cast<int>(f.i64("layers", 2));
  mc.seq_len = static_cast<int>(f.i64("seq_len", 16));
  mc.causal = f.boolean("causal", true);
  mc.init_stddev = f.f64("init_stddev", 0.06);
  mc.moe_attention = f.boolean("moe_attention", false);
  mc.gamma = f.f64("gamma", 1.25);
  mc.mode = parse_mode(f);
  mc.aux_alpha = f.f64("aux_alpha", 0.01);
  mc.renormalize_gates = f.boolean("renormalize_gates", false);

  if (!f.has("N")) fail("config: missing required key 'N'");
  int n = static_cast<int>(f.i64("N", 0));
  if (n < 1) fail_key("N", f.line("N"), "N must be >= 1");
  mc.strategy = resolve_strategy(f, n);

  AdamConfig& ac = tc.optim;
  ac.lr = f.f64("lr", 3e-3);
  ac.beta1 = f.f64("beta1", 0.9);
  ac.beta2 = f.f64("beta2", 0.999);
  ac.eps = f.f64("eps", 1e-8);
  ac.weight_decay = f.f64("weight_decay", 0.0);
  ac.warmup_steps = f.i64("warmup", 100);

  cfg.compare_tokens = static_cast<int>(f.i64("tokens", 256));
  std::string list = f.str("strategies", "top1,top2,top4,2top1,4top1");
  std::istringstream ls(list);
  std::string item;
  while (std::getline(ls, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      cfg.compare.push_back(parse_strategy(item, n));
    } catch (const ConfigError& e) {
      fail_key("strategies", f.line_of_any({"strategies"}), e.what());
    }
  }
  if (cfg.compare.empty()) {
    fail_key("strategies", f.line_of_any({"strategies"}), "empty strategy list");
  }

  // Cross-key constraints, attributed to whichever key the user touched.
  if (mc.vocab % tc.clusters != 0) {
    fail_key("clusters", f.line_of_any({"clusters", "vocab"}),
             "clusters must divide vocab");
  }
  if (mc.hidden % mc.heads != 0) {
    fail_key("heads", f.line_of_any({"heads", "hidden"}),
             "heads must divide hidden");
  }
  if (mc.gamma < 1.0) {
    fail_key("gamma", f.line_of_any({"gamma"}),
             "capacity factor must be >= 1");
  }
  if (cfg.kind == ExperimentKind::kCompare &&
      cfg.compare_tokens % mc.seq_len != 0) {
    fail_key("tokens", f.line_of_any({"tokens", "seq_len"}),
             "tokens must be a multiple of seq_len");
  }

  // Backstop: any remaining invariant violation is still a parse failure.
  try {
    tc.validate();
    for (const RoutingStrategy& s : cfg.compare) s.validate();
  } catch (const Error& e) {
    fail(std::string("config: ") + e.what());
  }
  return cfg;
}

std::string render_config(const ExperimentConfig& cfg) {
  const TrainConfig& tc = cfg.train;
  const ModelConfig& mc = tc.model;
  const AdamConfig& ac = tc.optim;
  std::ostringstream out;
  out << "# effective configuration\n";
  out << "kind = " << kind_name(cfg.kind) << "\n";
  out << "out = " << cfg.out_dir << "\n";
  out << "seed = " << tc.seed << "\n";
  out << "steps = " << tc.steps << "\n";
  out << "\n[model]\n";
  out << "vocab = " << mc.vocab << "\n";
  out << "hidden = " << mc.hidden << "\n";
  out << "intermediate = " << mc.intermediate << "\n";
  out << "heads = " << mc.heads << "\n";
  out << "layers = " << mc.layers << "\n";
  out << "seq_len = " << mc.seq_len << "\n";
  out << "causal = " << (mc.causal ? "true" : "false") << "\n";
  out << "init_stddev = " << fmt_double(mc.init_stddev) << "\n";
  out << "moe_attention = " << (mc.moe_attention ? "true" : "false") << "\n";
  out << "\n[routing]\n";
  out << "strategy = " << mc.strategy.name() << "\n";
  out << "N = " << mc.strategy.n << "\n";
  out << "gamma = " << fmt_double(mc.gamma) << "\n";
  out << "capacity_mode = "
      << (mc.mode == CapacityMode::kStandard ? "standard" : "limited") << "\n";
  out << "aux_alpha = " << fmt_double(mc.aux_alpha) << "\n";
  out << "renormalize_gates = " << (mc.renormalize_gates ? "true" : "false")
      << "\n";
  out << "\n[optimizer]\n";
  out << "lr = " << fmt_double(ac.lr) << "\n";
  out << "beta1 = " << fmt_double(ac.beta1) << "\n";
  out << "beta2 = " << fmt_double(ac.beta2) << "\n";
  out << "eps = " << fmt_double(ac.eps) << "\n";
  out << "weight_decay = " << fmt_double(ac.weight_decay) << "\n";
  out << "warmup = " << ac.warmup_steps << "\n";
  out << "\n[task]\n";
  out << "batch = " << tc.batch << "\n";
  out << "clusters = " << tc.clusters << "\n";
  out << "task_branch = " << tc.task_branch << "\n";
  out << "task_noise = " << fmt_double(tc.task_noise) << "\n";
  out << "\n[compare]\n";
  out << "tokens = " << cfg.compare_tokens << "\n";
  out << "strategies = ";
  for (std::size_t i = 0; i < cfg.compare.size(); ++i) {
    if (i) out << ",";
    out << cfg.compare[i].name();
  }
  out << "\n";
  return out.str();
}

}  // namespace moekit
