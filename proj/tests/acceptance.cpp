// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "memix/memix.hpp"

namespace fs = std::filesystem;
using namespace memix;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path kConfigs = MEMIX_CONFIG_DIR;
const fs::path kTmp = fs::path(MEMIX_TEST_TMP) / "acceptance";

Outcome equivalence() {
  const auto t0 = clock_type::now();
  const EquivalenceReport r = equivalence_suite(1, 100);
  const double secs = seconds_since(t0);
  std::size_t passed_trials = 100;
  double worst = 0.0;
  for (const auto& c : r.checks) {
    passed_trials = std::min(passed_trials, c.passed);
    if (c.name != "mask_exact_preservation" && c.name != "gate_range") worst = std::max(worst, c.max_deviation);
  }
  return {r.all_passed() && secs < 10.0,
          fmt("%zu/100 trials, max deviation %.2e, %.2f s", passed_trials, worst, secs)};
}

Outcome exact_preservation() {
  StreamConfig c;
  c.steps = 1000;
  c.plan.k = 16;
  std::size_t violations = 0;
  std::size_t checked = 0;
  run_stream(c, [&](std::size_t, const Matrix& prev, const Matrix& next, const Gate& g) {
    for (std::size_t i = 0; i < prev.rows(); ++i) {
      if (g.values[i] != 0.0) continue;
      ++checked;
      const auto a = prev.row(i);
      const auto b = next.row(i);
      if (!std::equal(a.begin(), a.end(), b.begin(), b.end())) ++violations;
    }
  });
  return {violations == 0 && checked == 1000 * (96 - 16),
          fmt("%zu unselected rows checked over 1000 steps, %zu violations", checked, violations)};
}

Outcome gate_range() {
  Prng rng(2026);
  std::size_t beta_values = 0, gate_values = 0, violations = 0;
  while (beta_values < 100000 || gate_values < 100000) {
    const std::size_t n = 2 + rng.uniform_index(31);
    const std::size_t m = 2 + rng.uniform_index(31);
    const std::size_t heads = 1 + rng.uniform_index(2);
    const std::size_t d = heads * (1 + rng.uniform_index(4));
    const double scale = std::pow(10.0, rng.uniform(-2.0, 1.5));
    const DecoderWeights w = init_weights(rng.next_u64(), 1 + rng.uniform_index(3), heads, d);
    const Matrix s = Matrix::gaussian(n, d, rng, scale);
    const Matrix x = Matrix::gaussian(m, d, rng, scale);
    const DecodeResult r = decode(s, x, w);
    for (double b : compute_beta(r.trace).values) {
      ++beta_values;
      violations += !(b > 0.0 && b < 1.0);
    }
    Vector mv(n);
    for (double& v : mv) v = static_cast<double>(rng.uniform_index(2));
    const Gate mask = Gate::binary(mv);
    const GateInputs in{&r.trace, &mask, nullptr, {}};
    for (auto variant : {UpdateVariant::Continuous, UpdateVariant::TTT, UpdateVariant::MeMixMask,
                         UpdateVariant::MeMixBeta, UpdateVariant::Freeze}) {
      for (double g : unified_gate(s, r.candidate, variant, in).gate.values) {
        ++gate_values;
        violations += !(g >= 0.0 && g <= 1.0);
      }
    }
  }
  return {violations == 0, fmt("%zu beta values, %zu unified gate values, %zu violations", beta_values, gate_values,
                               violations)};
}

double trajectory_gap(const StreamConfig& a, const StreamConfig& b) {
  std::vector<Matrix> ta, tb;
  run_stream(a, [&](std::size_t, const Matrix&, const Matrix& next, const Gate&) { ta.push_back(next); });
  run_stream(b, [&](std::size_t, const Matrix&, const Matrix& next, const Gate&) { tb.push_back(next); });
  double worst = ta.size() == tb.size() ? 0.0 : INFINITY;
  for (std::size_t t = 0; t < std::min(ta.size(), tb.size()); ++t) worst = std::max(worst, max_rel_diff(ta[t], tb[t]));
  return worst;
}

Outcome reduction_chain() {
  StreamConfig mask;
  mask.steps = 200;
  mask.plan.k = mask.n;
  StreamConfig cont = mask;
  cont.rule.variant = UpdateVariant::Continuous;
  StreamConfig mbeta = mask;
  mbeta.rule.variant = UpdateVariant::MeMixBeta;
  StreamConfig ttt = mask;
  ttt.rule.variant = UpdateVariant::TTT;
  const double g1 = trajectory_gap(mask, cont);
  const double g2 = trajectory_gap(mbeta, ttt);
  return {g1 <= 1e-12 && g2 <= 1e-12,
          fmt("mask(k=n) vs continuous %.2e, beta-mask(k=n) vs ttt %.2e over 200 steps", g1, g2)};
}

Outcome balance() {
  const ExperimentConfig cfg = load_experiment_config((kConfigs / "bottomk_vs_topk.json").string());
  StreamConfig bottom = cfg.stream;
  bottom.plan.policy = SelectionPolicy::BottomK;
  StreamConfig top = cfg.stream;
  top.plan.policy = SelectionPolicy::TopK;
  const auto t0 = clock_type::now();
  const RunSummary b = run_stream(bottom).summary;
  const RunSummary t = run_stream(top).summary;
  const double secs = seconds_since(t0);
  const bool shape_ok = bottom.n == 96 && bottom.plan.patch_size == 1 && bottom.plan.k == 16 && bottom.steps == 500 &&
                        bottom.source.kind == SourceKind::Gaussian && bottom.weights_seed == 42 &&
                        bottom.stream_seed == 7;
  return {shape_ok && b.update_cv < t.update_cv && b.coverage >= t.coverage && secs < 30.0,
          fmt("bottom-k cv %.6f coverage %.4f | top-k cv %.6f coverage %.4f | %.2f s", b.update_cv, b.coverage,
              t.update_cv, t.coverage, secs)};
}

Outcome constant_memory() {
  StreamConfig c;
  c.n = 32;
  c.m = 32;
  c.d = 8;
  c.layers = 1;
  c.heads = 1;
  c.plan = RoutingPlan::default_for(32);
  auto run = [&](std::size_t steps) {
    StreamConfig r = c;
    r.steps = steps;
    return run_stream(r).summary;
  };
  auto seconds = [&](std::size_t steps) {
    const auto t0 = clock_type::now();
    run(steps);
    return seconds_since(t0);
  };
  const std::size_t short_peak = run(10).peak_state_bytes;
  const std::size_t long_peak = run(10000).peak_state_bytes;
  // One T=10000 run against ten T=1000 runs, so both sides do the same work
  // over the same wall time. Each side keeps its fastest of five rounds,
  // which filters out scheduler noise on a shared core.
  double best_long = std::numeric_limits<double>::infinity();
  double best_short = std::numeric_limits<double>::infinity();
  for (int round = 0; round < 5; ++round) {
    double ten_short = 0.0;
    for (int i = 0; i < 10; ++i) ten_short += seconds(1000);
    best_short = std::min(best_short, ten_short);
    best_long = std::min(best_long, seconds(10000));
  }
  const double ratio = best_long / best_short;
  return {short_peak == long_peak && ratio >= 0.8 && ratio <= 1.2,
          fmt("peak bytes T=10 %zu, T=10000 %zu | time(T=10000) / 10*time(T=1000) = %.3f", short_peak, long_peak,
              ratio)};
}

// Every shipped config: simulate, ablate when it has a comparison block,
// and the k sweep for sweep_k.json. Each command runs twice.
Outcome determinism() {
  std::size_t compared = 0, mismatched = 0;
  std::vector<fs::path> configs;
  for (const auto& e : fs::directory_iterator(kConfigs)) {
    if (e.path().extension() == ".json") configs.push_back(e.path());
  }
  std::sort(configs.begin(), configs.end());
  std::ostringstream sink;
  for (const auto& path : configs) {
    const ExperimentConfig cfg = load_experiment_config(path.string());
    std::vector<std::pair<std::string, std::function<int(const cli::RunRequest&)>>> cmds;
    cmds.emplace_back("simulate", [&](const cli::RunRequest& r) { return cli::cmd_simulate(r, sink, sink); });
    if (!cfg.comparison.empty()) {
      cmds.emplace_back("ablate", [&](const cli::RunRequest& r) { return cli::cmd_ablate(r, sink, sink); });
    }
    if (path.filename() == "sweep_k.json") {
      cmds.emplace_back("sweep", [&](const cli::RunRequest& r) { return cli::cmd_sweep_k(r, "0:96:12", sink, sink); });
    }
    for (const auto& [name, cmd] : cmds) {
      std::string first;
      for (int rep = 0; rep < 2; ++rep) {
        const fs::path out = kTmp / path.stem() / (name + std::to_string(rep));
        fs::remove_all(out);
        if (cmd(cli::RunRequest{path, out, std::nullopt}) != cli::kOk) return {false, path.string() + ": " + sink.str()};
        const std::string bytes = slurp(out / "summary.csv");
        if (rep == 0) {
          first = bytes;
        } else {
          ++compared;
          mismatched += bytes != first;
        }
      }
    }
  }
  return {compared > 0 && mismatched == 0,
          fmt("%zu summary.csv pairs over %zu configs, %zu differ", compared, configs.size(), mismatched)};
}

double worst_row_sum_error(const AttentionTrace& tr) {
  double worst = 0.0;
  for (const auto* layers : {&tr.state_layers, &tr.image_layers}) {
    for (const auto& l : *layers) {
      for (const auto& h : l.heads) {
        for (std::size_t i = 0; i < h.attention.rows(); ++i) {
          double s = 0.0;
          for (double v : h.attention.row(i)) s += v;
          worst = std::max(worst, std::abs(s - 1.0));
        }
      }
    }
  }
  return worst;
}

Outcome decoder_fixture() {
  const DecodeResult r = decode(Matrix::identity(2), Matrix::identity(2), init_weights(42, 1, 1, 2));
  const HeadTrace& h = r.trace.state_layers[0].heads[0];
  const double dev = std::max({max_abs_diff(h.logits, fixtures::kStateLogits),
                               max_abs_diff(h.attention, fixtures::kStateAttention),
                               max_abs_diff(r.candidate, fixtures::kCandidate),
                               max_abs_diff(r.decoded, fixtures::kDecoded)});
  double rows = worst_row_sum_error(r.trace);
  const EquivalenceReport eq = equivalence_suite(7, 100);
  rows = std::max(rows, eq.checks[kAttentionRows].max_deviation);
  return {dev <= 1e-12 && rows <= 1e-12,
          fmt("fixture deviation %.2e, worst attention row-sum error %.2e", dev, rows)};
}

Outcome default_config() {
  const ExperimentConfig cfg = load_experiment_config((kConfigs / "default.json").string());
  const StreamConfig& s = cfg.stream;
  const bool ok = s.n == 768 && s.plan.k == 708 && s.plan.policy == SelectionPolicy::BottomK &&
                  s.plan.score == ScoreFn::Dot && s.rule.writeback == Writeback::SingleAfterDecoder &&
                  s.rule.variant == UpdateVariant::MeMixMask && s.plan.patch_size == 1;
  return {ok, fmt("n=%zu k=%zu policy=%s score=%s writeback=%s", s.n, s.plan.k, std::string(to_string(s.plan.policy)).c_str(),
                  std::string(to_string(s.plan.score)).c_str(), std::string(to_string(s.rule.writeback)).c_str())};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"AC1 equivalence suite", equivalence},
      {"AC2 exact preservation", exact_preservation},
      {"AC3 gate range", gate_range},
      {"AC4 reduction chain", reduction_chain},
      {"AC5 bottom-k balance", balance},
      {"AC6 constant memory", constant_memory},
      {"AC7 determinism", determinism},
      {"AC8 decoder fixtures", decoder_fixture},
      {"AC9 default config", default_config},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %-24s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
