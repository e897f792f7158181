#pragma once

// Deterministic streaming simulator. Each step synthesizes image tokens,
// runs the decoder against the current state, realizes the rule's gate
// (routing mask, beta, both, or neither), writes the state back, and logs
// update counters, drift and retention.
//
// Everything is a pure function of the StreamConfig: weights come from
// weights_seed, the initial state from weights_seed ^ kStateSalt, tokens from
// stream_seed and Random-k draws from stream_seed ^ kRoutingSalt.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "memix/decoder.hpp"
#include "memix/errors.hpp"
#include "memix/gates.hpp"
#include "memix/prng.hpp"
#include "memix/routing.hpp"
#include "memix/tensor.hpp"

namespace memix {

inline constexpr std::uint64_t kStateSalt = 0x5DEECE66DA3B9F01ull;
inline constexpr std::uint64_t kRoutingSalt = 0xD1B54A32D192ED03ull;

enum class GatePlacement {
  AfterDecoder,  // convex law on the ungated candidate
  FrozenReplay,  // residual law through a replay of the ungated trace
  InsideLayers,  // gate every layer's residual, attention recomputed
};

enum class TraceLevel { Off, Summary, Full };

enum class SourceKind { Gaussian, Revisit, KeyRecall };

struct StreamSource {
  SourceKind kind = SourceKind::Gaussian;
  double scale = 1.0;  // amplitude of i.i.d. Gaussian tokens

  // Revisit: a dictionary of scenes replayed by `schedule` (cycled), plus noise.
  std::size_t dictionary_size = 0;
  std::vector<std::size_t> schedule;
  double noise = 0.0;

  // KeyRecall: a fixed key matrix is observed at write_step; retention is
  // probed after probe_step. Steps are 1-based.
  std::size_t write_step = 0;
  std::size_t probe_step = 0;

  friend bool operator==(const StreamSource&, const StreamSource&) = default;
};

struct StreamConfig {
  std::size_t n = 96;  // state tokens
  std::size_t d = 16;
  std::size_t m = 96;  // image tokens per step
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t steps = 100;
  std::uint64_t weights_seed = 42;
  std::uint64_t stream_seed = 7;
  UpdateRule rule{};
  RoutingPlan plan = RoutingPlan::default_for(96);
  GatePlacement placement = GatePlacement::AfterDecoder;
  StreamSource source{};
  TraceLevel trace_level = TraceLevel::Off;
  bool raw_logits = false;
  bool beta_on_attention = false;
  bool record_timing = false;  // off keeps summaries bit-reproducible

  void validate() const {
    if (n == 0 || d == 0 || m == 0 || layers == 0 || heads == 0) throw ConfigError("stream config: dims must be >= 1");
    if (steps == 0) throw ConfigError("stream config: T must be >= 1");
    if (d % heads != 0) throw ConfigError("stream config: d=" + std::to_string(d) + " not divisible by H");
    rule.validate();
    if (rule.variant == UpdateVariant::External) throw ConfigError("stream config: external gates need a provider");
    if (rule.writeback == Writeback::FullPerLayer && placement != GatePlacement::AfterDecoder) {
      throw ConfigError("stream config: per-layer writeback only supports after_decoder placement");
    }
    if (rule.uses_mask()) {
      plan.validate(n);
      if (plan.token_aligned() && m != n) {
        throw ConfigError("stream config: row-wise routing scores need m == n (m=" + std::to_string(m) +
                          ", n=" + std::to_string(n) + ")");
      }
    }
    switch (source.kind) {
      case SourceKind::Gaussian:
        if (!(source.scale > 0.0) || !std::isfinite(source.scale)) throw ConfigError("gaussian source: scale > 0");
        break;
      case SourceKind::Revisit:
        if (source.dictionary_size == 0 || source.schedule.empty()) {
          throw ConfigError("revisit source: needs a dictionary and a non-empty schedule");
        }
        for (std::size_t s : source.schedule) {
          if (s >= source.dictionary_size) throw ConfigError("revisit source: schedule index out of range");
        }
        if (!(source.noise >= 0.0) || !std::isfinite(source.noise)) throw ConfigError("revisit source: noise >= 0");
        break;
      case SourceKind::KeyRecall:
        if (!(source.write_step >= 1 && source.write_step < source.probe_step && source.probe_step <= steps)) {
          throw ConfigError("key_recall source: need 1 <= write_step < probe_step <= T");
        }
        if (!(source.scale > 0.0) || !std::isfinite(source.scale)) throw ConfigError("key_recall source: scale > 0");
        break;
    }
  }

  friend bool operator==(const StreamConfig&, const StreamConfig&) = default;
};

class TokenStream {
 public:
  TokenStream(const StreamSource& src, std::size_t m, std::size_t d, std::uint64_t seed)
      : src_(src), m_(m), d_(d), rng_(seed) {
    if (src_.kind == SourceKind::Revisit) {
      dictionary_.reserve(src_.dictionary_size);
      for (std::size_t i = 0; i < src_.dictionary_size; ++i) dictionary_.push_back(Matrix::gaussian(m_, d_, rng_));
    } else if (src_.kind == SourceKind::KeyRecall) {
      dictionary_.push_back(Matrix::gaussian(m_, d_, rng_, src_.scale));
    }
  }

  /// Tokens for 1-based step t. Steps must be requested in order.
  Matrix next(std::size_t t) {
    switch (src_.kind) {
      case SourceKind::Gaussian: return Matrix::gaussian(m_, d_, rng_, src_.scale);
      case SourceKind::Revisit: {
        Matrix x = dictionary_[src_.schedule[(t - 1) % src_.schedule.size()]];
        if (src_.noise > 0.0) {
          for (double& v : x.data()) v += src_.noise * rng_.gaussian();
        }
        return x;
      }
      case SourceKind::KeyRecall:
        if (t == src_.write_step) return dictionary_.front();
        return Matrix::gaussian(m_, d_, rng_, src_.scale);
    }
    throw ConfigError("token stream: unknown source");
  }

  const Matrix* key() const noexcept { return src_.kind == SourceKind::KeyRecall ? &dictionary_.front() : nullptr; }

  std::size_t bytes() const noexcept {
    std::size_t total = 0;
    for (const auto& m : dictionary_) total += m.bytes();
    return total;
  }

 private:
  StreamSource src_;
  std::size_t m_;
  std::size_t d_;
  Prng rng_;
  std::vector<Matrix> dictionary_;
};

struct StepTrace {
  std::size_t t = 0;
  Vector scores;  // routing scores (empty for unrouted rules)
  std::vector<std::size_t> selected_patches;
  Vector realized_gate;
  double state_delta_norm = 0.0;
  std::vector<std::uint64_t> counters;  // cumulative per-token update counts
  std::optional<double> retention_error;
  std::optional<double> full_retention_error;
  std::uint64_t wall_time_ns = 0;
  std::size_t peak_state_bytes = 0;

  friend bool operator==(const StepTrace&, const StepTrace&) = default;
};

struct DriftPoint {
  std::size_t t = 0;
  double drift = 0.0;  // ||S_t - S_0||_F / ||S_0||_F

  friend bool operator==(const DriftPoint&, const DriftPoint&) = default;
};

struct RetentionPoint {
  std::size_t t = 0;
  double restricted_error = 0.0;  // over tokens never written since the key step
  double full_error = 0.0;
  std::size_t preserved_tokens = 0;

  friend bool operator==(const RetentionPoint&, const RetentionPoint&) = default;
};

struct CoverageStats {
  double coverage = 0.0;
  double cv = 0.0;
  double entropy = 0.0;                  // nats
  std::vector<std::size_t> histogram;    // histogram[c] = tokens updated exactly c times

  friend bool operator==(const CoverageStats&, const CoverageStats&) = default;
};

/// Balance statistics of per-token update counts.
inline CoverageStats coverage_stats(std::span<const std::uint64_t> counts) {
  if (counts.empty()) throw ContractError("coverage_stats: no counters");
  CoverageStats s;
  const double n = static_cast<double>(counts.size());
  const std::uint64_t max_count = *std::max_element(counts.begin(), counts.end());
  s.histogram.assign(static_cast<std::size_t>(max_count) + 1, 0);
  double total = 0.0;
  std::size_t touched = 0;
  for (std::uint64_t c : counts) {
    ++s.histogram[static_cast<std::size_t>(c)];
    total += static_cast<double>(c);
    if (c > 0) ++touched;
  }
  s.coverage = static_cast<double>(touched) / n;
  const double mean = total / n;
  if (mean > 0.0) {
    double var = 0.0;
    for (std::uint64_t c : counts) var += (static_cast<double>(c) - mean) * (static_cast<double>(c) - mean);
    s.cv = std::sqrt(var / n) / mean;
    for (std::uint64_t c : counts) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / total;
      s.entropy -= p * std::log(p);
    }
  }
  return s;
}

struct RunSummary {
  StreamConfig config;
  double coverage = 0.0;
  double update_cv = 0.0;
  double update_entropy = 0.0;
  std::vector<std::uint64_t> counts;
  std::vector<DriftPoint> drift;  // subsampled, always ends at T
  double final_drift = 0.0;
  std::vector<RetentionPoint> retention;
  double steps_per_sec = 0.0;
  std::size_t peak_state_bytes = 0;
  Matrix final_state;

  friend bool operator==(const RunSummary&, const RunSummary&) = default;
};

struct RunResult {
  RunSummary summary;
  std::vector<StepTrace> traces;  // empty when trace_level is Off
};

namespace detail {

struct StepOutput {
  Matrix next;
  Gate gate;
  Vector scores;
  std::vector<std::size_t> selected;
  std::size_t scratch_bytes = 0;
};

inline bool uses_candidate(FeatureSource s) {
  return s == FeatureSource::CandidateRaw || s == FeatureSource::CandidateDecoded;
}
inline bool uses_decoded(FeatureSource s) {
  return s == FeatureSource::CandidateDecoded || s == FeatureSource::PrevStateDecoded;
}

inline StepOutput single_writeback_step(const StreamConfig& cfg, const DecoderWeights& w, const Matrix& s,
                                        const Matrix& x, Prng& route_rng) {
  const DecodeOptions opts{cfg.raw_logits};
  const BetaOptions beta{cfg.beta_on_attention};
  DecodeResult step = decode(s, x, w, Ungated{}, opts);
  StepOutput out;
  std::optional<Gate> mask;
  if (cfg.rule.uses_mask()) {
    RouteOutcome ro = route(step, s, x, cfg.plan, &route_rng);
    out.scores = std::move(ro.scores);
    out.selected = std::move(ro.mask.selected_patches);
    mask = std::move(ro.mask.token_mask);
  }
  out.gate = realize_gate(s.rows(), cfg.rule.variant, GateInputs{&step.trace, mask ? &*mask : nullptr, nullptr, beta});
  out.scratch_bytes = step.bytes() + out.scores.size() * sizeof(double) + out.gate.size() * sizeof(double) +
                      (mask ? mask->size() * sizeof(double) : 0);
  switch (cfg.placement) {
    case GatePlacement::AfterDecoder: out.next = gate_update_convex(s, step.candidate, out.gate.span()); break;
    case GatePlacement::FrozenReplay: {
      DecodeResult replay = decode(s, x, w, FrozenReplay{std::cref(step.trace), out.gate.values}, opts);
      out.scratch_bytes += replay.bytes();
      out.next = std::move(replay.candidate);
      break;
    }
    case GatePlacement::InsideLayers: {
      DecodeResult gated = decode(s, x, w, GatedInside{out.gate.values}, opts);
      out.scratch_bytes += gated.bytes();
      out.next = std::move(gated.candidate);
      break;
    }
  }
  return out;
}

}  // namespace detail

/// Per-layer write-back. After every decoder layer a fresh mask is routed
/// from that layer's features and applied before the next layer runs. The
/// feature source maps onto the layer: "previous state" is the layer's input
/// state, "candidate" its ungated output, "raw" its input image tokens and
/// "decoded" its output image tokens. The logged gate is the elementwise max
/// over layers and the logged scores are the last layer's.
inline detail::StepOutput writeback_full_per_layer(const StreamConfig& cfg, const DecoderWeights& w,
                                                   const Matrix& state, const Matrix& tokens, Prng& route_rng) {
  if (!cfg.rule.uses_mask()) throw ConfigError("per-layer writeback needs a masked rule");
  const DecodeOptions opts{cfg.raw_logits};
  const BetaOptions beta{cfg.beta_on_attention};
  detail::StepOutput out;
  out.gate = Gate{Vector(state.rows(), 0.0), cfg.rule.variant == UpdateVariant::MeMixMask ? GateKind::Binary
                                                                                         : GateKind::MaskedDense};
  std::vector<bool> picked(cfg.plan.partition(state.rows()).patch_count(), false);
  Matrix s = state;
  Matrix x = tokens;
  for (const auto& layer : w.layers) {
    auto [s_cand, s_tr] = state_stream_layer(s, x, layer, w.heads, std::nullopt, opts);
    auto [x_next, x_tr] = image_stream_layer(x, s, layer, w.heads, opts);
    AttentionTrace layer_trace;
    layer_trace.state_layers.push_back(std::move(s_tr));
    layer_trace.image_layers.push_back(std::move(x_tr));

    const Matrix& state_feat = detail::uses_candidate(cfg.plan.source) ? s_cand : s;
    const Matrix& obs_feat = detail::uses_decoded(cfg.plan.source) ? x_next : x;
    RouteOutcome ro = route_features(state_feat, obs_feat, cfg.plan, &layer_trace, &route_rng);
    Gate g = cfg.rule.variant == UpdateVariant::MeMixBeta ? masked_beta(ro.mask.token_mask, compute_beta(layer_trace, beta))
                                                          : ro.mask.token_mask;
    for (std::size_t i = 0; i < g.size(); ++i) out.gate.values[i] = std::max(out.gate.values[i], g.values[i]);
    for (std::size_t p : ro.mask.selected_patches) picked[p] = true;

    out.scratch_bytes = std::max(out.scratch_bytes, s_cand.bytes() + x_next.bytes() + layer_trace.bytes() +
                                                        2 * ro.scores.size() * sizeof(double));
    s = gate_update_convex(s, s_cand, g.span());
    x = std::move(x_next);
    out.scores = std::move(ro.scores);
  }
  for (std::size_t p = 0; p < picked.size(); ++p) {
    if (picked[p]) out.selected.push_back(p);
  }
  out.scratch_bytes += x.bytes() + out.gate.size() * sizeof(double) + picked.size() / 8;
  out.next = std::move(s);
  return out;
}

inline Matrix initial_state(const StreamConfig& cfg) {
  Prng rng(cfg.weights_seed ^ kStateSalt);
  return Matrix::gaussian(cfg.n, cfg.d, rng);
}

// Called once per step with (t, S_{t-1}, S_t, realized gate).
using StepObserver = std::function<void(std::size_t, const Matrix&, const Matrix&, const Gate&)>;

/// Runs the whole stream. Throws ConfigError for an invalid config and
/// DivergenceError (naming the step) when the state stops being finite.
inline RunResult run_stream(const StreamConfig& cfg, const StepObserver& observe = {}) {
  cfg.validate();
  using clock = std::chrono::steady_clock;

  const DecoderWeights weights = init_weights(cfg.weights_seed, cfg.layers, cfg.heads, cfg.d);
  const Matrix s0 = initial_state(cfg);
  const double s0_norm = frobenius_norm(s0);
  TokenStream stream(cfg.source, cfg.m, cfg.d, cfg.stream_seed);
  Prng route_rng(cfg.stream_seed ^ kRoutingSalt);

  Matrix state = s0;
  std::vector<std::uint64_t> counters(cfg.n, 0);
  std::optional<Matrix> key_snapshot;
  std::vector<bool> written_since(cfg.n, false);

  RunResult result;
  RunSummary& sum = result.summary;
  sum.config = cfg;
  const std::size_t drift_stride = std::max<std::size_t>(1, cfg.steps / 100);
  const bool key_recall = cfg.source.kind == SourceKind::KeyRecall;

  const auto run_start = clock::now();
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const auto step_start = clock::now();
    Matrix x = stream.next(t);
    detail::StepOutput out;
    try {
      out = cfg.rule.writeback == Writeback::FullPerLayer
                ? writeback_full_per_layer(cfg, weights, state, x, route_rng)
                : detail::single_writeback_step(cfg, weights, state, x, route_rng);
      if (!all_finite(out.next)) throw NumericError("state is not finite");
    } catch (const NumericError& e) {
      throw DivergenceError(t, e.what());
    }

    StepTrace tr;
    tr.t = t;
    double delta_ss = 0.0;
    for (std::size_t i = 0; i < cfg.n; ++i) {
      const auto a = state.row(i);
      const auto b = out.next.row(i);
      bool changed = false;
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double dv = b[j] - a[j];
        delta_ss += dv * dv;
        changed = changed || a[j] != b[j];
      }
      if (changed) ++counters[i];
    }
    tr.state_delta_norm = std::sqrt(delta_ss);

    if (key_recall) {
      if (t == cfg.source.write_step) {
        key_snapshot = out.next;
        std::fill(written_since.begin(), written_since.end(), false);
      } else if (key_snapshot) {
        for (std::size_t i = 0; i < cfg.n; ++i) written_since[i] = written_since[i] || out.gate.values[i] > 0.0;
      }
      if (key_snapshot && t > cfg.source.probe_step) {
        RetentionPoint rp;
        rp.t = t;
        double restricted = 0.0;
        double full = 0.0;
        for (std::size_t i = 0; i < cfg.n; ++i) {
          double row_ss = 0.0;
          const auto a = out.next.row(i);
          const auto b = key_snapshot->row(i);
          for (std::size_t j = 0; j < a.size(); ++j) row_ss += (a[j] - b[j]) * (a[j] - b[j]);
          full += row_ss;
          if (!written_since[i]) {
            restricted += row_ss;
            ++rp.preserved_tokens;
          }
        }
        rp.restricted_error = std::sqrt(restricted);
        rp.full_error = std::sqrt(full);
        tr.retention_error = rp.restricted_error;
        tr.full_retention_error = rp.full_error;
        sum.retention.push_back(rp);
      }
    }

    if (observe) observe(t, state, out.next, out.gate);
    state = std::move(out.next);

    if (t % drift_stride == 0 || t == cfg.steps) {
      sum.drift.push_back({t, frobenius_norm(subtract(state, s0)) / s0_norm});
    }

    const std::size_t resident = 2 * state.bytes() + s0.bytes() + weights.bytes() + x.bytes() + stream.bytes() +
                                 counters.size() * sizeof(std::uint64_t) + written_since.size() / 8 +
                                 (key_snapshot ? key_snapshot->bytes() : 0) + out.scratch_bytes;
    sum.peak_state_bytes = std::max(sum.peak_state_bytes, resident);

    if (cfg.record_timing) {
      tr.wall_time_ns = static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - step_start).count());
    }
    tr.peak_state_bytes = sum.peak_state_bytes;
    if (cfg.trace_level == TraceLevel::Full) {
      tr.scores = std::move(out.scores);
      tr.selected_patches = std::move(out.selected);
      tr.realized_gate = std::move(out.gate.values);
      tr.counters = counters;
    }
    if (cfg.trace_level != TraceLevel::Off) result.traces.push_back(std::move(tr));
  }

  if (cfg.record_timing) {
    const double secs = std::chrono::duration<double>(clock::now() - run_start).count();
    sum.steps_per_sec = secs > 0.0 ? static_cast<double>(cfg.steps) / secs : 0.0;
  }
  const CoverageStats cs = coverage_stats(counters);
  sum.coverage = cs.coverage;
  sum.update_cv = cs.cv;
  sum.update_entropy = cs.entropy;
  sum.counts = std::move(counters);
  sum.final_drift = sum.drift.back().drift;
  sum.final_state = std::move(state);
  return result;
}

/// Retention curve of a key-recall run.
inline std::vector<RetentionPoint> retention_probe(const StreamConfig& cfg) {
  if (cfg.source.kind != SourceKind::KeyRecall) throw ConfigError("retention_probe: needs a key_recall source");
  return run_stream(cfg).summary.retention;
}

/// One run per k, all sharing the config's seeds, in k order.
inline std::vector<RunSummary> sweep_k(const StreamConfig& base, std::span<const std::size_t> ks) {
  std::vector<RunSummary> rows;
  rows.reserve(ks.size());
  for (std::size_t k : ks) {
    StreamConfig cfg = base;
    cfg.plan.k = k;
    cfg.trace_level = TraceLevel::Off;
    rows.push_back(run_stream(cfg).summary);
  }
  return rows;
}

}  // namespace memix
