#pragma once

// State-update rules expressed as one per-token gate law:
//   S_t[i] = g_i * S-hat[i] + (1 - g_i) * S_{t-1}[i]
// Continuous overwrite is g = 1, the attention-derived learning rate is
// g = beta, sparse routing is a binary mask M, and M (.) beta combines both.
// A gate value is a per-state-token scalar broadcast across the feature dims.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memix/decoder.hpp"
#include "memix/errors.hpp"
#include "memix/tensor.hpp"

namespace memix {

enum class GateKind { Ones, Dense, Binary, MaskedDense };

inline constexpr std::string_view to_string(GateKind k) noexcept {
  switch (k) {
    case GateKind::Ones: return "ones";
    case GateKind::Dense: return "dense";
    case GateKind::Binary: return "binary";
    case GateKind::MaskedDense: return "masked_dense";
  }
  return "?";
}

inline bool in_unit_interval(std::span<const double> g) noexcept {
  return std::all_of(g.begin(), g.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

inline bool is_binary(std::span<const double> g) noexcept {
  return std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

struct Gate {
  Vector values;
  GateKind kind = GateKind::Ones;

  std::size_t size() const noexcept { return values.size(); }
  std::span<const double> span() const noexcept { return values; }

  static Gate ones(std::size_t n) { return {Vector(n, 1.0), GateKind::Ones}; }
  static Gate zeros(std::size_t n) { return {Vector(n, 0.0), GateKind::Binary}; }

  static Gate binary(Vector v) {
    if (!is_binary(v)) throw ContractError("Gate::binary: values must be 0 or 1");
    return {std::move(v), GateKind::Binary};
  }

  static Gate dense(Vector v) {
    if (!in_unit_interval(v)) throw ContractError("Gate::dense: values must lie in [0, 1]");
    return {std::move(v), GateKind::Dense};
  }
};

enum class UpdateVariant {
  Continuous,
  TTT,
  MeMixMask,
  MeMixBeta,
  Freeze,
  // Caller-supplied dense gate. Reserved for rules whose gate is defined
  // outside this library.
  External,
};

enum class Writeback { SingleAfterDecoder, FullPerLayer, None };

struct UpdateRule {
  UpdateVariant variant = UpdateVariant::MeMixMask;
  Writeback writeback = Writeback::SingleAfterDecoder;

  bool uses_mask() const noexcept {
    return variant == UpdateVariant::MeMixMask || variant == UpdateVariant::MeMixBeta;
  }
  bool uses_beta() const noexcept { return variant == UpdateVariant::TTT || variant == UpdateVariant::MeMixBeta; }

  void validate() const {
    if ((variant == UpdateVariant::Freeze) != (writeback == Writeback::None)) {
      throw ConfigError("update rule: freeze and writeback 'none' must be used together");
    }
    if (writeback == Writeback::FullPerLayer && !uses_mask()) {
      throw ConfigError("update rule: per-layer writeback needs a masked rule");
    }
  }

  friend bool operator==(const UpdateRule&, const UpdateRule&) = default;
};

struct BetaOptions {
  bool on_attention = false;  // aggregate post-softmax attention instead of logits
};

/// Per state token i: (1/(L*H*m)) * sum over layers, heads and image tokens of
/// the state-stream logits (or attention weights).
inline Vector attention_aggregate(const AttentionTrace& trace, const BetaOptions& opts = {}) {
  if (trace.empty() || trace.head_count() == 0 || trace.image_tokens() == 0) {
    throw TraceError("attention aggregate: empty trace");
  }
  const std::size_t n = trace.state_layers.front().heads.front().logits.rows();
  const std::size_t m = trace.image_tokens();
  Vector acc(n, 0.0);
  std::size_t terms = 0;
  for (const auto& layer : trace.state_layers) {
    for (const auto& head : layer.heads) {
      const Matrix& src = opts.on_attention ? head.attention : head.logits;
      if (src.rows() != n || src.cols() != m) throw TraceError("attention aggregate: inconsistent head shapes");
      for (std::size_t i = 0; i < n; ++i) {
        for (double v : src.row(i)) acc[i] += v;
      }
      ++terms;
    }
  }
  const double denom = static_cast<double>(terms * m);
  for (double& v : acc) v /= denom;
  return acc;
}

/// Dense learning-rate gate sigmoid(mean logit). Values are clamped into the
/// open interval so saturated logits never yield an exact 0 or 1.
inline Gate compute_beta(const AttentionTrace& trace, const BetaOptions& opts = {}) {
  Vector beta = attention_aggregate(trace, opts);
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  for (double& v : beta) v = std::clamp(sigmoid(v), lo, hi);
  return {std::move(beta), GateKind::Dense};
}

inline Matrix continuous_update(const Matrix& prev, const Matrix& delta) { return add(prev, delta); }

namespace detail {

inline void check_gate(const Matrix& prev, std::span<const double> g, const char* op) {
  if (g.size() != prev.rows()) {
    throw ShapeError(std::string(op) + ": gate length " + std::to_string(g.size()) + " for state " +
                     prev.shape_str());
  }
  if (!in_unit_interval(g)) throw ContractError(std::string(op) + ": gate values must lie in [0, 1]");
}

}  // namespace detail

/// Row i: g_i * S-hat_i + (1 - g_i) * S_prev_i. Rows with g_i == 0 are copied
/// from prev and rows with g_i == 1 from the candidate.
inline Matrix gate_update_convex(const Matrix& prev, const Matrix& candidate, std::span<const double> g) {
  detail::require_same_shape(prev, candidate, "gate_update_convex");
  detail::check_gate(prev, g, "gate_update_convex");
  Matrix out = prev;
  for (std::size_t i = 0; i < prev.rows(); ++i) {
    if (g[i] == 0.0) continue;
    auto o = out.row(i);
    const auto c = candidate.row(i);
    if (g[i] == 1.0) {
      std::copy(c.begin(), c.end(), o.begin());
      continue;
    }
    const auto p = prev.row(i);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] = g[i] * c[j] + (1.0 - g[i]) * p[j];
  }
  detail::require_finite(out, "gate_update_convex");
  return out;
}

/// Row i: S_prev_i + g_i * Delta_i. Rows with g_i == 0 are copied from prev.
inline Matrix gate_update_residual(const Matrix& prev, const Matrix& delta, std::span<const double> g) {
  detail::require_same_shape(prev, delta, "gate_update_residual");
  detail::check_gate(prev, g, "gate_update_residual");
  Matrix out = prev;
  for (std::size_t i = 0; i < prev.rows(); ++i) {
    if (g[i] == 0.0) continue;
    auto o = out.row(i);
    const auto d = delta.row(i);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] += g[i] * d[j];
  }
  detail::require_finite(out, "gate_update_residual");
  return out;
}

/// Residual update scaled by the beta derived from the same (ungated) trace.
inline Matrix ttt_update(const Matrix& prev, const AttentionTrace& trace, const BetaOptions& opts = {}) {
  const Matrix delta = trace.state_residual_sum();
  if (!delta.same_shape(prev)) {
    throw TraceError("ttt_update: trace residual " + delta.shape_str() + " vs state " + prev.shape_str());
  }
  const Gate beta = compute_beta(trace, opts);
  return gate_update_residual(prev, delta, beta.span());
}

/// Masked rows take the candidate; the rest are copied from prev.
inline Matrix memix_update(const Matrix& prev, const Matrix& candidate, const Gate& mask) {
  if (!is_binary(mask.values)) throw ContractError("memix_update: mask must be binary");
  return gate_update_convex(prev, candidate, mask.span());
}

inline Gate masked_beta(const Gate& mask, const Gate& beta) {
  if (!is_binary(mask.values)) throw ContractError("masked_beta: mask must be binary");
  if (mask.size() != beta.size()) throw ShapeError("masked_beta: mask and beta lengths differ");
  Gate g{Vector(mask.size()), GateKind::MaskedDense};
  for (std::size_t i = 0; i < mask.size(); ++i) g.values[i] = mask.values[i] == 0.0 ? 0.0 : beta.values[i];
  return g;
}

inline Matrix memix_beta_update(const Matrix& prev, const Matrix& candidate, const Gate& mask, const Gate& beta) {
  return gate_update_convex(prev, candidate, masked_beta(mask, beta).span());
}

struct GateOutcome {
  Matrix state;
  Gate gate;
};

struct GateInputs {
  const AttentionTrace* trace = nullptr;  // needed by beta rules
  const Gate* mask = nullptr;             // needed by masked rules
  const Gate* external = nullptr;         // needed by UpdateVariant::External
  BetaOptions beta{};
};

inline Gate realize_gate(std::size_t n, UpdateVariant variant, const GateInputs& in) {
  auto need_trace = [&]() -> const AttentionTrace& {
    if (in.trace == nullptr) throw ContractError("unified gate: beta rule without an attention trace");
    return *in.trace;
  };
  auto need_mask = [&]() -> const Gate& {
    if (in.mask == nullptr) throw ContractError("unified gate: masked rule without a routing mask");
    if (!is_binary(in.mask->values)) throw ContractError("unified gate: routing mask must be binary");
    return *in.mask;
  };
  switch (variant) {
    case UpdateVariant::Continuous: return Gate::ones(n);
    case UpdateVariant::Freeze: return Gate::zeros(n);
    case UpdateVariant::TTT: return compute_beta(need_trace(), in.beta);
    case UpdateVariant::MeMixMask: return need_mask();
    case UpdateVariant::MeMixBeta: return masked_beta(need_mask(), compute_beta(need_trace(), in.beta));
    case UpdateVariant::External:
      if (in.external == nullptr) throw ContractError("unified gate: external rule without a gate");
      if (!in_unit_interval(in.external->values)) throw ContractError("unified gate: external gate outside [0, 1]");
      return *in.external;
  }
  throw ContractError("unified gate: unknown variant");
}

/// Realizes the variant's gate and applies the convex law with it.
inline GateOutcome unified_gate(const Matrix& prev, const Matrix& candidate, UpdateVariant variant,
                                const GateInputs& in) {
  Gate g = realize_gate(prev.rows(), variant, in);
  if (g.size() != prev.rows()) throw ShapeError("unified gate: gate length does not match state rows");
  Matrix next = gate_update_convex(prev, candidate, g.span());
  return {std::move(next), std::move(g)};
}

}  // namespace memix
