#pragma once

// Dual-stream cross-attention decoder.
//
// Layer l runs both streams synchronously on the layer l-1 outputs:
//   state: S_l = S_{l-1} + concat_h softmax(Q_S K_X^T * tau) V_X
//   image: X_l = X_{l-1} + concat_h softmax(Q_X K_S^T * tau) V_S
// with Q_S = S_{l-1} Wq, K_X = X_{l-1} Wk, V_X = X_{l-1} Wv (state-stream
// weights) and the mirrored assignment for the image stream. tau is
// 1/sqrt(d/H) unless raw logits are requested. Heads own contiguous column
// blocks of width d/H and are concatenated in ascending order.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "memix/errors.hpp"
#include "memix/prng.hpp"
#include "memix/tensor.hpp"

namespace memix {

struct StreamWeights {
  Matrix query;
  Matrix key;
  Matrix value;
};

struct LayerWeights {
  StreamWeights state;  // queries from S, keys/values from X
  StreamWeights image;  // queries from X, keys/values from S
};

struct DecoderWeights {
  std::size_t heads = 1;
  std::size_t width = 0;
  std::vector<LayerWeights> layers;

  std::size_t layer_count() const noexcept { return layers.size(); }
  std::size_t head_width() const noexcept { return width / heads; }

  std::size_t bytes() const noexcept {
    std::size_t total = 0;
    for (const auto& l : layers) {
      for (const auto* s : {&l.state, &l.image}) total += s->query.bytes() + s->key.bytes() + s->value.bytes();
    }
    return total;
  }
};

/// Seeded init: every entry uniform in [-1/sqrt(d), 1/sqrt(d)), drawn from a
/// single Prng(seed) in layer-major order, state stream before image stream,
/// Q then K then V, each matrix row-major.
inline DecoderWeights init_weights(std::uint64_t seed, std::size_t layers, std::size_t heads, std::size_t width) {
  if (layers == 0) throw ConfigError("init_weights: layer count must be >= 1");
  if (heads == 0 || width == 0 || width % heads != 0) {
    throw ConfigError("init_weights: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  Prng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  DecoderWeights w;
  w.heads = heads;
  w.width = width;
  w.layers.reserve(layers);
  auto draw = [&] { return Matrix::uniform(width, width, -bound, bound, rng); };
  for (std::size_t l = 0; l < layers; ++l) {
    LayerWeights lw;
    for (auto* s : {&lw.state, &lw.image}) {
      s->query = draw();
      s->key = draw();
      s->value = draw();
    }
    w.layers.push_back(std::move(lw));
  }
  return w;
}

struct DecodeOptions {
  bool raw_logits = false;  // drop the 1/sqrt(d/H) temperature
};

struct HeadTrace {
  Matrix logits;     // softmax input, queries x keys
  Matrix attention;  // row-stochastic
};

struct StreamLayerTrace {
  std::vector<HeadTrace> heads;
  Matrix residual;  // concat_h A_h V_h before any gate

  std::size_t bytes() const noexcept {
    std::size_t total = residual.bytes();
    for (const auto& h : heads) total += h.logits.bytes() + h.attention.bytes();
    return total;
  }
};

struct AttentionTrace {
  std::vector<StreamLayerTrace> state_layers;
  std::vector<StreamLayerTrace> image_layers;

  bool empty() const noexcept { return state_layers.empty(); }
  std::size_t layer_count() const noexcept { return state_layers.size(); }
  std::size_t head_count() const noexcept { return empty() ? 0 : state_layers.front().heads.size(); }
  std::size_t image_tokens() const noexcept {
    return empty() || state_layers.front().heads.empty() ? 0 : state_layers.front().heads.front().logits.cols();
  }

  /// Sum over layers of the state-stream residuals (the ungated Delta S).
  Matrix state_residual_sum() const {
    if (empty()) throw TraceError("state_residual_sum: empty trace");
    Matrix sum(state_layers.front().residual.rows(), state_layers.front().residual.cols());
    for (const auto& l : state_layers) sum = add(sum, l.residual);
    return sum;
  }

  Matrix image_residual_sum() const {
    if (image_layers.empty()) throw TraceError("image_residual_sum: empty trace");
    Matrix sum(image_layers.front().residual.rows(), image_layers.front().residual.cols());
    for (const auto& l : image_layers) sum = add(sum, l.residual);
    return sum;
  }

  std::size_t bytes() const noexcept {
    std::size_t total = 0;
    for (const auto& l : state_layers) total += l.bytes();
    for (const auto& l : image_layers) total += l.bytes();
    return total;
  }
};

struct DecodeResult {
  Matrix candidate;  // S-hat
  Matrix decoded;    // Y
  AttentionTrace trace;

  std::size_t bytes() const noexcept { return candidate.bytes() + decoded.bytes() + trace.bytes(); }
};

namespace detail {

inline StreamLayerTrace cross_attend(const Matrix& queries_from, const Matrix& keys_from, const StreamWeights& w,
                                     std::size_t heads, const DecodeOptions& opts) {
  const std::size_t width = w.query.rows();
  if (queries_from.cols() != width || keys_from.cols() != width || width % heads != 0) {
    throw ShapeError("cross_attend: inputs " + queries_from.shape_str() + " / " + keys_from.shape_str() +
                     " for width " + std::to_string(width));
  }
  const std::size_t hw = width / heads;
  const double tau = opts.raw_logits ? 1.0 : 1.0 / std::sqrt(static_cast<double>(hw));
  const Matrix q = matmul(queries_from, w.query);
  const Matrix k = matmul(keys_from, w.key);
  const Matrix v = matmul(keys_from, w.value);

  StreamLayerTrace out;
  out.residual = Matrix(queries_from.rows(), width);
  out.heads.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    HeadTrace ht;
    ht.logits = matmul_transposed(column_block(q, h * hw, hw), column_block(k, h * hw, hw));
    if (tau != 1.0) {
      for (double& x : ht.logits.data()) x *= tau;
    }
    ht.attention = softmax_rows(ht.logits);
    set_column_block(out.residual, h * hw, matmul(ht.attention, column_block(v, h * hw, hw)));
    out.heads.push_back(std::move(ht));
  }
  return out;
}

// prev + residual, with row i scaled by gate[i]. Rows with gate 0 are copied.
inline Matrix apply_residual(const Matrix& prev, const Matrix& residual, std::optional<std::span<const double>> gate) {
  require_same_shape(prev, residual, "apply_residual");
  if (gate && gate->size() != prev.rows()) {
    throw ShapeError("apply_residual: gate length " + std::to_string(gate->size()) + " for " + prev.shape_str());
  }
  Matrix out = prev;
  for (std::size_t i = 0; i < prev.rows(); ++i) {
    const double g = gate ? (*gate)[i] : 1.0;
    if (g == 0.0) continue;
    auto o = out.row(i);
    const auto r = residual.row(i);
    if (gate) {
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += g * r[j];
    } else {
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += r[j];
    }
  }
  require_finite(out, "apply_residual");
  return out;
}

}  // namespace detail

/// One state-stream layer. With a gate, the residual of state token i is
/// scaled by gate[i] before the residual add.
inline std::pair<Matrix, StreamLayerTrace> state_stream_layer(const Matrix& state, const Matrix& tokens,
                                                              const LayerWeights& w, std::size_t heads,
                                                              std::optional<std::span<const double>> gate = {},
                                                              const DecodeOptions& opts = {}) {
  StreamLayerTrace tr = detail::cross_attend(state, tokens, w.state, heads, opts);
  Matrix next = detail::apply_residual(state, tr.residual, gate);
  return {std::move(next), std::move(tr)};
}

inline std::pair<Matrix, StreamLayerTrace> image_stream_layer(const Matrix& tokens, const Matrix& state,
                                                              const LayerWeights& w, std::size_t heads,
                                                              const DecodeOptions& opts = {}) {
  StreamLayerTrace tr = detail::cross_attend(tokens, state, w.image, heads, opts);
  Matrix next = detail::apply_residual(tokens, tr.residual, std::nullopt);
  return {std::move(next), std::move(tr)};
}

struct Ungated {};

// Gate applied to the residual inside every layer; attention in later layers
// sees the gated state.
struct GatedInside {
  Vector gate;
};

// Reuse the attention and values of a previously traced ungated pass and
// apply the gate once to their layer sum: S-hat = S + G (.) sum_l A_l V_l.
struct FrozenReplay {
  std::reference_wrapper<const AttentionTrace> trace;
  Vector gate;
};

using GateMode = std::variant<Ungated, GatedInside, FrozenReplay>;

namespace detail {

inline void check_replay_trace(const AttentionTrace& tr, const Matrix& state, const Matrix& tokens,
                               const DecoderWeights& w) {
  if (tr.layer_count() != w.layer_count() || tr.image_layers.size() != w.layer_count()) {
    throw TraceError("frozen replay: trace has " + std::to_string(tr.layer_count()) + " layers, weights have " +
                     std::to_string(w.layer_count()));
  }
  for (std::size_t l = 0; l < tr.layer_count(); ++l) {
    if (!tr.state_layers[l].residual.same_shape(state) || !tr.image_layers[l].residual.same_shape(tokens) ||
        tr.state_layers[l].heads.size() != w.heads) {
      throw TraceError("frozen replay: layer " + std::to_string(l) + " trace shapes do not match the inputs");
    }
  }
}

}  // namespace detail

inline DecodeResult decode(const Matrix& state, const Matrix& tokens, const DecoderWeights& w,
                           const GateMode& mode = Ungated{}, const DecodeOptions& opts = {}) {
  if (state.cols() != w.width || tokens.cols() != w.width) {
    throw ShapeError("decode: state " + state.shape_str() + ", tokens " + tokens.shape_str() + " for width " +
                     std::to_string(w.width));
  }
  if (state.rows() == 0 || tokens.rows() == 0) throw ShapeError("decode: empty state or token matrix");
  if (w.layers.empty()) throw ConfigError("decode: weights have no layers");

  if (const auto* replay = std::get_if<FrozenReplay>(&mode)) {
    const AttentionTrace& tr = replay->trace.get();
    detail::check_replay_trace(tr, state, tokens, w);
    DecodeResult out;
    out.candidate = detail::apply_residual(state, tr.state_residual_sum(), std::span<const double>(replay->gate));
    out.decoded = detail::apply_residual(tokens, tr.image_residual_sum(), std::nullopt);
    out.trace = tr;
    return out;
  }

  std::optional<std::span<const double>> gate;
  if (const auto* inside = std::get_if<GatedInside>(&mode)) gate = std::span<const double>(inside->gate);

  DecodeResult out;
  out.trace.state_layers.reserve(w.layer_count());
  out.trace.image_layers.reserve(w.layer_count());
  Matrix s = state;
  Matrix x = tokens;
  for (const auto& layer : w.layers) {
    auto [s_next, s_tr] = state_stream_layer(s, x, layer, w.heads, gate, opts);
    auto [x_next, x_tr] = image_stream_layer(x, s, layer, w.heads, opts);
    s = std::move(s_next);
    x = std::move(x_next);
    out.trace.state_layers.push_back(std::move(s_tr));
    out.trace.image_layers.push_back(std::move(x_tr));
  }
  out.candidate = std::move(s);
  out.decoded = std::move(x);
  return out;
}

}  // namespace memix
