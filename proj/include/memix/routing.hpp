#pragma once

// Sparse write routing: score state tokens against observation features,
// average scores within contiguous patches, and pick which patches to write.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memix/decoder.hpp"
#include "memix/errors.hpp"
#include "memix/gates.hpp"
#include "memix/prng.hpp"
#include "memix/tensor.hpp"

namespace memix {

enum class ScoreFn { Dot, Cosine, Attention };

// Which (state side, observation side) pair is scored.
enum class FeatureSource {
  PrevStateRaw,      // S_{t-1} vs X_t
  CandidateDecoded,  // S-hat_t vs Y_t
  CandidateRaw,      // S-hat_t vs X_t
  PrevStateDecoded,  // S_{t-1} vs Y_t
};

enum class SelectionPolicy { BottomK, TopK, RandomK };

class PatchPartition {
 public:
  PatchPartition(std::size_t tokens, std::size_t patch_size) : tokens_(tokens), patch_size_(patch_size) {
    if (patch_size == 0 || tokens == 0 || tokens % patch_size != 0) {
      throw ConfigError("patch partition: patch size " + std::to_string(patch_size) + " must divide " +
                        std::to_string(tokens) + " tokens");
    }
  }

  std::size_t tokens() const noexcept { return tokens_; }
  std::size_t patch_size() const noexcept { return patch_size_; }
  std::size_t patch_count() const noexcept { return tokens_ / patch_size_; }
  std::size_t first_token(std::size_t patch) const noexcept { return patch * patch_size_; }

 private:
  std::size_t tokens_;
  std::size_t patch_size_;
};

struct RoutingPlan {
  ScoreFn score = ScoreFn::Dot;
  FeatureSource source = FeatureSource::CandidateRaw;
  SelectionPolicy policy = SelectionPolicy::BottomK;
  std::size_t k = 0;  // tokens to write per step
  std::size_t patch_size = 1;

  /// Dot score on (S-hat, X), Bottom-k, token-level patches, and k = 708 of
  /// 768 tokens rescaled to n.
  static RoutingPlan default_for(std::size_t n) {
    RoutingPlan p;
    p.k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * 708.0 / 768.0));
    return p;
  }

  PatchPartition partition(std::size_t n) const { return {n, patch_size}; }

  void validate(std::size_t n) const {
    const PatchPartition part = partition(n);
    if (k > n) throw ConfigError("routing plan: k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " tokens");
    if (k % part.patch_size() != 0) {
      throw ConfigError("routing plan: k=" + std::to_string(k) + " is not a multiple of patch size " +
                        std::to_string(part.patch_size()));
    }
  }

  bool token_aligned() const noexcept { return score != ScoreFn::Attention; }

  friend bool operator==(const RoutingPlan&, const RoutingPlan&) = default;
};

struct RoutingMask {
  std::vector<std::size_t> selected_patches;  // ascending
  Gate token_mask;

  std::size_t selected_tokens() const noexcept {
    return static_cast<std::size_t>(std::count(token_mask.values.begin(), token_mask.values.end(), 1.0));
  }
};

/// Per state-token routing score. Dot and Cosine pair row i of both inputs;
/// Attention uses the mean state-stream logit of `trace` for token i.
inline Vector token_scores(const Matrix& state_feat, const Matrix& obs_feat, ScoreFn fn,
                           const AttentionTrace* trace = nullptr) {
  switch (fn) {
    case ScoreFn::Dot: return dot_rows(state_feat, obs_feat);
    case ScoreFn::Cosine: {
      Vector r = dot_rows(l2_normalize_rows(state_feat), l2_normalize_rows(obs_feat));
      for (double& v : r) v = std::clamp(v, -1.0, 1.0);
      return r;
    }
    case ScoreFn::Attention:
      if (trace == nullptr) throw ContractError("token_scores: attention score needs a decoder trace");
      return attention_aggregate(*trace);
  }
  throw ContractError("token_scores: unknown score function");
}

inline Vector patch_scores(std::span<const double> token_score, const PatchPartition& part) {
  if (token_score.size() != part.tokens()) {
    throw ShapeError("patch_scores: " + std::to_string(token_score.size()) + " scores for " +
                     std::to_string(part.tokens()) + " tokens");
  }
  const std::size_t s = part.patch_size();
  Vector out(part.patch_count());
  for (std::size_t p = 0; p < out.size(); ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s; ++i) acc += token_score[part.first_token(p) + i];
    out[p] = acc / static_cast<double>(s);
  }
  return out;
}

inline RoutingMask mask_from_patches(std::vector<std::size_t> patches, const PatchPartition& part) {
  std::sort(patches.begin(), patches.end());
  Vector m(part.tokens(), 0.0);
  for (std::size_t p : patches) {
    std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(part.first_token(p)), part.patch_size(), 1.0);
  }
  return {std::move(patches), Gate{std::move(m), GateKind::Binary}};
}

/// Chooses k/s patches. Bottom-k and Top-k order by (score, patch index) so
/// ties go to the lower index; Random-k takes a Fisher-Yates prefix.
inline RoutingMask select(std::span<const double> patch_score, SelectionPolicy policy, std::size_t k,
                          const PatchPartition& part, Prng* rng = nullptr) {
  if (patch_score.size() != part.patch_count()) throw ShapeError("select: patch score count mismatch");
  if (k % part.patch_size() != 0) {
    throw ConfigError("select: k=" + std::to_string(k) + " is not a multiple of patch size " +
                      std::to_string(part.patch_size()));
  }
  const std::size_t want = k / part.patch_size();
  const std::size_t p = part.patch_count();
  if (want > p) throw ConfigError("select: k=" + std::to_string(k) + " exceeds the partition");

  std::vector<std::size_t> idx(p);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  switch (policy) {
    case SelectionPolicy::BottomK:
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(want), idx.end(),
                        [&](std::size_t a, std::size_t b) {
                          return patch_score[a] < patch_score[b] || (patch_score[a] == patch_score[b] && a < b);
                        });
      break;
    case SelectionPolicy::TopK:
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(want), idx.end(),
                        [&](std::size_t a, std::size_t b) {
                          return patch_score[a] > patch_score[b] || (patch_score[a] == patch_score[b] && a < b);
                        });
      break;
    case SelectionPolicy::RandomK:
      if (rng == nullptr) throw ContractError("select: random-k needs a prng");
      for (std::size_t i = 0; i < want; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng->uniform_index(p - i));
        std::swap(idx[i], idx[j]);
      }
      break;
  }
  idx.resize(want);
  return mask_from_patches(std::move(idx), part);
}

struct RouteOutcome {
  RoutingMask mask;
  Vector scores;  // per state token
};

/// Scores already-chosen feature matrices and selects. The per-step and
/// per-layer routers both end here.
inline RouteOutcome route_features(const Matrix& state_feat, const Matrix& obs_feat, const RoutingPlan& plan,
                                   const AttentionTrace* trace, Prng* rng) {
  const PatchPartition part = plan.partition(state_feat.rows());
  plan.validate(state_feat.rows());
  if (plan.token_aligned() && obs_feat.rows() != state_feat.rows()) {
    throw ConfigError("route: row-wise scores need as many observation tokens (" + std::to_string(obs_feat.rows()) +
                      ") as state tokens (" + std::to_string(state_feat.rows()) + ")");
  }
  Vector scores = token_scores(state_feat, obs_feat, plan.score, trace);
  const Vector ps = patch_scores(scores, part);
  return {select(ps, plan.policy, plan.k, part, rng), std::move(scores)};
}

/// Resolves the plan's feature source against one decoder step and routes.
inline RouteOutcome route(const DecodeResult& step, const Matrix& prev_state, const Matrix& tokens,
                          const RoutingPlan& plan, Prng* rng) {
  const bool candidate_side = plan.source == FeatureSource::CandidateRaw || plan.source == FeatureSource::CandidateDecoded;
  const bool decoded_side = plan.source == FeatureSource::CandidateDecoded || plan.source == FeatureSource::PrevStateDecoded;
  const Matrix& state_feat = candidate_side ? step.candidate : prev_state;
  const Matrix& obs_feat = decoded_side ? step.decoded : tokens;
  return route_features(state_feat, obs_feat, plan, &step.trace, rng);
}

}  // namespace memix
