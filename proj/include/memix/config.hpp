#pragma once

// Strict JSON experiment configs. Every key is required except `plan` (which
// falls back to RoutingPlan::default_for(n)), `out` and `comparison`.
// Unknown keys are rejected at every level.
//
//   {
//     "label": "default",
//     "n": 768, "d": 32, "m": 768, "layers": 2, "heads": 2, "steps": 100,
//     "weights_seed": 42, "stream_seed": 7,
//     "rule": "memix_mask",              continuous|ttt|memix_mask|memix_beta|freeze
//     "writeback": "single",             single|full|none
//     "gate_placement": "after_decoder", after_decoder|frozen_replay|inside_layers
//     "plan": {"score": "dot", "feature_source": "candidate_raw",
//              "policy": "bottom_k", "k": 708, "patch_size": 1},
//     "source": {"kind": "gaussian", "scale": 1.0},
//     "trace": "off",                    off|summary|full
//     "raw_logits": false, "beta_on_attention": false, "record_timing": false,
//     "out": "runs/default",
//     "comparison": [{"label": "top_k", "plan": {...}}, ...]
//   }
//
// score: dot|cosine|attention. feature_source: prev_raw|candidate_decoded|
// candidate_raw|prev_decoded. policy: bottom_k|top_k|random_k.
// source kinds: gaussian {scale}, revisit {dictionary_size, schedule, noise},
// key_recall {write_step, probe_step, scale}.
// A comparison entry needs a label and may override rule, writeback,
// gate_placement and plan.

#include <array>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "memix/errors.hpp"
#include "memix/gates.hpp"
#include "memix/harness.hpp"
#include "memix/routing.hpp"

namespace memix {

namespace names {

inline constexpr std::array kUpdateVariant{
    std::pair{UpdateVariant::Continuous, std::string_view("continuous")},
    std::pair{UpdateVariant::TTT, std::string_view("ttt")},
    std::pair{UpdateVariant::MeMixMask, std::string_view("memix_mask")},
    std::pair{UpdateVariant::MeMixBeta, std::string_view("memix_beta")},
    std::pair{UpdateVariant::Freeze, std::string_view("freeze")},
};
inline constexpr std::array kWriteback{
    std::pair{Writeback::SingleAfterDecoder, std::string_view("single")},
    std::pair{Writeback::FullPerLayer, std::string_view("full")},
    std::pair{Writeback::None, std::string_view("none")},
};
inline constexpr std::array kPlacement{
    std::pair{GatePlacement::AfterDecoder, std::string_view("after_decoder")},
    std::pair{GatePlacement::FrozenReplay, std::string_view("frozen_replay")},
    std::pair{GatePlacement::InsideLayers, std::string_view("inside_layers")},
};
inline constexpr std::array kScore{
    std::pair{ScoreFn::Dot, std::string_view("dot")},
    std::pair{ScoreFn::Cosine, std::string_view("cosine")},
    std::pair{ScoreFn::Attention, std::string_view("attention")},
};
inline constexpr std::array kSource{
    std::pair{FeatureSource::PrevStateRaw, std::string_view("prev_raw")},
    std::pair{FeatureSource::CandidateDecoded, std::string_view("candidate_decoded")},
    std::pair{FeatureSource::CandidateRaw, std::string_view("candidate_raw")},
    std::pair{FeatureSource::PrevStateDecoded, std::string_view("prev_decoded")},
};
inline constexpr std::array kPolicy{
    std::pair{SelectionPolicy::BottomK, std::string_view("bottom_k")},
    std::pair{SelectionPolicy::TopK, std::string_view("top_k")},
    std::pair{SelectionPolicy::RandomK, std::string_view("random_k")},
};
inline constexpr std::array kTrace{
    std::pair{TraceLevel::Off, std::string_view("off")},
    std::pair{TraceLevel::Summary, std::string_view("summary")},
    std::pair{TraceLevel::Full, std::string_view("full")},
};
inline constexpr std::array kSourceKind{
    std::pair{SourceKind::Gaussian, std::string_view("gaussian")},
    std::pair{SourceKind::Revisit, std::string_view("revisit")},
    std::pair{SourceKind::KeyRecall, std::string_view("key_recall")},
};

template <typename E, typename T>
std::string_view name_of(E value, const T& table) {
  for (const auto& [e, s] : table) {
    if (e == value) return s;
  }
  return "?";
}

template <typename E, typename T>
std::optional<E> parse(std::string_view s, const T& table) {
  for (const auto& [e, name] : table) {
    if (name == s) return e;
  }
  return std::nullopt;
}

template <typename T>
std::string choices(const T& table) {
  std::string out;
  for (const auto& [e, s] : table) {
    if (!out.empty()) out += "|";
    out += s;
  }
  return out;
}

}  // namespace names

inline std::string_view to_string(UpdateVariant v) { return names::name_of(v, names::kUpdateVariant); }
inline std::string_view to_string(Writeback v) { return names::name_of(v, names::kWriteback); }
inline std::string_view to_string(GatePlacement v) { return names::name_of(v, names::kPlacement); }
inline std::string_view to_string(ScoreFn v) { return names::name_of(v, names::kScore); }
inline std::string_view to_string(FeatureSource v) { return names::name_of(v, names::kSource); }
inline std::string_view to_string(SelectionPolicy v) { return names::name_of(v, names::kPolicy); }
inline std::string_view to_string(TraceLevel v) { return names::name_of(v, names::kTrace); }
inline std::string_view to_string(SourceKind v) { return names::name_of(v, names::kSourceKind); }

inline std::optional<TraceLevel> parse_trace_level(std::string_view s) { return names::parse<TraceLevel>(s, names::kTrace); }

struct ComparisonVariant {
  std::string label;
  std::optional<UpdateVariant> rule;
  std::optional<Writeback> writeback;
  std::optional<GatePlacement> placement;
  std::optional<RoutingPlan> plan;

  StreamConfig apply(StreamConfig base) const {
    if (rule) base.rule.variant = *rule;
    if (writeback) base.rule.writeback = *writeback;
    if (placement) base.placement = *placement;
    if (plan) base.plan = *plan;
    return base;
  }

  friend bool operator==(const ComparisonVariant&, const ComparisonVariant&) = default;
};

struct ExperimentConfig {
  std::string label;
  StreamConfig stream;
  std::optional<std::string> out;
  std::vector<ComparisonVariant> comparison;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

using json = nlohmann::json;

class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw ConfigError(where + ": " + what);
  }

  std::string at(std::string_view key) const { return path_ + "." + std::string(key); }

  bool has(std::string_view key) const { return obj_.contains(std::string(key)); }

  const json& raw(std::string_view key) const {
    const auto it = obj_.find(std::string(key));
    if (it == obj_.end()) fail(at(key), "missing required key");
    return *it;
  }

  std::uint64_t u64(std::string_view key) const {
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      fail(at(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::size_t count(std::string_view key) const { return static_cast<std::size_t>(u64(key)); }

  double real(std::string_view key) const {
    const json& v = raw(key);
    if (!v.is_number()) fail(at(key), "expected a number");
    return v.get<double>();
  }

  bool boolean(std::string_view key) const {
    const json& v = raw(key);
    if (!v.is_boolean()) fail(at(key), "expected true or false");
    return v.get<bool>();
  }

  std::string str(std::string_view key) const {
    const json& v = raw(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    return v.get<std::string>();
  }

  template <typename E, typename T>
  E enumerated(std::string_view key, const T& table) const {
    const std::string s = str(key);
    if (auto e = names::parse<E>(s, table)) return *e;
    fail(at(key), "unknown value '" + s + "' (expected " + names::choices(table) + ")");
  }

  void only(std::initializer_list<std::string_view> allowed) const {
    for (const auto& [k, v] : obj_.items()) {
      bool ok = false;
      for (auto a : allowed) ok = ok || a == k;
      if (!ok) fail(at(k), "unknown key");
    }
  }

  const std::string& path() const { return path_; }

 private:
  const json& obj_;
  std::string path_;
};

inline RoutingPlan parse_plan(const json& j, const std::string& path) {
  Reader r(j, path);
  r.only({"score", "feature_source", "policy", "k", "patch_size"});
  RoutingPlan p;
  p.score = r.enumerated<ScoreFn>("score", names::kScore);
  p.source = r.enumerated<FeatureSource>("feature_source", names::kSource);
  p.policy = r.enumerated<SelectionPolicy>("policy", names::kPolicy);
  p.k = r.count("k");
  p.patch_size = r.count("patch_size");
  return p;
}

inline StreamSource parse_source(const json& j, const std::string& path) {
  Reader r(j, path);
  StreamSource s;
  s.kind = r.enumerated<SourceKind>("kind", names::kSourceKind);
  switch (s.kind) {
    case SourceKind::Gaussian:
      r.only({"kind", "scale"});
      s.scale = r.real("scale");
      break;
    case SourceKind::Revisit: {
      r.only({"kind", "dictionary_size", "schedule", "noise"});
      s.dictionary_size = r.count("dictionary_size");
      s.noise = r.real("noise");
      const json& sched = r.raw("schedule");
      if (!sched.is_array()) Reader::fail(r.at("schedule"), "expected an array of indices");
      for (const auto& v : sched) {
        if (!v.is_number_unsigned()) Reader::fail(r.at("schedule"), "expected non-negative integers");
        s.schedule.push_back(v.get<std::size_t>());
      }
      break;
    }
    case SourceKind::KeyRecall:
      r.only({"kind", "write_step", "probe_step", "scale"});
      s.write_step = r.count("write_step");
      s.probe_step = r.count("probe_step");
      s.scale = r.real("scale");
      break;
  }
  return s;
}

inline json plan_to_json(const RoutingPlan& p) {
  return {{"score", to_string(p.score)},
          {"feature_source", to_string(p.source)},
          {"policy", to_string(p.policy)},
          {"k", p.k},
          {"patch_size", p.patch_size}};
}

inline json source_to_json(const StreamSource& s) {
  json j{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case SourceKind::Gaussian: j["scale"] = s.scale; break;
    case SourceKind::Revisit:
      j["dictionary_size"] = s.dictionary_size;
      j["schedule"] = s.schedule;
      j["noise"] = s.noise;
      break;
    case SourceKind::KeyRecall:
      j["write_step"] = s.write_step;
      j["probe_step"] = s.probe_step;
      j["scale"] = s.scale;
      break;
  }
  return j;
}

}  // namespace detail

/// Parses and validates an experiment config. Errors name the offending field.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  using detail::Reader;
  Reader r(j, "config");
  r.only({"label", "n", "d", "m", "layers", "heads", "steps", "weights_seed", "stream_seed", "rule", "writeback",
          "gate_placement", "plan", "source", "trace", "raw_logits", "beta_on_attention", "record_timing", "out",
          "comparison"});
  ExperimentConfig cfg;
  cfg.label = r.str("label");
  StreamConfig& s = cfg.stream;
  s.n = r.count("n");
  s.d = r.count("d");
  s.m = r.count("m");
  s.layers = r.count("layers");
  s.heads = r.count("heads");
  s.steps = r.count("steps");
  s.weights_seed = r.u64("weights_seed");
  s.stream_seed = r.u64("stream_seed");
  s.rule.variant = r.enumerated<UpdateVariant>("rule", names::kUpdateVariant);
  s.rule.writeback = r.enumerated<Writeback>("writeback", names::kWriteback);
  s.placement = r.enumerated<GatePlacement>("gate_placement", names::kPlacement);
  s.plan = r.has("plan") ? detail::parse_plan(r.raw("plan"), r.at("plan")) : RoutingPlan::default_for(s.n);
  s.source = detail::parse_source(r.raw("source"), r.at("source"));
  s.trace_level = r.enumerated<TraceLevel>("trace", names::kTrace);
  s.raw_logits = r.boolean("raw_logits");
  s.beta_on_attention = r.boolean("beta_on_attention");
  s.record_timing = r.boolean("record_timing");
  if (r.has("out")) cfg.out = r.str("out");

  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (r.has("comparison")) {
    const auto& arr = r.raw("comparison");
    if (!arr.is_array()) Reader::fail(r.at("comparison"), "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string path = r.at("comparison") + "[" + std::to_string(i) + "]";
      Reader v(arr[i], path);
      v.only({"label", "rule", "writeback", "gate_placement", "plan"});
      ComparisonVariant cv;
      cv.label = v.str("label");
      if (v.has("rule")) cv.rule = v.enumerated<UpdateVariant>("rule", names::kUpdateVariant);
      if (v.has("writeback")) cv.writeback = v.enumerated<Writeback>("writeback", names::kWriteback);
      if (v.has("gate_placement")) cv.placement = v.enumerated<GatePlacement>("gate_placement", names::kPlacement);
      if (v.has("plan")) cv.plan = detail::parse_plan(v.raw("plan"), v.at("plan"));
      try {
        cv.apply(s).validate();
      } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
      }
      cfg.comparison.push_back(std::move(cv));
    }
  }
  return cfg;
}

inline ExperimentConfig parse_experiment_config_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_experiment_config(j);
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config_text(ss.str());
}

/// Inverse of parse_experiment_config. The routing plan is always written
/// out explicitly.
inline nlohmann::json to_json(const ExperimentConfig& cfg) {
  const StreamConfig& s = cfg.stream;
  nlohmann::json j{{"label", cfg.label},
                   {"n", s.n},
                   {"d", s.d},
                   {"m", s.m},
                   {"layers", s.layers},
                   {"heads", s.heads},
                   {"steps", s.steps},
                   {"weights_seed", s.weights_seed},
                   {"stream_seed", s.stream_seed},
                   {"rule", to_string(s.rule.variant)},
                   {"writeback", to_string(s.rule.writeback)},
                   {"gate_placement", to_string(s.placement)},
                   {"plan", detail::plan_to_json(s.plan)},
                   {"source", detail::source_to_json(s.source)},
                   {"trace", to_string(s.trace_level)},
                   {"raw_logits", s.raw_logits},
                   {"beta_on_attention", s.beta_on_attention},
                   {"record_timing", s.record_timing}};
  if (cfg.out) j["out"] = *cfg.out;
  if (!cfg.comparison.empty()) {
    auto arr = nlohmann::json::array();
    for (const auto& v : cfg.comparison) {
      nlohmann::json e{{"label", v.label}};
      if (v.rule) e["rule"] = to_string(*v.rule);
      if (v.writeback) e["writeback"] = to_string(*v.writeback);
      if (v.placement) e["gate_placement"] = to_string(*v.placement);
      if (v.plan) e["plan"] = detail::plan_to_json(*v.plan);
      arr.push_back(std::move(e));
    }
    j["comparison"] = std::move(arr);
  }
  return j;
}

}  // namespace memix
