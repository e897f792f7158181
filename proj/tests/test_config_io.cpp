#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "memix/config.hpp"
#include "memix/errors.hpp"
#include "memix/io.hpp"

using namespace memix;
using nlohmann::json;

namespace {

const std::string kConfigDir = MEMIX_CONFIG_DIR;

json minimal() {
  return json::parse(R"({
    "label": "t", "n": 8, "d": 4, "m": 8, "layers": 1, "heads": 1, "steps": 3,
    "weights_seed": 1, "stream_seed": 2, "rule": "memix_mask", "writeback": "single",
    "gate_placement": "after_decoder", "source": {"kind": "gaussian", "scale": 1.0},
    "trace": "off", "raw_logits": false, "beta_on_attention": false, "record_timing": false
  })");
}

}  // namespace

TEST(Config, ShippedDefaultLiterals) {
  const ExperimentConfig cfg = load_experiment_config(kConfigDir + "/default.json");
  const StreamConfig& s = cfg.stream;
  EXPECT_EQ(s.n, 768u);
  EXPECT_EQ(s.m, 768u);
  EXPECT_EQ(s.plan.k, 708u);
  EXPECT_EQ(s.plan.policy, SelectionPolicy::BottomK);
  EXPECT_EQ(s.plan.score, ScoreFn::Dot);
  EXPECT_EQ(s.plan.patch_size, 1u);
  EXPECT_EQ(s.rule.variant, UpdateVariant::MeMixMask);
  EXPECT_EQ(s.rule.writeback, Writeback::SingleAfterDecoder);
  EXPECT_EQ(s.plan, RoutingPlan::default_for(768));

  const json raw = json::parse(std::ifstream(kConfigDir + "/default.json"));
  EXPECT_EQ(raw["plan"]["k"], 708);
  EXPECT_EQ(raw["plan"]["policy"], "bottom_k");
  EXPECT_EQ(raw["plan"]["score"], "dot");
  EXPECT_EQ(raw["writeback"], "single");
}

TEST(Config, ShippedComparisonConfig) {
  const ExperimentConfig cfg = load_experiment_config(kConfigDir + "/bottomk_vs_topk.json");
  EXPECT_EQ(cfg.stream.n, 96u);
  EXPECT_EQ(cfg.stream.steps, 500u);
  EXPECT_EQ(cfg.stream.weights_seed, 42u);
  EXPECT_EQ(cfg.stream.stream_seed, 7u);
  ASSERT_EQ(cfg.comparison.size(), 3u);
  for (const auto& v : cfg.comparison) {
    EXPECT_EQ(v.apply(cfg.stream).plan.k, 16u);
    EXPECT_EQ(v.apply(cfg.stream).plan.patch_size, 1u);
  }
}

TEST(Config, EveryShippedConfigParses) {
  for (const auto& entry : std::filesystem::directory_iterator(kConfigDir)) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_experiment_config(entry.path().string())) << entry.path();
  }
}

TEST(Config, PlanDefaultsToScaledPlan) {
  const ExperimentConfig cfg = parse_experiment_config(minimal());
  EXPECT_EQ(cfg.stream.plan, RoutingPlan::default_for(8));
  EXPECT_FALSE(cfg.out.has_value());
}

TEST(Config, RoundTrip) {
  json j = minimal();
  j["source"] = json::parse(R"({"kind": "revisit", "dictionary_size": 3, "schedule": [0, 2, 1], "noise": 0.1})");
  j["out"] = "runs/x";
  j["comparison"] = json::parse(R"([{"label": "a", "rule": "memix_beta"},
                                    {"label": "b", "plan": {"score": "cosine", "feature_source": "prev_decoded",
                                     "policy": "random_k", "k": 2, "patch_size": 2}}])");
  const ExperimentConfig once = parse_experiment_config(j);
  const ExperimentConfig twice = parse_experiment_config(to_json(once));
  EXPECT_EQ(once, twice);
  EXPECT_EQ(twice.stream.source.schedule, (std::vector<std::size_t>{0, 2, 1}));
  EXPECT_EQ(twice.comparison[1].plan->source, FeatureSource::PrevStateDecoded);
}

TEST(Config, RejectsUnknownKeys) {
  json j = minimal();
  j["stpes"] = 3;
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  j = minimal();
  j["source"]["noise"] = 0.0;
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  j = minimal();
  j["plan"] = json::parse(R"({"score": "dot", "feature_source": "candidate_raw", "policy": "bottom_k",
                              "k": 2, "patch_size": 1, "extra": 1})");
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
}

TEST(Config, RejectsMissingAndMistypedKeys) {
  json j = minimal();
  j.erase("heads");
  try {
    parse_experiment_config(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("config.heads"), std::string::npos);
  }
  j = minimal();
  j["n"] = -1;
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  j = minimal();
  j["rule"] = "gated";
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  j = minimal();
  j["raw_logits"] = 0;
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  EXPECT_THROW(parse_experiment_config_text("{not json"), ConfigError);
  EXPECT_THROW(load_experiment_config(kConfigDir + "/does_not_exist.json"), ConfigError);
}

TEST(Config, RejectsInvalidDimensions) {
  json j = minimal();
  j["m"] = 6;
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  j = minimal();
  j["writeback"] = "none";
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
  j = minimal();
  j["comparison"] = json::parse(R"([{"label": "bad", "writeback": "full", "rule": "ttt"}])");
  EXPECT_THROW(parse_experiment_config(j), ConfigError);
}

TEST(Io, SummaryHeaderAndPrecision) {
  StreamConfig c;
  c.n = 8;
  c.m = 8;
  c.d = 4;
  c.layers = 1;
  c.heads = 1;
  c.steps = 3;
  c.plan = RoutingPlan::default_for(8);
  RunSummary s = run_stream(c).summary;
  s.update_cv = 1.0 / 3.0;
  const LabeledSummary row{make_run_id("x", c), s};
  std::ostringstream os;
  write_summary_csv(os, std::span<const LabeledSummary>(&row, 1));
  const std::string text = os.str();
  const std::string header =
      "run_id,rule,policy,score_fn,feature_source,writeback,k,n,d,L,H,T,seed_w,seed_s,coverage,update_cv,"
      "update_entropy,final_drift,steps_per_sec,peak_state_bytes\n";
  ASSERT_EQ(text.substr(0, header.size()), header);
  EXPECT_NE(text.find(",0.33333333333333331,"), std::string::npos);
  EXPECT_EQ(text.find("x-w42-s7-k7,memix_mask,bottom_k,dot,candidate_raw,single,7,8,4,1,1,3,42,7,"), header.size());
  EXPECT_EQ(text.back(), '\n');
  EXPECT_EQ(format_real(0.1), "0.10000000000000001");
}

TEST(Io, TraceLevelsControlFiles) {
  const auto dir = std::filesystem::path(MEMIX_TEST_TMP) / "io_levels";
  std::filesystem::remove_all(dir);
  StreamConfig c;
  c.n = 8;
  c.m = 8;
  c.d = 4;
  c.layers = 1;
  c.heads = 1;
  c.steps = 4;
  c.plan = RoutingPlan::default_for(8);
  c.trace_level = TraceLevel::Full;
  RunResult r = run_stream(c);
  const std::vector<RunOutput> runs{{LabeledSummary{"r", r.summary}, r.traces}};
  EXPECT_EQ(write_outputs(dir / "off", runs, TraceLevel::Off).size(), 1u);
  EXPECT_EQ(write_outputs(dir / "summary", runs, TraceLevel::Summary).size(), 2u);
  EXPECT_EQ(write_outputs(dir / "full", runs, TraceLevel::Full).size(), 3u);

  std::ifstream trace(dir / "full" / "trace.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(trace, line)) {
    const json j = json::parse(line);
    EXPECT_EQ(j["run_id"], "r");
    EXPECT_EQ(j["realized_gate"].size(), 8u);
    EXPECT_TRUE(j["retention_error"].is_null());
    ++lines;
  }
  EXPECT_EQ(lines, 4u);

  std::ifstream counts(dir / "summary" / "counts.csv");
  std::getline(counts, line);
  EXPECT_EQ(line, "run_id,token_index,update_count");
  lines = 0;
  while (std::getline(counts, line)) ++lines;
  EXPECT_EQ(lines, 8u);
}
