#pragma once

// summary.csv, counts.csv and trace.jsonl writers. Reals use 17 significant
// digits, lines end in a single '\n', and column order is fixed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "memix/config.hpp"
#include "memix/errors.hpp"
#include "memix/harness.hpp"

namespace memix {

inline constexpr std::string_view kSummaryHeader =
    "run_id,rule,policy,score_fn,feature_source,writeback,k,n,d,L,H,T,seed_w,seed_s,coverage,update_cv,"
    "update_entropy,final_drift,steps_per_sec,peak_state_bytes";

inline constexpr std::string_view kCountsHeader = "run_id,token_index,update_count";

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// `<label>-w<weights_seed>-s<stream_seed>-k<k>`; enough to re-run the row.
inline std::string make_run_id(std::string_view label, const StreamConfig& cfg) {
  return std::string(label) + "-w" + std::to_string(cfg.weights_seed) + "-s" + std::to_string(cfg.stream_seed) +
         "-k" + std::to_string(cfg.plan.k);
}

struct LabeledSummary {
  std::string run_id;
  RunSummary summary;
};

inline void write_summary_row(std::ostream& os, const LabeledSummary& row) {
  const RunSummary& s = row.summary;
  const StreamConfig& c = s.config;
  os << row.run_id << ',' << to_string(c.rule.variant) << ',' << to_string(c.plan.policy) << ','
     << to_string(c.plan.score) << ',' << to_string(c.plan.source) << ',' << to_string(c.rule.writeback) << ','
     << c.plan.k << ',' << c.n << ',' << c.d << ',' << c.layers << ',' << c.heads << ',' << c.steps << ','
     << c.weights_seed << ',' << c.stream_seed << ',' << format_real(s.coverage) << ',' << format_real(s.update_cv)
     << ',' << format_real(s.update_entropy) << ',' << format_real(s.final_drift) << ','
     << format_real(s.steps_per_sec) << ',' << s.peak_state_bytes << '\n';
}

inline void write_summary_csv(std::ostream& os, std::span<const LabeledSummary> rows) {
  os << kSummaryHeader << '\n';
  for (const auto& r : rows) write_summary_row(os, r);
}

inline void write_counts_csv(std::ostream& os, std::span<const LabeledSummary> rows) {
  os << kCountsHeader << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.summary.counts.size(); ++i) {
      os << r.run_id << ',' << i << ',' << r.summary.counts[i] << '\n';
    }
  }
}

inline nlohmann::json to_json(const StepTrace& t) {
  nlohmann::json j{{"t", t.t},
                   {"scores", t.scores},
                   {"selected_patches", t.selected_patches},
                   {"realized_gate", t.realized_gate},
                   {"state_delta_norm", t.state_delta_norm},
                   {"counters", t.counters},
                   {"wall_time_ns", t.wall_time_ns},
                   {"peak_state_bytes", t.peak_state_bytes}};
  j["retention_error"] = t.retention_error ? nlohmann::json(*t.retention_error) : nlohmann::json(nullptr);
  j["full_retention_error"] =
      t.full_retention_error ? nlohmann::json(*t.full_retention_error) : nlohmann::json(nullptr);
  return j;
}

/// One StepTrace per line, tagged with its run id.
inline void write_trace_jsonl(std::ostream& os, std::string_view run_id, std::span<const StepTrace> traces) {
  for (const auto& t : traces) {
    nlohmann::json j = to_json(t);
    j["run_id"] = run_id;
    os << j.dump() << '\n';
  }
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open output file '" + p.string() + "'");
  return os;
}

}  // namespace detail

struct RunOutput {
  LabeledSummary row;
  std::vector<StepTrace> traces;
};

/// Writes summary.csv always, counts.csv from trace level summary and
/// trace.jsonl at trace level full. Existing files are overwritten.
inline std::vector<std::filesystem::path> write_outputs(const std::filesystem::path& dir,
                                                        std::span<const RunOutput> runs, TraceLevel level) {
  std::filesystem::create_directories(dir);
  std::vector<LabeledSummary> rows;
  rows.reserve(runs.size());
  for (const auto& r : runs) rows.push_back(r.row);

  std::vector<std::filesystem::path> written{dir / "summary.csv"};
  {
    auto os = detail::open_output(written.back());
    write_summary_csv(os, rows);
  }
  if (level != TraceLevel::Off) {
    written.push_back(dir / "counts.csv");
    auto os = detail::open_output(written.back());
    write_counts_csv(os, rows);
  }
  if (level == TraceLevel::Full) {
    written.push_back(dir / "trace.jsonl");
    auto os = detail::open_output(written.back());
    for (const auto& r : runs) write_trace_jsonl(os, r.row.run_id, r.traces);
  }
  return written;
}

}  // namespace memix
