#pragma once

// Command bodies behind the memix executable. Each returns a process exit
// code: 0 success, 1 verification failure, 2 config or usage error,
// 3 numerical divergence.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "memix/config.hpp"
#include "memix/equivalence.hpp"
#include "memix/errors.hpp"
#include "memix/harness.hpp"
#include "memix/io.hpp"

namespace memix::cli {

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kUsage = 2, kDivergence = 3 };

struct RunRequest {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<TraceLevel> trace;
};

/// "a:b:step" (inclusive of b) or a comma list "a,b,c".
inline std::vector<std::size_t> parse_k_range(std::string_view spec) {
  auto to_count = [&](std::string_view s) -> std::size_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string_view::npos) {
      throw ConfigError("k range: '" + std::string(spec) + "' is not a:b:step or a comma list");
    }
    return static_cast<std::size_t>(std::stoull(std::string(s)));
  };
  std::vector<std::size_t> ks;
  if (spec.find(':') != std::string_view::npos) {
    const auto c1 = spec.find(':');
    const auto c2 = spec.find(':', c1 + 1);
    if (c2 == std::string_view::npos) throw ConfigError("k range: expected a:b:step");
    const std::size_t lo = to_count(spec.substr(0, c1));
    const std::size_t hi = to_count(spec.substr(c1 + 1, c2 - c1 - 1));
    const std::size_t step = to_count(spec.substr(c2 + 1));
    if (step == 0 || hi < lo || (hi - lo) % step != 0) {
      throw ConfigError("k range: step must be positive and divide " + std::to_string(hi) + "-" + std::to_string(lo));
    }
    for (std::size_t k = lo; k <= hi; k += step) ks.push_back(k);
    return ks;
  }
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    const auto end = comma == std::string_view::npos ? spec.size() : comma;
    ks.push_back(to_count(spec.substr(start, end - start)));
    start = end + 1;
  }
  return ks;
}

inline void print_report(const EquivalenceReport& r, std::ostream& out) {
  out << "equivalence suite: seed " << r.seed << ", " << r.trials << " trials\n";
  for (const auto& c : r.checks) {
    char line[160];
    std::snprintf(line, sizeof line, "  %-28s %s  %zu/%zu  max_dev=%.3e", c.name.c_str(),
                  c.failed == 0 ? "PASS" : "FAIL", c.passed, c.passed + c.failed, c.max_deviation);
    out << line;
    if (c.first_failing_seed) out << "  first_failing_seed=" << *c.first_failing_seed;
    out << '\n';
  }
  out << (r.all_passed() ? "all checks passed\n" : "verification FAILED\n");
}

inline int cmd_verify(std::uint64_t seed, std::size_t trials, bool negative_control, std::ostream& out,
                      std::ostream& err) {
  if (trials == 0) {
    err << "verify: --trials must be >= 1\n";
    return kUsage;
  }
  const EquivalenceReport report = equivalence_suite(seed, trials, negative_control);
  print_report(report, out);
  return report.all_passed() ? kOk : kVerifyFailed;
}

namespace detail {

inline RunOutput run_labeled(std::string_view label, const StreamConfig& cfg) {
  RunResult r = run_stream(cfg);
  return {LabeledSummary{make_run_id(label, cfg), std::move(r.summary)}, std::move(r.traces)};
}

struct Prepared {
  ExperimentConfig config;
  std::filesystem::path out;
  TraceLevel trace;
};

inline Prepared prepare(const RunRequest& req) {
  Prepared p{load_experiment_config(req.config.string()), {}, TraceLevel::Off};
  if (req.trace) p.config.stream.trace_level = *req.trace;
  p.trace = p.config.stream.trace_level;
  if (req.out) {
    p.out = *req.out;
  } else if (p.config.out) {
    p.out = *p.config.out;
  } else {
    throw ConfigError("no output directory: pass --out or set \"out\" in the config");
  }
  return p;
}

template <typename F>
int guarded(std::string_view cmd, std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const DivergenceError& e) {
    err << cmd << ": " << e.what() << '\n';
    return kDivergence;
  } catch (const Error& e) {
    err << cmd << ": " << e.what() << '\n';
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << cmd << ": " << e.what() << '\n';
    return kUsage;
  }
}

inline void report_written(const std::vector<std::filesystem::path>& files, std::ostream& out) {
  for (const auto& f : files) out << "wrote " << f.string() << '\n';
}

}  // namespace detail

inline int cmd_simulate(const RunRequest& req, std::ostream& out, std::ostream& err) {
  return detail::guarded("simulate", err, [&] {
    const auto p = detail::prepare(req);
    const std::vector<RunOutput> runs{detail::run_labeled(p.config.label, p.config.stream)};
    detail::report_written(write_outputs(p.out, runs, p.trace), out);
    return kOk;
  });
}

inline int cmd_ablate(const RunRequest& req, std::ostream& out, std::ostream& err) {
  return detail::guarded("ablate", err, [&] {
    const auto p = detail::prepare(req);
    if (p.config.comparison.empty()) throw ConfigError("config.comparison: ablate needs at least one variant");
    std::vector<RunOutput> runs;
    runs.reserve(p.config.comparison.size());
    for (const auto& v : p.config.comparison) runs.push_back(detail::run_labeled(v.label, v.apply(p.config.stream)));
    detail::report_written(write_outputs(p.out, runs, p.trace), out);
    return kOk;
  });
}

inline int cmd_sweep_k(const RunRequest& req, std::string_view k_range, std::ostream& out, std::ostream& err) {
  return detail::guarded("sweep-k", err, [&] {
    const auto p = detail::prepare(req);
    const std::vector<std::size_t> ks = parse_k_range(k_range);
    std::vector<RunOutput> runs;
    runs.reserve(ks.size());
    for (std::size_t k : ks) {
      StreamConfig cfg = p.config.stream;
      cfg.plan.k = k;
      cfg.validate();
      runs.push_back(detail::run_labeled(p.config.label, cfg));
    }
    detail::report_written(write_outputs(p.out, runs, p.trace), out);
    return kOk;
  });
}

}  // namespace memix::cli
