// memix: verify / simulate / ablate / sweep-k front end.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "memix/cli.hpp"

namespace {

std::optional<memix::TraceLevel> trace_flag(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return memix::parse_trace_level(s);
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = memix::cli;
  CLI::App app{"Streaming recurrent-memory engine: gate-law verification and stream simulation"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::size_t trials = 100;
  bool negative_control = false;
  auto* verify = app.add_subcommand("verify", "Run the randomized gate-equivalence suite");
  verify->add_option("--seed", seed, "Suite seed");
  verify->add_option("--trials", trials, "Number of randomized trials (>= 1)");
  verify->add_flag("--negative-control", negative_control, "Corrupt one gate to prove failures are reported");

  std::string config, out, trace, k_range;
  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory (overrides the config's \"out\")");
    sub->add_option("--trace", trace, "Trace level override")->check(CLI::IsMember({"off", "summary", "full"}));
  };
  auto* simulate = app.add_subcommand("simulate", "Run one stream and write summary/counts/trace files");
  add_run_flags(simulate);
  auto* ablate = app.add_subcommand("ablate", "Run every variant of the config's comparison block");
  add_run_flags(ablate);
  auto* sweep = app.add_subcommand("sweep-k", "Run the config once per k");
  add_run_flags(sweep);
  sweep->add_option("--k-range", k_range, "a:b:step (inclusive) or a comma list")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kUsage;
  }

  if (verify->parsed()) return cli::cmd_verify(seed, trials, negative_control, std::cout, std::cerr);

  cli::RunRequest req{config, std::nullopt, trace_flag(trace)};
  if (!out.empty()) req.out = out;
  if (simulate->parsed()) return cli::cmd_simulate(req, std::cout, std::cerr);
  if (ablate->parsed()) return cli::cmd_ablate(req, std::cout, std::cerr);
  return cli::cmd_sweep_k(req, k_range, std::cout, std::cerr);
}
