#include <CLI11.hpp>

#include <iostream>

#include "pmpkit/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"pmpkit: controllability, reachable sets and time-optimal control from JSON scenarios"};
  app.set_version_flag("--version", std::string(pmpkit::kVersion));

  std::string config;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool quiet = false;
  app.add_option("--config", config, "scenario JSON file")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (created if missing)");
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed for Monte-Carlo checks; overrides the config's seed");
  app.add_flag("--quiet", quiet, "suppress the summary line");

  std::string commands;
  for (const auto& c : pmpkit::cli::commands()) commands += (commands.empty() ? "" : ", ") + c;
  app.footer("Commands (config field \"command\"): " + commands + "\n\n" + pmpkit::cli::csv_columns_help() +
             "\nExit status: 0 success, 2 invalid config, 3 numerical failure, 1 other errors.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pmpkit::cli::kValidation;
  }

  pmpkit::cli::RunOptions opt;
  opt.out_dir = out_dir;
  opt.quiet = quiet;
  if (*seed_opt) opt.seed = seed;
  return pmpkit::cli::run(config, opt, std::cout, std::cerr);
}
