// Command-line front end: fit, rank, langevin, simulate, report.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nonstat/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitInsufficient = 3;
constexpr int kExitGenerator = 4;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-sectional distribution fitting and Langevin reconstruction pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  unsigned threads = 0;
  std::vector<std::string> overrides;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed");
  app.add_option("--config", config_path, "Flat key = value configuration file");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--threads", threads, "Worker threads (outputs do not depend on it)")->check(CLI::PositiveNumber);
  app.add_option("--set", overrides, "Override one configuration key (key=value)");

  const std::map<std::string, std::function<void(const nonstat::PipelineConfig&)>> commands = {
      {"fit", nonstat::run_fit},
      {"rank", nonstat::run_rank},
      {"langevin", nonstat::run_langevin},
      {"simulate", nonstat::run_simulate},
      {"report", [](const nonstat::PipelineConfig& c) { std::cout << nonstat::run_report(c).dump(2) << '\n'; }},
  };
  const std::map<std::string, std::string> help = {
      {"fit", "Ingest observations and fit the four models to every snapshot"},
      {"rank", "Rank the fitted models by weighted divergence"},
      {"langevin", "Detrend, test the Markov property and reconstruct the Langevin dynamics"},
      {"simulate", "Generate a synthetic dataset and run the simulation checks"},
      {"report", "Summarize the stage outputs found in the output directory"},
  };
  for (const auto& [name, _] : commands) app.add_subcommand(name, help.at(name));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    nonstat::PipelineConfig cfg;
    if (!config_path.empty()) cfg = nonstat::load_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw nonstat::InputError("--set expects key=value, got " + kv);
      nonstat::set_config_value(cfg, nonstat::detail::trim(kv.substr(0, eq)), nonstat::detail::trim(kv.substr(eq + 1)));
    }
    if (*seed_opt) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    if (threads > 0) cfg.threads = threads;
    const std::string name = app.get_subcommands().front()->get_name();
    commands.at(name)(cfg);
    return kExitOk;
  } catch (const nonstat::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const nonstat::InsufficientData& e) {
    std::cerr << "insufficient data: " << e.what() << '\n';
    return kExitInsufficient;
  } catch (const nonstat::GeneratorAbort& e) {
    std::cerr << "generator abort: " << e.what() << '\n';
    return kExitGenerator;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInsufficient;
  }
}
