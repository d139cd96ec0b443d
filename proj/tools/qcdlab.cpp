#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <utility>

#include "qcdlab/config.hpp"
#include "qcdlab/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Quickest change detection lab"};
  app.require_subcommand(1, 1);

  std::string config_file;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<long> reps;

  const std::pair<const char*, const char*> commands[] = {
      {"analyze", "exponents, approximate thresholds and entropy rates"},
      {"simulate", "Monte Carlo, hitting and tilted MDE estimates per threshold"},
      {"sweep", "cost over a threshold grid and the gap to the approximate minimiser"},
      {"optimize", "best statistic in a linear class"},
      {"pomdp", "survival factorization of a hidden chain"},
      {"path", "optimal eagerness paths"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_file, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "base seed override");
    sub->add_option("--reps", reps, "replication count override");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    const auto cfg = qcdlab::load_config(config_file);
    const auto out = qcdlab::run_experiment(command, cfg, out_dir, {seed, reps});
    for (const auto& f : out.files) std::cout << out_dir << "/" << f << '\n';
    std::cout << out_dir << "/manifest.json\n";
  } catch (const qcdlab::SchemaError& e) {
    std::cerr << "config error at " << e.what() << '\n';
    return 2;
  } catch (const qcdlab::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
