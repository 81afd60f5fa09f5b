#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fslsim/config.hpp"
#include "fslsim/error.hpp"
#include "fslsim/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitOracle = 3;

int run_command(const std::string& config_path, const fsl::RunOptions& opts) {
  fsl::ExperimentConfig cfg = fsl::load_config_file(config_path);
  fsl::run_experiment(cfg, opts);
  return kExitOk;
}

int gradcheck_command(const fsl::GradCheckOptions& options) {
  std::vector<fsl::GradCheckCase> report = fsl::gradcheck_suite(options);
  bool ok = true;
  std::printf("%-16s %-14s %s\n", "layer", "max_rel_err", "status");
  for (const fsl::GradCheckCase& c : report) {
    bool pass = c.max_rel_err < options.tolerance;
    ok = ok && pass;
    std::printf("%-16s %-14.3e %s\n", c.name.c_str(), c.max_rel_err,
                pass ? "ok" : "FAIL");
  }
  return ok ? kExitOk : kExitOracle;
}

int compare_command(const std::vector<std::string>& config_paths, const std::string& out,
                    const fsl::RunOptions& opts) {
  std::vector<fsl::ExperimentConfig> configs;
  for (const std::string& path : config_paths)
    configs.push_back(fsl::load_config_file(path));
  fsl::compare_experiments(configs, out, opts);
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated split learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  size_t threads = 1;
  bool seed_set = false;

  CLI::App* run = app.add_subcommand("run", "run one experiment from a config file");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
    seed_set = true;
  });
  run->add_option("--out", out_dir, "override the output directory");
  run->add_option("--threads", threads, "parallel seeds (outputs stay per-seed deterministic)");

  fsl::GradCheckOptions gc;
  std::string inject;
  std::string gc_config;
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference check of every layer kind");
  gradcheck->add_option("--config", gc_config, "optional config; only its seed is used");
  gradcheck->add_option("--eps", gc.epsilon, "central-difference epsilon");
  gradcheck->add_option("--tolerance", gc.tolerance, "max relative error accepted");
  gradcheck->add_option("--seed", gc.seed, "seed for the random configurations");
  gradcheck->add_option("--inject-fault", inject,
                        "test hook; \"dense-sign-flip\" breaks the dense backward");

  std::vector<std::string> compare_paths;
  std::string compare_out = "compare_out";
  CLI::App* compare = app.add_subcommand(
      "compare", "run several configs sharing dataset+model and merge their curves");
  compare->add_option("--config", compare_paths, "config file (repeat, at least two)")
      ->required()
      ->expected(-2);
  compare->add_option("--out", compare_out, "output directory for compare.csv");
  compare->add_option("--threads", threads, "parallel seeds within each run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  fsl::RunOptions opts;
  opts.threads = threads;
  if (seed_set) opts.seed_override = seed;
  if (!out_dir.empty()) opts.out_override = out_dir;

  try {
    if (run->parsed()) return run_command(config_path, opts);
    if (gradcheck->parsed()) {
      if (!inject.empty()) {
        if (inject != "dense-sign-flip") {
          std::cerr << "unknown fault \"" << inject << "\"\n";
          return kExitConfig;
        }
        gc.inject_dense_sign_flip = true;
      }
      if (!gc_config.empty() && gradcheck->count("--seed") == 0)
        gc.seed = fsl::load_config_file(gc_config).seed;
      return gradcheck_command(gc);
    }
    if (compare->parsed()) return compare_command(compare_paths, compare_out, opts);
  } catch (const fsl::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
