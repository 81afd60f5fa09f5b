#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fslsim/config.hpp"

namespace fsl {

// One metrics.csv row, also reused by the compare merge.
struct MetricsRow {
  int round = 0;
  size_t epoch = 0;
  size_t comm_rounds = 0;
  size_t uplink_bytes = 0;
  size_t downlink_bytes = 0;
  double train_loss = 0.0;
  double test_top1 = 0.0;
  double grad_norm_client = 0.0;
  double grad_norm_server = 0.0;
  double gamma_T = 0.0;
  double weighted_avg_client = 0.0;
  double weighted_avg_server = 0.0;
};

extern const char* const kMetricsHeader;
extern const char* const kLedgerHeader;
extern const char* const kCompareHeader;

struct SeedRunResult {
  uint64_t seed = 0;
  double final_top1 = 0.0;
  double final_loss = 0.0;
  size_t uplink_bytes = 0;
  size_t downlink_bytes = 0;
  size_t comm_rounds = 0;
  size_t storage_params = 0;
  std::filesystem::path dir;
  std::vector<MetricsRow> rows;
};

struct RunOutputs {
  std::vector<SeedRunResult> seeds;
  std::vector<std::string> notes;  // defaults applied, spec warnings
};

struct RunOptions {
  std::optional<uint64_t> seed_override;
  std::optional<std::string> out_override;
  size_t threads = 1;
  // Receives progress/notes; defaults to stdout when null.
  std::function<void(const std::string&)> log;
};

// Builds everything from the config, trains for the configured epochs and
// writes metrics.csv, ledger.csv and summary.txt per seed plus a mean/std
// aggregate across seeds. Environment overrides FSLSIM_SEED and FSLSIM_OUT
// apply unless the corresponding option is set.
RunOutputs run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Runs each config and writes one merged CSV keyed by (strategy, h) with
// accuracy against epochs, communication rounds and cumulative bytes.
void compare_experiments(const std::vector<ExperimentConfig>& configs,
                         const std::filesystem::path& out_dir,
                         const RunOptions& opts = {});

} // namespace fsl
