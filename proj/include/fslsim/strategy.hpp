#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

namespace fsl {

enum class StrategyKind { FSL_MC, FSL_OC, FSL_AN, CSE_FSL };

std::string_view strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(std::string_view name);  // ConfigError on unknown

// A training strategy plus its knobs. h is the upload period in client
// batches (CSE_FSL only; the others upload every batch). clip_threshold
// applies to FSL_OC's server gradient only.
struct Strategy {
  StrategyKind kind = StrategyKind::CSE_FSL;
  size_t h = 1;
  std::optional<double> clip_threshold;

  bool uses_aux() const;
  bool single_server_model() const;
  bool sends_grad_down() const;
  size_t upload_period() const;  // h for CSE_FSL, 1 otherwise
  void validate() const;         // ConfigError on inconsistent knobs
};

} // namespace fsl
