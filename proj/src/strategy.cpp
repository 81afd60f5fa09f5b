#include "fslsim/strategy.hpp"

#include <string>

#include "fslsim/error.hpp"

namespace fsl {

std::string_view strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::FSL_MC: return "FSL_MC";
    case StrategyKind::FSL_OC: return "FSL_OC";
    case StrategyKind::FSL_AN: return "FSL_AN";
    case StrategyKind::CSE_FSL: return "CSE_FSL";
  }
  return "?";
}

StrategyKind strategy_from_name(std::string_view name) {
  if (name == "FSL_MC") return StrategyKind::FSL_MC;
  if (name == "FSL_OC") return StrategyKind::FSL_OC;
  if (name == "FSL_AN") return StrategyKind::FSL_AN;
  if (name == "CSE_FSL") return StrategyKind::CSE_FSL;
  throw ConfigError("strategy: unknown name \"" + std::string(name) +
                    "\" (expected FSL_MC, FSL_OC, FSL_AN or CSE_FSL)");
}

bool Strategy::uses_aux() const {
  return kind == StrategyKind::FSL_AN || kind == StrategyKind::CSE_FSL;
}

bool Strategy::single_server_model() const {
  return kind == StrategyKind::FSL_OC || kind == StrategyKind::CSE_FSL;
}

bool Strategy::sends_grad_down() const {
  return kind == StrategyKind::FSL_MC || kind == StrategyKind::FSL_OC;
}

size_t Strategy::upload_period() const {
  return kind == StrategyKind::CSE_FSL ? h : 1;
}

void Strategy::validate() const {
  if (h == 0) throw ConfigError("strategy: h must be at least 1");
  if (h != 1 && kind != StrategyKind::CSE_FSL)
    throw ConfigError("strategy: h is a CSE_FSL knob; " +
                      std::string(strategy_name(kind)) + " uploads every batch");
  if (clip_threshold) {
    if (kind != StrategyKind::FSL_OC)
      throw ConfigError("strategy: clip_threshold applies to FSL_OC only");
    if (!(*clip_threshold > 0.0))
      throw ConfigError("strategy: clip_threshold must be positive");
  }
}

} // namespace fsl
