#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "fslsim/messages.hpp"
#include "fslsim/strategy.hpp"

namespace fsl {

enum class Direction { uplink, downlink };

std::string_view direction_name(Direction d);

struct LedgerRow {
  int round = 0;
  int client = 0;
  Direction direction = Direction::uplink;
  std::string kind;
  size_t bytes = 0;
};

// Exact byte accounting. One smashed upload counts as one communication round.
struct CommLedger {
  size_t uplink_bytes = 0;
  size_t downlink_bytes = 0;
  size_t comm_rounds = 0;
  std::vector<LedgerRow> rows;

  void record(int round, const Message& msg, size_t bytes_per_element,
              size_t label_bytes);
  size_t total_bytes() const { return uplink_bytes + downlink_bytes; }
};

// CSV columns: round,client,direction,message_kind,bytes
void write_ledger_csv(const CommLedger& ledger, std::ostream& out);

// Wire sizes entering the per-epoch load formulas. smashed_bytes and
// upload_label_bytes are per upload (one full batch each).
struct EpochLoadSizes {
  size_t smashed_bytes = 0;
  size_t upload_label_bytes = 0;
  size_t client_model_bytes = 0;
  size_t aux_model_bytes = 0;
};

struct LoadEstimate {
  size_t uplink_bytes = 0;
  size_t downlink_bytes = 0;
};

// Analytic per-epoch load with one broadcast and one aggregation per epoch.
// Exact when every upload carries a full batch (shard sizes divisible by the
// batch size); partial batches are metered smaller by the simulator.
LoadEstimate predict_epoch_load(const Strategy& strategy, size_t n_clients,
                                size_t batches_per_client,
                                const EpochLoadSizes& sizes);

// Server-resident parameter count: N*(|x_c|+|a_c|) plus one server copy for
// FSL_OC/CSE_FSL or N copies for FSL_MC/FSL_AN.
size_t storage_of(const Strategy& strategy, size_t n_clients, size_t client_params,
                  size_t aux_params, size_t server_params);

} // namespace fsl
