#include "fslsim/ledger.hpp"

#include <ostream>

#include "fslsim/error.hpp"

namespace fsl {

std::string_view direction_name(Direction d) {
  return d == Direction::uplink ? "up" : "down";
}

void CommLedger::record(int round, const Message& msg, size_t bytes_per_element,
                        size_t label_bytes) {
  LedgerRow row;
  row.round = round;
  row.client = message_client(msg);
  row.direction = is_uplink(msg) ? Direction::uplink : Direction::downlink;
  row.kind = message_kind(msg);
  row.bytes = message_bytes(msg, bytes_per_element, label_bytes);
  if (row.direction == Direction::uplink)
    uplink_bytes += row.bytes;
  else
    downlink_bytes += row.bytes;
  if (std::holds_alternative<SmashedUpload>(msg)) ++comm_rounds;
  rows.push_back(std::move(row));
}

void write_ledger_csv(const CommLedger& ledger, std::ostream& out) {
  out << "round,client,direction,message_kind,bytes\n";
  for (const LedgerRow& row : ledger.rows)
    out << row.round << ',' << row.client << ',' << direction_name(row.direction) << ','
        << row.kind << ',' << row.bytes << '\n';
}

LoadEstimate predict_epoch_load(const Strategy& strategy, size_t n_clients,
                                size_t batches_per_client, const EpochLoadSizes& sizes) {
  if (n_clients == 0) throw UsageError("predict_epoch_load: n_clients must be positive");
  if (batches_per_client == 0)
    throw UsageError("predict_epoch_load: batches_per_client must be positive");

  size_t per_upload = sizes.smashed_bytes + sizes.upload_label_bytes;
  LoadEstimate load;
  switch (strategy.kind) {
    case StrategyKind::CSE_FSL:
    case StrategyKind::FSL_AN: {
      size_t uploads = (batches_per_client + strategy.upload_period() - 1) /
                       strategy.upload_period();
      load.uplink_bytes = n_clients * (uploads * per_upload + sizes.client_model_bytes +
                                       sizes.aux_model_bytes);
      load.downlink_bytes = n_clients * (sizes.client_model_bytes + sizes.aux_model_bytes);
      break;
    }
    case StrategyKind::FSL_MC:
    case StrategyKind::FSL_OC:
      // gradient-down replies carry the smashed-data shape
      load.uplink_bytes =
          n_clients * (batches_per_client * per_upload + sizes.client_model_bytes);
      load.downlink_bytes =
          n_clients * (batches_per_client * sizes.smashed_bytes + sizes.client_model_bytes);
      break;
  }
  return load;
}

size_t storage_of(const Strategy& strategy, size_t n_clients, size_t client_params,
                  size_t aux_params, size_t server_params) {
  if (!strategy.uses_aux() && aux_params != 0)
    throw UsageError("storage_of: " + std::string(strategy_name(strategy.kind)) +
                     " has no auxiliary network");
  size_t copies = strategy.single_server_model() ? 1 : n_clients;
  return n_clients * (client_params + aux_params) + copies * server_params;
}

} // namespace fsl
