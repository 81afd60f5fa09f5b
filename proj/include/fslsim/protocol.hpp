#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <utility>
#include <vector>

#include "fslsim/data.hpp"
#include "fslsim/ledger.hpp"
#include "fslsim/messages.hpp"
#include "fslsim/metrics.hpp"
#include "fslsim/model.hpp"
#include "fslsim/strategy.hpp"

namespace fsl {

struct ClientState {
  int id = 0;
  ParamSet x_c;
  std::optional<ParamSet> a_c;
  int batch_counter = 0;  // local batches this round; resets at round start

  // Baselines only: forward trace awaiting the gradient-down reply.
  struct Pending {
    size_t window = 0;
    ForwardTrace trace;
  };
  std::deque<Pending> pending;
};

struct ServerState {
  std::vector<ParamSet> server_models;  // one entry, or one per client
  ParamSet global_x_c;
  std::optional<ParamSet> global_a_c;
  std::deque<SmashedUpload> queue;      // FIFO of arrivals
  int round = 0;
};

struct RoundReport {
  int round = 0;
  std::vector<int> participants;
  std::vector<std::pair<int, double>> client_local_losses;  // per local batch, aux strategies
  std::vector<double> server_losses;                           // per ingest
  size_t broadcasts = 0;
  size_t smashed_uploads = 0;
  size_t grad_downs = 0;
  size_t model_uploads = 0;
  size_t uplink_bytes = 0;
  size_t downlink_bytes = 0;
  double train_loss = 0.0;     // mean of the strategy's driving loss
  size_t epochs_advanced = 0;  // epochs consumed by this round (client clock)
};

// ceil(fraction * n) distinct clients, uniform without replacement,
// deterministic in (seed, t). Returned sorted ascending.
std::vector<int> sample_participants(size_t n_clients, double fraction,
                                     uint64_t seed, int t);

// The four client/server pipelines as explicit operations over the state
// structs. Bound to one model and strategy; all methods are deterministic.
struct Protocol {
  Strategy strategy;
  const SplitPlans* plans = nullptr;
  const Dataset* train = nullptr;
  AssumptionEstimates* estimates = nullptr;  // optional observer

  // Sets every participant to the round-t global models and returns the
  // metered broadcast messages.
  std::vector<Message> broadcast_models(const ServerState& server,
                                        const std::vector<ClientState*>& participants) const;

  size_t window_count(const BatchPlan& plan) const;  // ceil(B / h)

  struct WindowResult {
    SmashedUpload upload;
    std::vector<double> losses;  // one local loss per batch in the window
  };

  // Aux strategies: runs the window's local steps (forward through client
  // stack and aux head, local loss, backward, SGD on x_c and a_c), then
  // emits one smashed upload computed from the post-window client model on
  // the window's last batch.
  WindowResult client_local_window(ClientState& client, const BatchPlan& plan,
                                   size_t window_index, double eta, int round) const;

  // Baselines: forward the batch, stash the trace, emit the upload.
  SmashedUpload client_forward_baseline(ClientState& client, const BatchPlan& plan,
                                        size_t batch_index, int round) const;

  // Baselines: backpropagate the smashed-data gradient through the client
  // stack and step x_c.
  void client_step_baseline(ClientState& client, const GradDown& grad_down,
                            double eta) const;

  struct IngestResult {
    std::optional<GradDown> grad_down;
    double loss = 0.0;
  };

  // Sequential server update on the upload, first come first serve. Single
  //-model strategies update the shared model in place; multi-copy strategies
  // update only the uploading client's copy. Baselines also return the
  // gradient of the loss with respect to the smashed data.
  IngestResult server_ingest(ServerState& server, const SmashedUpload& upload,
                             double eta, const std::vector<int>& participants) const;

  // Unweighted elementwise mean over participant uploads; advances the round.
  void aggregate(ServerState& server,
                 const std::vector<ClientModelUpload>& uploads) const;
};

enum class AggUnit { epochs, windows };
enum class ArrivalOrder { client_id, shuffled };

struct EngineConfig {
  Strategy strategy;
  size_t n_clients = 1;
  double participation_fraction = 1.0;
  double eta0 = 0.1;
  size_t batch_size = 32;
  AggUnit agg_unit = AggUnit::epochs;
  size_t agg_period = 1;
  size_t epochs = 1;  // total local epochs to train
  size_t bytes_per_element = 4;
  size_t label_bytes = 1;
  size_t probe_size = 512;
  uint64_t seed = 1;
  ArrivalOrder arrival = ArrivalOrder::client_id;
  bool iid_partition = true;
  size_t classes_per_client = 2;  // label-skew mode
};

// One simulated federation: owns the states, the ledgers and the convergence
// monitors, and executes global rounds until the configured epochs are
// consumed. Single-threaded and bit-deterministic in the seed.
class Engine {
 public:
  Engine(EngineConfig cfg, SplitModelSpec model, Dataset train, Dataset test);

  bool done() const;
  RoundReport run_round();

  EvalResult evaluate_test() const;

  int round() const { return round_; }
  size_t epochs_completed() const { return epochs_done_; }
  const ServerState& server() const { return server_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const CommLedger& ledger() const { return ledger_; }
  const ConvergenceTrace& trace() const { return trace_; }
  const AssumptionEstimates& estimates() const { return estimates_; }
  const Partition& partition() const { return partition_; }
  const SplitPlans& plans() const { return plans_; }
  const SplitParams& initial_params() const { return init_; }

 private:
  struct Cursor {
    size_t epoch = 0;
    size_t window = 0;
  };

  void record_probe_grads(double eta);
  void run_epoch_unit(const std::vector<int>& participants, double eta,
                      RoundReport& report);
  void run_window_unit(const std::vector<int>& participants, double eta,
                       RoundReport& report);
  std::vector<int> arrival_order(const std::vector<int>& ready, size_t step) const;
  void ingest_and_reply(ClientState& client, SmashedUpload upload, double eta,
                        const std::vector<int>& participants, RoundReport& report);
  const ParamSet& eval_server_model() const;
  size_t windows_per_epoch() const;  // client 0's plan, the round clock

  EngineConfig cfg_;
  SplitModelSpec spec_;
  SplitPlans plans_;
  SplitParams init_;
  Dataset train_;
  Dataset test_;
  Partition partition_;
  LrSchedule lr_;
  Protocol proto_;
  ServerState server_;
  std::vector<ClientState> clients_;
  std::vector<Cursor> cursor_;
  CommLedger ledger_;
  ConvergenceTrace trace_;
  AssumptionEstimates estimates_;
  Tensor probe_inputs_;
  std::vector<int> probe_labels_;
  int round_ = 0;
  size_t epochs_done_ = 0;
  size_t windows_done_ = 0;
  size_t arrival_step_ = 0;
};

} // namespace fsl
