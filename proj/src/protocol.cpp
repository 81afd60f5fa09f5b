#include "fslsim/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fslsim/error.hpp"
#include "fslsim/rng.hpp"

namespace fsl {

std::vector<int> sample_participants(size_t n_clients, double fraction, uint64_t seed,
                                     int t) {
  if (n_clients == 0) throw UsageError("sample_participants: n_clients must be positive");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw UsageError("sample_participants: fraction must be in (0, 1]");

  size_t k = static_cast<size_t>(
      std::ceil(fraction * static_cast<double>(n_clients) - 1e-12));
  k = std::max<size_t>(1, std::min(k, n_clients));

  std::vector<int> ids(n_clients);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = substream(seed, "sampling", static_cast<uint64_t>(t));
  for (size_t i = 0; i < k; ++i) {
    size_t j = i + rng.below(n_clients - i);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<Message> Protocol::broadcast_models(
    const ServerState& server, const std::vector<ClientState*>& participants) const {
  if (participants.empty())
    throw UsageError("broadcast_models: participant set must not be empty");

  std::vector<Message> messages;
  for (ClientState* client : participants) {
    client->x_c = server.global_x_c;
    client->a_c = server.global_a_c;
    client->batch_counter = 0;
    client->pending.clear();
    messages.emplace_back(ModelBroadcast{client->id, server.global_x_c, server.global_a_c});
  }
  return messages;
}

size_t Protocol::window_count(const BatchPlan& plan) const {
  size_t h = strategy.upload_period();
  return (plan.batches.size() + h - 1) / h;
}

namespace {

struct LocalStep {
  ParamSet client_grads;
  ParamSet aux_grads;
  double loss = 0.0;
};

LocalStep local_grads(const SplitPlans& plans, const ParamSet& x_c, const ParamSet& a_c,
                      const Tensor& x, const std::vector<int>& y) {
  ForwardTrace client_trace, aux_trace;
  Tensor cut = forward(plans.client, x_c, x, &client_trace);
  Tensor logits = forward(*plans.aux, a_c, cut, &aux_trace);
  LossResult loss = softmax_cross_entropy(logits, y);
  BackwardResult aux_back = backward(*plans.aux, a_c, aux_trace, loss.dlogits);
  BackwardResult client_back = backward(plans.client, x_c, client_trace, aux_back.input_grad);
  return {std::move(client_back.grads), std::move(aux_back.grads), loss.loss};
}

} // namespace

Protocol::WindowResult Protocol::client_local_window(ClientState& client,
                                                     const BatchPlan& plan,
                                                     size_t window_index, double eta,
                                                     int round) const {
  if (!strategy.uses_aux())
    throw UsageError("client_local_window: " + std::string(strategy_name(strategy.kind)) +
                     " clients train against server gradients, not a local loss");
  if (!client.a_c || !plans->aux)
    throw ConfigError("client_local_window: auxiliary head missing for " +
                      std::string(strategy_name(strategy.kind)));
  size_t h = strategy.upload_period();
  size_t first = window_index * h;
  if (first >= plan.batches.size())
    throw UsageError("client_local_window: window index out of range");
  size_t last = std::min(first + h, plan.batches.size());

  WindowResult result;
  for (size_t b = first; b < last; ++b) {
    Tensor x = gather_rows(train->inputs, plan.batches[b]);
    std::vector<int> y = gather_labels(train->labels, plan.batches[b]);
    LocalStep step = local_grads(*plans, client.x_c, *client.a_c, x, y);
    if (estimates)
      estimates->observe_client(global_sq_norm(step.client_grads) +
                                global_sq_norm(step.aux_grads));
    client.x_c = sgd_step(client.x_c, step.client_grads, eta);
    client.a_c = sgd_step(*client.a_c, step.aux_grads, eta);
    client.batch_counter += 1;
    result.losses.push_back(step.loss);
  }

  // upload from the post-window client model, on the window's last batch
  const std::vector<size_t>& upload_batch = plan.batches[last - 1];
  Tensor x = gather_rows(train->inputs, upload_batch);
  result.upload.client = client.id;
  result.upload.round = round;
  result.upload.window = window_index;
  result.upload.activations = forward(plans->client, client.x_c, x);
  result.upload.labels = gather_labels(train->labels, upload_batch);
  return result;
}

SmashedUpload Protocol::client_forward_baseline(ClientState& client, const BatchPlan& plan,
                                                size_t batch_index, int round) const {
  if (!strategy.sends_grad_down())
    throw UsageError("client_forward_baseline: not a gradient-backhaul strategy");
  if (batch_index >= plan.batches.size())
    throw UsageError("client_forward_baseline: batch index out of range");

  const std::vector<size_t>& batch = plan.batches[batch_index];
  Tensor x = gather_rows(train->inputs, batch);

  ClientState::Pending pending;
  pending.window = batch_index;
  SmashedUpload upload;
  upload.client = client.id;
  upload.round = round;
  upload.window = batch_index;
  upload.activations = forward(plans->client, client.x_c, x, &pending.trace);
  upload.labels = gather_labels(train->labels, batch);
  client.pending.push_back(std::move(pending));
  return upload;
}

void Protocol::client_step_baseline(ClientState& client, const GradDown& grad_down,
                                    double eta) const {
  if (client.pending.empty())
    throw ProtocolError("client_step_baseline: no pending trace for client " +
                        std::to_string(client.id));
  ClientState::Pending pending = std::move(client.pending.front());
  client.pending.pop_front();
  if (grad_down.client != client.id || grad_down.window != pending.window)
    throw ProtocolError("client_step_baseline: gradient for window " +
                        std::to_string(grad_down.window) + " does not match pending window " +
                        std::to_string(pending.window));

  BackwardResult back = backward(plans->client, client.x_c, pending.trace,
                                 grad_down.d_smashed);
  if (estimates) estimates->observe_client(global_sq_norm(back.grads));
  client.x_c = sgd_step(client.x_c, back.grads, eta);
  client.batch_counter += 1;
}

Protocol::IngestResult Protocol::server_ingest(ServerState& server,
                                               const SmashedUpload& upload, double eta,
                                               const std::vector<int>& participants) const {
  if (!std::binary_search(participants.begin(), participants.end(), upload.client))
    throw ProtocolError("server_ingest: upload from non-participant client " +
                        std::to_string(upload.client));

  size_t index = strategy.single_server_model() ? 0 : static_cast<size_t>(upload.client);
  if (index >= server.server_models.size())
    throw ProtocolError("server_ingest: no server model for client " +
                        std::to_string(upload.client));
  ParamSet& model = server.server_models[index];

  ForwardTrace trace;
  Tensor logits = forward(plans->server, model, upload.activations, &trace);
  LossResult loss = softmax_cross_entropy(logits, upload.labels);
  BackwardResult back = backward(plans->server, model, trace, loss.dlogits);
  if (estimates) estimates->observe_server(global_sq_norm(back.grads));

  ParamSet grads = std::move(back.grads);
  if (strategy.kind == StrategyKind::FSL_OC)
    grads = clip_by_global_norm(grads, strategy.clip_threshold.value_or(1.0));
  model = sgd_step(model, grads, eta);

  IngestResult result;
  result.loss = loss.loss;
  if (strategy.sends_grad_down())
    result.grad_down = GradDown{upload.client, upload.window, std::move(back.input_grad)};
  return result;
}

void Protocol::aggregate(ServerState& server,
                         const std::vector<ClientModelUpload>& uploads) const {
  if (uploads.empty()) throw UsageError("aggregate: no uploads");
  if (!server.queue.empty())
    throw ProtocolError("aggregate: upload queue not drained before aggregation");

  std::vector<int> seen;
  for (const ClientModelUpload& upload : uploads) {
    if (std::find(seen.begin(), seen.end(), upload.client) != seen.end())
      throw ProtocolError("aggregate: duplicate upload from client " +
                          std::to_string(upload.client));
    seen.push_back(upload.client);
    if (!upload.x_c.compatible(uploads.front().x_c))
      throw ProtocolError("aggregate: incompatible client model from client " +
                          std::to_string(upload.client));
    if (strategy.uses_aux() && !upload.a_c)
      throw ProtocolError("aggregate: missing aux model from client " +
                          std::to_string(upload.client));
  }

  double inv = 1.0 / static_cast<double>(uploads.size());
  ParamSet mean_x = uploads.front().x_c;
  for (auto& [name, t] : mean_x.entries) std::fill(t.data.begin(), t.data.end(), 0.0);
  for (const ClientModelUpload& upload : uploads)
    for (size_t e = 0; e < mean_x.entries.size(); ++e) {
      const auto& src = upload.x_c.entries[e].second.data;
      auto& dst = mean_x.entries[e].second.data;
      for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  for (auto& [name, t] : mean_x.entries)
    for (double& v : t.data) v *= inv;
  server.global_x_c = std::move(mean_x);

  if (strategy.uses_aux()) {
    ParamSet mean_a = *uploads.front().a_c;
    for (auto& [name, t] : mean_a.entries) std::fill(t.data.begin(), t.data.end(), 0.0);
    for (const ClientModelUpload& upload : uploads)
      for (size_t e = 0; e < mean_a.entries.size(); ++e) {
        const auto& src = upload.a_c->entries[e].second.data;
        auto& dst = mean_a.entries[e].second.data;
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    for (auto& [name, t] : mean_a.entries)
      for (double& v : t.data) v *= inv;
    server.global_a_c = std::move(mean_a);
  }
  server.round += 1;
}

Engine::Engine(EngineConfig cfg, SplitModelSpec model, Dataset train, Dataset test)
    : cfg_(std::move(cfg)),
      spec_(std::move(model)),
      plans_(plan_split(spec_)),
      init_(),
      train_(std::move(train)),
      test_(std::move(test)) {
  cfg_.strategy.validate();
  if (cfg_.strategy.uses_aux() && !spec_.aux_head)
    throw ConfigError(std::string(strategy_name(cfg_.strategy.kind)) +
                      " needs an auxiliary head, but the model spec has none");
  if (!cfg_.strategy.uses_aux() && spec_.aux_head)
    throw ConfigError(std::string(strategy_name(cfg_.strategy.kind)) +
                      " never uses the auxiliary head; remove it from the model spec");
  if (train_.feature_shape() != spec_.input_shape)
    throw ConfigError("model input shape " + shape_str(spec_.input_shape) +
                      " does not match dataset features " +
                      shape_str(train_.feature_shape()));
  if (train_.num_classes != spec_.num_classes)
    throw ConfigError("model num_classes " + std::to_string(spec_.num_classes) +
                      " does not match dataset classes " +
                      std::to_string(train_.num_classes));
  if (cfg_.agg_period == 0) throw ConfigError("aggregation period must be positive");
  if (cfg_.epochs == 0) throw ConfigError("epochs must be positive");

  init_ = build(spec_, cfg_.seed);

  partition_ = cfg_.iid_partition
                   ? partition_iid(train_, cfg_.n_clients, cfg_.seed)
                   : partition_label_skew(train_, cfg_.n_clients, cfg_.classes_per_client,
                                          cfg_.seed);

  lr_.eta0 = cfg_.eta0;

  server_.global_x_c = init_.client;
  server_.global_a_c = init_.aux;
  size_t copies = cfg_.strategy.single_server_model() ? 1 : cfg_.n_clients;
  server_.server_models.assign(copies, init_.server);

  clients_.resize(cfg_.n_clients);
  cursor_.resize(cfg_.n_clients);
  for (size_t i = 0; i < cfg_.n_clients; ++i) {
    clients_[i].id = static_cast<int>(i);
    clients_[i].x_c = init_.client;
    clients_[i].a_c = init_.aux;
  }

  proto_.strategy = cfg_.strategy;
  proto_.plans = &plans_;
  proto_.train = &train_;
  proto_.estimates = &estimates_;

  // fixed held-out probe subset for the full-batch gradient-norm estimates
  size_t probe = std::min(cfg_.probe_size, test_.size());
  std::vector<size_t> ids(test_.size());
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = substream(cfg_.seed, "probe");
  for (size_t i = 0; i < probe; ++i) std::swap(ids[i], ids[i + rng.below(ids.size() - i)]);
  ids.resize(probe);
  std::sort(ids.begin(), ids.end());
  probe_inputs_ = gather_rows(test_.inputs, ids);
  probe_labels_ = gather_labels(test_.labels, ids);
}

size_t Engine::windows_per_epoch() const {
  BatchPlan plan = batches(partition_, 0, cfg_.batch_size, 0, cfg_.seed);
  return proto_.window_count(plan);
}

bool Engine::done() const {
  if (cfg_.agg_unit == AggUnit::epochs) return epochs_done_ >= cfg_.epochs;
  return windows_done_ >= cfg_.epochs * windows_per_epoch();
}

const ParamSet& Engine::eval_server_model() const {
  // multi-copy strategies are evaluated with the first copy; copies are never
  // averaged
  return server_.server_models.front();
}

EvalResult Engine::evaluate_test() const {
  return evaluate(plans_.client, server_.global_x_c, plans_.server, eval_server_model(),
                  test_);
}

void Engine::record_probe_grads(double eta) {
  double client_sq = 0.0;
  double server_sq = 0.0;

  if (cfg_.strategy.uses_aux()) {
    LocalStep step =
        local_grads(plans_, server_.global_x_c, *server_.global_a_c, probe_inputs_,
                    probe_labels_);
    client_sq = global_sq_norm(step.client_grads) + global_sq_norm(step.aux_grads);
  } else {
    ForwardTrace client_trace, server_trace;
    Tensor cut = forward(plans_.client, server_.global_x_c, probe_inputs_, &client_trace);
    Tensor logits = forward(plans_.server, eval_server_model(), cut, &server_trace);
    LossResult loss = softmax_cross_entropy(logits, probe_labels_);
    BackwardResult server_back =
        backward(plans_.server, eval_server_model(), server_trace, loss.dlogits);
    BackwardResult client_back =
        backward(plans_.client, server_.global_x_c, client_trace, server_back.input_grad);
    client_sq = global_sq_norm(client_back.grads);
  }

  {
    ForwardTrace server_trace;
    Tensor cut = forward(plans_.client, server_.global_x_c, probe_inputs_);
    Tensor logits = forward(plans_.server, eval_server_model(), cut, &server_trace);
    LossResult loss = softmax_cross_entropy(logits, probe_labels_);
    BackwardResult back =
        backward(plans_.server, eval_server_model(), server_trace, loss.dlogits);
    server_sq = global_sq_norm(back.grads);
  }

  trace_.push(eta, client_sq, server_sq);
}

std::vector<int> Engine::arrival_order(const std::vector<int>& ready, size_t step) const {
  std::vector<int> order = ready;
  if (cfg_.arrival == ArrivalOrder::shuffled) {
    Rng rng = substream(cfg_.seed, "arrival", static_cast<uint64_t>(round_), step);
    rng.shuffle(order);
  }
  return order;
}

void Engine::ingest_and_reply(ClientState& client, SmashedUpload upload, double eta,
                              const std::vector<int>& participants, RoundReport& report) {
  ledger_.record(round_, Message(upload), cfg_.bytes_per_element, cfg_.label_bytes);
  report.smashed_uploads += 1;
  server_.queue.push_back(std::move(upload));
  while (!server_.queue.empty()) {
    SmashedUpload next = std::move(server_.queue.front());
    server_.queue.pop_front();
    Protocol::IngestResult ingest = proto_.server_ingest(server_, next, eta, participants);
    report.server_losses.push_back(ingest.loss);
    if (ingest.grad_down) {
      ledger_.record(round_, Message(*ingest.grad_down), cfg_.bytes_per_element,
                     cfg_.label_bytes);
      report.grad_downs += 1;
      proto_.client_step_baseline(client, *ingest.grad_down, eta);
    }
  }
}

void Engine::run_epoch_unit(const std::vector<int>& participants, double eta,
                            RoundReport& report) {
  std::vector<BatchPlan> plans;
  plans.reserve(participants.size());
  for (int id : participants)
    plans.push_back(batches(partition_, id, cfg_.batch_size, cursor_[id].epoch, cfg_.seed));

  if (cfg_.strategy.uses_aux()) {
    size_t max_windows = 0;
    for (const BatchPlan& plan : plans)
      max_windows = std::max(max_windows, proto_.window_count(plan));
    for (size_t w = 0; w < max_windows; ++w) {
      std::vector<int> ready;
      for (size_t p = 0; p < participants.size(); ++p)
        if (w < proto_.window_count(plans[p])) ready.push_back(participants[p]);
      for (int id : arrival_order(ready, arrival_step_++)) {
        size_t p = std::find(participants.begin(), participants.end(), id) -
                   participants.begin();
        Protocol::WindowResult result =
            proto_.client_local_window(clients_[id], plans[p], w, eta, round_);
        for (size_t i = 0; i < result.losses.size(); ++i)
          report.client_local_losses.emplace_back(id, result.losses[i]);
        ingest_and_reply(clients_[id], std::move(result.upload), eta, participants, report);
      }
    }
  } else {
    size_t max_batches = 0;
    for (const BatchPlan& plan : plans)
      max_batches = std::max(max_batches, plan.batches.size());
    for (size_t m = 0; m < max_batches; ++m) {
      std::vector<int> ready;
      for (size_t p = 0; p < participants.size(); ++p)
        if (m < plans[p].batches.size()) ready.push_back(participants[p]);
      for (int id : arrival_order(ready, arrival_step_++)) {
        size_t p = std::find(participants.begin(), participants.end(), id) -
                   participants.begin();
        SmashedUpload upload =
            proto_.client_forward_baseline(clients_[id], plans[p], m, round_);
        ingest_and_reply(clients_[id], std::move(upload), eta, participants, report);
      }
    }
  }

  for (int id : participants) cursor_[id].epoch += 1;
}

void Engine::run_window_unit(const std::vector<int>& participants, double eta,
                             RoundReport& report) {
  for (int id : arrival_order(participants, arrival_step_++)) {
    ClientState& client = clients_[id];
    Cursor& cur = cursor_[id];
    BatchPlan plan = batches(partition_, id, cfg_.batch_size, cur.epoch, cfg_.seed);

    if (cfg_.strategy.uses_aux()) {
      Protocol::WindowResult result =
          proto_.client_local_window(client, plan, cur.window, eta, round_);
      for (double loss : result.losses)
        report.client_local_losses.emplace_back(id, loss);
      ingest_and_reply(client, std::move(result.upload), eta, participants, report);
      cur.window += 1;
      if (cur.window >= proto_.window_count(plan)) {
        cur.window = 0;
        cur.epoch += 1;
      }
    } else {
      SmashedUpload upload =
          proto_.client_forward_baseline(client, plan, cur.window, round_);
      ingest_and_reply(client, std::move(upload), eta, participants, report);
      cur.window += 1;
      if (cur.window >= plan.batches.size()) {
        cur.window = 0;
        cur.epoch += 1;
      }
    }
  }
}

RoundReport Engine::run_round() {
  if (done()) throw UsageError("run_round: training already finished");

  RoundReport report;
  report.round = round_;
  size_t ledger_start = ledger_.rows.size();
  double eta = lr_.at(round_);

  record_probe_grads(eta);

  report.participants =
      sample_participants(cfg_.n_clients, cfg_.participation_fraction, cfg_.seed, round_);

  std::vector<ClientState*> participant_states;
  for (int id : report.participants) participant_states.push_back(&clients_[id]);
  std::vector<Message> broadcasts = proto_.broadcast_models(server_, participant_states);
  for (const Message& msg : broadcasts) {
    ledger_.record(round_, msg, cfg_.bytes_per_element, cfg_.label_bytes);
    report.broadcasts += 1;
  }

  size_t before_epochs = cursor_.empty() ? 0 : cursor_[0].epoch;
  if (cfg_.agg_unit == AggUnit::epochs) {
    size_t units = std::min(cfg_.agg_period, cfg_.epochs - epochs_done_);
    for (size_t u = 0; u < units; ++u) run_epoch_unit(report.participants, eta, report);
    epochs_done_ += units;
  } else {
    size_t total = cfg_.epochs * windows_per_epoch();
    size_t units = std::min(cfg_.agg_period, total - windows_done_);
    for (size_t u = 0; u < units; ++u) run_window_unit(report.participants, eta, report);
    windows_done_ += units;
    epochs_done_ = cursor_[0].epoch;
  }
  report.epochs_advanced = (cursor_.empty() ? 0 : cursor_[0].epoch) - before_epochs;

  std::vector<ClientModelUpload> uploads;
  for (int id : report.participants) {
    ClientModelUpload upload{id, clients_[id].x_c, clients_[id].a_c};
    ledger_.record(round_, Message(upload), cfg_.bytes_per_element, cfg_.label_bytes);
    report.model_uploads += 1;
    uploads.push_back(std::move(upload));
  }
  proto_.aggregate(server_, uploads);
  round_ = server_.round;

  for (size_t r = ledger_start; r < ledger_.rows.size(); ++r) {
    const LedgerRow& row = ledger_.rows[r];
    if (row.direction == Direction::uplink)
      report.uplink_bytes += row.bytes;
    else
      report.downlink_bytes += row.bytes;
  }

  double loss_sum = 0.0;
  size_t loss_count = 0;
  if (cfg_.strategy.uses_aux()) {
    for (const auto& [id, loss] : report.client_local_losses) {
      loss_sum += loss;
      ++loss_count;
    }
  } else {
    for (double loss : report.server_losses) {
      loss_sum += loss;
      ++loss_count;
    }
  }
  report.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count)
                                 : std::numeric_limits<double>::quiet_NaN();
  if (loss_count && !std::isfinite(report.train_loss))
    throw NumericError("training loss is not finite at round " +
                       std::to_string(report.round));
  return report;
}

} // namespace fsl
