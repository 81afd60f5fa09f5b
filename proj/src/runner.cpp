#include "fslsim/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "fslsim/error.hpp"
#include "fslsim/ledger.hpp"

namespace fsl {

const char* const kMetricsHeader =
    "round,epoch,comm_rounds,uplink_bytes,downlink_bytes,train_loss,test_top1,"
    "grad_norm_client,grad_norm_server,gamma_T,weighted_avg_client,weighted_avg_server";
const char* const kLedgerHeader = "round,client,direction,message_kind,bytes";
const char* const kCompareHeader =
    "strategy,h,round,epoch,comm_rounds,cum_bytes,test_top1";

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void log_line(const RunOptions& opts, const std::string& line) {
  if (opts.log)
    opts.log(line);
  else
    std::cout << line << "\n";
}

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_datasets(const DatasetConfig& cfg, uint64_t seed) {
  LoadedData data;
  switch (cfg.kind) {
    case DatasetConfig::Kind::blobs:
      data.train = gen_gaussian_blobs(cfg.n, cfg.classes, cfg.dim, cfg.sep,
                                      mix_seed(seed, "data-train"));
      data.test = gen_gaussian_blobs(cfg.test_n, cfg.classes, cfg.dim, cfg.sep,
                                     mix_seed(seed, "data-test"));
      break;
    case DatasetConfig::Kind::idx:
      data.train = load_idx(cfg.train_images, cfg.train_labels);
      data.test = load_idx(cfg.test_images, cfg.test_labels);
      break;
    case DatasetConfig::Kind::csv:
      data.train = load_csv(cfg.train_csv);
      data.test = load_csv(cfg.test_csv);
      break;
  }
  if (data.train.num_classes < data.test.num_classes)
    data.train.num_classes = data.test.num_classes;
  else
    data.test.num_classes = data.train.num_classes;
  return data;
}

EngineConfig engine_config(const ExperimentConfig& cfg, uint64_t seed) {
  EngineConfig ec;
  ec.strategy = cfg.strategy;
  ec.n_clients = cfg.n_clients;
  ec.participation_fraction = cfg.participation_fraction;
  ec.eta0 = cfg.eta0;
  ec.batch_size = cfg.batch_size;
  ec.agg_unit = cfg.agg_unit;
  ec.agg_period = cfg.agg_period;
  ec.epochs = cfg.epochs;
  ec.bytes_per_element = cfg.bytes_per_element;
  ec.label_bytes = cfg.label_bytes;
  ec.probe_size = cfg.probe_size;
  ec.seed = seed;
  ec.arrival = cfg.arrival;
  ec.iid_partition = cfg.partition.mode == PartitionConfig::Mode::iid;
  ec.classes_per_client = cfg.partition.classes_per_client;
  return ec;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, std::ostream& out) {
  out << kMetricsHeader << '\n';
  for (const MetricsRow& r : rows) {
    out << r.round << ',' << r.epoch << ',' << r.comm_rounds << ',' << r.uplink_bytes
        << ',' << r.downlink_bytes << ',' << fmt_double(r.train_loss) << ','
        << fmt_double(r.test_top1) << ',' << fmt_double(r.grad_norm_client) << ','
        << fmt_double(r.grad_norm_server) << ',' << fmt_double(r.gamma_T) << ','
        << fmt_double(r.weighted_avg_client) << ',' << fmt_double(r.weighted_avg_server)
        << '\n';
  }
}

SeedRunResult run_one_seed(const ExperimentConfig& cfg, uint64_t seed,
                           const std::filesystem::path& out_root) {
  LoadedData data = load_datasets(cfg.dataset, seed);
  Engine engine(engine_config(cfg, seed), cfg.model, std::move(data.train),
                std::move(data.test));

  SeedRunResult result;
  result.seed = seed;
  result.dir = out_root / ("seed_" + std::to_string(seed));
  std::filesystem::create_directories(result.dir);

  double last_top1 = 0.0;
  double last_loss = 0.0;
  while (!engine.done()) {
    RoundReport report = engine.run_round();
    bool final_round = engine.done();
    if (static_cast<size_t>(report.round) % cfg.eval_every == 0 || final_round) {
      EvalResult eval = engine.evaluate_test();
      last_top1 = eval.top1;
      last_loss = eval.mean_loss;
      if (!std::isfinite(eval.mean_loss))
        throw NumericError("test loss is not finite at round " +
                           std::to_string(report.round));
    }

    MetricsRow row;
    row.round = report.round;
    row.epoch = engine.epochs_completed();
    row.comm_rounds = engine.ledger().comm_rounds;
    row.uplink_bytes = engine.ledger().uplink_bytes;
    row.downlink_bytes = engine.ledger().downlink_bytes;
    row.train_loss = report.train_loss;
    row.test_top1 = last_top1;
    size_t t = static_cast<size_t>(report.round);
    row.grad_norm_client = engine.trace().client_grad_sq[t];
    row.grad_norm_server = engine.trace().server_grad_sq[t];
    row.gamma_T = engine.trace().gamma(t + 1);
    row.weighted_avg_client = weighted_grad_average(engine.trace(), Side::client_side, t + 1);
    row.weighted_avg_server = weighted_grad_average(engine.trace(), Side::server_side, t + 1);
    result.rows.push_back(row);
  }

  result.final_top1 = last_top1;
  result.final_loss = last_loss;
  result.uplink_bytes = engine.ledger().uplink_bytes;
  result.downlink_bytes = engine.ledger().downlink_bytes;
  result.comm_rounds = engine.ledger().comm_rounds;
  result.storage_params =
      storage_of(cfg.strategy, cfg.n_clients, engine.plans().client.param_count(),
                 engine.plans().aux ? engine.plans().aux->param_count() : 0,
                 engine.plans().server.param_count());

  {
    std::ofstream out(result.dir / "metrics.csv", std::ios::binary);
    write_metrics_csv(result.rows, out);
  }
  {
    std::ofstream out(result.dir / "ledger.csv", std::ios::binary);
    write_ledger_csv(engine.ledger(), out);
  }
  {
    std::ofstream out(result.dir / "summary.txt", std::ios::binary);
    out << "strategy: " << strategy_name(cfg.strategy.kind) << '\n'
        << "h: " << cfg.strategy.h << '\n'
        << "seed: " << seed << '\n'
        << "rounds: " << engine.round() << '\n'
        << "epochs: " << engine.epochs_completed() << '\n'
        << "final_test_top1: " << fmt_double(result.final_top1) << '\n'
        << "final_test_loss: " << fmt_double(result.final_loss) << '\n'
        << "total_uplink_bytes: " << result.uplink_bytes << '\n'
        << "total_downlink_bytes: " << result.downlink_bytes << '\n'
        << "total_load_bytes: " << result.uplink_bytes + result.downlink_bytes << '\n'
        << "comm_rounds: " << result.comm_rounds << '\n'
        << "storage_params: " << result.storage_params << '\n'
        << "g1_sq_estimate: " << fmt_double(engine.estimates().client_grad_sq_max) << '\n'
        << "g2_sq_estimate: " << fmt_double(engine.estimates().server_grad_sq_max) << '\n';
  }
  return result;
}

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v);
  double sq = 0.0;
  for (double x : v) sq += (x - m) * (x - m);
  return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

} // namespace

RunOutputs run_experiment(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  ExperimentConfig cfg = cfg_in;

  std::optional<uint64_t> seed_override = opts.seed_override;
  if (!seed_override) {
    if (const char* env = std::getenv("FSLSIM_SEED")) seed_override = std::strtoull(env, nullptr, 10);
  }
  std::string out_dir = cfg.output_dir;
  if (opts.out_override)
    out_dir = *opts.out_override;
  else if (const char* env = std::getenv("FSLSIM_OUT"))
    out_dir = env;

  std::vector<uint64_t> seeds = cfg.effective_seeds();
  if (seed_override) seeds = {*seed_override};

  RunOutputs outputs;
  if (cfg.strategy.kind == StrategyKind::FSL_OC && !cfg.strategy.clip_threshold)
    outputs.notes.push_back("FSL_OC: clip_threshold not set; using default 1.0");
  for (const std::string& warning : spec_warnings(cfg.model))
    outputs.notes.push_back("model: " + warning);
  for (const std::string& note : outputs.notes) log_line(opts, note);

  std::filesystem::path out_root(out_dir);
  std::filesystem::create_directories(out_root);

  outputs.seeds.resize(seeds.size());
  std::exception_ptr failure;
  std::mutex mu;
  size_t next = 0;
  size_t workers = std::max<size_t>(1, std::min(opts.threads, seeds.size()));

  auto work = [&]() {
    for (;;) {
      size_t index;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure || next >= seeds.size()) return;
        index = next++;
      }
      try {
        SeedRunResult result = run_one_seed(cfg, seeds[index], out_root);
        std::lock_guard<std::mutex> lock(mu);
        outputs.seeds[index] = std::move(result);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> threads;
    for (size_t w = 0; w < workers; ++w) threads.emplace_back(work);
    for (std::thread& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<double> top1, load;
  for (const SeedRunResult& r : outputs.seeds) {
    top1.push_back(r.final_top1);
    load.push_back(static_cast<double>(r.uplink_bytes + r.downlink_bytes));
    log_line(opts, "seed " + std::to_string(r.seed) +
                       ": final_test_top1=" + fmt_double(r.final_top1) +
                       " total_load_bytes=" +
                       std::to_string(r.uplink_bytes + r.downlink_bytes));
  }
  {
    std::ofstream out(out_root / "summary_aggregate.txt", std::ios::binary);
    out << "seeds: " << seeds.size() << '\n'
        << "final_test_top1_mean: " << fmt_double(mean_of(top1)) << '\n'
        << "final_test_top1_std: " << fmt_double(std_of(top1)) << '\n'
        << "total_load_bytes_mean: " << fmt_double(mean_of(load)) << '\n'
        << "total_load_bytes_std: " << fmt_double(std_of(load)) << '\n'
        << "storage_params: " << outputs.seeds.front().storage_params << '\n';
  }
  return outputs;
}

void compare_experiments(const std::vector<ExperimentConfig>& configs,
                         const std::filesystem::path& out_dir, const RunOptions& opts) {
  if (configs.size() < 2)
    throw UsageError("compare: need at least two configs");

  nlohmann::json reference_dataset = to_json(configs.front())["dataset"];
  nlohmann::json reference_model = to_json(configs.front())["model"];
  for (const ExperimentConfig& cfg : configs) {
    nlohmann::json j = to_json(cfg);
    if (j["dataset"] != reference_dataset || j["model"] != reference_model)
      throw UsageError("compare: configs must share dataset and model");
  }

  std::filesystem::create_directories(out_dir);
  std::ofstream out(out_dir / "compare.csv", std::ios::binary);
  out << kCompareHeader << '\n';

  for (const ExperimentConfig& cfg : configs) {
    ExperimentConfig single = cfg;
    single.seeds.clear();
    single.seed = cfg.effective_seeds().front();
    RunOptions seed_opts = opts;
    seed_opts.out_override =
        (out_dir / ("run_" + std::string(strategy_name(cfg.strategy.kind)) + "_h" +
                    std::to_string(cfg.strategy.h)))
            .string();
    RunOutputs outputs = run_experiment(single, seed_opts);
    const SeedRunResult& result = outputs.seeds.front();
    for (const MetricsRow& row : result.rows)
      out << strategy_name(cfg.strategy.kind) << ',' << cfg.strategy.h << ',' << row.round
          << ',' << row.epoch << ',' << row.comm_rounds << ','
          << row.uplink_bytes + row.downlink_bytes << ',' << fmt_double(row.test_top1)
          << '\n';
  }
}

} // namespace fsl
