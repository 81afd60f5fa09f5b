#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "fslsim/model.hpp"
#include "fslsim/protocol.hpp"
#include "fslsim/strategy.hpp"

namespace fsl {

struct DatasetConfig {
  enum class Kind { blobs, idx, csv };
  Kind kind = Kind::blobs;

  // blobs
  size_t n = 6000;
  size_t classes = 3;
  size_t dim = 8;
  double sep = 10.0;
  size_t test_n = 1500;

  // idx
  std::string train_images, train_labels, test_images, test_labels;

  // csv
  std::string train_csv, test_csv;
};

struct PartitionConfig {
  enum class Mode { iid, label_skew };
  Mode mode = Mode::iid;
  size_t classes_per_client = 2;
};

// The validated, closed-world experiment description. Unknown keys and
// cross-field inconsistencies are rejected at parse time.
struct ExperimentConfig {
  DatasetConfig dataset;
  SplitModelSpec model;
  Strategy strategy;
  AggUnit agg_unit = AggUnit::epochs;
  size_t agg_period = 1;
  size_t n_clients = 5;
  double participation_fraction = 1.0;
  PartitionConfig partition;
  size_t batch_size = 32;
  double eta0 = 0.1;
  size_t epochs = 100;
  uint64_t seed = 1;
  std::vector<uint64_t> seeds;  // optional multi-seed sweep; overrides seed
  size_t bytes_per_element = 4;
  size_t label_bytes = 1;
  size_t probe_size = 512;
  size_t eval_every = 1;
  ArrivalOrder arrival = ArrivalOrder::client_id;
  std::string output_dir = "out";

  std::vector<uint64_t> effective_seeds() const;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

} // namespace fsl
