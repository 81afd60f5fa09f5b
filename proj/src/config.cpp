#include "fslsim/config.hpp"

#include <fstream>
#include <set>

#include "fslsim/error.hpp"

namespace fsl {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
}

void check_keys(const json& j, const std::string& path,
                const std::set<std::string>& allowed) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items())
    if (!allowed.contains(key))
      fail(path.empty() ? key : path + "." + key, "unknown key");
}

const json& require(const json& j, const std::string& path, const std::string& key) {
  if (!j.contains(key)) fail(path.empty() ? key : path + "." + key, "missing");
  return j.at(key);
}

template <typename T>
T get_number(const json& j, const std::string& path) {
  if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) fail(path, "expected a number");
  } else {
    if (!j.is_number_integer() || (std::is_unsigned_v<T> && j.is_number_integer() &&
                                   j.get<long long>() < 0))
      fail(path, "expected a nonnegative integer");
  }
  return j.get<T>();
}

size_t get_positive(const json& j, const std::string& path) {
  size_t v = get_number<size_t>(j, path);
  if (v == 0) fail(path, "must be positive");
  return v;
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

std::vector<size_t> get_shape(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of extents");
  std::vector<size_t> shape;
  for (size_t i = 0; i < j.size(); ++i)
    shape.push_back(get_positive(j.at(i), path + "[" + std::to_string(i) + "]"));
  return shape;
}

LayerSpec parse_layer(const json& j, const std::string& path) {
  expect_object(j, path);
  std::string kind = get_string(require(j, path, "kind"), path + ".kind");
  if (kind == "dense") {
    check_keys(j, path, {"kind", "out"});
    return LayerSpec::dense(get_positive(require(j, path, "out"), path + ".out"));
  }
  if (kind == "relu") {
    check_keys(j, path, {"kind"});
    return LayerSpec::relu();
  }
  if (kind == "flatten") {
    check_keys(j, path, {"kind"});
    return LayerSpec::flatten();
  }
  if (kind == "conv2d") {
    check_keys(j, path, {"kind", "out_channels", "kernel", "stride"});
    size_t stride = j.contains("stride") ? get_positive(j.at("stride"), path + ".stride") : 1;
    return LayerSpec::conv2d(
        get_positive(require(j, path, "out_channels"), path + ".out_channels"),
        get_positive(require(j, path, "kernel"), path + ".kernel"), stride);
  }
  fail(path + ".kind", "unknown layer kind \"" + kind + "\"");
}

Stack parse_stack(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a non-empty array of layers");
  Stack stack;
  for (size_t i = 0; i < j.size(); ++i)
    stack.push_back(parse_layer(j.at(i), path + "[" + std::to_string(i) + "]"));
  return stack;
}

json layer_to_json(const LayerSpec& layer) {
  json j;
  j["kind"] = std::string(layer_kind_name(layer.kind));
  if (layer.kind == LayerKind::dense) j["out"] = layer.out_features;
  if (layer.kind == LayerKind::conv2d) {
    j["out_channels"] = layer.out_channels;
    j["kernel"] = layer.kernel;
    j["stride"] = layer.stride;
  }
  return j;
}

json stack_to_json(const Stack& stack) {
  json j = json::array();
  for (const LayerSpec& layer : stack) j.push_back(layer_to_json(layer));
  return j;
}

SplitModelSpec parse_model(const json& j, const std::string& path) {
  check_keys(j, path, {"input_shape", "client", "aux", "server", "num_classes"});
  SplitModelSpec spec;
  spec.input_shape = get_shape(require(j, path, "input_shape"), path + ".input_shape");
  spec.client_stack = parse_stack(require(j, path, "client"), path + ".client");
  spec.server_stack = parse_stack(require(j, path, "server"), path + ".server");
  spec.num_classes = get_positive(require(j, path, "num_classes"), path + ".num_classes");

  if (j.contains("aux") && !j.at("aux").is_null()) {
    const json& aux = j.at("aux");
    if (aux.is_array()) {
      spec.aux_head = parse_stack(aux, path + ".aux");
    } else if (aux.is_object()) {
      // shorthand: built against the client stack's cut shape
      check_keys(aux, path + ".aux", {"kind", "hidden", "channels"});
      AuxHeadKind kind;
      std::string variant = get_string(require(aux, path + ".aux", "kind"),
                                       path + ".aux.kind");
      if (variant == "mlp")
        kind.variant = AuxHeadVariant::mlp;
      else if (variant == "conv1x1_mlp")
        kind.variant = AuxHeadVariant::conv1x1_mlp;
      else
        fail(path + ".aux.kind", "expected \"mlp\" or \"conv1x1_mlp\"");
      if (aux.contains("hidden")) {
        const json& hidden = aux.at("hidden");
        if (!hidden.is_array()) fail(path + ".aux.hidden", "expected an array");
        for (size_t i = 0; i < hidden.size(); ++i)
          kind.hidden.push_back(get_positive(hidden.at(i), path + ".aux.hidden[" +
                                                               std::to_string(i) + "]"));
      }
      if (aux.contains("channels"))
        kind.channels = get_positive(aux.at("channels"), path + ".aux.channels");
      StackPlan client_plan = plan_stack(spec.client_stack, spec.input_shape);
      spec.aux_head = make_aux_head(kind, client_plan.output_shape(), spec.num_classes);
    } else {
      fail(path + ".aux", "expected an array of layers or an aux-head shorthand object");
    }
  }
  plan_split(spec);  // surfaces chaining errors at parse time
  return spec;
}

DatasetConfig parse_dataset(const json& j, const std::string& path) {
  DatasetConfig cfg;
  std::string kind = get_string(require(j, path, "kind"), path + ".kind");
  if (kind == "blobs") {
    check_keys(j, path, {"kind", "n", "classes", "dim", "sep", "test_n"});
    cfg.kind = DatasetConfig::Kind::blobs;
    if (j.contains("n")) cfg.n = get_positive(j.at("n"), path + ".n");
    if (j.contains("classes")) cfg.classes = get_positive(j.at("classes"), path + ".classes");
    if (j.contains("dim")) cfg.dim = get_positive(j.at("dim"), path + ".dim");
    if (j.contains("sep")) {
      cfg.sep = get_number<double>(j.at("sep"), path + ".sep");
      if (!(cfg.sep >= 0.0)) fail(path + ".sep", "must be nonnegative");
    }
    if (j.contains("test_n")) cfg.test_n = get_positive(j.at("test_n"), path + ".test_n");
  } else if (kind == "idx") {
    check_keys(j, path, {"kind", "train_images", "train_labels", "test_images",
                         "test_labels"});
    cfg.kind = DatasetConfig::Kind::idx;
    cfg.train_images = get_string(require(j, path, "train_images"), path + ".train_images");
    cfg.train_labels = get_string(require(j, path, "train_labels"), path + ".train_labels");
    cfg.test_images = get_string(require(j, path, "test_images"), path + ".test_images");
    cfg.test_labels = get_string(require(j, path, "test_labels"), path + ".test_labels");
  } else if (kind == "csv") {
    check_keys(j, path, {"kind", "train", "test"});
    cfg.kind = DatasetConfig::Kind::csv;
    cfg.train_csv = get_string(require(j, path, "train"), path + ".train");
    cfg.test_csv = get_string(require(j, path, "test"), path + ".test");
  } else {
    fail(path + ".kind", "expected \"blobs\", \"idx\" or \"csv\"");
  }
  return cfg;
}

} // namespace

std::vector<uint64_t> ExperimentConfig::effective_seeds() const {
  if (!seeds.empty()) return seeds;
  return {seed};
}

ExperimentConfig parse_config(const json& j) {
  check_keys(j, "", {"dataset", "model", "strategy", "h", "clip_threshold",
                     "aggregation_unit", "aggregation_period", "n_clients",
                     "participation_fraction", "partition", "batch_size", "eta0", "epochs",
                     "seed", "seeds", "bytes_per_element", "label_bytes", "probe_size",
                     "eval_every", "arrival_order", "output_dir"});

  ExperimentConfig cfg;
  cfg.dataset = parse_dataset(require(j, "", "dataset"), "dataset");
  cfg.model = parse_model(require(j, "", "model"), "model");

  cfg.strategy.kind = strategy_from_name(get_string(require(j, "", "strategy"), "strategy"));
  if (j.contains("h")) cfg.strategy.h = get_positive(j.at("h"), "h");
  if (j.contains("clip_threshold")) {
    double clip = get_number<double>(j.at("clip_threshold"), "clip_threshold");
    if (!(clip > 0.0)) fail("clip_threshold", "must be positive");
    cfg.strategy.clip_threshold = clip;
  }
  cfg.strategy.validate();
  if (cfg.strategy.uses_aux() && !cfg.model.aux_head)
    fail("model.aux", "required for strategy " +
                          std::string(strategy_name(cfg.strategy.kind)));
  if (!cfg.strategy.uses_aux() && cfg.model.aux_head)
    fail("model.aux", std::string(strategy_name(cfg.strategy.kind)) +
                          " never uses the auxiliary head; remove it");

  if (j.contains("aggregation_unit")) {
    std::string unit = get_string(j.at("aggregation_unit"), "aggregation_unit");
    if (unit == "epochs")
      cfg.agg_unit = AggUnit::epochs;
    else if (unit == "windows")
      cfg.agg_unit = AggUnit::windows;
    else
      fail("aggregation_unit", "expected \"epochs\" or \"windows\"");
  }
  if (j.contains("aggregation_period"))
    cfg.agg_period = get_positive(j.at("aggregation_period"), "aggregation_period");

  if (j.contains("n_clients")) cfg.n_clients = get_positive(j.at("n_clients"), "n_clients");

  if (j.contains("participation_fraction")) {
    cfg.participation_fraction =
        get_number<double>(j.at("participation_fraction"), "participation_fraction");
    if (!(cfg.participation_fraction > 0.0 && cfg.participation_fraction <= 1.0))
      fail("participation_fraction", "must be in (0, 1]");
  }

  if (j.contains("partition")) {
    const json& p = j.at("partition");
    check_keys(p, "partition", {"mode", "classes_per_client"});
    std::string mode = get_string(require(p, "partition", "mode"), "partition.mode");
    if (mode == "iid") {
      cfg.partition.mode = PartitionConfig::Mode::iid;
      if (p.contains("classes_per_client"))
        fail("partition.classes_per_client", "only valid for label_skew");
    } else if (mode == "label_skew") {
      cfg.partition.mode = PartitionConfig::Mode::label_skew;
      cfg.partition.classes_per_client = get_positive(
          require(p, "partition", "classes_per_client"), "partition.classes_per_client");
    } else {
      fail("partition.mode", "expected \"iid\" or \"label_skew\"");
    }
  }

  if (j.contains("batch_size")) cfg.batch_size = get_positive(j.at("batch_size"), "batch_size");
  if (j.contains("eta0")) {
    cfg.eta0 = get_number<double>(j.at("eta0"), "eta0");
    if (!(cfg.eta0 > 0.0)) fail("eta0", "must be positive");
  }
  if (j.contains("epochs")) cfg.epochs = get_positive(j.at("epochs"), "epochs");
  if (j.contains("seed")) cfg.seed = get_number<uint64_t>(j.at("seed"), "seed");
  if (j.contains("seeds")) {
    const json& seeds = j.at("seeds");
    if (!seeds.is_array() || seeds.empty()) fail("seeds", "expected a non-empty array");
    for (size_t i = 0; i < seeds.size(); ++i)
      cfg.seeds.push_back(
          get_number<uint64_t>(seeds.at(i), "seeds[" + std::to_string(i) + "]"));
  }
  if (j.contains("bytes_per_element"))
    cfg.bytes_per_element = get_positive(j.at("bytes_per_element"), "bytes_per_element");
  if (j.contains("label_bytes"))
    cfg.label_bytes = get_positive(j.at("label_bytes"), "label_bytes");
  if (j.contains("probe_size")) cfg.probe_size = get_positive(j.at("probe_size"), "probe_size");
  if (j.contains("eval_every")) cfg.eval_every = get_positive(j.at("eval_every"), "eval_every");
  if (j.contains("arrival_order")) {
    std::string order = get_string(j.at("arrival_order"), "arrival_order");
    if (order == "client_id")
      cfg.arrival = ArrivalOrder::client_id;
    else if (order == "shuffled")
      cfg.arrival = ArrivalOrder::shuffled;
    else
      fail("arrival_order", "expected \"client_id\" or \"shuffled\"");
  }
  if (j.contains("output_dir")) cfg.output_dir = get_string(j.at("output_dir"), "output_dir");

  if (cfg.dataset.kind == DatasetConfig::Kind::blobs) {
    if (cfg.model.num_classes != cfg.dataset.classes)
      fail("model.num_classes", "does not match dataset.classes");
    if (cfg.model.input_shape != std::vector<size_t>{cfg.dataset.dim})
      fail("model.input_shape", "blobs produce flat features of extent dataset.dim");
    if (cfg.n_clients > cfg.dataset.n) fail("n_clients", "more clients than examples");
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return parse_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  switch (cfg.dataset.kind) {
    case DatasetConfig::Kind::blobs:
      j["dataset"] = {{"kind", "blobs"},   {"n", cfg.dataset.n},
                      {"classes", cfg.dataset.classes}, {"dim", cfg.dataset.dim},
                      {"sep", cfg.dataset.sep},         {"test_n", cfg.dataset.test_n}};
      break;
    case DatasetConfig::Kind::idx:
      j["dataset"] = {{"kind", "idx"},
                      {"train_images", cfg.dataset.train_images},
                      {"train_labels", cfg.dataset.train_labels},
                      {"test_images", cfg.dataset.test_images},
                      {"test_labels", cfg.dataset.test_labels}};
      break;
    case DatasetConfig::Kind::csv:
      j["dataset"] = {{"kind", "csv"},
                      {"train", cfg.dataset.train_csv},
                      {"test", cfg.dataset.test_csv}};
      break;
  }

  json model;
  model["input_shape"] = cfg.model.input_shape;
  model["client"] = stack_to_json(cfg.model.client_stack);
  if (cfg.model.aux_head) model["aux"] = stack_to_json(*cfg.model.aux_head);
  model["server"] = stack_to_json(cfg.model.server_stack);
  model["num_classes"] = cfg.model.num_classes;
  j["model"] = std::move(model);

  j["strategy"] = std::string(strategy_name(cfg.strategy.kind));
  j["h"] = cfg.strategy.h;
  if (cfg.strategy.clip_threshold) j["clip_threshold"] = *cfg.strategy.clip_threshold;
  j["aggregation_unit"] = cfg.agg_unit == AggUnit::epochs ? "epochs" : "windows";
  j["aggregation_period"] = cfg.agg_period;
  j["n_clients"] = cfg.n_clients;
  j["participation_fraction"] = cfg.participation_fraction;
  if (cfg.partition.mode == PartitionConfig::Mode::iid)
    j["partition"] = {{"mode", "iid"}};
  else
    j["partition"] = {{"mode", "label_skew"},
                      {"classes_per_client", cfg.partition.classes_per_client}};
  j["batch_size"] = cfg.batch_size;
  j["eta0"] = cfg.eta0;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  if (!cfg.seeds.empty()) j["seeds"] = cfg.seeds;
  j["bytes_per_element"] = cfg.bytes_per_element;
  j["label_bytes"] = cfg.label_bytes;
  j["probe_size"] = cfg.probe_size;
  j["eval_every"] = cfg.eval_every;
  j["arrival_order"] = cfg.arrival == ArrivalOrder::client_id ? "client_id" : "shuffled";
  j["output_dir"] = cfg.output_dir;
  return j;
}

} // namespace fsl
