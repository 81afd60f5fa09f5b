#include "fslsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fslsim/error.hpp"
#include "fslsim/rng.hpp"

namespace fsl {

std::vector<size_t> Dataset::feature_shape() const {
  return {inputs.shape.begin() + 1, inputs.shape.end()};
}

Tensor gather_rows(const Tensor& inputs, const std::vector<size_t>& indices) {
  size_t row = inputs.row_numel();
  std::vector<size_t> shape = inputs.shape;
  shape[0] = indices.size();
  Tensor out(shape);
  for (size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= inputs.rows())
      throw UsageError("gather_rows: index " + std::to_string(indices[r]) + " out of range");
    std::copy_n(&inputs.data[indices[r] * row], row, &out.data[r * row]);
  }
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<size_t>& indices) {
  std::vector<int> out(indices.size());
  for (size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= labels.size())
      throw UsageError("gather_labels: index out of range");
    out[r] = labels[indices[r]];
  }
  return out;
}

Partition partition_iid(const Dataset& dataset, size_t n_clients, uint64_t seed) {
  if (n_clients == 0) throw UsageError("partition_iid: n_clients must be positive");
  if (n_clients > dataset.size())
    throw UsageError("partition_iid: more clients than examples");

  std::vector<size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = substream(seed, "partition-iid");
  rng.shuffle(order);

  Partition partition;
  partition.client_indices.resize(n_clients);
  for (size_t j = 0; j < order.size(); ++j)
    partition.client_indices[j % n_clients].push_back(order[j]);
  return partition;
}

Partition partition_label_skew(const Dataset& dataset, size_t n_clients,
                               size_t classes_per_client, uint64_t seed) {
  if (n_clients == 0) throw UsageError("partition_label_skew: n_clients must be positive");
  if (classes_per_client == 0)
    throw UsageError("partition_label_skew: classes_per_client must be positive");
  if (n_clients > dataset.size())
    throw UsageError("partition_label_skew: more clients than examples");
  size_t num_classes = dataset.num_classes;
  if (classes_per_client * n_clients < num_classes)
    throw ConfigError("partition_label_skew: " + std::to_string(n_clients) + " clients x " +
                      std::to_string(classes_per_client) +
                      " classes cannot cover " + std::to_string(num_classes) + " classes");

  Rng rng = substream(seed, "partition-skew");
  std::vector<size_t> class_perm(num_classes);
  std::iota(class_perm.begin(), class_perm.end(), 0);
  rng.shuffle(class_perm);

  // client i holds the classes of slots [i*s, (i+1)*s); the cyclic layout
  // guarantees every class lands on at least one client
  size_t s = classes_per_client;
  std::vector<std::vector<std::pair<size_t, size_t>>> holders(num_classes);
  for (size_t slot = 0; slot < n_clients * s; ++slot) {
    size_t cls = class_perm[slot % num_classes];
    holders[cls].emplace_back(slot / s, holders[cls].size());
  }

  std::vector<std::vector<size_t>> by_class(num_classes);
  for (size_t i = 0; i < dataset.size(); ++i)
    by_class[static_cast<size_t>(dataset.labels[i])].push_back(i);

  Partition partition;
  partition.client_indices.resize(n_clients);
  for (size_t cls = 0; cls < num_classes; ++cls) {
    std::vector<size_t>& pool = by_class[cls];
    Rng class_rng = substream(seed, "partition-skew-class", cls);
    class_rng.shuffle(pool);
    size_t parts = holders[cls].size();
    size_t base = pool.size() / parts;
    size_t rem = pool.size() % parts;
    size_t offset = 0;
    for (size_t r = 0; r < parts; ++r) {
      size_t take = base + (r < rem ? 1 : 0);
      auto& shard = partition.client_indices[holders[cls][r].first];
      shard.insert(shard.end(), pool.begin() + offset, pool.begin() + offset + take);
      offset += take;
    }
  }
  return partition;
}

BatchPlan batches(const Partition& partition, int client, size_t batch_size,
                  size_t epoch, uint64_t seed) {
  if (client < 0 || static_cast<size_t>(client) >= partition.n_clients())
    throw UsageError("batches: client " + std::to_string(client) + " out of range");
  if (batch_size == 0) throw UsageError("batches: batch_size must be positive");
  const std::vector<size_t>& shard = partition.client_indices[client];
  if (shard.empty())
    throw DataError("batches: client " + std::to_string(client) + " has an empty shard");

  std::vector<size_t> order = shard;
  Rng rng = substream(seed, "batches", static_cast<uint64_t>(client), epoch);
  rng.shuffle(order);

  BatchPlan plan;
  plan.client = client;
  plan.batch_size = batch_size;
  for (size_t start = 0; start < order.size(); start += batch_size) {
    size_t end = std::min(start + batch_size, order.size());
    plan.batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return plan;
}

namespace {

struct IdxFile {
  std::vector<size_t> dims;
  std::vector<uint8_t> payload;
};

IdxFile read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 4) throw ParseError(path + ": truncated header at byte 0");
  if (bytes[0] != 0 || bytes[1] != 0)
    throw ParseError(path + ": bad magic at byte 0");
  if (bytes[2] != 0x08)
    throw ParseError(path + ": unsupported type code at byte 2 (only unsigned byte)");
  size_t ndims = bytes[3];
  if (ndims == 0 || ndims > 4)
    throw ParseError(path + ": unsupported dimension count at byte 3");
  if (bytes.size() < 4 + 4 * ndims)
    throw ParseError(path + ": truncated header at byte " + std::to_string(bytes.size()));

  IdxFile file;
  size_t total = 1;
  for (size_t d = 0; d < ndims; ++d) {
    size_t off = 4 + 4 * d;
    uint32_t extent = (uint32_t(bytes[off]) << 24) | (uint32_t(bytes[off + 1]) << 16) |
                      (uint32_t(bytes[off + 2]) << 8) | uint32_t(bytes[off + 3]);
    if (extent == 0) throw ParseError(path + ": zero extent at byte " + std::to_string(off));
    file.dims.push_back(extent);
    total *= extent;
  }
  size_t header = 4 + 4 * ndims;
  if (bytes.size() != header + total)
    throw ParseError(path + ": expected " + std::to_string(header + total) +
                     " bytes, got " + std::to_string(bytes.size()) + " (payload at byte " +
                     std::to_string(header) + ")");
  file.payload.assign(bytes.begin() + header, bytes.end());
  return file;
}

void minmax_normalize(Tensor& inputs) {
  size_t n = inputs.rows();
  size_t features = inputs.row_numel();
  for (size_t f = 0; f < features; ++f) {
    double lo = inputs.data[f], hi = inputs.data[f];
    for (size_t r = 1; r < n; ++r) {
      double v = inputs.data[r * features + f];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    double span = hi - lo;
    for (size_t r = 0; r < n; ++r) {
      double& v = inputs.data[r * features + f];
      v = span > 0.0 ? (v - lo) / span : 0.0;
    }
  }
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  IdxFile images = read_idx(images_path);
  IdxFile labels = read_idx(labels_path);
  if (images.dims.size() < 2)
    throw ParseError(images_path + ": image file needs at least 2 dimensions");
  if (labels.dims.size() != 1)
    throw ParseError(labels_path + ": label file must be 1-dimensional");
  if (images.dims[0] != labels.dims[0])
    throw DataError(images_path + ": " + std::to_string(images.dims[0]) + " images vs " +
                    std::to_string(labels.dims[0]) + " labels");

  Dataset dataset;
  std::vector<size_t> shape;
  shape.push_back(images.dims[0]);
  if (images.dims.size() == 3) {
    shape.push_back(1);  // channel axis for conv stacks
    shape.push_back(images.dims[1]);
    shape.push_back(images.dims[2]);
  } else {
    for (size_t d = 1; d < images.dims.size(); ++d) shape.push_back(images.dims[d]);
  }
  dataset.inputs = Tensor(shape);
  for (size_t i = 0; i < images.payload.size(); ++i)
    dataset.inputs.data[i] = static_cast<double>(images.payload[i]);
  minmax_normalize(dataset.inputs);

  int max_label = 0;
  dataset.labels.resize(labels.payload.size());
  for (size_t i = 0; i < labels.payload.size(); ++i) {
    dataset.labels[i] = labels.payload[i];
    max_label = std::max(max_label, dataset.labels[i]);
  }
  dataset.num_classes = static_cast<size_t>(max_label) + 1;
  return dataset;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": missing header row");
  size_t columns = std::count(line.begin(), line.end(), ',') + 1;
  if (columns < 2) throw ParseError(path + ": need at least one feature and a label column");

  std::vector<double> values;
  std::vector<int> labels;
  size_t line_no = 1;
  int max_label = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    size_t col = 0;
    double label_value = 0.0;
    while (std::getline(row, cell, ',')) {
      double v;
      try {
        size_t used = 0;
        v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number \"" + cell + "\"");
      }
      if (col + 1 == columns)
        label_value = v;
      else
        values.push_back(v);
      ++col;
    }
    if (col != columns)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(columns) + " columns, got " + std::to_string(col));
    double rounded = std::round(label_value);
    if (std::fabs(label_value - rounded) > 1e-9 || rounded < 0)
      throw ParseError(path + ":" + std::to_string(line_no) +
                       ": label must be a nonnegative integer");
    labels.push_back(static_cast<int>(rounded));
    max_label = std::max(max_label, labels.back());
  }
  if (labels.empty()) throw DataError(path + ": no data rows");

  Dataset dataset;
  dataset.inputs = Tensor({labels.size(), columns - 1}, std::move(values));
  dataset.labels = std::move(labels);
  dataset.num_classes = static_cast<size_t>(max_label) + 1;
  return dataset;
}

namespace {

// Unit direction for class k. Axis-aligned while axes last, then fixed
// pseudo-random directions independent of the dataset seed so that train and
// test splits share centers.
std::vector<double> center_direction(size_t k, size_t dim) {
  std::vector<double> u(dim, 0.0);
  if (k < dim) {
    u[k] = 1.0;
    return u;
  }
  Rng rng = substream(0xb10b5ULL, "center", k);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& v : u) {
      v = rng.normal();
      norm += v * v;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& v : u) v /= norm;
  return u;
}

} // namespace

Dataset gen_gaussian_blobs(size_t n, size_t classes, size_t dim, double sep,
                           uint64_t seed) {
  if (n == 0 || classes == 0 || dim == 0)
    throw UsageError("gen_gaussian_blobs: n, classes and dim must be positive");
  if (!(sep >= 0.0)) throw UsageError("gen_gaussian_blobs: sep must be nonnegative");

  std::vector<std::vector<double>> centers(classes);
  double scale = sep / std::sqrt(2.0);
  for (size_t k = 0; k < classes; ++k) {
    centers[k] = center_direction(k, dim);
    for (double& v : centers[k]) v *= scale;
  }

  Dataset dataset;
  dataset.inputs = Tensor({n, dim});
  dataset.labels.resize(n);
  dataset.num_classes = classes;
  Rng rng = substream(seed, "blobs");
  for (size_t i = 0; i < n; ++i) {
    size_t k = i % classes;
    dataset.labels[i] = static_cast<int>(k);
    double* row = &dataset.inputs.data[i * dim];
    for (size_t d = 0; d < dim; ++d) row[d] = centers[k][d] + rng.normal();
  }
  return dataset;
}

} // namespace fsl
