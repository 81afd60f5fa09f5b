#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fslsim/tensor.hpp"

namespace fsl {

struct Dataset {
  Tensor inputs;            // shape [n, ...feature_shape]
  std::vector<int> labels;  // class indices, one per row
  size_t num_classes = 0;

  size_t size() const { return labels.size(); }
  std::vector<size_t> feature_shape() const;
};

// Disjoint per-client example indices covering the whole dataset.
struct Partition {
  std::vector<std::vector<size_t>> client_indices;

  size_t n_clients() const { return client_indices.size(); }
};

// Epoch-ordered minibatch index lists for one client; the final partial batch
// is kept.
struct BatchPlan {
  int client = 0;
  size_t batch_size = 0;
  std::vector<std::vector<size_t>> batches;
};

Partition partition_iid(const Dataset& dataset, size_t n_clients, uint64_t seed);

// Each client draws from at most classes_per_client distinct classes; shards
// stay disjoint and cover the dataset.
Partition partition_label_skew(const Dataset& dataset, size_t n_clients,
                               size_t classes_per_client, uint64_t seed);

BatchPlan batches(const Partition& partition, int client, size_t batch_size,
                  size_t epoch, uint64_t seed);

// IDX image/label file pair (big-endian, magic 0x0000080x). Inputs are
// min-max normalized per feature into [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CSV with a header row; the last column is the integer class label.
Dataset load_csv(const std::string& path);

// Unit-variance gaussian blobs with class centers sep apart. Centers depend
// only on (class, dim, sep), so train/test splits generated from different
// seeds share them.
Dataset gen_gaussian_blobs(size_t n, size_t classes, size_t dim, double sep,
                           uint64_t seed);

Tensor gather_rows(const Tensor& inputs, const std::vector<size_t>& indices);
std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<size_t>& indices);

} // namespace fsl
