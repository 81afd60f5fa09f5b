#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fsl {

// Dense row-major tensor of 64-bit reals. Wherever a batch is implied, the
// first extent is the batch dimension.
struct Tensor {
  std::vector<double> data;
  std::vector<size_t> shape;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape, double fill = 0.0);
  Tensor(std::vector<size_t> shape, std::vector<double> values);

  size_t numel() const { return data.size(); }
  size_t rows() const;       // first extent
  size_t row_numel() const;  // elements per row
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

size_t shape_numel(const std::vector<size_t>& shape);
std::string shape_str(const std::vector<size_t>& shape);

// Throws NumericError when any element is NaN or Inf.
void ensure_finite(const Tensor& t, std::string_view context);

// Ordered map from parameter name to tensor. Iteration order is insertion
// order and identical across runs.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> entries;

  void add(std::string name, Tensor value);       // UsageError on duplicate name
  const Tensor& at(std::string_view name) const;  // UsageError when missing
  Tensor& at(std::string_view name);
  const Tensor* find(std::string_view name) const;
  bool compatible(const ParamSet& other) const;   // same names, shapes, order
  size_t count() const;                           // total scalar parameters
  bool empty() const { return entries.empty(); }
};

size_t param_count(const ParamSet& params);
size_t param_bytes(const ParamSet& params, size_t bytes_per_element = 4);
double global_sq_norm(const ParamSet& params);
bool bit_equal(const Tensor& a, const Tensor& b);
bool bit_equal(const ParamSet& a, const ParamSet& b);

} // namespace fsl
