#include "fslsim/tensor.hpp"

#include <cmath>
#include <cstring>

#include "fslsim/error.hpp"

namespace fsl {

Tensor::Tensor(std::vector<size_t> shape_, double fill)
    : data(shape_numel(shape_), fill), shape(std::move(shape_)) {}

Tensor::Tensor(std::vector<size_t> shape_, std::vector<double> values)
    : data(std::move(values)), shape(std::move(shape_)) {
  if (data.size() != shape_numel(shape))
    throw UsageError("Tensor: " + std::to_string(data.size()) +
                     " values do not fill shape " + shape_str(shape));
}

size_t Tensor::rows() const {
  if (shape.empty()) throw UsageError("Tensor::rows: rank-0 tensor");
  return shape[0];
}

size_t Tensor::row_numel() const {
  size_t r = rows();
  return r == 0 ? 0 : numel() / r;
}

size_t shape_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::string shape_str(const std::vector<size_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void ensure_finite(const Tensor& t, std::string_view context) {
  for (double v : t.data)
    if (!std::isfinite(v))
      throw NumericError(std::string(context) + ": non-finite value");
}

void ParamSet::add(std::string name, Tensor value) {
  if (find(name) != nullptr)
    throw UsageError("ParamSet: duplicate name \"" + name + "\"");
  entries.emplace_back(std::move(name), std::move(value));
}

const Tensor* ParamSet::find(std::string_view name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

const Tensor& ParamSet::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) throw UsageError("ParamSet: missing entry \"" + std::string(name) + "\"");
  return *t;
}

Tensor& ParamSet::at(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const ParamSet*>(this)->at(name));
}

bool ParamSet::compatible(const ParamSet& other) const {
  if (entries.size() != other.entries.size()) return false;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first != other.entries[i].first) return false;
    if (entries[i].second.shape != other.entries[i].second.shape) return false;
  }
  return true;
}

size_t ParamSet::count() const {
  size_t n = 0;
  for (const auto& [name, t] : entries) n += t.numel();
  return n;
}

size_t param_count(const ParamSet& params) { return params.count(); }

size_t param_bytes(const ParamSet& params, size_t bytes_per_element) {
  return params.count() * bytes_per_element;
}

double global_sq_norm(const ParamSet& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params.entries)
    for (double v : t.data) sq += v * v;
  return sq;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  if (a.data.size() != b.data.size()) return false;
  return a.data.empty() ||
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

bool bit_equal(const ParamSet& a, const ParamSet& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (size_t i = 0; i < a.entries.size(); ++i) {
    if (a.entries[i].first != b.entries[i].first) return false;
    if (!bit_equal(a.entries[i].second, b.entries[i].second)) return false;
  }
  return true;
}

} // namespace fsl
