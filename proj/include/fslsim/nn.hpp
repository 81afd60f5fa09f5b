#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "fslsim/rng.hpp"
#include "fslsim/tensor.hpp"

namespace fsl {

enum class LayerKind { dense, relu, flatten, conv2d };

std::string_view layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  size_t out_features = 0;            // dense
  size_t out_channels = 0;            // conv2d
  size_t kernel = 0;                  // conv2d
  size_t stride = 1;                  // conv2d

  static LayerSpec dense(size_t out_features);
  static LayerSpec relu();
  static LayerSpec flatten();
  static LayerSpec conv2d(size_t out_channels, size_t kernel, size_t stride = 1);

  bool operator==(const LayerSpec&) const = default;
};

using Stack = std::vector<LayerSpec>;

// A stack bound to a per-example input shape, with every intermediate shape
// resolved. Construction fails with a ConfigError naming the offending layer
// when consecutive layers do not chain.
struct StackPlan {
  Stack layers;
  std::vector<size_t> input_shape;
  std::vector<std::vector<size_t>> in_shape;   // per layer, per example
  std::vector<std::vector<size_t>> out_shape;  // per layer, per example

  const std::vector<size_t>& output_shape() const;
  size_t param_count() const;
};

StackPlan plan_stack(const Stack& layers, const std::vector<size_t>& input_shape);

// Parameters are named "l<i>.w" / "l<i>.b" where <i> is the layer's index in
// the stack. Weights are uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
ParamSet init_params(const StackPlan& plan, Rng& rng);

// Cached per-layer inputs for one batch. Consuming a trace for backward
// invalidates it.
struct ForwardTrace {
  std::vector<Tensor> inputs;
  size_t layer_count = 0;
  bool consumed = false;
};

Tensor forward(const StackPlan& plan, const ParamSet& params, const Tensor& batch,
               ForwardTrace* trace = nullptr);

struct BackwardResult {
  ParamSet grads;
  Tensor input_grad;
};

BackwardResult backward(const StackPlan& plan, const ParamSet& params,
                        ForwardTrace& trace, const Tensor& upstream);

struct LossResult {
  double loss = 0.0;   // batch mean
  Tensor dlogits;      // (softmax - onehot) / batch_size
};

LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// theta <- theta - eta * g, value semantics; inputs are left untouched.
ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double eta);

// Scales by threshold/norm when the global L2 norm exceeds the threshold.
ParamSet clip_by_global_norm(const ParamSet& grads, double threshold);

struct LrSchedule {
  double eta0 = 0.1;
  double at(int t) const;  // eta0 / (1 + t)
};

double lr_at(const LrSchedule& schedule, int t);

// Central-difference gradient of a scalar loss with respect to every
// parameter. Kept independent of backward(); used as its oracle.
ParamSet finite_diff_grad(const std::function<double(const ParamSet&)>& loss,
                          const ParamSet& params, double epsilon);
ParamSet finite_diff_grad(const StackPlan& plan, const ParamSet& params,
                          const Tensor& input, const std::vector<int>& labels,
                          double epsilon);

// Finite-difference check over all layer kinds, shared by the CLI gradcheck
// subcommand and the test suite.
struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  uint64_t seed = 1;
  // Fault-injection hook for verifying that the check catches a broken
  // backward pass: negates the first dense weight gradient before comparing.
  bool inject_dense_sign_flip = false;
};

std::vector<GradCheckCase> gradcheck_suite(const GradCheckOptions& options);

} // namespace fsl
