#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fslsim/nn.hpp"

namespace fsl {

// Declarative split model: client-side stack, cut point, optional auxiliary
// head hanging off the cut, and server-side stack. Both heads terminate in
// num_classes logits.
struct SplitModelSpec {
  std::vector<size_t> input_shape;
  Stack client_stack;
  std::optional<Stack> aux_head;
  Stack server_stack;
  size_t num_classes = 0;
};

struct SplitPlans {
  StackPlan client;
  std::optional<StackPlan> aux;
  StackPlan server;

  const std::vector<size_t>& cut_shape() const { return client.output_shape(); }
};

SplitPlans plan_split(const SplitModelSpec& spec);

// Non-fatal findings, e.g. an auxiliary head above 10% of total parameters.
std::vector<std::string> spec_warnings(const SplitModelSpec& spec);

struct SplitParams {
  ParamSet client;
  std::optional<ParamSet> aux;
  ParamSet server;
};

// Deterministic in seed. The aux head draws from an independent substream, so
// adding or removing it never changes client/server initialization.
SplitParams build(const SplitModelSpec& spec, uint64_t seed);

// Monolithic client_stack ++ server_stack; the aux head is dropped.
Stack fuse(const SplitModelSpec& spec);
ParamSet fuse_params(const SplitModelSpec& spec, const ParamSet& client_params,
                     const ParamSet& server_params);

struct SmashedSize {
  size_t element_count = 0;  // cut-layer activation elements for one batch
  size_t bytes = 0;          // activations plus labels on the wire
};

SmashedSize smashed_size(const SplitModelSpec& spec, size_t batch_size,
                         size_t bytes_per_element = 4, size_t label_bytes = 1);

enum class AuxHeadVariant { mlp, conv1x1_mlp };

struct AuxHeadKind {
  AuxHeadVariant variant = AuxHeadVariant::mlp;
  std::vector<size_t> hidden;  // hidden dense extents, possibly empty
  size_t channels = 0;         // conv1x1_mlp channel reduction
};

Stack make_aux_head(const AuxHeadKind& kind, const std::vector<size_t>& cut_shape,
                    size_t num_classes);

} // namespace fsl
