#include "fslsim/model.hpp"

#include <string>

#include "fslsim/error.hpp"

namespace fsl {

namespace {

StackPlan plan_part(const Stack& stack, const std::vector<size_t>& input_shape,
                    const char* part) {
  try {
    return plan_stack(stack, input_shape);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(part) + ": " + e.what());
  }
}

void check_logits(const StackPlan& plan, size_t num_classes, const char* part) {
  const std::vector<size_t>& out = plan.output_shape();
  if (out.size() != 1 || out[0] != num_classes)
    throw ConfigError(std::string(part) + ": must end in " + std::to_string(num_classes) +
                      " logits, got " + shape_str(out));
}

} // namespace

SplitPlans plan_split(const SplitModelSpec& spec) {
  if (spec.num_classes == 0) throw ConfigError("model: num_classes must be positive");
  if (spec.server_stack.empty()) throw ConfigError("server_stack: must not be empty");
  if (spec.client_stack.empty()) throw ConfigError("client_stack: must not be empty");

  SplitPlans plans;
  plans.client = plan_part(spec.client_stack, spec.input_shape, "client_stack");
  plans.server = plan_part(spec.server_stack, plans.client.output_shape(), "server_stack");
  check_logits(plans.server, spec.num_classes, "server_stack");
  if (spec.aux_head) {
    if (spec.aux_head->empty()) throw ConfigError("aux_head: must not be empty");
    plans.aux = plan_part(*spec.aux_head, plans.client.output_shape(), "aux_head");
    check_logits(*plans.aux, spec.num_classes, "aux_head");
  }
  return plans;
}

std::vector<std::string> spec_warnings(const SplitModelSpec& spec) {
  std::vector<std::string> warnings;
  SplitPlans plans = plan_split(spec);
  if (plans.aux) {
    size_t aux = plans.aux->param_count();
    size_t total = aux + plans.client.param_count() + plans.server.param_count();
    if (total > 0 && 10 * aux > total)
      warnings.push_back("aux head holds " + std::to_string(aux) + " of " +
                         std::to_string(total) +
                         " parameters (>10% of the model); expected to be small");
  }
  return warnings;
}

SplitParams build(const SplitModelSpec& spec, uint64_t seed) {
  SplitPlans plans = plan_split(spec);
  SplitParams params;
  {
    Rng rng = substream(seed, "client-init");
    params.client = init_params(plans.client, rng);
  }
  if (plans.aux) {
    Rng rng = substream(seed, "aux-init");
    params.aux = init_params(*plans.aux, rng);
  }
  {
    Rng rng = substream(seed, "server-init");
    params.server = init_params(plans.server, rng);
  }
  return params;
}

Stack fuse(const SplitModelSpec& spec) {
  Stack fused = spec.client_stack;
  fused.insert(fused.end(), spec.server_stack.begin(), spec.server_stack.end());
  return fused;
}

ParamSet fuse_params(const SplitModelSpec& spec, const ParamSet& client_params,
                     const ParamSet& server_params) {
  ParamSet fused = client_params;
  size_t offset = spec.client_stack.size();
  for (const auto& [name, tensor] : server_params.entries) {
    size_t dot = name.find('.');
    if (name.size() < 2 || name[0] != 'l' || dot == std::string::npos)
      throw UsageError("fuse_params: unexpected parameter name \"" + name + "\"");
    size_t layer = std::stoul(name.substr(1, dot - 1));
    fused.add("l" + std::to_string(layer + offset) + name.substr(dot), tensor);
  }
  return fused;
}

SmashedSize smashed_size(const SplitModelSpec& spec, size_t batch_size,
                         size_t bytes_per_element, size_t label_bytes) {
  if (batch_size == 0) throw UsageError("smashed_size: batch_size must be positive");
  SplitPlans plans = plan_split(spec);
  SmashedSize size;
  size.element_count = shape_numel(plans.cut_shape()) * batch_size;
  size.bytes = size.element_count * bytes_per_element + batch_size * label_bytes;
  return size;
}

Stack make_aux_head(const AuxHeadKind& kind, const std::vector<size_t>& cut_shape,
                    size_t num_classes) {
  Stack head;
  switch (kind.variant) {
    case AuxHeadVariant::mlp:
      if (cut_shape.size() > 1) head.push_back(LayerSpec::flatten());
      break;
    case AuxHeadVariant::conv1x1_mlp:
      if (cut_shape.size() != 3)
        throw ConfigError("aux_head: conv1x1_mlp needs a [channels,height,width] cut, got " +
                          shape_str(cut_shape));
      if (kind.channels == 0)
        throw ConfigError("aux_head: conv1x1_mlp needs a positive channel count");
      head.push_back(LayerSpec::conv2d(kind.channels, 1, 1));
      head.push_back(LayerSpec::relu());
      head.push_back(LayerSpec::flatten());
      break;
  }
  for (size_t h : kind.hidden) {
    head.push_back(LayerSpec::dense(h));
    head.push_back(LayerSpec::relu());
  }
  head.push_back(LayerSpec::dense(num_classes));
  return head;
}

} // namespace fsl
