#pragma once

#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "fslsim/tensor.hpp"

namespace fsl {

// Typed protocol payloads. Byte sizes are computed from content, never stored.

struct ModelBroadcast {
  int client = 0;
  ParamSet x_c;
  std::optional<ParamSet> a_c;
};

struct SmashedUpload {
  int client = 0;
  int round = 0;
  size_t window = 0;  // upload-window index within the round
  Tensor activations;
  std::vector<int> labels;
};

struct GradDown {
  int client = 0;
  size_t window = 0;
  Tensor d_smashed;
};

struct ClientModelUpload {
  int client = 0;
  ParamSet x_c;
  std::optional<ParamSet> a_c;
};

using Message = std::variant<ModelBroadcast, SmashedUpload, GradDown, ClientModelUpload>;

std::string_view message_kind(const Message& msg);
int message_client(const Message& msg);
bool is_uplink(const Message& msg);
size_t message_bytes(const Message& msg, size_t bytes_per_element, size_t label_bytes);

} // namespace fsl
