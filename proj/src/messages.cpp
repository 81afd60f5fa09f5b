#include "fslsim/messages.hpp"

namespace fsl {

std::string_view message_kind(const Message& msg) {
  if (std::holds_alternative<ModelBroadcast>(msg)) return "model_broadcast";
  if (std::holds_alternative<SmashedUpload>(msg)) return "smashed_upload";
  if (std::holds_alternative<GradDown>(msg)) return "grad_down";
  return "client_model_upload";
}

int message_client(const Message& msg) {
  return std::visit([](const auto& m) { return m.client; }, msg);
}

bool is_uplink(const Message& msg) {
  return std::holds_alternative<SmashedUpload>(msg) ||
         std::holds_alternative<ClientModelUpload>(msg);
}

size_t message_bytes(const Message& msg, size_t bytes_per_element, size_t label_bytes) {
  if (const auto* b = std::get_if<ModelBroadcast>(&msg)) {
    size_t elems = param_count(b->x_c) + (b->a_c ? param_count(*b->a_c) : 0);
    return elems * bytes_per_element;
  }
  if (const auto* u = std::get_if<SmashedUpload>(&msg))
    return u->activations.numel() * bytes_per_element + u->labels.size() * label_bytes;
  if (const auto* g = std::get_if<GradDown>(&msg))
    return g->d_smashed.numel() * bytes_per_element;
  const auto& m = std::get<ClientModelUpload>(msg);
  size_t elems = param_count(m.x_c) + (m.a_c ? param_count(*m.a_c) : 0);
  return elems * bytes_per_element;
}

} // namespace fsl
