#include "fslsim/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "fslsim/error.hpp"

namespace fsl {

EvalResult evaluate(const StackPlan& client_plan, const ParamSet& client_params,
                    const StackPlan& server_plan, const ParamSet& server_params,
                    const Dataset& data, size_t eval_batch) {
  if (data.size() == 0) throw UsageError("evaluate: empty dataset");
  if (eval_batch == 0) throw UsageError("evaluate: eval_batch must be positive");

  size_t correct = 0;
  double loss_sum = 0.0;
  for (size_t start = 0; start < data.size(); start += eval_batch) {
    size_t end = std::min(start + eval_batch, data.size());
    std::vector<size_t> idx(end - start);
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    Tensor x = gather_rows(data.inputs, idx);
    std::vector<int> y = gather_labels(data.labels, idx);

    Tensor cut = forward(client_plan, client_params, x);
    Tensor logits = forward(server_plan, server_params, cut);
    LossResult loss = softmax_cross_entropy(logits, y);
    loss_sum += loss.loss * static_cast<double>(idx.size());

    size_t classes = logits.shape[1];
    for (size_t r = 0; r < idx.size(); ++r) {
      const double* row = &logits.data[r * classes];
      size_t best = 0;  // ties resolve to the lowest class index
      for (size_t c = 1; c < classes; ++c)
        if (row[c] > row[best]) best = c;
      if (static_cast<int>(best) == y[r]) ++correct;
    }
  }

  EvalResult result;
  result.top1 = static_cast<double>(correct) / static_cast<double>(data.size());
  result.mean_loss = loss_sum / static_cast<double>(data.size());
  return result;
}

void ConvergenceTrace::push(double eta_t, double client_sq, double server_sq) {
  if (!(eta_t > 0.0)) throw UsageError("ConvergenceTrace: eta must be positive");
  if (!std::isfinite(client_sq) || client_sq < 0.0 || !std::isfinite(server_sq) ||
      server_sq < 0.0)
    throw NumericError("ConvergenceTrace: gradient norms must be finite and nonnegative");
  eta.push_back(eta_t);
  client_grad_sq.push_back(client_sq);
  server_grad_sq.push_back(server_sq);
}

double ConvergenceTrace::gamma(size_t T) const {
  if (T == 0) throw UsageError("ConvergenceTrace::gamma: T must be positive");
  if (T > rounds()) throw UsageError("ConvergenceTrace::gamma: only " +
                                     std::to_string(rounds()) + " rounds recorded");
  double sum = 0.0;
  for (size_t t = 0; t < T; ++t) sum += eta[t];
  return sum;
}

double ConvergenceTrace::eta_sq_sum(size_t T) const {
  if (T > rounds()) throw UsageError("ConvergenceTrace::eta_sq_sum: out of range");
  double sum = 0.0;
  for (size_t t = 0; t < T; ++t) sum += eta[t] * eta[t];
  return sum;
}

double weighted_grad_average(const ConvergenceTrace& trace, Side side, size_t T) {
  if (T == 0) throw UsageError("weighted_grad_average: T must be positive");
  if (T > trace.rounds())
    throw UsageError("weighted_grad_average: only " + std::to_string(trace.rounds()) +
                     " rounds recorded");
  const std::vector<double>& sq =
      side == Side::client_side ? trace.client_grad_sq : trace.server_grad_sq;
  double weighted = 0.0;
  for (size_t t = 0; t < T; ++t) weighted += trace.eta[t] * sq[t];
  return weighted / trace.gamma(T);
}

PropBound prop_bound_rhs(const ConvergenceTrace& trace, Side side, size_t T,
                         const PropConstants& constants) {
  if (T == 0) throw UsageError("prop_bound_rhs: T must be positive");
  double gamma = trace.gamma(T);
  double eta_sq = trace.eta_sq_sum(T);

  PropBound bound;
  if (side == Side::client_side) {
    double m = static_cast<double>(constants.window_steps);
    double denom = (2.0 * m - 1.0) * gamma;
    bound.value = 4.0 * constants.loss_gap / denom +
                  2.0 * m * m * constants.grad_bound_sq * constants.smoothness / denom * eta_sq;
    bound.partial = false;
  } else {
    double n = static_cast<double>(constants.n_clients);
    double denom = (2.0 * n - 1.0) * gamma;
    // the distribution-drift term is omitted; reported as partial
    bound.value = 4.0 * constants.loss_gap / denom +
                  4.0 * constants.grad_bound_sq / (2.0 * n - 1.0) / gamma *
                      (constants.smoothness * n * n / 2.0 * eta_sq);
    bound.partial = true;
  }
  return bound;
}

void AssumptionEstimates::observe_client(double sq_norm) {
  client_grad_sq_max = std::max(client_grad_sq_max, sq_norm);
}

void AssumptionEstimates::observe_server(double sq_norm) {
  server_grad_sq_max = std::max(server_grad_sq_max, sq_norm);
}

} // namespace fsl
