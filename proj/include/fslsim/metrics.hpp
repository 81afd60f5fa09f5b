#pragma once

#include <cstddef>
#include <vector>

#include "fslsim/data.hpp"
#include "fslsim/nn.hpp"

namespace fsl {

struct EvalResult {
  double top1 = 0.0;
  double mean_loss = 0.0;
};

// Top-1 accuracy and mean loss of the client-stack -> server-stack pipeline
// (never the aux head). Argmax ties resolve to the lowest class index.
EvalResult evaluate(const StackPlan& client_plan, const ParamSet& client_params,
                    const StackPlan& server_plan, const ParamSet& server_params,
                    const Dataset& data, size_t eval_batch = 512);

enum class Side { client_side, server_side };

// Per-round learning rates and full-batch squared gradient norm estimates,
// plus the running sums behind the convergence monitors.
struct ConvergenceTrace {
  std::vector<double> eta;
  std::vector<double> client_grad_sq;
  std::vector<double> server_grad_sq;

  void push(double eta_t, double client_sq, double server_sq);
  size_t rounds() const { return eta.size(); }
  double gamma(size_t T) const;        // sum of eta over the first T rounds
  double eta_sq_sum(size_t T) const;
};

// (1/Gamma_T) * sum_{t<T} eta_t * ||grad F||^2 for the chosen side.
double weighted_grad_average(const ConvergenceTrace& trace, Side side, size_t T);

// User-supplied or estimated constants entering the monitor bounds. The
// smoothness constant is never estimated automatically.
struct PropConstants {
  double loss_gap = 0.0;       // F(x^0) - F(x^*)
  double smoothness = 0.0;     // L
  double grad_bound_sq = 0.0;  // G^2 for the relevant side
  size_t window_steps = 1;     // M, client-side bound
  size_t n_clients = 1;        // N, server-side bound
};

struct PropBound {
  double value = 0.0;
  // The server-side bound omits the distribution-drift term, which has no
  // computable instantiation; it is reported as partial.
  bool partial = false;
};

PropBound prop_bound_rhs(const ConvergenceTrace& trace, Side side, size_t T,
                         const PropConstants& constants);

// Running maxima of observed stochastic-gradient squared norms (client side
// with the local loss; server side).
struct AssumptionEstimates {
  double client_grad_sq_max = 0.0;
  double server_grad_sq_max = 0.0;

  void observe_client(double sq_norm);
  void observe_server(double sq_norm);
};

} // namespace fsl
