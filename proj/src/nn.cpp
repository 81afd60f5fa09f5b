#include "fslsim/nn.hpp"

#include <algorithm>
#include <cmath>

#include "fslsim/error.hpp"

namespace fsl {

namespace {

std::string layer_label(size_t index, LayerKind kind) {
  return "layer " + std::to_string(index) + " (" + std::string(layer_kind_name(kind)) + ")";
}

bool has_params(LayerKind kind) {
  return kind == LayerKind::dense || kind == LayerKind::conv2d;
}

std::string weight_name(size_t index) { return "l" + std::to_string(index) + ".w"; }
std::string bias_name(size_t index) { return "l" + std::to_string(index) + ".b"; }

struct ConvDims {
  size_t in_c, in_h, in_w;
  size_t out_c, k, s;
  size_t out_h, out_w;
};

ConvDims conv_dims(const LayerSpec& spec, const std::vector<size_t>& in_shape) {
  ConvDims d{};
  d.in_c = in_shape[0];
  d.in_h = in_shape[1];
  d.in_w = in_shape[2];
  d.out_c = spec.out_channels;
  d.k = spec.kernel;
  d.s = spec.stride;
  d.out_h = (d.in_h - d.k) / d.s + 1;
  d.out_w = (d.in_w - d.k) / d.s + 1;
  return d;
}

} // namespace

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::conv2d: return "conv2d";
  }
  return "?";
}

LayerSpec LayerSpec::dense(size_t out_features) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.out_features = out_features;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::relu;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

LayerSpec LayerSpec::conv2d(size_t out_channels, size_t kernel, size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.stride = stride;
  return s;
}

const std::vector<size_t>& StackPlan::output_shape() const {
  if (out_shape.empty()) return input_shape;
  return out_shape.back();
}

size_t StackPlan::param_count() const {
  size_t n = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& spec = layers[i];
    if (spec.kind == LayerKind::dense) {
      n += in_shape[i][0] * spec.out_features + spec.out_features;
    } else if (spec.kind == LayerKind::conv2d) {
      ConvDims d = conv_dims(spec, in_shape[i]);
      n += d.out_c * d.in_c * d.k * d.k + d.out_c;
    }
  }
  return n;
}

StackPlan plan_stack(const Stack& layers, const std::vector<size_t>& input_shape) {
  if (input_shape.empty())
    throw ConfigError("stack: input shape must have at least one extent");
  for (size_t e : input_shape)
    if (e == 0) throw ConfigError("stack: input shape has a zero extent");

  StackPlan plan;
  plan.layers = layers;
  plan.input_shape = input_shape;
  std::vector<size_t> cur = input_shape;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& spec = layers[i];
    plan.in_shape.push_back(cur);
    switch (spec.kind) {
      case LayerKind::dense:
        if (cur.size() != 1)
          throw ConfigError(layer_label(i, spec.kind) + ": expects a flat input, got " +
                            shape_str(cur) + "; insert a flatten layer");
        if (spec.out_features == 0)
          throw ConfigError(layer_label(i, spec.kind) + ": out_features must be positive");
        cur = {spec.out_features};
        break;
      case LayerKind::relu:
        break;
      case LayerKind::flatten:
        cur = {shape_numel(cur)};
        break;
      case LayerKind::conv2d: {
        if (cur.size() != 3)
          throw ConfigError(layer_label(i, spec.kind) +
                            ": expects a [channels,height,width] input, got " + shape_str(cur));
        if (spec.out_channels == 0 || spec.kernel == 0 || spec.stride == 0)
          throw ConfigError(layer_label(i, spec.kind) +
                            ": out_channels, kernel and stride must be positive");
        if (cur[1] < spec.kernel || cur[2] < spec.kernel)
          throw ConfigError(layer_label(i, spec.kind) + ": kernel " +
                            std::to_string(spec.kernel) + " exceeds input " + shape_str(cur));
        ConvDims d = conv_dims(spec, cur);
        cur = {d.out_c, d.out_h, d.out_w};
        break;
      }
    }
    plan.out_shape.push_back(cur);
  }
  return plan;
}

ParamSet init_params(const StackPlan& plan, Rng& rng) {
  ParamSet params;
  for (size_t i = 0; i < plan.layers.size(); ++i) {
    const LayerSpec& spec = plan.layers[i];
    if (spec.kind == LayerKind::dense) {
      size_t fan_in = plan.in_shape[i][0];
      size_t fan_out = spec.out_features;
      double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      Tensor w({fan_in, fan_out});
      for (double& v : w.data) v = rng.uniform(-a, a);
      params.add(weight_name(i), std::move(w));
      params.add(bias_name(i), Tensor({fan_out}, 0.0));
    } else if (spec.kind == LayerKind::conv2d) {
      ConvDims d = conv_dims(spec, plan.in_shape[i]);
      double fan_in = static_cast<double>(d.in_c * d.k * d.k);
      double fan_out = static_cast<double>(d.out_c * d.k * d.k);
      double a = std::sqrt(6.0 / (fan_in + fan_out));
      Tensor w({d.out_c, d.in_c, d.k, d.k});
      for (double& v : w.data) v = rng.uniform(-a, a);
      params.add(weight_name(i), std::move(w));
      params.add(bias_name(i), Tensor({d.out_c}, 0.0));
    }
  }
  return params;
}

namespace {

void check_params_complete(const StackPlan& plan, const ParamSet& params) {
  for (size_t i = 0; i < plan.layers.size(); ++i) {
    if (!has_params(plan.layers[i].kind)) continue;
    if (!params.find(weight_name(i)) || !params.find(bias_name(i)))
      throw ConfigError(layer_label(i, plan.layers[i].kind) + ": parameters missing");
  }
}

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  size_t batch = x.rows();
  size_t in = w.shape[0], out = w.shape[1];
  Tensor y({batch, out});
  for (size_t r = 0; r < batch; ++r) {
    const double* xr = &x.data[r * in];
    double* yr = &y.data[r * out];
    for (size_t o = 0; o < out; ++o) yr[o] = b.data[o];
    for (size_t i = 0; i < in; ++i) {
      double xv = xr[i];
      const double* wr = &w.data[i * out];
      for (size_t o = 0; o < out; ++o) yr[o] += xv * wr[o];
    }
  }
  return y;
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, const ConvDims& d) {
  size_t batch = x.rows();
  Tensor y({batch, d.out_c, d.out_h, d.out_w});
  size_t in_plane = d.in_h * d.in_w;
  size_t out_plane = d.out_h * d.out_w;
  for (size_t n = 0; n < batch; ++n) {
    const double* xn = &x.data[n * d.in_c * in_plane];
    double* yn = &y.data[n * d.out_c * out_plane];
    for (size_t oc = 0; oc < d.out_c; ++oc) {
      const double* woc = &w.data[oc * d.in_c * d.k * d.k];
      double bias = b.data[oc];
      for (size_t i = 0; i < d.out_h; ++i) {
        for (size_t j = 0; j < d.out_w; ++j) {
          double acc = bias;
          for (size_t ic = 0; ic < d.in_c; ++ic) {
            const double* xp = &xn[ic * in_plane + i * d.s * d.in_w + j * d.s];
            const double* wp = &woc[ic * d.k * d.k];
            for (size_t u = 0; u < d.k; ++u)
              for (size_t v = 0; v < d.k; ++v) acc += xp[u * d.in_w + v] * wp[u * d.k + v];
          }
          yn[oc * out_plane + i * d.out_w + j] = acc;
        }
      }
    }
  }
  return y;
}

} // namespace

Tensor forward(const StackPlan& plan, const ParamSet& params, const Tensor& batch,
               ForwardTrace* trace) {
  if (batch.shape.size() != plan.input_shape.size() + 1 ||
      !std::equal(plan.input_shape.begin(), plan.input_shape.end(), batch.shape.begin() + 1))
    throw ConfigError("forward: input " + shape_str(batch.shape) +
                      " does not match stack input " + shape_str(plan.input_shape));
  check_params_complete(plan, params);

  if (trace) {
    trace->inputs.clear();
    trace->layer_count = plan.layers.size();
    trace->consumed = false;
  }

  Tensor cur = batch;
  for (size_t i = 0; i < plan.layers.size(); ++i) {
    const LayerSpec& spec = plan.layers[i];
    if (trace) trace->inputs.push_back(cur);
    switch (spec.kind) {
      case LayerKind::dense:
        cur = dense_forward(cur, params.at(weight_name(i)), params.at(bias_name(i)));
        break;
      case LayerKind::relu: {
        Tensor y = cur;
        for (double& v : y.data) v = v > 0.0 ? v : 0.0;
        cur = std::move(y);
        break;
      }
      case LayerKind::flatten: {
        Tensor y = std::move(cur);
        y.shape = {y.shape[0], shape_numel(plan.out_shape[i])};
        cur = std::move(y);
        break;
      }
      case LayerKind::conv2d:
        cur = conv_forward(cur, params.at(weight_name(i)), params.at(bias_name(i)),
                           conv_dims(spec, plan.in_shape[i]));
        break;
    }
  }
  ensure_finite(cur, "forward output");
  return cur;
}

BackwardResult backward(const StackPlan& plan, const ParamSet& params,
                        ForwardTrace& trace, const Tensor& upstream) {
  if (trace.consumed) throw UsageError("backward: trace already consumed");
  if (trace.layer_count != plan.layers.size() || trace.inputs.size() != plan.layers.size())
    throw UsageError("backward: trace does not match this stack");
  const std::vector<size_t>& out = plan.output_shape();
  if (upstream.shape.size() != out.size() + 1 ||
      !std::equal(out.begin(), out.end(), upstream.shape.begin() + 1))
    throw UsageError("backward: upstream " + shape_str(upstream.shape) +
                     " does not match stack output " + shape_str(out));
  check_params_complete(plan, params);
  trace.consumed = true;

  size_t batch = upstream.rows();
  std::vector<std::pair<Tensor, Tensor>> layer_grads(plan.layers.size());
  Tensor grad = upstream;

  for (size_t ri = plan.layers.size(); ri-- > 0;) {
    const LayerSpec& spec = plan.layers[ri];
    const Tensor& x = trace.inputs[ri];
    switch (spec.kind) {
      case LayerKind::dense: {
        const Tensor& w = params.at(weight_name(ri));
        size_t in = w.shape[0], outf = w.shape[1];
        Tensor dw({in, outf});
        Tensor db({outf});
        Tensor dx({batch, in});
        for (size_t r = 0; r < batch; ++r) {
          const double* xr = &x.data[r * in];
          const double* gr = &grad.data[r * outf];
          double* dxr = &dx.data[r * in];
          for (size_t o = 0; o < outf; ++o) db.data[o] += gr[o];
          for (size_t i = 0; i < in; ++i) {
            double acc = 0.0;
            double* dwr = &dw.data[i * outf];
            const double* wr = &w.data[i * outf];
            for (size_t o = 0; o < outf; ++o) {
              dwr[o] += xr[i] * gr[o];
              acc += wr[o] * gr[o];
            }
            dxr[i] = acc;
          }
        }
        layer_grads[ri] = {std::move(dw), std::move(db)};
        grad = std::move(dx);
        break;
      }
      case LayerKind::relu: {
        Tensor dx = grad;
        for (size_t i = 0; i < dx.data.size(); ++i)
          if (x.data[i] <= 0.0) dx.data[i] = 0.0;
        grad = std::move(dx);
        break;
      }
      case LayerKind::flatten: {
        Tensor dx = std::move(grad);
        dx.shape = x.shape;
        grad = std::move(dx);
        break;
      }
      case LayerKind::conv2d: {
        ConvDims d = conv_dims(spec, plan.in_shape[ri]);
        const Tensor& w = params.at(weight_name(ri));
        Tensor dw(w.shape);
        Tensor db({d.out_c});
        Tensor dx(x.shape);
        size_t in_plane = d.in_h * d.in_w;
        size_t out_plane = d.out_h * d.out_w;
        for (size_t n = 0; n < batch; ++n) {
          const double* xn = &x.data[n * d.in_c * in_plane];
          double* dxn = &dx.data[n * d.in_c * in_plane];
          const double* gn = &grad.data[n * d.out_c * out_plane];
          for (size_t oc = 0; oc < d.out_c; ++oc) {
            const double* woc = &w.data[oc * d.in_c * d.k * d.k];
            double* dwoc = &dw.data[oc * d.in_c * d.k * d.k];
            for (size_t i = 0; i < d.out_h; ++i) {
              for (size_t j = 0; j < d.out_w; ++j) {
                double g = gn[oc * out_plane + i * d.out_w + j];
                db.data[oc] += g;
                if (g == 0.0) continue;
                for (size_t ic = 0; ic < d.in_c; ++ic) {
                  const double* xp = &xn[ic * in_plane + i * d.s * d.in_w + j * d.s];
                  double* dxp = &dxn[ic * in_plane + i * d.s * d.in_w + j * d.s];
                  const double* wp = &woc[ic * d.k * d.k];
                  double* dwp = &dwoc[ic * d.k * d.k];
                  for (size_t u = 0; u < d.k; ++u) {
                    for (size_t v = 0; v < d.k; ++v) {
                      dwp[u * d.k + v] += g * xp[u * d.in_w + v];
                      dxp[u * d.in_w + v] += g * wp[u * d.k + v];
                    }
                  }
                }
              }
            }
          }
        }
        layer_grads[ri] = {std::move(dw), std::move(db)};
        grad = std::move(dx);
        break;
      }
    }
  }

  BackwardResult result;
  for (size_t i = 0; i < plan.layers.size(); ++i) {
    if (!has_params(plan.layers[i].kind)) continue;
    result.grads.add(weight_name(i), std::move(layer_grads[i].first));
    result.grads.add(bias_name(i), std::move(layer_grads[i].second));
  }
  result.input_grad = std::move(grad);
  ensure_finite(result.input_grad, "backward input gradient");
  return result;
}

LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape.size() != 2)
    throw UsageError("softmax_cross_entropy: logits must be [batch, classes], got " +
                     shape_str(logits.shape));
  size_t batch = logits.shape[0];
  size_t classes = logits.shape[1];
  if (labels.size() != batch)
    throw UsageError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch " + std::to_string(batch));

  LossResult result;
  result.dlogits = Tensor({batch, classes});
  double total = 0.0;
  for (size_t r = 0; r < batch; ++r) {
    int label = labels[r];
    if (label < 0 || static_cast<size_t>(label) >= classes)
      throw DataError("softmax_cross_entropy: label " + std::to_string(label) +
                      " out of range at row " + std::to_string(r));
    const double* lr = &logits.data[r * classes];
    double m = lr[0];
    for (size_t c = 1; c < classes; ++c) m = std::max(m, lr[c]);
    double sum = 0.0;
    for (size_t c = 0; c < classes; ++c) sum += std::exp(lr[c] - m);
    double log_sum = std::log(sum);
    total += log_sum - (lr[label] - m);
    double* dr = &result.dlogits.data[r * classes];
    double inv_batch = 1.0 / static_cast<double>(batch);
    for (size_t c = 0; c < classes; ++c)
      dr[c] = (std::exp(lr[c] - m) / sum - (static_cast<size_t>(label) == c ? 1.0 : 0.0)) *
              inv_batch;
  }
  result.loss = total / static_cast<double>(batch);
  return result;
}

ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double eta) {
  if (!params.compatible(grads))
    throw UsageError("sgd_step: params and grads are not compatible");
  if (!(eta > 0.0)) throw UsageError("sgd_step: eta must be positive");
  ParamSet out = params;
  for (size_t i = 0; i < out.entries.size(); ++i) {
    double* p = out.entries[i].second.data.data();
    const double* g = grads.entries[i].second.data.data();
    size_t n = out.entries[i].second.data.size();
    for (size_t k = 0; k < n; ++k) p[k] -= eta * g[k];
  }
  return out;
}

ParamSet clip_by_global_norm(const ParamSet& grads, double threshold) {
  if (!(threshold > 0.0))
    throw UsageError("clip_by_global_norm: threshold must be positive");
  double norm = std::sqrt(global_sq_norm(grads));
  // the small slack keeps a second application an exact no-op
  if (norm <= threshold * (1.0 + 4.0 * 2.220446049250313e-16)) return grads;
  double scale = threshold / norm;
  ParamSet out = grads;
  for (auto& [name, t] : out.entries)
    for (double& v : t.data) v *= scale;
  return out;
}

double LrSchedule::at(int t) const {
  if (t < 0) throw UsageError("LrSchedule::at: t must be nonnegative");
  return eta0 / (1.0 + static_cast<double>(t));
}

double lr_at(const LrSchedule& schedule, int t) { return schedule.at(t); }

ParamSet finite_diff_grad(const std::function<double(const ParamSet&)>& loss,
                          const ParamSet& params, double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
    throw UsageError("finite_diff_grad: epsilon must lie in [1e-7, 1e-3]");
  ParamSet probe = params;
  ParamSet grads = params;
  for (size_t e = 0; e < probe.entries.size(); ++e) {
    Tensor& t = probe.entries[e].second;
    Tensor& g = grads.entries[e].second;
    for (size_t i = 0; i < t.data.size(); ++i) {
      double saved = t.data[i];
      t.data[i] = saved + epsilon;
      double up = loss(probe);
      t.data[i] = saved - epsilon;
      double down = loss(probe);
      t.data[i] = saved;
      g.data[i] = (up - down) / (2.0 * epsilon);
    }
  }
  return grads;
}

ParamSet finite_diff_grad(const StackPlan& plan, const ParamSet& params,
                          const Tensor& input, const std::vector<int>& labels,
                          double epsilon) {
  auto loss = [&](const ParamSet& p) {
    Tensor logits = forward(plan, p, input);
    return softmax_cross_entropy(logits, labels).loss;
  };
  return finite_diff_grad(loss, params, epsilon);
}

namespace {

struct CheckSetup {
  std::string name;
  std::vector<size_t> input_shape;
  Stack stack;
};

double rel_err(double a, double b) {
  double denom = std::max({1.0, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

} // namespace

std::vector<GradCheckCase> gradcheck_suite(const GradCheckOptions& options) {
  const std::vector<CheckSetup> setups = {
      {"dense", {6}, {LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dense(3)}},
      {"relu", {5}, {LayerSpec::relu(), LayerSpec::dense(4), LayerSpec::relu(),
                     LayerSpec::dense(3)}},
      {"flatten", {2, 3, 2}, {LayerSpec::flatten(), LayerSpec::dense(3)}},
      {"conv2d", {1, 4, 4}, {LayerSpec::conv2d(2, 3, 1), LayerSpec::relu(),
                             LayerSpec::flatten(), LayerSpec::dense(3)}},
      {"conv2d_strided", {1, 5, 5}, {LayerSpec::conv2d(2, 2, 2), LayerSpec::flatten(),
                                     LayerSpec::dense(3)}},
  };

  std::vector<GradCheckCase> report;
  for (const CheckSetup& setup : setups) {
    StackPlan plan = plan_stack(setup.stack, setup.input_shape);
    double worst = 0.0;
    for (uint64_t trial = 0; trial < 3; ++trial) {
      Rng rng = substream(options.seed, "gradcheck", trial,
                          static_cast<uint64_t>(&setup - setups.data()));
      ParamSet params = init_params(plan, rng);
      // biases start at zero; perturb them so their gradients are exercised
      for (auto& [name, t] : params.entries)
        for (double& v : t.data) v += 0.1 * rng.uniform(-1.0, 1.0);

      size_t batch = 3;
      std::vector<size_t> in_shape = setup.input_shape;
      in_shape.insert(in_shape.begin(), batch);
      Tensor input(in_shape);
      for (double& v : input.data) v = rng.uniform(-1.0, 1.0);
      std::vector<int> labels(batch);
      size_t classes = plan.output_shape()[0];
      for (int& l : labels) l = static_cast<int>(rng.below(classes));

      ForwardTrace trace;
      Tensor logits = forward(plan, params, input, &trace);
      LossResult loss = softmax_cross_entropy(logits, labels);
      ParamSet bp = backward(plan, params, trace, loss.dlogits).grads;
      if (options.inject_dense_sign_flip) {
        for (auto& [name, t] : bp.entries) {
          if (name.ends_with(".w")) {
            for (double& v : t.data) v = -v;
            break;
          }
        }
      }
      ParamSet fd = finite_diff_grad(plan, params, input, labels, options.epsilon);
      for (size_t e = 0; e < bp.entries.size(); ++e)
        for (size_t i = 0; i < bp.entries[e].second.data.size(); ++i)
          worst = std::max(worst, rel_err(bp.entries[e].second.data[i],
                                          fd.entries[e].second.data[i]));
    }
    report.push_back({setup.name, worst});
  }
  return report;
}

} // namespace fsl
