#include "rae/nn.hpp"

#include <cmath>
#include <sstream>

#include "rae/error.hpp"

namespace rae {

namespace {

std::string dims_message(std::string_view what, Index expected, Index got) {
  std::ostringstream os;
  os << what << ": expected " << expected << ", got " << got;
  return os.str();
}

void require_dim(std::string_view what, Index expected, Index got) {
  if (expected != got) throw ShapeError(dims_message(what, expected, got));
}

template <typename Real>
void init_affine(AffineLayer<Real>& layer, std::mt19937_64& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(layer.in_size() + layer.out_size()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Index i = 0; i < layer.weight.size(); ++i) {
    layer.weight.data()[i] = static_cast<Real>(dist(rng));
  }
  layer.bias.setZero();
}

template <typename Real>
void reset_norm(std::optional<LayerNormParams<Real>>& norm) {
  if (!norm) return;
  norm->gain.setOnes();
  norm->shift.setZero();
}

template <typename Real>
Columns<Real> layer_norm_columns(const LayerNormParams<Real>& p, const Columns<Real>& x,
                                 Columns<Real>& normalized, RowVector<Real>& inv_std) {
  const Index d = x.rows();
  if (d < 2) throw ShapeError("LayerNorm over fewer than 2 elements is degenerate");
  require_dim("LayerNorm width", p.size(), d);
  const RowVector<Real> mean = x.colwise().mean();
  normalized = x.rowwise() - mean;
  const RowVector<Real> var = normalized.array().square().colwise().sum() / Real(d);
  inv_std = (var.array() + p.epsilon).rsqrt();
  normalized.array().rowwise() *= inv_std.array();
  Columns<Real> out = (normalized.array().colwise() * p.gain.array()).matrix();
  out.colwise() += p.shift;
  return out;
}

template <typename Real>
void run_stage(const AffineLayer<Real>& layer, const std::optional<LayerNormParams<Real>>& norm,
               bool relu, const Columns<Real>& input, StageTape<Real>& tape) {
  tape.affine = layer.weight * input;
  tape.affine.colwise() += layer.bias;
  if (norm) {
    tape.output = layer_norm_columns(*norm, tape.affine, tape.normalized, tape.inv_std);
  } else {
    tape.normalized.resize(0, 0);
    tape.inv_std.resize(0);
    tape.output = tape.affine;
  }
  if (relu) tape.output = tape.output.cwiseMax(Real(0));
}

// Gradient of one stage; returns the gradient with respect to its input.
template <typename Real>
Columns<Real> stage_backward(const AffineLayer<Real>& layer,
                             const std::optional<LayerNormParams<Real>>& norm, bool relu,
                             const Columns<Real>& input, const StageTape<Real>& tape,
                             Columns<Real> grad, AffineLayer<Real>& layer_grad,
                             std::optional<LayerNormParams<Real>>& norm_grad) {
  if (relu) grad = (tape.output.array() > Real(0)).select(grad, Real(0));
  if (norm) {
    const Index d = grad.rows();
    norm_grad->gain += (grad.array() * tape.normalized.array()).matrix().rowwise().sum();
    norm_grad->shift += grad.rowwise().sum();
    Columns<Real> dxhat = (grad.array().colwise() * norm->gain.array()).matrix();
    const RowVector<Real> mean_dxhat = dxhat.colwise().sum() / Real(d);
    const RowVector<Real> mean_dxhat_xhat =
        (dxhat.array() * tape.normalized.array()).colwise().sum() / Real(d);
    dxhat.rowwise() -= mean_dxhat;
    dxhat.array() -= tape.normalized.array().rowwise() * mean_dxhat_xhat.array();
    dxhat.array().rowwise() *= tape.inv_std.array();
    grad = std::move(dxhat);
  }
  layer_grad.weight.noalias() += grad * input.transpose();
  layer_grad.bias += grad.rowwise().sum();
  return layer.weight.transpose() * grad;
}

}  // namespace

template <typename Real>
MlpParams<Real> make_mlp(const MlpShape& shape) {
  MlpParams<Real> p;
  p.layer1 = AffineLayer<Real>(shape.hidden, shape.in);
  p.layer2 = AffineLayer<Real>(shape.out, shape.hidden);
  if (shape.layer_norm) {
    p.norm1.emplace(shape.hidden);
    p.norm2.emplace(shape.out);
  }
  p.relu_after_layer2 = shape.relu_after_layer2;
  return p;
}

template <typename Real>
MlpParams<Real> zeros_like(const MlpParams<Real>& p) {
  MlpParams<Real> z = p;
  for_each_tensor(z, [](std::string_view, auto& t) { t.setZero(); });
  return z;
}

template <typename Real>
void initialize(MlpParams<Real>& p, std::mt19937_64& rng) {
  init_affine(p.layer1, rng);
  init_affine(p.layer2, rng);
  reset_norm(p.norm1);
  reset_norm(p.norm2);
}

template <typename Real>
void validate(const MlpParams<Real>& p) {
  require_dim("layer1 bias", p.layer1.out_size(), p.layer1.bias.size());
  require_dim("layer2 bias", p.layer2.out_size(), p.layer2.bias.size());
  require_dim("layer2 input", p.layer1.out_size(), p.layer2.in_size());
  if (p.norm1) {
    require_dim("norm1 gain", p.layer1.out_size(), p.norm1->gain.size());
    require_dim("norm1 shift", p.layer1.out_size(), p.norm1->shift.size());
  }
  if (p.norm2) {
    require_dim("norm2 gain", p.layer2.out_size(), p.norm2->gain.size());
    require_dim("norm2 shift", p.layer2.out_size(), p.norm2->shift.size());
  }
}

template <typename Real>
Vector<Real> affine_forward(const AffineLayer<Real>& layer, const Vector<Real>& input) {
  require_dim("affine input", layer.in_size(), input.size());
  return layer.weight * input + layer.bias;
}

template <typename Real>
Columns<Real> affine_forward(const AffineLayer<Real>& layer, const Columns<Real>& inputs) {
  require_dim("affine input", layer.in_size(), inputs.rows());
  Columns<Real> out = layer.weight * inputs;
  out.colwise() += layer.bias;
  return out;
}

template <typename Real>
Vector<Real> layer_norm_forward(const LayerNormParams<Real>& p, const Vector<Real>& input) {
  Columns<Real> normalized;
  RowVector<Real> inv_std;
  Columns<Real> out = layer_norm_columns(p, Columns<Real>(input), normalized, inv_std);
  return out.col(0);
}

template <typename Real>
MlpTape<Real> mlp_forward(const MlpParams<Real>& p, Columns<Real> input) {
  require_dim("mlp input", p.in_size(), input.rows());
  MlpTape<Real> tape;
  tape.input = std::move(input);
  run_stage(p.layer1, p.norm1, true, tape.input, tape.hidden);
  run_stage(p.layer2, p.norm2, p.relu_after_layer2, tape.hidden.output, tape.out);
  return tape;
}

template <typename Real>
Columns<Real> mlp_apply(const MlpParams<Real>& p, const Columns<Real>& input) {
  return std::move(mlp_forward(p, input).out.output);
}

template <typename Real>
Columns<Real> mlp_backward(const MlpParams<Real>& p, const MlpTape<Real>& tape,
                           const Columns<Real>& output_grad, MlpParams<Real>& grads) {
  const auto stale = [](std::string_view what, Index expected, Index got) {
    if (expected != got) throw ShapeError("stale tape, " + dims_message(what, expected, got));
  };
  stale("input rows", p.in_size(), tape.input.rows());
  stale("hidden rows", p.hidden_size(), tape.hidden.affine.rows());
  stale("output rows", p.out_size(), tape.out.affine.rows());
  stale("hidden norm cache", p.norm1 ? p.hidden_size() : 0, tape.hidden.normalized.rows());
  stale("output norm cache", p.norm2 ? p.out_size() : 0, tape.out.normalized.rows());
  require_dim("output gradient rows", p.out_size(), output_grad.rows());
  require_dim("output gradient columns", tape.input.cols(), output_grad.cols());
  require_dim("gradient buffer", p.in_size(), grads.in_size());

  Columns<Real> hidden_grad =
      stage_backward(p.layer2, p.norm2, p.relu_after_layer2, tape.hidden.output, tape.out,
                     output_grad, grads.layer2, grads.norm2);
  return stage_backward(p.layer1, p.norm1, true, tape.input, tape.hidden,
                        std::move(hidden_grad), grads.layer1, grads.norm1);
}

template <typename Real>
LossAndGrad<Real> mse_loss(const Vector<Real>& predicted, const Vector<Real>& target) {
  require_dim("mse operands", predicted.size(), target.size());
  if (predicted.size() == 0) throw ShapeError("mse of empty vectors");
  const Vector<Real> diff = predicted - target;
  const Real d = static_cast<Real>(diff.size());
  return {diff.squaredNorm() / d, diff * (Real(2) / d)};
}

template <typename Real>
void adam_step(const std::vector<ParamBlock<Real>>& params,
               const std::vector<ParamBlock<const Real>>& grads, AdamState<Real>& state,
               const AdamOptions& options) {
  if (params.size() != grads.size()) {
    throw ShapeError(dims_message("adam parameter blocks", static_cast<Index>(params.size()),
                                  static_cast<Index>(grads.size())));
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    require_dim("adam block " + params[b].name, static_cast<Index>(params[b].values.size()),
                static_cast<Index>(grads[b].values.size()));
    for (Real g : grads[b].values) {
      if (!std::isfinite(g)) throw Error("non-finite gradient in block " + grads[b].name);
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& block : params) {
      state.first_moment.emplace_back(block.values.size(), Real(0));
      state.second_moment.emplace_back(block.values.size(), Real(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam state does not match parameter blocks");
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);
  const Real beta1 = static_cast<Real>(options.beta1);
  const Real beta2 = static_cast<Real>(options.beta2);

  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    auto w = params[b].values;
    auto g = grads[b].values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1 * m[i] + (Real(1) - beta1) * g[i];
      v[i] = beta2 * v[i] + (Real(1) - beta2) * g[i] * g[i];
      const double m_hat = static_cast<double>(m[i]) / correction1;
      const double v_hat = static_cast<double>(v[i]) / correction2;
      w[i] -= static_cast<Real>(options.lr * m_hat / (std::sqrt(v_hat) + options.eps));
    }
  }
}

template <typename Real>
double clip_global_norm(const std::vector<ParamBlock<Real>>& grads, double max_norm) {
  double sum = 0;
  for (const auto& block : grads) {
    for (Real g : block.values) sum += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sum);
  if (norm > max_norm && norm > 0) {
    const Real scale = static_cast<Real>(max_norm / norm);
    for (const auto& block : grads) {
      for (Real& g : block.values) g *= scale;
    }
  }
  return norm;
}

#define RAE_INSTANTIATE_NN(Real)                                                              \
  template MlpParams<Real> make_mlp<Real>(const MlpShape&);                                  \
  template MlpParams<Real> zeros_like(const MlpParams<Real>&);                               \
  template void initialize(MlpParams<Real>&, std::mt19937_64&);                              \
  template void validate(const MlpParams<Real>&);                                            \
  template Vector<Real> affine_forward(const AffineLayer<Real>&, const Vector<Real>&);       \
  template Columns<Real> affine_forward(const AffineLayer<Real>&, const Columns<Real>&);     \
  template Vector<Real> layer_norm_forward(const LayerNormParams<Real>&, const Vector<Real>&); \
  template MlpTape<Real> mlp_forward(const MlpParams<Real>&, Columns<Real>);                 \
  template Columns<Real> mlp_apply(const MlpParams<Real>&, const Columns<Real>&);            \
  template Columns<Real> mlp_backward(const MlpParams<Real>&, const MlpTape<Real>&,          \
                                      const Columns<Real>&, MlpParams<Real>&);               \
  template LossAndGrad<Real> mse_loss(const Vector<Real>&, const Vector<Real>&);             \
  template void adam_step(const std::vector<ParamBlock<Real>>&,                              \
                          const std::vector<ParamBlock<const Real>>&, AdamState<Real>&,      \
                          const AdamOptions&);                                               \
  template double clip_global_norm(const std::vector<ParamBlock<Real>>&, double);

RAE_INSTANTIATE_NN(float)
RAE_INSTANTIATE_NN(double)

}  // namespace rae
