#pragma once

// Dense layers, LayerNorm, two-stage MLPs with hand-written reverse mode,
// the MSE loss and an Adam optimizer. Every routine is templated on the
// scalar type; float and double are instantiated.

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rae {

using Index = Eigen::Index;

// Weights are row-major (out x in), matching the checkpoint layout.
template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

template <typename Real>
using RowVector = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

// A batch of vectors, one per column.
template <typename Real>
using Columns = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Real>
struct AffineLayer {
  Matrix<Real> weight;
  Vector<Real> bias;

  AffineLayer() = default;
  AffineLayer(Index out, Index in)
      : weight(Matrix<Real>::Zero(out, in)), bias(Vector<Real>::Zero(out)) {}

  Index in_size() const { return weight.cols(); }
  Index out_size() const { return weight.rows(); }
};

template <typename Real>
struct LayerNormParams {
  Vector<Real> gain;
  Vector<Real> shift;
  Real epsilon = Real(1e-5);

  LayerNormParams() = default;
  explicit LayerNormParams(Index d)
      : gain(Vector<Real>::Ones(d)), shift(Vector<Real>::Zero(d)) {}

  Index size() const { return gain.size(); }
};

// Two stages, each affine -> optional LayerNorm -> ReLU. The ReLU on the
// second stage is controlled by relu_after_layer2.
template <typename Real>
struct MlpParams {
  AffineLayer<Real> layer1;
  std::optional<LayerNormParams<Real>> norm1;
  AffineLayer<Real> layer2;
  std::optional<LayerNormParams<Real>> norm2;
  bool relu_after_layer2 = true;

  Index in_size() const { return layer1.in_size(); }
  Index hidden_size() const { return layer1.out_size(); }
  Index out_size() const { return layer2.out_size(); }
};

struct MlpShape {
  Index in = 0;
  Index hidden = 0;
  Index out = 0;
  bool layer_norm = false;
  bool relu_after_layer2 = true;
};

// Zero weights and biases, unit gains, zero shifts.
template <typename Real>
MlpParams<Real> make_mlp(const MlpShape& shape);

// Same structure as `p`, every entry zero (including gains). Used for gradients.
template <typename Real>
MlpParams<Real> zeros_like(const MlpParams<Real>& p);

// Uniform weights in +-sqrt(6 / (fan_in + fan_out)); biases 0, gains 1, shifts 0.
template <typename Real>
void initialize(MlpParams<Real>& p, std::mt19937_64& rng);

template <typename Real>
void validate(const MlpParams<Real>& p);

// Visits every tensor of an MLP in checkpoint order.
template <typename P, typename F>
void for_each_tensor(P& mlp, F&& f) {
  f("layer1.weight", mlp.layer1.weight);
  f("layer1.bias", mlp.layer1.bias);
  if (mlp.norm1) {
    f("norm1.gain", mlp.norm1->gain);
    f("norm1.shift", mlp.norm1->shift);
  }
  f("layer2.weight", mlp.layer2.weight);
  f("layer2.bias", mlp.layer2.bias);
  if (mlp.norm2) {
    f("norm2.gain", mlp.norm2->gain);
    f("norm2.shift", mlp.norm2->shift);
  }
}

// A named view of one parameter (or gradient) tensor.
template <typename T>
struct ParamBlock {
  std::string name;
  std::span<T> values;
};

template <typename P, typename Out>
void append_blocks(P& mlp, std::string_view prefix, Out& out) {
  for_each_tensor(mlp, [&](std::string_view name, auto& t) {
    out.push_back({std::string(prefix) + "." + std::string(name),
                   std::span{t.data(), static_cast<std::size_t>(t.size())}});
  });
}

template <typename Real>
Vector<Real> affine_forward(const AffineLayer<Real>& layer, const Vector<Real>& input);

template <typename Real>
Columns<Real> affine_forward(const AffineLayer<Real>& layer, const Columns<Real>& inputs);

// Population variance; throws for d < 2.
template <typename Real>
Vector<Real> layer_norm_forward(const LayerNormParams<Real>& p, const Vector<Real>& input);

template <typename Real>
struct StageTape {
  Columns<Real> affine;      // pre-normalization
  Columns<Real> normalized;  // (x - mean) * inv_std, empty without LayerNorm
  RowVector<Real> inv_std;
  Columns<Real> output;      // after ReLU (if any)
};

template <typename Real>
struct MlpTape {
  Columns<Real> input;
  StageTape<Real> hidden;
  StageTape<Real> out;

  const Columns<Real>& output() const { return out.output; }
};

template <typename Real>
MlpTape<Real> mlp_forward(const MlpParams<Real>& p, Columns<Real> input);

// Forward pass without keeping a tape around.
template <typename Real>
Columns<Real> mlp_apply(const MlpParams<Real>& p, const Columns<Real>& input);

// Accumulates parameter gradients into `grads` (which must be shaped like
// `p`) and returns the gradient with respect to the tape's input.
template <typename Real>
Columns<Real> mlp_backward(const MlpParams<Real>& p, const MlpTape<Real>& tape,
                           const Columns<Real>& output_grad, MlpParams<Real>& grads);

template <typename Real>
struct LossAndGrad {
  Real loss = 0;
  Vector<Real> grad;
};

// loss = mean((predicted - target)^2), grad = 2/d (predicted - target).
template <typename Real>
LossAndGrad<Real> mse_loss(const Vector<Real>& predicted, const Vector<Real>& target);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Real>
struct AdamState {
  std::vector<std::vector<Real>> first_moment;
  std::vector<std::vector<Real>> second_moment;
  std::int64_t step_count = 0;
};

// Bias-corrected Adam. Moments are allocated (zeroed) on the first call.
// Rejects non-finite gradients before touching any parameter.
template <typename Real>
void adam_step(const std::vector<ParamBlock<Real>>& params,
               const std::vector<ParamBlock<const Real>>& grads, AdamState<Real>& state,
               const AdamOptions& options);

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename Real>
double clip_global_norm(const std::vector<ParamBlock<Real>>& grads, double max_norm);

}  // namespace rae
