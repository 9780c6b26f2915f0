#pragma once

// The recursive autoencoder: resizing MLPs in and out of the internal width,
// a shared pair-merging encoder that builds the full span pyramid, and a
// shared splitting decoder whose overlapping predictions are averaged.

#include <cstdint>
#include <random>
#include <vector>

#include "rae/nn.hpp"

namespace rae {

struct RaeConfig {
  std::uint32_t d_glove = 300;
  std::uint32_t d_emb = 300;
  std::uint32_t max_len = 64;
  std::uint32_t n_buckets = 1;

  // Fills n_buckets from max_len and validates.
  static RaeConfig make(std::uint32_t d_glove, std::uint32_t d_emb, std::uint32_t max_len);

  void validate() const;

  Index step_width() const { return 1 + static_cast<Index>(n_buckets); }
  Index core_hidden() const { return 3 * static_cast<Index>(d_emb) / 2; }
  Index resize_hidden() const { return (static_cast<Index>(d_glove) + d_emb) / 2; }

  bool operator==(const RaeConfig&) const = default;
};

// Steps 1, 2, 3-4, 5-7, then buckets of three: 8-10, 11-13, ...
std::uint32_t bucket_index(std::uint32_t step);

std::uint32_t bucket_count(std::uint32_t max_len);

struct StepFeatures {
  double scalar = 0;
  std::vector<double> one_hot;
};

StepFeatures step_features(std::uint32_t step, const RaeConfig& cfg);

template <typename Real>
struct RaeParams {
  MlpParams<Real> mlp_in;
  MlpParams<Real> mlp_enc;
  MlpParams<Real> mlp_dec;
  MlpParams<Real> mlp_out;
};

template <typename P, typename F>
void for_each_mlp(P& params, F&& f) {
  f("mlp_in", params.mlp_in);
  f("mlp_enc", params.mlp_enc);
  f("mlp_dec", params.mlp_dec);
  f("mlp_out", params.mlp_out);
}

// Architecture with zero weights; see initialize() for random weights.
template <typename Real>
RaeParams<Real> make_rae_params(const RaeConfig& cfg);

template <typename Real>
RaeParams<Real> make_rae_params(const RaeConfig& cfg, std::uint64_t seed);

template <typename Real>
RaeParams<Real> zeros_like(const RaeParams<Real>& p);

template <typename Real>
void initialize(RaeParams<Real>& p, std::mt19937_64& rng);

// Throws ShapeError unless every tensor matches the architecture for cfg.
template <typename Real>
void check_architecture(const RaeParams<Real>& p, const RaeConfig& cfg);

template <typename Real>
std::vector<ParamBlock<Real>> param_blocks(RaeParams<Real>& p);

template <typename Real>
std::vector<ParamBlock<const Real>> param_blocks(const RaeParams<Real>& p);

template <typename To, typename From>
RaeParams<To> cast_params(const RaeParams<From>& p);

// levels[k] holds one column per span of length k+1; column i covers
// tokens i..i+k.
template <typename Real>
struct EncodingPyramid {
  std::vector<Columns<Real>> levels;

  std::size_t length() const { return levels.empty() ? 0 : levels.front().cols(); }
  Vector<Real> cell(std::size_t level, std::size_t start) const;
  Vector<Real> root() const { return levels.back().col(0); }
};

template <typename Real>
struct CompressedCode {
  Vector<Real> root;
  std::uint32_t length = 0;
};

template <typename Real>
struct EncoderTape {
  MlpTape<Real> in;
  std::vector<MlpTape<Real>> steps;  // steps[k-1] produced levels[k]
};

template <typename Real>
EncodingPyramid<Real> encode_pyramid(const Columns<Real>& inputs, const RaeParams<Real>& params,
                                     const RaeConfig& cfg,
                                     std::vector<MlpTape<Real>>* step_tapes = nullptr);

template <typename Real>
struct Compressed {
  CompressedCode<Real> code;
  EncodingPyramid<Real> pyramid;
};

// tokens: d_glove x n.
template <typename Real>
Compressed<Real> compress(const Columns<Real>& tokens, const RaeParams<Real>& params,
                          const RaeConfig& cfg, EncoderTape<Real>* tape = nullptr);

// One decoder recursion: m columns in, m+1 columns out.
template <typename Real>
Columns<Real> decode_once(const Columns<Real>& level, std::uint32_t step,
                          const RaeParams<Real>& params, const RaeConfig& cfg,
                          MlpTape<Real>* tape = nullptr);

template <typename Real>
struct DecoderTape {
  std::vector<MlpTape<Real>> steps;  // steps[j] maps width j+1 to j+2
  MlpTape<Real> out;
};

// Returns d_glove x length.
template <typename Real>
Columns<Real> decompress(const CompressedCode<Real>& code, const RaeParams<Real>& params,
                         const RaeConfig& cfg, DecoderTape<Real>* tape = nullptr);

// Backpropagates gradients given for any subset of pyramid cells (same
// shapes as the pyramid levels) through MLP_enc and MLP_in. Returns the
// gradient with respect to the raw token vectors.
template <typename Real>
Columns<Real> encoder_backward(const RaeParams<Real>& params, const RaeConfig& cfg,
                               const EncoderTape<Real>& tape,
                               std::vector<Columns<Real>> level_grads, RaeParams<Real>& grads);

// Backpropagates output gradients (d_glove x n) through MLP_out and the
// decoder recursions. Returns the gradient with respect to the root.
template <typename Real>
Vector<Real> decoder_backward(const RaeParams<Real>& params, const RaeConfig& cfg,
                              const DecoderTape<Real>& tape, const Columns<Real>& output_grad,
                              RaeParams<Real>& grads);

// Mean over positions and dimensions of the squared reconstruction error.
template <typename Real>
Real reconstruction_mse(const Columns<Real>& reconstructed, const Columns<Real>& tokens);

// Adds weight * d(loss)/d(params) to `grads` and returns the loss.
template <typename Real>
Real accumulate_rae_gradients(const Columns<Real>& tokens, const RaeParams<Real>& params,
                              const RaeConfig& cfg, RaeParams<Real>& grads, Real weight = 1);

template <typename Real>
struct RaeLoss {
  Real loss = 0;
  RaeParams<Real> grads;
};

template <typename Real>
RaeLoss<Real> rae_loss_and_grads(const Columns<Real>& tokens, const RaeParams<Real>& params,
                                 const RaeConfig& cfg);

}  // namespace rae
