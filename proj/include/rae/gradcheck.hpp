#pragma once

// Central finite-difference checks of the hand-written backward passes,
// run in double precision on tiny random models.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "rae/model.hpp"
#include "rae/sst.hpp"

namespace rae {

struct BlockError {
  std::string name;
  double max_relative_error = 0;
  std::size_t entries = 0;
};

struct GradcheckReport {
  std::vector<BlockError> blocks;
  double tolerance = 1e-4;

  bool passed() const;
  double max_error() const;
  void merge(const GradcheckReport& other, const std::string& prefix);
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Gradients smaller than this are compared in absolute terms.
  double floor = 1e-6;
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor);

using RaeGradientFn = std::function<RaeParams<double>(
    const Columns<double>& tokens, const RaeParams<double>& params, const RaeConfig& cfg)>;

// Default: rae_loss_and_grads.
RaeGradientFn exact_rae_gradients();

// Checks every parameter of `params` against the reconstruction loss.
GradcheckReport check_rae_gradients(const RaeParams<double>& params, const Columns<double>& tokens,
                                    const RaeConfig& cfg, const GradcheckOptions& options,
                                    const RaeGradientFn& gradient_fn = exact_rae_gradients());

// Random two-stage MLP of width d with LayerNorm; checks parameter and
// input gradients of a random linear functional of the output.
GradcheckReport check_mlp_gradients(Index d, bool layer_norm, bool relu_after_layer2,
                                    std::uint64_t seed, const GradcheckOptions& options);

// Sentiment objective (cross-entropy plus lambda-weighted reconstruction)
// over a fixed 4-leaf tree.
GradcheckReport check_sentiment_gradients(const RaeParams<double>& params,
                                          const SentimentHead<double>& head,
                                          const Columns<double>& tokens,
                                          const std::vector<NodeSpan>& spans, const RaeConfig& cfg,
                                          double lambda, const GradcheckOptions& options);

// The full suite used by the `gradcheck` command: nn-core MLPs, the
// autoencoder (d_emb = 8, n = 3) over several seeds, and the sentiment path.
GradcheckReport run_gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options = {});

void write_report(std::ostream& os, const GradcheckReport& report);

}  // namespace rae
