#pragma once

// Epoch-level training and evaluation loops shared by the command-line
// tools and the integration tests. Everything here is single-threaded and
// deterministic for a given seed.

#include <cstdint>
#include <string_view>
#include <vector>

#include "rae/corpus.hpp"
#include "rae/model.hpp"
#include "rae/sst.hpp"

namespace rae {

struct OptimOptions {
  AdamOptions adam;
  double clip = 5.0;
};

enum class LrSchedule { constant, cosine };

LrSchedule parse_lr_schedule(std::string_view name);

// Learning rate for a 1-based epoch. Cosine decays from `lr` at epoch 1
// to `lr_min` at the final epoch.
double scheduled_lr(LrSchedule schedule, double lr, double lr_min, std::size_t epoch,
                    std::size_t epochs);

// One pass over `batches`; each batch is one Adam step on the mean gradient.
// Returns the token-weighted mean reconstruction MSE seen during the pass.
template <typename Real>
double train_ae_epoch(RaeParams<Real>& params, AdamState<Real>& adam,
                      const std::vector<Batch>& batches, const EmbeddingTable& table,
                      const RaeConfig& cfg, const OptimOptions& options);

struct MetricsRow {
  std::size_t length = 0;
  std::size_t n_sequences = 0;
  double top1 = 0;
  double topk = 0;
  double mse = 0;
};

struct AeEvaluation {
  std::vector<MetricsRow> rows;  // ascending length
  double mse = 0;                // token-weighted over the whole corpus
  double top1 = 0;
  double topk = 0;
  std::size_t scored_tokens = 0;
};

// Decodes every sentence and scores nearest-neighbour reconstruction.
// With skip_unk, unknown targets are left out of the accuracy counts.
template <typename Real>
AeEvaluation evaluate_ae(const RaeParams<Real>& params, const TokenizedCorpus& corpus,
                         const EmbeddingTable& table, const RaeConfig& cfg, std::size_t k,
                         bool skip_unk = false);

// Token-weighted reconstruction MSE only (no nearest-neighbour search).
template <typename Real>
double corpus_mse(const RaeParams<Real>& params, const TokenizedCorpus& corpus,
                  const EmbeddingTable& table, const RaeConfig& cfg);

struct SstExample {
  TokenIds ids;
  std::vector<NodeSpan> spans;
};

// Trees longer than max_len are dropped and counted in `skipped`.
std::vector<SstExample> prepare_sst(const std::vector<SentimentTree>& trees,
                                    const EmbeddingTable& table, std::size_t max_len,
                                    std::size_t* skipped = nullptr);

template <typename Real>
struct SstTrainer {
  RaeParams<Real>& params;
  SentimentHead<Real>& head;
  AdamState<Real> adam;
  SentimentObjective objective;
  OptimOptions options;
  std::size_t batch_size = 16;

  // Returns the mean per-tree objective over the epoch.
  double run_epoch(const std::vector<SstExample>& examples, const EmbeddingTable& table,
                   const RaeConfig& cfg, std::uint64_t seed);
};

template <typename Real>
std::vector<std::vector<NodeLogits>> predict_sst(const RaeParams<Real>& params,
                                                 const SentimentHead<Real>& head,
                                                 const std::vector<SstExample>& examples,
                                                 const EmbeddingTable& table,
                                                 const RaeConfig& cfg);

std::vector<std::vector<NodeSpan>> gold_spans(const std::vector<SstExample>& examples);

}  // namespace rae
