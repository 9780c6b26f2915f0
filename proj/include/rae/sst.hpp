#pragma once

// Sentiment treebank support: the parenthesized tree format, mapping tree
// nodes to pyramid cells, a linear classifier over those cells, and the
// all-node / root-only accuracy metrics.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rae/model.hpp"

namespace rae {

inline constexpr int kSentimentClasses = 5;

struct SentimentTree {
  int label = 0;
  std::string token;                    // leaves only
  std::vector<SentimentTree> children;  // empty or exactly two

  bool is_leaf() const { return children.empty(); }
};

// Throws FormatError with the byte offset of the problem.
SentimentTree parse_sst_line(std::string_view text);

// Canonical form: "(label token)" / "(label left right)", single spaces.
std::string serialize(const SentimentTree& tree);

std::vector<std::string> leaf_tokens(const SentimentTree& tree);

struct NodeSpan {
  std::size_t start = 0;
  std::size_t length = 0;
  int label = 0;

  bool operator==(const NodeSpan&) const = default;
};

// Pre-order; the first entry is the root.
std::vector<NodeSpan> node_spans(const SentimentTree& tree);

std::vector<SentimentTree> load_sst_file(const std::filesystem::path& path);

template <typename Real>
struct SentimentHead {
  AffineLayer<Real> affine;  // d_emb -> 5
};

template <typename Real>
SentimentHead<Real> make_sentiment_head(Index d_emb, std::mt19937_64& rng);

// 5 x spans.size() logits; span (start, length) reads levels[length-1][start].
template <typename Real>
Columns<Real> classify_nodes(const EncodingPyramid<Real>& pyramid,
                             const std::vector<NodeSpan>& spans, const SentimentHead<Real>& head);

struct SentimentObjective {
  double lambda = 0;         // weight of the autoencoding loss
  bool freeze_body = false;  // only the head receives gradients
};

struct SentimentLoss {
  double sentiment = 0;    // mean cross-entropy over nodes
  double autoencoder = 0;  // reconstruction MSE, 0 when lambda == 0
  double total = 0;
};

// Adds weight * gradients of (sentiment + lambda * autoencoder) for one
// tree whose token vectors are `tokens` (d_glove x n).
template <typename Real>
SentimentLoss accumulate_sentiment_gradients(const Columns<Real>& tokens,
                                             const std::vector<NodeSpan>& spans,
                                             const RaeParams<Real>& params,
                                             const SentimentHead<Real>& head,
                                             const RaeConfig& cfg,
                                             const SentimentObjective& objective,
                                             RaeParams<Real>& body_grads,
                                             SentimentHead<Real>& head_grads, Real weight = 1);

using NodeLogits = std::array<double, kSentimentClasses>;

enum class SstMode { five_all, binary_root };

SstMode parse_sst_mode(std::string_view name);
std::string_view to_string(SstMode mode);

struct SstScore {
  double accuracy = 0;
  std::size_t node_count = 0;
};

// predictions[t][j] are the logits for node j (pre-order) of tree t.
SstScore sst_metrics(const std::vector<std::vector<NodeLogits>>& predictions,
                     const std::vector<std::vector<NodeSpan>>& gold, SstMode mode);

}  // namespace rae
