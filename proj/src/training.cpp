#include "rae/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "rae/error.hpp"

namespace rae {

LrSchedule parse_lr_schedule(std::string_view name) {
  if (name == "constant") return LrSchedule::constant;
  if (name == "cosine") return LrSchedule::cosine;
  throw ConfigError("unknown lr_schedule '" + std::string(name) + "'");
}

double scheduled_lr(LrSchedule schedule, double lr, double lr_min, std::size_t epoch,
                    std::size_t epochs) {
  if (schedule == LrSchedule::constant || epochs <= 1) return lr;
  const double progress = static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1);
  return lr_min + 0.5 * (lr - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {

template <typename Real>
std::vector<ParamBlock<const Real>> const_view(const std::vector<ParamBlock<Real>>& blocks) {
  std::vector<ParamBlock<const Real>> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back({b.name, b.values});
  return out;
}

template <typename Real>
void set_zero(RaeParams<Real>& p) {
  for (const auto& block : param_blocks(p)) std::fill(block.values.begin(), block.values.end(), Real(0));
}

}  // namespace

template <typename Real>
double train_ae_epoch(RaeParams<Real>& params, AdamState<Real>& adam,
                      const std::vector<Batch>& batches, const EmbeddingTable& table,
                      const RaeConfig& cfg, const OptimOptions& options) {
  RaeParams<Real> grads = zeros_like(params);
  const auto param_view = param_blocks(params);
  const auto grad_view = param_blocks(grads);
  const auto grad_const = const_view(grad_view);

  double weighted_loss = 0;
  std::size_t tokens = 0;
  for (const Batch& batch : batches) {
    if (batch.sequences.empty()) continue;
    set_zero(grads);
    const Real weight = Real(1) / static_cast<Real>(batch.sequences.size());
    for (const TokenIds& ids : batch.sequences) {
      const Columns<Real> x = embed_tokens<Real>(ids, table);
      const Real loss = accumulate_rae_gradients(x, params, cfg, grads, weight);
      weighted_loss += static_cast<double>(loss) * static_cast<double>(ids.size());
      tokens += ids.size();
    }
    if (options.clip > 0) clip_global_norm(grad_view, options.clip);
    adam_step(param_view, grad_const, adam, options.adam);
  }
  return tokens ? weighted_loss / static_cast<double>(tokens) : 0.0;
}

template <typename Real>
AeEvaluation evaluate_ae(const RaeParams<Real>& params, const TokenizedCorpus& corpus,
                         const EmbeddingTable& table, const RaeConfig& cfg, std::size_t k,
                         bool skip_unk) {
  if (corpus.sentences.empty()) throw Error("cannot evaluate an empty corpus");
  if (k == 0) throw ConfigError("top-k needs k >= 1");
  const std::size_t kk = std::min(k, table.size());

  struct Tally {
    std::size_t sequences = 0, scored = 0, hit1 = 0, hitk = 0, tokens = 0;
    double sq_error_tokens = 0;  // sum over sentences of mse * n
  };
  std::map<std::size_t, Tally> by_length;

  for (const TokenIds& ids : corpus.sentences) {
    const Columns<Real> x = embed_tokens<Real>(ids, table);
    const Compressed<Real> c = compress(x, params, cfg);
    const Columns<Real> y = decompress(c.code, params, cfg);
    Tally& t = by_length[ids.size()];
    ++t.sequences;
    t.tokens += ids.size();
    t.sq_error_tokens +=
        static_cast<double>(reconstruction_mse(y, x)) * static_cast<double>(ids.size());
    const Eigen::MatrixXf out = y.template cast<float>();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const bool unknown = ids[i] >= table.size();
      if (unknown && skip_unk) continue;
      ++t.scored;
      if (unknown) continue;
      const auto col = out.col(static_cast<Index>(i));
      const auto nn = nearest_k({col.data(), static_cast<std::size_t>(col.size())}, table, kk);
      if (nn.front() == ids[i]) ++t.hit1;
      if (std::find(nn.begin(), nn.end(), ids[i]) != nn.end()) ++t.hitk;
    }
  }

  AeEvaluation eval;
  std::size_t hit1 = 0, hitk = 0, tokens = 0;
  double sq = 0;
  for (const auto& [length, t] : by_length) {
    MetricsRow row;
    row.length = length;
    row.n_sequences = t.sequences;
    row.top1 = t.scored ? static_cast<double>(t.hit1) / static_cast<double>(t.scored) : 0.0;
    row.topk = t.scored ? static_cast<double>(t.hitk) / static_cast<double>(t.scored) : 0.0;
    row.mse = t.sq_error_tokens / static_cast<double>(t.tokens);
    eval.rows.push_back(row);
    hit1 += t.hit1;
    hitk += t.hitk;
    eval.scored_tokens += t.scored;
    tokens += t.tokens;
    sq += t.sq_error_tokens;
  }
  eval.mse = sq / static_cast<double>(tokens);
  if (eval.scored_tokens) {
    eval.top1 = static_cast<double>(hit1) / static_cast<double>(eval.scored_tokens);
    eval.topk = static_cast<double>(hitk) / static_cast<double>(eval.scored_tokens);
  }
  return eval;
}

template <typename Real>
double corpus_mse(const RaeParams<Real>& params, const TokenizedCorpus& corpus,
                  const EmbeddingTable& table, const RaeConfig& cfg) {
  if (corpus.sentences.empty()) throw Error("cannot evaluate an empty corpus");
  double sq = 0;
  std::size_t tokens = 0;
  for (const TokenIds& ids : corpus.sentences) {
    const Columns<Real> x = embed_tokens<Real>(ids, table);
    const Columns<Real> y = decompress(compress(x, params, cfg).code, params, cfg);
    sq += static_cast<double>(reconstruction_mse(y, x)) * static_cast<double>(ids.size());
    tokens += ids.size();
  }
  return sq / static_cast<double>(tokens);
}

std::vector<SstExample> prepare_sst(const std::vector<SentimentTree>& trees,
                                    const EmbeddingTable& table, std::size_t max_len,
                                    std::size_t* skipped) {
  std::vector<SstExample> examples;
  std::size_t dropped = 0;
  for (const SentimentTree& tree : trees) {
    const auto tokens = leaf_tokens(tree);
    if (tokens.size() > max_len) {
      ++dropped;
      continue;
    }
    SstExample ex;
    for (const auto& token : tokens) {
      // Leaves are single tokens; tokenize_line lowercases them.
      const TokenIds ids = tokenize_line(token, table);
      ex.ids.push_back(ids.empty() ? table.unk_id() : ids.front());
    }
    ex.spans = node_spans(tree);
    examples.push_back(std::move(ex));
  }
  if (skipped) *skipped = dropped;
  return examples;
}

template <typename Real>
double SstTrainer<Real>::run_epoch(const std::vector<SstExample>& examples,
                                   const EmbeddingTable& table, const RaeConfig& cfg,
                                   std::uint64_t seed) {
  if (examples.empty()) throw Error("no sentiment trees to train on");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");

  RaeParams<Real> body_grads = zeros_like(params);
  SentimentHead<Real> head_grads{AffineLayer<Real>(head.affine.out_size(), head.affine.in_size())};

  std::vector<ParamBlock<Real>> param_view;
  std::vector<ParamBlock<Real>> grad_view;
  if (!objective.freeze_body) {
    param_view = param_blocks(params);
    grad_view = param_blocks(body_grads);
  }
  const auto add_head = [](SentimentHead<Real>& h, std::vector<ParamBlock<Real>>& out) {
    out.push_back({"head.weight", {h.affine.weight.data(), static_cast<std::size_t>(h.affine.weight.size())}});
    out.push_back({"head.bias", {h.affine.bias.data(), static_cast<std::size_t>(h.affine.bias.size())}});
  };
  add_head(head, param_view);
  add_head(head_grads, grad_view);
  const auto grad_const = const_view(grad_view);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  double total = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    for (const auto& block : grad_view) std::fill(block.values.begin(), block.values.end(), Real(0));
    const Real weight = Real(1) / static_cast<Real>(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const SstExample& ex = examples[order[i]];
      const Columns<Real> x = embed_tokens<Real>(ex.ids, table);
      total += accumulate_sentiment_gradients(x, ex.spans, params, head, cfg, objective,
                                              body_grads, head_grads, weight)
                   .total;
    }
    if (options.clip > 0) clip_global_norm(grad_view, options.clip);
    adam_step(param_view, grad_const, adam, options.adam);
  }
  return total / static_cast<double>(examples.size());
}

template <typename Real>
std::vector<std::vector<NodeLogits>> predict_sst(const RaeParams<Real>& params,
                                                 const SentimentHead<Real>& head,
                                                 const std::vector<SstExample>& examples,
                                                 const EmbeddingTable& table,
                                                 const RaeConfig& cfg) {
  std::vector<std::vector<NodeLogits>> out;
  out.reserve(examples.size());
  for (const SstExample& ex : examples) {
    const Columns<Real> x = embed_tokens<Real>(ex.ids, table);
    const Columns<Real> logits = classify_nodes(compress(x, params, cfg).pyramid, ex.spans, head);
    std::vector<NodeLogits> tree(ex.spans.size());
    for (std::size_t j = 0; j < tree.size(); ++j) {
      for (int c = 0; c < kSentimentClasses; ++c) {
        tree[j][static_cast<std::size_t>(c)] = static_cast<double>(logits(c, static_cast<Index>(j)));
      }
    }
    out.push_back(std::move(tree));
  }
  return out;
}

std::vector<std::vector<NodeSpan>> gold_spans(const std::vector<SstExample>& examples) {
  std::vector<std::vector<NodeSpan>> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(ex.spans);
  return out;
}

#define RAE_INSTANTIATE_TRAINING(Real)                                                        \
  template double train_ae_epoch(RaeParams<Real>&, AdamState<Real>&, const std::vector<Batch>&, \
                                 const EmbeddingTable&, const RaeConfig&, const OptimOptions&); \
  template AeEvaluation evaluate_ae(const RaeParams<Real>&, const TokenizedCorpus&,           \
                                    const EmbeddingTable&, const RaeConfig&, std::size_t, bool); \
  template double corpus_mse(const RaeParams<Real>&, const TokenizedCorpus&,                  \
                             const EmbeddingTable&, const RaeConfig&);                        \
  template struct SstTrainer<Real>;                                                           \
  template std::vector<std::vector<NodeLogits>> predict_sst(                                  \
      const RaeParams<Real>&, const SentimentHead<Real>&, const std::vector<SstExample>&,     \
      const EmbeddingTable&, const RaeConfig&);

RAE_INSTANTIATE_TRAINING(float)
RAE_INSTANTIATE_TRAINING(double)

}  // namespace rae
