#include "rae/sst.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "rae/error.hpp"

namespace rae {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

class TreeParser {
 public:
  explicit TreeParser(std::string_view text) : text_(text) {}

  SentimentTree parse() {
    skip_space();
    SentimentTree tree = parse_node();
    skip_space();
    if (pos_ != text_.size()) fail("trailing characters after tree");
    return tree;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("SST parse error at byte " + std::to_string(pos_) + ": " + what);
  }

  void skip_space() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
  }

  void expect(char c) {
    if (pos_ >= text_.size() || text_[pos_] != c) {
      fail(std::string("expected '") + c + "'");
    }
    ++pos_;
  }

  int parse_label() {
    const std::size_t begin = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ == begin) fail("expected a sentiment label");
    if (pos_ - begin > 1 || text_[begin] > '4') {
      pos_ = begin;
      fail("label outside 0..4");
    }
    if (pos_ < text_.size() && !is_space(text_[pos_])) fail("expected whitespace after label");
    return text_[begin] - '0';
  }

  SentimentTree parse_node() {
    expect('(');
    SentimentTree node;
    node.label = parse_label();
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    if (text_[pos_] == '(') {
      while (pos_ < text_.size() && text_[pos_] == '(') {
        node.children.push_back(parse_node());
        skip_space();
      }
      if (node.children.size() != 2) {
        fail("internal node with " + std::to_string(node.children.size()) +
             " children; trees must be binary");
      }
    } else {
      const std::size_t begin = pos_;
      while (pos_ < text_.size() && !is_space(text_[pos_]) && text_[pos_] != '(' &&
             text_[pos_] != ')') {
        ++pos_;
      }
      if (pos_ == begin) fail("empty leaf token");
      node.token = std::string(text_.substr(begin, pos_ - begin));
      skip_space();
    }
    expect(')');
    return node;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

void serialize_into(const SentimentTree& tree, std::string& out) {
  out += '(';
  out += static_cast<char>('0' + tree.label);
  out += ' ';
  if (tree.is_leaf()) {
    out += tree.token;
  } else {
    serialize_into(tree.children[0], out);
    out += ' ';
    serialize_into(tree.children[1], out);
  }
  out += ')';
}

void collect_leaves(const SentimentTree& tree, std::vector<std::string>& out) {
  if (tree.is_leaf()) {
    out.push_back(tree.token);
    return;
  }
  for (const auto& child : tree.children) collect_leaves(child, out);
}

// Returns the leaf count under `tree`.
std::size_t collect_spans(const SentimentTree& tree, std::size_t start,
                          std::vector<NodeSpan>& out) {
  if (tree.label < 0 || tree.label >= kSentimentClasses) {
    throw FormatError("sentiment label outside 0..4");
  }
  const std::size_t slot = out.size();
  out.push_back({start, 1, tree.label});
  if (tree.is_leaf()) return 1;
  if (tree.children.size() != 2) throw FormatError("sentiment tree is not binary");
  const std::size_t left = collect_spans(tree.children[0], start, out);
  const std::size_t right = collect_spans(tree.children[1], start + left, out);
  out[slot].length = left + right;
  return left + right;
}

std::size_t argmax(const NodeLogits& logits) {
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

SentimentTree parse_sst_line(std::string_view text) { return TreeParser(text).parse(); }

std::string serialize(const SentimentTree& tree) {
  std::string out;
  serialize_into(tree, out);
  return out;
}

std::vector<std::string> leaf_tokens(const SentimentTree& tree) {
  std::vector<std::string> out;
  collect_leaves(tree, out);
  return out;
}

std::vector<NodeSpan> node_spans(const SentimentTree& tree) {
  std::vector<NodeSpan> spans;
  collect_spans(tree, 0, spans);
  return spans;
}

std::vector<SentimentTree> load_sst_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open tree file " + path.string());
  std::vector<SentimentTree> trees;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), is_space)) continue;
    try {
      trees.push_back(parse_sst_line(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (trees.empty()) throw FormatError("no trees in " + path.string());
  return trees;
}

template <typename Real>
SentimentHead<Real> make_sentiment_head(Index d_emb, std::mt19937_64& rng) {
  SentimentHead<Real> head{AffineLayer<Real>(kSentimentClasses, d_emb)};
  const double limit = std::sqrt(6.0 / static_cast<double>(d_emb + kSentimentClasses));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Index i = 0; i < head.affine.weight.size(); ++i) {
    head.affine.weight.data()[i] = static_cast<Real>(dist(rng));
  }
  return head;
}

template <typename Real>
Columns<Real> classify_nodes(const EncodingPyramid<Real>& pyramid,
                             const std::vector<NodeSpan>& spans,
                             const SentimentHead<Real>& head) {
  if (pyramid.levels.empty()) throw ShapeError("empty pyramid");
  const Index d = pyramid.levels.front().rows();
  Columns<Real> cells(d, static_cast<Index>(spans.size()));
  for (std::size_t j = 0; j < spans.size(); ++j) {
    if (spans[j].length == 0) throw ShapeError("zero-length span");
    cells.col(static_cast<Index>(j)) = pyramid.cell(spans[j].length - 1, spans[j].start);
  }
  return affine_forward(head.affine, cells);
}

template <typename Real>
SentimentLoss accumulate_sentiment_gradients(const Columns<Real>& tokens,
                                             const std::vector<NodeSpan>& spans,
                                             const RaeParams<Real>& params,
                                             const SentimentHead<Real>& head,
                                             const RaeConfig& cfg,
                                             const SentimentObjective& objective,
                                             RaeParams<Real>& body_grads,
                                             SentimentHead<Real>& head_grads, Real weight) {
  if (spans.empty()) throw ShapeError("tree without nodes");
  EncoderTape<Real> tape;
  const bool train_body = !objective.freeze_body;
  const Compressed<Real> compressed = compress(tokens, params, cfg, train_body ? &tape : nullptr);
  const EncodingPyramid<Real>& pyramid = compressed.pyramid;

  const Index nodes = static_cast<Index>(spans.size());
  const Index d = cfg.d_emb;
  Columns<Real> cells(d, nodes);
  for (Index j = 0; j < nodes; ++j) {
    const NodeSpan& s = spans[static_cast<std::size_t>(j)];
    if (s.length == 0) throw ShapeError("zero-length span");
    cells.col(j) = pyramid.cell(s.length - 1, s.start);
  }
  const Columns<Real> logits = affine_forward(head.affine, cells);

  SentimentLoss loss;
  Columns<Real> logit_grad(kSentimentClasses, nodes);
  for (Index j = 0; j < nodes; ++j) {
    const Real peak = logits.col(j).maxCoeff();
    Vector<Real> p = (logits.col(j).array() - peak).exp().matrix();
    const Real z = p.sum();
    p /= z;
    const int label = spans[static_cast<std::size_t>(j)].label;
    loss.sentiment -= static_cast<double>(logits(label, j) - peak - std::log(z));
    p(label) -= Real(1);
    logit_grad.col(j) = p;
  }
  loss.sentiment /= static_cast<double>(nodes);
  logit_grad *= weight / static_cast<Real>(nodes);

  head_grads.affine.weight.noalias() += logit_grad * cells.transpose();
  head_grads.affine.bias += logit_grad.rowwise().sum();

  const Real ae_weight = train_body ? weight * static_cast<Real>(objective.lambda) : Real(0);
  if (objective.lambda != 0) {
    loss.autoencoder =
        static_cast<double>(accumulate_rae_gradients(tokens, params, cfg, body_grads, ae_weight));
  }
  loss.total = loss.sentiment + objective.lambda * loss.autoencoder;

  if (train_body) {
    const Columns<Real> cell_grad = head.affine.weight.transpose() * logit_grad;
    std::vector<Columns<Real>> level_grads;
    const std::size_t n = pyramid.levels.size();
    level_grads.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      level_grads.push_back(Columns<Real>::Zero(d, static_cast<Index>(n - k)));
    }
    for (Index j = 0; j < nodes; ++j) {
      const NodeSpan& s = spans[static_cast<std::size_t>(j)];
      level_grads[s.length - 1].col(static_cast<Index>(s.start)) += cell_grad.col(j);
    }
    encoder_backward(params, cfg, tape, std::move(level_grads), body_grads);
  }
  return loss;
}

SstMode parse_sst_mode(std::string_view name) {
  if (name == "five_all") return SstMode::five_all;
  if (name == "binary_root") return SstMode::binary_root;
  throw ConfigError("unknown SST mode '" + std::string(name) + "'");
}

std::string_view to_string(SstMode mode) {
  return mode == SstMode::five_all ? "five_all" : "binary_root";
}

SstScore sst_metrics(const std::vector<std::vector<NodeLogits>>& predictions,
                     const std::vector<std::vector<NodeSpan>>& gold, SstMode mode) {
  if (predictions.size() != gold.size()) {
    throw ShapeError("predictions for " + std::to_string(predictions.size()) + " trees, gold for " +
                     std::to_string(gold.size()));
  }
  std::size_t correct = 0;
  std::size_t total = 0;
  for (std::size_t t = 0; t < gold.size(); ++t) {
    if (predictions[t].size() != gold[t].size()) {
      throw ShapeError("node count mismatch in tree " + std::to_string(t));
    }
    if (mode == SstMode::five_all) {
      for (std::size_t j = 0; j < gold[t].size(); ++j) {
        ++total;
        if (static_cast<int>(argmax(predictions[t][j])) == gold[t][j].label) ++correct;
      }
      continue;
    }
    if (gold[t].empty()) continue;
    const int label = gold[t].front().label;
    if (label == 2) continue;
    const NodeLogits& l = predictions[t].front();
    const bool predicted_positive = log_sum_exp(l[3], l[4]) > log_sum_exp(l[0], l[1]);
    ++total;
    if (predicted_positive == (label >= 3)) ++correct;
  }
  if (total == 0) {
    throw Error(std::string("nothing to score in ") + std::string(to_string(mode)) + " mode");
  }
  return {static_cast<double>(correct) / static_cast<double>(total), total};
}

#define RAE_INSTANTIATE_SST(Real)                                                             \
  template SentimentHead<Real> make_sentiment_head<Real>(Index, std::mt19937_64&);           \
  template Columns<Real> classify_nodes(const EncodingPyramid<Real>&,                        \
                                        const std::vector<NodeSpan>&,                        \
                                        const SentimentHead<Real>&);                         \
  template SentimentLoss accumulate_sentiment_gradients(                                     \
      const Columns<Real>&, const std::vector<NodeSpan>&, const RaeParams<Real>&,            \
      const SentimentHead<Real>&, const RaeConfig&, const SentimentObjective&,               \
      RaeParams<Real>&, SentimentHead<Real>&, Real);

RAE_INSTANTIATE_SST(float)
RAE_INSTANTIATE_SST(double)

}  // namespace rae
