#include "rae/model.hpp"

#include <sstream>

#include "rae/error.hpp"

namespace rae {

namespace {

std::string describe(std::string_view what, Index expected, Index got) {
  std::ostringstream os;
  os << what << ": expected " << expected << ", got " << got;
  return os.str();
}

template <typename Real>
void write_step_rows(Columns<Real>& x, Index row, std::uint32_t step, const RaeConfig& cfg) {
  const StepFeatures f = step_features(step, cfg);
  x.row(row).setConstant(static_cast<Real>(f.scalar));
  for (std::uint32_t b = 0; b < cfg.n_buckets; ++b) {
    x.row(row + 1 + b).setConstant(static_cast<Real>(f.one_hot[b]));
  }
}

MlpShape resize_in_shape(const RaeConfig& cfg) {
  return {cfg.d_glove, cfg.resize_hidden(), cfg.d_emb, false, true};
}
MlpShape encoder_shape(const RaeConfig& cfg) {
  return {2 * static_cast<Index>(cfg.d_emb) + cfg.step_width(), cfg.core_hidden(), cfg.d_emb,
          true, true};
}
MlpShape decoder_shape(const RaeConfig& cfg) {
  return {static_cast<Index>(cfg.d_emb) + cfg.step_width(), cfg.core_hidden(),
          2 * static_cast<Index>(cfg.d_emb), true, true};
}
MlpShape resize_out_shape(const RaeConfig& cfg) {
  return {cfg.d_emb, cfg.resize_hidden(), cfg.d_glove, false, false};
}

template <typename To, typename From>
MlpParams<To> cast_mlp(const MlpParams<From>& p) {
  MlpParams<To> out;
  out.layer1.weight = p.layer1.weight.template cast<To>();
  out.layer1.bias = p.layer1.bias.template cast<To>();
  out.layer2.weight = p.layer2.weight.template cast<To>();
  out.layer2.bias = p.layer2.bias.template cast<To>();
  const auto cast_norm = [](const std::optional<LayerNormParams<From>>& n) {
    std::optional<LayerNormParams<To>> r;
    if (n) {
      r.emplace();
      r->gain = n->gain.template cast<To>();
      r->shift = n->shift.template cast<To>();
      r->epsilon = static_cast<To>(n->epsilon);
    }
    return r;
  };
  out.norm1 = cast_norm(p.norm1);
  out.norm2 = cast_norm(p.norm2);
  out.relu_after_layer2 = p.relu_after_layer2;
  return out;
}

template <typename Real>
void check_sequence(const Columns<Real>& x, Index rows, const RaeConfig& cfg) {
  if (x.cols() == 0) throw ShapeError("empty sequence");
  if (x.cols() > static_cast<Index>(cfg.max_len)) {
    throw ShapeError(describe("sequence longer than max_len", cfg.max_len, x.cols()));
  }
  if (x.rows() != rows) throw ShapeError(describe("token vector width", rows, x.rows()));
}

}  // namespace

std::uint32_t bucket_index(std::uint32_t step) {
  if (step == 0) throw Error("recursion steps start at 1");
  if (step <= 2) return step - 1;
  if (step <= 4) return 2;
  if (step <= 7) return 3;
  return 4 + (step - 8) / 3;
}

std::uint32_t bucket_count(std::uint32_t max_len) {
  return max_len >= 2 ? bucket_index(max_len - 1) + 1 : 1;
}

RaeConfig RaeConfig::make(std::uint32_t d_glove, std::uint32_t d_emb, std::uint32_t max_len) {
  RaeConfig cfg{d_glove, d_emb, max_len, max_len >= 1 ? bucket_count(max_len) : 1};
  cfg.validate();
  return cfg;
}

void RaeConfig::validate() const {
  if (d_glove < 1) throw ConfigError("d_glove must be at least 1");
  if (d_emb < 2) throw ConfigError("d_emb must be at least 2");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  if (n_buckets != bucket_count(max_len)) {
    throw ConfigError(describe("n_buckets for max_len " + std::to_string(max_len),
                               bucket_count(max_len), n_buckets));
  }
}

StepFeatures step_features(std::uint32_t step, const RaeConfig& cfg) {
  if (step < 1 || step + 1 > cfg.max_len) {
    throw Error("recursion step " + std::to_string(step) + " outside 1.." +
                std::to_string(cfg.max_len > 0 ? cfg.max_len - 1 : 0));
  }
  StepFeatures f;
  f.scalar = static_cast<double>(step);
  f.one_hot.assign(cfg.n_buckets, 0.0);
  f.one_hot.at(bucket_index(step)) = 1.0;
  return f;
}

template <typename Real>
RaeParams<Real> make_rae_params(const RaeConfig& cfg) {
  cfg.validate();
  return {make_mlp<Real>(resize_in_shape(cfg)), make_mlp<Real>(encoder_shape(cfg)),
          make_mlp<Real>(decoder_shape(cfg)), make_mlp<Real>(resize_out_shape(cfg))};
}

template <typename Real>
RaeParams<Real> make_rae_params(const RaeConfig& cfg, std::uint64_t seed) {
  RaeParams<Real> p = make_rae_params<Real>(cfg);
  std::mt19937_64 rng(seed);
  initialize(p, rng);
  return p;
}

template <typename Real>
RaeParams<Real> zeros_like(const RaeParams<Real>& p) {
  return {zeros_like(p.mlp_in), zeros_like(p.mlp_enc), zeros_like(p.mlp_dec),
          zeros_like(p.mlp_out)};
}

template <typename Real>
void initialize(RaeParams<Real>& p, std::mt19937_64& rng) {
  for_each_mlp(p, [&](std::string_view, MlpParams<Real>& mlp) { initialize(mlp, rng); });
}

template <typename Real>
void check_architecture(const RaeParams<Real>& p, const RaeConfig& cfg) {
  const RaeParams<Real> expected = make_rae_params<Real>(cfg);
  const auto compare = [](std::string_view name, const MlpParams<Real>& got,
                          const MlpParams<Real>& want) {
    validate(got);
    if (got.norm1.has_value() != want.norm1.has_value() ||
        got.norm2.has_value() != want.norm2.has_value() ||
        got.relu_after_layer2 != want.relu_after_layer2) {
      throw ShapeError(std::string(name) + ": normalization/activation layout mismatch");
    }
    const auto check = [&](std::string_view what, Index w, Index g) {
      if (w != g) throw ShapeError(describe(std::string(name) + " " + std::string(what), w, g));
    };
    check("input", want.in_size(), got.in_size());
    check("hidden", want.hidden_size(), got.hidden_size());
    check("output", want.out_size(), got.out_size());
  };
  compare("mlp_in", p.mlp_in, expected.mlp_in);
  compare("mlp_enc", p.mlp_enc, expected.mlp_enc);
  compare("mlp_dec", p.mlp_dec, expected.mlp_dec);
  compare("mlp_out", p.mlp_out, expected.mlp_out);
}

template <typename Real>
std::vector<ParamBlock<Real>> param_blocks(RaeParams<Real>& p) {
  std::vector<ParamBlock<Real>> blocks;
  for_each_mlp(p, [&](std::string_view name, MlpParams<Real>& mlp) {
    append_blocks(mlp, name, blocks);
  });
  return blocks;
}

template <typename Real>
std::vector<ParamBlock<const Real>> param_blocks(const RaeParams<Real>& p) {
  std::vector<ParamBlock<const Real>> blocks;
  for_each_mlp(p, [&](std::string_view name, const MlpParams<Real>& mlp) {
    append_blocks(mlp, name, blocks);
  });
  return blocks;
}

template <typename To, typename From>
RaeParams<To> cast_params(const RaeParams<From>& p) {
  return {cast_mlp<To>(p.mlp_in), cast_mlp<To>(p.mlp_enc), cast_mlp<To>(p.mlp_dec),
          cast_mlp<To>(p.mlp_out)};
}

template <typename Real>
Vector<Real> EncodingPyramid<Real>::cell(std::size_t level, std::size_t start) const {
  if (level >= levels.size() || start >= static_cast<std::size_t>(levels[level].cols())) {
    throw ShapeError("pyramid cell (" + std::to_string(level) + ", " + std::to_string(start) +
                     ") outside a pyramid over " + std::to_string(length()) + " tokens");
  }
  return levels[level].col(static_cast<Index>(start));
}

template <typename Real>
EncodingPyramid<Real> encode_pyramid(const Columns<Real>& inputs, const RaeParams<Real>& params,
                                     const RaeConfig& cfg,
                                     std::vector<MlpTape<Real>>* step_tapes) {
  const Index d = cfg.d_emb;
  check_sequence(inputs, d, cfg);
  const Index n = inputs.cols();
  EncodingPyramid<Real> pyramid;
  pyramid.levels.reserve(static_cast<std::size_t>(n));
  pyramid.levels.push_back(inputs);
  if (step_tapes) step_tapes->clear();

  for (Index k = 1; k < n; ++k) {
    const Columns<Real>& prev = pyramid.levels.back();
    const Index m = n - k;
    Columns<Real> pairs(2 * d + cfg.step_width(), m);
    pairs.topRows(d) = prev.leftCols(m);
    pairs.middleRows(d, d) = prev.rightCols(m);
    write_step_rows(pairs, 2 * d, static_cast<std::uint32_t>(k), cfg);
    MlpTape<Real> tape = mlp_forward(params.mlp_enc, std::move(pairs));
    pyramid.levels.push_back(tape.output());
    if (step_tapes) step_tapes->push_back(std::move(tape));
  }
  return pyramid;
}

template <typename Real>
Compressed<Real> compress(const Columns<Real>& tokens, const RaeParams<Real>& params,
                          const RaeConfig& cfg, EncoderTape<Real>* tape) {
  check_sequence(tokens, cfg.d_glove, cfg);
  MlpTape<Real> in_tape = mlp_forward(params.mlp_in, tokens);
  Compressed<Real> result;
  result.pyramid =
      encode_pyramid(in_tape.output(), params, cfg, tape ? &tape->steps : nullptr);
  result.code.root = result.pyramid.root();
  result.code.length = static_cast<std::uint32_t>(tokens.cols());
  if (tape) tape->in = std::move(in_tape);
  return result;
}

template <typename Real>
Columns<Real> decode_once(const Columns<Real>& level, std::uint32_t step,
                          const RaeParams<Real>& params, const RaeConfig& cfg,
                          MlpTape<Real>* tape) {
  const Index d = cfg.d_emb;
  const Index m = level.cols();
  if (m == 0) throw ShapeError("decoder input is empty");
  if (level.rows() != d) throw ShapeError(describe("decoder input width", d, level.rows()));

  Columns<Real> input(d + cfg.step_width(), m);
  input.topRows(d) = level;
  write_step_rows(input, d, step, cfg);
  MlpTape<Real> local = mlp_forward(params.mlp_dec, std::move(input));
  const Columns<Real>& split = local.output();
  const auto left = split.topRows(d);      // y_i
  const auto right = split.bottomRows(d);  // y'_{i+1}

  Columns<Real> out(d, m + 1);
  out.col(0) = left.col(0);
  if (m > 1) {
    out.middleCols(1, m - 1) = (left.rightCols(m - 1) + right.leftCols(m - 1)) * Real(0.5);
  }
  out.col(m) = right.col(m - 1);
  if (tape) *tape = std::move(local);
  return out;
}

template <typename Real>
Columns<Real> decompress(const CompressedCode<Real>& code, const RaeParams<Real>& params,
                         const RaeConfig& cfg, DecoderTape<Real>* tape) {
  const std::uint32_t n = code.length;
  if (n == 0) throw ShapeError("code length must be at least 1");
  if (n > cfg.max_len) throw ShapeError(describe("code length exceeds max_len", cfg.max_len, n));
  if (code.root.size() != static_cast<Index>(cfg.d_emb)) {
    throw ShapeError(describe("code root width", cfg.d_emb, code.root.size()));
  }
  if (tape) tape->steps.clear();

  Columns<Real> level = code.root;
  for (std::uint32_t width = 1; width < n; ++width) {
    MlpTape<Real> step_tape;
    level = decode_once(level, n - width, params, cfg, tape ? &step_tape : nullptr);
    if (tape) tape->steps.push_back(std::move(step_tape));
  }
  MlpTape<Real> out_tape = mlp_forward(params.mlp_out, std::move(level));
  if (!tape) return std::move(out_tape.out.output);
  tape->out = std::move(out_tape);
  return tape->out.output();
}

template <typename Real>
Columns<Real> encoder_backward(const RaeParams<Real>& params, const RaeConfig& cfg,
                               const EncoderTape<Real>& tape,
                               std::vector<Columns<Real>> level_grads, RaeParams<Real>& grads) {
  const Index d = cfg.d_emb;
  const Index n = tape.in.input.cols();
  if (level_grads.size() != static_cast<std::size_t>(n) ||
      tape.steps.size() + 1 != static_cast<std::size_t>(n)) {
    throw ShapeError(describe("pyramid levels", n, static_cast<Index>(level_grads.size())));
  }
  for (Index k = 0; k < n; ++k) {
    const Columns<Real>& g = level_grads[static_cast<std::size_t>(k)];
    if (g.rows() != d || g.cols() != n - k) {
      throw ShapeError(describe("gradient columns at level " + std::to_string(k), n - k, g.cols()));
    }
  }
  for (Index k = n - 1; k >= 1; --k) {
    const Index m = n - k;
    const Columns<Real> input_grad =
        mlp_backward(params.mlp_enc, tape.steps[static_cast<std::size_t>(k - 1)],
                     level_grads[static_cast<std::size_t>(k)], grads.mlp_enc);
    Columns<Real>& below = level_grads[static_cast<std::size_t>(k - 1)];
    below.leftCols(m) += input_grad.topRows(d);
    below.rightCols(m) += input_grad.middleRows(d, d);
  }
  return mlp_backward(params.mlp_in, tape.in, level_grads[0], grads.mlp_in);
}

template <typename Real>
Vector<Real> decoder_backward(const RaeParams<Real>& params, const RaeConfig& cfg,
                              const DecoderTape<Real>& tape, const Columns<Real>& output_grad,
                              RaeParams<Real>& grads) {
  const Index d = cfg.d_emb;
  Columns<Real> grad = mlp_backward(params.mlp_out, tape.out, output_grad, grads.mlp_out);
  for (std::size_t j = tape.steps.size(); j-- > 0;) {
    const Index m = static_cast<Index>(j) + 1;
    if (grad.cols() != m + 1) throw ShapeError(describe("decoder gradient columns", m + 1, grad.cols()));
    Columns<Real> split_grad = Columns<Real>::Zero(2 * d, m);
    auto left = split_grad.topRows(d);
    auto right = split_grad.bottomRows(d);
    left.col(0) = grad.col(0);
    if (m > 1) {
      left.rightCols(m - 1) = grad.middleCols(1, m - 1) * Real(0.5);
      right.leftCols(m - 1) = grad.middleCols(1, m - 1) * Real(0.5);
    }
    right.col(m - 1) = grad.col(m);
    const Columns<Real> input_grad =
        mlp_backward(params.mlp_dec, tape.steps[j], split_grad, grads.mlp_dec);
    grad = input_grad.topRows(d);
  }
  if (grad.cols() != 1) throw ShapeError(describe("decoder root gradient columns", 1, grad.cols()));
  return grad.col(0);
}

template <typename Real>
Real reconstruction_mse(const Columns<Real>& reconstructed, const Columns<Real>& tokens) {
  if (reconstructed.rows() != tokens.rows() || reconstructed.cols() != tokens.cols()) {
    throw ShapeError(describe("reconstruction size", tokens.size(), reconstructed.size()));
  }
  if (tokens.size() == 0) throw ShapeError("empty sequence");
  return (reconstructed - tokens).squaredNorm() / static_cast<Real>(tokens.size());
}

template <typename Real>
Real accumulate_rae_gradients(const Columns<Real>& tokens, const RaeParams<Real>& params,
                              const RaeConfig& cfg, RaeParams<Real>& grads, Real weight) {
  EncoderTape<Real> enc_tape;
  const Compressed<Real> compressed = compress(tokens, params, cfg, &enc_tape);
  DecoderTape<Real> dec_tape;
  const Columns<Real> out = decompress(compressed.code, params, cfg, &dec_tape);

  const Columns<Real> diff = out - tokens;
  const Real scale = Real(1) / static_cast<Real>(tokens.size());
  const Real loss = diff.squaredNorm() * scale;
  if (weight == Real(0)) return loss;

  const Columns<Real> out_grad = diff * (Real(2) * scale * weight);
  const Vector<Real> root_grad = decoder_backward(params, cfg, dec_tape, out_grad, grads);

  const std::size_t n = compressed.pyramid.levels.size();
  std::vector<Columns<Real>> level_grads;
  level_grads.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    level_grads.push_back(Columns<Real>::Zero(cfg.d_emb, static_cast<Index>(n - k)));
  }
  level_grads.back().col(0) = root_grad;
  encoder_backward(params, cfg, enc_tape, std::move(level_grads), grads);
  return loss;
}

template <typename Real>
RaeLoss<Real> rae_loss_and_grads(const Columns<Real>& tokens, const RaeParams<Real>& params,
                                 const RaeConfig& cfg) {
  RaeLoss<Real> result;
  result.grads = zeros_like(params);
  result.loss = accumulate_rae_gradients(tokens, params, cfg, result.grads, Real(1));
  return result;
}

#define RAE_INSTANTIATE_MODEL(Real)                                                          \
  template struct EncodingPyramid<Real>;                                                    \
  template RaeParams<Real> make_rae_params<Real>(const RaeConfig&);                         \
  template RaeParams<Real> make_rae_params<Real>(const RaeConfig&, std::uint64_t);          \
  template RaeParams<Real> zeros_like(const RaeParams<Real>&);                              \
  template void initialize(RaeParams<Real>&, std::mt19937_64&);                             \
  template void check_architecture(const RaeParams<Real>&, const RaeConfig&);               \
  template std::vector<ParamBlock<Real>> param_blocks(RaeParams<Real>&);                    \
  template std::vector<ParamBlock<const Real>> param_blocks(const RaeParams<Real>&);        \
  template EncodingPyramid<Real> encode_pyramid(const Columns<Real>&, const RaeParams<Real>&, \
                                                const RaeConfig&, std::vector<MlpTape<Real>>*); \
  template Compressed<Real> compress(const Columns<Real>&, const RaeParams<Real>&,          \
                                     const RaeConfig&, EncoderTape<Real>*);                 \
  template Columns<Real> decode_once(const Columns<Real>&, std::uint32_t,                   \
                                     const RaeParams<Real>&, const RaeConfig&, MlpTape<Real>*); \
  template Columns<Real> decompress(const CompressedCode<Real>&, const RaeParams<Real>&,    \
                                    const RaeConfig&, DecoderTape<Real>*);                  \
  template Columns<Real> encoder_backward(const RaeParams<Real>&, const RaeConfig&,         \
                                          const EncoderTape<Real>&, std::vector<Columns<Real>>, \
                                          RaeParams<Real>&);                                \
  template Vector<Real> decoder_backward(const RaeParams<Real>&, const RaeConfig&,          \
                                         const DecoderTape<Real>&, const Columns<Real>&,    \
                                         RaeParams<Real>&);                                 \
  template Real reconstruction_mse(const Columns<Real>&, const Columns<Real>&);             \
  template Real accumulate_rae_gradients(const Columns<Real>&, const RaeParams<Real>&,      \
                                         const RaeConfig&, RaeParams<Real>&, Real);         \
  template RaeLoss<Real> rae_loss_and_grads(const Columns<Real>&, const RaeParams<Real>&,   \
                                            const RaeConfig&);

RAE_INSTANTIATE_MODEL(float)
RAE_INSTANTIATE_MODEL(double)

template RaeParams<float> cast_params<float, double>(const RaeParams<double>&);
template RaeParams<double> cast_params<double, float>(const RaeParams<float>&);
template RaeParams<float> cast_params<float, float>(const RaeParams<float>&);
template RaeParams<double> cast_params<double, double>(const RaeParams<double>&);

}  // namespace rae
