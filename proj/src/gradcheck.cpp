#include "rae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>

namespace rae {

namespace {

template <typename Loss>
BlockError check_block(const std::string& name, std::span<double> values,
                       std::span<const double> analytic, Loss&& loss,
                       const GradcheckOptions& options) {
  BlockError result{name, 0.0, values.size()};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + options.step;
    const double plus = loss();
    values[i] = saved - options.step;
    const double minus = loss();
    values[i] = saved;
    const double numeric = (plus - minus) / (2 * options.step);
    result.max_relative_error = std::max(
        result.max_relative_error, relative_error(analytic[i], numeric, options.floor));
  }
  return result;
}

Columns<double> random_columns(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Columns<double> x(rows, cols);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = dist(rng);
  return x;
}

void jitter(std::optional<LayerNormParams<double>>& norm, std::mt19937_64& rng) {
  if (!norm) return;
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (Index i = 0; i < norm->gain.size(); ++i) {
    norm->gain(i) += dist(rng);
    norm->shift(i) += dist(rng);
  }
}

// Random biases and LayerNorm affine terms so every gradient path is exercised.
void perturb(MlpParams<double>& mlp, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.3, 0.3);
  for (Index i = 0; i < mlp.layer1.bias.size(); ++i) mlp.layer1.bias(i) = dist(rng);
  for (Index i = 0; i < mlp.layer2.bias.size(); ++i) mlp.layer2.bias(i) = dist(rng);
  jitter(mlp.norm1, rng);
  jitter(mlp.norm2, rng);
}

}  // namespace

bool GradcheckReport::passed() const {
  return std::all_of(blocks.begin(), blocks.end(), [&](const BlockError& b) {
    return std::isfinite(b.max_relative_error) && b.max_relative_error < tolerance;
  });
}

double GradcheckReport::max_error() const {
  double worst = 0;
  for (const auto& b : blocks) worst = std::max(worst, b.max_relative_error);
  return worst;
}

void GradcheckReport::merge(const GradcheckReport& other, const std::string& prefix) {
  for (BlockError b : other.blocks) {
    b.name = prefix + b.name;
    blocks.push_back(std::move(b));
  }
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

RaeGradientFn exact_rae_gradients() {
  return [](const Columns<double>& tokens, const RaeParams<double>& params, const RaeConfig& cfg) {
    return rae_loss_and_grads(tokens, params, cfg).grads;
  };
}

GradcheckReport check_rae_gradients(const RaeParams<double>& params, const Columns<double>& tokens,
                                    const RaeConfig& cfg, const GradcheckOptions& options,
                                    const RaeGradientFn& gradient_fn) {
  GradcheckReport report;
  report.tolerance = options.tolerance;
  const RaeParams<double> grads = gradient_fn(tokens, params, cfg);
  RaeParams<double> probe = params;
  const auto loss = [&] {
    const auto code = compress(tokens, probe, cfg).code;
    return reconstruction_mse(decompress(code, probe, cfg), tokens);
  };
  const auto values = param_blocks(probe);
  const auto analytic = param_blocks(grads);
  for (std::size_t b = 0; b < values.size(); ++b) {
    report.blocks.push_back(
        check_block(values[b].name, values[b].values, analytic[b].values, loss, options));
  }
  return report;
}

GradcheckReport check_mlp_gradients(Index d, bool layer_norm, bool relu_after_layer2,
                                    std::uint64_t seed, const GradcheckOptions& options) {
  std::mt19937_64 rng(seed);
  MlpParams<double> mlp = make_mlp<double>({d, d + 2, d, layer_norm, relu_after_layer2});
  initialize(mlp, rng);
  perturb(mlp, rng);
  Columns<double> input = random_columns(d, 3, rng);
  const Columns<double> weights = random_columns(d, 3, rng);

  MlpParams<double> grads = zeros_like(mlp);
  const MlpTape<double> tape = mlp_forward(mlp, input);
  const Columns<double> input_grad = mlp_backward(mlp, tape, weights, grads);

  const auto loss = [&] { return mlp_apply(mlp, input).cwiseProduct(weights).sum(); };
  GradcheckReport report;
  report.tolerance = options.tolerance;
  std::vector<ParamBlock<double>> values;
  std::vector<ParamBlock<const double>> analytic;
  append_blocks(mlp, "mlp", values);
  append_blocks(std::as_const(grads), "mlp", analytic);
  for (std::size_t b = 0; b < values.size(); ++b) {
    report.blocks.push_back(
        check_block(values[b].name, values[b].values, analytic[b].values, loss, options));
  }
  report.blocks.push_back(check_block(
      "mlp.input", {input.data(), static_cast<std::size_t>(input.size())},
      {input_grad.data(), static_cast<std::size_t>(input_grad.size())}, loss, options));
  return report;
}

GradcheckReport check_sentiment_gradients(const RaeParams<double>& params,
                                          const SentimentHead<double>& head,
                                          const Columns<double>& tokens,
                                          const std::vector<NodeSpan>& spans, const RaeConfig& cfg,
                                          double lambda, const GradcheckOptions& options) {
  const SentimentObjective objective{lambda, false};
  RaeParams<double> body_grads = zeros_like(params);
  SentimentHead<double> head_grads{AffineLayer<double>(head.affine.out_size(), head.affine.in_size())};
  accumulate_sentiment_gradients(tokens, spans, params, head, cfg, objective, body_grads,
                                 head_grads);

  RaeParams<double> probe = params;
  SentimentHead<double> probe_head = head;
  const auto loss = [&] {
    RaeParams<double> scratch = zeros_like(probe);
    SentimentHead<double> scratch_head{
        AffineLayer<double>(head.affine.out_size(), head.affine.in_size())};
    return accumulate_sentiment_gradients(tokens, spans, probe, probe_head, cfg, objective,
                                          scratch, scratch_head, 0.0)
        .total;
  };

  GradcheckReport report;
  report.tolerance = options.tolerance;
  auto values = param_blocks(probe);
  auto analytic = param_blocks(std::as_const(body_grads));
  values.push_back({"head.weight", {probe_head.affine.weight.data(),
                                    static_cast<std::size_t>(probe_head.affine.weight.size())}});
  values.push_back({"head.bias", {probe_head.affine.bias.data(),
                                  static_cast<std::size_t>(probe_head.affine.bias.size())}});
  analytic.push_back({"head.weight", {head_grads.affine.weight.data(),
                                      static_cast<std::size_t>(head_grads.affine.weight.size())}});
  analytic.push_back({"head.bias", {head_grads.affine.bias.data(),
                                    static_cast<std::size_t>(head_grads.affine.bias.size())}});
  for (std::size_t b = 0; b < values.size(); ++b) {
    report.blocks.push_back(
        check_block(values[b].name, values[b].values, analytic[b].values, loss, options));
  }
  return report;
}

GradcheckReport run_gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options) {
  GradcheckReport report;
  report.tolerance = options.tolerance;

  report.merge(check_mlp_gradients(5, true, true, seed, options), "nn/layernorm/");
  report.merge(check_mlp_gradients(5, false, false, seed + 1, options), "nn/plain/");

  const RaeConfig cfg = RaeConfig::make(6, 8, 8);
  for (std::uint64_t s = 0; s < 3; ++s) {
    std::mt19937_64 rng(seed + 100 + s);
    RaeParams<double> params = make_rae_params<double>(cfg);
    initialize(params, rng);
    for_each_mlp(params, [&](std::string_view, MlpParams<double>& mlp) { perturb(mlp, rng); });
    const Columns<double> tokens = random_columns(cfg.d_glove, 3, rng);
    report.merge(check_rae_gradients(params, tokens, cfg, options),
                 "rae/seed" + std::to_string(s) + "/");
  }

  std::mt19937_64 rng(seed + 200);
  RaeParams<double> params = make_rae_params<double>(cfg);
  initialize(params, rng);
  const SentimentHead<double> head = make_sentiment_head<double>(cfg.d_emb, rng);
  const Columns<double> tokens = random_columns(cfg.d_glove, 4, rng);
  const auto spans = node_spans(parse_sst_line("(1 (3 (2 a) (4 b)) (0 (2 c) (1 d)))"));
  report.merge(check_sentiment_gradients(params, head, tokens, spans, cfg, 0.5, options), "sst/");
  return report;
}

void write_report(std::ostream& os, const GradcheckReport& report) {
  os << "block,entries,max_relative_error,status\n";
  for (const auto& b : report.blocks) {
    os << b.name << ',' << b.entries << ',' << std::scientific << std::setprecision(3)
       << b.max_relative_error << ',' << (b.max_relative_error < report.tolerance ? "ok" : "FAIL")
       << '\n';
  }
  os << std::defaultfloat;
}

}  // namespace rae
