#include "rae/commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "rae/checkpoint.hpp"
#include "rae/error.hpp"

namespace rae {

namespace fs = std::filesystem;

namespace {

enum class Precision { f32, f64 };

Precision precision_of(const RunConfig& config) {
  const std::string& p = config.get("precision");
  if (p == "f32") return Precision::f32;
  if (p == "f64") return Precision::f64;
  throw ConfigError("precision must be f32 or f64, got '" + p + "'");
}

OptimOptions optim_options(const RunConfig& config) {
  OptimOptions o;
  o.adam.lr = config.real("lr");
  o.adam.beta1 = config.real("beta1");
  o.adam.beta2 = config.real("beta2");
  o.adam.eps = config.real("adam_eps");
  o.clip = config.real("clip");
  return o;
}

std::uint32_t u32_key(const RunConfig& config, std::string_view key) {
  const std::uint64_t v = config.count(key);
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw ConfigError("config key '" + std::string(key) + "' too large");
  }
  return static_cast<std::uint32_t>(v);
}

fs::path prepare_out_dir(const RunConfig& config) {
  const fs::path dir = config.path("out_dir");
  fs::create_directories(dir);
  return dir;
}

// Writes the resolved config beside a command's outputs.
void record_config(const RunConfig& config, const fs::path& dir, std::string_view command) {
  if (!dir.empty()) fs::create_directories(dir);
  config.save((dir.empty() ? fs::path(".") : dir) / (std::string(command) + ".config"));
}

fs::path output_dir_of(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

template <typename Real>
LoadedModel<Real> load_matching(const RunConfig& config, const EmbeddingTable& table) {
  LoadedModel<Real> model = load_checkpoint<Real>(config.path("checkpoint"));
  if (model.cfg.d_glove != table.dim) {
    throw ShapeError("checkpoint d_glove " + std::to_string(model.cfg.d_glove) +
                     " does not match embedding width " + std::to_string(table.dim));
  }
  if (model.cfg.d_emb != u32_key(config, "d_emb") ||
      model.cfg.max_len != u32_key(config, "max_len")) {
    throw ShapeError("checkpoint has d_emb=" + std::to_string(model.cfg.d_emb) +
                     " max_len=" + std::to_string(model.cfg.max_len) + ", config asks for d_emb=" +
                     config.get("d_emb") + " max_len=" + config.get("max_len"));
  }
  return model;
}

std::string format_real(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text << '\n';
}

template <typename Real>
TrainAeSummary train_ae(const RunConfig& config, std::ostream& log) {
  const EmbeddingTable table = load_embedding_text(config.path("embeddings"));
  const std::uint64_t seed = config.count("seed");
  RaeConfig cfg = RaeConfig::make(static_cast<std::uint32_t>(table.dim), u32_key(config, "d_emb"),
                                  u32_key(config, "max_len"));
  RaeParams<Real> params = config.get("checkpoint").empty()
                               ? make_rae_params<Real>(cfg, seed)
                               : load_matching<Real>(config, table).params;

  const TokenizedCorpus train = load_corpus(config.path("train"), table, cfg.max_len);
  const TokenizedCorpus dev = config.get("dev").empty()
                                  ? train
                                  : load_corpus(config.path("dev"), table, cfg.max_len);
  if (train.sentences.empty()) throw FormatError("training corpus has no sentences");
  if (dev.sentences.empty()) throw FormatError("dev corpus has no sentences");
  if (train.truncated_lines) {
    log << "warning: truncated " << train.truncated_lines << " training lines to " << cfg.max_len
        << " tokens\n";
  }

  const fs::path dir = prepare_out_dir(config);
  record_config(config, dir, "train-ae");
  OptimOptions options = optim_options(config);
  const LrSchedule schedule = parse_lr_schedule(config.get("lr_schedule"));
  const double lr_min = config.real("lr_min");
  const std::size_t epochs = config.count("epochs");
  const std::size_t batch_size = config.count("batch_size");
  const double stop_mse = config.real("stop_mse");

  std::ofstream csv(dir / "train_log.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (dir / "train_log.csv").string());
  csv << "epoch,train_mse,dev_mse\n";

  TrainAeSummary summary;
  AdamState<Real> adam;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    options.adam.lr = scheduled_lr(schedule, config.real("lr"), lr_min, epoch, epochs);
    const auto batches = make_batches(train, batch_size, seed + epoch);
    const double train_mse = train_ae_epoch(params, adam, batches, table, cfg, options);
    const double dev_mse = corpus_mse(params, dev, table, cfg);
    summary.train_mse.push_back(train_mse);
    summary.dev_mse.push_back(dev_mse);

    std::ostringstream name;
    name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".rae";
    const fs::path checkpoint = dir / name.str();
    save_checkpoint(checkpoint, cfg, params);
    write_text(dir / "latest", name.str());
    if (!config.flag("keep_epochs") && !summary.latest_checkpoint.empty() &&
        summary.latest_checkpoint != summary.best_checkpoint) {
      fs::remove(summary.latest_checkpoint);
    }
    summary.latest_checkpoint = checkpoint;
    if (dev_mse < best) {
      if (!config.flag("keep_epochs") && !summary.best_checkpoint.empty() &&
          summary.best_checkpoint != checkpoint) {
        fs::remove(summary.best_checkpoint);
      }
      best = dev_mse;
      summary.best_checkpoint = checkpoint;
      write_text(dir / "best", name.str());
    }

    csv << epoch << ',' << format_real(train_mse) << ',' << format_real(dev_mse) << '\n';
    csv.flush();
    log << "epoch " << epoch << " train_mse=" << format_real(train_mse)
        << " dev_mse=" << format_real(dev_mse) << '\n';
    if (stop_mse > 0 && dev_mse < stop_mse) break;
  }
  return summary;
}

template <typename Real>
AeEvaluation eval_ae(const RunConfig& config, std::ostream& out) {
  const EmbeddingTable table = load_embedding_text(config.path("embeddings"));
  const LoadedModel<Real> model = load_matching<Real>(config, table);
  const TokenizedCorpus corpus = load_corpus(config.path("eval"), table, model.cfg.max_len);
  if (corpus.sentences.empty()) throw FormatError("evaluation corpus has no sentences");
  const std::size_t k = config.count("topk");
  const AeEvaluation eval =
      evaluate_ae(model.params, corpus, table, model.cfg, k, config.flag("skip_unk"));

  if (config.get("output").empty()) {
    write_metrics_csv(out, eval, k);
    record_config(config, prepare_out_dir(config), "eval-ae");
  } else {
    const fs::path path = config.get("output");
    record_config(config, output_dir_of(path), "eval-ae");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    write_metrics_csv(os, eval, k);
  }
  return eval;
}

template <typename Real>
std::size_t encode(const RunConfig& config) {
  const EmbeddingTable table = load_embedding_text(config.path("embeddings"));
  const LoadedModel<Real> model = load_matching<Real>(config, table);
  const TokenizedCorpus corpus = load_corpus(config.path("input"), table, model.cfg.max_len);
  const fs::path path = config.path("output");
  record_config(config, output_dir_of(path), "encode");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  for (const TokenIds& ids : corpus.sentences) {
    const auto code = compress(embed_tokens<Real>(ids, table), model.params, model.cfg).code;
    write_u32(os, code.length);
    for (Index i = 0; i < code.root.size(); ++i) write_f32(os, static_cast<float>(code.root(i)));
  }
  if (!os) throw IoError("failed writing " + path.string());
  return corpus.sentences.size();
}

template <typename Real>
std::size_t decode(const RunConfig& config) {
  const EmbeddingTable table = load_embedding_text(config.path("embeddings"));
  const LoadedModel<Real> model = load_matching<Real>(config, table);
  const fs::path in_path = config.path("input");
  const fs::path out_path = config.path("output");
  std::ifstream is(in_path, std::ios::binary);
  if (!is) throw IoError("cannot open codes " + in_path.string());
  const std::uint64_t record = 4 + 4ull * model.cfg.d_emb;
  const std::uint64_t size = fs::file_size(in_path);
  if (size % record != 0) {
    throw FormatError("corrupt code file: record " + std::to_string(size / record) +
                      " is truncated (" + std::to_string(size % record) + " of " +
                      std::to_string(record) + " bytes)");
  }
  record_config(config, output_dir_of(out_path), "decode");
  std::ofstream os(out_path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + out_path.string());

  const std::uint64_t records = size / record;
  for (std::uint64_t r = 0; r < records; ++r) {
    const auto corrupt = [&](const std::string& what) {
      return FormatError("corrupt record " + std::to_string(r) + ": " + what);
    };
    CompressedCode<Real> code;
    if (!read_u32(is, code.length)) throw corrupt("truncated");
    if (code.length == 0 || code.length > model.cfg.max_len) {
      throw corrupt("length " + std::to_string(code.length) + " outside 1.." +
                    std::to_string(model.cfg.max_len));
    }
    code.root.resize(model.cfg.d_emb);
    for (Index i = 0; i < code.root.size(); ++i) {
      float v = 0;
      if (!read_f32(is, v)) throw corrupt("truncated");
      if (!std::isfinite(v)) throw corrupt("non-finite value");
      code.root(i) = static_cast<Real>(v);
    }
    const Eigen::MatrixXf out = decompress(code, model.params, model.cfg).template cast<float>();
    for (Index i = 0; i < out.cols(); ++i) {
      const auto col = out.col(i);
      const auto nn = nearest_k({col.data(), static_cast<std::size_t>(col.size())}, table, 1);
      if (i > 0) os << ' ';
      os << table.vocab.token(nn.front());
    }
    os << '\n';
  }
  if (!os) throw IoError("failed writing " + out_path.string());
  return records;
}

template <typename Real>
TrainSstSummary train_sst(const RunConfig& config, std::ostream& log) {
  const EmbeddingTable table = load_embedding_text(config.path("embeddings"));
  const std::uint64_t seed = config.count("seed");
  RaeConfig cfg;
  RaeParams<Real> params;
  if (config.get("checkpoint").empty()) {
    cfg = RaeConfig::make(static_cast<std::uint32_t>(table.dim), u32_key(config, "d_emb"),
                          u32_key(config, "max_len"));
    params = make_rae_params<Real>(cfg, seed);
  } else {
    LoadedModel<Real> model = load_matching<Real>(config, table);
    cfg = model.cfg;
    params = std::move(model.params);
  }
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  SentimentHead<Real> head = config.get("head").empty()
                                 ? make_sentiment_head<Real>(cfg.d_emb, rng)
                                 : load_sentiment_head<Real>(config.path("head"));
  if (head.affine.in_size() != static_cast<Index>(cfg.d_emb)) {
    throw ShapeError("sentiment head width does not match d_emb");
  }

  std::size_t skipped = 0;
  const auto train = prepare_sst(load_sst_file(config.path("train")), table, cfg.max_len, &skipped);
  if (skipped) log << "warning: skipped " << skipped << " trees longer than max_len\n";
  if (train.empty()) throw FormatError("no usable training trees");
  const auto dev = config.get("dev").empty()
                       ? train
                       : prepare_sst(load_sst_file(config.path("dev")), table, cfg.max_len);
  if (dev.empty()) throw FormatError("no usable dev trees");

  const fs::path dir = prepare_out_dir(config);
  record_config(config, dir, "train-sst");
  std::ofstream csv(dir / "sst_log.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (dir / "sst_log.csv").string());
  csv << "epoch,train_loss,five_all\n";

  SstTrainer<Real> trainer{params, head, {}, {config.real("lambda"), config.flag("freeze")},
                           optim_options(config), config.count("batch_size")};
  TrainSstSummary summary;
  summary.model_path = dir / "model.rae";
  summary.head_path = dir / "head.sst";
  const std::size_t epochs = config.count("epochs");
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const double loss = trainer.run_epoch(train, table, cfg, seed + epoch);
    const double acc =
        sst_metrics(predict_sst(params, head, dev, table, cfg), gold_spans(dev), SstMode::five_all)
            .accuracy;
    summary.train_loss.push_back(loss);
    summary.five_all.push_back(acc);
    save_checkpoint(summary.model_path, cfg, params);
    save_sentiment_head(summary.head_path, head);
    csv << epoch << ',' << format_real(loss) << ',' << format_real(acc) << '\n';
    csv.flush();
    log << "epoch " << epoch << " train_loss=" << format_real(loss)
        << " five_all=" << format_real(acc) << '\n';
  }
  return summary;
}

template <typename Real>
std::vector<SstMetricRow> eval_sst(const RunConfig& config, std::ostream& out) {
  const EmbeddingTable table = load_embedding_text(config.path("embeddings"));
  const LoadedModel<Real> model = load_matching<Real>(config, table);
  const SentimentHead<Real> head = load_sentiment_head<Real>(config.path("head"));
  if (head.affine.in_size() != static_cast<Index>(model.cfg.d_emb)) {
    throw ShapeError("sentiment head width does not match checkpoint d_emb");
  }
  const auto examples =
      prepare_sst(load_sst_file(config.path("eval")), table, model.cfg.max_len);
  if (examples.empty()) throw FormatError("no usable evaluation trees");
  const auto predictions = predict_sst(model.params, head, examples, table, model.cfg);
  const auto gold = gold_spans(examples);

  std::vector<SstMetricRow> rows;
  for (SstMode mode : {SstMode::five_all, SstMode::binary_root}) {
    rows.push_back({mode, sst_metrics(predictions, gold, mode)});
  }
  std::ostringstream csv;
  csv << "mode,split,accuracy,node_count\n";
  for (const auto& row : rows) {
    csv << to_string(row.mode) << ',' << config.get("split") << ','
        << std::fixed << std::setprecision(6) << row.score.accuracy << ',' << row.score.node_count
        << '\n';
  }
  if (config.get("output").empty()) {
    out << csv.str();
    record_config(config, prepare_out_dir(config), "eval-sst");
  } else {
    const fs::path path = config.get("output");
    record_config(config, output_dir_of(path), "eval-sst");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << csv.str();
  }
  return rows;
}

}  // namespace

void write_metrics_csv(std::ostream& os, const AeEvaluation& eval, std::size_t k) {
  os << "length,n,top1,top" << k << ",mse\n";
  for (const MetricsRow& row : eval.rows) {
    os << row.length << ',' << row.n_sequences << ',' << std::fixed << std::setprecision(6)
       << row.top1 << ',' << row.topk << ',' << std::defaultfloat << std::setprecision(9)
       << row.mse << '\n';
  }
}

TrainAeSummary cmd_train_ae(const RunConfig& config, std::ostream& log) {
  return precision_of(config) == Precision::f32 ? train_ae<float>(config, log)
                                                 : train_ae<double>(config, log);
}

AeEvaluation cmd_eval_ae(const RunConfig& config, std::ostream& out) {
  return precision_of(config) == Precision::f32 ? eval_ae<float>(config, out)
                                                 : eval_ae<double>(config, out);
}

std::size_t cmd_encode(const RunConfig& config) {
  return precision_of(config) == Precision::f32 ? encode<float>(config) : encode<double>(config);
}

std::size_t cmd_decode(const RunConfig& config) {
  return precision_of(config) == Precision::f32 ? decode<float>(config) : decode<double>(config);
}

GradcheckReport cmd_gradcheck(const RunConfig& config, std::ostream& out) {
  const GradcheckReport report = run_gradcheck_suite(config.count("seed"));
  write_report(out, report);
  out << (report.passed() ? "PASS" : "FAIL") << " max_relative_error=" << std::scientific
      << std::setprecision(3) << report.max_error() << " tolerance=" << report.tolerance
      << std::defaultfloat << '\n';
  return report;
}

TrainSstSummary cmd_train_sst(const RunConfig& config, std::ostream& log) {
  return precision_of(config) == Precision::f32 ? train_sst<float>(config, log)
                                                 : train_sst<double>(config, log);
}

std::vector<SstMetricRow> cmd_eval_sst(const RunConfig& config, std::ostream& out) {
  return precision_of(config) == Precision::f32 ? eval_sst<float>(config, out)
                                                 : eval_sst<double>(config, out);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Recursive autoencoder for sentences and all of their sub-spans"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> overrides;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train-ae", "Train the autoencoder on a text corpus"},
      {"eval-ae", "Reconstruction accuracy and MSE grouped by sentence length"},
      {"encode", "Compress each input line into a fixed-size code record"},
      {"decode", "Reconstruct sentences from code records"},
      {"gradcheck", "Finite-difference check of every backward pass"},
      {"train-sst", "Train the per-node sentiment classifier"},
      {"eval-sst", "SST-5 all-node and SST-2 root accuracy"},
  };
  for (const auto& [name, description] : commands) {
    CLI::App* sub = app.add_subcommand(name, description);
    sub->add_option("-c,--config", config_file, "key=value config file");
    sub->add_option("overrides", overrides, "key=value settings overriding the config file");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    RunConfig config = config_file.empty() ? RunConfig() : RunConfig::from_file(config_file);
    config.apply_environment();
    for (const auto& assignment : overrides) config.apply_override(assignment);

    if (command == "train-ae") {
      cmd_train_ae(config, std::cout);
    } else if (command == "eval-ae") {
      cmd_eval_ae(config, std::cout);
    } else if (command == "encode") {
      std::cerr << "encoded " << cmd_encode(config) << " sentences\n";
    } else if (command == "decode") {
      std::cerr << "decoded " << cmd_decode(config) << " records\n";
    } else if (command == "gradcheck") {
      if (!cmd_gradcheck(config, std::cout).passed()) return kExitCheckFailed;
    } else if (command == "train-sst") {
      cmd_train_sst(config, std::cout);
    } else if (command == "eval-sst") {
      cmd_eval_sst(config, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "rae " << command << ": config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "rae " << command << ": " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace rae
