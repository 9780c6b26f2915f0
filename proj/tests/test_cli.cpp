#include <doctest.h>

#include <cstdlib>
#include <cstring>
#include <sstream>

#include "rae/checkpoint.hpp"
#include "rae/commands.hpp"
#include "rae/config.hpp"
#include "rae/error.hpp"
#include "support.hpp"

using namespace rae;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "rae");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  return run_cli(static_cast<int>(args.size()), argv.data());
}

std::string config_arg(const std::string& key, const fs::path& value) {
  return key + "=" + value.string();
}

// A small table, a 10-sentence corpus and a matching tree file.
struct Workspace {
  fixture::TempDir dir{"cli"};
  fs::path emb = dir / "emb.txt";
  fs::path corpus = dir / "corpus.txt";
  fs::path trees = dir / "trees.txt";

  Workspace() {
    fixture::write_file(emb, fixture::embedding_text(30, 6, 0.5, 1));
    fixture::write_file(corpus, fixture::corpus_text(10, 1, 6, 30, 2));
    fixture::write_file(trees,
                        "(3 (4 w1) (2 w2))\n(1 (0 w3) (2 (2 w4) (1 w5)))\n(2 w6)\n"
                        "(4 (3 (3 w7) (2 w8)) (4 w9))\n");
  }

  RunConfig base() const {
    RunConfig c;
    c.set("embeddings", emb.string());
    c.set("d_emb", "8");
    c.set("max_len", "8");
    c.set("batch_size", "4");
    return c;
  }

  fs::path trained_checkpoint(std::size_t epochs = 1) {
    RunConfig c = base();
    c.set("train", corpus.string());
    c.set("out_dir", (dir / "ae").string());
    c.set("epochs", std::to_string(epochs));
    std::ostringstream log;
    return cmd_train_ae(c, log).latest_checkpoint;
  }
};

}  // namespace

TEST_CASE("checkpoint round trip and layout") {
  const RaeConfig cfg = RaeConfig::make(5, 6, 9);
  const auto params = make_rae_params<float>(cfg, 4);
  std::stringstream ss;
  write_checkpoint(ss, cfg, params);
  const std::string bytes = ss.str();
  CHECK(bytes.size() == checkpoint_size(cfg));
  CHECK(bytes.substr(0, 4) == "RAE1");
  const unsigned char header[16] = {5, 0, 0, 0, 6, 0, 0, 0, 9, 0, 0, 0, 5, 0, 0, 0};
  CHECK(std::memcmp(bytes.data() + 4, header, 16) == 0);
  float first = 0;
  std::memcpy(&first, bytes.data() + 20, 4);
  CHECK(first == params.mlp_in.layer1.weight(0, 0));
  float second = 0;
  std::memcpy(&second, bytes.data() + 24, 4);
  CHECK(second == params.mlp_in.layer1.weight(0, 1));

  std::stringstream in(bytes);
  const auto loaded = read_checkpoint<float>(in);
  CHECK(loaded.cfg == cfg);
  const auto a = param_blocks(params);
  const auto b = param_blocks(loaded.params);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::memcmp(a[i].values.data(), b[i].values.data(), a[i].values.size() * 4) == 0);
  }

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[3] = '2';
    std::stringstream s(bad);
    CHECK_THROWS_AS(read_checkpoint<float>(s), FormatError);
  }
  SUBCASE("truncated body") {
    std::stringstream s(bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_AS(read_checkpoint<float>(s), FormatError);
  }
  SUBCASE("trailing bytes") {
    std::stringstream s(bytes + "xxxx");
    CHECK_THROWS_AS(read_checkpoint<float>(s), FormatError);
  }
  SUBCASE("inconsistent header") {
    std::string bad = bytes;
    bad[16] = 3;  // n_buckets
    std::stringstream s(bad);
    CHECK_THROWS_AS(read_checkpoint<float>(s), FormatError);
  }
  SUBCASE("mismatched architecture is refused on write") {
    std::stringstream s;
    CHECK_THROWS_AS(write_checkpoint(s, RaeConfig::make(5, 8, 9), params), ShapeError);
  }
}

TEST_CASE("sentiment head file") {
  fixture::TempDir dir("head");
  std::mt19937_64 rng(1);
  const auto head = make_sentiment_head<float>(7, rng);
  save_sentiment_head(dir / "h.sst", head);
  const auto back = load_sentiment_head<float>(dir / "h.sst");
  CHECK(back.affine.weight == head.affine.weight);
  CHECK(back.affine.bias == head.affine.bias);
  CHECK(fs::file_size(dir / "h.sst") == 4 + 8 + 4 * (5 * 7 + 5));
}

TEST_CASE("RunConfig") {
  RunConfig c;
  CHECK(c.get("lr") == "1e-4");
  CHECK(c.real("clip") == 5.0);
  CHECK(c.count("batch_size") == 32);
  CHECK_FALSE(c.flag("freeze"));
  CHECK_THROWS_AS(c.set("learning_rate", "1"), ConfigError);
  CHECK_THROWS_AS(c.get("nope"), ConfigError);
  CHECK_THROWS_AS(c.path("train"), ConfigError);

  std::istringstream file("# comment\n\nlr = 0.5\n  epochs=3\n");
  c.parse(file, "test.config");
  CHECK(c.real("lr") == 0.5);
  CHECK(c.count("epochs") == 3);

  std::istringstream bad("lr 0.5\n");
  try {
    c.parse(bad, "x.config");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("x.config:1") != std::string::npos);
  }

  c.apply_override("seed=9");
  CHECK(c.count("seed") == 9);
  c.set("epochs", "-1");
  CHECK_THROWS_AS(c.count("epochs"), ConfigError);
  c.set("lr", "fast");
  CHECK_THROWS_AS(c.real("lr"), ConfigError);
  c.set("freeze", "maybe");
  CHECK_THROWS_AS(c.flag("freeze"), ConfigError);

  std::ostringstream out;
  RunConfig().write(out);
  std::istringstream lines(out.str());
  std::string prev, line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    CHECK(prev < line);
    prev = line;
    ++count;
  }
  CHECK(count == RunConfig().values().size());
}

TEST_CASE("RAE_SEED overrides the file, the command line overrides both") {
  Workspace ws;
  fixture::write_file(ws.dir / "run.config",
                      "embeddings=" + ws.emb.string() + "\ntrain=" + ws.corpus.string() +
                          "\nd_emb=8\nmax_len=8\nepochs=1\nseed=3\n");
  ::setenv("RAE_SEED", "17", 1);
  REQUIRE(run({"train-ae", "-c", (ws.dir / "run.config").string(),
               config_arg("out_dir", ws.dir / "env")}) == kExitOk);
  REQUIRE(run({"train-ae", "-c", (ws.dir / "run.config").string(),
               config_arg("out_dir", ws.dir / "cli"), "seed=5"}) == kExitOk);
  ::unsetenv("RAE_SEED");
  const RunConfig env = RunConfig::from_file(ws.dir / "env" / "train-ae.config");
  const RunConfig cli = RunConfig::from_file(ws.dir / "cli" / "train-ae.config");
  CHECK(env.count("seed") == 17);
  CHECK(cli.count("seed") == 5);
}

TEST_CASE("exit codes") {
  Workspace ws;
  CHECK(run({}) == kExitUsage);
  CHECK(run({"bogus"}) == kExitUsage);
  CHECK(run({"train-ae", "colour=blue"}) == kExitUsage);
  CHECK(run({"train-ae", "epochs=many", config_arg("embeddings", ws.emb),
             config_arg("train", ws.corpus), config_arg("out_dir", ws.dir / "x")}) == kExitUsage);
  CHECK(run({"train-ae", config_arg("embeddings", ws.dir / "missing.txt"),
             config_arg("train", ws.corpus), config_arg("out_dir", ws.dir / "x")}) == kExitData);
  CHECK(run({"gradcheck"}) == kExitOk);
}

TEST_CASE("gradcheck report") {
  std::ostringstream out;
  const auto report = cmd_gradcheck(RunConfig(), out);
  CHECK(report.passed());
  const std::string text = out.str();
  CHECK(text.rfind("block,entries,max_relative_error,status\n", 0) == 0);
  CHECK(text.find("rae/seed0/mlp_enc.layer1.weight,") != std::string::npos);
  CHECK(text.find("sst/head.weight,") != std::string::npos);
  CHECK(text.find("\nPASS ") != std::string::npos);
}

TEST_CASE("train-ae writes checkpoints, markers, the log and its config") {
  Workspace ws;
  const fs::path ckpt = ws.trained_checkpoint(1);
  const fs::path dir = ws.dir / "ae";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(dir / "train-ae.config"));
  CHECK(fixture::read_file(dir / "latest") == "epoch_001.rae\n");
  CHECK(fixture::read_file(dir / "best") == "epoch_001.rae\n");
  const auto lines = fixture::read_lines(dir / "train_log.csv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "epoch,train_mse,dev_mse");
  CHECK(lines[1].rfind("1,", 0) == 0);

  SUBCASE("same seed, same first epoch") {
    RunConfig c = ws.base();
    c.set("train", ws.corpus.string());
    c.set("epochs", "1");
    c.set("out_dir", (ws.dir / "again").string());
    std::ostringstream log;
    const auto again = cmd_train_ae(c, log);
    CHECK(fixture::read_lines(ws.dir / "again" / "train_log.csv") == lines);
    CHECK(fixture::read_file(ckpt) == fixture::read_file(again.latest_checkpoint));
  }

  SUBCASE("checkpoint dims must match the config and the table") {
    RunConfig c = ws.base();
    c.set("checkpoint", ckpt.string());
    c.set("eval", ws.corpus.string());
    c.set("d_emb", "10");
    std::ostringstream out;
    CHECK_THROWS_AS(cmd_eval_ae(c, out), ShapeError);
    fixture::write_file(ws.dir / "wide.txt", fixture::embedding_text(30, 7, 0.5, 1));
    c.set("d_emb", "8");
    c.set("embeddings", (ws.dir / "wide.txt").string());
    CHECK_THROWS_AS(cmd_eval_ae(c, out), ShapeError);
  }
}

TEST_CASE("eval-ae output") {
  Workspace ws;
  fixture::write_file(ws.dir / "big.txt", fixture::corpus_text(200, 1, 8, 30, 5));
  const fs::path ckpt = ws.trained_checkpoint(1);
  RunConfig c = ws.base();
  c.set("checkpoint", ckpt.string());
  c.set("eval", (ws.dir / "big.txt").string());
  c.set("output", (ws.dir / "eval" / "metrics.csv").string());
  fs::create_directories(ws.dir / "eval");
  std::ostringstream unused;
  const auto eval = cmd_eval_ae(c, unused);
  const auto lines = fixture::read_lines(ws.dir / "eval" / "metrics.csv");
  REQUIRE(!lines.empty());
  CHECK(lines[0] == "length,n,top1,top5,mse");
  CHECK(lines.size() == eval.rows.size() + 1);
  CHECK(fs::exists(ws.dir / "eval" / "eval-ae.config"));
  for (const auto& row : eval.rows) {
    CHECK(row.topk >= row.top1);
    CHECK(row.top1 >= 0.0);
    CHECK(row.topk <= 1.0);
  }

  SUBCASE("two runs give byte-identical CSVs") {
    c.set("output", (ws.dir / "eval" / "again.csv").string());
    cmd_eval_ae(c, unused);
    CHECK(fixture::read_file(ws.dir / "eval" / "metrics.csv") ==
          fixture::read_file(ws.dir / "eval" / "again.csv"));
  }
  SUBCASE("stream output when no path is given") {
    c.set("output", "");
    c.set("out_dir", (ws.dir / "streamed").string());
    c.set("topk", "3");
    std::ostringstream out;
    cmd_eval_ae(c, out);
    CHECK(out.str().rfind("length,n,top1,top3,mse\n", 0) == 0);
    CHECK(fs::exists(ws.dir / "streamed" / "eval-ae.config"));
  }
}

TEST_CASE("an untrained model scores at chance level") {
  fixture::TempDir dir("chance");
  const std::size_t vocab = 500;
  fixture::write_file(dir / "emb.txt", fixture::embedding_text(vocab, 10, 0.5, 7));
  std::string text;
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> pick(0, vocab - 1);
  for (int s = 0; s < 200; ++s) {
    for (int i = 0; i < 6; ++i) text += (i ? " " : "") + fixture::word(pick(rng));
    text += '\n';
  }
  fixture::write_file(dir / "corpus.txt", text);
  const RaeConfig cfg = RaeConfig::make(10, 16, 8);
  save_checkpoint(dir / "random.rae", cfg, make_rae_params<float>(cfg, 9));

  RunConfig c;
  c.set("embeddings", (dir / "emb.txt").string());
  c.set("checkpoint", (dir / "random.rae").string());
  c.set("eval", (dir / "corpus.txt").string());
  c.set("d_emb", "16");
  c.set("max_len", "8");
  c.set("out_dir", (dir / "out").string());
  std::ostringstream out;
  const auto eval = cmd_eval_ae(c, out);
  // Uniform targets: an untrained decoder hits a given token with odds near k/|V|.
  CHECK(eval.top1 < 10.0 / vocab);
  CHECK(eval.topk < 10.0 * 5 / vocab);
}

TEST_CASE("encode and decode") {
  Workspace ws;
  const fs::path ckpt = ws.trained_checkpoint(1);
  RunConfig c = ws.base();
  c.set("checkpoint", ckpt.string());

  SUBCASE("record size and decode arity") {
    c.set("input", ws.corpus.string());
    c.set("output", (ws.dir / "codes.bin").string());
    CHECK(cmd_encode(c) == 10);
    CHECK(fs::file_size(ws.dir / "codes.bin") == 10 * (4 + 4 * 8));
    CHECK(fs::exists(ws.dir / "encode.config"));

    c.set("input", (ws.dir / "codes.bin").string());
    c.set("output", (ws.dir / "decoded.txt").string());
    CHECK(cmd_decode(c) == 10);
    const auto original = fixture::read_lines(ws.corpus);
    const auto decoded = fixture::read_lines(ws.dir / "decoded.txt");
    REQUIRE(decoded.size() == original.size());
    for (std::size_t i = 0; i < decoded.size(); ++i) {
      std::istringstream a(original[i]), b(decoded[i]);
      const auto count = [](std::istringstream& s) {
        std::size_t n = 0;
        for (std::string w; s >> w;) ++n;
        return n;
      };
      CHECK(count(a) == count(b));
    }
  }

  SUBCASE("empty input gives an empty output") {
    fixture::write_file(ws.dir / "empty.txt", "");
    c.set("input", (ws.dir / "empty.txt").string());
    c.set("output", (ws.dir / "empty.bin").string());
    CHECK(cmd_encode(c) == 0);
    CHECK(fs::file_size(ws.dir / "empty.bin") == 0);
    c.set("input", (ws.dir / "empty.bin").string());
    c.set("output", (ws.dir / "empty.out").string());
    CHECK(cmd_decode(c) == 0);
    CHECK(fs::file_size(ws.dir / "empty.out") == 0);
  }

  SUBCASE("corrupt records name their index") {
    c.set("input", ws.corpus.string());
    c.set("output", (ws.dir / "codes.bin").string());
    cmd_encode(c);
    std::string bytes = fixture::read_file(ws.dir / "codes.bin");
    const std::size_t record = 4 + 4 * 8;
    bytes[2 * record] = 99;  // length of record 2
    fixture::write_file(ws.dir / "bad.bin", bytes);
    c.set("input", (ws.dir / "bad.bin").string());
    c.set("output", (ws.dir / "bad.out").string());
    try {
      cmd_decode(c);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("record 2") != std::string::npos);
    }
    fixture::write_file(ws.dir / "short.bin", bytes.substr(0, 3 * record + 5));
    c.set("input", (ws.dir / "short.bin").string());
    CHECK_THROWS_AS(cmd_decode(c), FormatError);
  }
}

TEST_CASE("train-sst and eval-sst") {
  Workspace ws;
  const fs::path ckpt = ws.trained_checkpoint(1);
  RunConfig c = ws.base();
  c.set("train", ws.trees.string());
  c.set("checkpoint", ckpt.string());
  c.set("out_dir", (ws.dir / "sst").string());
  c.set("epochs", "2");
  c.set("lr", "1e-2");

  SUBCASE("frozen body keeps the encoder bytes") {
    c.set("freeze", "true");
    c.set("lambda", "0");
    std::ostringstream log;
    const auto summary = cmd_train_sst(c, log);
    const auto before = load_checkpoint<float>(ckpt);
    const auto after = load_checkpoint<float>(summary.model_path);
    CHECK(before.params.mlp_enc.layer1.weight == after.params.mlp_enc.layer1.weight);
    CHECK(fixture::read_file(ckpt) == fixture::read_file(summary.model_path));
    CHECK(fs::exists(ws.dir / "sst" / "train-sst.config"));
    CHECK(fixture::read_lines(ws.dir / "sst" / "sst_log.csv").size() == 3);

    RunConfig e = ws.base();
    e.set("checkpoint", summary.model_path.string());
    e.set("head", summary.head_path.string());
    e.set("eval", ws.trees.string());
    e.set("split", "train");
    e.set("out_dir", (ws.dir / "sst-eval").string());
    std::ostringstream out;
    const auto rows = cmd_eval_sst(e, out);
    REQUIRE(rows.size() == 2);
    const auto text = out.str();
    std::istringstream lines(text);
    std::vector<std::string> got;
    for (std::string l; std::getline(lines, l);) got.push_back(l);
    REQUIRE(got.size() == 3);
    CHECK(got[0] == "mode,split,accuracy,node_count");
    CHECK(got[1].rfind("five_all,train,", 0) == 0);
    CHECK(got[2].rfind("binary_root,train,", 0) == 0);
    CHECK(rows[0].score.node_count == 3 + 5 + 1 + 5);
    CHECK(rows[1].score.node_count == 3);
  }

  SUBCASE("fine-tuning changes the encoder") {
    std::ostringstream log;
    const auto summary = cmd_train_sst(c, log);
    const auto before = load_checkpoint<float>(ckpt);
    const auto after = load_checkpoint<float>(summary.model_path);
    CHECK(before.params.mlp_enc.layer1.weight != after.params.mlp_enc.layer1.weight);
    CHECK(before.params.mlp_dec.layer1.weight == after.params.mlp_dec.layer1.weight);
  }

  SUBCASE("an empty tree file is an error") {
    fixture::write_file(ws.dir / "none.txt", "\n");
    c.set("train", (ws.dir / "none.txt").string());
    std::ostringstream log;
    CHECK_THROWS_AS(cmd_train_sst(c, log), FormatError);
  }
}
