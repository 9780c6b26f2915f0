#include "rae/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <ostream>

#include "rae/error.hpp"

namespace rae {

namespace {

struct KeyDefault {
  const char* key;
  const char* value;
};

constexpr KeyDefault kDefaults[] = {
    {"embeddings", ""},     // GloVe-format text table
    {"train", ""},          // training corpus or tree file
    {"dev", ""},            // dev corpus or tree file (defaults to train)
    {"eval", ""},           // file scored by eval-ae / eval-sst
    {"input", ""},          // encode: text in, decode: codes in
    {"output", ""},         // encode: codes out, decode: text out, eval: CSV out
    {"out_dir", "run"},
    {"checkpoint", ""},
    {"head", ""},
    {"d_emb", "300"},
    {"max_len", "64"},
    {"lr", "1e-4"},
    {"lr_schedule", "constant"},  // constant or cosine
    {"lr_min", "0"},              // final rate of the cosine schedule
    {"beta1", "0.9"},
    {"beta2", "0.999"},
    {"adam_eps", "1e-8"},
    {"clip", "5.0"},
    {"batch_size", "32"},
    {"epochs", "20"},
    {"seed", "1"},
    {"topk", "5"},
    {"lambda", "0"},
    {"precision", "f32"},
    {"freeze", "false"},
    {"skip_unk", "false"},
    {"stop_mse", "0"},        // stop training once dev MSE drops below this (0: never)
    {"keep_epochs", "true"},  // false keeps only the latest and best checkpoints
    {"split", "eval"},
};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& [key, value] : kDefaults) values_.emplace(key, value);
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  RunConfig cfg;
  cfg.parse(is, path.string());
  return cfg;
}

void RunConfig::parse(std::istream& is, std::string_view source) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    try {
      apply_override(body);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  }
  set(trim(assignment.substr(0, eq)), std::string(trim(assignment.substr(eq + 1))));
}

void RunConfig::set(std::string_view key, std::string value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second = std::move(value);
}

void RunConfig::apply_environment() {
  if (const char* seed = std::getenv("RAE_SEED"); seed && *seed) {
    set("seed", seed);
    count("seed");
  }
}

const std::string& RunConfig::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

std::string RunConfig::path(std::string_view key) const {
  const std::string& value = get(key);
  if (value.empty()) throw ConfigError("config key '" + std::string(key) + "' is required");
  return value;
}

double RunConfig::real(std::string_view key) const {
  const std::string& value = get(key);
  double out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + std::string(key) + "' is not a number: '" + value + "'");
  }
  return out;
}

std::uint64_t RunConfig::count(std::string_view key) const {
  const std::string& value = get(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + std::string(key) + "' is not a non-negative integer: '" +
                      value + "'");
  }
  return out;
}

bool RunConfig::flag(std::string_view key) const {
  const std::string& value = get(key);
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + std::string(key) + "' is not a boolean: '" + value + "'");
}

void RunConfig::write(std::ostream& os) const {
  for (const auto& [key, value] : values_) os << key << '=' << value << '\n';
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  write(os);
}

}  // namespace rae
