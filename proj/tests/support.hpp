#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rae/nn.hpp"

namespace fixture {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("rae-test-" + tag + "-" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string word(std::size_t i) {
  std::ostringstream os;
  os << 'w' << i;
  return os.str();
}

// Gaussian table with tokens w0..w{size-1}.
inline std::string embedding_text(std::size_t size, std::size_t dim, double stddev,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  std::ostringstream os;
  os.precision(6);
  for (std::size_t i = 0; i < size; ++i) {
    os << word(i);
    for (std::size_t j = 0; j < dim; ++j) os << ' ' << dist(rng);
    os << '\n';
  }
  return os.str();
}

// Sentences with uniform length in [min_len, max_len] and Zipf-like token
// frequencies over the first `vocab` words.
inline std::string corpus_text(std::size_t sentences, std::size_t min_len, std::size_t max_len,
                               std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> weights(vocab);
  for (std::size_t r = 0; r < vocab; ++r) weights[r] = 1.0 / static_cast<double>(r + 1);
  std::discrete_distribution<std::size_t> token(weights.begin(), weights.end());
  std::uniform_int_distribution<std::size_t> length(min_len, max_len);
  std::ostringstream os;
  for (std::size_t s = 0; s < sentences; ++s) {
    const std::size_t n = length(rng);
    for (std::size_t i = 0; i < n; ++i) os << (i ? " " : "") << word(token(rng));
    os << '\n';
  }
  return os.str();
}

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << text;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream is(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  return lines;
}

inline rae::Columns<double> random_columns(rae::Index rows, rae::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  rae::Columns<double> x(rows, cols);
  for (rae::Index i = 0; i < x.size(); ++i) x.data()[i] = dist(rng);
  return x;
}

}  // namespace fixture
