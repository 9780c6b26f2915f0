#include "rae/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>

#include "rae/error.hpp"

namespace rae {

std::size_t TokenizedCorpus::token_count() const {
  std::size_t total = 0;
  for (const auto& s : sentences) total += s.size();
  return total;
}

TokenIds tokenize_line(std::string_view line, const EmbeddingTable& table) {
  TokenIds ids;
  std::string token;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    token.clear();
    while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) {
      token += static_cast<char>(std::tolower(static_cast<unsigned char>(line[pos])));
      ++pos;
    }
    if (!token.empty()) ids.push_back(table.lookup(token));
  }
  return ids;
}

TokenizedCorpus read_corpus(std::istream& is, const EmbeddingTable& table, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("max_len must be at least 1");
  TokenizedCorpus corpus;
  std::string line;
  while (std::getline(is, line)) {
    TokenIds ids = tokenize_line(line, table);
    if (ids.empty()) continue;
    if (ids.size() > max_len) {
      ids.resize(max_len);
      ++corpus.truncated_lines;
    }
    corpus.unknown_tokens +=
        static_cast<std::size_t>(std::count(ids.begin(), ids.end(), table.unk_id()));
    ++corpus.length_histogram[ids.size()];
    corpus.sentences.push_back(std::move(ids));
  }
  return corpus;
}

TokenizedCorpus load_corpus(const std::filesystem::path& path, const EmbeddingTable& table,
                            std::size_t max_len) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open corpus " + path.string());
  return read_corpus(is, table, max_len);
}

std::vector<Batch> make_batches(const TokenizedCorpus& corpus, std::size_t batch_size,
                                std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (corpus.sentences.empty()) throw Error("cannot batch an empty corpus");

  std::map<std::size_t, std::vector<const TokenIds*>> groups;
  for (const auto& s : corpus.sentences) groups[s.size()].push_back(&s);

  std::mt19937_64 rng(seed);
  std::vector<Batch> batches;
  for (auto& [length, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t begin = 0; begin < members.size(); begin += batch_size) {
      Batch batch;
      batch.length = length;
      const std::size_t end = std::min(members.size(), begin + batch_size);
      for (std::size_t i = begin; i < end; ++i) batch.sequences.push_back(*members[i]);
      batches.push_back(std::move(batch));
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

template <typename Real>
Columns<Real> embed_tokens(const TokenIds& ids, const EmbeddingTable& table) {
  Columns<Real> out(static_cast<Index>(table.dim), static_cast<Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto v = table.vector_for(ids[i]);
    for (std::size_t j = 0; j < v.size(); ++j) {
      out(static_cast<Index>(j), static_cast<Index>(i)) = static_cast<Real>(v[j]);
    }
  }
  return out;
}

template Columns<float> embed_tokens<float>(const TokenIds&, const EmbeddingTable&);
template Columns<double> embed_tokens<double>(const TokenIds&, const EmbeddingTable&);

}  // namespace rae
