#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string_view>
#include <vector>

#include "rae/nn.hpp"
#include "rae/vocab.hpp"

namespace rae {

using TokenIds = std::vector<std::size_t>;

struct TokenizedCorpus {
  std::vector<TokenIds> sentences;
  std::map<std::size_t, std::size_t> length_histogram;
  std::size_t truncated_lines = 0;
  std::size_t unknown_tokens = 0;

  std::size_t token_count() const;
};

struct Batch {
  std::vector<TokenIds> sequences;
  std::size_t length = 0;
};

// Lowercases each whitespace-separated token and maps it to a table id
// (table.unk_id() on a miss).
TokenIds tokenize_line(std::string_view line, const EmbeddingTable& table);

TokenizedCorpus read_corpus(std::istream& is, const EmbeddingTable& table, std::size_t max_len);
TokenizedCorpus load_corpus(const std::filesystem::path& path, const EmbeddingTable& table,
                            std::size_t max_len);

// Groups sentences by exact length, shuffles each group and the resulting
// batch order with one generator seeded by `seed`.
std::vector<Batch> make_batches(const TokenizedCorpus& corpus, std::size_t batch_size,
                                std::uint64_t seed);

// Token vectors as columns (table.dim x ids.size()).
template <typename Real>
Columns<Real> embed_tokens(const TokenIds& ids, const EmbeddingTable& table);

}  // namespace rae
