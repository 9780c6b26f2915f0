#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace rae {

class Vocabulary {
 public:
  // Returns the existing id when the token is already present.
  std::size_t add(std::string token);
  std::optional<std::size_t> find(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> index_;
};

struct EmbeddingTable {
  Vocabulary vocab;
  std::vector<float> vectors;  // |V| x dim, row-major
  std::vector<float> unk_vector;
  std::size_t dim = 0;
  std::size_t duplicates_skipped = 0;

  std::size_t size() const { return vocab.size(); }
  // Ids at or beyond size() denote the unknown token.
  std::size_t unk_id() const { return vocab.size(); }
  std::span<const float> row(std::size_t id) const;
  // Row for known ids, unk_vector otherwise.
  std::span<const float> vector_for(std::size_t id) const;
  std::size_t lookup(std::string_view token) const;
};

// GloVe text format: "token v1 v2 ... vd" per line.
EmbeddingTable read_embedding_text(std::istream& is, std::string_view source = "<stream>");
EmbeddingTable load_embedding_text(const std::filesystem::path& path);

// Exact top-k by squared Euclidean distance, ties to the lower index.
// Uses a bounded heap with early abandoning of partial distances.
std::vector<std::size_t> nearest_k(std::span<const float> query, const EmbeddingTable& table,
                                   std::size_t k);

// Fraction of columns of `outputs` (dim x m) whose target id is among the
// k nearest rows. Targets that are unknown ids always count as misses.
double reconstruction_accuracy(const Eigen::MatrixXf& outputs,
                               std::span<const std::size_t> target_ids,
                               const EmbeddingTable& table, std::size_t k);

}  // namespace rae
