#include "rae/vocab.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <queue>

#include "rae/error.hpp"

namespace rae {

std::size_t Vocabulary::add(std::string token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const std::size_t id = tokens_.size();
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  return id;
}

std::optional<std::size_t> Vocabulary::find(std::string_view token) const {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  return std::nullopt;
}

std::span<const float> EmbeddingTable::row(std::size_t id) const {
  if (id >= size()) throw ShapeError("vocabulary id " + std::to_string(id) + " out of range");
  return {vectors.data() + id * dim, dim};
}

std::span<const float> EmbeddingTable::vector_for(std::size_t id) const {
  return id < size() ? row(id) : std::span<const float>(unk_vector);
}

std::size_t EmbeddingTable::lookup(std::string_view token) const {
  return vocab.find(token).value_or(unk_id());
}

namespace {

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    const std::size_t begin = pos;
    while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t') ++pos;
    if (pos > begin) fields.push_back(line.substr(begin, pos - begin));
  }
  return fields;
}

float parse_float(std::string_view field, std::string_view source, std::size_t line_no) {
  float value = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value)) {
    throw FormatError(std::string(source) + ":" + std::to_string(line_no) + ": bad number '" +
                      std::string(field) + "'");
  }
  return value;
}

}  // namespace

EmbeddingTable read_embedding_text(std::istream& is, std::string_view source) {
  EmbeddingTable table;
  std::vector<double> sum;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fields = split_spaces(line);
    if (fields.empty()) continue;
    const std::size_t width = fields.size() - 1;
    if (table.dim == 0) {
      if (width == 0) {
        throw FormatError(std::string(source) + ":" + std::to_string(line_no) +
                          ": token without vector");
      }
      table.dim = width;
      sum.assign(width, 0.0);
    } else if (width != table.dim) {
      throw FormatError(std::string(source) + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(table.dim) + " values, found " + std::to_string(width));
    }
    std::vector<float> values(width);
    for (std::size_t j = 0; j < width; ++j) values[j] = parse_float(fields[j + 1], source, line_no);
    if (table.vocab.find(fields[0])) {
      ++table.duplicates_skipped;
      continue;
    }
    table.vocab.add(std::string(fields[0]));
    table.vectors.insert(table.vectors.end(), values.begin(), values.end());
    for (std::size_t j = 0; j < width; ++j) sum[j] += values[j];
  }
  if (table.size() == 0) throw FormatError(std::string(source) + ": no embeddings");
  table.unk_vector.resize(table.dim);
  for (std::size_t j = 0; j < table.dim; ++j) {
    table.unk_vector[j] = static_cast<float>(sum[j] / static_cast<double>(table.size()));
  }
  return table;
}

EmbeddingTable load_embedding_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open embedding file " + path.string());
  return read_embedding_text(is, path.string());
}

std::vector<std::size_t> nearest_k(std::span<const float> query, const EmbeddingTable& table,
                                   std::size_t k) {
  if (query.size() != table.dim) {
    throw ShapeError("query width " + std::to_string(query.size()) + " vs table width " +
                     std::to_string(table.dim));
  }
  if (k < 1 || k > table.size()) {
    throw ShapeError("k=" + std::to_string(k) + " outside 1.." + std::to_string(table.size()));
  }
  const std::size_t dim = table.dim;
  std::vector<double> q(query.begin(), query.end());

  // Max-heap on (distance, index): top() is the current k-th best.
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry> heap;
  for (std::size_t id = 0; id < table.size(); ++id) {
    const float* row = table.vectors.data() + id * dim;
    const bool full = heap.size() == k;
    const double bound = full ? heap.top().first : 0.0;
    double dist = 0;
    bool abandoned = false;
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = q[j] - static_cast<double>(row[j]);
      dist += diff * diff;
      // Partial sums only grow; a strictly larger one can never enter.
      if (full && (j & 15u) == 15u && dist > bound) {
        abandoned = true;
        break;
      }
    }
    if (abandoned) continue;
    if (!full) {
      heap.emplace(dist, id);
    } else if (Entry{dist, id} < heap.top()) {
      heap.pop();
      heap.emplace(dist, id);
    }
  }
  std::vector<std::size_t> result(heap.size());
  for (std::size_t i = result.size(); i-- > 0;) {
    result[i] = heap.top().second;
    heap.pop();
  }
  return result;
}

double reconstruction_accuracy(const Eigen::MatrixXf& outputs,
                               std::span<const std::size_t> target_ids,
                               const EmbeddingTable& table, std::size_t k) {
  if (outputs.cols() == 0) throw ShapeError("empty sequence");
  if (static_cast<std::size_t>(outputs.cols()) != target_ids.size()) {
    throw ShapeError(std::to_string(outputs.cols()) + " outputs vs " +
                     std::to_string(target_ids.size()) + " targets");
  }
  if (static_cast<std::size_t>(outputs.rows()) != table.dim) {
    throw ShapeError("output width " + std::to_string(outputs.rows()) + " vs table width " +
                     std::to_string(table.dim));
  }
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < outputs.cols(); ++i) {
    const auto col = outputs.col(i);
    const auto ids = nearest_k({col.data(), static_cast<std::size_t>(col.size())}, table,
                               std::min(k, table.size()));
    if (std::find(ids.begin(), ids.end(), target_ids[static_cast<std::size_t>(i)]) != ids.end()) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(outputs.cols());
}

}  // namespace rae
