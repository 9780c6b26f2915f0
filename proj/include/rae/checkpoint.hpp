#pragma once

// Binary model checkpoints.
//
// Layout (all integers u32 little-endian, all reals IEEE-754 f32
// little-endian, matrices row-major):
//
//   "RAE1"
//   d_glove, d_emb, max_len, n_buckets
//   for mlp in (mlp_in, mlp_enc, mlp_dec, mlp_out):
//     layer1.weight, layer1.bias, [norm1.gain, norm1.shift],
//     layer2.weight, layer2.bias, [norm2.gain, norm2.shift]
//
// LayerNorm tensors are present for mlp_enc and mlp_dec only. Tensor shapes
// follow from the header, so the file carries no per-tensor metadata.
//
// Sentiment heads are stored separately:
//
//   "SST1", rows (=5), cols (=d_emb), weight, bias

#include <filesystem>
#include <iosfwd>
#include <utility>

#include "rae/model.hpp"
#include "rae/sst.hpp"

namespace rae {

template <typename Real>
void write_checkpoint(std::ostream& os, const RaeConfig& cfg, const RaeParams<Real>& params);

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const RaeConfig& cfg,
                     const RaeParams<Real>& params);

template <typename Real>
struct LoadedModel {
  RaeConfig cfg;
  RaeParams<Real> params;
};

template <typename Real>
LoadedModel<Real> read_checkpoint(std::istream& is);

template <typename Real>
LoadedModel<Real> load_checkpoint(const std::filesystem::path& path);

std::uint64_t checkpoint_size(const RaeConfig& cfg);

template <typename Real>
void save_sentiment_head(const std::filesystem::path& path, const SentimentHead<Real>& head);

template <typename Real>
SentimentHead<Real> load_sentiment_head(const std::filesystem::path& path);

// Little-endian helpers shared with the code-file format.
void write_u32(std::ostream& os, std::uint32_t value);
void write_f32(std::ostream& os, float value);
bool read_u32(std::istream& is, std::uint32_t& value);
bool read_f32(std::istream& is, float& value);

}  // namespace rae
