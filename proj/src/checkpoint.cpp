#include "rae/checkpoint.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rae/error.hpp"

namespace rae {

namespace {

constexpr std::array<char, 4> kModelMagic{'R', 'A', 'E', '1'};
constexpr std::array<char, 4> kHeadMagic{'S', 'S', 'T', '1'};

void write_magic(std::ostream& os, const std::array<char, 4>& magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

void expect_magic(std::istream& is, const std::array<char, 4>& magic, std::string_view what) {
  std::array<char, 4> got{};
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw FormatError(std::string(what) + ": bad magic, expected \"" +
                      std::string(magic.data(), magic.size()) + "\"");
  }
}

template <typename Tensor>
void write_tensor(std::ostream& os, const Tensor& t) {
  for (Index i = 0; i < t.size(); ++i) write_f32(os, static_cast<float>(t.data()[i]));
}

template <typename Tensor>
void read_tensor(std::istream& is, Tensor& t, std::string_view name) {
  for (Index i = 0; i < t.size(); ++i) {
    float v = 0;
    if (!read_f32(is, v)) throw FormatError("checkpoint truncated inside " + std::string(name));
    if (!std::isfinite(v)) throw FormatError("non-finite value in " + std::string(name));
    t.data()[i] = static_cast<typename Tensor::Scalar>(v);
  }
}

std::uint64_t remaining_bytes(std::istream& is) {
  const auto here = is.tellg();
  if (here < 0) return 0;
  is.seekg(0, std::ios::end);
  const auto end = is.tellg();
  is.seekg(here);
  return static_cast<std::uint64_t>(end - here);
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t value) {
  const std::array<char, 4> bytes{static_cast<char>(value & 0xffu),
                                  static_cast<char>((value >> 8) & 0xffu),
                                  static_cast<char>((value >> 16) & 0xffu),
                                  static_cast<char>((value >> 24) & 0xffu)};
  os.write(bytes.data(), 4);
}

void write_f32(std::ostream& os, float value) { write_u32(os, std::bit_cast<std::uint32_t>(value)); }

bool read_u32(std::istream& is, std::uint32_t& value) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) return false;
  value = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
          (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

bool read_f32(std::istream& is, float& value) {
  std::uint32_t bits = 0;
  if (!read_u32(is, bits)) return false;
  value = std::bit_cast<float>(bits);
  return true;
}

std::uint64_t checkpoint_size(const RaeConfig& cfg) {
  const RaeParams<float> shape = make_rae_params<float>(cfg);
  std::uint64_t floats = 0;
  for (const auto& block : param_blocks(shape)) floats += block.values.size();
  return 4 + 4 * 4 + 4 * floats;
}

template <typename Real>
void write_checkpoint(std::ostream& os, const RaeConfig& cfg, const RaeParams<Real>& params) {
  check_architecture(params, cfg);
  write_magic(os, kModelMagic);
  write_u32(os, cfg.d_glove);
  write_u32(os, cfg.d_emb);
  write_u32(os, cfg.max_len);
  write_u32(os, cfg.n_buckets);
  for_each_mlp(params, [&](std::string_view, const MlpParams<Real>& mlp) {
    for_each_tensor(mlp, [&](std::string_view, const auto& t) { write_tensor(os, t); });
  });
  if (!os) throw IoError("failed writing checkpoint");
}

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const RaeConfig& cfg,
                     const RaeParams<Real>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, cfg, params);
}

template <typename Real>
LoadedModel<Real> read_checkpoint(std::istream& is) {
  expect_magic(is, kModelMagic, "checkpoint");
  std::array<std::uint32_t, 4> header{};
  for (auto& field : header) {
    if (!read_u32(is, field)) throw FormatError("checkpoint header truncated");
  }
  RaeConfig cfg{header[0], header[1], header[2], header[3]};
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  const std::uint64_t expected = checkpoint_size(cfg) - 20;
  const std::uint64_t available = remaining_bytes(is);
  if (available != expected) {
    std::ostringstream msg;
    msg << "checkpoint body holds " << available << " bytes, dimensions require " << expected;
    throw FormatError(msg.str());
  }

  LoadedModel<Real> model{cfg, make_rae_params<Real>(cfg)};
  for_each_mlp(model.params, [&](std::string_view mlp_name, MlpParams<Real>& mlp) {
    for_each_tensor(mlp, [&](std::string_view name, auto& t) {
      read_tensor(is, t, std::string(mlp_name) + "." + std::string(name));
    });
  });
  return model;
}

template <typename Real>
LoadedModel<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint<Real>(is);
}

template <typename Real>
void save_sentiment_head(const std::filesystem::path& path, const SentimentHead<Real>& head) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_magic(os, kHeadMagic);
  write_u32(os, static_cast<std::uint32_t>(head.affine.out_size()));
  write_u32(os, static_cast<std::uint32_t>(head.affine.in_size()));
  write_tensor(os, head.affine.weight);
  write_tensor(os, head.affine.bias);
  if (!os) throw IoError("failed writing " + path.string());
}

template <typename Real>
SentimentHead<Real> load_sentiment_head(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open sentiment head " + path.string());
  expect_magic(is, kHeadMagic, "sentiment head");
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  if (!read_u32(is, rows) || !read_u32(is, cols)) throw FormatError("sentiment head truncated");
  if (rows != kSentimentClasses || cols == 0) {
    throw FormatError("sentiment head must be 5 x d_emb, got " + std::to_string(rows) + " x " +
                      std::to_string(cols));
  }
  const std::uint64_t expected = 4ull * (rows * static_cast<std::uint64_t>(cols) + rows);
  if (remaining_bytes(is) != expected) throw FormatError("sentiment head size mismatch");
  SentimentHead<Real> head{AffineLayer<Real>(rows, cols)};
  read_tensor(is, head.affine.weight, "head.weight");
  read_tensor(is, head.affine.bias, "head.bias");
  return head;
}

#define RAE_INSTANTIATE_CHECKPOINT(Real)                                                     \
  template void write_checkpoint(std::ostream&, const RaeConfig&, const RaeParams<Real>&);  \
  template void save_checkpoint(const std::filesystem::path&, const RaeConfig&,             \
                                const RaeParams<Real>&);                                    \
  template LoadedModel<Real> read_checkpoint<Real>(std::istream&);                          \
  template LoadedModel<Real> load_checkpoint<Real>(const std::filesystem::path&);           \
  template void save_sentiment_head(const std::filesystem::path&, const SentimentHead<Real>&); \
  template SentimentHead<Real> load_sentiment_head<Real>(const std::filesystem::path&);

RAE_INSTANTIATE_CHECKPOINT(float)
RAE_INSTANTIATE_CHECKPOINT(double)

}  // namespace rae
