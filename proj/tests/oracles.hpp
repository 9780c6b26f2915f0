#pragma once

// Independent reference implementations used to cross-check the library.
// Everything here is written with plain loops over std::vector and shares
// no code paths with the routines under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rae/model.hpp"
#include "rae/sst.hpp"

namespace oracle {

using Vec = std::vector<double>;

// Bucket boundaries written out as a table of widths: 1, 1, 2, 3, then 3s.
inline std::vector<std::uint32_t> enumerate_buckets(std::uint32_t last_step) {
  std::vector<std::uint32_t> bucket_of(last_step + 1, 0);
  std::uint32_t step = 1;
  std::uint32_t bucket = 0;
  const std::uint32_t leading_widths[] = {1, 1, 2, 3};
  for (std::uint32_t width : leading_widths) {
    for (std::uint32_t j = 0; j < width && step <= last_step; ++j) bucket_of[step++] = bucket;
    ++bucket;
  }
  while (step <= last_step) {
    for (std::uint32_t j = 0; j < 3 && step <= last_step; ++j) bucket_of[step++] = bucket;
    ++bucket;
  }
  return bucket_of;
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline Vec affine(const rae::AffineLayer<double>& layer, const Vec& x) {
  const std::size_t out = static_cast<std::size_t>(layer.weight.rows());
  const std::size_t in = static_cast<std::size_t>(layer.weight.cols());
  Vec y(out);
  for (std::size_t r = 0; r < out; ++r) {
    double s = layer.bias(static_cast<rae::Index>(r));
    for (std::size_t c = 0; c < in; ++c) {
      s += layer.weight(static_cast<rae::Index>(r), static_cast<rae::Index>(c)) * x[c];
    }
    y[r] = s;
  }
  return y;
}

inline Vec layer_norm(const rae::LayerNormParams<double>& p, const Vec& x) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto j = static_cast<rae::Index>(i);
    y[i] = p.gain(j) * (x[i] - mean) / std::sqrt(var + p.epsilon) + p.shift(j);
  }
  return y;
}

inline Vec relu(Vec x) {
  for (double& v : x) v = std::max(v, 0.0);
  return x;
}

inline Vec mlp(const rae::MlpParams<double>& p, const Vec& x) {
  Vec h = affine(p.layer1, x);
  if (p.norm1) h = layer_norm(*p.norm1, h);
  h = relu(h);
  Vec y = affine(p.layer2, h);
  if (p.norm2) y = layer_norm(*p.norm2, y);
  if (p.relu_after_layer2) y = relu(y);
  return y;
}

inline Vec step_input(const Vec& head, std::uint32_t step, std::uint32_t n_buckets) {
  const auto bucket_of = enumerate_buckets(step);
  Vec x = head;
  x.push_back(static_cast<double>(step));
  for (std::uint32_t b = 0; b < n_buckets; ++b) x.push_back(b == bucket_of[step] ? 1.0 : 0.0);
  return x;
}

inline Vec concat(const Vec& a, const Vec& b) {
  Vec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// tokens[i] is the i-th token vector; returns pyramid[k][i].
inline std::vector<std::vector<Vec>> pyramid(const std::vector<Vec>& tokens,
                                             const rae::RaeParams<double>& p,
                                             const rae::RaeConfig& cfg) {
  std::vector<std::vector<Vec>> levels(1);
  for (const Vec& t : tokens) levels[0].push_back(mlp(p.mlp_in, t));
  for (std::size_t k = 1; k < tokens.size(); ++k) {
    std::vector<Vec> next;
    const auto& prev = levels.back();
    for (std::size_t i = 0; i + 1 < prev.size(); ++i) {
      next.push_back(mlp(p.mlp_enc, step_input(concat(prev[i], prev[i + 1]),
                                               static_cast<std::uint32_t>(k), cfg.n_buckets)));
    }
    levels.push_back(std::move(next));
  }
  return levels;
}

inline std::vector<Vec> decode(const Vec& root, std::uint32_t n, const rae::RaeParams<double>& p,
                               const rae::RaeConfig& cfg) {
  const std::size_t d = root.size();
  std::vector<Vec> level{root};
  for (std::uint32_t step = n - 1; step >= 1; --step) {
    std::vector<Vec> left, right;
    for (const Vec& v : level) {
      const Vec y = mlp(p.mlp_dec, step_input(v, step, cfg.n_buckets));
      left.emplace_back(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(d));
      right.emplace_back(y.begin() + static_cast<std::ptrdiff_t>(d), y.end());
    }
    const std::size_t m = level.size();
    std::vector<Vec> next(m + 1, Vec(d, 0.0));
    for (std::size_t i = 0; i <= m; ++i) {
      int votes = 0;
      if (i < m) {
        for (std::size_t j = 0; j < d; ++j) next[i][j] += left[i][j];
        ++votes;
      }
      if (i >= 1) {
        for (std::size_t j = 0; j < d; ++j) next[i][j] += right[i - 1][j];
        ++votes;
      }
      for (double& v : next[i]) v /= votes;
    }
    level = std::move(next);
  }
  std::vector<Vec> out;
  for (const Vec& v : level) out.push_back(mlp(p.mlp_out, v));
  return out;
}

// Ascending (squared distance, index) by full sort.
inline std::vector<std::size_t> nearest_by_sort(const float* query, const float* rows,
                                                std::size_t n_rows, std::size_t dim,
                                                std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  all.reserve(n_rows);
  for (std::size_t r = 0; r < n_rows; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = static_cast<double>(query[j]) - static_cast<double>(rows[r * dim + j]);
      s += diff * diff;
    }
    all.emplace_back(s, r);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < k && i < all.size(); ++i) ids.push_back(all[i].second);
  return ids;
}

// Random binary tree over `leaves` tokens drawn from `words`.
inline rae::SentimentTree random_tree(std::size_t leaves, std::mt19937_64& rng,
                                      const std::vector<std::string>& words) {
  std::uniform_int_distribution<int> label(0, 4);
  rae::SentimentTree t;
  t.label = label(rng);
  if (leaves == 1) {
    t.token = words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng)];
    return t;
  }
  const std::size_t left = std::uniform_int_distribution<std::size_t>(1, leaves - 1)(rng);
  t.children.push_back(random_tree(left, rng, words));
  t.children.push_back(random_tree(leaves - left, rng, words));
  return t;
}

inline std::string print_tree(const rae::SentimentTree& t) {
  if (t.children.empty()) return "(" + std::to_string(t.label) + " " + t.token + ")";
  return "(" + std::to_string(t.label) + " " + print_tree(t.children[0]) + " " +
         print_tree(t.children[1]) + ")";
}

inline double central_difference(const std::function<double()>& loss, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double plus = loss();
  x = saved - h;
  const double minus = loss();
  x = saved;
  return (plus - minus) / (2 * h);
}

}  // namespace oracle
