#pragma once

// Shared self-attention across a batch of N images.
//
// For query image i the keys/values of all images are concatenated
// (image 0 rows first) and the logits receive an additive bias
// log(S_i^+) + log(M_i^+): S_i^+ broadcasts row i of the similarity matrix
// over each image's P positions, M_i^+ concatenates the other images' region
// masks. The self segment of both is all ones, so every row keeps at least P
// finite logits. Columns whose bias is -inf are dropped before the softmax,
// which makes their weight exactly zero.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stepviz/error.hpp"
#include "stepviz/similarity.hpp"

namespace stepviz {

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = MatrixT<float>;

// Per-image projections of one attention layer (one head, or all heads side by side).
template <typename Scalar>
struct FeatureBlockT {
  std::vector<MatrixT<Scalar>> queries;  // each P×d_k
  std::vector<MatrixT<Scalar>> keys;     // each P×d_k
  std::vector<MatrixT<Scalar>> values;   // each P×d_v

  std::size_t images() const { return queries.size(); }
  std::size_t positions() const { return queries.empty() ? 0 : static_cast<std::size_t>(queries[0].rows()); }
  std::size_t key_dim() const { return queries.empty() ? 0 : static_cast<std::size_t>(queries[0].cols()); }
  std::size_t value_dim() const { return values.empty() ? 0 : static_cast<std::size_t>(values[0].cols()); }

  void check_shapes() const {
    const auto n = queries.size();
    if (n == 0) throw ShapeMismatch("feature block has no images");
    if (keys.size() != n || values.size() != n) throw ShapeMismatch("queries/keys/values image counts differ");
    const auto p = queries[0].rows();
    const auto dk = queries[0].cols();
    const auto dv = values[0].cols();
    if (p == 0 || dk == 0 || dv == 0) throw ShapeMismatch("empty feature dimensions");
    for (std::size_t k = 0; k < n; ++k) {
      if (queries[k].rows() != p || queries[k].cols() != dk || keys[k].rows() != p || keys[k].cols() != dk ||
          values[k].rows() != p || values[k].cols() != dv) {
        throw ShapeMismatch("image " + std::to_string(k) + " features differ in shape from image 0");
      }
    }
  }
};
using FeatureBlock = FeatureBlockT<float>;

// K^+ and V^+: rows of image 0, then image 1, ...
template <typename Scalar>
std::pair<MatrixT<Scalar>, MatrixT<Scalar>> concat_kv(const FeatureBlockT<Scalar>& blocks) {
  blocks.check_shapes();
  const auto n = static_cast<Eigen::Index>(blocks.images());
  const auto p = static_cast<Eigen::Index>(blocks.positions());
  MatrixT<Scalar> k(n * p, static_cast<Eigen::Index>(blocks.key_dim()));
  MatrixT<Scalar> v(n * p, static_cast<Eigen::Index>(blocks.value_dim()));
  for (Eigen::Index j = 0; j < n; ++j) {
    k.middleRows(j * p, p) = blocks.keys[static_cast<std::size_t>(j)];
    v.middleRows(j * p, p) = blocks.values[static_cast<std::size_t>(j)];
  }
  return {std::move(k), std::move(v)};
}

// Inverse of the row concatenation.
template <typename Scalar>
std::vector<MatrixT<Scalar>> split_rows(const MatrixT<Scalar>& stacked, std::size_t parts) {
  if (parts == 0 || stacked.rows() % static_cast<Eigen::Index>(parts) != 0) {
    throw ShapeMismatch("row count not divisible by part count");
  }
  const auto p = stacked.rows() / static_cast<Eigen::Index>(parts);
  std::vector<MatrixT<Scalar>> out;
  for (std::size_t j = 0; j < parts; ++j) out.emplace_back(stacked.middleRows(static_cast<Eigen::Index>(j) * p, p));
  return out;
}

struct InflatedSimilarity {
  std::size_t image = 0;
  std::size_t positions = 0;
  std::vector<double> values;  // N·P, segment j constant W(i, j), self segment 1
};

struct InflatedMask {
  std::size_t image = 0;
  std::size_t positions = 0;
  std::vector<std::uint8_t> values;  // N·P of {0,1}, self segment 1
};

inline InflatedSimilarity inflate_similarity(const SimilarityMatrix& w, std::size_t i, std::size_t positions) {
  const auto n = w.size();
  if (i >= n) throw IndexOutOfRange("image " + std::to_string(i) + " of " + std::to_string(n));
  InflatedSimilarity s{i, positions, std::vector<double>(n * positions)};
  for (std::size_t j = 0; j < n; ++j) {
    const double v = (j == i) ? 1.0 : w.at(i, j);
    std::fill_n(s.values.begin() + static_cast<std::ptrdiff_t>(j * positions), positions, v);
  }
  return s;
}

inline InflatedMask inflate_masks(std::span<const std::vector<std::uint8_t>> masks, std::size_t i) {
  const auto n = masks.size();
  if (i >= n) throw IndexOutOfRange("image " + std::to_string(i) + " of " + std::to_string(n));
  const auto p = masks[0].size();
  InflatedMask m{i, p, {}};
  m.values.reserve(n * p);
  for (std::size_t j = 0; j < n; ++j) {
    if (masks[j].size() != p) throw ShapeMismatch("mask " + std::to_string(j) + " length differs");
    if (j == i) {
      m.values.insert(m.values.end(), p, std::uint8_t{1});
    } else {
      for (auto b : masks[j]) m.values.push_back(b ? 1 : 0);
    }
  }
  return m;
}

inline InflatedMask all_open_mask(std::size_t images, std::size_t i, std::size_t positions) {
  if (i >= images) throw IndexOutOfRange("image " + std::to_string(i) + " of " + std::to_string(images));
  return {i, positions, std::vector<std::uint8_t>(images * positions, 1)};
}

// Additive logit bias log(S_i^+) + log(M_i^+) plus the list of columns it leaves finite.
struct SharedAttentionBias {
  std::size_t image = 0;
  std::size_t images = 0;
  std::size_t positions = 0;
  std::vector<double> logit_bias;        // N·P; -inf marks an excluded column
  std::vector<Eigen::Index> active;      // columns with finite bias, ascending
};

inline SharedAttentionBias build_bias(const InflatedSimilarity& s, const InflatedMask& m) {
  if (s.image != m.image || s.positions != m.positions || s.values.size() != m.values.size()) {
    throw ShapeMismatch("similarity and mask inflated for different images or shapes");
  }
  if (s.positions == 0 || s.values.size() % s.positions != 0) throw ShapeMismatch("bad inflated length");
  SharedAttentionBias b;
  b.image = s.image;
  b.positions = s.positions;
  b.images = s.values.size() / s.positions;
  b.logit_bias.resize(s.values.size());
  for (std::size_t c = 0; c < s.values.size(); ++c) {
    const double sv = s.values[c];
    if (!(sv >= 0.0 && sv <= 1.0)) throw PreconditionViolation("similarity value outside [0,1]");
    // log M is 0 on open columns.
    const double v = (m.values[c] == 0 || sv == 0.0) ? -std::numeric_limits<double>::infinity() : std::log(sv);
    b.logit_bias[c] = v;
    if (std::isfinite(v)) b.active.push_back(static_cast<Eigen::Index>(c));
  }
  const std::size_t self0 = b.image * b.positions;
  for (std::size_t c = self0; c < self0 + b.positions; ++c) {
    if (b.logit_bias[c] != 0.0) throw PreconditionViolation("self segment must carry zero bias");
  }
  return b;
}

inline SharedAttentionBias build_bias(const SimilarityMatrix& w, std::span<const std::vector<std::uint8_t>> masks,
                                      std::size_t i, std::size_t positions) {
  auto s = inflate_similarity(w, i, positions);
  auto m = masks.empty() ? all_open_mask(w.size(), i, positions) : inflate_masks(masks, i);
  if (m.positions != positions) throw ShapeMismatch("mask length differs from attention positions");
  return build_bias(s, m);
}

namespace detail {

template <typename Scalar>
struct AttentionResult {
  MatrixT<Scalar> weights;  // P × |active|
  MatrixT<Scalar> output;   // P × d_v
};

// softmax(Q K^T / sqrt(d_k) + bias) V over the given keys. bias may be empty (no bias term).
template <typename Scalar>
AttentionResult<Scalar> attend(const MatrixT<Scalar>& q, const MatrixT<Scalar>& k, const MatrixT<Scalar>& v,
                               const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>* bias) {
  const Scalar scale = std::sqrt(static_cast<Scalar>(q.cols()));
  MatrixT<Scalar> logits = (q * k.transpose()) / scale;
  if (bias) logits.rowwise() += *bias;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const Scalar mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
  MatrixT<Scalar> out = logits * v;
  return {std::move(logits), std::move(out)};
}

template <typename Scalar>
AttentionResult<Scalar> attend_shared(const FeatureBlockT<Scalar>& blocks, const SharedAttentionBias& bias,
                                      Eigen::Index col0, Eigen::Index cols) {
  blocks.check_shapes();
  if (bias.images != blocks.images() || bias.positions != blocks.positions()) {
    throw ShapeMismatch("bias built for " + std::to_string(bias.images) + "x" + std::to_string(bias.positions) +
                        ", features are " + std::to_string(blocks.images()) + "x" +
                        std::to_string(blocks.positions()));
  }
  const auto p = static_cast<Eigen::Index>(bias.positions);
  const auto na = static_cast<Eigen::Index>(bias.active.size());
  const auto dv = static_cast<Eigen::Index>(blocks.value_dim());
  MatrixT<Scalar> k(na, cols);
  MatrixT<Scalar> v(na, dv);
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> b(na);
  for (Eigen::Index a = 0; a < na; ++a) {
    const auto c = bias.active[static_cast<std::size_t>(a)];
    const auto img = static_cast<std::size_t>(c / p);
    k.row(a) = blocks.keys[img].row(c % p).segment(col0, cols);
    v.row(a) = blocks.values[img].row(c % p);
    b(a) = static_cast<Scalar>(bias.logit_bias[static_cast<std::size_t>(c)]);
  }
  const MatrixT<Scalar> q = blocks.queries[bias.image].middleCols(col0, cols);
  return attend<Scalar>(q, k, v, &b);
}

}  // namespace detail

// Standard single-image attention softmax(Q K^T / sqrt(d_k)) V.
template <typename Scalar>
MatrixT<Scalar> self_attention(const MatrixT<Scalar>& q, const MatrixT<Scalar>& k, const MatrixT<Scalar>& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || q.rows() == 0 || k.rows() == 0) {
    throw ShapeMismatch("self_attention operand shapes");
  }
  return detail::attend<Scalar>(q, k, v, nullptr).output;
}

// Unbiased attention of image i over the concatenated keys/values of every image.
template <typename Scalar>
MatrixT<Scalar> kv_shared_attention(const FeatureBlockT<Scalar>& blocks, std::size_t i) {
  if (i >= blocks.images()) throw IndexOutOfRange("image index");
  auto [k, v] = concat_kv(blocks);
  return detail::attend<Scalar>(blocks.queries[i], k, v, nullptr).output;
}

// H_i = softmax(Q_i K^{+T}/sqrt(d_k) + log S_i^+ + log M_i^+) V^+.
template <typename Scalar>
MatrixT<Scalar> shared_attention(const FeatureBlockT<Scalar>& blocks, const SharedAttentionBias& bias) {
  return detail::attend_shared(blocks, bias, 0, static_cast<Eigen::Index>(blocks.key_dim())).output;
}

template <typename Scalar>
MatrixT<Scalar> shared_attention(const FeatureBlockT<Scalar>& blocks, const InflatedSimilarity& s,
                                 const InflatedMask& m) {
  return shared_attention(blocks, build_bias(s, m));
}

// Full P × N·P attention map A_i^+; excluded columns hold exact zeros.
template <typename Scalar>
MatrixT<Scalar> shared_attention_weights(const FeatureBlockT<Scalar>& blocks, const SharedAttentionBias& bias) {
  auto r = detail::attend_shared(blocks, bias, 0, static_cast<Eigen::Index>(blocks.key_dim()));
  MatrixT<Scalar> full = MatrixT<Scalar>::Zero(r.weights.rows(), static_cast<Eigen::Index>(bias.logit_bias.size()));
  for (std::size_t a = 0; a < bias.active.size(); ++a) {
    full.col(bias.active[a]) = r.weights.col(static_cast<Eigen::Index>(a));
  }
  return full;
}

// Multi-head variant: key and value columns are split into `heads` equal slices, every head
// sees the same bias, and head outputs are concatenated in head order.
template <typename Scalar>
MatrixT<Scalar> shared_attention_multihead(const FeatureBlockT<Scalar>& blocks, const SharedAttentionBias& bias,
                                           std::size_t heads) {
  const auto dk = static_cast<Eigen::Index>(blocks.key_dim());
  const auto dv = static_cast<Eigen::Index>(blocks.value_dim());
  const auto h = static_cast<Eigen::Index>(heads);
  if (heads == 0 || dk % h != 0 || dv % h != 0) throw ShapeMismatch("feature dims not divisible by head count");
  if (heads == 1) return shared_attention(blocks, bias);
  const auto hk = dk / h;
  const auto hv = dv / h;
  FeatureBlockT<Scalar> head_block;
  MatrixT<Scalar> out(static_cast<Eigen::Index>(blocks.positions()), dv);
  for (Eigen::Index head = 0; head < h; ++head) {
    head_block.queries.clear();
    head_block.keys.clear();
    head_block.values.clear();
    for (std::size_t j = 0; j < blocks.images(); ++j) {
      head_block.queries.emplace_back(blocks.queries[j].middleCols(head * hk, hk));
      head_block.keys.emplace_back(blocks.keys[j].middleCols(head * hk, hk));
      head_block.values.emplace_back(blocks.values[j].middleCols(head * hv, hv));
    }
    out.middleCols(head * hv, hv) = shared_attention(head_block, bias);
  }
  return out;
}

// Single-image counterpart of shared_attention_multihead.
template <typename Scalar>
MatrixT<Scalar> self_attention_multihead(const MatrixT<Scalar>& q, const MatrixT<Scalar>& k,
                                         const MatrixT<Scalar>& v, std::size_t heads) {
  const auto h = static_cast<Eigen::Index>(heads);
  if (heads == 0 || q.cols() % h != 0 || v.cols() % h != 0) throw ShapeMismatch("feature dims not divisible by head count");
  if (heads == 1) return self_attention<Scalar>(q, k, v);
  const auto hk = q.cols() / h;
  const auto hv = v.cols() / h;
  MatrixT<Scalar> out(q.rows(), v.cols());
  for (Eigen::Index head = 0; head < h; ++head) {
    const MatrixT<Scalar> qh = q.middleCols(head * hk, hk);
    const MatrixT<Scalar> kh = k.middleCols(head * hk, hk);
    const MatrixT<Scalar> vh = v.middleCols(head * hv, hv);
    out.middleCols(head * hv, hv) = self_attention<Scalar>(qh, kh, vh);
  }
  return out;
}

}  // namespace stepviz
