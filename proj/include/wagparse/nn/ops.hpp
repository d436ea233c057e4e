#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Sparse>

#include "wagparse/nn/rng.hpp"
#include "wagparse/nn/tensor.hpp"

namespace wagparse::nn {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, double s);
/// x + b with b a 1 x cols row broadcast over rows.
Var add_row(const Var& x, const Var& b);
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
/// x * W + b with W of shape in x out.
Var linear(const Var& x, const Var& w, const Var& b);
Var linear(const Var& x, const Var& w);

/// Exact (erf) GELU.
Var gelu(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-10);
Var softmax(const Var& x);      // row-wise
Var log_softmax(const Var& x);  // row-wise
/// Inverted dropout. Identity when rate == 0 (no draws are made).
Var dropout(const Var& x, double rate, Rng& rng);

Var embedding(const std::vector<int>& ids, const Var& table);
Var gather_rows(const Var& x, const std::vector<int>& rows);
/// Copy of `base` with rows `rows[i]` replaced by row i of `src`.
Var overwrite_rows(const Var& base, const std::vector<int>& rows, const Var& src);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);
/// s * x with s a constant sparse matrix.
Var sparse_matmul(const SparseMatrix& s, const Var& x);

Var sum(const Var& x);

/// Query rows [q_begin, q_begin + q_len) attend to key rows
/// [k_begin, k_begin + k_len) of the same segment only.
struct AttentionSegment {
  Eigen::Index q_begin;
  Eigen::Index q_len;
  Eigen::Index k_begin;
  Eigen::Index k_len;
};

struct AttentionMask {
  /// Query i may see key j only when j <= i + (k_len - q_len).
  bool causal = false;
  /// Optional per-key flag (size = key rows); false keys get zero weight.
  std::vector<bool> key_valid;
};

/// Scaled dot-product attention over already projected q, k, v, split into
/// `heads` column blocks. Rows with no visible key produce zeros.
Var attention(const Var& q, const Var& k, const Var& v, const std::vector<AttentionSegment>& segments,
              const AttentionMask& mask, int heads);

/// Full multi-head attention on unprojected inputs with a single segment.
Var multi_head_attention(const Var& q, const Var& k, const Var& v, const AttentionMask& mask, int heads);

/// -sum_i w_i * logp(i, target_i). Rows with weight 0 are skipped.
Var nll_pick(const Var& logp, const std::vector<int>& targets, const std::vector<double>& weights);
/// Sum over rows of w_i * softmax cross-entropy; pad rows carry w_i = 0.
Var cross_entropy(const Var& logits, const std::vector<int>& targets, const std::vector<double>& weights);
/// sum_i w_i * sum_k p_ik (log p_ik - log q_ik), both given as log-probabilities.
Var kl_rows(const Var& logp, const Var& logq, const std::vector<double>& weights);

}  // namespace wagparse::nn
