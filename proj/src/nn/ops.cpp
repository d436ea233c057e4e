#include "wagparse/nn/ops.hpp"

#include <cmath>
#include <limits>

#include "wagparse/errors.hpp"

namespace wagparse::nn {

namespace {

void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCategory::kStructural,
          std::string(op) + ": shape mismatch");
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate_expr(-self.grad);
  });
}

Var scale(const Var& x, double s) {
  return make_result(x.value() * s, {x.node()}, [s](Node& self) { self.inputs[0]->accumulate_expr(self.grad * s); });
}

Var add_row(const Var& x, const Var& b) {
  require(b.rows() == 1 && b.cols() == x.cols(), ErrorCategory::kStructural, "add_row: bias shape mismatch");
  Matrix out = x.value();
  out.rowwise() += b.value().row(0);
  return make_result(std::move(out), {x.node(), b.node()}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate_expr(self.grad.colwise().sum());
  });
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), ErrorCategory::kStructural, "matmul: inner dimension mismatch");
  return make_result(a.value() * b.value(), {a.node(), b.node()}, [](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    if (A->requires_grad) A->accumulate_expr(self.grad * B->value.transpose());
    if (B->requires_grad) B->accumulate_expr(A->value.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), ErrorCategory::kStructural, "matmul_nt: inner dimension mismatch");
  return make_result(a.value() * b.value().transpose(), {a.node(), b.node()}, [](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    if (A->requires_grad) A->accumulate_expr(self.grad * B->value);
    if (B->requires_grad) B->accumulate_expr(self.grad.transpose() * A->value);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }
Var linear(const Var& x, const Var& w) { return matmul(x, w); }

Var gelu(const Var& x) {
  Matrix out = x.value().unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  return make_result(std::move(out), {x.node()}, [](Node& self) {
    const auto& X = self.inputs[0]->value;
    Matrix d = X.unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    });
    self.inputs[0]->accumulate_expr(self.grad.cwiseProduct(d));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const auto cols = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == cols && beta.rows() == 1 && beta.cols() == cols,
          ErrorCategory::kStructural, "layer_norm: affine shape mismatch");
  const Matrix& X = x.value();
  Matrix xhat(X.rows(), cols);
  Eigen::VectorXd rstd(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mean = X.row(r).mean();
    const auto centred = X.row(r).array() - mean;
    const double var = centred.square().mean();
    rstd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = centred * rstd(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {x.node(), gamma.node(), beta.node()},
                     [xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                       const auto& G = self.inputs[1]->value;
                       if (self.inputs[0]->requires_grad) {
                         Matrix dxhat = self.grad;
                         dxhat.array().rowwise() *= G.row(0).array();
                         const double n = static_cast<double>(dxhat.cols());
                         Matrix dx(dxhat.rows(), dxhat.cols());
                         for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                           const double m1 = dxhat.row(r).sum() / n;
                           const double m2 = dxhat.row(r).dot(xhat.row(r)) / n;
                           dx.row(r) = rstd(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                         }
                         self.inputs[0]->accumulate(dx);
                       }
                       if (self.inputs[1]->requires_grad) {
                         self.inputs[1]->accumulate_expr(self.grad.cwiseProduct(xhat).colwise().sum());
                       }
                       if (self.inputs[2]->requires_grad) self.inputs[2]->accumulate_expr(self.grad.colwise().sum());
                     });
}

Var softmax(const Var& x) {
  Matrix y = x.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  Matrix saved = y;
  return make_result(std::move(y), {x.node()}, [y = std::move(saved)](Node& self) {
    Matrix dx = self.grad.cwiseProduct(y);
    const Eigen::VectorXd dots = dx.rowwise().sum();
    dx -= (y.array().colwise() * dots.array()).matrix();
    self.inputs[0]->accumulate(dx);
  });
}

Var log_softmax(const Var& x) {
  Matrix y = x.value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    const double lse = m + std::log((y.row(r).array() - m).exp().sum());
    y.row(r).array() -= lse;
  }
  return make_result(y, {x.node()}, [](Node& self) {
    const Matrix p = self.value.array().exp().matrix();
    const Eigen::VectorXd totals = self.grad.rowwise().sum();
    Matrix dx = self.grad - (p.array().colwise() * totals.array()).matrix();
    self.inputs[0]->accumulate(dx);
  });
}

Var dropout(const Var& x, double rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, ErrorCategory::kConfig, "dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.bernoulli(rate) ? 0.0 : keep_scale;
  Matrix out = x.value().cwiseProduct(mask);
  return make_result(std::move(out), {x.node()},
                     [mask = std::move(mask)](Node& self) { self.inputs[0]->accumulate_expr(self.grad.cwiseProduct(mask)); });
}

Var gather_rows(const Var& x, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < x.rows(), ErrorCategory::kStructural,
            "gather_rows: row index " + std::to_string(rows[i]) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = x.value().row(rows[i]);
  }
  return make_result(std::move(out), {x.node()}, [rows](Node& self) {
    auto& in = *self.inputs[0];
    if (in.grad.size() == 0) in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) in.grad.row(rows[i]) += self.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var embedding(const std::vector<int>& ids, const Var& table) { return gather_rows(table, ids); }

Var overwrite_rows(const Var& base, const std::vector<int>& rows, const Var& src) {
  require(static_cast<Eigen::Index>(rows.size()) == src.rows() && src.cols() == base.cols(),
          ErrorCategory::kStructural, "overwrite_rows: shape mismatch");
  Matrix out = base.value();
  std::vector<bool> taken(static_cast<std::size_t>(base.rows()), false);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < base.rows() && !taken[static_cast<std::size_t>(rows[i])],
            ErrorCategory::kStructural, "overwrite_rows: invalid or repeated row");
    taken[static_cast<std::size_t>(rows[i])] = true;
    out.row(rows[i]) = src.value().row(static_cast<Eigen::Index>(i));
  }
  return make_result(std::move(out), {base.node(), src.node()}, [rows](Node& self) {
    if (self.inputs[0]->requires_grad) {
      Matrix d = self.grad;
      for (int r : rows) d.row(r).setZero();
      self.inputs[0]->accumulate(d);
    }
    if (self.inputs[1]->requires_grad) {
      Matrix d(static_cast<Eigen::Index>(rows.size()), self.grad.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) d.row(static_cast<Eigen::Index>(i)) = self.grad.row(rows[i]);
      self.inputs[1]->accumulate(d);
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCategory::kStructural, "concat_rows: no inputs");
  Eigen::Index total = 0;
  const auto cols = parts.front().cols();
  std::vector<NodePtr> inputs;
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    require(p.cols() == cols, ErrorCategory::kStructural, "concat_rows: column mismatch");
    offsets.push_back(total);
    total += p.rows();
    inputs.push_back(p.node());
  }
  Matrix out(total, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].rows() > 0) out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
  }
  return make_result(std::move(out), std::move(inputs), [offsets](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      auto& in = *self.inputs[i];
      if (in.requires_grad && in.value.rows() > 0) in.accumulate_expr(self.grad.middleRows(offsets[i], in.value.rows()));
    }
  });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.rows(), ErrorCategory::kStructural, "slice_rows: out of range");
  return make_result(x.value().middleRows(start, count), {x.node()}, [start, count](Node& self) {
    auto& in = *self.inputs[0];
    if (in.grad.size() == 0) in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
    in.grad.middleRows(start, count) += self.grad;
  });
}

Var sparse_matmul(const SparseMatrix& s, const Var& x) {
  require(s.cols() == x.rows(), ErrorCategory::kStructural, "sparse_matmul: dimension mismatch");
  Matrix out = s * x.value();
  return make_result(std::move(out), {x.node()},
                     [s](Node& self) { self.inputs[0]->accumulate_expr(s.transpose() * self.grad); });
}

Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return make_result(std::move(out), {x.node()}, [](Node& self) {
    const auto& in = self.inputs[0]->value;
    self.inputs[0]->accumulate_expr(Matrix::Constant(in.rows(), in.cols(), self.grad(0, 0)));
  });
}

Var attention(const Var& q, const Var& k, const Var& v, const std::vector<AttentionSegment>& segments,
              const AttentionMask& mask, int heads) {
  const auto width = q.cols();
  require(heads > 0 && width % heads == 0, ErrorCategory::kStructural, "attention: width not divisible by heads");
  require(k.cols() == width && v.cols() == width && k.rows() == v.rows(), ErrorCategory::kStructural,
          "attention: q/k/v shape mismatch");
  require(mask.key_valid.empty() || static_cast<Eigen::Index>(mask.key_valid.size()) == k.rows(),
          ErrorCategory::kStructural, "attention: key mask size mismatch");
  const Eigen::Index dh = width / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix out = Matrix::Zero(q.rows(), width);
  std::vector<Matrix> probs;
  probs.reserve(segments.size() * static_cast<std::size_t>(heads));
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  for (const auto& seg : segments) {
    require(seg.q_begin >= 0 && seg.q_begin + seg.q_len <= q.rows() && seg.k_begin >= 0 &&
                seg.k_begin + seg.k_len <= k.rows(),
            ErrorCategory::kStructural, "attention: segment out of range");
    const Eigen::Index offset = seg.k_len - seg.q_len;
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = h * dh;
      Matrix scores = Q.block(seg.q_begin, c0, seg.q_len, dh) * K.block(seg.k_begin, c0, seg.k_len, dh).transpose();
      scores *= inv_scale;
      for (Eigen::Index i = 0; i < seg.q_len; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < seg.k_len; ++j) {
          const bool visible = (!mask.causal || j <= i + offset) &&
                               (mask.key_valid.empty() || mask.key_valid[static_cast<std::size_t>(seg.k_begin + j)]);
          if (!visible) {
            scores(i, j) = -std::numeric_limits<double>::infinity();
          } else {
            m = std::max(m, scores(i, j));
          }
        }
        if (m == -std::numeric_limits<double>::infinity()) {
          scores.row(i).setZero();
          continue;
        }
        double total = 0.0;
        for (Eigen::Index j = 0; j < seg.k_len; ++j) {
          const double e = scores(i, j) == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(scores(i, j) - m);
          scores(i, j) = e;
          total += e;
        }
        scores.row(i) /= total;
      }
      out.block(seg.q_begin, c0, seg.q_len, dh) = scores * V.block(seg.k_begin, c0, seg.k_len, dh);
      probs.push_back(std::move(scores));
    }
  }

  return make_result(std::move(out), {q.node(), k.node(), v.node()},
                     [segments, heads, dh, inv_scale, probs = std::move(probs)](Node& self) {
                       const Matrix& Qv = self.inputs[0]->value;
                       const Matrix& Kv = self.inputs[1]->value;
                       const Matrix& Vv = self.inputs[2]->value;
                       Matrix dq = Matrix::Zero(Qv.rows(), Qv.cols());
                       Matrix dk = Matrix::Zero(Kv.rows(), Kv.cols());
                       Matrix dv = Matrix::Zero(Vv.rows(), Vv.cols());
                       std::size_t p = 0;
                       for (const auto& seg : segments) {
                         for (int h = 0; h < heads; ++h, ++p) {
                           const Eigen::Index c0 = h * dh;
                           const Matrix& P = probs[p];
                           const auto dout = self.grad.block(seg.q_begin, c0, seg.q_len, dh);
                           dv.block(seg.k_begin, c0, seg.k_len, dh) += P.transpose() * dout;
                           Matrix dp = dout * Vv.block(seg.k_begin, c0, seg.k_len, dh).transpose();
                           const Eigen::VectorXd rowdot = dp.cwiseProduct(P).rowwise().sum();
                           Matrix ds = P.cwiseProduct((dp.colwise() - rowdot));
                           ds *= inv_scale;
                           dq.block(seg.q_begin, c0, seg.q_len, dh) += ds * Kv.block(seg.k_begin, c0, seg.k_len, dh);
                           dk.block(seg.k_begin, c0, seg.k_len, dh) += ds.transpose() * Qv.block(seg.q_begin, c0, seg.q_len, dh);
                         }
                       }
                       if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(dq);
                       if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(dk);
                       if (self.inputs[2]->requires_grad) self.inputs[2]->accumulate(dv);
                     });
}

Var multi_head_attention(const Var& q, const Var& k, const Var& v, const AttentionMask& mask, int heads) {
  return attention(q, k, v, {{0, q.rows(), 0, k.rows()}}, mask, heads);
}

Var nll_pick(const Var& logp, const std::vector<int>& targets, const std::vector<double>& weights) {
  require(static_cast<Eigen::Index>(targets.size()) == logp.rows() && weights.size() == targets.size(),
          ErrorCategory::kStructural, "nll_pick: target count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (weights[i] == 0.0) continue;
    require(targets[i] >= 0 && targets[i] < logp.cols(), ErrorCategory::kStructural, "nll_pick: target out of range");
    total -= weights[i] * logp.value()(static_cast<Eigen::Index>(i), targets[i]);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return make_result(std::move(out), {logp.node()}, [targets, weights](Node& self) {
    auto& in = *self.inputs[0];
    Matrix d = Matrix::Zero(in.value.rows(), in.value.cols());
    const double g = self.grad(0, 0);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (weights[i] != 0.0) d(static_cast<Eigen::Index>(i), targets[i]) = -weights[i] * g;
    }
    in.accumulate(d);
  });
}

Var cross_entropy(const Var& logits, const std::vector<int>& targets, const std::vector<double>& weights) {
  return nll_pick(log_softmax(logits), targets, weights);
}

Var kl_rows(const Var& logp, const Var& logq, const std::vector<double>& weights) {
  same_shape(logp, logq, "kl_rows");
  require(static_cast<Eigen::Index>(weights.size()) == logp.rows(), ErrorCategory::kStructural,
          "kl_rows: weight count mismatch");
  const Matrix& LP = logp.value();
  const Matrix& LQ = logq.value();
  double total = 0.0;
  for (Eigen::Index i = 0; i < LP.rows(); ++i) {
    const double w = weights[static_cast<std::size_t>(i)];
    if (w == 0.0) continue;
    total += w * (LP.row(i).array().exp() * (LP.row(i).array() - LQ.row(i).array())).sum();
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return make_result(std::move(out), {logp.node(), logq.node()}, [weights](Node& self) {
    const Matrix& lp = self.inputs[0]->value;
    const Matrix& lq = self.inputs[1]->value;
    const double g = self.grad(0, 0);
    Matrix dp = Matrix::Zero(lp.rows(), lp.cols());
    Matrix dq = Matrix::Zero(lp.rows(), lp.cols());
    for (Eigen::Index i = 0; i < lp.rows(); ++i) {
      const double w = weights[static_cast<std::size_t>(i)] * g;
      if (w == 0.0) continue;
      const auto p = lp.row(i).array().exp();
      dp.row(i) = w * p * (lp.row(i).array() - lq.row(i).array() + 1.0);
      dq.row(i) = -w * p;
    }
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(dp);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(dq);
  });
}

}  // namespace wagparse::nn
