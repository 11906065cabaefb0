#pragma once

// Differentiable primitives. Channel-wise operations act along rows, token-wise
// operations along columns. Broadcasting is limited to the explicitly named
// forms: per-channel vectors (add_bias, rmsnorm/layernorm gains), per-token
// rows (scale_columns), scalar tensors (scale_by) and the positional tile.

#include "oqc/tensor.hpp"

#include <cmath>
#include <numbers>
#include <span>

namespace oqc {

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + a.shape_string() + " * " +
                         b.shape_string());
  }
  auto an = a.shared_node();
  auto bn = b.shared_node();
  Matrix<Scalar> out = a.value() * b.value();
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [an, bn](const Matrix<Scalar>& g) {
    if (an->requires_grad) an->accumulate(g * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * g);
  });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("add", a, b);
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return Tensor<Scalar>::from_op(a.value() + b.value(), {a, b},
                                 [an, bn](const Matrix<Scalar>& g) {
                                   an->accumulate(g);
                                   bn->accumulate(g);
                                 });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("sub", a, b);
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return Tensor<Scalar>::from_op(a.value() - b.value(), {a, b},
                                 [an, bn](const Matrix<Scalar>& g) {
                                   an->accumulate(g);
                                   bn->accumulate(-g);
                                 });
}

template <typename Scalar>
Tensor<Scalar> hadamard(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("hadamard", a, b);
  auto an = a.shared_node();
  auto bn = b.shared_node();
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [an, bn](const Matrix<Scalar>& g) {
    if (an->requires_grad) an->accumulate(g.cwiseProduct(bn->value));
    if (bn->requires_grad) bn->accumulate(g.cwiseProduct(an->value));
  });
}

template <typename Scalar>
Tensor<Scalar> divide(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape("divide", a, b);
  auto an = a.shared_node();
  auto bn = b.shared_node();
  Matrix<Scalar> out = a.value().cwiseQuotient(b.value());
  return Tensor<Scalar>::from_op(std::move(out), {a, b}, [an, bn](const Matrix<Scalar>& g) {
    if (an->requires_grad) an->accumulate(g.cwiseQuotient(bn->value));
    if (bn->requires_grad) {
      bn->accumulate(-(g.cwiseProduct(an->value)).cwiseQuotient(bn->value.cwiseAbs2()));
    }
  });
}

/// a * c for a fixed real c.
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar c) {
  auto an = a.shared_node();
  return Tensor<Scalar>::from_op(a.value() * c, {a},
                                 [an, c](const Matrix<Scalar>& g) { an->accumulate(g * c); });
}

/// a + c elementwise for a fixed real c.
template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar c) {
  auto an = a.shared_node();
  Matrix<Scalar> out = a.value().array() + c;
  return Tensor<Scalar>::from_op(std::move(out), {a},
                                 [an](const Matrix<Scalar>& g) { an->accumulate(g); });
}

/// s * a where s is a 1x1 tensor (learned mixing coefficients).
template <typename Scalar>
Tensor<Scalar> scale_by(const Tensor<Scalar>& a, const Tensor<Scalar>& s) {
  if (s.size() != 1) throw DimensionError("scale_by: scale must be 1x1, got " + s.shape_string());
  auto an = a.shared_node();
  auto sn = s.shared_node();
  Matrix<Scalar> out = a.value() * s.value()(0, 0);
  return Tensor<Scalar>::from_op(std::move(out), {a, s}, [an, sn](const Matrix<Scalar>& g) {
    if (an->requires_grad) an->accumulate(g * sn->value(0, 0));
    if (sn->requires_grad) {
      Matrix<Scalar> ds(1, 1);
      ds(0, 0) = g.cwiseProduct(an->value).sum();
      sn->accumulate(ds);
    }
  });
}

/// Adds a per-channel column vector to every token.
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
  if (bias.cols() != 1 || bias.rows() != x.rows()) {
    throw DimensionError("add_bias: bias " + bias.shape_string() + " does not fit " +
                         x.shape_string());
  }
  auto xn = x.shared_node();
  auto bn = bias.shared_node();
  Matrix<Scalar> out = x.value().colwise() + bias.value().col(0);
  return Tensor<Scalar>::from_op(std::move(out), {x, bias}, [xn, bn](const Matrix<Scalar>& g) {
    xn->accumulate(g);
    if (bn->requires_grad) bn->accumulate(g.rowwise().sum());
  });
}

/// Multiplies every column j of x by g(0, j).
template <typename Scalar>
Tensor<Scalar> scale_columns(const Tensor<Scalar>& x, const Tensor<Scalar>& gate) {
  if (gate.rows() != 1 || gate.cols() != x.cols()) {
    throw DimensionError("scale_columns: row " + gate.shape_string() + " does not fit " +
                         x.shape_string());
  }
  auto xn = x.shared_node();
  auto gn = gate.shared_node();
  Matrix<Scalar> out = x.value() * gate.value().row(0).asDiagonal();
  return Tensor<Scalar>::from_op(std::move(out), {x, gate}, [xn, gn](const Matrix<Scalar>& g) {
    if (xn->requires_grad) xn->accumulate(g * gn->value.row(0).asDiagonal());
    if (gn->requires_grad) gn->accumulate(g.cwiseProduct(xn->value).colwise().sum());
  });
}

/// Sum over rows: one entry per column.
template <typename Scalar>
Tensor<Scalar> column_sum(const Tensor<Scalar>& x) {
  auto xn = x.shared_node();
  const Index rows = x.rows();
  Matrix<Scalar> out = x.value().colwise().sum();
  return Tensor<Scalar>::from_op(std::move(out), {x}, [xn, rows](const Matrix<Scalar>& g) {
    xn->accumulate(g.replicate(rows, 1));
  });
}

/// Column-major reinterpretation with a new shape.
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Index rows, Index cols) {
  if (rows * cols != x.size()) {
    throw DimensionError("reshape: cannot view " + x.shape_string() + " as " +
                         detail::shape_string(rows, cols));
  }
  auto xn = x.shared_node();
  const Index r0 = x.rows();
  const Index c0 = x.cols();
  Matrix<Scalar> out = x.value().reshaped(rows, cols);
  return Tensor<Scalar>::from_op(std::move(out), {x}, [xn, r0, c0](const Matrix<Scalar>& g) {
    xn->accumulate(g.reshaped(r0, c0));
  });
}

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + x.shape_string());
  }
  auto xn = x.shared_node();
  Matrix<Scalar> out = x.value().middleRows(start, count);
  return Tensor<Scalar>::from_op(std::move(out), {x}, [xn, start, count](const Matrix<Scalar>& g) {
    Matrix<Scalar> full = Matrix<Scalar>::Zero(xn->value.rows(), xn->value.cols());
    full.middleRows(start, count) = g;
    xn->accumulate(full);
  });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  auto xn = x.shared_node();
  Matrix<Scalar> y = x.value().unaryExpr([](Scalar v) {
    if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  Matrix<Scalar> saved = y;
  return Tensor<Scalar>::from_op(std::move(y), {x}, [xn, saved](const Matrix<Scalar>& g) {
    xn->accumulate(g.cwiseProduct(saved.cwiseProduct((Scalar(1) - saved.array()).matrix())));
  });
}

/// Exact (erf-based) GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  auto xn = x.shared_node();
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  Matrix<Scalar> y = x.value().unaryExpr([inv_sqrt2](Scalar v) {
    return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2));
  });
  return Tensor<Scalar>::from_op(std::move(y), {x}, [xn, inv_sqrt2](const Matrix<Scalar>& g) {
    const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    Matrix<Scalar> d = xn->value.unaryExpr([&](Scalar v) {
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2));
      const Scalar pdf = inv_sqrt2pi * std::exp(Scalar(-0.5) * v * v);
      return cdf + v * pdf;
    });
    xn->accumulate(g.cwiseProduct(d));
  });
}

// ---------------------------------------------------------------------------
// Normalizations (per token, over the channel rows)

/// y = gain * x / sqrt(mean(x^2) + eps), independently for every column.
template <typename Scalar>
Tensor<Scalar> rmsnorm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, Scalar eps) {
  if (gain.cols() != 1 || gain.rows() != x.rows()) {
    throw DimensionError("rmsnorm: gain " + gain.shape_string() + " does not match channels of " +
                         x.shape_string());
  }
  if (eps < 0) throw std::invalid_argument("rmsnorm: eps must be non-negative");
  const Index c = x.rows();
  Matrix<Scalar> inv = ((x.value().cwiseAbs2().colwise().sum() / Scalar(c)).array() + eps)
                           .rsqrt()
                           .matrix();  // 1 x N
  // A zero column with eps == 0 has no defined scale; treat it as a fixed point.
  for (Index j = 0; j < inv.cols(); ++j) {
    if (!std::isfinite(inv(0, j))) inv(0, j) = 0;
  }
  Matrix<Scalar> xhat = x.value() * inv.row(0).asDiagonal();
  Matrix<Scalar> y = gain.value().col(0).asDiagonal() * xhat;
  auto xn = x.shared_node();
  auto gn = gain.shared_node();
  return Tensor<Scalar>::from_op(
      std::move(y), {x, gain}, [xn, gn, xhat, inv, c](const Matrix<Scalar>& g) {
        if (gn->requires_grad) gn->accumulate(g.cwiseProduct(xhat).rowwise().sum());
        if (xn->requires_grad) {
          Matrix<Scalar> gx = gn->value.col(0).asDiagonal() * g;  // d/d xhat
          Matrix<Scalar> dots = gx.cwiseProduct(xhat).colwise().sum() / Scalar(c);
          Matrix<Scalar> dx = (gx - xhat * dots.row(0).asDiagonal()) * inv.row(0).asDiagonal();
          xn->accumulate(dx);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> layernorm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                         const Tensor<Scalar>& bias, Scalar eps) {
  if (gain.cols() != 1 || gain.rows() != x.rows() || bias.cols() != 1 ||
      bias.rows() != x.rows()) {
    throw DimensionError("layernorm: affine parameters do not match channels of " +
                         x.shape_string());
  }
  const Index c = x.rows();
  Matrix<Scalar> mean = x.value().colwise().mean();
  Matrix<Scalar> centered = x.value() - Matrix<Scalar>::Ones(c, 1) * mean;
  Matrix<Scalar> inv =
      ((centered.cwiseAbs2().colwise().sum() / Scalar(c)).array() + eps).rsqrt().matrix();
  Matrix<Scalar> xhat = centered * inv.row(0).asDiagonal();
  Matrix<Scalar> y = (gain.value().col(0).asDiagonal() * xhat).colwise() + bias.value().col(0);
  auto xn = x.shared_node();
  auto gn = gain.shared_node();
  auto bn = bias.shared_node();
  return Tensor<Scalar>::from_op(
      std::move(y), {x, gain, bias}, [xn, gn, bn, xhat, inv, c](const Matrix<Scalar>& g) {
        if (gn->requires_grad) gn->accumulate(g.cwiseProduct(xhat).rowwise().sum());
        if (bn->requires_grad) bn->accumulate(g.rowwise().sum());
        if (xn->requires_grad) {
          Matrix<Scalar> gx = gn->value.col(0).asDiagonal() * g;
          Matrix<Scalar> mean_g = gx.colwise().mean();
          Matrix<Scalar> mean_gx = gx.cwiseProduct(xhat).colwise().mean();
          Matrix<Scalar> dx = (gx - Matrix<Scalar>::Ones(c, 1) * mean_g -
                               xhat * mean_gx.row(0).asDiagonal()) *
                              inv.row(0).asDiagonal();
          xn->accumulate(dx);
        }
      });
}

/// Softmax over the rows of each column.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  Matrix<Scalar> y = x.value();
  for (Index j = 0; j < y.cols(); ++j) {
    auto col = y.col(j);
    col = (col.array() - col.maxCoeff()).exp().matrix();
    col /= col.sum();
  }
  auto xn = x.shared_node();
  Matrix<Scalar> saved = y;
  return Tensor<Scalar>::from_op(std::move(y), {x}, [xn, saved](const Matrix<Scalar>& g) {
    Matrix<Scalar> dots = g.cwiseProduct(saved).colwise().sum();
    xn->accumulate(saved.cwiseProduct(g - Matrix<Scalar>::Ones(saved.rows(), 1) * dots));
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename Scalar>
Tensor<Scalar> reduce_sum(const Tensor<Scalar>& x) {
  auto xn = x.shared_node();
  Matrix<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return Tensor<Scalar>::from_op(std::move(out), {x}, [xn](const Matrix<Scalar>& g) {
    xn->accumulate(Matrix<Scalar>::Constant(xn->value.rows(), xn->value.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Tensor<Scalar> reduce_mean(const Tensor<Scalar>& x) {
  return scale(reduce_sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

/// Mean negative log-likelihood of integer labels under column logits.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  const Index classes = logits.rows();
  const Index n = logits.cols();
  if (static_cast<Index>(labels.size()) != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " logit columns");
  }
  for (int label : labels) {
    if (label < 0 || label >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
  }
  Matrix<Scalar> probs = logits.value();
  Scalar loss = 0;
  for (Index j = 0; j < n; ++j) {
    auto col = probs.col(j);
    const Scalar mx = col.maxCoeff();
    col = (col.array() - mx).exp().matrix();
    const Scalar total = col.sum();
    loss += std::log(total) + mx - logits.value()(labels[j], j);
    col /= total;
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = loss / Scalar(n);
  std::vector<int> saved_labels(labels.begin(), labels.end());
  auto ln = logits.shared_node();
  return Tensor<Scalar>::from_op(
      std::move(out), {logits}, [ln, probs, saved_labels, n](const Matrix<Scalar>& g) {
        Matrix<Scalar> d = probs;
        for (Index j = 0; j < n; ++j) d(saved_labels[j], j) -= Scalar(1);
        ln->accumulate(d * (g(0, 0) / Scalar(n)));
      });
}

// ---------------------------------------------------------------------------
// Token-grid helpers. Columns are grouped per sample: column b*T + t.

/// Mean over the T tokens of each sample: C x (B*T) -> C x B.
template <typename Scalar>
Tensor<Scalar> pool_tokens(const Tensor<Scalar>& x, Index batch) {
  if (batch <= 0 || x.cols() % batch != 0) {
    throw DimensionError("pool_tokens: " + std::to_string(x.cols()) +
                         " columns do not split into " + std::to_string(batch) + " samples");
  }
  const Index tokens = x.cols() / batch;
  const Index c = x.rows();
  Matrix<Scalar> out(c, batch);
  for (Index b = 0; b < batch; ++b) out.col(b) = x.value().middleCols(b * tokens, tokens).rowwise().mean();
  auto xn = x.shared_node();
  return Tensor<Scalar>::from_op(std::move(out), {x}, [xn, tokens, batch](const Matrix<Scalar>& g) {
    Matrix<Scalar> d(g.rows(), tokens * batch);
    for (Index b = 0; b < batch; ++b) {
      d.middleCols(b * tokens, tokens) = (g.col(b) / Scalar(tokens)).replicate(1, tokens);
    }
    xn->accumulate(d);
  });
}

/// Adds a C x T table to every sample's block of T token columns.
template <typename Scalar>
Tensor<Scalar> add_positional(const Tensor<Scalar>& x, const Tensor<Scalar>& table) {
  if (table.rows() != x.rows() || table.cols() == 0 || x.cols() % table.cols() != 0) {
    throw DimensionError("add_positional: table " + table.shape_string() + " does not tile " +
                         x.shape_string());
  }
  const Index tokens = table.cols();
  const Index batch = x.cols() / tokens;
  Matrix<Scalar> out = x.value() + table.value().replicate(1, batch);
  auto xn = x.shared_node();
  auto tn = table.shared_node();
  return Tensor<Scalar>::from_op(std::move(out), {x, table},
                                 [xn, tn, tokens, batch](const Matrix<Scalar>& g) {
                                   xn->accumulate(g);
                                   if (tn->requires_grad) {
                                     Matrix<Scalar> d = Matrix<Scalar>::Zero(g.rows(), tokens);
                                     for (Index b = 0; b < batch; ++b)
                                       d += g.middleCols(b * tokens, tokens);
                                     tn->accumulate(d);
                                   }
                                 });
}

/// Multi-head scaled dot-product self-attention over each sample's tokens.
///
/// `qkv` stacks queries, keys and values as rows [0,C), [C,2C), [2C,3C) for
/// every token column. Returns the C x (B*T) concatenation of head outputs.
template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& qkv, Index batch, Index heads) {
  if (qkv.rows() % 3 != 0) throw DimensionError("attention: qkv rows must be 3*C, got " + qkv.shape_string());
  const Index c = qkv.rows() / 3;
  if (heads <= 0 || c % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(c) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (batch <= 0 || qkv.cols() % batch != 0) {
    throw DimensionError("attention: columns do not split into samples");
  }
  const Index tokens = qkv.cols() / batch;
  const Index dh = c / heads;
  const Scalar inv_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const Matrix<Scalar>& in = qkv.value();

  Matrix<Scalar> out(c, qkv.cols());
  auto weights = std::make_shared<std::vector<Matrix<Scalar>>>();
  weights->reserve(static_cast<std::size_t>(batch * heads));
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      auto q = in.block(h * dh, b * tokens, dh, tokens);
      auto k = in.block(c + h * dh, b * tokens, dh, tokens);
      auto v = in.block(2 * c + h * dh, b * tokens, dh, tokens);
      Matrix<Scalar> a = (q.transpose() * k) * inv_scale;  // row i: query i over keys
      for (Index i = 0; i < tokens; ++i) {
        auto row = a.row(i);
        row = (row.array() - row.maxCoeff()).exp().matrix();
        row /= row.sum();
      }
      out.block(h * dh, b * tokens, dh, tokens).noalias() = v * a.transpose();
      weights->push_back(std::move(a));
    }
  }

  auto qn = qkv.shared_node();
  return Tensor<Scalar>::from_op(
      std::move(out), {qkv},
      [qn, weights, batch, heads, tokens, dh, c, inv_scale](const Matrix<Scalar>& g) {
        const Matrix<Scalar>& in = qn->value;
        Matrix<Scalar> d = Matrix<Scalar>::Zero(in.rows(), in.cols());
        for (Index b = 0; b < batch; ++b) {
          for (Index h = 0; h < heads; ++h) {
            const Matrix<Scalar>& a = (*weights)[static_cast<std::size_t>(b * heads + h)];
            auto q = in.block(h * dh, b * tokens, dh, tokens);
            auto k = in.block(c + h * dh, b * tokens, dh, tokens);
            auto v = in.block(2 * c + h * dh, b * tokens, dh, tokens);
            auto go = g.block(h * dh, b * tokens, dh, tokens);
            d.block(2 * c + h * dh, b * tokens, dh, tokens).noalias() = go * a;
            Matrix<Scalar> da = go.transpose() * v;
            Vector<Scalar> rowdot = da.cwiseProduct(a).rowwise().sum();
            Matrix<Scalar> ds = a.cwiseProduct(da - rowdot.replicate(1, tokens)) * inv_scale;
            d.block(h * dh, b * tokens, dh, tokens).noalias() = k * ds.transpose();
            d.block(c + h * dh, b * tokens, dh, tokens).noalias() = q * ds;
          }
        }
        qn->accumulate(d);
      });
}

}  // namespace oqc
