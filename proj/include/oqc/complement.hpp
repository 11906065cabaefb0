#pragma once

// Orthogonal quadratic complements: a low-rank quadratic feature of the block
// input, projected onto the orthogonal complement of the host's hidden map in
// rank-r space, then injected back into the block.

#include "oqc/hosts.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

namespace oqc {

enum class VariantKind {
  Full,
  LowRank,
  StaticGate,
  DynamicGate,
  AblationSharedProjection,
  AblationNoOrtho,
  AblationNoGate,
};

/// Reduction scope of the inner product in the projection step.
enum class InnerProductScope { PerToken, Global };

inline constexpr double kNormEps = 1e-6;

std::string_view to_string(VariantKind kind);
std::optional<VariantKind> parse_variant_kind(std::string_view name);
std::string_view to_string(InnerProductScope scope);
std::optional<InnerProductScope> parse_scope(std::string_view name);

inline bool is_ablation(VariantKind k) {
  return k == VariantKind::AblationSharedProjection || k == VariantKind::AblationNoOrtho ||
         k == VariantKind::AblationNoGate;
}

/// Host and complement selection for one feed-forward layer.
struct FfnVariant {
  HostKind host = HostKind::Mlp;
  Index groups = 4;                         // bilinear host only
  std::optional<VariantKind> complement;    // empty: host only
  Index rank = 56;
  bool per_channel_gate = false;            // dynamic gate arity
  InnerProductScope scope = InnerProductScope::PerToken;
};

// ---------------------------------------------------------------------------
// Building blocks

/// q = rmsnorm(Ux * Vx), per token.
template <typename Scalar>
Tensor<Scalar> quadratic_feature(const Tensor<Scalar>& x, const Tensor<Scalar>& u,
                                 const Tensor<Scalar>& v, const Tensor<Scalar>& gain_q,
                                 Scalar eps = Scalar(kNormEps)) {
  return rmsnorm(hadamard(matmul(u, x), matmul(v, x)), gain_q, eps);
}

/// m = rmsnorm(P b), per token.
template <typename Scalar>
Tensor<Scalar> project_main(const Tensor<Scalar>& b, const Tensor<Scalar>& p,
                            const Tensor<Scalar>& gain_m, Scalar eps = Scalar(kNormEps)) {
  if (p.cols() != b.rows()) {
    throw DimensionError("project_main: projection " + p.shape_string() +
                         " does not accept hidden map " + b.shape_string());
  }
  return rmsnorm(matmul(p, b), gain_m, eps);
}

/// q - (<q,m> / (|m|^2 + eps)) m with the inner product over each column.
template <typename Scalar>
Tensor<Scalar> projection_residual_columns(const Tensor<Scalar>& q, const Tensor<Scalar>& m,
                                           Scalar eps) {
  require_same_shape("orthogonalize", q, m);
  if (eps < 0) throw std::invalid_argument("orthogonalize: eps must be non-negative");
  auto dot = column_sum(hadamard(q, m));
  auto norm2 = add_scalar(column_sum(hadamard(m, m)), eps);
  auto coeff = divide(dot, norm2);
  return sub(q, scale_columns(m, coeff));
}

/// Pre-normalization residual of the projection step. With the global scope
/// the inner product runs over all channels and tokens of each sample.
template <typename Scalar>
Tensor<Scalar> projection_residual(const Tensor<Scalar>& q, const Tensor<Scalar>& m, Scalar eps,
                                   InnerProductScope scope = InnerProductScope::PerToken,
                                   Index tokens_per_sample = 1) {
  require_same_shape("orthogonalize", q, m);
  if (scope == InnerProductScope::PerToken) return projection_residual_columns(q, m, eps);
  if (tokens_per_sample <= 0 || q.cols() % tokens_per_sample != 0) {
    throw DimensionError("orthogonalize: token count does not split into samples");
  }
  // Each sample's block is contiguous in column-major order.
  const Index samples = q.cols() / tokens_per_sample;
  const Index flat = q.rows() * tokens_per_sample;
  auto r = projection_residual_columns(reshape(q, flat, samples), reshape(m, flat, samples), eps);
  return reshape(r, q.rows(), q.cols());
}

/// q_perp = rmsnorm(residual).
template <typename Scalar>
Tensor<Scalar> orthogonalize(const Tensor<Scalar>& q, const Tensor<Scalar>& m, Scalar eps,
                             const Tensor<Scalar>& gain_perp,
                             InnerProductScope scope = InnerProductScope::PerToken,
                             Index tokens_per_sample = 1) {
  return rmsnorm(projection_residual(q, m, eps, scope, tokens_per_sample), gain_perp, eps);
}

/// h = b + sigmoid(beta) O q_perp, in hidden space.
template <typename Scalar>
Tensor<Scalar> inject_full(const Tensor<Scalar>& b, const Tensor<Scalar>& q_perp,
                           const Tensor<Scalar>& o, const Tensor<Scalar>& beta) {
  if (o.rows() != b.rows()) {
    throw DimensionError("inject_full: lift " + o.shape_string() + " does not reach hidden width of " +
                         b.shape_string());
  }
  return add(b, scale_by(matmul(o, q_perp), sigmoid(beta)));
}

/// delta = rmsnorm(O q_perp).
template <typename Scalar>
Tensor<Scalar> lift_delta(const Tensor<Scalar>& q_perp, const Tensor<Scalar>& o,
                          const Tensor<Scalar>& gain_delta, Scalar eps = Scalar(kNormEps)) {
  return rmsnorm(matmul(o, q_perp), gain_delta, eps);
}

/// h = b_out + sigmoid(beta) delta, in block-output space.
template <typename Scalar>
Tensor<Scalar> inject_static_gate(const Tensor<Scalar>& b_out, const Tensor<Scalar>& delta,
                                  const Tensor<Scalar>& beta) {
  require_same_shape("inject", b_out, delta);
  return add(b_out, scale_by(delta, sigmoid(beta)));
}

/// h = b_out + sigmoid(beta) rmsnorm(O q_perp).
template <typename Scalar>
Tensor<Scalar> inject_lr(const Tensor<Scalar>& b_out, const Tensor<Scalar>& q_perp,
                         const Tensor<Scalar>& o, const Tensor<Scalar>& beta,
                         const Tensor<Scalar>& gain_delta, Scalar eps = Scalar(kNormEps)) {
  return inject_static_gate(b_out, lift_delta(q_perp, o, gain_delta, eps), beta);
}

/// Per-token gate map sigmoid(W_g x + b_g). A 1-row weight gives one scalar
/// per token; a C-row weight gives a per-channel map.
template <typename Scalar>
Tensor<Scalar> dynamic_gate(const Tensor<Scalar>& x, const Tensor<Scalar>& gate_w,
                            const Tensor<Scalar>& gate_b) {
  return sigmoid(add_bias(matmul(gate_w, x), gate_b));
}

/// h = b_out + sigmoid(g(x)) * delta.
template <typename Scalar>
Tensor<Scalar> inject_dynamic_gate(const Tensor<Scalar>& x, const Tensor<Scalar>& b_out,
                                   const Tensor<Scalar>& delta, const Tensor<Scalar>& gate_w,
                                   const Tensor<Scalar>& gate_b) {
  require_same_shape("inject_dynamic_gate", b_out, delta);
  auto gate = dynamic_gate(x, gate_w, gate_b);
  if (gate.rows() == 1) return add(b_out, scale_columns(delta, gate));
  return add(b_out, hadamard(gate, delta));
}

// ---------------------------------------------------------------------------
// Layer

/// Activations recorded for the mechanism analysis.
template <typename Scalar>
struct ComplementCapture {
  Matrix<Scalar> q;         // r x N
  Matrix<Scalar> m;         // r x N
  Matrix<Scalar> residual;  // r x N, before the final normalization
  Matrix<Scalar> gate;      // gate values, empty for ungated variants
};

/// Learned parameters of one complement instance.
template <typename Scalar>
struct OqcParams {
  VariantKind kind = VariantKind::LowRank;
  Index rank = 0;
  Scalar eps = Scalar(kNormEps);
  InnerProductScope scope = InnerProductScope::PerToken;
  Tensor<Scalar> u, v;      // r x C (absent for shared projection)
  Tensor<Scalar> p;         // r x hidden
  Tensor<Scalar> o;         // hidden x r (Full) or C x r
  Tensor<Scalar> beta;      // 1 x 1 gate logit (not for NoGate / DynamicGate)
  Tensor<Scalar> gate_w;    // 1 x C or C x C (DynamicGate)
  Tensor<Scalar> gate_b;    // matching bias
  Tensor<Scalar> gain_q, gain_m, gain_perp, gain_delta;
};

/// Static scalar gate kept apart from the host so it can wrap any branch.
/// beta_0 ~ N(0, 0.01^2).
template <typename Scalar>
struct StaticGate {
  Tensor<Scalar> beta;
  StaticGate() = default;
  explicit StaticGate(Rng& rng) : beta(Tensor<Scalar>::parameter(normal_matrix<Scalar>(1, 1, 0.01, rng))) {}
  Tensor<Scalar> value() const { return sigmoid(beta); }
};

template <typename Scalar>
OqcParams<Scalar> make_oqc_params(VariantKind kind, Index channels, Index rank,
                                  bool per_channel_gate, InnerProductScope scope, Rng& rng) {
  const Index hidden = kHiddenExpansion * channels;
  if (rank <= 0 || rank >= channels) {
    throw std::invalid_argument("rank must satisfy 0 < r < C (r=" + std::to_string(rank) +
                                ", C=" + std::to_string(channels) + ")");
  }
  if (kind == VariantKind::AblationSharedProjection && 2 * rank > hidden) {
    throw std::invalid_argument("shared projection needs 2r <= hidden width");
  }
  OqcParams<Scalar> p;
  p.kind = kind;
  p.rank = rank;
  p.scope = scope;
  auto ones = [](Index n) { return Tensor<Scalar>::parameter(Matrix<Scalar>::Ones(n, 1)); };
  if (kind != VariantKind::AblationSharedProjection) {
    p.u = Tensor<Scalar>::parameter(fan_in_normal<Scalar>(rank, channels, rng));
    p.v = Tensor<Scalar>::parameter(fan_in_normal<Scalar>(rank, channels, rng));
  }
  p.p = Tensor<Scalar>::parameter(fan_in_normal<Scalar>(rank, hidden, rng));
  const Index lift_rows = kind == VariantKind::Full ? hidden : channels;
  p.o = Tensor<Scalar>::parameter(fan_in_normal<Scalar>(lift_rows, rank, rng));
  if (kind == VariantKind::DynamicGate) {
    const Index gate_rows = per_channel_gate ? channels : 1;
    p.gate_w = Tensor<Scalar>::parameter(fan_in_normal<Scalar>(gate_rows, channels, rng));
    p.gate_b = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(gate_rows, 1));
  } else if (kind != VariantKind::AblationNoGate && kind != VariantKind::StaticGate) {
    p.beta = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(1, 1));
  }
  p.gain_q = ones(rank);
  p.gain_m = ones(rank);
  p.gain_perp = ones(rank);
  p.gain_delta = ones(lift_rows);
  return p;
}

/// Host + optional complement + output projection.
template <typename Scalar>
struct FeedForward {
  FfnVariant variant;
  Index channels = 0;
  std::variant<MlpHost<Scalar>, BilinearHost<Scalar>> host;
  Tensor<Scalar> w_out, b_out;
  std::optional<OqcParams<Scalar>> oqc;
  std::optional<StaticGate<Scalar>> static_gate;

  FeedForward() = default;
  FeedForward(const FfnVariant& v, Index c, Rng& rng) : variant(v), channels(c) {
    Rng host_rng = child_rng(rng);
    if (v.host == HostKind::Mlp) {
      host = MlpHost<Scalar>(c, host_rng);
    } else {
      host = BilinearHost<Scalar>(c, v.groups, host_rng);
    }
    w_out = Tensor<Scalar>::parameter(fan_in_normal<Scalar>(c, kHiddenExpansion * c, rng));
    b_out = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(c, 1));
    if (v.complement) {
      Rng oqc_rng = child_rng(rng);
      oqc = make_oqc_params<Scalar>(*v.complement, c, v.rank, v.per_channel_gate, v.scope, oqc_rng);
      if (*v.complement == VariantKind::StaticGate) {
        Rng gate_rng = child_rng(rng);
        static_gate = StaticGate<Scalar>(gate_rng);
      }
    }
  }

  HostOutput<Scalar> host_forward(const Tensor<Scalar>& x) const {
    return std::visit([&](const auto& h) { return h.forward(x); }, host);
  }

  Tensor<Scalar> output_projection(const Tensor<Scalar>& hidden) const {
    return add_bias(matmul(w_out, hidden), b_out);
  }

  /// x: C x N block input (already normalized). Returns the C x N update.
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Index tokens_per_sample,
                         ComplementCapture<Scalar>* capture = nullptr) const {
    auto hout = host_forward(x);
    if (!oqc) return output_projection(hout.hidden);
    const OqcParams<Scalar>& c = *oqc;
    const VariantKind kind = c.kind;

    Tensor<Scalar> q;
    if (kind == VariantKind::AblationSharedProjection) {
      auto u = slice_rows(hout.pre_a, 0, c.rank);
      auto v = variant.host == HostKind::Mlp ? slice_rows(hout.pre_a, c.rank, c.rank)
                                             : slice_rows(hout.pre_b, 0, c.rank);
      q = rmsnorm(hadamard(u, v), c.gain_q, c.eps);
    } else {
      q = quadratic_feature(x, c.u, c.v, c.gain_q, c.eps);
    }

    if (kind == VariantKind::AblationNoOrtho) {
      if (capture) {
        NoGradScope no_grad;
        auto m = project_main(hout.hidden, c.p, c.gain_m, c.eps);
        capture->q = q.value();
        capture->m = m.value();
        capture->residual = q.value();
        capture->gate = Matrix<Scalar>::Constant(1, 1, sigmoid(c.beta).item());
      }
      auto b_out = output_projection(hout.hidden);
      return add(b_out, scale_by(matmul(c.o, q), sigmoid(c.beta)));
    }

    auto m = project_main(hout.hidden, c.p, c.gain_m, c.eps);
    auto residual = projection_residual(q, m, c.eps, c.scope, tokens_per_sample);
    auto q_perp = rmsnorm(residual, c.gain_perp, c.eps);
    if (capture) {
      capture->q = q.value();
      capture->m = m.value();
      capture->residual = residual.value();
      capture->gate.resize(0, 0);
    }

    if (kind == VariantKind::Full) {
      if (capture) capture->gate = Matrix<Scalar>::Constant(1, 1, sigmoid(c.beta).item());
      return output_projection(inject_full(hout.hidden, q_perp, c.o, c.beta));
    }

    auto b_out = output_projection(hout.hidden);
    auto delta = lift_delta(q_perp, c.o, c.gain_delta, c.eps);
    switch (kind) {
      case VariantKind::LowRank:
      case VariantKind::AblationSharedProjection:
        if (capture) capture->gate = Matrix<Scalar>::Constant(1, 1, sigmoid(c.beta).item());
        return inject_static_gate(b_out, delta, c.beta);
      case VariantKind::StaticGate:
        if (capture) capture->gate = Matrix<Scalar>::Constant(1, 1, static_gate->value().item());
        return inject_static_gate(b_out, delta, static_gate->beta);
      case VariantKind::DynamicGate:
        if (capture) {
          NoGradScope no_grad;
          capture->gate = dynamic_gate(x, c.gate_w, c.gate_b).value();
        }
        return inject_dynamic_gate(x, b_out, delta, c.gate_w, c.gate_b);
      case VariantKind::AblationNoGate:
        return add(b_out, delta);
      default:
        throw std::logic_error("unhandled complement kind");
    }
  }

  /// Whether the layer reports gate statistics.
  bool gated() const {
    if (!oqc) return false;
    return oqc->kind == VariantKind::StaticGate || oqc->kind == VariantKind::DynamicGate;
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    std::visit([&](const auto& h) { h.collect(out, prefix + "host."); }, host);
    out.push_back({prefix + "w_out", w_out, true, std::nullopt});
    out.push_back({prefix + "b_out", b_out, false, std::nullopt});
    if (!oqc) return;
    const auto& c = *oqc;
    const std::string p = prefix + "oqc.";
    auto push = [&](const char* name, const Tensor<Scalar>& t, bool decay, bool trainable = true) {
      if (t.defined()) out.push_back({p + name, t, decay, std::nullopt, trainable});
    };
    // Without the projection step P and its gain are diagnostic only.
    const bool projects = c.kind != VariantKind::AblationNoOrtho;
    push("u", c.u, true);
    push("v", c.v, true);
    push("p", c.p, true, projects);
    push("o", c.o, true);
    push("beta", c.beta, false);
    push("gate_w", c.gate_w, true);
    push("gate_b", c.gate_b, false);
    push("gain_q", c.gain_q, false);
    push("gain_m", c.gain_m, false, projects);
    if (projects) push("gain_perp", c.gain_perp, false);
    if (c.kind != VariantKind::Full && projects) push("gain_delta", c.gain_delta, false);
    if (static_gate) out.push_back({prefix + "static_gate.beta", static_gate->beta, false, std::nullopt});
  }
};

}  // namespace oqc
