#include "doctest.h"

#include "oqc/complement.hpp"
#include "oqc/gradcheck.hpp"
#include "oqc/metrics.hpp"
#include "oqc/verify.hpp"

#include <cmath>

using namespace oqc;
using Md = Matrix<double>;
using Td = Tensor<double>;

namespace {

Md col(std::initializer_list<double> v) {
  Md m(static_cast<Index>(v.size()), 1);
  Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

Td ones(Index n) { return Td::constant(Md::Ones(n, 1)); }

double max_abs(const Md& a) { return a.cwiseAbs().maxCoeff(); }

FeedForward<double> make_ffn(std::optional<VariantKind> kind, HostKind host = HostKind::Mlp, Index c = 8,
                             Index rank = 4, std::uint64_t seed = 3) {
  FfnVariant v;
  v.host = host;
  v.complement = kind;
  v.rank = rank;
  Rng rng(seed);
  return FeedForward<double>(v, c, rng);
}

}  // namespace

// ---------------------------------------------------------------------------
// Hosts

TEST_CASE("zero input through zero-initialized MLP host is zero") {
  Rng rng(1);
  MlpHost<double> host(4, rng);
  host.w_in.mutable_value().setZero();
  auto out = host.forward(Td::constant(Md::Zero(4, 3)));
  CHECK(out.hidden.rows() == 16);
  CHECK(max_abs(out.hidden.value()) == 0.0);
}

TEST_CASE("MLP host equals hand-unrolled matmul and gelu") {
  Rng rng(2);
  MlpHost<double> host(4, rng);
  host.b_in.mutable_value() = normal_matrix<double>(16, 1, 1.0, rng);
  const Md x = normal_matrix<double>(4, 1, 1.0, rng);
  const Md pre = host.w_in.value() * x + host.b_in.value();
  Md expected(16, 1);
  for (Index i = 0; i < 16; ++i) expected(i) = 0.5 * pre(i) * (1 + std::erf(pre(i) / std::sqrt(2.0)));
  CHECK(max_abs(host.forward(Td::constant(x)).hidden.value() - expected) < 1e-15);
}

TEST_CASE("bilinear host with identity-like embedding on ones") {
  Rng rng(3);
  BilinearHost<double> host(4, 1, rng);
  Md embed = Md::Zero(16, 4);
  for (Index i = 0; i < 16; ++i) embed(i, i % 4) = 1.0;
  host.wa.mutable_value() = embed;
  host.wb.mutable_value() = embed;
  auto out = host.forward(Td::constant(Md::Ones(4, 1)));
  const double gelu1 = 0.5 * (1 + std::erf(1 / std::sqrt(2.0)));
  CHECK(max_abs(out.hidden.value().array() - gelu1) < 1e-15);
}

TEST_CASE("bilinear host with one group equals the ungrouped formula") {
  Rng rng(4);
  BilinearHost<double> host(6, 1, rng);
  host.ba.mutable_value() = normal_matrix<double>(24, 1, 1.0, rng);
  host.bb.mutable_value() = normal_matrix<double>(24, 1, 1.0, rng);
  const Md x = normal_matrix<double>(6, 5, 1.0, rng);
  const Md a = (host.wa.value() * x).colwise() + host.ba.value().col(0);
  const Md b = (host.wb.value() * x).colwise() + host.bb.value().col(0);
  Md expected = a;
  for (Index i = 0; i < b.size(); ++i) {
    const double g = 0.5 * b.data()[i] * (1 + std::erf(b.data()[i] / std::sqrt(2.0)));
    expected.data()[i] = a.data()[i] * g;
  }
  CHECK(max_abs(host.forward(Td::constant(x)).hidden.value() - expected) < 1e-13);
}

TEST_CASE("bilinear groups partition channels") {
  const Md mask = group_mask<double>(16, 4, 2);
  for (Index i = 0; i < 16; ++i) {
    CHECK(mask.row(i).sum() == 2.0);
    for (Index j = 0; j < 4; ++j) CHECK(mask(i, j) == ((i / 8) == (j / 2) ? 1.0 : 0.0));
  }
}

TEST_CASE("host channel mismatch is rejected") {
  Rng rng(5);
  MlpHost<double> host(4, rng);
  CHECK_THROWS_AS(host.forward(Td::constant(Md::Zero(5, 2))), DimensionError);
}

TEST_CASE("host gradients match finite differences") {
  Rng rng(6);
  for (const auto& [name, worst] : verify::worst_gradient_errors(verify::host_gradient_cases(), 30, rng)) {
    INFO(name << " " << worst);
    CHECK(worst < 1e-5);
  }
}

// ---------------------------------------------------------------------------
// Quadratic feature and projection

TEST_CASE("quadratic feature of zero input is zero") {
  Rng rng(7);
  auto q = quadratic_feature(Td::constant(Md::Zero(6, 3)), Td::constant(normal_matrix<double>(3, 6, 1.0, rng)),
                             Td::constant(normal_matrix<double>(3, 6, 1.0, rng)), ones(3));
  CHECK(max_abs(q.value()) == 0.0);
}

TEST_CASE("quadratic feature hand oracle: Ux=(1,0), Vx=(1,0)") {
  Md u = Md::Zero(2, 3), v = Md::Zero(2, 3);
  u(0, 0) = 1;
  v(0, 0) = 1;
  auto q = quadratic_feature(Td::constant(col({1, 5, -2})), Td::constant(u), Td::constant(v), ones(2), 0.0);
  CHECK(q.value()(0, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(q.value()(1, 0) == 0.0);
}

TEST_CASE("quadratic feature has unit RMS per token") {
  Rng rng(8);
  const Md x = normal_matrix<double>(6, 7, 1.0, rng);
  auto q = quadratic_feature(Td::constant(x), Td::constant(normal_matrix<double>(4, 6, 1.0, rng)),
                             Td::constant(normal_matrix<double>(4, 6, 1.0, rng)), ones(4));
  for (Index j = 0; j < q.cols(); ++j) CHECK(std::sqrt(q.value().col(j).squaredNorm() / 4) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("project_main examples") {
  CHECK(max_abs(project_main(Td::constant(Md::Zero(8, 2)), Td::constant(Md::Ones(3, 8)), ones(3)).value()) == 0.0);
  // Row selector of hidden channel 2, constant b = 5: every token maps to (5,0)/rms.
  Md p = Md::Zero(2, 8);
  p(0, 2) = 1;
  auto m = project_main(Td::constant(Md::Constant(8, 3, 5.0)), Td::constant(p), ones(2), 0.0);
  for (Index j = 0; j < 3; ++j) {
    CHECK(m.value()(0, j) == doctest::Approx(std::sqrt(2.0)));
    CHECK(m.value()(1, j) == 0.0);
  }
  CHECK_THROWS_AS(project_main(Td::constant(Md::Zero(7, 2)), Td::constant(p), ones(2)), DimensionError);
}

TEST_CASE("orthogonalize hand oracle: q=(1,2), m=(1,0), eps=0") {
  auto q = Td::constant(col({1, 2}));
  auto m = Td::constant(col({1, 0}));
  auto residual = projection_residual(q, m, 0.0);
  CHECK(residual.value()(0, 0) == 0.0);
  CHECK(residual.value()(1, 0) == 2.0);
  auto qp = orthogonalize(q, m, 0.0, ones(2));
  CHECK(qp.value()(0, 0) == 0.0);
  CHECK(qp.value()(1, 0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("orthogonalize of m against itself leaves an eps-sized remnant") {
  Rng rng(9);
  const Md m = normal_matrix<double>(5, 20, 1.0, rng);
  auto exact = projection_residual(Td::constant(m), Td::constant(m), 0.0);
  CHECK(max_abs(exact.value()) < 1e-14);
  // With eps > 0 the remnant is eps / (|m|^2 + eps) m: parallel to m but tiny.
  auto r = projection_residual(Td::constant(m), Td::constant(m), kNormEps);
  for (Index j = 0; j < m.cols(); ++j) {
    const double n2 = m.col(j).squaredNorm();
    CHECK((r.value().col(j) - kNormEps / (n2 + kNormEps) * m.col(j)).norm() < 1e-15);
  }
  auto qp = orthogonalize(Td::constant(m), Td::constant(m), kNormEps, ones(5));
  CHECK(max_abs(qp.value()) < std::sqrt(5.0) + 1e-9);
}

TEST_CASE("q orthogonal to m passes through unchanged") {
  auto q = Td::constant(col({0, 3, -1}));
  auto m = Td::constant(col({2, 0, 0}));
  CHECK(projection_residual(q, m, kNormEps).value() == q.value());
}

TEST_CASE("global inner-product scope orthogonalizes each sample as one vector") {
  Rng rng(10);
  const Index r = 3, t = 4, b = 2;
  const Md q = normal_matrix<double>(r, b * t, 1.0, rng);
  const Md m = normal_matrix<double>(r, b * t, 1.0, rng);
  auto res = projection_residual(Td::constant(q), Td::constant(m), 0.0, InnerProductScope::Global, t);
  for (Index s = 0; s < b; ++s) {
    const Md rs = res.value().middleCols(s * t, t);
    const Md ms = m.middleCols(s * t, t);
    CHECK(std::abs((rs.array() * ms.array()).sum()) < 1e-12);
  }
  CHECK_THROWS_AS(projection_residual(Td::constant(q), Td::constant(m), 0.0, InnerProductScope::Global, 3),
                  DimensionError);
}

TEST_CASE("orthogonalize rejects mismatched shapes") {
  CHECK_THROWS_AS(projection_residual(Td::constant(Md::Zero(3, 2)), Td::constant(Md::Zero(2, 2)), 1e-6),
                  DimensionError);
}

// ---------------------------------------------------------------------------
// Injection

TEST_CASE("inject_full examples") {
  Rng rng(11);
  const Md b = normal_matrix<double>(6, 2, 1.0, rng);
  const Md o = normal_matrix<double>(6, 3, 1.0, rng);
  const Md qp = normal_matrix<double>(3, 2, 1.0, rng);
  auto closed = inject_full(Td::constant(b), Td::constant(qp), Td::constant(o), Td::scalar(-50.0));
  CHECK(max_abs(closed.value() - b) < 1e-20);
  auto zero = inject_full(Td::constant(b), Td::constant(Md::Zero(3, 2)), Td::constant(o), Td::scalar(0.3));
  CHECK(zero.value() == b);
  auto h = inject_full(Td::constant(b), Td::constant(qp), Td::constant(o), Td::scalar(0.7));
  const double s = 1 / (1 + std::exp(-0.7));
  CHECK(max_abs(h.value() - (b + s * o * qp)) < 1e-14);
  CHECK_THROWS_AS(inject_full(Td::constant(b), Td::constant(qp), Td::constant(Md::Zero(5, 3)), Td::scalar(0.0)),
                  DimensionError);
}

TEST_CASE("inject_lr examples") {
  Rng rng(12);
  const Md b = normal_matrix<double>(4, 3, 1.0, rng);
  const Md o = normal_matrix<double>(4, 2, 1.0, rng);
  const Md qp = normal_matrix<double>(2, 3, 1.0, rng);
  CHECK(max_abs(inject_lr(Td::constant(b), Td::constant(qp), Td::constant(o), Td::scalar(-50.0), ones(4)).value() -
                b) < 1e-20);
  CHECK(inject_lr(Td::constant(b), Td::constant(qp), Td::constant(Md::Zero(4, 2)), Td::scalar(1.0), ones(4)).value() ==
        b);
  // Hand composition: b + sigmoid(beta) * oq / rms(oq).
  const Md oq = o * qp;
  Md delta = oq;
  for (Index j = 0; j < 3; ++j) delta.col(j) /= std::sqrt(oq.col(j).squaredNorm() / 4 + kNormEps);
  const double s = 1 / (1 + std::exp(0.4));
  CHECK(max_abs(inject_lr(Td::constant(b), Td::constant(qp), Td::constant(o), Td::scalar(-0.4), ones(4)).value() -
                (b + s * delta)) < 1e-14);
}

TEST_CASE("static gate examples") {
  const Md b = Md::Constant(3, 2, 1.0);
  const Md d = Md::Constant(3, 2, 2.0);
  CHECK(inject_static_gate(Td::constant(b), Td::constant(d), Td::scalar(0.0)).value() == Md::Constant(3, 2, 2.0));
  CHECK(max_abs(inject_static_gate(Td::constant(b), Td::constant(d), Td::scalar(-800.0)).value() - b) == 0.0);
}

TEST_CASE("static gate init keeps sigmoid(beta) in (0.45, 0.55)") {
  // beta ~ N(0, 0.01): |beta| < 0.2 is a 20-sigma event, so every draw lands inside.
  Rng rng(13);
  int inside = 0;
  constexpr int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) {
    StaticGate<double> g(rng);
    const double s = g.value().item();
    inside += s > 0.45 && s < 0.55;
  }
  CHECK(static_cast<double>(inside) / kDraws > 0.999);
}

TEST_CASE("dynamic gate examples") {
  Rng rng(14);
  const Md x = normal_matrix<double>(4, 5, 1.0, rng);
  const Md b = normal_matrix<double>(4, 5, 1.0, rng);
  const Md d = normal_matrix<double>(4, 5, 1.0, rng);
  auto closed = inject_dynamic_gate(Td::constant(x), Td::constant(b), Td::constant(d), Td::constant(Md::Zero(1, 4)),
                                    Td::scalar(-50.0));
  CHECK(max_abs(closed.value() - b) < 1e-20);
  auto half = inject_dynamic_gate(Td::constant(x), Td::constant(b), Td::constant(d), Td::constant(Md::Zero(1, 4)),
                                  Td::scalar(0.0));
  CHECK(max_abs(half.value() - (b + 0.5 * d)) == 0.0);
  // Different tokens get different gates.
  auto gate = dynamic_gate(Td::constant(x), Td::constant(normal_matrix<double>(1, 4, 1.0, rng)), Td::scalar(0.0));
  std::vector<double> g(gate.value().data(), gate.value().data() + gate.size());
  CHECK(metrics::gate_stats(g).std > 0);
  for (double v : g) CHECK((v > 0 && v < 1));
}

// ---------------------------------------------------------------------------
// Ablations and layer wiring

TEST_CASE("NoOrtho with q parallel to m injects along the lift of m") {
  Rng rng(15);
  const Md m = normal_matrix<double>(3, 4, 1.0, rng);
  const Md q = 2.5 * m;
  const Md o = normal_matrix<double>(5, 3, 1.0, rng);
  // No projection: the update O q is exactly 2.5 O m.
  auto h = add(Td::constant(Md::Zero(5, 4)), scale_by(matmul(Td::constant(o), Td::constant(q)), sigmoid(Td::scalar(0.0))));
  CHECK(max_abs(h.value() - 0.5 * 2.5 * o * m) < 1e-14);
  CHECK(projection_residual(Td::constant(q), Td::constant(m), 0.0).value().norm() < 1e-12);
}

TEST_CASE("NoGate with zero lift returns b_out") {
  auto ffn = make_ffn(VariantKind::AblationNoGate);
  ffn.oqc->o.mutable_value().setZero();
  auto plain = make_ffn(std::nullopt);
  Rng rng(16);
  auto x = Td::constant(normal_matrix<double>(8, 6, 1.0, rng));
  CHECK(max_abs(ffn.forward(x, 3).value() - plain.forward(x, 3).value()) == 0.0);
}

TEST_CASE("SharedProjection slices the host pre-activation") {
  for (HostKind host : {HostKind::Mlp, HostKind::Bilinear}) {
    auto ffn = make_ffn(VariantKind::AblationSharedProjection, host);
    Rng rng(17);
    auto x = Td::constant(normal_matrix<double>(8, 5, 1.0, rng));
    ComplementCapture<double> cap;
    ffn.forward(x, 5, &cap);
    auto h = ffn.host_forward(x);
    const Md u = h.pre_a.value().topRows(4);
    const Md v = host == HostKind::Mlp ? Md(h.pre_a.value().middleRows(4, 4)) : Md(h.pre_b.value().topRows(4));
    auto q = rmsnorm(Td::constant(u.cwiseProduct(v)), ones(4), kNormEps);
    CHECK(max_abs(cap.q - q.value()) < 1e-15);
  }
}

TEST_CASE("NoOrtho capture reports no projection") {
  auto ffn = make_ffn(VariantKind::AblationNoOrtho);
  Rng rng(18);
  ComplementCapture<double> cap;
  ffn.forward(Td::constant(normal_matrix<double>(8, 6, 1.0, rng)), 6, &cap);
  CHECK(cap.residual == cap.q);
  const auto o = metrics::overlap_stats(cap.q, cap.m, cap.residual);
  CHECK(o.post == o.pre);
}

TEST_CASE("rank must satisfy 0 < r < C") {
  CHECK_THROWS_AS(make_ffn(VariantKind::LowRank, HostKind::Mlp, 8, 8), std::invalid_argument);
  CHECK_THROWS_AS(make_ffn(VariantKind::LowRank, HostKind::Mlp, 8, 0), std::invalid_argument);
  CHECK_NOTHROW(make_ffn(VariantKind::LowRank, HostKind::Mlp, 8, 1));
}

TEST_CASE("gate_conv exists only for the dynamic variant") {
  for (VariantKind k : {VariantKind::Full, VariantKind::LowRank, VariantKind::StaticGate, VariantKind::DynamicGate,
                        VariantKind::AblationSharedProjection, VariantKind::AblationNoOrtho,
                        VariantKind::AblationNoGate}) {
    auto ffn = make_ffn(k);
    CHECK(ffn.oqc->gate_w.defined() == (k == VariantKind::DynamicGate));
    CHECK(ffn.static_gate.has_value() == (k == VariantKind::StaticGate));
  }
}

TEST_CASE("every variant keeps the block output shape") {
  Rng rng(19);
  auto x = Td::constant(normal_matrix<double>(8, 6, 1.0, rng));
  for (VariantKind k : {VariantKind::Full, VariantKind::LowRank, VariantKind::StaticGate, VariantKind::DynamicGate,
                        VariantKind::AblationSharedProjection, VariantKind::AblationNoOrtho,
                        VariantKind::AblationNoGate}) {
    for (HostKind host : {HostKind::Mlp, HostKind::Bilinear}) {
      auto y = make_ffn(k, host).forward(x, 3);
      CHECK(y.rows() == 8);
      CHECK(y.cols() == 6);
    }
  }
}

TEST_CASE("per-channel dynamic gate") {
  FfnVariant v;
  v.complement = VariantKind::DynamicGate;
  v.rank = 4;
  v.per_channel_gate = true;
  Rng rng(20);
  FeedForward<double> ffn(v, 8, rng);
  CHECK(ffn.oqc->gate_w.rows() == 8);
  ComplementCapture<double> cap;
  ffn.forward(Td::constant(normal_matrix<double>(8, 6, 1.0, rng)), 6, &cap);
  CHECK(cap.gate.rows() == 8);
  CHECK(cap.gate.cols() == 6);
}

TEST_CASE("complement paths match finite differences") {
  Rng rng(21);
  for (const auto& [name, worst] : verify::worst_gradient_errors(verify::complement_gradient_cases(), 100, rng)) {
    INFO(name << " " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("orthogonality and contrast suites") {
  CHECK(verify::orthogonality_suite().passed);
  CHECK(verify::overlap_contrast_suite().passed);
  CHECK(verify::equivalence_suite().passed);
}
