#include "oqc/verify.hpp"

#include "oqc/complement.hpp"
#include "oqc/metrics.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <sstream>

namespace oqc::verify {

namespace {

using Md = Matrix<double>;
using Td = Tensor<double>;
using Inputs = std::vector<Md>;
using Made = std::pair<DoubleFunction, Inputs>;

Md randn(Index r, Index c, Rng& rng) { return normal_matrix<double>(r, c, 1.0, rng); }

Index extent(Rng& rng, Index lo, Index hi) {
  return lo + static_cast<Index>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

Made unary(Rng& r, Index lo, Index hi, std::function<Td(const Td&)> op) {
  const Index m = extent(r, lo, hi), n = extent(r, 1, 4);
  return {[op](const std::vector<Td>& x) { return op(x[0]); }, {randn(m, n, r)}};
}

// A q whose columns are nearly parallel to m leaves a tiny residual whose
// normalization is too curved for a 1e-5 difference step; redraw those.
Md away_from(const Md& m, Rng& rng) {
  Md q = randn(m.rows(), m.cols(), rng);
  for (Index j = 0; j < q.cols(); ++j) {
    for (;;) {
      const double c = std::abs(q.col(j).dot(m.col(j))) / (q.col(j).norm() * m.col(j).norm());
      if (c < 0.95) break;
      q.col(j) = randn(m.rows(), 1, rng);
    }
  }
  return q;
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace

std::vector<GradientCase> primitive_gradient_cases() {
  return {
      {"matmul", [](Rng& r) -> Made {
         const Index m = extent(r, 1, 4), k = extent(r, 1, 4), n = extent(r, 1, 5);
         return {[](const std::vector<Td>& x) { return matmul(x[0], x[1]); }, {randn(m, k, r), randn(k, n, r)}};
       }},
      {"add", [](Rng& r) -> Made {
         const Index m = extent(r, 1, 4), n = extent(r, 1, 4);
         return {[](const std::vector<Td>& x) { return add(x[0], x[1]); }, {randn(m, n, r), randn(m, n, r)}};
       }},
      {"sub", [](Rng& r) -> Made {
         const Index m = extent(r, 1, 4), n = extent(r, 1, 4);
         return {[](const std::vector<Td>& x) { return sub(x[0], x[1]); }, {randn(m, n, r), randn(m, n, r)}};
       }},
      {"hadamard", [](Rng& r) -> Made {
         const Index m = extent(r, 1, 5), n = extent(r, 1, 5);
         return {[](const std::vector<Td>& x) { return hadamard(x[0], x[1]); }, {randn(m, n, r), randn(m, n, r)}};
       }},
      {"divide", [](Rng& r) -> Made {
         const Index m = extent(r, 1, 4), n = extent(r, 1, 4);
         Md den = (randn(m, n, r).array().abs() + 0.5).matrix();
         return {[](const std::vector<Td>& x) { return divide(x[0], x[1]); }, {randn(m, n, r), den}};
       }},
      {"scale", [](Rng& r) { return unary(r, 1, 4, [](const Td& x) { return scale(x, -1.75); }); }},
      {"add_scalar", [](Rng& r) { return unary(r, 1, 4, [](const Td& x) { return add_scalar(x, 0.3); }); }},
      {"scale_by", [](Rng& r) -> Made {
         const Index m = extent(r, 1, 4), n = extent(r, 1, 4);
         return {[](const std::vector<Td>& x) { return scale_by(x[0], x[1]); }, {randn(m, n, r), randn(1, 1, r)}};
       }},
      {"add_bias", [](Rng& r) -> Made {
         const Index m = extent(r, 1, 4), n = extent(r, 1, 4);
         return {[](const std::vector<Td>& x) { return add_bias(x[0], x[1]); }, {randn(m, n, r), randn(m, 1, r)}};
       }},
      {"scale_columns", [](Rng& r) -> Made {
         const Index m = extent(r, 1, 4), n = extent(r, 1, 4);
         return {[](const std::vector<Td>& x) { return scale_columns(x[0], x[1]); }, {randn(m, n, r), randn(1, n, r)}};
       }},
      {"column_sum", [](Rng& r) { return unary(r, 1, 4, [](const Td& x) { return column_sum(x); }); }},
      {"reshape", [](Rng& r) -> Made {
         const Index m = extent(r, 1, 4), n = extent(r, 1, 4);
         return {[m, n](const std::vector<Td>& x) { return reshape(x[0], n, m); }, {randn(m, n, r)}};
       }},
      {"slice_rows", [](Rng& r) -> Made {
         const Index m = extent(r, 2, 5), n = extent(r, 1, 4);
         return {[m](const std::vector<Td>& x) { return slice_rows(x[0], 1, m - 1); }, {randn(m, n, r)}};
       }},
      {"sigmoid", [](Rng& r) { return unary(r, 1, 4, [](const Td& x) { return sigmoid(x); }); }},
      {"gelu", [](Rng& r) { return unary(r, 1, 4, [](const Td& x) { return gelu(x); }); }},
      {"rmsnorm", [](Rng& r) -> Made {
         const Index m = extent(r, 2, 6), n = extent(r, 1, 4);
         return {[](const std::vector<Td>& x) { return rmsnorm(x[0], x[1], 1e-6); }, {randn(m, n, r), randn(m, 1, r)}};
       }},
      {"layernorm", [](Rng& r) -> Made {
         // Two entries normalize to +-1, leaving only the eps-sized gradient.
         const Index m = extent(r, 3, 6), n = extent(r, 1, 4);
         return {[](const std::vector<Td>& x) { return layernorm(x[0], x[1], x[2], 1e-6); },
                 {randn(m, n, r), randn(m, 1, r), randn(m, 1, r)}};
       }},
      {"softmax", [](Rng& r) { return unary(r, 1, 5, [](const Td& x) { return softmax(x); }); }},
      {"reduce_sum", [](Rng& r) { return unary(r, 1, 4, [](const Td& x) { return reduce_sum(x); }); }},
      {"reduce_mean", [](Rng& r) { return unary(r, 1, 4, [](const Td& x) { return reduce_mean(x); }); }},
      {"cross_entropy", [](Rng& r) -> Made {
         const Index k = extent(r, 2, 5), n = extent(r, 1, 4);
         auto labels = std::make_shared<std::vector<int>>();
         for (Index j = 0; j < n; ++j) labels->push_back(static_cast<int>(r() % static_cast<std::uint64_t>(k)));
         return {[labels](const std::vector<Td>& x) { return cross_entropy(x[0], *labels); }, {randn(k, n, r)}};
       }},
      {"pool_tokens", [](Rng& r) -> Made {
         const Index b = extent(r, 1, 3), t = extent(r, 1, 4), c = extent(r, 1, 3);
         return {[b](const std::vector<Td>& x) { return pool_tokens(x[0], b); }, {randn(c, b * t, r)}};
       }},
      {"add_positional", [](Rng& r) -> Made {
         const Index b = extent(r, 1, 3), t = extent(r, 1, 4), c = extent(r, 1, 3);
         return {[](const std::vector<Td>& x) { return add_positional(x[0], x[1]); }, {randn(c, b * t, r), randn(c, t, r)}};
       }},
      {"attention", [](Rng& r) -> Made {
         const Index heads = extent(r, 1, 2), dh = extent(r, 1, 3), b = extent(r, 1, 2), t = extent(r, 1, 4);
         return {[b, heads](const std::vector<Td>& x) { return attention(x[0], b, heads); },
                 {randn(3 * heads * dh, b * t, r)}};
       }},
  };
}

std::vector<GradientCase> complement_gradient_cases() {
  constexpr double eps = kNormEps;
  return {
      {"quadratic_feature", [](Rng& r) -> Made {
         // Fewer than three normalized entries leave a nearly flat, sign-like map.
         const Index c = extent(r, 4, 7), k = extent(r, 3, c - 1), n = extent(r, 1, 4);
         return {[](const std::vector<Td>& x) { return quadratic_feature(x[0], x[1], x[2], x[3]); },
                 {randn(c, n, r), randn(k, c, r), randn(k, c, r), randn(k, 1, r)}};
       }},
      {"project_main", [](Rng& r) -> Made {
         const Index h = extent(r, 2, 8), k = extent(r, 3, 5), n = extent(r, 1, 4);
         return {[](const std::vector<Td>& x) { return project_main(x[0], x[1], x[2]); },
                 {randn(h, n, r), randn(k, h, r), randn(k, 1, r)}};
       }},
      {"orthogonalize per_token", [](Rng& r) -> Made {
         const Index k = extent(r, 2, 6), n = extent(r, 1, 4);
         Md m = randn(k, n, r);
         Md q = away_from(m, r);
         return {[](const std::vector<Td>& x) { return orthogonalize(x[0], x[1], eps, x[2]); },
                 {q, m, randn(k, 1, r)}};
       }},
      {"orthogonalize global", [](Rng& r) -> Made {
         const Index k = extent(r, 2, 5), t = extent(r, 1, 3), b = extent(r, 1, 3);
         return {[t](const std::vector<Td>& x) {
                   return orthogonalize(x[0], x[1], eps, x[2], InnerProductScope::Global, t);
                 },
                 {randn(k, b * t, r), randn(k, b * t, r), randn(k, 1, r)}};
       }},
      {"orthogonalize->inject_full", [](Rng& r) -> Made {
         const Index k = extent(r, 2, 5), h = extent(r, 2, 8), n = extent(r, 1, 4);
         Md m = randn(k, n, r);
         return {[](const std::vector<Td>& x) {
                   return inject_full(x[0], orthogonalize(x[1], x[2], eps, x[3]), x[4], x[5]);
                 },
                 {randn(h, n, r), away_from(m, r), m, randn(k, 1, r), randn(h, k, r), randn(1, 1, r)}};
       }},
      {"orthogonalize->inject_lr", [](Rng& r) -> Made {
         const Index k = extent(r, 2, 5), c = extent(r, 2, 6), n = extent(r, 1, 4);
         Md m = randn(k, n, r);
         return {[](const std::vector<Td>& x) {
                   return inject_lr(x[0], orthogonalize(x[1], x[2], eps, x[3]), x[4], x[5], x[6]);
                 },
                 {randn(c, n, r), away_from(m, r), m, randn(k, 1, r), randn(c, k, r), randn(1, 1, r),
                  randn(c, 1, r)}};
       }},
      {"orthogonalize->inject_dynamic_gate", [](Rng& r) -> Made {
         const Index k = extent(r, 2, 5), c = extent(r, 2, 6), n = extent(r, 1, 4);
         Md m = randn(k, n, r);
         const Index rows = r() % 2 == 0 ? 1 : c;
         return {[](const std::vector<Td>& x) {
                   auto delta = lift_delta(orthogonalize(x[2], x[3], eps, x[4]), x[5], x[6]);
                   return inject_dynamic_gate(x[0], x[1], delta, x[7], x[8]);
                 },
                 {randn(c, n, r), randn(c, n, r), away_from(m, r), m, randn(k, 1, r), randn(c, k, r),
                  randn(c, 1, r), randn(rows, c, r), randn(rows, 1, r)}};
       }},
      {"quadratic->orthogonalize->inject_lr", [](Rng& r) -> Made {
         const Index c = extent(r, 4, 6), k = extent(r, 3, c - 1), h = 4 * c, n = extent(r, 1, 3);
         return {[](const std::vector<Td>& x) {
                   auto ones_k = Td::constant(Md::Ones(x[1].rows(), 1));
                   auto ones_c = Td::constant(Md::Ones(x[0].rows(), 1));
                   auto q = quadratic_feature(x[0], x[1], x[2], ones_k);
                   auto m = project_main(x[3], x[4], ones_k);
                   auto b_out = matmul(x[6], x[3]);
                   return inject_lr(b_out, orthogonalize(q, m, eps, ones_k), x[5], x[7], ones_c);
                 },
                 {randn(c, n, r), randn(k, c, r), randn(k, c, r), randn(h, n, r), randn(k, h, r), randn(c, k, r),
                  randn(c, h, r), randn(1, 1, r)}};
       }},
  };
}

std::vector<GradientCase> host_gradient_cases() {
  return {
      {"mlp host", [](Rng& r) -> Made {
         const Index c = extent(r, 1, 4), n = extent(r, 1, 3);
         Rng init(r());
         MlpHost<double> host(c, init);
         return {[host](const std::vector<Td>& x) {
                   MlpHost<double> h = host;
                   h.w_in = x[1];
                   h.b_in = x[2];
                   return h.forward(x[0]).hidden;
                 },
                 {randn(c, n, r), host.w_in.value(), randn(4 * c, 1, r)}};
       }},
      {"bilinear host", [](Rng& r) -> Made {
         const Index g = extent(r, 1, 2), c = g * extent(r, 1, 2), n = extent(r, 1, 3);
         Rng init(r());
         BilinearHost<double> host(c, g, init);
         return {[host](const std::vector<Td>& x) {
                   BilinearHost<double> h = host;
                   h.wa = x[1];
                   h.ba = x[2];
                   h.wb = x[3];
                   h.bb = x[4];
                   return h.forward(x[0]).hidden;
                 },
                 {randn(c, n, r), randn(4 * c, c, r), randn(4 * c, 1, r), randn(4 * c, c, r), randn(4 * c, 1, r)}};
       }},
  };
}

std::vector<std::pair<std::string, double>> worst_gradient_errors(const std::vector<GradientCase>& cases,
                                                                  int trials, Rng& rng) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& c : cases) {
    double worst = 0;
    for (int t = 0; t < trials; ++t) {
      auto [f, inputs] = c.make(rng);
      worst = std::max(worst, gradient_check(f, inputs, rng).relative_error);
    }
    out.emplace_back(c.name, worst);
  }
  return out;
}

SuiteResult gradient_suite(int trials, std::uint64_t seed) {
  Timer timer;
  Rng rng(seed);
  SuiteResult r;
  r.name = "gradients";
  r.passed = true;
  std::ostringstream detail;
  struct Group {
    const char* label;
    std::vector<GradientCase> cases;
    double tol;
  };
  const Group groups[] = {{"primitives", primitive_gradient_cases(), 1e-6},
                          {"hosts", host_gradient_cases(), 1e-5},
                          {"complement paths", complement_gradient_cases(), 1e-4}};
  for (const auto& g : groups) {
    double group_worst = 0;
    std::string worst_name;
    for (const auto& [name, err] : worst_gradient_errors(g.cases, trials, rng)) {
      if (err >= g.tol) {
        r.passed = false;
        detail << name << " rel err " << sci(err) << " >= " << sci(g.tol) << "; ";
      }
      if (err >= group_worst) {
        group_worst = err;
        worst_name = name;
      }
    }
    detail << g.label << " (" << g.cases.size() << " ops x " << trials << ") worst " << sci(group_worst) << " ["
           << worst_name << "] tol " << sci(g.tol) << "; ";
    r.worst = std::max(r.worst, group_worst);
  }
  r.threshold = 1e-4;
  r.detail = detail.str();
  r.detail.resize(r.detail.size() - 2);
  r.seconds = timer.seconds();
  return r;
}

namespace {

constexpr VariantKind kPrimaryVariants[] = {VariantKind::Full, VariantKind::LowRank, VariantKind::StaticGate,
                                            VariantKind::DynamicGate};

}  // namespace

template <typename Scalar>
OrthogonalityStats orthogonality_stats(Index tokens_per_variant, std::uint64_t seed) {
  constexpr Index kChannels = 32;
  constexpr Index kTokensPerSample = 25;
  OrthogonalityStats s;
  double pre = 0, post = 0;
  Rng data_rng(seed);
  for (VariantKind kind : kPrimaryVariants) {
    FfnVariant v;
    v.complement = kind;
    v.rank = 16;
    Rng rng(seed * 31 + static_cast<std::uint64_t>(kind));
    FeedForward<Scalar> ff(v, kChannels, rng);
    const Index n = (tokens_per_variant + kTokensPerSample - 1) / kTokensPerSample * kTokensPerSample;
    auto x = Tensor<Scalar>::constant(normal_matrix<Scalar>(kChannels, n, 1.0, data_rng));
    ComplementCapture<Scalar> cap;
    {
      NoGradScope no_grad;
      ff.forward(x, kTokensPerSample, &cap);
    }
    const auto o = metrics::overlap_stats(cap.q.template cast<double>(), cap.m.template cast<double>(),
                                          cap.residual.template cast<double>());
    pre += o.pre * static_cast<double>(o.tokens);
    post += o.post * static_cast<double>(o.tokens);
    s.post_max = std::max(s.post_max, o.post_max);
    s.tokens += o.tokens;
  }
  s.pre_mean = pre / static_cast<double>(s.tokens);
  s.post_mean = post / static_cast<double>(s.tokens);
  return s;
}

template OrthogonalityStats orthogonality_stats<float>(Index, std::uint64_t);
template OrthogonalityStats orthogonality_stats<double>(Index, std::uint64_t);

SuiteResult orthogonality_suite(Index tokens_per_variant, std::uint64_t seed) {
  Timer timer;
  const auto f64 = orthogonality_stats<double>(tokens_per_variant, seed);
  const auto f32 = orthogonality_stats<float>(tokens_per_variant, seed);
  SuiteResult r;
  r.name = "orthogonality";
  r.passed = f64.tokens >= 10000 && f64.post_mean < 1e-7 && f64.post_max < 1e-6 && f32.post_max < 1e-4;
  r.worst = f64.post_max;
  r.threshold = 1e-6;
  std::ostringstream d;
  d << f64.tokens << " tokens over full/lr/static/dynamic; f64 mean " << sci(f64.post_mean) << " (<1e-7) max "
    << sci(f64.post_max) << " (<1e-6); f32 max " << sci(f32.post_max) << " (<1e-4)";
  r.detail = d.str();
  r.seconds = timer.seconds();
  return r;
}

SuiteResult overlap_contrast_suite(Index tokens_per_variant, std::uint64_t seed) {
  Timer timer;
  const auto s = orthogonality_stats<double>(tokens_per_variant, seed);
  SuiteResult r;
  r.name = "overlap contrast";
  const double drop = s.post_mean > 0 ? s.pre_mean / s.post_mean : std::numeric_limits<double>::infinity();
  r.passed = s.pre_mean > 0.01 && s.post_mean < 1e-7 && drop >= 1e5;
  r.worst = s.post_mean;
  r.threshold = 1e-7;
  std::ostringstream d;
  d << "pre " << sci(s.pre_mean) << " (>1e-2) post " << sci(s.post_mean) << " (<1e-7) drop " << sci(drop)
    << "x (>=1e5)";
  r.detail = d.str();
  r.seconds = timer.seconds();
  return r;
}

namespace {

double svd_entropy_rank(const Md& x) {
  const Md xc = x.rowwise() - x.colwise().mean();
  Eigen::JacobiSVD<Md> svd(xc);
  const Eigen::VectorXd s = svd.singularValues();
  const double total = s.sum();
  double h = 0;
  for (Index i = 0; i < s.size(); ++i) {
    const double p = s(i) / total;
    if (p > 0) h -= p * std::log(p);
  }
  return std::exp(h);
}

double eigen_participation(const Md& x) {
  const Md xc = x.rowwise() - x.colwise().mean();
  const Md cov = xc.transpose() * xc / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Md> es(cov);
  const Eigen::VectorXd l = es.eigenvalues();
  return l.sum() * l.sum() / l.squaredNorm();
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

SuiteResult metric_oracle_suite(int matrices, std::uint64_t seed) {
  Timer timer;
  Rng rng(seed);
  SuiteResult r;
  r.name = "metric oracles";
  double worst_er = 0, worst_pr = 0;
  for (int i = 0; i < matrices; ++i) {
    const Index n = extent(rng, 10, 80), d = extent(rng, 2, 24);
    Md x = randn(n, d, rng);
    // Uneven column scales give a non-trivial spectrum.
    for (Index j = 0; j < d; ++j) x.col(j) *= std::exp(randn(1, 1, rng)(0, 0));
    worst_er = std::max(worst_er, rel(metrics::effective_rank(x), svd_entropy_rank(x)));
    worst_pr = std::max(worst_pr, rel(metrics::participation_ratio(x), eigen_participation(x)));
  }
  auto isotropic = [&](Index d) {
    Eigen::HouseholderQR<Md> qr(randn(d, d, rng));
    const Md q = qr.householderQ();
    Md x(2 * d, d);
    x << q, -q;
    return x;
  };
  const Md rank1 = randn(40, 1, rng) * randn(1, 12, rng);
  const double iso_er = metrics::effective_rank(isotropic(8));
  const double iso_pr = metrics::participation_ratio(isotropic(16));
  const double r1_er = metrics::effective_rank(rank1);
  const double r1_pr = metrics::participation_ratio(rank1);
  const double exact_err =
      std::max({std::abs(iso_er - 8) / 8, std::abs(iso_pr - 16) / 16, std::abs(r1_er - 1), std::abs(r1_pr - 1)});
  r.worst = std::max(worst_er, worst_pr);
  r.threshold = 1e-8;
  r.passed = worst_er < 1e-8 && worst_pr < 1e-8 && exact_err < 1e-12;
  std::ostringstream d;
  d << matrices << " random matrices: eff_rank vs JacobiSVD " << sci(worst_er) << ", part_ratio vs eigensolver "
    << sci(worst_pr) << "; isotropic d=8 -> " << iso_er << ", d=16 -> " << iso_pr << "; rank-1 -> " << r1_er << ", "
    << r1_pr << " (exact within " << sci(exact_err) << ")";
  r.detail = d.str();
  r.seconds = timer.seconds();
  return r;
}

namespace {

void copy_by_name(const FeedForward<double>& dst, const FeedForward<double>& src) {
  ParameterList<double> d, s;
  dst.collect(d, "");
  src.collect(s, "");
  for (auto& p : d) {
    for (const auto& q : s) {
      if (p.name == q.name && p.tensor.rows() == q.tensor.rows() && p.tensor.cols() == q.tensor.cols()) {
        p.tensor.mutable_value() = q.tensor.value();
      }
    }
  }
}

double max_diff(const Td& a, const Td& b) { return (a.value() - b.value()).cwiseAbs().maxCoeff(); }

}  // namespace

SuiteResult equivalence_suite(std::uint64_t seed) {
  Timer timer;
  constexpr Index kChannels = 16, kTokens = 40, kPerSample = 10;
  Rng data_rng(seed);
  double dyn_static = 0, nogate_lr = 0, full_host = 0;
  NoGradScope no_grad;
  for (HostKind host : {HostKind::Mlp, HostKind::Bilinear}) {
    auto make = [&](std::optional<VariantKind> kind) {
      FfnVariant v;
      v.host = host;
      v.complement = kind;
      v.rank = 8;
      Rng rng(seed);
      return FeedForward<double>(v, kChannels, rng);
    };
    const auto x = Td::constant(randn(kChannels, kTokens, data_rng));
    const double beta = 0.37;

    auto dyn = make(VariantKind::DynamicGate);
    auto stat = make(VariantKind::StaticGate);
    copy_by_name(stat, dyn);
    dyn.oqc->gate_w.mutable_value().setZero();
    dyn.oqc->gate_b.mutable_value().setConstant(beta);
    stat.static_gate->beta.mutable_value().setConstant(beta);
    dyn_static = std::max(dyn_static, max_diff(dyn.forward(x, kPerSample), stat.forward(x, kPerSample)));

    auto lr = make(VariantKind::LowRank);
    auto nogate = make(VariantKind::AblationNoGate);
    copy_by_name(nogate, lr);
    lr.oqc->beta.mutable_value().setConstant(40.0);  // sigmoid rounds to exactly 1
    nogate_lr = std::max(nogate_lr, max_diff(lr.forward(x, kPerSample), nogate.forward(x, kPerSample)));

    auto full = make(VariantKind::Full);
    auto plain = make(std::nullopt);
    copy_by_name(plain, full);
    full.oqc->beta.mutable_value().setConstant(-40.0);
    full_host = std::max(full_host, max_diff(full.forward(x, kPerSample), plain.forward(x, kPerSample)));
  }
  SuiteResult r;
  r.name = "degenerate equivalences";
  r.passed = dyn_static < 1e-12 && nogate_lr < 1e-12 && full_host < 1e-6;
  r.worst = std::max({dyn_static, nogate_lr, full_host});
  r.threshold = 1e-6;
  std::ostringstream d;
  d << "dynamic(zero conv) vs static " << sci(dyn_static) << " (<1e-12); no_gate vs lr(gate=1) " << sci(nogate_lr)
    << " (<1e-12); full(beta=-40) vs host " << sci(full_host) << " (<1e-6); mlp and bilinear hosts";
  r.detail = d.str();
  r.seconds = timer.seconds();
  return r;
}

std::vector<SuiteResult> run_all() {
  return {gradient_suite(), orthogonality_suite(), overlap_contrast_suite(), metric_oracle_suite(),
          equivalence_suite()};
}

}  // namespace oqc::verify
