#include "doctest.h"

#include "oqc/vit.hpp"

#include <cmath>
#include <numeric>

using namespace oqc;
using Md = Matrix<double>;
using Td = Tensor<double>;

namespace {

BackboneConfig tiny(std::optional<VariantKind> kind = VariantKind::LowRank, HostKind host = HostKind::Mlp) {
  BackboneConfig c;
  c.depth = 2;
  c.width = 8;
  c.heads = 2;
  c.patch = 2;
  c.image_size = 4;
  c.in_channels = 2;
  c.n_classes = 3;
  c.ffn.host = host;
  c.ffn.groups = 2;
  c.ffn.complement = kind;
  c.ffn.rank = 4;
  return c;
}

double max_abs(const Md& a) { return a.cwiseAbs().maxCoeff(); }

double loss_value(const VisionTransformer<double>& model, const Md& patches, Index batch, const std::vector<int>& y) {
  NoGradScope no_grad;
  return cross_entropy(model.forward(patches, batch).logits, std::span<const int>(y)).item();
}

}  // namespace

TEST_CASE("patch grid arithmetic") {
  BackboneConfig c;
  c.image_size = 8;
  c.patch = 4;
  CHECK(c.grid() == 2);
  CHECK(c.tokens() == 4);
  const Md img = Md::Zero(3 * 64, 2);
  const Md p = patchify<double>(img, 3, 8, 4);
  CHECK(p.rows() == 48);
  CHECK(p.cols() == 8);
  CHECK_THROWS_AS(patchify<double>(img, 3, 8, 3), DimensionError);
  CHECK_THROWS_AS(patchify<double>(Md::Zero(10, 1), 3, 8, 4), DimensionError);
}

TEST_CASE("patchify token order is row-major over the grid") {
  // One channel, 4x4 image with pixel value = index.
  Md img(16, 1);
  std::iota(img.data(), img.data() + 16, 0.0);
  const Md p = patchify<double>(img, 1, 4, 2);
  CHECK(p.col(0) == (Md(4, 1) << 0, 1, 4, 5).finished());
  CHECK(p.col(1) == (Md(4, 1) << 2, 3, 6, 7).finished());
  CHECK(p.col(2) == (Md(4, 1) << 8, 9, 12, 13).finished());
  CHECK(p.col(3) == (Md(4, 1) << 10, 11, 14, 15).finished());
}

TEST_CASE("zero image with zero bias embeds to zero tokens") {
  Rng rng(1);
  auto w = Td::constant(normal_matrix<double>(8, 12, 1.0, rng));
  auto t = patch_embed(Td::constant(Md::Zero(12, 5)), w, Td::constant(Md::Zero(8, 1)));
  CHECK(max_abs(t.value()) == 0.0);
}

TEST_CASE("single patch embedding equals a hand matmul") {
  Rng rng(2);
  const Md w = normal_matrix<double>(3, 4, 1.0, rng);
  const Md b = normal_matrix<double>(3, 1, 1.0, rng);
  const Md x = normal_matrix<double>(4, 1, 1.0, rng);
  auto t = patch_embed(Td::constant(x), Td::constant(w), Td::constant(b));
  for (Index i = 0; i < 3; ++i) {
    double acc = b(i);
    for (Index k = 0; k < 4; ++k) acc += w(i, k) * x(k);
    CHECK(t.value()(i, 0) == doctest::Approx(acc).epsilon(1e-15));
  }
}

TEST_CASE("block with all-zero weights is the identity") {
  auto cfg = tiny(std::nullopt);
  Rng rng(3);
  Block<double> block(cfg, rng);
  for (auto* t : {&block.qkv_w, &block.qkv_b, &block.proj_w, &block.proj_b, &block.ffn.w_out, &block.ffn.b_out})
    t->mutable_value().setZero();
  const Md h = normal_matrix<double>(8, 8, 1.0, rng);
  CHECK(block.forward(Td::constant(h), 2).value() == h);
}

TEST_CASE("one-token attention reduces to the value path") {
  auto cfg = tiny(std::nullopt);
  Rng rng(4);
  Block<double> block(cfg, rng);
  const Md h = normal_matrix<double>(8, 3, 1.0, rng);  // 3 samples of 1 token
  const Md out = block.attention_branch(Td::constant(h), 3).value();
  for (Index j = 0; j < 3; ++j) {
    const Vector<double> col = h.col(j);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().mean();
    const Vector<double> x = (col.array() - mean) / std::sqrt(var + 1e-6);
    const Vector<double> v = block.qkv_w.value().middleRows(16, 8) * x + block.qkv_b.value().middleRows(16, 8);
    const Vector<double> expected = block.proj_w.value() * v + block.proj_b.value();
    CHECK((out.col(j) - expected).norm() < 1e-12);
  }
}

TEST_CASE("penultimate-residual readout examples") {
  Rng rng(5);
  const Md hl = normal_matrix<double>(4, 6, 1.0, rng);
  const Md hp = normal_matrix<double>(4, 6, 1.0, rng);
  const Md pooled_l = pool_tokens(Td::constant(hl), 2).value();
  const Md pooled_p = pool_tokens(Td::constant(hp), 2).value();
  CHECK(max_abs(pr_readout(Td::constant(hl), Td::constant(hp), Td::scalar(-50.0), 2).value() - pooled_l) < 1e-20);
  CHECK(pr_readout(Td::constant(hl), Td::constant(Md::Zero(4, 6)), Td::scalar(1.0), 2).value() == pooled_l);
  CHECK(max_abs(pr_readout(Td::constant(hl), Td::constant(hp), Td::scalar(0.0), 2).value() -
                (pooled_l + 0.5 * pooled_p)) < 1e-15);
}

TEST_CASE("config validation") {
  auto c = tiny();
  CHECK_NOTHROW(validate(c));
  c.depth = 1;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("depth"), std::invalid_argument);
  c.use_pr_readout = false;
  CHECK_NOTHROW(validate(c));
  c = tiny();
  c.patch = 3;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = tiny();
  c.heads = 3;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = tiny();
  c.ffn.rank = 8;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
}

TEST_CASE("parameter count matches the closed form") {
  for (auto kind : {std::optional<VariantKind>{}, std::optional(VariantKind::Full), std::optional(VariantKind::LowRank),
                    std::optional(VariantKind::StaticGate), std::optional(VariantKind::DynamicGate),
                    std::optional(VariantKind::AblationSharedProjection), std::optional(VariantKind::AblationNoOrtho),
                    std::optional(VariantKind::AblationNoGate)}) {
    for (HostKind host : {HostKind::Mlp, HostKind::Bilinear}) {
      for (bool pr : {false, true}) {
        auto cfg = tiny(kind, host);
        cfg.use_pr_readout = pr;
        VisionTransformer<double> model(cfg, 1);
        INFO((kind ? std::string(to_string(*kind)) : "none") << " host " << static_cast<int>(host) << " pr " << pr);
        CHECK(model.parameter_count() == analytic_parameter_count(cfg));
      }
    }
  }
}

TEST_CASE("complement adds parameters and PR adds one") {
  auto base = tiny(std::nullopt);
  base.use_pr_readout = false;
  auto with_pr = base;
  with_pr.use_pr_readout = true;
  CHECK(analytic_parameter_count(with_pr) == analytic_parameter_count(base) + 1);
  CHECK(analytic_parameter_count(tiny(VariantKind::LowRank)) > analytic_parameter_count(tiny(std::nullopt)));
}

TEST_CASE("batch permutation permutes outputs") {
  for (HostKind host : {HostKind::Mlp, HostKind::Bilinear}) {
    auto cfg = tiny(VariantKind::DynamicGate, host);
    VisionTransformer<double> model(cfg, 2);
    Rng rng(6);
    const Md images = normal_matrix<double>(2 * 16, 3, 1.0, rng);
    Md swapped = images;
    swapped.col(0) = images.col(2);
    swapped.col(2) = images.col(0);
    const Md a = model.forward(patchify<double>(images, 2, 4, 2), 3).logits.value();
    const Md b = model.forward(patchify<double>(swapped, 2, 4, 2), 3).logits.value();
    CHECK(max_abs(a.col(0) - b.col(2)) < 1e-13);
    CHECK(max_abs(a.col(1) - b.col(1)) < 1e-13);
    CHECK(max_abs(a.col(2) - b.col(0)) < 1e-13);
  }
}

TEST_CASE("forward is deterministic per seed") {
  auto cfg = tiny();
  Rng rng(7);
  const Md p = patchify<double>(normal_matrix<double>(32, 2, 1.0, rng), 2, 4, 2);
  VisionTransformer<double> m1(cfg, 9), m2(cfg, 9), m3(cfg, 10);
  CHECK(m1.forward(p, 2).logits.value() == m2.forward(p, 2).logits.value());
  CHECK(m1.forward(p, 2).logits.value() != m3.forward(p, 2).logits.value());
}

TEST_CASE("end-to-end gradients match finite differences") {
  for (auto kind : {std::optional<VariantKind>{}, std::optional(VariantKind::LowRank),
                    std::optional(VariantKind::DynamicGate), std::optional(VariantKind::Full)}) {
    auto cfg = tiny(kind);
    VisionTransformer<double> model(cfg, 3);
    Rng rng(8);
    const Md patches = patchify<double>(normal_matrix<double>(32, 2, 1.0, rng), 2, 4, 2);
    const std::vector<int> y{0, 2};
    model.zero_grad();
    cross_entropy(model.forward(patches, 2).logits, std::span<const int>(y)).backward();

    double diff2 = 0, ref2 = 0;
    constexpr double kStep = 1e-5;
    for (auto& p : model.parameters()) {
      if (!p.trainable) continue;
      const Md g = p.tensor.grad();
      for (Index i = 0; i < p.tensor.size(); i += 3) {
        double& e = p.tensor.mutable_value().data()[i];
        const double x0 = e;
        e = x0 + kStep;
        const double up = loss_value(model, patches, 2, y);
        e = x0 - kStep;
        const double down = loss_value(model, patches, 2, y);
        e = x0;
        const double fd = (up - down) / (2 * kStep);
        diff2 += (fd - g.data()[i]) * (fd - g.data()[i]);
        ref2 += fd * fd;
      }
    }
    INFO((kind ? std::string(to_string(*kind)) : "none"));
    CHECK(std::sqrt(diff2 / ref2) < 1e-4);
  }
}

TEST_CASE("copy_parameters_from transfers between precisions") {
  auto cfg = tiny();
  VisionTransformer<float> f(cfg, 4);
  VisionTransformer<double> d(cfg, 5);
  d.copy_parameters_from(f);
  const auto pf = f.parameters();
  const auto pd = d.parameters();
  for (std::size_t i = 0; i < pf.size(); ++i) CHECK(pd[i].tensor.value() == pf[i].tensor.value().cast<double>());
  auto other = tiny(VariantKind::Full);
  VisionTransformer<double> wrong(other, 1);
  CHECK_THROWS_AS(wrong.copy_parameters_from(f), std::invalid_argument);
}
