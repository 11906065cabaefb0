#pragma once

// Host feed-forward operators producing the dominant hidden map b(x).

#include "oqc/ops.hpp"
#include "oqc/parameters.hpp"

#include <stdexcept>
#include <string>

namespace oqc {

enum class HostKind { Mlp, Bilinear };

inline constexpr Index kHiddenExpansion = 4;

template <typename Scalar>
struct HostOutput {
  Tensor<Scalar> hidden;  // b(x), (4C) x N
  Tensor<Scalar> pre_a;   // input projection before the nonlinearity
  Tensor<Scalar> pre_b;   // second branch input projection (bilinear only)
};

template <typename Scalar>
inline void require_channels(const char* who, const Tensor<Scalar>& x, Index channels) {
  if (x.rows() != channels) {
    throw DimensionError(std::string(who) + ": expected " + std::to_string(channels) +
                         " channels, got " + x.shape_string());
  }
}

/// b(x) = gelu(W_in x + b_in).
template <typename Scalar>
struct MlpHost {
  Index channels = 0;
  Tensor<Scalar> w_in;
  Tensor<Scalar> b_in;

  MlpHost() = default;
  MlpHost(Index c, Rng& rng)
      : channels(c),
        w_in(Tensor<Scalar>::parameter(fan_in_normal<Scalar>(kHiddenExpansion * c, c, rng))),
        b_in(Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(kHiddenExpansion * c, 1))) {}

  Index hidden_width() const { return kHiddenExpansion * channels; }

  HostOutput<Scalar> forward(const Tensor<Scalar>& x) const {
    require_channels("MlpHost", x, channels);
    auto pre = add_bias(matmul(w_in, x), b_in);
    return {gelu(pre), pre, Tensor<Scalar>{}};
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    out.push_back({prefix + "w_in", w_in, true, std::nullopt});
    out.push_back({prefix + "b_in", b_in, false, std::nullopt});
  }
};

/// Block-diagonal 0/1 mask mapping `groups` input groups to output groups.
template <typename Scalar>
Matrix<Scalar> group_mask(Index out, Index in, Index groups) {
  if (groups <= 0 || in % groups != 0 || out % groups != 0) {
    throw std::invalid_argument("group count " + std::to_string(groups) + " must divide " +
                                std::to_string(in) + " and " + std::to_string(out));
  }
  Matrix<Scalar> m = Matrix<Scalar>::Zero(out, in);
  const Index go = out / groups;
  const Index gi = in / groups;
  for (Index g = 0; g < groups; ++g) m.block(g * go, g * gi, go, gi).setOnes();
  return m;
}

/// Simplified bilinear stand-in: b(x) = (Wa x + ba) * gelu(Wb x + bb) with
/// grouped (block-diagonal) channel maps. Not a replication of any published
/// bilinear operator.
template <typename Scalar>
struct BilinearHost {
  Index channels = 0;
  Index groups = 1;
  Matrix<Scalar> mask;
  Tensor<Scalar> wa, ba, wb, bb;

  BilinearHost() = default;
  BilinearHost(Index c, Index g, Rng& rng) : channels(c), groups(g) {
    const Index hw = kHiddenExpansion * c;
    mask = group_mask<Scalar>(hw, c, g);
    // Fan-in of a grouped map is the group width.
    const Index fan_in = c / g;
    auto draw = [&] {
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
      Matrix<Scalar> m(hw, c);
      for (Index j = 0; j < c; ++j)
        for (Index i = 0; i < hw; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
      return Matrix<Scalar>(m.cwiseProduct(mask));
    };
    wa = Tensor<Scalar>::parameter(draw());
    wb = Tensor<Scalar>::parameter(draw());
    ba = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(hw, 1));
    bb = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(hw, 1));
  }

  Index hidden_width() const { return kHiddenExpansion * channels; }

  HostOutput<Scalar> forward(const Tensor<Scalar>& x) const {
    require_channels("BilinearHost", x, channels);
    auto m = Tensor<Scalar>::constant(mask);
    auto pa = add_bias(matmul(hadamard(wa, m), x), ba);
    auto pb = add_bias(matmul(hadamard(wb, m), x), bb);
    return {hadamard(pa, gelu(pb)), pa, pb};
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    out.push_back({prefix + "wa", wa, true, mask});
    out.push_back({prefix + "ba", ba, false, std::nullopt});
    out.push_back({prefix + "wb", wb, true, mask});
    out.push_back({prefix + "bb", bb, false, std::nullopt});
  }
};

}  // namespace oqc
