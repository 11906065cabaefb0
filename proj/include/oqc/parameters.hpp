#pragma once

#include "oqc/tensor.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace oqc {

/// A trainable leaf together with the bookkeeping the optimizer and
/// checkpoints need.
template <typename Scalar>
struct NamedParameter {
  std::string name;
  Tensor<Scalar> tensor;
  bool decay = false;                  // weight decay applies (matrices only)
  std::optional<Matrix<Scalar>> mask;  // structural zeros, e.g. grouped maps
  bool trainable = true;               // false: diagnostic state, checkpointed only

  Index effective_size() const {
    if (mask) return static_cast<Index>((mask->array() != Scalar(0)).count());
    return tensor.size();
  }
};

template <typename Scalar>
using ParameterList = std::vector<NamedParameter<Scalar>>;

using Rng = std::mt19937_64;

/// Normal(0, 1/fan_in) entries. Draws in double so f32 and f64 models built
/// from the same seed agree up to rounding.
template <typename Scalar>
Matrix<Scalar> fan_in_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
  Matrix<Scalar> m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  return m;
}

template <typename Scalar>
Matrix<Scalar> normal_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<Scalar> m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  return m;
}

/// Derives an independent generator for a named sub-module.
inline Rng child_rng(Rng& parent) { return Rng(parent()); }

}  // namespace oqc
