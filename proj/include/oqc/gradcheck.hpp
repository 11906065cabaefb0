#pragma once

// Central finite-difference check of reverse-mode gradients.

#include "oqc/ops.hpp"
#include "oqc/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oqc {

struct GradCheckResult {
  double relative_error = 0;  // |g_auto - g_fd| / max(|g_auto|, |g_fd|) over all inputs
  double max_abs_error = 0;
  double grad_norm = 0;
};

using DoubleFunction = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares d<w, f(x)>/dx from backward() with central differences, where w
/// is a fixed random probe of the output's shape (a Jacobian-vector check).
inline GradCheckResult gradient_check(const DoubleFunction& f,
                                      const std::vector<Matrix<double>>& inputs, Rng& rng,
                                      double step = 1e-5) {
  std::vector<Tensor<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& m : inputs) leaves.push_back(Tensor<double>::parameter(m));

  Matrix<double> probe;
  {
    auto out = f(leaves);
    probe = normal_matrix<double>(out.rows(), out.cols(), 1.0, rng);
    auto loss = reduce_sum(hadamard(out, Tensor<double>::constant(probe)));
    loss.backward();
  }

  auto objective = [&](const std::vector<Tensor<double>>& xs) {
    NoGradScope no_grad;
    return f(xs).value().cwiseProduct(probe).sum();
  };

  double diff2 = 0, auto2 = 0, fd2 = 0, max_abs = 0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    const Matrix<double> analytic = leaves[k].grad();
    for (Index i = 0; i < leaves[k].size(); ++i) {
      std::vector<Tensor<double>> xs;
      for (const auto& m : inputs) xs.push_back(Tensor<double>::constant(m));
      double& entry = xs[k].mutable_value().data()[i];
      const double x0 = entry;
      entry = x0 + step;
      const double up = objective(xs);
      entry = x0 - step;
      const double down = objective(xs);
      const double numeric = (up - down) / (2 * step);
      const double a = analytic.data()[i];
      diff2 += (a - numeric) * (a - numeric);
      auto2 += a * a;
      fd2 += numeric * numeric;
      max_abs = std::max(max_abs, std::abs(a - numeric));
    }
  }
  GradCheckResult r;
  const double scale = std::max({std::sqrt(auto2), std::sqrt(fd2), 1e-300});
  r.relative_error = std::sqrt(diff2) / scale;
  r.max_abs_error = max_abs;
  r.grad_norm = std::sqrt(auto2);
  return r;
}

}  // namespace oqc
