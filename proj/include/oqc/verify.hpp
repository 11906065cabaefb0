#pragma once

// Invariant suites shared by `oqc verify` and the acceptance tests.

#include "oqc/gradcheck.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace oqc::verify {

/// Draws one random instance: the function under test and its inputs.
struct GradientCase {
  std::string name;
  std::function<std::pair<DoubleFunction, std::vector<Matrix<double>>>(Rng&)> make;
};

/// One case per differentiable primitive in ops.hpp.
std::vector<GradientCase> primitive_gradient_cases();
/// Quadratic feature -> projection -> injection paths for every injection form.
std::vector<GradientCase> complement_gradient_cases();
/// MLP and bilinear host forward passes.
std::vector<GradientCase> host_gradient_cases();

/// Worst relative error over `trials` draws of each case.
std::vector<std::pair<std::string, double>> worst_gradient_errors(const std::vector<GradientCase>& cases,
                                                                  int trials, Rng& rng);

struct SuiteResult {
  std::string name;
  bool passed = false;
  double worst = 0;      // worst-case error magnitude of the suite
  double threshold = 0;
  std::string detail;
  double seconds = 0;
};

/// Per-token overlap of the projection residual with m over random layers of
/// every non-ablation variant.
struct OrthogonalityStats {
  std::size_t tokens = 0;
  double pre_mean = 0;
  double post_mean = 0;
  double post_max = 0;
};

template <typename Scalar>
OrthogonalityStats orthogonality_stats(Index tokens_per_variant, std::uint64_t seed);

SuiteResult gradient_suite(int trials = 100, std::uint64_t seed = 7);
SuiteResult orthogonality_suite(Index tokens_per_variant = 2500, std::uint64_t seed = 11);
SuiteResult overlap_contrast_suite(Index tokens_per_variant = 2500, std::uint64_t seed = 13);
SuiteResult metric_oracle_suite(int matrices = 50, std::uint64_t seed = 17);
SuiteResult equivalence_suite(std::uint64_t seed = 19);

std::vector<SuiteResult> run_all();

}  // namespace oqc::verify
