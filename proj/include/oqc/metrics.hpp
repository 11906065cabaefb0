#pragma once

// Mechanism diagnostics over captured activations.

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace oqc::metrics {

/// |cos(a, b)|, with the cosine of a zero vector defined as 0.
double abs_cosine(const Eigen::Ref<const Eigen::VectorXd>& a,
                  const Eigen::Ref<const Eigen::VectorXd>& b);

struct Overlap {
  double pre = 0;       // mean |cos(q, m)|
  double post = 0;      // mean |cos(residual, m)|
  double post_max = 0;  // worst token
  std::size_t tokens = 0;
};

/// Columns are aligned tokens. Throws std::invalid_argument on empty input.
Overlap overlap_stats(const Eigen::MatrixXd& q, const Eigen::MatrixXd& m,
                      const Eigen::MatrixXd& residual);

/// exp(entropy) of the normalized singular spectrum of the mean-centered
/// N x d feature matrix. All-equal rows give 1.
double effective_rank(const Eigen::MatrixXd& features);

/// (sum lambda)^2 / sum lambda^2 over covariance eigenvalues of the
/// mean-centered features. Zero covariance gives 1.
double participation_ratio(const Eigen::MatrixXd& features);

/// Mean pairwise distance between class centroids divided by the mean
/// distance of samples to their own centroid. Needs >= 2 classes with >= 2
/// samples each.
double separation_score(const Eigen::MatrixXd& features, std::span<const int> labels);

struct GateStats {
  double mean = 0;
  double std = 0;  // population standard deviation
};

GateStats gate_stats(std::span<const double> gates);

struct LayerOverlap {
  std::size_t layer = 0;
  double pre = 0;
  double post = 0;
  double post_max = 0;
};

/// Summary of one trained model over an evaluation set.
struct MechanismReport {
  std::string variant;
  std::string host;
  std::size_t n_samples = 0;
  double accuracy = 0;
  std::vector<LayerOverlap> layers;
  std::optional<double> overlap_pre;
  std::optional<double> overlap_post;
  std::optional<double> overlap_post_max;
  std::optional<double> overlap_post_f64;  // same model re-evaluated in double
  double eff_rank = 1;
  double part_ratio = 1;
  double separation = 0;
  std::optional<double> gate_mean;
  std::optional<double> gate_std;
};

}  // namespace oqc::metrics
