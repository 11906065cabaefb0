#include "oqc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace oqc::metrics {

double abs_cosine(const Eigen::Ref<const Eigen::VectorXd>& a,
                  const Eigen::Ref<const Eigen::VectorXd>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::min(1.0, std::abs(a.dot(b)) / (na * nb));
}

Overlap overlap_stats(const Eigen::MatrixXd& q, const Eigen::MatrixXd& m,
                      const Eigen::MatrixXd& residual) {
  if (q.cols() == 0 || q.rows() == 0) throw std::invalid_argument("overlap_stats: empty sample set");
  if (q.rows() != m.rows() || q.cols() != m.cols() || residual.rows() != m.rows() ||
      residual.cols() != m.cols()) {
    throw std::invalid_argument("overlap_stats: misaligned sample sets");
  }
  Overlap out;
  out.tokens = static_cast<std::size_t>(q.cols());
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    out.pre += abs_cosine(q.col(j), m.col(j));
    const double c = abs_cosine(residual.col(j), m.col(j));
    out.post += c;
    out.post_max = std::max(out.post_max, c);
  }
  out.pre /= static_cast<double>(q.cols());
  out.post /= static_cast<double>(q.cols());
  return out;
}

namespace {

Eigen::MatrixXd centered(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw std::invalid_argument("geometry metrics need at least 2 samples");
  return x.rowwise() - x.colwise().mean();
}

// Singular values below the numerical-rank threshold are treated as zero.
Eigen::VectorXd singular_values(const Eigen::MatrixXd& xc) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(xc);
  Eigen::VectorXd s = svd.singularValues();
  if (s.size() == 0) return s;
  const double cutoff = s.maxCoeff() * static_cast<double>(std::max(xc.rows(), xc.cols())) *
                        std::numeric_limits<double>::epsilon();
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) <= cutoff) s(i) = 0.0;
  return s;
}

}  // namespace

double effective_rank(const Eigen::MatrixXd& features) {
  const Eigen::MatrixXd xc = centered(features);
  const Eigen::VectorXd s = singular_values(xc);
  const double total = s.sum();
  if (total <= 0.0) return 1.0;
  double entropy = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double p = s(i) / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

double participation_ratio(const Eigen::MatrixXd& features) {
  const Eigen::MatrixXd xc = centered(features);
  // trace(C)^2 / trace(C^2) without an eigensolver; the scale of C cancels.
  const Eigen::MatrixXd gram =
      xc.cols() <= xc.rows() ? Eigen::MatrixXd(xc.transpose() * xc) : Eigen::MatrixXd(xc * xc.transpose());
  const double trace = gram.trace();
  const double frob2 = gram.squaredNorm();
  if (trace <= 0.0 || frob2 <= 0.0) return 1.0;
  return trace * trace / frob2;
}

double separation_score(const Eigen::MatrixXd& features, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw std::invalid_argument("separation_score: label count does not match rows");
  }
  std::map<int, std::vector<Eigen::Index>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(static_cast<Eigen::Index>(i));
  if (members.size() < 2) throw std::invalid_argument("separation_score: needs at least 2 classes");
  std::vector<Eigen::VectorXd> centroids;
  centroids.reserve(members.size());
  double intra = 0.0;
  for (const auto& [label, rows] : members) {
    if (rows.size() < 2) {
      throw std::invalid_argument("separation_score: class " + std::to_string(label) +
                                  " has fewer than 2 samples");
    }
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(features.cols());
    for (auto r : rows) mu += features.row(r).transpose();
    mu /= static_cast<double>(rows.size());
    for (auto r : rows) intra += (features.row(r).transpose() - mu).norm();
    centroids.push_back(std::move(mu));
  }
  intra /= static_cast<double>(features.rows());
  double inter = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < centroids.size(); ++a)
    for (std::size_t b = a + 1; b < centroids.size(); ++b, ++pairs)
      inter += (centroids[a] - centroids[b]).norm();
  inter /= static_cast<double>(pairs);
  if (intra == 0.0) return inter > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return inter / intra;
}

GateStats gate_stats(std::span<const double> gates) {
  if (gates.empty()) throw std::invalid_argument("gate_stats: no gate values");
  GateStats s;
  for (double g : gates) s.mean += g;
  s.mean /= static_cast<double>(gates.size());
  double var = 0.0;
  for (double g : gates) var += (g - s.mean) * (g - s.mean);
  s.std = std::sqrt(var / static_cast<double>(gates.size()));
  return s;
}

}  // namespace oqc::metrics
