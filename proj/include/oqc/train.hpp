#pragma once

// AdamW, warmup + cosine schedule, and the single-seed training loop.

#include "oqc/dataset.hpp"
#include "oqc/metrics.hpp"
#include "oqc/vit.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace oqc {

struct OptimizerConfig {
  double peak_lr = 2e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup_fraction = 0.05;
  int epochs = 30;
  int batch_size = 64;
};

/// Linear warmup to the peak, then cosine decay to zero at the last step.
struct LrSchedule {
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  double peak_lr = 0;

  double at(std::int64_t step) const;
};

/// Decoupled-weight-decay Adam over a parameter list. Weight decay applies
/// only to parameters flagged `decay`.
template <typename Scalar>
class AdamW {
 public:
  AdamW(ParameterList<Scalar> params, const OptimizerConfig& hyper);

  /// One update at learning rate `lr`. Every trainable parameter must carry
  /// a gradient.
  void step(double lr);
  std::int64_t steps() const { return steps_; }

 private:
  ParameterList<Scalar> params_;
  OptimizerConfig hyper_;
  std::vector<Matrix<Scalar>> m_, v_;
  std::int64_t steps_ = 0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::int64_t step, double value);
  std::int64_t step;
};

struct RunRecord {
  std::string label;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<double> train_loss;     // per epoch
  std::vector<double> test_accuracy;  // per epoch
  double best_test_accuracy = 0;
  Index parameter_count = 0;
  Index analytic_parameter_count = 0;
  double images_per_second = 0;  // wall clock; kept out of the deterministic record file
};

/// Trains a fresh model from `seed`. All randomness derives from the seed.
template <typename Scalar>
RunRecord train_model(VisionTransformer<Scalar>& model, const Dataset& data,
                      const OptimizerConfig& opt, std::uint64_t seed);

template <typename Scalar>
double evaluate_accuracy(const VisionTransformer<Scalar>& model, const ImageSet& set,
                         int batch_size = 256);

/// Mechanism statistics on up to `max_samples` images of `set`. The f64
/// overlap is obtained by re-running the same parameters in double.
template <typename Scalar>
metrics::MechanismReport analyze_model(const VisionTransformer<Scalar>& model, const ImageSet& set,
                                       std::size_t max_samples = 2048, int batch_size = 128);

}  // namespace oqc
