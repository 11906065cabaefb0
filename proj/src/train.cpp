#include "oqc/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace oqc {

double LrSchedule::at(std::int64_t step) const {
  if (step < warmup_steps) {
    return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  const std::int64_t decay_steps = std::max<std::int64_t>(1, total_steps - warmup_steps);
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup_steps + 1) / static_cast<double>(decay_steps));
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename Scalar>
AdamW<Scalar>::AdamW(ParameterList<Scalar> params, const OptimizerConfig& hyper)
    : hyper_(hyper) {
  for (auto& p : params) {
    if (!p.trainable) continue;
    m_.push_back(Matrix<Scalar>::Zero(p.tensor.rows(), p.tensor.cols()));
    v_.push_back(Matrix<Scalar>::Zero(p.tensor.rows(), p.tensor.cols()));
    params_.push_back(std::move(p));
  }
}

template <typename Scalar>
void AdamW<Scalar>::step(double lr) {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw std::logic_error("adamw: missing gradient for " + p.name);
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(steps_));
  const Scalar b1 = static_cast<Scalar>(hyper_.beta1);
  const Scalar b2 = static_cast<Scalar>(hyper_.beta2);
  const Scalar step_size = static_cast<Scalar>(lr / bc1);
  const Scalar inv_bc2_sqrt = static_cast<Scalar>(1.0 / std::sqrt(bc2));
  const Scalar eps = static_cast<Scalar>(hyper_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    Matrix<Scalar>& w = p.tensor.mutable_value();
    const Matrix<Scalar> g = p.tensor.grad();
    if (p.decay && hyper_.weight_decay != 0.0) {
      w *= static_cast<Scalar>(1.0 - lr * hyper_.weight_decay);
    }
    m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
    v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
    w.array() -= step_size * m_[i].array() / ((v_[i].array().sqrt() * inv_bc2_sqrt) + eps);
  }
}

NonFiniteLoss::NonFiniteLoss(std::int64_t s, double value)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "non-finite loss " << value << " at step " << s;
        return os.str();
      }()),
      step(s) {}

namespace {

Eigen::MatrixXf gather(const ImageSet& set, std::span<const Index> idx) {
  Eigen::MatrixXf out(set.pixels.rows(), static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Index>(i)) = set.pixels.col(idx[i]);
  return out;
}

template <typename Scalar>
Index argmax_col(const Matrix<Scalar>& m, Index j) {
  Index best = 0;
  m.col(j).maxCoeff(&best);
  return best;
}

}  // namespace

template <typename Scalar>
double evaluate_accuracy(const VisionTransformer<Scalar>& model, const ImageSet& set, int batch_size) {
  NoGradScope no_grad;
  const auto& cfg = model.config();
  Index correct = 0;
  std::vector<Index> idx;
  for (Index start = 0; start < set.count(); start += batch_size) {
    const Index n = std::min<Index>(batch_size, set.count() - start);
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), start);
    auto patches = patchify<Scalar>(gather(set, idx), set.channels, set.size, cfg.patch);
    auto out = model.forward(patches, n);
    for (Index j = 0; j < n; ++j)
      if (argmax_col(out.logits.value(), j) == set.labels[static_cast<std::size_t>(start + j)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(set.count());
}

template <typename Scalar>
RunRecord train_model(VisionTransformer<Scalar>& model, const Dataset& data, const OptimizerConfig& opt,
                      std::uint64_t seed) {
  const auto& cfg = model.config();
  if (data.train.size != cfg.image_size) {
    throw std::invalid_argument("dataset image size does not match backbone.image_size");
  }
  if (opt.batch_size < 1 || opt.epochs < 1) throw std::invalid_argument("optimizer: epochs and batch_size must be >= 1");

  RunRecord rec;
  rec.seed = seed;
  rec.parameter_count = model.parameter_count();
  rec.analytic_parameter_count = analytic_parameter_count(cfg);

  AdamW<Scalar> optimizer(model.parameters(), opt);
  const Index n = data.train.count();
  const std::int64_t per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
  LrSchedule schedule;
  schedule.total_steps = per_epoch * opt.epochs;
  schedule.warmup_steps = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::llround(opt.warmup_fraction * static_cast<double>(schedule.total_steps))));
  schedule.peak_lr = opt.peak_lr;

  Rng shuffle_rng(seed ^ 0x5DEECE66DULL);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});

  constexpr std::int64_t kWarmupBatches = 5;
  double timed_seconds = 0;
  double timed_images = 0;
  std::int64_t step = 0;
  std::vector<int> labels;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    for (Index start = 0; start < n; start += opt.batch_size, ++step) {
      const auto t0 = std::chrono::steady_clock::now();
      const Index b = std::min<Index>(opt.batch_size, n - start);
      std::span<const Index> idx(order.data() + start, static_cast<std::size_t>(b));
      labels.resize(static_cast<std::size_t>(b));
      for (Index j = 0; j < b; ++j) labels[static_cast<std::size_t>(j)] = data.train.labels[static_cast<std::size_t>(idx[j])];
      auto patches = patchify<Scalar>(gather(data.train, idx), data.train.channels, data.train.size, cfg.patch);
      auto out = model.forward(patches, b);
      auto loss = cross_entropy(out.logits, labels);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) throw NonFiniteLoss(step, lv);
      model.zero_grad();
      loss.backward();
      optimizer.step(schedule.at(step));
      loss_sum += lv * static_cast<double>(b);
      if (step >= kWarmupBatches) {
        timed_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        timed_images += static_cast<double>(b);
      }
    }
    rec.train_loss.push_back(loss_sum / static_cast<double>(n));
    const double acc = evaluate_accuracy(model, data.test);
    rec.test_accuracy.push_back(acc);
    rec.best_test_accuracy = std::max(rec.best_test_accuracy, acc);
  }
  rec.images_per_second = timed_seconds > 0 ? timed_images / timed_seconds : 0.0;
  return rec;
}

namespace {

struct OverlapAccumulator {
  double pre = 0, post = 0, post_max = 0;
  std::size_t tokens = 0;
  void add(const metrics::Overlap& o) {
    pre += o.pre * static_cast<double>(o.tokens);
    post += o.post * static_cast<double>(o.tokens);
    post_max = std::max(post_max, o.post_max);
    tokens += o.tokens;
  }
};

template <typename Scalar>
std::vector<OverlapAccumulator> overlaps_over(const VisionTransformer<Scalar>& model, const ImageSet& set,
                                              Index count, int batch_size,
                                              std::vector<double>* gates, Eigen::MatrixXd* features,
                                              Index* correct) {
  NoGradScope no_grad;
  const auto& cfg = model.config();
  std::vector<OverlapAccumulator> acc(static_cast<std::size_t>(cfg.depth));
  std::vector<Index> idx;
  for (Index start = 0; start < count; start += batch_size) {
    const Index n = std::min<Index>(batch_size, count - start);
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), start);
    auto patches = patchify<Scalar>(gather(set, idx), set.channels, set.size, cfg.patch);
    ModelCapture<Scalar> capture;
    auto out = model.forward(patches, n, &capture);
    for (std::size_t l = 0; l < capture.layers.size(); ++l) {
      const auto& c = capture.layers[l];
      if (c.q.size() == 0) continue;
      acc[l].add(metrics::overlap_stats(c.q.template cast<double>(), c.m.template cast<double>(),
                                        c.residual.template cast<double>()));
      if (gates && c.gate.size() != 0 && model.blocks()[l].ffn.gated()) {
        if (c.gate.size() == 1) {
          gates->insert(gates->end(), static_cast<std::size_t>(c.q.cols()), static_cast<double>(c.gate(0, 0)));
        } else {
          for (Index i = 0; i < c.gate.size(); ++i) gates->push_back(static_cast<double>(c.gate.data()[i]));
        }
      }
    }
    if (features) features->middleRows(start, n) = out.z.value().transpose().template cast<double>();
    if (correct) {
      for (Index j = 0; j < n; ++j)
        if (argmax_col(out.logits.value(), j) == set.labels[static_cast<std::size_t>(start + j)]) ++*correct;
    }
  }
  return acc;
}

}  // namespace

template <typename Scalar>
metrics::MechanismReport analyze_model(const VisionTransformer<Scalar>& model, const ImageSet& set,
                                       std::size_t max_samples, int batch_size) {
  const auto& cfg = model.config();
  const Index count = std::min<Index>(set.count(), static_cast<Index>(max_samples));
  metrics::MechanismReport report;
  report.n_samples = static_cast<std::size_t>(count);
  report.host = cfg.ffn.host == HostKind::Mlp ? "mlp" : "bilinear";
  report.variant = cfg.ffn.complement ? std::string(to_string(*cfg.ffn.complement)) : "none";

  std::vector<double> gates;
  Eigen::MatrixXd features(count, cfg.width);
  Index correct = 0;
  auto acc = overlaps_over(model, set, count, batch_size, &gates, &features, &correct);
  report.accuracy = static_cast<double>(correct) / static_cast<double>(count);

  if (cfg.ffn.complement) {
    OverlapAccumulator total;
    for (std::size_t l = 0; l < acc.size(); ++l) {
      const auto& a = acc[l];
      const double t = static_cast<double>(std::max<std::size_t>(1, a.tokens));
      report.layers.push_back({l, a.pre / t, a.post / t, a.post_max});
      total.pre += a.pre;
      total.post += a.post;
      total.post_max = std::max(total.post_max, a.post_max);
      total.tokens += a.tokens;
    }
    const double t = static_cast<double>(std::max<std::size_t>(1, total.tokens));
    report.overlap_pre = total.pre / t;
    report.overlap_post = total.post / t;
    report.overlap_post_max = total.post_max;
    if constexpr (std::is_same_v<Scalar, double>) {
      report.overlap_post_f64 = report.overlap_post;
    } else {
      VisionTransformer<double> wide(cfg, 0);
      wide.copy_parameters_from(model);
      auto acc64 = overlaps_over(wide, set, count, batch_size, nullptr, nullptr, nullptr);
      double post = 0;
      std::size_t tokens = 0;
      for (const auto& a : acc64) {
        post += a.post;
        tokens += a.tokens;
      }
      report.overlap_post_f64 = post / static_cast<double>(std::max<std::size_t>(1, tokens));
    }
  }
  if (count >= 2) {
    report.eff_rank = metrics::effective_rank(features);
    report.part_ratio = metrics::participation_ratio(features);
    std::vector<int> labels(set.labels.begin(), set.labels.begin() + count);
    report.separation = metrics::separation_score(features, labels);
  }
  if (!gates.empty()) {
    const auto g = metrics::gate_stats(gates);
    report.gate_mean = g.mean;
    report.gate_std = g.std;
  }
  return report;
}

template class AdamW<float>;
template class AdamW<double>;
template RunRecord train_model(VisionTransformer<float>&, const Dataset&, const OptimizerConfig&, std::uint64_t);
template RunRecord train_model(VisionTransformer<double>&, const Dataset&, const OptimizerConfig&, std::uint64_t);
template double evaluate_accuracy(const VisionTransformer<float>&, const ImageSet&, int);
template double evaluate_accuracy(const VisionTransformer<double>&, const ImageSet&, int);
template metrics::MechanismReport analyze_model(const VisionTransformer<float>&, const ImageSet&, std::size_t, int);
template metrics::MechanismReport analyze_model(const VisionTransformer<double>&, const ImageSet&, std::size_t, int);

}  // namespace oqc
