#pragma once

// Small pre-norm vision transformer with a pluggable feed-forward layer and an
// optional penultimate-residual readout.

#include "oqc/complement.hpp"

#include <string>
#include <vector>

namespace oqc {

struct BackboneConfig {
  Index depth = 4;
  Index width = 64;
  Index heads = 4;
  Index patch = 4;
  Index image_size = 32;
  Index in_channels = 3;
  Index n_classes = 10;
  FfnVariant ffn;
  bool use_pr_readout = true;

  Index grid() const { return image_size / patch; }
  Index tokens() const { return grid() * grid(); }
  Index patch_dim() const { return in_channels * patch * patch; }
};

/// Throws std::invalid_argument naming the offending field.
void validate(const BackboneConfig& config);

/// Closed-form trainable parameter count for a configuration.
Index analytic_parameter_count(const BackboneConfig& config);

/// Rearranges images (one column of C*S*S pixels per image, channel-major,
/// then row, then column) into patch columns: (C*p*p) x (B*T), token order
/// row-major over the patch grid.
template <typename Scalar, typename Derived>
Matrix<Scalar> patchify(const Eigen::MatrixBase<Derived>& images, Index channels, Index size,
                        Index patch) {
  if (patch <= 0 || size % patch != 0) {
    throw DimensionError("patchify: image size " + std::to_string(size) +
                         " not divisible by patch " + std::to_string(patch));
  }
  if (images.rows() != channels * size * size) {
    throw DimensionError("patchify: expected " + std::to_string(channels * size * size) +
                         " pixels per image, got " + std::to_string(images.rows()));
  }
  const Index g = size / patch;
  const Index tokens = g * g;
  const Index batch = images.cols();
  Matrix<Scalar> out(channels * patch * patch, batch * tokens);
  for (Index b = 0; b < batch; ++b)
    for (Index gy = 0; gy < g; ++gy)
      for (Index gx = 0; gx < g; ++gx) {
        const Index col = b * tokens + gy * g + gx;
        Index row = 0;
        for (Index c = 0; c < channels; ++c)
          for (Index dy = 0; dy < patch; ++dy)
            for (Index dx = 0; dx < patch; ++dx) {
              const Index y = gy * patch + dy;
              const Index x = gx * patch + dx;
              out(row++, col) = static_cast<Scalar>(images(c * size * size + y * size + x, b));
            }
      }
  return out;
}

/// Linear projection of patch columns: C x (B*T).
template <typename Scalar>
Tensor<Scalar> patch_embed(const Tensor<Scalar>& patches, const Tensor<Scalar>& weight,
                           const Tensor<Scalar>& bias) {
  return add_bias(matmul(weight, patches), bias);
}

template <typename Scalar>
struct Block {
  Tensor<Scalar> ln1_g, ln1_b;
  Tensor<Scalar> qkv_w, qkv_b;
  Tensor<Scalar> proj_w, proj_b;
  Tensor<Scalar> ln2_g, ln2_b;
  FeedForward<Scalar> ffn;
  Index heads = 1;

  Block() = default;
  Block(const BackboneConfig& cfg, Rng& rng) : heads(cfg.heads) {
    const Index c = cfg.width;
    auto ones = [](Index n) { return Tensor<Scalar>::parameter(Matrix<Scalar>::Ones(n, 1)); };
    auto zeros = [](Index n) { return Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(n, 1)); };
    ln1_g = ones(c);
    ln1_b = zeros(c);
    qkv_w = Tensor<Scalar>::parameter(fan_in_normal<Scalar>(3 * c, c, rng));
    qkv_b = zeros(3 * c);
    proj_w = Tensor<Scalar>::parameter(fan_in_normal<Scalar>(c, c, rng));
    proj_b = zeros(c);
    ln2_g = ones(c);
    ln2_b = zeros(c);
    Rng ffn_rng = child_rng(rng);
    ffn = FeedForward<Scalar>(cfg.ffn, c, ffn_rng);
  }

  Tensor<Scalar> attention_branch(const Tensor<Scalar>& h, Index batch) const {
    auto x = layernorm(h, ln1_g, ln1_b, Scalar(1e-6));
    auto qkv = add_bias(matmul(qkv_w, x), qkv_b);
    return add_bias(matmul(proj_w, attention(qkv, batch, heads)), proj_b);
  }

  /// h + MHSA(LN(h)), then + FFN(LN(.)).
  Tensor<Scalar> forward(const Tensor<Scalar>& h, Index batch,
                         ComplementCapture<Scalar>* capture = nullptr) const {
    auto h1 = add(h, attention_branch(h, batch));
    auto x = layernorm(h1, ln2_g, ln2_b, Scalar(1e-6));
    return add(h1, ffn.forward(x, h.cols() / batch, capture));
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    auto push = [&](const char* n, const Tensor<Scalar>& t, bool decay) {
      out.push_back({prefix + n, t, decay, std::nullopt});
    };
    push("ln1_g", ln1_g, false);
    push("ln1_b", ln1_b, false);
    push("qkv_w", qkv_w, true);
    push("qkv_b", qkv_b, false);
    push("proj_w", proj_w, true);
    push("proj_b", proj_b, false);
    push("ln2_g", ln2_g, false);
    push("ln2_b", ln2_b, false);
    ffn.collect(out, prefix + "ffn.");
  }
};

/// z = pool(h_L) + sigmoid(gamma) pool(h_{L-1}); pooling is the token mean.
template <typename Scalar>
Tensor<Scalar> pr_readout(const Tensor<Scalar>& h_last, const Tensor<Scalar>& h_penultimate,
                          const Tensor<Scalar>& gamma, Index batch) {
  return add(pool_tokens(h_last, batch), scale_by(pool_tokens(h_penultimate, batch), sigmoid(gamma)));
}

template <typename Scalar>
struct ModelOutput {
  Tensor<Scalar> logits;               // classes x B
  Tensor<Scalar> z;                    // readout, C x B
  std::vector<Tensor<Scalar>> states;  // h_1 .. h_L
};

template <typename Scalar>
struct ModelCapture {
  std::vector<ComplementCapture<Scalar>> layers;
};

template <typename Scalar>
class VisionTransformer {
 public:
  VisionTransformer() = default;
  VisionTransformer(const BackboneConfig& cfg, std::uint64_t seed) : config_(cfg) {
    validate(cfg);
    Rng rng(seed);
    const Index c = cfg.width;
    patch_w_ = Tensor<Scalar>::parameter(fan_in_normal<Scalar>(c, cfg.patch_dim(), rng));
    patch_b_ = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(c, 1));
    pos_ = Tensor<Scalar>::parameter(normal_matrix<Scalar>(c, cfg.tokens(), 0.02, rng));
    blocks_.reserve(static_cast<std::size_t>(cfg.depth));
    for (Index l = 0; l < cfg.depth; ++l) {
      Rng block_rng = child_rng(rng);
      blocks_.emplace_back(cfg, block_rng);
    }
    if (cfg.use_pr_readout) gamma_ = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(1, 1));
    head_ln_g_ = Tensor<Scalar>::parameter(Matrix<Scalar>::Ones(c, 1));
    head_ln_b_ = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(c, 1));
    head_w_ = Tensor<Scalar>::parameter(fan_in_normal<Scalar>(cfg.n_classes, c, rng));
    head_b_ = Tensor<Scalar>::parameter(Matrix<Scalar>::Zero(cfg.n_classes, 1));
  }

  const BackboneConfig& config() const { return config_; }
  const std::vector<Block<Scalar>>& blocks() const { return blocks_; }
  std::vector<Block<Scalar>>& blocks() { return blocks_; }
  Tensor<Scalar>& gamma() { return gamma_; }

  /// `patches` from patchify(); batch = number of images.
  ModelOutput<Scalar> forward(const Matrix<Scalar>& patches, Index batch,
                              ModelCapture<Scalar>* capture = nullptr) const {
    if (patches.cols() != batch * config_.tokens()) {
      throw DimensionError("forward: patch columns do not match batch x tokens");
    }
    ModelOutput<Scalar> out;
    auto h = add_positional(patch_embed(Tensor<Scalar>::constant(patches), patch_w_, patch_b_), pos_);
    if (capture) capture->layers.assign(blocks_.size(), {});
    out.states.reserve(blocks_.size());
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      h = blocks_[l].forward(h, batch, capture ? &capture->layers[l] : nullptr);
      out.states.push_back(h);
    }
    const auto& last = out.states.back();
    if (config_.use_pr_readout) {
      out.z = pr_readout(last, out.states[out.states.size() - 2], gamma_, batch);
    } else {
      out.z = pool_tokens(last, batch);
    }
    auto normed = layernorm(out.z, head_ln_g_, head_ln_b_, Scalar(1e-6));
    out.logits = add_bias(matmul(head_w_, normed), head_b_);
    return out;
  }

  ParameterList<Scalar> parameters() const {
    ParameterList<Scalar> out;
    out.push_back({"patch_w", patch_w_, true, std::nullopt});
    out.push_back({"patch_b", patch_b_, false, std::nullopt});
    out.push_back({"pos", pos_, false, std::nullopt});
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      blocks_[l].collect(out, "blocks." + std::to_string(l) + ".");
    }
    if (gamma_.defined()) out.push_back({"gamma", gamma_, false, std::nullopt});
    out.push_back({"head_ln_g", head_ln_g_, false, std::nullopt});
    out.push_back({"head_ln_b", head_ln_b_, false, std::nullopt});
    out.push_back({"head_w", head_w_, true, std::nullopt});
    out.push_back({"head_b", head_b_, false, std::nullopt});
    return out;
  }

  /// Trainable entries, excluding structural zeros of grouped maps.
  Index parameter_count() const {
    Index n = 0;
    for (const auto& p : parameters())
      if (p.trainable) n += p.effective_size();
    return n;
  }

  /// Copies parameter values from a model of another precision with the
  /// same configuration.
  template <typename Other>
  void copy_parameters_from(const VisionTransformer<Other>& other) {
    auto dst = parameters();
    auto src = other.parameters();
    if (dst.size() != src.size()) throw std::invalid_argument("copy_parameters_from: layout differs");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i].name != src[i].name || dst[i].tensor.rows() != src[i].tensor.rows() ||
          dst[i].tensor.cols() != src[i].tensor.cols()) {
        throw std::invalid_argument("copy_parameters_from: mismatch at " + dst[i].name);
      }
      dst[i].tensor.mutable_value() = src[i].tensor.value().template cast<Scalar>();
    }
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

 private:
  BackboneConfig config_;
  Tensor<Scalar> patch_w_, patch_b_, pos_;
  std::vector<Block<Scalar>> blocks_;
  Tensor<Scalar> gamma_;
  Tensor<Scalar> head_ln_g_, head_ln_b_, head_w_, head_b_;
};

}  // namespace oqc
