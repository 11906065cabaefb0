#include "oqc/vit.hpp"

#include <array>
#include <stdexcept>
#include <utility>

namespace oqc {

namespace {

constexpr std::array<std::pair<VariantKind, std::string_view>, 7> kVariantNames{{
    {VariantKind::Full, "full"},
    {VariantKind::LowRank, "lr"},
    {VariantKind::StaticGate, "static"},
    {VariantKind::DynamicGate, "dynamic"},
    {VariantKind::AblationSharedProjection, "shared_projection"},
    {VariantKind::AblationNoOrtho, "no_ortho"},
    {VariantKind::AblationNoGate, "no_gate"},
}};

}  // namespace

std::string_view to_string(VariantKind kind) {
  for (const auto& [k, name] : kVariantNames)
    if (k == kind) return name;
  return "unknown";
}

std::optional<VariantKind> parse_variant_kind(std::string_view name) {
  for (const auto& [k, n] : kVariantNames)
    if (n == name) return k;
  return std::nullopt;
}

std::string_view to_string(InnerProductScope scope) {
  return scope == InnerProductScope::PerToken ? "per_token" : "global";
}

std::optional<InnerProductScope> parse_scope(std::string_view name) {
  if (name == "per_token") return InnerProductScope::PerToken;
  if (name == "global") return InnerProductScope::Global;
  return std::nullopt;
}

void validate(const BackboneConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument(field + ": " + why);
  };
  if (c.depth < 1) fail("backbone.depth", "must be >= 1");
  if (c.width < 1) fail("backbone.width", "must be >= 1");
  if (c.heads < 1 || c.width % c.heads != 0) fail("backbone.heads", "must divide backbone.width");
  if (c.patch < 1 || c.image_size < 1 || c.image_size % c.patch != 0) {
    fail("backbone.patch", "must divide backbone.image_size");
  }
  if (c.n_classes < 2) fail("dataset.n_classes", "must be >= 2");
  if (c.use_pr_readout && c.depth < 2) fail("backbone.pr_readout", "needs depth >= 2");
  const Index hidden = kHiddenExpansion * c.width;
  if (c.ffn.host == HostKind::Bilinear &&
      (c.ffn.groups < 1 || c.width % c.ffn.groups != 0 || hidden % c.ffn.groups != 0)) {
    fail("variant.bilinear_groups", "must divide width and hidden width");
  }
  if (c.ffn.complement) {
    if (c.ffn.rank < 1 || c.ffn.rank >= c.width) fail("variant.rank", "must satisfy 0 < rank < width");
    if (*c.ffn.complement == VariantKind::AblationSharedProjection && 2 * c.ffn.rank > hidden) {
      fail("variant.rank", "shared projection needs 2*rank <= 4*width");
    }
  }
}

Index analytic_parameter_count(const BackboneConfig& cfg) {
  const Index c = cfg.width;
  const Index hidden = kHiddenExpansion * c;
  const Index r = cfg.ffn.rank;

  Index host = 0;
  if (cfg.ffn.host == HostKind::Mlp) {
    host = hidden * c + hidden;
  } else {
    host = 2 * (hidden * c / cfg.ffn.groups) + 2 * hidden;
  }
  Index complement = 0;
  if (cfg.ffn.complement) {
    const VariantKind k = *cfg.ffn.complement;
    const bool projects = k != VariantKind::AblationNoOrtho;
    const Index lift = k == VariantKind::Full ? hidden : c;
    if (k != VariantKind::AblationSharedProjection) complement += 2 * r * c;  // U, V
    if (projects) complement += r * hidden + 2 * r;                           // P, gain_m, gain_perp
    complement += lift * r + r;                                               // O, gain_q
    if (k != VariantKind::Full && projects) complement += lift;               // gain_delta
    if (k == VariantKind::DynamicGate) {
      const Index rows = cfg.ffn.per_channel_gate ? c : 1;
      complement += rows * c + rows;
    } else if (k != VariantKind::AblationNoGate) {
      complement += 1;  // beta (static gate owns its own)
    }
  }
  const Index ffn = host + hidden * c + c + complement;
  const Index block = 2 * c + (3 * c * c + 3 * c) + (c * c + c) + 2 * c + ffn;
  Index total = c * cfg.patch_dim() + c + c * cfg.tokens();
  total += cfg.depth * block;
  if (cfg.use_pr_readout) total += 1;
  total += 2 * c + cfg.n_classes * c + cfg.n_classes;
  return total;
}

}  // namespace oqc
