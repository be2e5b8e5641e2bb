#include "pdm/unet.hpp"

#include <cmath>
#include <numbers>

#include "pdm/error.hpp"

namespace pdm {

namespace {

constexpr double kMaxFrequency = 100.0;

StackOptions stack_options(std::int64_t blocks, std::int64_t resolution, const BackboneConfig& c) {
  StackOptions opt;
  opt.blocks = blocks;
  opt.attention = resolution <= c.attention_max_resolution ? AttentionKind::spatial_channel : AttentionKind::none;
  opt.block.activation = c.activation;
  opt.block.spectral = c.spectral;
  opt.block.spectral_terminal = false;
  opt.block.temb_dim = c.time_embed_dim;
  return opt;
}

}  // namespace

TimeEmbedding::TimeEmbedding(std::int64_t dim, Rng& rng, bool spectral) : dim_(dim) {
  if (dim < 2 || dim % 2) throw InvalidArgument("time_embed_dim must be even and >= 2");
  const std::int64_t half = dim / 2;
  for (std::int64_t k = 0; k < half; ++k) {
    const double a = half == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(half - 1);
    freqs_.push_back(std::exp(a * std::log(kMaxFrequency)));
  }
  fc1 = Linear(dim, dim, rng, Init::lecun, spectral);
  fc2 = Linear(dim, dim, rng, Init::lecun, spectral);
}

Tensor TimeEmbedding::fourier_features(const std::vector<double>& t) const {
  const auto half = static_cast<std::int64_t>(freqs_.size());
  Tensor out({static_cast<std::int64_t>(t.size()), dim_});
  for (std::size_t n = 0; n < t.size(); ++n) {
    if (!(t[n] >= 0.0 && t[n] <= 1.0)) throw InvalidArgument("time must lie in [0, 1], got " + std::to_string(t[n]));
    for (std::int64_t k = 0; k < half; ++k) {
      const double a = 2.0 * std::numbers::pi * freqs_[static_cast<std::size_t>(k)] * t[n];
      out[static_cast<std::int64_t>(n) * dim_ + k] = std::sin(a);
      out[static_cast<std::int64_t>(n) * dim_ + half + k] = std::cos(a);
    }
  }
  return out;
}

Var TimeEmbedding::forward(const std::vector<double>& t) const {
  return fc2.forward(ag::silu(fc1.forward(Var::constant(fourier_features(t)))));
}

void TimeEmbedding::collect(ParamList& out, const std::string& prefix) {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

void BackboneConfig::validate() const {
  if (in_channels < 1 || resolution < 1) throw InvalidArgument("backbone: invalid latent shape");
  if (widths.empty()) throw InvalidArgument("backbone: at least one width required");
  for (auto w : widths)
    if (w < 1) throw InvalidArgument("backbone: widths must be positive");
  const auto k = num_resolutions() - 1;
  if ((resolution >> k) < 1 || (resolution >> k) << k != resolution)
    throw InvalidArgument("backbone: resolution " + std::to_string(resolution) + " cannot be halved " +
                          std::to_string(k) + " times");
  if (blocks_per_level < 1) throw InvalidArgument("backbone: blocks_per_level must be >= 1");
  if (!(p_max >= 0.0 && p_max < 1.0)) throw InvalidArgument("backbone: p_max must lie in [0, 1)");
}

Backbone::Backbone(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;
  const auto n = c.num_resolutions();
  const auto w = [&](std::int64_t k) { return c.widths[static_cast<std::size_t>(k)]; };
  dropout_ = DropoutSchedule{c.p_max, n};
  time_ = TimeEmbedding(c.time_embed_dim, rng, c.spectral);
  stem_ = Conv2d(c.in_channels, w(0), 3, rng, Init::lecun, c.spectral);
  for (std::int64_t k = 0; k + 1 < n; ++k)
    down_.emplace_back(w(k), w(k + 1), c.in_channels, rng, stack_options(c.blocks_per_level, c.resolution_at(k), c),
                       Init::lecun, c.spectral);
  middle_ = ResidualStack(w(n - 1), w(n - 1), rng, stack_options(c.blocks_per_level, c.resolution_at(n - 1), c));
  middle_rgb_ = ToRGB(w(n - 1), c.in_channels, rng, Init::lecun, c.spectral);
  for (std::int64_t k = 0; k + 1 < n; ++k) {
    skip_proj_.emplace_back(w(k), w(k + 1), 1, rng, Init::lecun, c.spectral);
    up_.emplace_back(w(k + 1), w(k), c.in_channels, rng, stack_options(c.blocks_per_level + 1, c.resolution_at(k), c),
                     Init::lecun);
    if (c.spectral) up_.back().to_rgb = ToRGB(w(k), c.in_channels, rng, Init::lecun, true);
  }
}

Var Backbone::forward(const Var& z, const std::vector<double>& t, ForwardContext& ctx) const {
  return forward(z, time_.forward(t), ctx, nullptr);
}

Var Backbone::forward(const Var& z, const Var& temb, ForwardContext& ctx, Taps* taps) const {
  const auto& c = config_;
  const auto n = c.num_resolutions();
  if (z.shape().size() != 4 || z.dim(1) != c.in_channels || z.dim(2) != c.resolution)
    throw InvalidArgument("backbone: input " + shape_string(z.shape()) + " does not match channels " +
                          std::to_string(c.in_channels) + " at resolution " + std::to_string(c.resolution));
  const auto inject = [&](Var h, std::int64_t k) {
    if (taps && static_cast<std::int64_t>(taps->inject.size()) > k && taps->inject[static_cast<std::size_t>(k)].defined())
      h = ag::add(h, taps->inject[static_cast<std::size_t>(k)]);
    return h;
  };
  const auto rate = [&](std::int64_t k) { return dropout_rate_at_level(c.dropout_level(k), dropout_); };
  if (taps) taps->features.assign(static_cast<std::size_t>(n), Var());

  Var h = stem_.forward(z);
  Var rgb = z;
  std::vector<Var> skips;
  for (std::int64_t k = 0; k + 1 < n; ++k) {
    h = inject(h, k);
    skips.push_back(h);
    auto o = down_[static_cast<std::size_t>(k)].forward(h, rgb, temb, ctx, rate(k), c.dropout_level(k));
    h = o.y;
    rgb = o.rgb;
  }
  h = inject(h, n - 1);
  h = middle_.forward(h, temb, ctx, rate(n - 1), c.dropout_level(n - 1));
  if (taps) taps->features[static_cast<std::size_t>(n - 1)] = h;
  Var skip = middle_rgb_.forward(h);
  for (std::int64_t k = n - 2; k >= 0; --k) {
    const auto i = static_cast<std::size_t>(k);
    auto o = up_[i].forward(h, skip, temb, ctx, rate(k), c.dropout_level(k), skip_proj_[i].forward(skips[i]));
    h = o.y;
    skip = o.skip;
    if (taps) taps->features[i] = h;
  }
  return skip;
}

void Backbone::collect(ParamList& out, const std::string& prefix) {
  time_.collect(out, prefix + ".time");
  stem_.collect(out, prefix + ".stem");
  for (std::size_t k = 0; k < down_.size(); ++k) down_[k].collect(out, prefix + ".down" + std::to_string(k));
  middle_.collect(out, prefix + ".middle");
  middle_rgb_.collect(out, prefix + ".middle_trgb");
  for (std::size_t k = 0; k < up_.size(); ++k) {
    skip_proj_[k].collect(out, prefix + ".skip_proj" + std::to_string(k));
    up_[k].collect(out, prefix + ".up" + std::to_string(k));
  }
}

void PyramidUNetConfig::validate() const {
  spec.validate();
  if (!use_branches && spec.num_levels() != 1)
    throw InvalidArgument("unet: disabling branches requires a single-level pyramid spec");
  if (branch_blocks < 0) throw InvalidArgument("unet: branch_blocks must be non-negative");
  backbone_config().validate();
  const auto main = spec.levels.back().resolution;
  const auto n = static_cast<std::int64_t>(backbone_level_widths.size());
  for (const auto& l : spec.levels) {
    std::int64_t k = 0;
    while (k < n && (main >> k) != l.resolution) ++k;
    if (k == n)
      throw InvalidArgument("unet: level resolution " + std::to_string(l.resolution) +
                            " is not reached by the backbone (add backbone widths)");
  }
}

BackboneConfig PyramidUNetConfig::backbone_config() const {
  BackboneConfig b;
  b.in_channels = spec.levels.back().channels;
  b.resolution = spec.levels.back().resolution;
  b.widths = backbone_level_widths;
  b.blocks_per_level = blocks_per_level;
  b.attention_max_resolution = attention_max_resolution;
  b.time_embed_dim = time_embed_dim;
  b.p_max = p_max;
  b.spectral = spectral;
  b.activation = activation;
  return b;
}

std::uint64_t PyramidUNet::backbone_seed(std::uint64_t seed) { return derive_key(seed, 0xbb); }

PyramidUNet::PyramidUNet(const PyramidUNetConfig& config) : config_(config) {
  config_.validate();
  const auto bc = config_.backbone_config();
  backbone_ = Backbone(bc, backbone_seed(config_.seed));
  if (!config_.use_branches) return;
  Rng rng(derive_key(config_.seed, 0xb4));
  for (std::int64_t i = 0; i < config_.spec.num_levels(); ++i) {
    const auto& l = config_.spec.levels[static_cast<std::size_t>(i)];
    Branch b;
    b.stage = 0;
    while ((bc.resolution >> b.stage) != l.resolution) ++b.stage;
    const auto w = bc.widths[static_cast<std::size_t>(b.stage)];
    StackOptions opt = stack_options(config_.branch_blocks, l.resolution, bc);
    b.in_proj = Conv2d(l.channels, w, 1, rng, Init::lecun, bc.spectral);
    b.in_stack = ResidualStack(w, w, rng, opt);
    b.out_stack = ResidualStack(w, w, rng, opt);
    b.out_rgb = ToRGB(w, l.channels, rng, Init::lecun, bc.spectral);
    branches_.push_back(std::move(b));
  }
}

std::vector<Var> PyramidUNet::forward(const std::vector<Var>& zt, const std::vector<double>& t,
                                      ForwardContext& ctx) const {
  const auto& spec = config_.spec;
  if (static_cast<std::int64_t>(zt.size()) != spec.num_levels())
    throw InvalidArgument("unet: expected " + std::to_string(spec.num_levels()) + " latent levels, got " +
                          std::to_string(zt.size()));
  const std::int64_t batch = zt.front().dim(0);
  for (std::int64_t i = 0; i < spec.num_levels(); ++i)
    if (zt[static_cast<std::size_t>(i)].shape() != spec.level_shape(i, batch))
      throw InvalidArgument("unet: level " + std::to_string(i) + " has shape " +
                            shape_string(zt[static_cast<std::size_t>(i)].shape()) + ", expected " +
                            shape_string(spec.level_shape(i, batch)));
  if (static_cast<std::int64_t>(t.size()) != batch)
    throw InvalidArgument("unet: need one time value per batch element");

  if (!config_.use_branches) return {backbone_.forward(zt.front(), t, ctx)};

  const auto& bc = backbone_.config();
  DropoutSchedule schedule{bc.p_max, bc.num_resolutions()};
  const auto rate = [&](std::int64_t k) { return dropout_rate_at_level(bc.dropout_level(k), schedule); };
  Var temb = backbone_.time_embedding(t);
  Backbone::Taps taps;
  taps.inject.assign(static_cast<std::size_t>(bc.num_resolutions()), Var());
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    const auto& b = branches_[i];
    taps.inject[static_cast<std::size_t>(b.stage)] =
        b.in_stack.forward(b.in_proj.forward(zt[i]), temb, ctx, rate(b.stage), bc.dropout_level(b.stage));
  }
  Var main = backbone_.forward(zt.back(), temb, ctx, &taps);
  std::vector<Var> out;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    const auto& b = branches_[i];
    Var f = b.out_stack.forward(taps.features[static_cast<std::size_t>(b.stage)], temb, ctx, rate(b.stage),
                                bc.dropout_level(b.stage));
    Var v = b.out_rgb.forward(f);
    if (i + 1 == branches_.size()) v = ag::add(v, main);
    out.push_back(v);
  }
  return out;
}

PyramidLatent PyramidUNet::forward(const PyramidLatent& zt, const std::vector<double>& t) const {
  zt.check_matches(config_.spec);
  NoGradGuard guard;
  ForwardContext ctx;
  std::vector<Var> in;
  for (const auto& l : zt.levels) in.push_back(Var::constant(l));
  PyramidLatent out;
  for (const auto& v : forward(in, t, ctx)) out.levels.push_back(v.value());
  return out;
}

ParamList PyramidUNet::parameters() {
  ParamList p;
  backbone_.collect(p, "backbone");
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    const auto prefix = "branch" + std::to_string(i);
    branches_[i].in_proj.collect(p, prefix + ".in_proj");
    branches_[i].in_stack.collect(p, prefix + ".in_stack");
    branches_[i].out_stack.collect(p, prefix + ".out_stack");
    branches_[i].out_rgb.collect(p, prefix + ".out_trgb");
  }
  return p;
}

void PyramidUNet::power_iterate(int iterations) {
  for (auto& e : parameters().spectral) pdm::power_iterate(e.weight->value(), *e.state, iterations);
}

}  // namespace pdm
