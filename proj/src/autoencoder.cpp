#include "pdm/autoencoder.hpp"

#include <cmath>
#include <limits>

#include "pdm/error.hpp"

namespace pdm {

namespace {

std::int64_t log2_exact(std::int64_t ratio) {
  std::int64_t s = 0;
  while ((std::int64_t{1} << s) < ratio) ++s;
  return (std::int64_t{1} << s) == ratio ? s : -1;
}

}  // namespace

std::int64_t AutoencoderConfig::stages() const {
  return log2_exact(spec.image_height / spec.levels.front().resolution);
}

void AutoencoderConfig::validate() const {
  spec.validate();
  const std::int64_t s = stages();
  if (s < 0 || spec.image_height % spec.levels.front().resolution)
    throw InvalidArgument("lowest level resolution must be image_height / 2^k");
  if (spec.image_width % (std::int64_t{1} << s))
    throw InvalidArgument("image width must be divisible by 2^" + std::to_string(s));
  for (const auto& l : spec.levels)
    if (log2_exact(spec.image_height / l.resolution) < 0)
      throw InvalidArgument("level resolution " + std::to_string(l.resolution) + " is not image_height / 2^k");
  if (static_cast<std::int64_t>(widths.size()) != s + 1)
    throw InvalidArgument("autoencoder needs " + std::to_string(s + 1) + " widths (one per resolution), got " +
                          std::to_string(widths.size()));
  for (auto w : widths)
    if (w < 1) throw InvalidArgument("autoencoder widths must be positive");
  if (encoder_blocks < 0 || branch_blocks < 0) throw InvalidArgument("block counts must be non-negative");
  if (!(decoder_p_max >= 0.0 && decoder_p_max < 1.0)) throw InvalidArgument("decoder p_max must lie in [0, 1)");
  if (!(kl_weight >= 0.0)) throw InvalidArgument("kl_weight must be non-negative");
}

PyramidAutoencoder::PyramidAutoencoder(const AutoencoderConfig& config) : config_(config) {
  config_.validate();
  Rng rng(derive_key(config_.seed, 0xae));
  const auto& spec = config_.spec;
  const std::int64_t stages = config_.stages();
  const std::int64_t rgb = spec.image_channels;
  const auto res_at = [&](std::int64_t s) { return spec.image_height >> s; };

  // Encoder: every weight is spectrally normalized.
  enc_in_ = FromRGB(rgb, config_.widths[0], rng, Init::lecun, true);
  for (std::int64_t s = 0; s < stages; ++s) {
    const auto in = config_.widths[static_cast<std::size_t>(s)];
    const auto out = config_.widths[static_cast<std::size_t>(s + 1)];
    if (config_.lipschitz_chain) {
      chain_convs_.emplace_back(in, out, 1, rng, Init::lecun, true);
      continue;
    }
    StackOptions opt;
    opt.blocks = config_.encoder_blocks;
    opt.attention = res_at(s) <= config_.attention_max_resolution ? AttentionKind::linear : AttentionKind::none;
    opt.block.activation = config_.activation;
    opt.block.spectral = true;
    opt.block.spectral_terminal = true;
    enc_down_.emplace_back(in, out, rgb, rng, opt, Init::lecun, true);
  }
  for (std::int64_t i = 0; i < spec.num_levels(); ++i) {
    const auto s = log2_exact(spec.image_height / spec.level_height(i));
    const auto width = config_.widths[static_cast<std::size_t>(s)];
    const auto ch = spec.levels[static_cast<std::size_t>(i)].channels;
    mean_heads_.emplace_back(width, ch, 1, rng, Init::lecun, true);
    logvar_heads_.emplace_back(width, ch, 1, rng, Init::lecun, true);
    logvar_heads_.back().bias.mutable_value().fill(config_.logvar_init);
  }

  // Decoder: unconstrained, one more block per module than the encoder.
  dec_dropout_ = DropoutSchedule{config_.decoder_p_max, stages + 1};
  for (std::int64_t i = 0; i < spec.num_levels(); ++i) {
    const auto s = log2_exact(spec.image_height / spec.level_height(i));
    const auto width = config_.widths[static_cast<std::size_t>(s)];
    StackOptions opt;
    opt.blocks = config_.branch_blocks;
    opt.attention = spec.level_height(i) <= config_.attention_max_resolution ? AttentionKind::spatial_channel
                                                                            : AttentionKind::none;
    opt.block.activation = config_.activation;
    Branch b;
    b.input = Conv2d(spec.levels[static_cast<std::size_t>(i)].channels, width, 1, rng);
    b.stack = ResidualStack(width, width, rng, opt);
    branches_.push_back(std::move(b));
  }
  dec_base_rgb_ = ToRGB(config_.widths[static_cast<std::size_t>(stages)], rgb, rng);
  for (std::int64_t s = stages; s >= 1; --s) {
    StackOptions opt;
    opt.blocks = config_.encoder_blocks + 1;
    opt.attention = res_at(s - 1) <= config_.attention_max_resolution ? AttentionKind::spatial_channel
                                                                      : AttentionKind::none;
    opt.block.activation = config_.activation;
    dec_up_.emplace_back(config_.widths[static_cast<std::size_t>(s)], config_.widths[static_cast<std::size_t>(s - 1)],
                         rgb, rng, opt);
  }
}

void PyramidAutoencoder::check_image(const Tensor& image) const {
  const auto fs = FeatureShape::of(image);
  const auto& spec = config_.spec;
  if (fs.channels != spec.image_channels || fs.height != spec.image_height || fs.width != spec.image_width)
    throw InvalidArgument("image shape " + shape_string(image.shape()) + " does not match spec " +
                          shape_string(spec.image_shape(fs.batch)));
  for (double v : image.values()) {
    if (!std::isfinite(v)) throw DataError("encode: image contains non-finite values");
    if (v < -1.0 - 1e-9 || v > 1.0 + 1e-9) throw InvalidArgument("encode: pixel values must lie in [-1, 1]");
  }
}

PyramidAutoencoder::Encoded PyramidAutoencoder::encode(const Var& image, ForwardContext& ctx, EncodeMode mode) const {
  check_image(image.value());
  const auto& spec = config_.spec;
  const std::int64_t stages = config_.stages();
  std::vector<Var> taps(static_cast<std::size_t>(stages + 1));

  Var h = enc_in_.forward(image);
  taps[0] = h;
  Var rgb = image;
  for (std::int64_t s = 0; s < stages; ++s) {
    if (config_.lipschitz_chain) {
      h = ag::avg_pool2(activate(chain_convs_[static_cast<std::size_t>(s)].forward(h), config_.activation));
    } else {
      auto o = enc_down_[static_cast<std::size_t>(s)].forward(h, rgb, Var(), ctx, 0.0, s);
      h = o.y;
      rgb = o.rgb;
    }
    taps[static_cast<std::size_t>(s + 1)] = h;
  }

  Encoded out;
  const std::int64_t batch = image.dim(0);
  for (std::int64_t i = 0; i < spec.num_levels(); ++i) {
    const auto s = log2_exact(spec.image_height / spec.level_height(i));
    const Var& feat = taps[static_cast<std::size_t>(s)];
    Var mean = mean_heads_[static_cast<std::size_t>(i)].forward(feat);
    Var logvar = logvar_heads_[static_cast<std::size_t>(i)].forward(feat);
    Var z = mean;
    if (mode == EncodeMode::sample) {
      Tensor noise(mean.shape());
      const std::int64_t per = noise.numel() / batch;
      for (std::int64_t n = 0; n < batch; ++n) {
        Rng r(derive_key(ctx.sample_key(n), 0x1a7e, static_cast<std::uint64_t>(i)));
        for (std::int64_t k = 0; k < per; ++k) noise[n * per + k] = r.normal();
      }
      z = ag::add(mean, ag::mul(ag::exp(ag::scale(logvar, 0.5)), Var::constant(std::move(noise))));
    }
    out.latents.push_back(z);
    out.means.push_back(mean);
    out.logvars.push_back(logvar);
  }
  return out;
}

Var PyramidAutoencoder::decode(const std::vector<Var>& latents, ForwardContext& ctx) const {
  const auto& spec = config_.spec;
  if (static_cast<std::int64_t>(latents.size()) != spec.num_levels())
    throw InvalidArgument("decode: expected " + std::to_string(spec.num_levels()) + " latent levels, got " +
                          std::to_string(latents.size()));
  const std::int64_t batch = latents.front().dim(0);
  for (std::int64_t i = 0; i < spec.num_levels(); ++i)
    if (latents[static_cast<std::size_t>(i)].shape() != spec.level_shape(i, batch))
      throw InvalidArgument("decode: latent level " + std::to_string(i) + " has shape " +
                            shape_string(latents[static_cast<std::size_t>(i)].shape()) + ", expected " +
                            shape_string(spec.level_shape(i, batch)));

  const std::int64_t stages = config_.stages();
  auto branch = [&](std::int64_t i, std::int64_t level) {
    const auto& b = branches_[static_cast<std::size_t>(i)];
    Var x = b.input.forward(latents[static_cast<std::size_t>(i)]);
    return b.stack.forward(x, Var(), ctx, dropout_rate_at_level(level, dec_dropout_), level);
  };

  Var h = branch(0, 0);
  Var skip = dec_base_rgb_.forward(h);
  for (std::int64_t j = 0; j < stages; ++j) {
    const std::int64_t level = j + 1;
    const std::int64_t res = spec.levels.front().resolution << level;
    const std::int64_t li = spec.level_at_resolution(res);
    Var injection = li >= 0 ? branch(li, level) : Var();
    auto o = dec_up_[static_cast<std::size_t>(j)].forward(h, skip, Var(), ctx,
                                                          dropout_rate_at_level(level, dec_dropout_), level, injection);
    h = o.y;
    skip = o.skip;
  }
  return ag::tanh(skip);
}

std::pair<PyramidLatent, VariationalStats> PyramidAutoencoder::encode(const Tensor& image, EncodeMode mode,
                                                                      std::uint64_t noise_seed) const {
  NoGradGuard guard;
  ForwardContext ctx;
  for (std::int64_t n = 0; n < image.dim(0); ++n)
    ctx.sample_keys.push_back(derive_key(noise_seed, static_cast<std::uint64_t>(n)));
  auto enc = encode(Var::constant(image), ctx, mode);
  std::pair<PyramidLatent, VariationalStats> out;
  for (std::size_t i = 0; i < enc.latents.size(); ++i) {
    out.first.levels.push_back(enc.latents[i].value());
    out.second.mean.push_back(enc.means[i].value());
    out.second.logvar.push_back(enc.logvars[i].value());
  }
  return out;
}

Tensor PyramidAutoencoder::decode(const PyramidLatent& latent) const {
  latent.check_matches(config_.spec);
  NoGradGuard guard;
  ForwardContext ctx;
  std::vector<Var> vars;
  for (const auto& t : latent.levels) vars.push_back(Var::constant(t));
  return decode(vars, ctx).value();
}

Tensor PyramidAutoencoder::reconstruct(const Tensor& image) const {
  return decode(encode(image, EncodeMode::deterministic).first);
}

ParamList PyramidAutoencoder::encoder_parameters() {
  ParamList p;
  enc_in_.collect(p, "encoder.in");
  for (std::size_t s = 0; s < enc_down_.size(); ++s) enc_down_[s].collect(p, "encoder.down" + std::to_string(s));
  for (std::size_t s = 0; s < chain_convs_.size(); ++s) chain_convs_[s].collect(p, "encoder.chain" + std::to_string(s));
  for (std::size_t i = 0; i < mean_heads_.size(); ++i) {
    mean_heads_[i].collect(p, "encoder.mean" + std::to_string(i));
    logvar_heads_[i].collect(p, "encoder.logvar" + std::to_string(i));
  }
  return p;
}

ParamList PyramidAutoencoder::decoder_parameters() {
  ParamList p;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    branches_[i].input.collect(p, "decoder.branch" + std::to_string(i) + ".input");
    branches_[i].stack.collect(p, "decoder.branch" + std::to_string(i) + ".stack");
  }
  dec_base_rgb_.collect(p, "decoder.base_trgb");
  for (std::size_t j = 0; j < dec_up_.size(); ++j) dec_up_[j].collect(p, "decoder.up" + std::to_string(j));
  return p;
}

ParamList PyramidAutoencoder::parameters() {
  ParamList p = encoder_parameters();
  ParamList d = decoder_parameters();
  p.params.insert(p.params.end(), d.params.begin(), d.params.end());
  p.buffers.insert(p.buffers.end(), d.buffers.begin(), d.buffers.end());
  p.spectral.insert(p.spectral.end(), d.spectral.begin(), d.spectral.end());
  return p;
}

void PyramidAutoencoder::power_iterate(int iterations) {
  for (auto& e : encoder_parameters().spectral) pdm::power_iterate(e.weight->value(), *e.state, iterations);
}

std::vector<ModuleDescription> PyramidAutoencoder::describe_encoder() const {
  std::vector<ModuleDescription> d;
  for (std::size_t s = 0; s < std::max(enc_down_.size(), chain_convs_.size()); ++s) {
    const std::int64_t res = config_.spec.image_height >> s;
    if (config_.lipschitz_chain) {
      d.push_back({res, 0, "none"});
      continue;
    }
    const auto& st = enc_down_[s].stack;
    d.push_back({res, st.block_count(), st.linear_attention.empty() ? "none" : "linear"});
  }
  return d;
}

std::vector<ModuleDescription> PyramidAutoencoder::describe_decoder() const {
  std::vector<ModuleDescription> d;
  for (std::size_t j = 0; j < dec_up_.size(); ++j) {
    const std::int64_t res = config_.spec.levels.front().resolution << (j + 1);
    const auto& st = dec_up_[j].stack;
    d.push_back({res, st.block_count(), st.sc_attention.empty() ? "none" : "spatial_channel"});
  }
  return d;
}

Var reconstruction_loss(const Var& x, const Var& x_hat, const std::vector<Var>& means,
                        const std::vector<Var>& logvars, double kl_weight) {
  if (x.shape() != x_hat.shape())
    throw InvalidArgument("reconstruction_loss: shape mismatch " + shape_string(x.shape()) + " vs " +
                          shape_string(x_hat.shape()));
  if (means.size() != logvars.size()) throw InvalidArgument("reconstruction_loss: stats mismatch");
  Var loss = ag::mean(ag::abs(ag::sub(x_hat, x)));
  if (kl_weight == 0.0 || means.empty()) return loss;
  const double batch = static_cast<double>(x.dim(0));
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (means[i].shape() != logvars[i].shape()) throw InvalidArgument("reconstruction_loss: stats shape mismatch");
    // 0.5 * (mu^2 + exp(lv) - 1 - lv)
    Var kl = ag::sub(ag::add_scalar(ag::add(ag::square(means[i]), ag::exp(logvars[i])), -1.0), logvars[i]);
    loss = ag::add(loss, ag::scale(ag::sum(kl), 0.5 * kl_weight / batch));
  }
  return loss;
}

double reconstruction_loss(const Tensor& x, const Tensor& x_hat, const VariationalStats& stats, double kl_weight) {
  NoGradGuard guard;
  std::vector<Var> m, l;
  for (const auto& t : stats.mean) m.push_back(Var::constant(t));
  for (const auto& t : stats.logvar) l.push_back(Var::constant(t));
  return reconstruction_loss(Var::constant(x), Var::constant(x_hat), m, l, kl_weight).value()[0];
}

double psnr(const Tensor& reference, const Tensor& test) {
  if (reference.shape() != test.shape()) throw InvalidArgument("psnr: shape mismatch");
  double mse = 0.0;
  for (std::int64_t i = 0; i < reference.numel(); ++i) mse += (reference[i] - test[i]) * (reference[i] - test[i]);
  mse /= static_cast<double>(reference.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(4.0 / mse);
}

}  // namespace pdm
