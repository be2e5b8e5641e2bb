#include "pdm/blocks.hpp"

#include <cmath>

#include "pdm/error.hpp"

namespace pdm {

namespace {

void check_same_resolution(const Var& a, const Var& b, const char* what) {
  const auto fa = FeatureShape::of(a.value());
  const auto fb = FeatureShape::of(b.value());
  if (fa.batch != fb.batch || fa.height != fb.height || fa.width != fb.width)
    throw InvalidArgument(std::string(what) + ": resolution mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
}

}  // namespace

SCAttnWeights sc_attention_weights(std::int64_t height, std::int64_t width, std::int64_t channels) {
  if (height < 1 || width < 1 || channels < 1)
    throw InvalidArgument("sc_attention_weights: dimensions must be positive");
  const double pixels = static_cast<double>(height) * static_cast<double>(width);
  const double spatial = pixels / (pixels + static_cast<double>(channels));
  return {spatial, 1.0 - spatial};
}

std::vector<double> DropoutSchedule::per_level_rates() const {
  std::vector<double> rates;
  for (std::int64_t i = 0; i < num_levels; ++i) rates.push_back(dropout_rate_at_level(i, *this));
  return rates;
}

double dropout_rate_at_level(std::int64_t level_index, const DropoutSchedule& schedule) {
  if (schedule.num_levels < 1) throw InvalidArgument("dropout schedule needs at least one level");
  if (!(schedule.p_max >= 0.0 && schedule.p_max < 1.0)) throw InvalidArgument("p_max must lie in [0, 1)");
  if (level_index < 0 || level_index >= schedule.num_levels)
    throw InvalidArgument("dropout level " + std::to_string(level_index) + " out of range [0, " +
                          std::to_string(schedule.num_levels) + ")");
  if (schedule.num_levels == 1) return schedule.p_max;
  const std::int64_t last = schedule.num_levels - 1;
  if (level_index == last) return 0.0;
  return schedule.p_max * static_cast<double>(last - level_index) / static_cast<double>(last);
}

// ---------------------------------------------------------------------------

SCAttention::SCAttention(std::int64_t channels, Rng& rng, bool spectral, bool zero_init_output)
    : norm(channels), channels_(channels) {
  const Init out_init = zero_init_output ? Init::zero : Init::lecun;
  const bool out_spectral = spectral && !zero_init_output;
  spatial_q = Conv2d(channels, channels, 1, rng, Init::lecun, spectral);
  spatial_k = Conv2d(channels, channels, 1, rng, Init::lecun, spectral);
  spatial_v = Conv2d(channels, channels, 1, rng, Init::lecun, spectral);
  spatial_out = Conv2d(channels, channels, 1, rng, out_init, out_spectral);
  channel_q = Conv2d(channels, channels, 1, rng, Init::lecun, spectral);
  channel_k = Conv2d(channels, channels, 1, rng, Init::lecun, spectral);
  channel_v = Conv2d(channels, channels, 1, rng, Init::lecun, spectral);
  channel_out = Conv2d(channels, channels, 1, rng, out_init, out_spectral);
}

Var SCAttention::spatial_branch(const Var& xn) const {
  const auto fs = FeatureShape::of(xn.value());
  const Shape tokens{fs.batch, fs.channels, fs.pixels()};
  Var q = ag::reshape(spatial_q.forward(xn), tokens);
  Var k = ag::reshape(spatial_k.forward(xn), tokens);
  Var v = ag::reshape(spatial_v.forward(xn), tokens);
  // scores[l, m] = <q[:, l], k[:, m]> / sqrt(C), softmax over m
  Var scores = ag::scale(ag::bmm(q, k, true, false), 1.0 / std::sqrt(static_cast<double>(fs.channels)));
  Var attn = ag::softmax_last(scores);
  Var mixed = ag::bmm(v, attn, false, true);  // out[c, l] = sum_m v[c, m] attn[l, m]
  return spatial_out.forward(ag::reshape(mixed, fs.dims()));
}

Var SCAttention::channel_branch(const Var& xn) const {
  const auto fs = FeatureShape::of(xn.value());
  const Shape tokens{fs.batch, fs.channels, fs.pixels()};
  Var q = ag::reshape(channel_q.forward(xn), tokens);
  Var k = ag::reshape(channel_k.forward(xn), tokens);
  Var v = ag::reshape(channel_v.forward(xn), tokens);
  // scores[c, d] = <q[c, :], k[d, :]> / sqrt(HW), softmax over d
  Var scores = ag::scale(ag::bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(fs.pixels())));
  Var attn = ag::softmax_last(scores);
  Var mixed = ag::bmm(attn, v);
  return channel_out.forward(ag::reshape(mixed, fs.dims()));
}

Var SCAttention::forward(const Var& x) const {
  const auto fs = FeatureShape::of(x.value());
  if (fs.channels != channels_)
    throw InvalidArgument("SCAttention: expected " + std::to_string(channels_) + " channels, got " +
                          std::to_string(fs.channels));
  const SCAttnWeights w = weight_override ? *weight_override : sc_attention_weights(fs.height, fs.width, fs.channels);
  Var xn = norm.forward(x);
  Var blended = ag::add(ag::scale(spatial_branch(xn), w.spatial), ag::scale(channel_branch(xn), w.channel));
  return ag::add(blended, x);
}

Var SCAttention::forward_spatial_only(const Var& x) const {
  const auto fs = FeatureShape::of(x.value());
  if (fs.channels != channels_) throw InvalidArgument("SCAttention: channel mismatch");
  return ag::add(spatial_branch(norm.forward(x)), x);
}

void SCAttention::collect(ParamList& out, const std::string& prefix) {
  norm.collect(out, prefix + ".norm");
  spatial_q.collect(out, prefix + ".spatial_q");
  spatial_k.collect(out, prefix + ".spatial_k");
  spatial_v.collect(out, prefix + ".spatial_v");
  spatial_out.collect(out, prefix + ".spatial_out");
  channel_q.collect(out, prefix + ".channel_q");
  channel_k.collect(out, prefix + ".channel_k");
  channel_v.collect(out, prefix + ".channel_v");
  channel_out.collect(out, prefix + ".channel_out");
}

void SCAttention::power_iterate(int iterations) {
  for (Conv2d* c : {&spatial_q, &spatial_k, &spatial_v, &spatial_out, &channel_q, &channel_k, &channel_v,
                    &channel_out})
    c->power_iterate(iterations);
}

// ---------------------------------------------------------------------------

LinearAttention::LinearAttention(std::int64_t channels, Rng& rng, bool spectral, bool zero_init_output)
    : norm(channels),
      q(channels, channels, 1, rng, Init::lecun, spectral),
      k(channels, channels, 1, rng, Init::lecun, spectral),
      v(channels, channels, 1, rng, Init::lecun, spectral),
      out(channels, channels, 1, rng, zero_init_output ? Init::zero : Init::lecun, spectral && !zero_init_output) {}

Var LinearAttention::forward(const Var& x) const {
  const auto fs = FeatureShape::of(x.value());
  const Shape tokens{fs.batch, fs.channels, fs.pixels()};
  Var xn = norm.forward(x);
  Var qf = ag::elu_plus_one(ag::reshape(q.forward(xn), tokens));
  Var kf = ag::elu_plus_one(ag::reshape(k.forward(xn), tokens));
  Var vv = ag::reshape(v.forward(xn), tokens);
  Var kv = ag::bmm(kf, vv, false, true);        // (N, C, C): sum_l k[c,l] v[d,l]
  Var num = ag::bmm(kv, qf, true, false);       // (N, C, L): sum_c kv[c,d] q[c,l]
  Var ones = Var::constant(Tensor({1, fs.pixels(), 1}, 1.0));
  Var ksum = ag::bmm(kf, ones);                 // (N, C, 1)
  Var denom = ag::bmm(ksum, qf, true, false);   // (N, 1, L)
  Var mixed = ag::div_bcast(num, denom);
  return ag::add(out.forward(ag::reshape(mixed, fs.dims())), x);
}

void LinearAttention::collect(ParamList& o, const std::string& prefix) {
  norm.collect(o, prefix + ".norm");
  q.collect(o, prefix + ".q");
  k.collect(o, prefix + ".k");
  v.collect(o, prefix + ".v");
  out.collect(o, prefix + ".out");
}

void LinearAttention::power_iterate(int iterations) {
  for (Conv2d* c : {&q, &k, &v, &out}) c->power_iterate(iterations);
}

// ---------------------------------------------------------------------------

ResBlock::ResBlock(std::int64_t in_channels, std::int64_t out_channels, Rng& rng, const ResBlockOptions& opt)
    : options(opt), norm1(in_channels), norm2(out_channels) {
  conv1 = Conv2d(in_channels, out_channels, 3, rng, Init::lecun, opt.spectral);
  conv2 = Conv2d(out_channels, out_channels, 3, rng, opt.spectral_terminal ? Init::lecun : Init::zero,
                 opt.spectral_terminal);
  if (in_channels != out_channels) shortcut = Conv2d(in_channels, out_channels, 1, rng, Init::lecun, opt.spectral);
  if (opt.temb_dim > 0) {
    temb_scale = Linear(opt.temb_dim, out_channels, rng, Init::zero);
    temb_shift = Linear(opt.temb_dim, out_channels, rng, Init::zero);
  }
}

Var ResBlock::forward(const Var& x, const Var& temb, ForwardContext& ctx, double dropout_rate,
                      std::int64_t level) const {
  Var h = conv1.forward(activate(norm1.forward(x), options.activation));
  if (temb_scale && temb.defined()) {
    const std::int64_t c = h.dim(1);
    Var t = ag::silu(temb);
    Var s = ag::reshape(temb_scale->forward(t), {temb.dim(0), c, 1, 1});
    Var b = ag::reshape(temb_shift->forward(t), {temb.dim(0), c, 1, 1});
    h = norm2.forward(h, s, b);
  } else {
    h = norm2.forward(h);
  }
  h = activate(h, options.activation);
  h = dropout(h, dropout_rate, ctx, level, "resblock");
  h = conv2.forward(h);
  return ag::add(shortcut ? shortcut->forward(x) : x, h);
}

void ResBlock::collect(ParamList& out, const std::string& prefix) {
  norm1.collect(out, prefix + ".norm1");
  conv1.collect(out, prefix + ".conv1");
  norm2.collect(out, prefix + ".norm2");
  conv2.collect(out, prefix + ".conv2");
  if (shortcut) shortcut->collect(out, prefix + ".shortcut");
  if (temb_scale) temb_scale->collect(out, prefix + ".temb_scale");
  if (temb_shift) temb_shift->collect(out, prefix + ".temb_shift");
}

void ResBlock::power_iterate(int iterations) {
  conv1.power_iterate(iterations);
  conv2.power_iterate(iterations);
  if (shortcut) shortcut->power_iterate(iterations);
}

// ---------------------------------------------------------------------------

ResidualStack::ResidualStack(std::int64_t in_channels, std::int64_t out_channels, Rng& rng, const StackOptions& opt)
    : in_channels_(in_channels), out_channels_(out_channels) {
  if (opt.blocks < 0) throw InvalidArgument("ResidualStack: negative block count");
  if (opt.blocks == 0 && in_channels != out_channels)
    passthrough_ = Conv2d(in_channels, out_channels, 1, rng, Init::lecun, opt.block.spectral);
  for (std::int64_t i = 0; i < opt.blocks; ++i) {
    blocks.emplace_back(i == 0 ? in_channels : out_channels, out_channels, rng, opt.block);
    if (opt.attention == AttentionKind::spatial_channel)
      sc_attention.emplace_back(out_channels, rng, opt.block.spectral, !opt.block.spectral_terminal);
    else if (opt.attention == AttentionKind::linear)
      linear_attention.emplace_back(out_channels, rng, opt.block.spectral, !opt.block.spectral_terminal);
  }
}

Var ResidualStack::forward(const Var& x, const Var& temb, ForwardContext& ctx, double dropout_rate,
                           std::int64_t level) const {
  Var h = passthrough_ ? passthrough_->forward(x) : x;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    h = blocks[i].forward(h, temb, ctx, dropout_rate, level);
    if (!sc_attention.empty()) h = sc_attention[i].forward(h);
    if (!linear_attention.empty()) h = linear_attention[i].forward(h);
  }
  return h;
}

void ResidualStack::collect(ParamList& out, const std::string& prefix) {
  if (passthrough_) passthrough_->collect(out, prefix + ".passthrough");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect(out, prefix + ".block" + std::to_string(i));
    if (!sc_attention.empty()) sc_attention[i].collect(out, prefix + ".scattn" + std::to_string(i));
    if (!linear_attention.empty()) linear_attention[i].collect(out, prefix + ".linattn" + std::to_string(i));
  }
}

void ResidualStack::power_iterate(int iterations) {
  if (passthrough_) passthrough_->power_iterate(iterations);
  for (auto& b : blocks) b.power_iterate(iterations);
  for (auto& a : sc_attention) a.power_iterate(iterations);
  for (auto& a : linear_attention) a.power_iterate(iterations);
}

// ---------------------------------------------------------------------------

ToRGB::ToRGB(std::int64_t channels, std::int64_t rgb_channels, Rng& rng, Init init, bool spectral)
    : conv(channels, rgb_channels, 1, rng, init, spectral) {}

Var ToRGB::forward(const Var& x) const {
  if (FeatureShape::of(x.value()).channels != conv.in_channels())
    throw InvalidArgument("tRGB: expected " + std::to_string(conv.in_channels()) + " feature channels");
  return conv.forward(x);
}

FromRGB::FromRGB(std::int64_t rgb_channels, std::int64_t channels, Rng& rng, Init init, bool spectral)
    : conv(rgb_channels, channels, 1, rng, init, spectral) {}

Var FromRGB::forward(const Var& img) const {
  if (FeatureShape::of(img.value()).channels != conv.in_channels())
    throw InvalidArgument("fRGB: expected a " + std::to_string(conv.in_channels()) + "-channel input, got " +
                          shape_string(img.shape()));
  return conv.forward(img);
}

ResSkipUpBlock::ResSkipUpBlock(std::int64_t in_channels, std::int64_t out_channels, std::int64_t rgb_channels,
                               Rng& rng, const StackOptions& opt, Init trgb_init)
    : stack(in_channels, out_channels, rng, opt), to_rgb(out_channels, rgb_channels, rng, trgb_init) {}

ResSkipUpBlock::Output ResSkipUpBlock::forward(const Var& x, const Var& skip, const Var& temb, ForwardContext& ctx,
                                               double dropout_rate, std::int64_t level, const Var& injection) const {
  check_same_resolution(x, skip, "res_skip_up_block");
  Var up = ag::upsample2(x);
  if (injection.defined()) up = ag::add(up, injection);
  Output o;
  o.y = stack.forward(up, temb, ctx, dropout_rate, level);
  o.skip = ag::add(ag::upsample2(skip), to_rgb.forward(o.y));
  return o;
}

void ResSkipUpBlock::collect(ParamList& out, const std::string& prefix) {
  stack.collect(out, prefix + ".stack");
  to_rgb.collect(out, prefix + ".trgb");
}

ResSkipDownBlock::ResSkipDownBlock(std::int64_t in_channels, std::int64_t out_channels, std::int64_t rgb_channels,
                                   Rng& rng, const StackOptions& opt, Init frgb_init, bool spectral_frgb)
    : stack(in_channels, out_channels, rng, opt),
      from_rgb(rgb_channels, out_channels, rng, frgb_init, spectral_frgb) {}

ResSkipDownBlock::Output ResSkipDownBlock::forward(const Var& x, const Var& rgb, const Var& temb,
                                                   ForwardContext& ctx, double dropout_rate,
                                                   std::int64_t level) const {
  check_same_resolution(x, rgb, "res_skip_down_block");
  Output o;
  o.rgb = ag::avg_pool2(rgb);
  o.y = ag::add(ag::avg_pool2(stack.forward(x, temb, ctx, dropout_rate, level)), from_rgb.forward(o.rgb));
  return o;
}

void ResSkipDownBlock::collect(ParamList& out, const std::string& prefix) {
  stack.collect(out, prefix + ".stack");
  from_rgb.collect(out, prefix + ".frgb");
}

void ResSkipDownBlock::power_iterate(int iterations) {
  stack.power_iterate(iterations);
  from_rgb.power_iterate(iterations);
}

void perturb_parameters(ParamList& params, Rng& rng, double stddev) {
  for (auto& [name, v] : params.params)
    for (auto& x : v->mutable_value().values()) x += rng.normal(0.0, stddev);
}

}  // namespace pdm
