#pragma once

// Reusable network blocks: spatial-channel attention, linear attention,
// residual stacks, res-skip up/down blocks, RGB stems and the
// resolution-dependent dropout schedule.

#include <optional>
#include <vector>

#include "pdm/layers.hpp"

namespace pdm {

struct SCAttnWeights {
  double spatial;
  double channel;
};

/// Blend weights H*W/(H*W+C) and C/(H*W+C); channel is the exact complement.
SCAttnWeights sc_attention_weights(std::int64_t height, std::int64_t width, std::int64_t channels);

/// Linear dropout schedule: p_max at level 0 (lowest resolution) decaying to
/// zero at the highest-resolution level.
struct DropoutSchedule {
  double p_max = 0.35;
  std::int64_t num_levels = 1;

  std::vector<double> per_level_rates() const;
};

double dropout_rate_at_level(std::int64_t level_index, const DropoutSchedule& schedule);

enum class AttentionKind { none, spatial_channel, linear };

/// Dot-product self-attention over pixels and over channels in parallel,
/// blended by sc_attention_weights and added to the input.
class SCAttention {
 public:
  SCAttention() = default;
  SCAttention(std::int64_t channels, Rng& rng, bool spectral = false, bool zero_init_output = true);

  Var forward(const Var& x) const;
  /// Normalized input -> projected spatial (resp. channel) branch output.
  Var spatial_branch(const Var& x) const;
  Var channel_branch(const Var& x) const;
  /// spatial_branch + x, the degenerate form of forward() when the blend is (1, 0).
  Var forward_spatial_only(const Var& x) const;

  void collect(ParamList& out, const std::string& prefix);
  void power_iterate(int iterations);
  std::int64_t channels() const { return channels_; }

  /// Test hook: overrides the shape-derived blend weights.
  std::optional<SCAttnWeights> weight_override;

  GroupNorm norm;
  Conv2d spatial_q, spatial_k, spatial_v, spatial_out;
  Conv2d channel_q, channel_k, channel_v, channel_out;

 private:
  std::int64_t channels_ = 0;
};

/// Kernelized linear attention with the ELU+1 feature map, residual.
class LinearAttention {
 public:
  LinearAttention() = default;
  LinearAttention(std::int64_t channels, Rng& rng, bool spectral = true, bool zero_init_output = false);

  Var forward(const Var& x) const;
  void collect(ParamList& out, const std::string& prefix);
  void power_iterate(int iterations);

  GroupNorm norm;
  Conv2d q, k, v, out;
};

struct ResBlockOptions {
  Activation activation = Activation::silu;
  bool spectral = false;           // every conv except the terminal one
  bool spectral_terminal = false;  // terminal conv; zero-initialized when false
  std::int64_t temb_dim = 0;       // 0 disables time conditioning
};

/// GN -> act -> conv3 -> (adaptive) GN -> act -> dropout -> conv3, plus shortcut.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(std::int64_t in_channels, std::int64_t out_channels, Rng& rng, const ResBlockOptions& opt);

  Var forward(const Var& x, const Var& temb, ForwardContext& ctx, double dropout_rate, std::int64_t level) const;
  void collect(ParamList& out, const std::string& prefix);
  void power_iterate(int iterations);

  ResBlockOptions options;
  GroupNorm norm1, norm2;
  Conv2d conv1, conv2;
  std::optional<Conv2d> shortcut;
  std::optional<Linear> temb_scale, temb_shift;
};

struct StackOptions {
  std::int64_t blocks = 1;
  AttentionKind attention = AttentionKind::none;
  ResBlockOptions block;
};

/// A run of ResBlocks, each optionally followed by an attention module.
/// With zero-initialized terminal convs and equal widths it is the identity.
class ResidualStack {
 public:
  ResidualStack() = default;
  ResidualStack(std::int64_t in_channels, std::int64_t out_channels, Rng& rng, const StackOptions& opt);

  Var forward(const Var& x, const Var& temb, ForwardContext& ctx, double dropout_rate, std::int64_t level) const;
  void collect(ParamList& out, const std::string& prefix);
  void power_iterate(int iterations);

  std::int64_t block_count() const { return static_cast<std::int64_t>(blocks.size()); }
  std::int64_t in_channels() const { return in_channels_; }
  std::int64_t out_channels() const { return out_channels_; }

  std::vector<ResBlock> blocks;
  std::vector<SCAttention> sc_attention;
  std::vector<LinearAttention> linear_attention;

 private:
  std::int64_t in_channels_ = 0;
  std::int64_t out_channels_ = 0;
  std::optional<Conv2d> passthrough_;  // channel change when blocks == 0
};

/// Per-pixel linear map from features to the skip space ("tRGB").
class ToRGB {
 public:
  ToRGB() = default;
  ToRGB(std::int64_t channels, std::int64_t rgb_channels, Rng& rng, Init init = Init::lecun, bool spectral = false);
  Var forward(const Var& x) const;
  void collect(ParamList& out, const std::string& prefix) { conv.collect(out, prefix); }
  Conv2d conv;
};

/// Per-pixel linear map from the skip space to features ("fRGB").
class FromRGB {
 public:
  FromRGB() = default;
  FromRGB(std::int64_t rgb_channels, std::int64_t channels, Rng& rng, Init init = Init::lecun,
          bool spectral = false);
  Var forward(const Var& img) const;
  void collect(ParamList& out, const std::string& prefix) { conv.collect(out, prefix); }
  void power_iterate(int iterations) { conv.power_iterate(iterations); }
  Conv2d conv;
};

/// Up stream: y = Stack(Up(x) [+ injection]), skip' = Up(skip) + tRGB(y).
class ResSkipUpBlock {
 public:
  struct Output {
    Var y;
    Var skip;
  };

  ResSkipUpBlock() = default;
  ResSkipUpBlock(std::int64_t in_channels, std::int64_t out_channels, std::int64_t rgb_channels, Rng& rng,
                 const StackOptions& opt, Init trgb_init = Init::lecun);

  Output forward(const Var& x, const Var& skip, const Var& temb, ForwardContext& ctx, double dropout_rate,
                 std::int64_t level, const Var& injection = Var()) const;
  void collect(ParamList& out, const std::string& prefix);
  void power_iterate(int iterations) { stack.power_iterate(iterations); }

  ResidualStack stack;
  ToRGB to_rgb;
};

/// Down stream: y = Down(Stack(x)) + fRGB(Down(rgb)), rgb' = Down(rgb).
class ResSkipDownBlock {
 public:
  struct Output {
    Var y;
    Var rgb;
  };

  ResSkipDownBlock() = default;
  ResSkipDownBlock(std::int64_t in_channels, std::int64_t out_channels, std::int64_t rgb_channels, Rng& rng,
                   const StackOptions& opt, Init frgb_init = Init::lecun, bool spectral_frgb = false);

  Output forward(const Var& x, const Var& rgb, const Var& temb, ForwardContext& ctx, double dropout_rate,
                 std::int64_t level) const;
  void collect(ParamList& out, const std::string& prefix);
  void power_iterate(int iterations);

  ResidualStack stack;
  FromRGB from_rgb;
};

/// Adds N(0, stddev^2) noise to every parameter; used by tests that need
/// a non-degenerate network (zero-initialized convs would hide gradients).
void perturb_parameters(ParamList& params, Rng& rng, double stddev);

}  // namespace pdm
