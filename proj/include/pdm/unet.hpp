#pragma once

// Diffusion network: an NCSNpp-style res-skip backbone running at the
// highest-resolution pyramid level, plus one input/output branch per level.

#include <vector>

#include "pdm/blocks.hpp"
#include "pdm/pyramid.hpp"

namespace pdm {

/// Fourier features concat(sin(2 pi f_k t), cos(2 pi f_k t)) with log-spaced
/// f_k, followed by Linear -> SiLU -> Linear.
class TimeEmbedding {
 public:
  TimeEmbedding() = default;
  TimeEmbedding(std::int64_t dim, Rng& rng, bool spectral);

  /// Raw (N, dim) Fourier features; no parameters involved.
  Tensor fourier_features(const std::vector<double>& t) const;
  Var forward(const std::vector<double>& t) const;
  void collect(ParamList& out, const std::string& prefix);

  std::int64_t dim() const { return dim_; }
  const std::vector<double>& frequencies() const { return freqs_; }

  Linear fc1, fc2;

 private:
  std::int64_t dim_ = 0;
  std::vector<double> freqs_;
};

struct BackboneConfig {
  std::int64_t in_channels = 8;       // channels of the latent it runs on
  std::int64_t resolution = 16;       // height of that latent
  std::vector<std::int64_t> widths = {32, 48, 64};  // widths[k] at resolution >> k
  std::int64_t blocks_per_level = 1;
  std::int64_t attention_max_resolution = 8;
  std::int64_t time_embed_dim = 32;
  double p_max = 0.35;
  bool spectral = true;
  Activation activation = Activation::silu;

  void validate() const;
  std::int64_t num_resolutions() const { return static_cast<std::int64_t>(widths.size()); }
  std::int64_t resolution_at(std::int64_t k) const { return resolution >> k; }
  /// Dropout-schedule level of backbone stage k (0 = lowest resolution).
  std::int64_t dropout_level(std::int64_t k) const { return num_resolutions() - 1 - k; }
};

/// Input-skip down path, SC-attention middle, res-skip up path. The skip
/// accumulator lives in latent space and is the velocity estimate.
class Backbone {
 public:
  /// Activations injected on the down path / read back on the up path,
  /// keyed by backbone stage index k.
  struct Taps {
    std::vector<Var> inject;     // size num_resolutions(), undefined = none
    std::vector<Var> features;   // filled by forward(): up-path output at each k
  };

  Backbone() = default;
  Backbone(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }

  Var forward(const Var& z, const std::vector<double>& t, ForwardContext& ctx) const;
  Var forward(const Var& z, const Var& temb, ForwardContext& ctx, Taps* taps) const;
  Var time_embedding(const std::vector<double>& t) const { return time_.forward(t); }

  void collect(ParamList& out, const std::string& prefix);

 private:
  BackboneConfig config_;
  TimeEmbedding time_;
  Conv2d stem_;
  std::vector<ResSkipDownBlock> down_;   // down_[k]: widths[k] -> widths[k+1]
  ResidualStack middle_;
  ToRGB middle_rgb_;
  std::vector<Conv2d> skip_proj_;        // skip_proj_[k]: widths[k] -> widths[k+1]
  std::vector<ResSkipUpBlock> up_;       // up_[k]: resolution k+1 -> k
  DropoutSchedule dropout_;
};

struct PyramidUNetConfig {
  PyramidSpec spec = default_pyramid_spec();
  std::vector<std::int64_t> backbone_level_widths = {32, 48, 64};
  std::int64_t blocks_per_level = 1;
  std::int64_t branch_blocks = 1;
  std::int64_t attention_max_resolution = 8;
  double p_max = 0.35;
  std::int64_t time_embed_dim = 32;
  bool spectral = true;
  /// false is only valid for single-level specs: the model is the plain backbone.
  bool use_branches = true;
  Activation activation = Activation::silu;
  std::uint64_t seed = 0;

  void validate() const;
  BackboneConfig backbone_config() const;
  DropoutSchedule dropout() const { return DropoutSchedule{p_max, static_cast<std::int64_t>(backbone_level_widths.size())}; }
};

class PyramidUNet {
 public:
  explicit PyramidUNet(const PyramidUNetConfig& config);

  const PyramidUNetConfig& config() const { return config_; }
  const PyramidSpec& spec() const { return config_.spec; }
  const Backbone& backbone() const { return backbone_; }

  /// Velocity pyramid with exactly the shapes of zt; t has one entry per
  /// batch element, each in [0, 1].
  std::vector<Var> forward(const std::vector<Var>& zt, const std::vector<double>& t, ForwardContext& ctx) const;
  PyramidLatent forward(const PyramidLatent& zt, const std::vector<double>& t) const;

  ParamList parameters();
  void power_iterate(int iterations = 1);

  /// Seed the backbone is built from; a standalone Backbone with this seed
  /// has identical parameters.
  static std::uint64_t backbone_seed(std::uint64_t seed);

 private:
  struct Branch {
    std::int64_t stage;  // backbone stage at the level's resolution
    Conv2d in_proj;
    ResidualStack in_stack;
    ResidualStack out_stack;
    ToRGB out_rgb;
  };

  PyramidUNetConfig config_;
  Backbone backbone_;
  std::vector<Branch> branches_;
};

}  // namespace pdm
