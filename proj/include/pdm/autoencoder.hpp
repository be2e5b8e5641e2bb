#pragma once

// First-stage model: a light, spectrally-normalized encoder with input skips
// that emits one latent per pyramid level, and a heavier branched decoder
// with output skips.

#include <string>
#include <vector>

#include "pdm/blocks.hpp"
#include "pdm/pyramid.hpp"

namespace pdm {

struct AutoencoderConfig {
  PyramidSpec spec = default_pyramid_spec();
  /// Feature widths per resolution, widths[s] at image_height >> s,
  /// for s = 0 .. stages() inclusive.
  std::vector<std::int64_t> widths = {8, 16, 32, 32, 32};
  std::int64_t encoder_blocks = 1;  // the decoder uses one more per module
  std::int64_t branch_blocks = 1;
  std::int64_t attention_max_resolution = 16;
  Activation activation = Activation::silu;
  double decoder_p_max = 0.35;
  double kl_weight = 1e-6;
  double logvar_init = -6.0;
  /// Test configuration: encoder is a chain of spectrally-normalized 1x1
  /// convs, 1-Lipschitz activations and average pooling only.
  bool lipschitz_chain = false;
  std::uint64_t seed = 0;

  std::int64_t stages() const;
  void validate() const;
};

struct ModuleDescription {
  std::int64_t resolution;
  std::int64_t blocks;
  std::string attention;
};

struct VariationalStats {
  std::vector<Tensor> mean;
  std::vector<Tensor> logvar;
};

enum class EncodeMode { sample, deterministic };

class PyramidAutoencoder {
 public:
  struct Encoded {
    std::vector<Var> latents;
    std::vector<Var> means;
    std::vector<Var> logvars;
  };

  explicit PyramidAutoencoder(const AutoencoderConfig& config);

  const AutoencoderConfig& config() const { return config_; }
  const PyramidSpec& spec() const { return config_.spec; }

  /// Graph-building encode. In sample mode each level is
  /// mean + exp(logvar/2) * noise, with noise keyed by ctx.sample_keys.
  Encoded encode(const Var& image, ForwardContext& ctx, EncodeMode mode) const;
  Var decode(const std::vector<Var>& latents, ForwardContext& ctx) const;

  /// Inference conveniences (no graph, eval mode).
  std::pair<PyramidLatent, VariationalStats> encode(const Tensor& image, EncodeMode mode,
                                                    std::uint64_t noise_seed = 0) const;
  Tensor decode(const PyramidLatent& latent) const;
  Tensor reconstruct(const Tensor& image) const;

  ParamList parameters();
  ParamList encoder_parameters();
  ParamList decoder_parameters();
  /// One power-iteration round on every spectrally-normalized weight.
  void power_iterate(int iterations = 1);

  std::vector<ModuleDescription> describe_encoder() const;
  std::vector<ModuleDescription> describe_decoder() const;

 private:
  struct Branch {
    Conv2d input;
    ResidualStack stack;
  };

  void check_image(const Tensor& image) const;

  AutoencoderConfig config_;
  // encoder
  FromRGB enc_in_;
  std::vector<ResSkipDownBlock> enc_down_;
  std::vector<Conv2d> chain_convs_;
  std::vector<Conv2d> mean_heads_;
  std::vector<Conv2d> logvar_heads_;
  // decoder
  std::vector<Branch> branches_;
  ToRGB dec_base_rgb_;
  std::vector<ResSkipUpBlock> dec_up_;  // dec_up_[j] produces resolution r0 << (j+1)
  DropoutSchedule dec_dropout_;
};

/// L1(x, x_hat) + kl_weight * KL(N(mean, exp(logvar)) || N(0, I)); the L1
/// term is a per-element mean, KL is summed over levels and averaged over batch.
Var reconstruction_loss(const Var& x, const Var& x_hat, const std::vector<Var>& means,
                        const std::vector<Var>& logvars, double kl_weight);
double reconstruction_loss(const Tensor& x, const Tensor& x_hat, const VariationalStats& stats, double kl_weight);

/// Peak signal-to-noise ratio for images in [-1, 1] (peak-to-peak 2).
double psnr(const Tensor& reference, const Tensor& test);

}  // namespace pdm
