#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pdm/autoencoder.hpp"
#include "pdm/data.hpp"
#include "pdm/rectflow.hpp"
#include "pdm/sampler.hpp"
#include "pdm/unet.hpp"

namespace pdm {

struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  std::string out = "run";
  std::string device = "cpu";
  // [data]
  std::string data_kind = "gaussians";
  std::int64_t data_count = 8;
  std::string data_source;  // folder of PNGs; empty = synthesize
  bool data_filter = false;
  LandscapeRule filter;
  bool center_crop = true;
  // [pyramid] + [autoencoder] + [unet]
  AutoencoderConfig autoencoder;
  PyramidUNetConfig unet;
  // [train_ae]
  TrainConfig train_ae;
  std::int64_t train_ae_steps = 300;
  // [calibrate]
  std::int64_t calibrate_iters = 100;
  double calibrate_ema_decay = 0.99;
  std::int64_t calibrate_batch = 8;
  // [train_dm]
  TrainConfig train_dm;
  std::int64_t train_dm_steps = 300;
  // [sampler]
  SamplerConfig sampler;
  std::int64_t sample_count = 4;
  // [ablate]
  std::int64_t ablate_count = 2;
  // [metrics]
  std::int64_t log_every = 10;

  RunConfig();
  const PyramidSpec& spec() const { return autoencoder.spec; }
  /// Range checks every field; throws ConfigError.
  void validate() const;
};

/// Applies one `section.key = value` setting; unknown keys and malformed
/// values throw ConfigError.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
/// Parses a `[section]` / `key = value` document (# comments).
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
/// Canonical `section.key = value` listing of every setting, one per line.
std::string dump_config(const RunConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace pdm
