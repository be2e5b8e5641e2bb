#pragma once

// Checkpoint directory: manifest.txt (human-readable key = value lines) and
// tensors.bin (binary archive), tied together by a CRC-32 in the manifest.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pdm/autoencoder.hpp"
#include "pdm/optim.hpp"
#include "pdm/rectflow.hpp"
#include "pdm/unet.hpp"

namespace pdm {

inline constexpr int kCheckpointFormatVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Checkpoint {
  std::string kind;  // "autoencoder" or "unet"
  PyramidSpec spec;
  std::map<std::string, std::string> architecture;
  std::optional<LatentScaler> scaler;
  std::int64_t step = 0;
  std::int64_t optimizer_steps = 0;
  NamedTensors tensors;
};

/// Writes into a sibling temporary directory and renames it over `dir`.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
/// Verifies version and checksum before returning anything. With
/// `expected_spec`, a differing recorded spec is a CheckpointError.
Checkpoint load_checkpoint(const std::filesystem::path& dir, const PyramidSpec* expected_spec = nullptr);
bool checkpoint_exists(const std::filesystem::path& dir);

/// Parameters and buffers (and optionally optimizer moments under "optim.").
NamedTensors snapshot(ParamList& params, Adam* optimizer = nullptr);
/// Copies tensors into the model; every parameter/buffer must be present
/// with a matching shape.
void restore(ParamList& params, const NamedTensors& tensors, Adam* optimizer = nullptr);

std::map<std::string, std::string> autoencoder_architecture(const AutoencoderConfig& c);
AutoencoderConfig autoencoder_config_from(const std::map<std::string, std::string>& arch, const PyramidSpec& spec);
std::map<std::string, std::string> unet_architecture(const PyramidUNetConfig& c);
PyramidUNetConfig unet_config_from(const std::map<std::string, std::string>& arch, const PyramidSpec& spec);

std::string join_ints(const std::vector<std::int64_t>& v);
std::vector<std::int64_t> parse_ints(const std::string& text);

}  // namespace pdm
