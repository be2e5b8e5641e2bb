#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pdm/autograd.hpp"
#include "pdm/rng.hpp"

namespace pdm {

// ---------------------------------------------------------------------------
// Spectral normalization

/// Persistent power-iteration state for one weight viewed as a
/// (rows x cols) matrix. u has `rows` entries, v has `cols`.
struct SpectralNormState {
  Tensor u;
  Tensor v;
  int power_iterations_per_step = 1;
  double eps_division_guard = 1e-12;
  /// Set when the last normalization hit an (almost) zero matrix.
  bool degenerate = false;
  std::int64_t warning_count = 0;
};

struct SpectralNormResult {
  Tensor weight;
  double sigma = 0.0;
  bool degenerate = false;
};

SpectralNormState make_spectral_state(std::int64_t rows, std::int64_t cols, Rng& rng);

/// Runs `iterations` rounds of v <- W^T u / |.|, u <- W v / |.| in place.
/// Returns the Rayleigh estimate u^T W v.
double power_iterate(const Tensor& weight, SpectralNormState& state, int iterations);

/// Divides `weight` by its estimated largest singular value after
/// state.power_iterations_per_step power iterations. An all-zero weight
/// returns a zero matrix and flags state.degenerate.
SpectralNormResult spectral_normalize(const Tensor& weight, SpectralNormState& state);

// ---------------------------------------------------------------------------
// Parameter bookkeeping

struct SpectralEntry {
  std::string name;
  Var* weight;
  SpectralNormState* state;
};

struct ParamList {
  std::vector<std::pair<std::string, Var*>> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;
  std::vector<SpectralEntry> spectral;

  void zero_grad();
  std::int64_t parameter_count() const;
};

// ---------------------------------------------------------------------------
// Forward-pass context: training flag, per-sample randomness, test probes

struct DropoutRecord {
  std::string site;
  std::int64_t height;
  std::int64_t level;
  double rate;
};

struct ForwardContext {
  bool training = false;
  /// One key per batch element. Dropout masks and latent noise derive from
  /// these, so the randomness a sample sees is independent of how the batch
  /// was split.
  std::vector<std::uint64_t> sample_keys;
  std::vector<DropoutRecord>* dropout_probe = nullptr;
  std::uint64_t op_counter = 0;

  std::uint64_t sample_key(std::int64_t n) const;
  std::uint64_t next_op() { return op_counter++; }
};

Var dropout(const Var& x, double rate, ForwardContext& ctx, std::int64_t level = -1, const char* site = "");

enum class Activation { silu, relu };

Var activate(const Var& x, Activation act);
Activation parse_activation(const std::string& name);
std::string activation_name(Activation act);

// ---------------------------------------------------------------------------
// Layers

enum class Init { lecun, zero };

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel, Rng& rng,
         Init init = Init::lecun, bool spectral = false, double gain = 1.0);

  Var forward(const Var& x) const;
  /// Weight actually used by forward(): spectrally normalized when enabled.
  Var effective_weight() const;
  void power_iterate(int iterations);
  void collect(ParamList& out, const std::string& prefix);

  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t out_channels() const { return weight.dim(0); }
  std::int64_t kernel() const { return weight.dim(2); }
  bool spectral() const { return sn.has_value(); }

  Var weight;
  Var bias;
  std::optional<SpectralNormState> sn;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng, Init init = Init::lecun,
         bool spectral = false);

  /// x is (N, in) -> (N, out)
  Var forward(const Var& x) const;
  void power_iterate(int iterations);
  void collect(ParamList& out, const std::string& prefix);

  Var weight;
  Var bias;
  std::optional<SpectralNormState> sn;
};

std::int64_t default_groups(std::int64_t channels);

class GroupNorm {
 public:
  GroupNorm() = default;
  explicit GroupNorm(std::int64_t channels, double eps = 1e-6);

  Var forward(const Var& x) const;
  /// Adaptive variant: y = norm(x) * (1 + scale) + shift with scale/shift (N,C,1,1).
  Var forward(const Var& x, const Var& scale, const Var& shift) const;
  void collect(ParamList& out, const std::string& prefix);

  std::int64_t groups = 1;
  double eps = 1e-6;
  Var gamma;
  Var beta;
};

}  // namespace pdm
