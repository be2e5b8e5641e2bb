#include "pdm/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "pdm/checkpoint.hpp"
#include "pdm/error.hpp"

namespace pdm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::int64_t to_int(const std::string& v) {
  std::size_t used = 0;
  const auto x = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return x;
}

std::uint64_t to_u64(const std::string& v) {
  if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
  std::size_t used = 0;
  const auto x = std::stoull(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return x;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  const auto x = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(v);
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PDM_INT(KEY, EXPR) \
  Field { KEY, [](RunConfig& c, const std::string& v) { EXPR = to_int(v); }, [](const RunConfig& c) { return std::to_string(EXPR); } }
#define PDM_U64(KEY, EXPR) \
  Field { KEY, [](RunConfig& c, const std::string& v) { EXPR = to_u64(v); }, [](const RunConfig& c) { return std::to_string(EXPR); } }
#define PDM_DBL(KEY, EXPR) \
  Field { KEY, [](RunConfig& c, const std::string& v) { EXPR = to_double(v); }, [](const RunConfig& c) { return fmt(EXPR); } }
#define PDM_BOOL(KEY, EXPR) \
  Field { KEY, [](RunConfig& c, const std::string& v) { EXPR = to_bool(v); }, [](const RunConfig& c) { return bool_str(EXPR); } }
#define PDM_STR(KEY, EXPR) \
  Field { KEY, [](RunConfig& c, const std::string& v) { EXPR = v; }, [](const RunConfig& c) { return std::string(EXPR); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      PDM_U64("run.seed", c.seed),
      PDM_STR("run.out", c.out),
      PDM_STR("run.device", c.device),

      PDM_STR("data.kind", c.data_kind),
      PDM_INT("data.count", c.data_count),
      PDM_STR("data.source", c.data_source),
      PDM_BOOL("data.filter", c.data_filter),
      PDM_INT("data.filter_min_width", c.filter.min_width),
      PDM_INT("data.filter_min_height", c.filter.min_height),
      PDM_BOOL("data.center_crop", c.center_crop),

      Field{"pyramid.levels",
            [](RunConfig& c, const std::string& v) {
              c.autoencoder.spec.levels = PyramidSpec::parse_levels(v);
              c.unet.spec.levels = c.autoencoder.spec.levels;
            },
            [](const RunConfig& c) { return c.autoencoder.spec.levels_string(); }},
      Field{"pyramid.image_height",
            [](RunConfig& c, const std::string& v) { c.unet.spec.image_height = c.autoencoder.spec.image_height = to_int(v); },
            [](const RunConfig& c) { return std::to_string(c.autoencoder.spec.image_height); }},
      Field{"pyramid.image_width",
            [](RunConfig& c, const std::string& v) { c.unet.spec.image_width = c.autoencoder.spec.image_width = to_int(v); },
            [](const RunConfig& c) { return std::to_string(c.autoencoder.spec.image_width); }},

      Field{"autoencoder.widths", [](RunConfig& c, const std::string& v) { c.autoencoder.widths = parse_ints(v); },
            [](const RunConfig& c) { return join_ints(c.autoencoder.widths); }},
      PDM_INT("autoencoder.encoder_blocks", c.autoencoder.encoder_blocks),
      PDM_INT("autoencoder.branch_blocks", c.autoencoder.branch_blocks),
      PDM_INT("autoencoder.attention_max_resolution", c.autoencoder.attention_max_resolution),
      Field{"autoencoder.activation",
            [](RunConfig& c, const std::string& v) { c.autoencoder.activation = parse_activation(v); },
            [](const RunConfig& c) { return activation_name(c.autoencoder.activation); }},
      PDM_DBL("autoencoder.p_max", c.autoencoder.decoder_p_max),
      PDM_DBL("autoencoder.kl_weight", c.autoencoder.kl_weight),
      PDM_DBL("autoencoder.logvar_init", c.autoencoder.logvar_init),

      Field{"unet.widths", [](RunConfig& c, const std::string& v) { c.unet.backbone_level_widths = parse_ints(v); },
            [](const RunConfig& c) { return join_ints(c.unet.backbone_level_widths); }},
      PDM_INT("unet.blocks_per_level", c.unet.blocks_per_level),
      PDM_INT("unet.branch_blocks", c.unet.branch_blocks),
      PDM_INT("unet.attention_max_resolution", c.unet.attention_max_resolution),
      PDM_DBL("unet.p_max", c.unet.p_max),
      PDM_INT("unet.time_embed_dim", c.unet.time_embed_dim),
      PDM_BOOL("unet.spectral", c.unet.spectral),
      PDM_BOOL("unet.use_branches", c.unet.use_branches),
      Field{"unet.activation", [](RunConfig& c, const std::string& v) { c.unet.activation = parse_activation(v); },
            [](const RunConfig& c) { return activation_name(c.unet.activation); }},

      PDM_INT("train_ae.steps", c.train_ae_steps),
      PDM_DBL("train_ae.lr", c.train_ae.adam.lr),
      PDM_DBL("train_ae.clip_norm", c.train_ae.adam.clip_norm),
      PDM_INT("train_ae.batch_size", c.train_ae.batch_size),
      PDM_INT("train_ae.grad_accum", c.train_ae.grad_accum),

      PDM_INT("calibrate.iterations", c.calibrate_iters),
      PDM_DBL("calibrate.ema_decay", c.calibrate_ema_decay),
      PDM_INT("calibrate.batch_size", c.calibrate_batch),

      PDM_INT("train_dm.steps", c.train_dm_steps),
      PDM_DBL("train_dm.lr", c.train_dm.adam.lr),
      PDM_DBL("train_dm.clip_norm", c.train_dm.adam.clip_norm),
      PDM_INT("train_dm.batch_size", c.train_dm.batch_size),
      PDM_INT("train_dm.grad_accum", c.train_dm.grad_accum),
      PDM_DBL("train_dm.eps", c.train_dm.eps),
      PDM_BOOL("train_dm.stochastic_encode", c.train_dm.stochastic_encode),

      Field{"sampler.method", [](RunConfig& c, const std::string& v) { c.sampler.method = parse_solver(v); },
            [](const RunConfig& c) { return solver_name(c.sampler.method); }},
      PDM_INT("sampler.steps", c.sampler.steps),
      PDM_DBL("sampler.rtol", c.sampler.rtol),
      PDM_DBL("sampler.atol", c.sampler.atol),
      PDM_DBL("sampler.eps", c.sampler.eps),
      PDM_INT("sampler.count", c.sample_count),

      PDM_INT("ablate.count", c.ablate_count),
      PDM_INT("metrics.log_every", c.log_every),
  };
  return table;
}

#undef PDM_INT
#undef PDM_U64
#undef PDM_DBL
#undef PDM_BOOL
#undef PDM_STR

}  // namespace

RunConfig::RunConfig() {
  train_ae.batch_size = 16;
  train_dm.batch_size = 16;
  unet.spec = autoencoder.spec;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  try {
    autoencoder.validate();
    unet.validate();
    train_ae.validate();
    train_dm.validate();
    sampler.validate();
    parse_synth_kind(data_kind);
  } catch (const InvalidArgument& e) {
    fail(std::string("invalid configuration: ") + e.what());
  }
  if (!(autoencoder.spec == unet.spec)) fail("autoencoder and unet pyramid specs differ");
  if (device != "cpu") fail("device '" + device + "' is not available (only 'cpu' is supported)");
  if (out.empty()) fail("run.out must not be empty");
  if (data_count < 1) fail("data.count must be >= 1");
  if (filter.min_width < 0 || filter.min_height < 0) fail("filter thresholds must be non-negative");
  if (train_ae_steps < 0 || train_dm_steps < 0) fail("training steps must be non-negative");
  if (calibrate_iters < 1) fail("calibrate.iterations must be >= 1");
  if (!(calibrate_ema_decay > 0.0 && calibrate_ema_decay < 1.0)) fail("calibrate.ema_decay must lie in (0, 1)");
  if (calibrate_batch < 1) fail("calibrate.batch_size must be >= 1");
  if (sample_count < 1) fail("sampler.count must be >= 1");
  if (ablate_count < 1) fail("ablate.count must be >= 1");
  if (log_every < 1) fail("metrics.log_every must be >= 1");
  if (spec().image_height != spec().image_width && center_crop)
    fail("center_crop produces square images; set pyramid.image_width = pyramid.image_height or disable it");
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key != key) continue;
    try {
      f.set(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError("invalid value '" + value + "' for " + key);
    }
    return;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, section;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      apply_setting(cfg, full, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    apply_config_text(cfg, ss.str(), path.string());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    apply_setting(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  return cfg;
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace pdm
