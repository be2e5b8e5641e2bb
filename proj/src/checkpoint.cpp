#include "pdm/checkpoint.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pdm/error.hpp"

namespace pdm {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'P', 'D', 'M', 'T'};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_double(v[i]);
  return s;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    out.push_back(std::stod(item, &used));
    if (used != item.size()) throw std::invalid_argument(item);
  }
  return out;
}

template <class T>
void put(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T take(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw CheckpointError("tensor archive truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

std::string encode_tensors(const NamedTensors& tensors) {
  std::string buf(kMagic, 4);
  put<std::uint32_t>(buf, kCheckpointFormatVersion);
  put<std::uint64_t>(buf, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) put<std::int64_t>(buf, d);
    buf.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.numel()) * sizeof(double));
  }
  return buf;
}

NamedTensors decode_tensors(const std::string& buf) {
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) throw CheckpointError("tensor archive: bad magic");
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(buf, pos);
  if (version != kCheckpointFormatVersion)
    throw CheckpointError("tensor archive format version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  const auto count = take<std::uint64_t>(buf, pos);
  NamedTensors out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = take<std::uint32_t>(buf, pos);
    if (pos + len > buf.size()) throw CheckpointError("tensor archive truncated");
    std::string name = buf.substr(pos, len);
    pos += len;
    const auto rank = take<std::uint32_t>(buf, pos);
    if (rank > 8) throw CheckpointError("tensor archive: implausible rank for " + name);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(take<std::int64_t>(buf, pos));
    Tensor t(shape);
    const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(double);
    if (pos + bytes > buf.size()) throw CheckpointError("tensor archive truncated");
    std::memcpy(t.data(), buf.data() + pos, bytes);
    pos += bytes;
    out.emplace_back(std::move(name), std::move(t));
  }
  if (pos != buf.size()) throw CheckpointError("tensor archive has trailing bytes");
  return out;
}

std::uint32_t crc_of(const std::string& s) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + p.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  if (!f) throw IoError("write failed for " + p.string());
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw CheckpointError("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string require(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw CheckpointError("checkpoint manifest lacks '" + key + "'");
  return it->second;
}

}  // namespace

std::string join_ints(const std::vector<std::int64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::int64_t> parse_ints(const std::string& text) {
  std::vector<std::int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    out.push_back(std::stoll(item, &used));
    if (used != item.size()) throw InvalidArgument("not an integer list: " + text);
  }
  if (out.empty()) throw InvalidArgument("empty integer list");
  return out;
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  const std::string archive = encode_tensors(ckpt.tensors);
  std::ostringstream m;
  m << "format_version = " << kCheckpointFormatVersion << "\n";
  m << "kind = " << ckpt.kind << "\n";
  m << "spec.levels = " << ckpt.spec.levels_string() << "\n";
  m << "spec.image_height = " << ckpt.spec.image_height << "\n";
  m << "spec.image_width = " << ckpt.spec.image_width << "\n";
  m << "spec.image_channels = " << ckpt.spec.image_channels << "\n";
  for (const auto& [k, v] : ckpt.architecture) m << "arch." << k << " = " << v << "\n";
  if (ckpt.scaler) {
    const auto& s = *ckpt.scaler;
    m << "scaler.frozen = " << (s.frozen() ? "true" : "false") << "\n";
    m << "scaler.iterations = " << s.iterations() << "\n";
    m << "scaler.calibration_iters = " << s.calibration_iters() << "\n";
    m << "scaler.ema_decay = " << fmt_double(s.ema_decay()) << "\n";
    m << "scaler.per_level_std = " << join_doubles(s.per_level_std()) << "\n";
    m << "scaler.per_level_scale = " << join_doubles(s.per_level_scale()) << "\n";
  }
  m << "step = " << ckpt.step << "\n";
  m << "optimizer_steps = " << ckpt.optimizer_steps << "\n";
  m << "tensor_count = " << ckpt.tensors.size() << "\n";
  for (const auto& [name, t] : ckpt.tensors) m << "tensor." << name << " = " << shape_string(t.shape()) << "\n";
  m << "tensors_bytes = " << archive.size() << "\n";
  char crc[16];
  std::snprintf(crc, sizeof crc, "%08x", crc_of(archive));
  m << "tensors_crc32 = " << crc << "\n";

  const fs::path parent = dir.parent_path().empty() ? fs::path(".") : dir.parent_path();
  fs::create_directories(parent);
  const fs::path tmp = parent / (dir.filename().string() + ".tmp");
  const fs::path old = parent / (dir.filename().string() + ".old");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  write_file(tmp / "tensors.bin", archive);
  write_file(tmp / "manifest.txt", m.str());
  fs::remove_all(old);
  if (fs::exists(dir)) fs::rename(dir, old);
  fs::rename(tmp, dir);
  fs::remove_all(old);
}

bool checkpoint_exists(const fs::path& dir) { return fs::exists(dir / "manifest.txt") && fs::exists(dir / "tensors.bin"); }

Checkpoint load_checkpoint(const fs::path& dir, const PyramidSpec* expected_spec) {
  if (!checkpoint_exists(dir)) throw CheckpointError("no checkpoint at " + dir.string());
  std::map<std::string, std::string> kv;
  {
    std::istringstream in(read_file(dir / "manifest.txt"));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw CheckpointError("malformed manifest line: " + line);
      kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
  }
  const std::string version = require(kv, "format_version");
  if (version != std::to_string(kCheckpointFormatVersion))
    throw CheckpointError("checkpoint format version " + version + " unsupported (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  const std::string archive = read_file(dir / "tensors.bin");
  char crc[16];
  std::snprintf(crc, sizeof crc, "%08x", crc_of(archive));
  if (std::to_string(archive.size()) != require(kv, "tensors_bytes") || crc != require(kv, "tensors_crc32"))
    throw CheckpointError("checksum mismatch in " + (dir / "tensors.bin").string() + " (truncated or corrupted)");

  Checkpoint c;
  try {
    c.kind = require(kv, "kind");
    c.spec.levels = PyramidSpec::parse_levels(require(kv, "spec.levels"));
    c.spec.image_height = std::stoll(require(kv, "spec.image_height"));
    c.spec.image_width = std::stoll(require(kv, "spec.image_width"));
    c.spec.image_channels = std::stoll(require(kv, "spec.image_channels"));
    c.spec.validate();
    for (const auto& [k, v] : kv)
      if (k.rfind("arch.", 0) == 0) c.architecture[k.substr(5)] = v;
    if (kv.count("scaler.frozen")) {
      c.scaler = LatentScaler::restore(parse_doubles(require(kv, "scaler.per_level_std")),
                                       parse_doubles(require(kv, "scaler.per_level_scale")),
                                       std::stod(require(kv, "scaler.ema_decay")),
                                       std::stoll(require(kv, "scaler.calibration_iters")),
                                       std::stoll(require(kv, "scaler.iterations")),
                                       require(kv, "scaler.frozen") == "true");
    }
    c.step = std::stoll(require(kv, "step"));
    c.optimizer_steps = std::stoll(require(kv, "optimizer_steps"));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  if (expected_spec && !(*expected_spec == c.spec))
    throw CheckpointError("spec conflict: checkpoint " + dir.string() + " was written for levels " +
                          c.spec.levels_string() + " at " + std::to_string(c.spec.image_height) + "x" +
                          std::to_string(c.spec.image_width) + ", configured levels are " +
                          expected_spec->levels_string() + " at " + std::to_string(expected_spec->image_height) +
                          "x" + std::to_string(expected_spec->image_width));
  c.tensors = decode_tensors(archive);
  if (std::to_string(c.tensors.size()) != require(kv, "tensor_count"))
    throw CheckpointError("tensor count does not match manifest");
  return c;
}

NamedTensors snapshot(ParamList& params, Adam* optimizer) {
  NamedTensors out;
  for (const auto& [name, v] : params.params) out.emplace_back(name, v->value());
  for (const auto& [name, t] : params.buffers) out.emplace_back(name, *t);
  if (optimizer) {
    optimizer->init_state(params);
    for (const auto& [name, t] : optimizer->state_tensors()) out.emplace_back("optim." + name, *t);
  }
  return out;
}

void restore(ParamList& params, const NamedTensors& tensors, Adam* optimizer) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    if (it->second->shape() != shape)
      throw CheckpointError("tensor '" + name + "' has shape " + shape_string(it->second->shape()) + ", model expects " +
                            shape_string(shape));
    return *it->second;
  };
  for (auto& [name, v] : params.params) v->mutable_value() = fetch(name, v->shape());
  for (auto& [name, t] : params.buffers) *t = fetch(name, t->shape());
  if (optimizer) {
    optimizer->init_state(params);
    for (auto& [name, t] : optimizer->state_tensors()) {
      auto it = by_name.find("optim." + name);
      if (it != by_name.end()) *t = fetch("optim." + name, t->shape());
    }
  }
}

std::map<std::string, std::string> autoencoder_architecture(const AutoencoderConfig& c) {
  return {{"widths", join_ints(c.widths)},
          {"encoder_blocks", std::to_string(c.encoder_blocks)},
          {"branch_blocks", std::to_string(c.branch_blocks)},
          {"attention_max_resolution", std::to_string(c.attention_max_resolution)},
          {"activation", activation_name(c.activation)},
          {"p_max", fmt_double(c.decoder_p_max)},
          {"kl_weight", fmt_double(c.kl_weight)},
          {"logvar_init", fmt_double(c.logvar_init)},
          {"lipschitz_chain", c.lipschitz_chain ? "true" : "false"},
          {"seed", std::to_string(c.seed)}};
}

AutoencoderConfig autoencoder_config_from(const std::map<std::string, std::string>& arch, const PyramidSpec& spec) {
  AutoencoderConfig c;
  c.spec = spec;
  try {
    c.widths = parse_ints(require(arch, "widths"));
    c.encoder_blocks = std::stoll(require(arch, "encoder_blocks"));
    c.branch_blocks = std::stoll(require(arch, "branch_blocks"));
    c.attention_max_resolution = std::stoll(require(arch, "attention_max_resolution"));
    c.activation = parse_activation(require(arch, "activation"));
    c.decoder_p_max = std::stod(require(arch, "p_max"));
    c.kl_weight = std::stod(require(arch, "kl_weight"));
    c.logvar_init = std::stod(require(arch, "logvar_init"));
    c.lipschitz_chain = require(arch, "lipschitz_chain") == "true";
    c.seed = std::stoull(require(arch, "seed"));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("malformed autoencoder architecture: ") + e.what());
  }
  return c;
}

std::map<std::string, std::string> unet_architecture(const PyramidUNetConfig& c) {
  return {{"widths", join_ints(c.backbone_level_widths)},
          {"blocks_per_level", std::to_string(c.blocks_per_level)},
          {"branch_blocks", std::to_string(c.branch_blocks)},
          {"attention_max_resolution", std::to_string(c.attention_max_resolution)},
          {"p_max", fmt_double(c.p_max)},
          {"time_embed_dim", std::to_string(c.time_embed_dim)},
          {"spectral", c.spectral ? "true" : "false"},
          {"use_branches", c.use_branches ? "true" : "false"},
          {"activation", activation_name(c.activation)},
          {"seed", std::to_string(c.seed)}};
}

PyramidUNetConfig unet_config_from(const std::map<std::string, std::string>& arch, const PyramidSpec& spec) {
  PyramidUNetConfig c;
  c.spec = spec;
  try {
    c.backbone_level_widths = parse_ints(require(arch, "widths"));
    c.blocks_per_level = std::stoll(require(arch, "blocks_per_level"));
    c.branch_blocks = std::stoll(require(arch, "branch_blocks"));
    c.attention_max_resolution = std::stoll(require(arch, "attention_max_resolution"));
    c.p_max = std::stod(require(arch, "p_max"));
    c.time_embed_dim = std::stoll(require(arch, "time_embed_dim"));
    c.spectral = require(arch, "spectral") == "true";
    c.use_branches = require(arch, "use_branches") == "true";
    c.activation = parse_activation(require(arch, "activation"));
    c.seed = std::stoull(require(arch, "seed"));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("malformed unet architecture: ") + e.what());
  }
  return c;
}

}  // namespace pdm
