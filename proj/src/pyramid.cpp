#include "pdm/pyramid.hpp"

#include <sstream>

#include "pdm/error.hpp"

namespace pdm {

void PyramidSpec::validate() const {
  if (levels.empty()) throw InvalidArgument("pyramid spec needs at least one level");
  if (image_height < 1 || image_width < 1 || image_channels < 1)
    throw InvalidArgument("pyramid spec image dimensions must be positive");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto& l = levels[i];
    if (l.resolution < 1 || l.channels < 1) throw InvalidArgument("pyramid level dimensions must be positive");
    if (i > 0 && l.resolution <= levels[i - 1].resolution)
      throw InvalidArgument("pyramid level resolutions must be strictly increasing");
    if (image_height % l.resolution != 0)
      throw InvalidArgument("level resolution " + std::to_string(l.resolution) + " does not divide image height " +
                            std::to_string(image_height));
    if ((image_width * l.resolution) % image_height != 0)
      throw InvalidArgument("level resolution " + std::to_string(l.resolution) +
                            " does not scale to an integral width");
  }
}

std::int64_t PyramidSpec::level_height(std::int64_t i) const { return levels.at(static_cast<std::size_t>(i)).resolution; }

std::int64_t PyramidSpec::level_width(std::int64_t i) const { return level_height(i) * image_width / image_height; }

Shape PyramidSpec::level_shape(std::int64_t i, std::int64_t batch) const {
  return {batch, levels.at(static_cast<std::size_t>(i)).channels, level_height(i), level_width(i)};
}

std::int64_t PyramidSpec::level_at_resolution(std::int64_t height) const {
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (levels[i].resolution == height) return static_cast<std::int64_t>(i);
  return -1;
}

std::string PyramidSpec::levels_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < levels.size(); ++i)
    os << (i ? "," : "") << levels[i].resolution << ':' << levels[i].channels;
  return os.str();
}

std::vector<PyramidLevel> PyramidSpec::parse_levels(const std::string& text) {
  std::vector<PyramidLevel> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InvalidArgument("pyramid level '" + item + "' must be RES:CHANNELS");
    try {
      out.push_back({std::stoll(item.substr(0, colon)), std::stoll(item.substr(colon + 1))});
    } catch (const std::logic_error&) {
      throw InvalidArgument("pyramid level '" + item + "' must be RES:CHANNELS");
    }
  }
  return out;
}

PyramidSpec default_pyramid_spec() {
  PyramidSpec s;
  s.levels = {{4, 32}, {8, 16}, {16, 8}};
  s.image_height = s.image_width = 64;
  s.image_channels = 3;
  return s;
}

double compression_rate(const PyramidSpec& spec) {
  spec.validate();
  double latent = 0.0;
  for (std::int64_t i = 0; i < spec.num_levels(); ++i)
    latent += static_cast<double>(spec.level_height(i) * spec.level_width(i) * spec.levels[static_cast<std::size_t>(i)].channels);
  return static_cast<double>(spec.image_height * spec.image_width * spec.image_channels) / latent;
}

PyramidLatent PyramidLatent::zeros(const PyramidSpec& spec, std::int64_t batch) {
  PyramidLatent p;
  for (std::int64_t i = 0; i < spec.num_levels(); ++i) p.levels.emplace_back(spec.level_shape(i, batch));
  return p;
}

PyramidLatent PyramidLatent::zeros_like(const PyramidLatent& other) {
  PyramidLatent p;
  for (const auto& t : other.levels) p.levels.emplace_back(t.shape());
  return p;
}

std::int64_t PyramidLatent::batch() const {
  if (levels.empty()) throw InvalidArgument("empty pyramid latent");
  return levels.front().dim(0);
}

std::int64_t PyramidLatent::numel() const {
  std::int64_t n = 0;
  for (const auto& t : levels) n += t.numel();
  return n;
}

bool PyramidLatent::all_finite() const {
  for (const auto& t : levels)
    if (!t.all_finite()) return false;
  return true;
}

void PyramidLatent::check_matches(const PyramidSpec& spec) const {
  if (num_levels() != spec.num_levels())
    throw InvalidArgument("latent has " + std::to_string(num_levels()) + " levels, spec has " +
                          std::to_string(spec.num_levels()));
  const std::int64_t n = batch();
  for (std::int64_t i = 0; i < num_levels(); ++i)
    if (levels[static_cast<std::size_t>(i)].shape() != spec.level_shape(i, n))
      throw InvalidArgument("latent level " + std::to_string(i) + " has shape " +
                            shape_string(levels[static_cast<std::size_t>(i)].shape()) + ", spec expects " +
                            shape_string(spec.level_shape(i, n)));
}

void PyramidLatent::check_compatible(const PyramidLatent& other) const {
  if (other.levels.size() != levels.size()) throw InvalidArgument("pyramid level counts differ");
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (levels[i].shape() != other.levels[i].shape())
      throw InvalidArgument("pyramid level " + std::to_string(i) + " shapes differ: " +
                            shape_string(levels[i].shape()) + " vs " + shape_string(other.levels[i].shape()));
}

PyramidLatent& PyramidLatent::operator+=(const PyramidLatent& o) {
  check_compatible(o);
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i] += o.levels[i];
  return *this;
}

PyramidLatent& PyramidLatent::operator-=(const PyramidLatent& o) {
  check_compatible(o);
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i] -= o.levels[i];
  return *this;
}

PyramidLatent& PyramidLatent::operator*=(double s) {
  for (auto& t : levels) t *= s;
  return *this;
}

void PyramidLatent::axpy(double a, const PyramidLatent& x) {
  check_compatible(x);
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i].axpy(a, x.levels[i]);
}

PyramidLatent PyramidLatent::batch_slice(std::int64_t begin, std::int64_t end) const {
  PyramidLatent p;
  for (const auto& t : levels) p.levels.push_back(t.batch_slice(begin, end));
  return p;
}

PyramidLatent operator+(PyramidLatent a, const PyramidLatent& b) { return a += b; }
PyramidLatent operator-(PyramidLatent a, const PyramidLatent& b) { return a -= b; }
PyramidLatent operator*(double s, PyramidLatent a) { return a *= s; }

double max_abs_diff(const PyramidLatent& a, const PyramidLatent& b) {
  a.check_compatible(b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.levels.size(); ++i) m = std::max(m, max_abs_diff(a.levels[i], b.levels[i]));
  return m;
}

bool bit_equal(const PyramidLatent& a, const PyramidLatent& b) {
  if (a.levels.size() != b.levels.size()) return false;
  for (std::size_t i = 0; i < a.levels.size(); ++i)
    if (!bit_equal(a.levels[i], b.levels[i])) return false;
  return true;
}

double squared_norm(const PyramidLatent& a) {
  double s = 0.0;
  for (const auto& t : a.levels) s += t.squared_norm();
  return s;
}

PyramidLatent ablate_latents(const PyramidLatent& latent, AblationMode mode, std::int64_t level) {
  if (level < 0 || level >= latent.num_levels())
    throw InvalidArgument("ablation level " + std::to_string(level) + " out of range");
  PyramidLatent out = latent;
  for (std::int64_t i = 0; i < out.num_levels(); ++i) {
    const bool keep = mode == AblationMode::include_only ? i == level : i != level;
    if (!keep) out.levels[static_cast<std::size_t>(i)].fill(0.0);
  }
  return out;
}

}  // namespace pdm
