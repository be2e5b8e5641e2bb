#include "doctest.h"

#include <cmath>

#include "pdm/autoencoder.hpp"
#include "pdm/error.hpp"
#include "support.hpp"

using namespace pdm;
using pdm::testing::gradcheck;

namespace {

Tensor random_images(std::int64_t n, std::int64_t size, std::uint64_t seed) {
  Rng r(seed);
  return r.uniform_tensor({n, 3, size, size}, -1.0, 1.0);
}

AutoencoderConfig micro_config() {
  AutoencoderConfig c;
  c.spec.image_height = c.spec.image_width = 8;
  c.spec.levels = {{2, 4}, {4, 2}};
  c.widths = {4, 4, 4};
  c.attention_max_resolution = 4;
  c.kl_weight = 0.1;
  c.logvar_init = -2.0;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("compression rate of 1024px with levels 8:64,16:32 is 1:256") {
  PyramidSpec s;
  s.image_height = s.image_width = 1024;
  s.levels = {{8, 64}, {16, 32}};
  CHECK(compression_rate(s) == 256.0);
  // 64x64x3 over 4x4x32 + 8x8x16 + 16x16x8
  CHECK(compression_rate(default_pyramid_spec()) == 12288.0 / 3584.0);
}

TEST_CASE("pyramid spec validation and level strings") {
  PyramidSpec s = default_pyramid_spec();
  CHECK(s.levels_string() == "4:32,8:16,16:8");
  CHECK(PyramidSpec::parse_levels("4:32,8:16,16:8") == s.levels);
  CHECK(s.level_at_resolution(8) == 1);
  CHECK(s.level_at_resolution(32) == -1);
  s.levels = {{8, 4}, {4, 4}};
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  CHECK_THROWS(PyramidSpec::parse_levels("4-32"));
}

TEST_CASE("include_only and exclude_only partition the pyramid") {
  const PyramidSpec spec = default_pyramid_spec();
  Rng r(1);
  PyramidLatent z;
  for (std::int64_t i = 0; i < spec.num_levels(); ++i) z.levels.push_back(r.normal_tensor(spec.level_shape(i, 2)));
  PyramidLatent sum_inc = PyramidLatent::zeros_like(z);
  for (std::int64_t l = 0; l < z.num_levels(); ++l) {
    const auto inc = ablate_latents(z, AblationMode::include_only, l);
    const auto exc = ablate_latents(z, AblationMode::exclude_only, l);
    CHECK(bit_equal(inc + exc, z));
    for (std::int64_t j = 0; j < z.num_levels(); ++j) {
      const bool zero_inc = inc.levels[j].squared_norm() == 0.0;
      const bool zero_exc = exc.levels[j].squared_norm() == 0.0;
      CHECK(zero_inc != zero_exc);
      CHECK(zero_inc == (j != l));
    }
    sum_inc += inc;
  }
  CHECK(bit_equal(sum_inc, z));
  CHECK_THROWS_AS(ablate_latents(z, AblationMode::include_only, 3), InvalidArgument);
}

TEST_CASE("encode and decode shapes follow the spec") {
  AutoencoderConfig c;
  c.seed = 1;
  PyramidAutoencoder ae(c);
  const Tensor x = random_images(2, 64, 1);
  const auto [z, stats] = ae.encode(x, EncodeMode::sample, 5);
  z.check_matches(c.spec);
  CHECK(stats.mean.size() == 3);
  const Tensor y = ae.decode(z);
  CHECK(y.shape() == Shape{2, 3, 64, 64});
  double peak = 0.0;
  for (double v : y.values()) peak = std::max(peak, std::abs(v));
  CHECK(peak <= 1.0);
  CHECK_THROWS_AS(ae.encode(random_images(1, 32, 1), EncodeMode::deterministic), InvalidArgument);
  PyramidLatent bad = z;
  bad.levels.pop_back();
  CHECK_THROWS_AS(ae.decode(bad), InvalidArgument);
  Tensor out_of_range = x;
  out_of_range[0] = 1.5;
  CHECK_THROWS_AS(ae.encode(out_of_range, EncodeMode::deterministic), InvalidArgument);
  Tensor nan = x;
  nan[0] = std::nan("");
  CHECK_THROWS_AS(ae.encode(nan, EncodeMode::deterministic), DataError);
}

TEST_CASE("encoding is deterministic per seed and per sample") {
  AutoencoderConfig c;
  c.seed = 7;
  PyramidAutoencoder a(c), b(c);
  const Tensor x = random_images(3, 64, 2);
  CHECK(bit_equal(a.encode(x, EncodeMode::sample, 9).first, b.encode(x, EncodeMode::sample, 9).first));
  CHECK_FALSE(bit_equal(a.encode(x, EncodeMode::sample, 9).first, a.encode(x, EncodeMode::sample, 10).first));
  const auto det = a.encode(x, EncodeMode::deterministic).first;
  for (std::int64_t i = 0; i < det.num_levels(); ++i)
    CHECK(bit_equal(det.levels[i], a.encode(x, EncodeMode::sample, 9).second.mean[i]));
  CHECK(bit_equal(a.reconstruct(x), b.reconstruct(x)));
}

TEST_CASE("decoder has one more block per module than the encoder") {
  AutoencoderConfig c;
  c.encoder_blocks = 2;
  PyramidAutoencoder ae(c);
  const auto enc = ae.describe_encoder();
  const auto dec = ae.describe_decoder();
  REQUIRE(enc.size() == 4);
  REQUIRE(dec.size() == 4);
  for (const auto& m : enc) CHECK(m.blocks == 2);
  for (const auto& m : dec) CHECK(m.blocks == 3);
  CHECK(enc[0].resolution == 64);
  CHECK(enc[0].attention == "none");
  CHECK(enc[2].attention == "linear");
  CHECK(dec.back().resolution == 64);
  CHECK(dec.front().attention == "spatial_channel");
  CHECK(dec.back().attention == "none");
  auto ep = ae.encoder_parameters();
  auto dp = ae.decoder_parameters();
  CHECK(ep.parameter_count() < dp.parameter_count());
}

TEST_CASE("every encoder weight is spectrally normalized") {
  AutoencoderConfig c;
  c.seed = 2;
  PyramidAutoencoder ae(c);
  ae.power_iterate(300);
  auto ep = ae.encoder_parameters();
  std::int64_t weights = 0;
  for (const auto& [name, v] : ep.params)
    if (name.ends_with(".weight")) ++weights;
  CHECK(static_cast<std::int64_t>(ep.spectral.size()) == weights);
  for (const auto& e : ep.spectral) {
    const double s = pdm::testing::sigma_max(pdm::testing::normalized_weight(e));
    INFO(e.name);
    CHECK(s >= 0.99);
    CHECK(s <= 1.01);
  }
  auto dp = ae.decoder_parameters();
  CHECK(dp.spectral.empty());
}

TEST_CASE("1-Lipschitz encoder configuration") {
  AutoencoderConfig c;
  c.lipschitz_chain = true;
  c.activation = Activation::relu;
  c.seed = 4;
  PyramidAutoencoder ae(c);
  ae.power_iterate(300);
  Rng r(11);
  double worst = -1e9;
  for (int pair = 0; pair < 100; ++pair) {
    const Tensor xi = r.uniform_tensor({1, 3, 64, 64}, -1.0, 1.0);
    Tensor xj = xi;
    const double scale = pair % 2 ? 1.0 : 1e-3;
    for (auto& v : xj.values()) v = std::clamp(v + r.normal(0.0, scale), -1.0, 1.0);
    const auto ei = ae.encode(xi, EncodeMode::deterministic).first;
    const auto ej = ae.encode(xj, EncodeMode::deterministic).first;
    const double dz = std::sqrt(squared_norm(ei - ej));
    const double dx = std::sqrt((xi - xj).squared_norm());
    worst = std::max(worst, dz - dx);
    // per level: 1x1 maps are 1-Lipschitz and each 2x2 average pool halves the norm
    for (std::int64_t l = 0; l < ei.num_levels(); ++l) {
      const double factor = static_cast<double>(c.spec.level_height(l)) / 64.0;
      CHECK(std::sqrt((ei.levels[l] - ej.levels[l]).squared_norm()) <= factor * dx + 1e-5);
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("KL term matches the closed form") {
  VariationalStats s;
  s.mean = {Tensor({2, 1, 1, 1}, {0.5, -1.0})};
  s.logvar = {Tensor({2, 1, 1, 1}, {0.0, std::log(2.0)})};
  const Tensor x({2, 1, 1, 2}, {0.0, 0.5, -0.5, 1.0});
  const Tensor xh({2, 1, 1, 2}, {0.25, 0.5, -0.5, 0.0});
  // L1 mean = (0.25 + 1) / 4; KL = 0.5 * [(0.25) + (1 + 2 - 1 - ln 2)] / 2
  const double expect = 1.25 / 4 + 0.1 * 0.5 * (0.25 + 2.0 - std::log(2.0)) / 2.0;
  CHECK(reconstruction_loss(x, xh, s, 0.1) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(reconstruction_loss(x, xh, s, 0.0) == doctest::Approx(1.25 / 4).epsilon(1e-14));
  VariationalStats prior;
  prior.mean = {Tensor({1, 2, 2, 2})};
  prior.logvar = {Tensor({1, 2, 2, 2})};
  CHECK(reconstruction_loss(x.batch_slice(0, 1), x.batch_slice(0, 1), prior, 1.0) == 0.0);
}

TEST_CASE("psnr") {
  const Tensor a({1, 1, 1, 4}, {0, 0, 0, 0});
  const Tensor b({1, 1, 1, 4}, {0.1, -0.1, 0.1, -0.1});
  CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(4.0 / 0.01)));
  CHECK(std::isinf(psnr(a, a)));
}

TEST_CASE("gradcheck: micro autoencoder") {
  PyramidAutoencoder ae(micro_config());
  ParamList p = ae.parameters();
  Rng pr(8);
  perturb_parameters(p, pr, 0.05);
  const Tensor x = random_images(2, 8, 3);
  auto loss = [&] {
    ForwardContext ctx;
    ctx.training = true;
    ctx.sample_keys = {1, 2};
    auto enc = ae.encode(Var::constant(x), ctx, EncodeMode::sample);
    Var xh = ae.decode(enc.latents, ctx);
    return reconstruction_loss(Var::constant(x), xh, enc.means, enc.logvars, 0.1);
  };
  const auto g = gradcheck(loss, p.params, 8);
  INFO(g.worst);
  CHECK(g.max_rel_error <= 1e-4);
}

TEST_CASE("config validation") {
  AutoencoderConfig c;
  c.widths = {8, 16};
  CHECK_THROWS_AS(PyramidAutoencoder{c}, InvalidArgument);
  c = AutoencoderConfig{};
  c.spec.levels = {{3, 4}};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}
