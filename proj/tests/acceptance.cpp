// Acceptance runner: one PASS/FAIL line per criterion.
//   pdm_acceptance                 all criteria
//   pdm_acceptance --criterion 4   just one (exit status reflects it)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdm/autoencoder.hpp"
#include "pdm/blocks.hpp"
#include "pdm/cli.hpp"
#include "pdm/data.hpp"
#include "pdm/rectflow.hpp"
#include "pdm/sampler.hpp"
#include "pdm/unet.hpp"
#include "support.hpp"

using namespace pdm;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

PyramidLatent random_latent(const PyramidSpec& spec, std::int64_t batch, std::uint64_t seed) {
  Rng r(seed);
  PyramidLatent z;
  for (std::int64_t i = 0; i < spec.num_levels(); ++i) z.levels.push_back(r.normal_tensor(spec.level_shape(i, batch)));
  return z;
}

AutoencoderConfig micro_ae() {
  AutoencoderConfig c;
  c.spec.image_height = c.spec.image_width = 8;
  c.spec.levels = {{2, 3}, {4, 2}};
  c.widths = {4, 4, 4};
  c.attention_max_resolution = 4;
  c.kl_weight = 0.1;
  c.logvar_init = -2.0;
  c.seed = 3;
  return c;
}

PyramidUNetConfig micro_unet() {
  PyramidUNetConfig c;
  c.spec = micro_ae().spec;
  c.backbone_level_widths = {4, 6};
  c.attention_max_resolution = 4;
  c.time_embed_dim = 4;
  c.seed = 5;
  return c;
}

double param_rel_diff(ParamList& a, ParamList& b) {
  double d = 0, n = 0;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    d += (a.params[i].second->value() - b.params[i].second->value()).squared_norm();
    n += b.params[i].second->value().squared_norm();
  }
  return std::sqrt(d / n);
}

// ---------------------------------------------------------------------------

Outcome c1_weight_table() {
  struct Row {
    std::int64_t height, channels;
    double spatial, channel;
  };
  const Row table[] = {{1024, 16, 1.0000, 0.0000}, {512, 32, 0.9999, 0.0001}, {256, 64, 0.9990, 0.0010},
                       {128, 128, 0.9922, 0.0078}, {64, 256, 0.9412, 0.0588}, {32, 512, 0.6667, 0.3333},
                       {16, 1024, 0.2000, 0.8000}, {8, 1024, 0.0588, 0.9412}};
  Outcome o;
  for (const auto& r : table) {
    const auto w = sc_attention_weights(r.height, r.height, r.channels);
    o.require(std::abs(std::round(w.spatial * 1e4) / 1e4 - r.spatial) < 1e-12 &&
                  std::abs(std::round(w.channel * 1e4) / 1e4 - r.channel) < 1e-12,
              "row " + std::to_string(r.height));
  }
  o.note("8 rows checked to 4 decimals");
  return o;
}

Outcome c2_compression() {
  PyramidSpec s;
  s.image_height = s.image_width = 1024;
  s.levels = {{8, 64}, {16, 32}};
  Outcome o;
  const double rate = compression_rate(s);
  o.require(rate == 256.0, "rate " + fmt("%.17g", rate));
  o.note("1024x1024x3 / (16x16x32 + 8x8x64) = " + fmt("%.0f", rate));
  return o;
}

Outcome c3_crop() {
  Outcome o;
  const CropBox b = center_crop_box(3200, 2400);
  o.require(b.top == 400 && b.left == 0 && b.height == 2400 && b.width == 2400, "crop box");
  Image8 img = Image8::filled(3200, 2400, 3, 0);
  for (std::int64_t y = 0; y < 3200; ++y) img.at(y, 0, 0) = static_cast<std::uint8_t>(y % 251);
  const Image8 c = center_crop_min_side(img);
  o.require(c.height == 2400 && c.width == 2400, "output size");
  o.require(c.at(0, 0, 0) == 400 % 251 && c.at(2399, 0, 0) == 2799 % 251, "rows 400..2799 retained");
  o.note("3200x2400 -> 2400x2400, 400 px removed per side");
  return o;
}

Outcome c4_flow_oracle() {
  Outcome o;
  pdm::testing::GaussianFlow g;
  Rng r(1);
  const PyramidLatent z{{r.normal_tensor({10000, 2, 1, 1})}};
  for (auto m : {SolverMethod::euler, SolverMethod::rk45}) {
    SamplerConfig cfg;
    cfg.method = m;
    const auto out = integrate(g.field(), z, cfg);
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
    pdm::testing::moments(out.z.levels[0], mean, cov);
    const double em = (mean - g.mu).norm() / g.mu.norm();
    const double ec = (cov - g.sigma).norm() / g.sigma.norm();
    o.require(em <= 0.05 && ec <= 0.05, solver_name(m) + " moments");
    o.note(solver_name(m) + " mean err " + fmt("%.4f", em) + " cov err " + fmt("%.4f", ec));
  }
  const VelocityField smooth = [](const PyramidLatent& x, double t) {
    PyramidLatent v = x;
    for (auto& e : v.levels[0].values()) e = -std::sin(3.0 * t) * e + std::cos(t);
    return v;
  };
  const PyramidLatent small{{z.levels[0].batch_slice(0, 500)}};
  double worst = 0.0;
  for (const auto& f : {g.field(), smooth}) {
    SamplerConfig e, k;
    k.method = SolverMethod::rk45;
    const double d = pdm::testing::rel_diff(euler_sample(f, small, e).levels[0], rk45_sample(f, small, k).z.levels[0]);
    worst = std::max(worst, d);
  }
  o.require(worst <= 0.01, "Euler(200) vs RK45");
  o.note("Euler/RK45 rel diff " + fmt("%.2e", worst));
  return o;
}

Outcome c5_loss() {
  Outcome o;
  const auto spec = default_pyramid_spec();
  const auto z0 = random_latent(spec, 2, 1), z1 = random_latent(spec, 2, 2), v = random_latent(spec, 2, 3);
  o.require(std::abs(pdm_loss(z1 - z0, z0, z1).total) <= 1e-10, "perfect predictor");
  const auto zero = PyramidLatent::zeros(spec, 2);
  PyramidLatent ones = zero;
  for (auto& l : ones.levels) l.fill(1.0);
  o.require(std::abs(pdm_loss(zero, zero, ones).total - 3.0) <= 1e-10, "unit velocity case");
  const auto full = pdm_loss(v, z0, z1);
  double sum = 0.0;
  for (std::int64_t i = 0; i < spec.num_levels(); ++i) {
    // per-level mean squared error written out directly
    double sq = 0.0;
    const auto n = v.levels[i].numel();
    for (std::int64_t k = 0; k < n; ++k) {
      const double d = z1.levels[i][k] - z0.levels[i][k] - v.levels[i][k];
      sq += d * d;
    }
    sum += sq / static_cast<double>(n);
  }
  o.require(std::abs(full.total - sum) <= 1e-10, "additivity");
  o.note("additivity gap " + fmt("%.1e", std::abs(full.total - sum)));
  return o;
}

Outcome c6_gradients() {
  using pdm::testing::gradcheck;
  Outcome o;
  auto record = [&](const std::string& name, const pdm::testing::GradCheck& g) {
    o.require(g.max_rel_error <= 1e-4, name + " (" + g.worst + ")");
    o.note(name + " " + fmt("%.1e", g.max_rel_error));
  };
  {
    Rng rng(12);
    SCAttention a(4, rng, false, false);
    ParamList p;
    a.collect(p, "a");
    Var x = Var::leaf(pdm::testing::random_tensor({2, 4, 3, 2}, 4));
    const Tensor target = pdm::testing::random_tensor({2, 4, 3, 2}, 5);
    auto wrt = p.params;
    wrt.emplace_back("x", &x);
    record("sc-attention", gradcheck([&] { return ag::sum(ag::mul(a.forward(x), Var::constant(target))); }, wrt));
  }
  {
    Rng rng(14);
    StackOptions opt;
    opt.attention = AttentionKind::spatial_channel;
    opt.block.spectral = true;
    opt.block.temb_dim = 6;
    ResSkipDownBlock down(4, 6, 3, rng, opt, Init::lecun, true);
    ResSkipUpBlock up(6, 4, 3, rng, opt);
    ParamList p;
    down.collect(p, "down");
    up.collect(p, "up");
    Rng prng(15);
    perturb_parameters(p, prng, 0.1);
    Var x = Var::leaf(pdm::testing::random_tensor({2, 4, 4, 4}, 1));
    Var rgb = Var::leaf(pdm::testing::random_tensor({2, 3, 4, 4}, 2));
    Var temb = Var::leaf(pdm::testing::random_tensor({2, 6}, 3));
    const Tensor target = pdm::testing::random_tensor({2, 3, 4, 4}, 4);
    auto loss = [&] {
      ForwardContext ctx;
      const auto d = down.forward(x, rgb, temb, ctx, 0.0, 0);
      const auto u = up.forward(d.y, d.rgb, temb, ctx, 0.0, 1);
      return ag::sum(ag::mul(u.skip, Var::constant(target)));
    };
    auto wrt = p.params;
    wrt.emplace_back("x", &x);
    wrt.emplace_back("rgb", &rgb);
    wrt.emplace_back("temb", &temb);
    record("res-skip blocks", gradcheck(loss, wrt, 12));
  }
  {
    PyramidAutoencoder ae(micro_ae());
    ParamList p = ae.parameters();
    Rng pr(8);
    perturb_parameters(p, pr, 0.05);
    Rng ir(3);
    const Tensor x = ir.uniform_tensor({2, 3, 8, 8}, -1, 1);
    auto loss = [&] {
      ForwardContext ctx;
      ctx.training = true;
      ctx.sample_keys = {1, 2};
      auto enc = ae.encode(Var::constant(x), ctx, EncodeMode::sample);
      return reconstruction_loss(Var::constant(x), ae.decode(enc.latents, ctx), enc.means, enc.logvars, 0.1);
    };
    record("micro autoencoder", gradcheck(loss, p.params, 8));
  }
  {
    PyramidUNet net(micro_unet());
    ParamList p = net.parameters();
    Rng r(9);
    perturb_parameters(p, r, 0.05);
    const auto z = random_latent(net.spec(), 2, 1), target = random_latent(net.spec(), 2, 2);
    Var z0 = Var::leaf(z.levels[0]), z1 = Var::leaf(z.levels[1]);
    auto loss = [&] {
      ForwardContext ctx;
      ctx.training = true;
      ctx.sample_keys = {3, 4};
      const auto v = net.forward({z0, z1}, {0.25, 0.75}, ctx);
      return ag::add(ag::sum(ag::mul(v[0], Var::constant(target.levels[0]))),
                     ag::sum(ag::mul(v[1], Var::constant(target.levels[1]))));
    };
    auto wrt = p.params;
    wrt.emplace_back("z0", &z0);
    wrt.emplace_back("z1", &z1);
    record("micro pyramid U-Net", gradcheck(loss, wrt, 8));
  }
  return o;
}

Outcome c7_spectral() {
  Outcome o;
  double lo = 1e9, hi = -1e9;
  std::int64_t count = 0;
  auto scan = [&](ParamList p) {
    for (const auto& e : p.spectral) {
      const double s = pdm::testing::sigma_max(pdm::testing::normalized_weight(e));
      lo = std::min(lo, s);
      hi = std::max(hi, s);
      ++count;
    }
  };
  PyramidAutoencoder ae(AutoencoderConfig{});
  ae.power_iterate(300);
  scan(ae.encoder_parameters());
  PyramidUNet unet(PyramidUNetConfig{});
  unet.power_iterate(300);
  scan(unet.parameters());
  o.require(lo >= 0.99 && hi <= 1.01, "sigma range");
  o.note(std::to_string(count) + " weights, sigma in [" + fmt("%.5f", lo) + ", " + fmt("%.5f", hi) + "]");

  Rng rng(9);
  SpectralNormState s = make_spectral_state(2, 2, rng);
  s.power_iterations_per_step = 50;
  const auto r = spectral_normalize(Tensor({2, 2}, {2, 0, 0, 1}), s);
  const double err = std::max({std::abs(r.weight[0] - 1.0), std::abs(r.weight[3] - 0.5), std::abs(r.weight[1]),
                               std::abs(r.weight[2])});
  o.require(err <= 1e-6, "diag(2,1)");

  AutoencoderConfig lc;
  lc.lipschitz_chain = true;
  lc.activation = Activation::relu;
  lc.seed = 4;
  PyramidAutoencoder lip(lc);
  lip.power_iterate(300);
  Rng pr(11);
  double worst = -1e9;
  for (int pair = 0; pair < 100; ++pair) {
    const Tensor xi = pr.uniform_tensor({1, 3, 64, 64}, -1.0, 1.0);
    const Tensor xj = pr.uniform_tensor({1, 3, 64, 64}, -1.0, 1.0);
    const auto ei = lip.encode(xi, EncodeMode::deterministic).first;
    const auto ej = lip.encode(xj, EncodeMode::deterministic).first;
    worst = std::max(worst, std::sqrt(squared_norm(ei - ej)) - std::sqrt((xi - xj).squared_norm()));
  }
  o.require(worst <= 1e-5, "Lipschitz bound");
  o.note("max ||E(xi)-E(xj)|| - ||xi-xj|| = " + fmt("%.3f", worst));
  return o;
}

Outcome c8_scaler() {
  Outcome o;
  const auto spec = default_pyramid_spec();
  LatentScaler s(3, 0.99, 100);
  auto draw = [&](std::uint64_t seed) {
    auto z = random_latent(spec, 4, seed);
    z.levels[0] *= 3.0;
    z.levels[1] *= 0.5;
    z.levels[2] *= 1.5;
    return z;
  };
  const auto first = draw(100), second = draw(101);
  s.calibrate(first);
  s.calibrate(second);
  double ema_err = 0.0;
  for (int i = 0; i < 3; ++i) {
    // population std written out
    auto pstd = [](const Tensor& t) {
      double m = 0, q = 0;
      for (double v : t.values()) m += v;
      m /= t.numel();
      for (double v : t.values()) q += (v - m) * (v - m);
      return std::sqrt(q / t.numel());
    };
    const double expect = 0.99 * pstd(first.levels[i]) + 0.01 * pstd(second.levels[i]);
    ema_err = std::max(ema_err, std::abs(s.per_level_std()[i] - expect));
  }
  o.require(ema_err <= 1e-10, "EMA step");
  for (int it = 2; it < 100; ++it) s.calibrate(draw(100 + it));
  o.require(s.frozen(), "frozen after 100 iterations");
  const auto z = draw(7);
  const auto scaled = s.apply(z);
  const double s0 = tensor_std(scaled.levels[0]), s2 = tensor_std(scaled.levels[2]);
  o.require(std::abs(s0 - 1.0) <= 0.05 && std::abs(s2 - 1.0) <= 0.05, "scaled std");
  o.require(bit_equal(scaled.levels[1], z.levels[1]), "std<1 level unchanged");
  o.note("scaled std " + fmt("%.4f", s0) + ", " + fmt("%.4f", s2) + "; EMA err " + fmt("%.1e", ema_err));
  return o;
}

Outcome c9_time_range() {
  Outcome o;
  const double eps = 0.05;
  Rng rng(7);
  const auto t = sample_training_time(100000, eps, rng);
  double lo = 2, hi = -1;
  std::int64_t at_one = 0;
  for (double x : t) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    at_one += x == 1.0;
  }
  o.require(lo >= eps && hi <= 1.0, "support");
  const double mass = at_one / 1e5;
  o.require(std::abs(mass - eps) <= 0.01, "clamp atom mass");
  o.note("atom mass " + fmt("%.4f", mass) + " (analytic " + fmt("%.4f", eps) + ")");

  pdm::testing::GaussianFlow g;
  Rng zr(3);
  const PyramidLatent z{{zr.normal_tensor({4, 2, 1, 1})}};
  for (auto m : {SolverMethod::euler, SolverMethod::rk45}) {
    double tmin = 2, tmax = -1;
    const auto base = g.field();
    const VelocityField rec = [&](const PyramidLatent& x, double tt) {
      tmin = std::min(tmin, tt);
      tmax = std::max(tmax, tt);
      return base(x, tt);
    };
    SamplerConfig cfg;
    cfg.method = m;
    integrate(rec, z, cfg);
    o.require(tmin >= cfg.eps && tmax <= 1.0, solver_name(m) + " evaluation times");
    o.note(solver_name(m) + " t in [" + fmt("%.4g", tmin) + ", " + fmt("%.4g", tmax) + "]");
  }
  return o;
}

Outcome c10_structure() {
  Outcome o;
  PyramidUNetConfig c;
  c.spec.levels = {{16, 8}};
  c.use_branches = false;
  c.seed = 17;
  PyramidUNet net(c);
  Backbone plain(c.backbone_config(), PyramidUNet::backbone_seed(c.seed));
  ParamList pn = net.parameters(), pb;
  plain.collect(pb, "backbone");
  Rng r1(3), r2(3);
  perturb_parameters(pn, r1, 0.05);
  perturb_parameters(pb, r2, 0.05);
  const auto z = random_latent(c.spec, 2, 4);
  ForwardContext a, b;
  a.training = b.training = true;
  a.sample_keys = b.sample_keys = {5, 6};
  const Var vn = net.forward(std::vector<Var>{Var::constant(z.levels[0])}, {0.3, 0.8}, a).front();
  const Var vb = plain.forward(Var::constant(z.levels[0]), {0.3, 0.8}, b);
  o.require(bit_equal(vn.value(), vb.value()), "zero-branch reduction");

  const auto spec = default_pyramid_spec();
  const auto lat = random_latent(spec, 2, 9);
  PyramidLatent total = PyramidLatent::zeros_like(lat);
  bool exact = true;
  for (std::int64_t l = 0; l < spec.num_levels(); ++l) {
    const auto inc = ablate_latents(lat, AblationMode::include_only, l);
    const auto exc = ablate_latents(lat, AblationMode::exclude_only, l);
    exact = exact && bit_equal(inc + exc, lat);
    total += inc;
  }
  o.require(exact && bit_equal(total, lat), "ablation partition");
  o.note("backbone bit-identical; include/exclude partition exact");
  return o;
}

Outcome c11_end_to_end(const fs::path& work) {
  Outcome o;
  const fs::path out = work / "e2e";
  fs::remove_all(out);
  fs::create_directories(out);
  std::ofstream log(work / "e2e.log");
  const std::vector<std::string> base = {
      "--out", out.string(), "--seed", "0", "--set", "data.kind=gaussians", "data.count=8", "train_ae.steps=300",
      "train_ae.lr=0.002", "train_ae.batch_size=8", "calibrate.iterations=100", "calibrate.batch_size=8",
      "train_dm.steps=150", "train_dm.lr=0.001", "train_dm.batch_size=8", "sampler.count=4", "ablate.count=2"};
  const auto t0 = std::chrono::steady_clock::now();
  for (const std::string sub : {"prep", "train-ae", "calibrate", "train-dm", "sample", "ablate"}) {
    auto args = base;
    args.push_back(sub);
    std::ostringstream so;
    const int code = cli::run(args, so, log);
    log << so.str() << std::flush;
    if (code != 0) {
      o.require(false, sub + " exited " + std::to_string(code) + " (see " + (work / "e2e.log").string() + ")");
      return o;
    }
  }
  const json ae = json::parse(std::ifstream(out / "train_ae.json"));
  const json dm = json::parse(std::ifstream(out / "train_dm.json"));
  const double psnr_db = ae["psnr_db"], reduction = dm["reduction"];
  o.require(psnr_db >= 25.0, "reconstruction PSNR");
  o.require(reduction >= 0.5, "diffusion loss reduction");
  int valid = 0;
  for (int n = 0; n < 4; ++n) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04d.png", n);
    try {
      const Image8 img = read_png(out / "samples" / name);
      valid += img.height == 64 && img.width == 64;
    } catch (const std::exception&) {
    }
  }
  o.require(valid == 4, "sample PNGs");
  const json grid = json::parse(std::ifstream(out / "ablate" / "grid.json"));
  o.require(grid["panel_count"] == 14 && grid["panels"].size() == 14, "14-panel grid");
  try {
    read_png(out / "ablate" / "grid.png");
  } catch (const std::exception&) {
    o.require(false, "grid PNG");
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  o.note("PSNR " + fmt("%.2f", psnr_db) + " dB; eval loss " + fmt("%.4f", dm["initial_eval_loss"].get<double>()) +
         " -> " + fmt("%.4f", dm["final_eval_loss"].get<double>()) + " (" + fmt("%.1f", 100 * reduction) +
         "% lower); " + std::to_string(valid) + " samples; " + std::to_string(grid["panel_count"].get<int>()) +
         " panels; " + fmt("%.1f", minutes) + " min");
  return o;
}

Outcome c12_accumulation() {
  Outcome o;
  Rng r(5);
  const Tensor x = r.uniform_tensor({4, 3, 64, 64}, -1, 1);
  TrainConfig one;
  one.batch_size = 4;
  one.seed = 21;
  TrainConfig four = one;
  four.grad_accum = 4;

  AutoencoderConfig ac;
  ac.seed = 2;
  PyramidAutoencoder a1(ac), a4(ac);
  AutoencoderTrainer t1(a1, one), t4(a4, four);
  t1.train_step(x);
  t4.train_step(x);
  ParamList p1 = a1.parameters(), p4 = a4.parameters();
  const double dae = param_rel_diff(p4, p1);
  o.require(dae <= 1e-6, "autoencoder");

  const LatentScaler scaler = LatentScaler::restore({0.5, 0.5, 0.5}, {1.0, 1.0, 1.0}, 0.99, 1, 1, true);
  PyramidUNetConfig uc;
  uc.seed = 3;
  PyramidUNet u1(uc), u4(uc);
  DiffusionTrainer d1(a1, u1, scaler, one), d4(a1, u4, scaler, four);
  d1.train_step(x);
  d4.train_step(x);
  ParamList q1 = u1.parameters(), q4 = u4.parameters();
  const double ddm = param_rel_diff(q4, q1);
  o.require(ddm <= 1e-6, "U-Net");
  o.note("relative parameter difference AE " + fmt("%.1e", dae) + ", U-Net " + fmt("%.1e", ddm));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "pdm_acceptance").string();
  app.add_option("--criterion", only, "Run only these criteria (1-12)");
  app.add_option("--workdir", work, "Scratch directory for the end-to-end run");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"spatial-channel weight table", c1_weight_table},
      {"compression arithmetic", c2_compression},
      {"crop arithmetic", c3_crop},
      {"flow-equation oracle", c4_flow_oracle},
      {"loss semantics", c5_loss},
      {"gradient suite", c6_gradients},
      {"spectral-norm suite", c7_spectral},
      {"scaler rules", c8_scaler},
      {"time-range rule", c9_time_range},
      {"structural reductions", c10_structure},
      {"end-to-end smoke", [&] { return c11_end_to_end(work); }},
      {"gradient-accumulation equivalence", c12_accumulation},
  };
  if (only.empty())
    for (int i = 1; i <= 12; ++i) only.push_back(i);

  bool all = true;
  for (int id : only) {
    if (id < 1 || id > 12) {
      std::cerr << "no criterion " << id << "\n";
      return 2;
    }
    const auto& [name, fn] = criteria[static_cast<std::size_t>(id - 1)];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << " ["
              << fmt("%.1f", secs) << " s]" << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
