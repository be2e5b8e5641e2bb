#include "pdm/cli.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdm/checkpoint.hpp"
#include "pdm/config.hpp"
#include "pdm/data.hpp"
#include "pdm/error.hpp"
#include "pdm/sampler.hpp"

namespace pdm::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Seed streams, one per concern.
constexpr std::uint64_t kAeInit = 0xa1, kAeTrain = 0xa2, kDmInit = 0xd1, kDmTrain = 0xd2, kDmEval = 0xd3,
                        kCalib = 0xc1, kBatches = 0xb1, kSynth = 0x5d;

struct Layout {
  fs::path out;
  fs::path data() const { return out / "data"; }
  fs::path manifest() const { return data() / "manifest.txt"; }
  fs::path ae() const { return out / "ae"; }
  fs::path dm() const { return out / "dm"; }
  fs::path samples() const { return out / "samples"; }
  fs::path ablate() const { return out / "ablate"; }
};

class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        if (::write(fd, pid.data(), pid.size()) < 0) {
          ::close(fd);
          throw IoError("cannot write lock file " + path_.string());
        }
        ::close(fd);
        return;
      }
      std::ifstream f(path_);
      long other = 0;
      if (f >> other && other > 0 && ::kill(static_cast<pid_t>(other), 0) == 0)
        throw IoError("output directory " + dir.string() + " is locked by running process " + std::to_string(other));
      fs::remove(path_);  // stale lock from a dead process
    }
    throw IoError("cannot acquire lock " + path_.string());
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << text;
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, p);
}

/// Deterministic batches: each epoch visits a fresh permutation of the dataset.
std::vector<std::int64_t> batch_indices(std::int64_t n, std::int64_t batch, std::uint64_t seed, std::int64_t step) {
  std::vector<std::int64_t> out;
  std::int64_t cached_epoch = -1;
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  for (std::int64_t j = 0; j < batch; ++j) {
    const std::int64_t pos = step * batch + j;
    const std::int64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), 0);
      std::mt19937_64 eng(derive_key(seed, static_cast<std::uint64_t>(epoch)));
      std::shuffle(perm.begin(), perm.end(), eng);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<std::size_t>(pos % n)]);
  }
  return out;
}

class Runner {
 public:
  Runner(RunConfig cfg, std::ostream& log) : cfg_(std::move(cfg)), log_(log) {
    layout_.out = cfg_.out;
    cfg_.autoencoder.seed = derive_key(cfg_.seed, kAeInit);
    cfg_.unet.seed = derive_key(cfg_.seed, kDmInit);
    cfg_.train_ae.seed = derive_key(cfg_.seed, kAeTrain);
    cfg_.train_dm.seed = derive_key(cfg_.seed, kDmTrain);
    cfg_.sampler.seed = cfg_.seed;
  }

  json prep();
  json train_ae();
  json calibrate();
  json train_dm();
  json sample();
  json ablate();
  json eval();

 private:
  DatasetManifest require_data() const {
    if (!fs::exists(layout_.manifest())) throw StateError("dataset not prepared; run prep first");
    return DatasetManifest::load(layout_.manifest());
  }
  LoadOptions load_options() const {
    return {cfg_.spec().image_height, cfg_.spec().image_width, cfg_.center_crop};
  }
  Checkpoint require_ae() const {
    if (!checkpoint_exists(layout_.ae())) throw StateError("autoencoder not trained; run train-ae first");
    return load_checkpoint(layout_.ae(), &cfg_.spec());
  }
  static LatentScaler require_scaler(const Checkpoint& ck) {
    if (!ck.scaler || !ck.scaler->frozen()) throw StateError("scaler not calibrated");
    return *ck.scaler;
  }
  PyramidAutoencoder build_ae(const Checkpoint& ck) const {
    if (ck.kind != "autoencoder") throw CheckpointError("expected an autoencoder checkpoint, found " + ck.kind);
    PyramidAutoencoder ae(autoencoder_config_from(ck.architecture, ck.spec));
    ParamList p = ae.parameters();
    restore(p, ck.tensors);
    return ae;
  }
  Tensor dataset_batch(const DatasetManifest& m, std::int64_t batch, std::uint64_t seed, std::int64_t step) const {
    return load_batch(m, batch_indices(m.size(), batch, seed, step), load_options());
  }
  Tensor first_images(const DatasetManifest& m, std::int64_t count) const {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < count; ++i) idx.push_back(i % m.size());
    return load_batch(m, idx, load_options());
  }
  void progress(const std::string& what, std::int64_t step, std::int64_t total, double loss) const {
    if (step % cfg_.log_every == 0 || step + 1 == total)
      log_ << what << " step " << step + 1 << "/" << total << " loss " << loss << "\n";
  }

  RunConfig cfg_;
  Layout layout_;
  std::ostream& log_;
};

json Runner::prep() {
  fs::create_directories(layout_.data());
  DatasetManifest m;
  if (!cfg_.data_source.empty()) {
    m = DatasetManifest::scan(fs::absolute(cfg_.data_source), cfg_.seed);
    const auto before = m.size();
    if (cfg_.data_filter) m.entries = filter_landscape_rule(m.entries, cfg_.filter);
    if (m.entries.empty()) throw DataError("no images left in " + cfg_.data_source + " after filtering");
    log_ << "prep: kept " << m.size() << " of " << before << " images\n";
  } else {
    m = synth_toy_dataset(parse_synth_kind(cfg_.data_kind), cfg_.data_count, cfg_.spec().image_height,
                          derive_key(cfg_.seed, kSynth), layout_.data());
    m.root = fs::absolute(layout_.data());
  }
  m.save(layout_.manifest());
  return {{"images", m.size()}, {"manifest", layout_.manifest().string()}};
}

json Runner::train_ae() {
  const DatasetManifest m = require_data();
  PyramidAutoencoder ae(cfg_.autoencoder);
  AutoencoderTrainer trainer(ae, cfg_.train_ae);
  std::ofstream metrics(layout_.out / "metrics_train_ae.jsonl", std::ios::trunc);
  const auto t0 = std::chrono::steady_clock::now();
  double last = 0.0;
  for (std::int64_t s = 0; s < cfg_.train_ae_steps; ++s) {
    const Tensor batch = dataset_batch(m, cfg_.train_ae.batch_size, derive_key(cfg_.seed, kBatches, 1), s);
    const StepResult r = trainer.train_step(batch);
    metrics << metrics_record(r, seconds_since(t0)) << "\n" << std::flush;
    last = r.loss;
    progress("train-ae", s, cfg_.train_ae_steps, r.loss);
  }
  const Tensor all = first_images(m, std::min<std::int64_t>(m.size(), 64));
  const double quality = psnr(all, ae.reconstruct(all));
  Checkpoint ck;
  ck.kind = "autoencoder";
  ck.spec = cfg_.spec();
  ck.architecture = autoencoder_architecture(cfg_.autoencoder);
  ck.step = trainer.step();
  ck.optimizer_steps = trainer.optimizer().steps();
  ParamList p = ae.parameters();
  ck.tensors = snapshot(p, &trainer.optimizer());
  save_checkpoint(layout_.ae(), ck);
  json summary = {{"steps", trainer.step()}, {"final_loss", last}, {"psnr_db", quality}};
  write_text(layout_.out / "train_ae.json", summary.dump(2) + "\n");
  return summary;
}

json Runner::calibrate() {
  const DatasetManifest m = require_data();
  Checkpoint ck = require_ae();
  if (ck.scaler && ck.scaler->frozen()) throw StateError("scaler already calibrated; retrain the autoencoder to recalibrate");
  const PyramidAutoencoder ae = build_ae(ck);
  LatentScaler scaler(cfg_.spec().num_levels(), cfg_.calibrate_ema_decay, cfg_.calibrate_iters);
  for (std::int64_t i = 0; i < cfg_.calibrate_iters; ++i) {
    const Tensor batch = dataset_batch(m, cfg_.calibrate_batch, derive_key(cfg_.seed, kBatches, 2), i);
    scaler.calibrate(ae.encode(batch, EncodeMode::sample, derive_key(cfg_.seed, kCalib, static_cast<std::uint64_t>(i))).first);
  }
  ck.scaler = scaler;
  save_checkpoint(layout_.ae(), ck);
  json levels = json::array();
  for (std::int64_t i = 0; i < scaler.num_levels(); ++i)
    levels.push_back({{"level", i},
                      {"std", scaler.per_level_std()[static_cast<std::size_t>(i)]},
                      {"scale", scaler.per_level_scale()[static_cast<std::size_t>(i)]},
                      {"skipped", scaler.per_level_std()[static_cast<std::size_t>(i)] < 1.0}});
  return {{"iterations", scaler.iterations()}, {"levels", levels}};
}

json Runner::train_dm() {
  const DatasetManifest m = require_data();
  const Checkpoint ae_ck = require_ae();
  const LatentScaler scaler = require_scaler(ae_ck);
  const PyramidAutoencoder ae = build_ae(ae_ck);
  PyramidUNet unet(cfg_.unet);
  DiffusionTrainer trainer(ae, unet, scaler, cfg_.train_dm);
  const Tensor eval_batch = first_images(m, std::min(m.size(), cfg_.train_dm.batch_size));
  const std::uint64_t eval_seed = derive_key(cfg_.seed, kDmEval);
  const double initial = trainer.evaluate(eval_batch, eval_seed).total;
  std::ofstream metrics(layout_.out / "metrics_train_dm.jsonl", std::ios::trunc);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::int64_t s = 0; s < cfg_.train_dm_steps; ++s) {
    const Tensor batch = dataset_batch(m, cfg_.train_dm.batch_size, derive_key(cfg_.seed, kBatches, 3), s);
    const StepResult r = trainer.train_step(batch);
    metrics << metrics_record(r, seconds_since(t0)) << "\n" << std::flush;
    progress("train-dm", s, cfg_.train_dm_steps, r.loss);
  }
  const PdmLoss final_loss = trainer.evaluate(eval_batch, eval_seed);
  Checkpoint ck;
  ck.kind = "unet";
  ck.spec = cfg_.spec();
  ck.architecture = unet_architecture(cfg_.unet);
  ck.step = trainer.step();
  ck.optimizer_steps = trainer.optimizer().steps();
  ParamList p = unet.parameters();
  ck.tensors = snapshot(p, &trainer.optimizer());
  save_checkpoint(layout_.dm(), ck);
  json summary = {{"steps", trainer.step()},
                  {"initial_eval_loss", initial},
                  {"final_eval_loss", final_loss.total},
                  {"final_eval_per_level", final_loss.per_level},
                  {"reduction", initial > 0.0 ? 1.0 - final_loss.total / initial : 0.0}};
  write_text(layout_.out / "train_dm.json", summary.dump(2) + "\n");
  return summary;
}

json Runner::sample() {
  const Checkpoint ae_ck = require_ae();
  const LatentScaler scaler = require_scaler(ae_ck);
  if (!checkpoint_exists(layout_.dm())) throw StateError("diffusion model not trained; run train-dm first");
  const Checkpoint dm_ck = load_checkpoint(layout_.dm(), &cfg_.spec());
  if (dm_ck.kind != "unet") throw CheckpointError("expected a unet checkpoint, found " + dm_ck.kind);
  const PyramidAutoencoder ae = build_ae(ae_ck);
  PyramidUNet unet(unet_config_from(dm_ck.architecture, dm_ck.spec));
  {
    ParamList p = unet.parameters();
    restore(p, dm_ck.tensors);
  }
  const auto t0 = std::chrono::steady_clock::now();
  const GeneratedImages g = generate(unet, ae, scaler, cfg_.sampler, cfg_.sample_count);
  const double wall = seconds_since(t0);
  fs::remove_all(layout_.samples());
  fs::create_directories(layout_.samples());
  json files = json::array();
  for (std::int64_t n = 0; n < cfg_.sample_count; ++n) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%04lld.png", static_cast<long long>(n));
    write_png(layout_.samples() / name, tensor_to_image(g.images, n));
    files.push_back(name);
  }
  json sidecar = {{"seed", cfg_.sampler.seed},
                  {"solver", solver_name(cfg_.sampler.method)},
                  {"eps", cfg_.sampler.eps},
                  {"count", cfg_.sample_count},
                  {"files", files},
                  {"wall_time", wall}};
  if (cfg_.sampler.method == SolverMethod::euler)
    sidecar["steps"] = cfg_.sampler.steps;
  else
    sidecar["n_evals"] = g.n_evals;
  write_text(layout_.samples() / "samples.json", sidecar.dump(2) + "\n");
  return {{"count", cfg_.sample_count}, {"n_evals", g.n_evals}, {"dir", layout_.samples().string()}};
}

json Runner::ablate() {
  const DatasetManifest m = require_data();
  const Checkpoint ck = require_ae();
  const PyramidAutoencoder ae = build_ae(ck);
  const PyramidSpec& spec = cfg_.spec();
  const Tensor images = first_images(m, cfg_.ablate_count);
  const PyramidLatent latent = ae.encode(images, EncodeMode::deterministic).first;
  const std::int64_t levels = spec.num_levels();
  const std::int64_t cols = 1 + 2 * levels;
  const std::int64_t rows = cfg_.ablate_count;
  const std::int64_t ph = spec.image_height, pw = spec.image_width, gap = 2;

  std::vector<std::pair<std::string, Tensor>> columns;
  columns.emplace_back("full", ae.decode(latent));
  for (std::int64_t l = 0; l < levels; ++l)
    columns.emplace_back("include_only", ae.decode(ablate_latents(latent, AblationMode::include_only, l)));
  for (std::int64_t l = 0; l < levels; ++l)
    columns.emplace_back("exclude_only", ae.decode(ablate_latents(latent, AblationMode::exclude_only, l)));

  Image8 grid = Image8::filled(rows * ph + (rows + 1) * gap, cols * pw + (cols + 1) * gap, 3, 255);
  json panels = json::array();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) {
      const Image8 panel = tensor_to_image(columns[static_cast<std::size_t>(c)].second, r);
      const std::int64_t y0 = gap + r * (ph + gap), x0 = gap + c * (pw + gap);
      for (std::int64_t y = 0; y < ph; ++y)
        for (std::int64_t x = 0; x < pw; ++x)
          for (std::int64_t k = 0; k < 3; ++k) grid.at(y0 + y, x0 + x, k) = panel.at(y, x, k);
      json p = {{"row", r}, {"col", c}, {"image", r}, {"mode", columns[static_cast<std::size_t>(c)].first},
                {"x", x0}, {"y", y0}, {"width", pw}, {"height", ph}};
      if (c > 0) {
        const std::int64_t l = (c - 1) % levels;
        p["level"] = l;
        p["resolution"] = spec.levels[static_cast<std::size_t>(l)].resolution;
        p["label"] = columns[static_cast<std::size_t>(c)].first + " level " + std::to_string(l) + " (" +
                     std::to_string(spec.levels[static_cast<std::size_t>(l)].resolution) + "x" +
                     std::to_string(spec.level_width(l)) + ")";
      } else {
        p["label"] = "full reconstruction";
      }
      panels.push_back(p);
    }
  fs::create_directories(layout_.ablate());
  write_png(layout_.ablate() / "grid.png", grid);
  json meta = {{"rows", rows}, {"cols", cols}, {"panel_count", rows * cols}, {"panels", panels}};
  write_text(layout_.ablate() / "grid.json", meta.dump(2) + "\n");
  return {{"panel_count", rows * cols}, {"grid", (layout_.ablate() / "grid.png").string()}};
}

json Runner::eval() {
  const DatasetManifest m = require_data();
  std::vector<fs::path> files;
  if (fs::is_directory(layout_.samples()))
    for (const auto& e : fs::directory_iterator(layout_.samples()))
      if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.size() < 2) throw StateError("eval needs at least 2 generated samples; run sample with sampler.count >= 2");
  if (m.size() < 2) throw StateError("eval needs at least 2 reference images");
  const auto opt = load_options();
  Tensor generated({static_cast<std::int64_t>(files.size()), 3, opt.height, opt.width});
  const std::int64_t per = 3 * opt.height * opt.width;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const Tensor t = image_to_tensor(resize_bilinear(read_png(files[i]), opt.height, opt.width));
    std::copy_n(t.data(), per, generated.data() + static_cast<std::int64_t>(i) * per);
  }
  std::vector<std::int64_t> all(static_cast<std::size_t>(m.size()));
  std::iota(all.begin(), all.end(), 0);
  const Tensor reference = load_batch(m, all, opt);
  const double d = pixel_frechet_distance(generated, reference);
  json report = {{"metric", "pixel_feature_frechet_distance"},
                 {"note", "Frechet distance of 8x8 grayscale pixel features; NOT the Inception-based FID"},
                 {"value", d},
                 {"generated", files.size()},
                 {"reference", m.size()}};
  write_text(layout_.out / "eval.json", report.dump(2) + "\n");
  return report;
}

json error_record(const std::string& sub, int code, const std::string& kind, const std::string& message) {
  return {{"status", "error"}, {"subcommand", sub}, {"exit_code", code}, {"error", kind}, {"message", message}};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pyramid diffusion model: data prep, two-stage training, sampling, ablation, evaluation", "pdm"};
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir, device;
  app.add_option("--config", config_path, "Config file (key = value with [sections])");
  app.add_option("--set", overrides, "Override a setting, e.g. --set train_ae.steps=100")->take_all();
  app.add_option("--seed", seed, "Master seed (run.seed)");
  app.add_option("--out", out_dir, "Output directory (run.out)");
  app.add_option("--device", device, "Compute device (only 'cpu')");
  app.require_subcommand(1, 1);
  app.fallthrough();
  const std::vector<std::pair<std::string, std::string>> subs = {
      {"prep", "Build the dataset (toy synth or a scanned image directory)"},
      {"train-ae", "Train the pyramid autoencoder"},
      {"calibrate", "Estimate and freeze the per-level latent scale"},
      {"train-dm", "Train the pyramid U-Net on scaled latents"},
      {"sample", "Integrate the flow and decode PNG samples"},
      {"ablate", "Render the include/exclude level grid"},
      {"eval", "PSNR and pixel Frechet distance"}};
  for (const auto& [n, d] : subs) app.add_subcommand(n, d);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  std::string sub = "";
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_record(sub, 2, "usage", e.what()).dump() << "\n";
    return 2;
  }
  sub = app.get_subcommands().front()->get_name();

  RunConfig cfg;
  try {
    cfg = load_run_config(config_path, overrides);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out = *out_dir;
    if (device) cfg.device = *device;
    cfg.validate();
  } catch (const std::exception& e) {
    err << error_record(sub, 2, "config", e.what()).dump() << "\n";
    return 2;
  }

  try {
    DirLock lock(cfg.out);
    write_text(fs::path(cfg.out) / "config.txt", dump_config(cfg));
    Runner runner(cfg, err);
    json result;
    if (sub == "prep") result = runner.prep();
    else if (sub == "train-ae") result = runner.train_ae();
    else if (sub == "calibrate") result = runner.calibrate();
    else if (sub == "train-dm") result = runner.train_dm();
    else if (sub == "sample") result = runner.sample();
    else if (sub == "ablate") result = runner.ablate();
    else result = runner.eval();
    result["status"] = "ok";
    result["subcommand"] = sub;
    out << result.dump() << "\n";
    return 0;
  } catch (const StateError& e) {
    err << error_record(sub, 2, "state", e.what()).dump() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << error_record(sub, 2, "config", e.what()).dump() << "\n";
    return 2;
  } catch (const TrainingError& e) {
    json rec = error_record(sub, 1, "training", e.what());
    rec["diagnostic"] = json::parse(e.diagnostic, nullptr, false);
    err << rec.dump() << "\n";
    return 1;
  } catch (const IntegrationError& e) {
    json rec = error_record(sub, 1, "integration", e.what());
    rec["t"] = e.time;
    err << rec.dump() << "\n";
    return 1;
  } catch (const CheckpointError& e) {
    err << error_record(sub, 1, "checkpoint", e.what()).dump() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << error_record(sub, 1, "data", e.what()).dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << error_record(sub, 1, "runtime", e.what()).dump() << "\n";
    return 1;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace pdm::cli
