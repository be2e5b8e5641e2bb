#include "doctest.h"

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>

#include "pdm/data.hpp"
#include "pdm/error.hpp"
#include "support.hpp"

using namespace pdm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pdm_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Image8 noise_image(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Rng r(seed);
  Image8 img = Image8::filled(h, w, 3, 0);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(r.next() & 0xff);
  return img;
}

}  // namespace

TEST_CASE("center crop of 3200 x 2400 removes 400 per side") {
  const CropBox b = center_crop_box(3200, 2400);
  CHECK(b.top == 400);
  CHECK(b.left == 0);
  CHECK(b.height == 2400);
  CHECK(b.width == 2400);
  CHECK(3200 - b.top - b.height == 400);

  Image8 img = Image8::filled(3200, 2400, 3, 0);
  img.at(400, 0, 0) = 7;
  img.at(2799, 2399, 2) = 9;
  img.at(399, 5, 1) = 1;
  img.at(2800, 5, 1) = 1;
  const Image8 c = center_crop_min_side(img);
  CHECK(c.height == 2400);
  CHECK(c.width == 2400);
  CHECK(c.at(0, 0, 0) == 7);
  CHECK(c.at(2399, 2399, 2) == 9);
  std::int64_t ones = 0;
  for (auto p : c.pixels) ones += p == 1;
  CHECK(ones == 0);
}

TEST_CASE("center crop puts the odd pixel on the trailing edge") {
  const CropBox b = center_crop_box(4, 7);
  CHECK(b.left == 1);
  CHECK(b.width == 4);
  const CropBox sq = center_crop_box(5, 5);
  CHECK(sq.top == 0);
  CHECK(sq.left == 0);
}

TEST_CASE("landscape filter uses strict inequalities") {
  const std::vector<ManifestEntry> e{{"a", 2049, 1025}, {"b", 2048, 1100}, {"c", 3000, 1024},
                                     {"d", 1100, 2100}, {"e", 4000, 3000}};
  const auto kept = filter_landscape_rule(e);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].file_id == "a");
  CHECK(kept[1].file_id == "e");
  CHECK(filter_landscape_rule(e, LandscapeRule{100, 100}).size() == 4);
}

TEST_CASE("resize preserves constants and identity") {
  const Image8 c = Image8::filled(37, 53, 3, 200);
  const Image8 r = resize_bilinear(c, 16, 16);
  for (auto p : r.pixels) CHECK(p == 200);
  const Image8 u = resize_bilinear(c, 80, 90);
  for (auto p : u.pixels) CHECK(p == 200);
  const Image8 n = noise_image(9, 9, 1);
  CHECK(resize_bilinear(n, 9, 9) == n);
}

TEST_CASE("downscaling averages out a fine checkerboard") {
  Image8 img = Image8::filled(64, 64, 3, 0);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int k = 0; k < 3; ++k) img.at(y, x, k) = (x + y) % 2 ? 255 : 0;
  const Image8 r = resize_bilinear(img, 8, 8);
  for (int y = 1; y < 7; ++y)
    for (int x = 1; x < 7; ++x) CHECK(std::abs(int(r.at(y, x, 0)) - 128) <= 2);
}

TEST_CASE("png round trip is lossless") {
  const fs::path dir = scratch("png");
  const Image8 img = noise_image(13, 21, 2);
  write_png(dir / "a.png", img);
  CHECK(read_png(dir / "a.png") == img);
  const auto [w, h] = png_dimensions(dir / "a.png");
  CHECK(w == 21);
  CHECK(h == 13);
  CHECK(fs::exists(dir / "a.png"));
  CHECK_FALSE(fs::exists(dir / "a.png.tmp"));

  Image8 gray = Image8::filled(4, 4, 1, 77);
  write_png(dir / "g.png", gray);
  const Image8 rgb = read_png(dir / "g.png");
  CHECK(rgb.channels == 3);
  CHECK(rgb.at(2, 2, 1) == 77);
}

TEST_CASE("corrupt png is a data error naming the file") {
  const fs::path dir = scratch("bad");
  std::ofstream(dir / "broken.png") << "not a png";
  try {
    read_png(dir / "broken.png");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("broken.png") != std::string::npos);
  }
}

TEST_CASE("tensor conversion round trip") {
  const Image8 img = noise_image(5, 6, 3);
  const Tensor t = image_to_tensor(img);
  CHECK(t.shape() == Shape{1, 3, 5, 6});
  for (double v : t.values()) CHECK((v >= -1.0 && v <= 1.0));
  CHECK(tensor_to_image(t, 0) == img);
  Tensor over = t;
  over[0] = 3.0;
  CHECK(tensor_to_image(over, 0).at(0, 0, 0) == 255);
}

TEST_CASE("synthetic data is deterministic per seed and index") {
  for (auto k : {SynthKind::gaussians, SynthKind::gradients, SynthKind::checkers}) {
    CHECK(synth_image(k, 32, 1, 0) == synth_image(k, 32, 1, 0));
    CHECK_FALSE(synth_image(k, 32, 1, 0) == synth_image(k, 32, 1, 1));
    CHECK(parse_synth_kind(synth_kind_name(k)) == k);
  }
  CHECK_THROWS_AS(parse_synth_kind("noise"), InvalidArgument);
}

TEST_CASE("synthetic dataset, manifest and batch loading") {
  const fs::path dir = scratch("synth");
  const auto m = synth_toy_dataset(SynthKind::checkers, 3, 32, 4, dir);
  CHECK(m.size() == 3);
  CHECK(fs::exists(dir / "checkers_0000.png"));
  m.save(dir / "manifest.txt");
  const auto back = DatasetManifest::load(dir / "manifest.txt");
  CHECK(back.entries == m.entries);
  const auto scanned = DatasetManifest::scan(dir);
  CHECK(scanned.entries == m.entries);
  const Tensor b = load_batch(back, {2, 0}, LoadOptions{16, 16, true});
  CHECK(b.shape() == Shape{2, 3, 16, 16});
  CHECK_THROWS_AS(load_batch(back, {5}), InvalidArgument);
  std::ofstream(dir / "bad.txt") << "x y\n";
  CHECK_THROWS_AS(DatasetManifest::load(dir / "bad.txt"), DataError);
}

TEST_CASE("frechet distance closed forms") {
  // 1-D with the solver's 1e-6 jitter: (ma - mb)^2 + (sqrt(a) - sqrt(b))^2
  const double a = 4.0 + 1e-6, b = 1.0 + 1e-6;
  const double expect = 9.0 + std::pow(std::sqrt(a) - std::sqrt(b), 2);
  CHECK(frechet_distance({1.0}, {4.0}, {4.0}, {1.0}, 1) == doctest::Approx(expect).epsilon(1e-12));

  // non-commuting 2-D covariances: Tr sqrt(AB) from the eigenvalues of AB
  Eigen::Matrix2d A, B;
  A << 2.0, 0.5, 0.5, 1.0;
  B << 1.0, -0.3, -0.3, 3.0;
  const std::vector<double> ca{A(0, 0), A(0, 1), A(1, 0), A(1, 1)}, cb{B(0, 0), B(0, 1), B(1, 0), B(1, 1)};
  const Eigen::Matrix2d Aj = A + 1e-6 * Eigen::Matrix2d::Identity(), Bj = B + 1e-6 * Eigen::Matrix2d::Identity();
  const auto ev = (Aj * Bj).eigenvalues();
  const double tr = std::sqrt(ev(0).real()) + std::sqrt(ev(1).real());
  const double oracle = 0.25 + Aj.trace() + Bj.trace() - 2 * tr;
  const double fd = frechet_distance({0.0, 0.0}, ca, {0.5, 0.0}, cb, 2);
  CHECK(fd == doctest::Approx(oracle).epsilon(1e-10));
  CHECK(fd == doctest::Approx(frechet_distance({0.5, 0.0}, cb, {0.0, 0.0}, ca, 2)).epsilon(1e-10));
  CHECK(frechet_distance({1.0, 2.0}, ca, {1.0, 2.0}, ca, 2) < 1e-9);
  CHECK_THROWS_AS(frechet_distance({1.0}, {1.0}, {1.0, 2.0}, ca, 2), InvalidArgument);
}

TEST_CASE("pixel frechet distance") {
  Rng r(1);
  const Tensor a = r.uniform_tensor({6, 3, 16, 16}, -1, 1);
  const Tensor b = r.uniform_tensor({6, 3, 16, 16}, -1, 1);
  CHECK(pixel_frechet_distance(a, a) < 1e-6);
  CHECK(pixel_frechet_distance(a, b) > 0.0);
  Tensor shifted = a;
  for (auto& v : shifted.values()) v = std::min(1.0, v + 0.5);
  CHECK(pixel_frechet_distance(a, shifted) > 1.0);
  CHECK(pixel_features(a).shape() == Shape{6, 64});
  CHECK_THROWS_AS(pixel_frechet_distance(a.batch_slice(0, 1), b), InvalidArgument);
  const auto [mu, cov] = gaussian_fit(Tensor({3, 1}, {1.0, 2.0, 3.0}));
  CHECK(mu[0] == 2.0);
  CHECK(cov[0] == 1.0);
}
