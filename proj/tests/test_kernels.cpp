#include "doctest.h"

#include <vector>

#include "pdm/kernels.hpp"
#include "support.hpp"

using namespace pdm;
namespace k = pdm::kernels;

namespace {

std::vector<double> randv(std::size_t n, std::uint64_t seed) {
  Rng r(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = r.normal();
  return v;
}

double maxdiff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("parallel conv matches the reference") {
  for (auto d : {k::ConvDims{2, 3, 5, 7, 6, 3}, k::ConvDims{1, 8, 4, 4, 4, 1}, k::ConvDims{3, 2, 2, 5, 5, 5}}) {
    const auto x = randv(d.batch * d.in_channels * d.height * d.width, 1);
    const auto w = randv(d.out_channels * d.in_channels * d.kernel * d.kernel, 2);
    const auto b = randv(d.out_channels, 3);
    const auto dy = randv(d.batch * d.out_channels * d.height * d.width, 4);
    std::vector<double> y1(dy.size()), y2(dy.size());
    k::conv2d_forward(x.data(), w.data(), b.data(), y1.data(), d);
    k::reference::conv2d_forward(x.data(), w.data(), b.data(), y2.data(), d);
    CHECK(maxdiff(y1, y2) < 1e-12);

    std::vector<double> dx1(x.size()), dx2(x.size()), dw1(w.size()), dw2(w.size()), db1(b.size()), db2(b.size());
    k::conv2d_backward(x.data(), w.data(), dy.data(), dx1.data(), dw1.data(), db1.data(), d);
    k::reference::conv2d_backward(x.data(), w.data(), dy.data(), dx2.data(), dw2.data(), db2.data(), d);
    CHECK(maxdiff(dx1, dx2) < 1e-12);
    CHECK(maxdiff(dw1, dw2) < 1e-12);
    CHECK(maxdiff(db1, db2) < 1e-12);
  }
}

TEST_CASE("conv backward accumulates") {
  k::ConvDims d{1, 2, 2, 3, 3, 3};
  const auto x = randv(18, 1), w = randv(36, 2), dy = randv(18, 3);
  std::vector<double> dx(18, 1.0), dw(36, 1.0), db(2, 1.0), rx(18), rw(36), rb(2);
  k::conv2d_backward(x.data(), w.data(), dy.data(), dx.data(), dw.data(), db.data(), d);
  k::reference::conv2d_backward(x.data(), w.data(), dy.data(), rx.data(), rw.data(), rb.data(), d);
  for (std::size_t i = 0; i < 18; ++i) CHECK(dx[i] == doctest::Approx(rx[i] + 1.0));
  CHECK(db[0] == doctest::Approx(rb[0] + 1.0));
}

TEST_CASE("parallel gemm matches the reference for every transpose and broadcast") {
  for (bool ta : {false, true})
    for (bool tb : {false, true})
      for (bool ba : {false, true})
        for (bool bb : {false, true}) {
          k::GemmDims d{3, 5, 7, 4, ta, tb, ba, bb};
          const auto a = randv((ba ? 1 : 3) * 5 * 4, 7);
          const auto b = randv((bb ? 1 : 3) * 4 * 7, 8);
          std::vector<double> c1(3 * 35, 0.5), c2(3 * 35, 0.5);
          k::gemm(a.data(), b.data(), c1.data(), d, true);
          k::reference::gemm(a.data(), b.data(), c2.data(), d, true);
          CHECK(maxdiff(c1, c2) < 1e-12);
          k::gemm(a.data(), b.data(), c1.data(), d);
          k::reference::gemm(a.data(), b.data(), c2.data(), d);
          CHECK(maxdiff(c1, c2) < 1e-12);
        }
}

TEST_CASE("gemm agrees with a hand product") {
  const std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
  std::vector<double> c(4);
  k::gemm(a.data(), b.data(), c.data(), k::GemmDims{1, 2, 2, 2});
  CHECK(c == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("parallel group norm matches the reference") {
  k::GroupNormDims d{2, 8, 4, 9, 1e-6};
  const auto x = randv(2 * 8 * 9, 1), g = randv(2 * 8 * 9, 2);
  std::vector<double> xh1(x.size()), xh2(x.size()), m1(8), m2(8), r1(8), r2(8);
  k::group_norm_forward(x.data(), xh1.data(), m1.data(), r1.data(), d);
  k::reference::group_norm_forward(x.data(), xh2.data(), m2.data(), r2.data(), d);
  CHECK(maxdiff(xh1, xh2) < 1e-12);
  CHECK(maxdiff(r1, r2) < 1e-12);
  std::vector<double> dx1(x.size()), dx2(x.size());
  k::group_norm_backward(xh1.data(), r1.data(), g.data(), dx1.data(), d);
  k::reference::group_norm_backward(xh2.data(), r2.data(), g.data(), dx2.data(), d);
  CHECK(maxdiff(dx1, dx2) < 1e-12);
  // each group of the output has zero mean and unit variance (up to eps)
  double s = 0, s2 = 0;
  for (int i = 0; i < 18; ++i) s += xh1[i], s2 += xh1[i] * xh1[i];
  CHECK(std::abs(s / 18) < 1e-12);
  CHECK(s2 / 18 == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("parallel softmax matches the reference and normalizes rows") {
  const auto x = randv(6 * 11, 3), g = randv(6 * 11, 4);
  std::vector<double> y1(x.size()), y2(x.size()), d1(x.size()), d2(x.size());
  k::softmax_forward(x.data(), y1.data(), 6, 11);
  k::reference::softmax_forward(x.data(), y2.data(), 6, 11);
  CHECK(maxdiff(y1, y2) < 1e-14);
  for (int r = 0; r < 6; ++r) {
    double s = 0;
    for (int c = 0; c < 11; ++c) s += y1[r * 11 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
  k::softmax_backward(y1.data(), g.data(), d1.data(), 6, 11);
  k::reference::softmax_backward(y2.data(), g.data(), d2.data(), 6, 11);
  CHECK(maxdiff(d1, d2) < 1e-14);
}

TEST_CASE("softmax is stable for large inputs") {
  const std::vector<double> x{1000.0, 1001.0, 999.0};
  std::vector<double> y(3);
  k::softmax_forward(x.data(), y.data(), 1, 3);
  for (double v : y) CHECK(std::isfinite(v));
  CHECK(y[1] > y[0]);
}

TEST_CASE("pool and upsample backward are the adjoints of their forwards") {
  const std::int64_t planes = 3, h = 4, w = 6;
  const auto x = randv(planes * h * w, 1);
  const auto y = randv(planes * h * w / 4, 2);
  std::vector<double> px(y.size()), dx(x.size());
  k::avg_pool2_forward(x.data(), px.data(), planes, h, w);
  k::avg_pool2_backward(y.data(), dx.data(), planes, h, w);
  CHECK(dot(px, y) == doctest::Approx(dot(x, dx)).epsilon(1e-13));

  std::vector<double> ux(x.size() * 4), dy(x.size());
  const auto g = randv(x.size() * 4, 3);
  k::upsample2_forward(x.data(), ux.data(), planes, h, w);
  k::upsample2_backward(g.data(), dy.data(), planes, h, w);
  CHECK(dot(ux, g) == doctest::Approx(dot(x, dy)).epsilon(1e-13));
}

TEST_CASE("thread count is positive") { CHECK(k::thread_count() >= 1); }
