// Parallel vs. serial-reference kernel timings on model-sized problems.
//   pdm_bench [--reps N] [--json]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "pdm/kernels.hpp"
#include "pdm/rng.hpp"

using namespace pdm;
namespace k = pdm::kernels;

namespace {

struct Row {
  std::string name;
  double parallel_ms;
  double reference_ms;
  double max_abs_diff;
};

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Row bench_conv(const k::ConvDims& d, int reps, Rng& rng) {
  const auto x = random_vec(static_cast<std::size_t>(d.batch * d.in_channels * d.height * d.width), rng);
  const auto w = random_vec(static_cast<std::size_t>(d.out_channels * d.in_channels * d.kernel * d.kernel), rng);
  const auto b = random_vec(static_cast<std::size_t>(d.out_channels), rng);
  std::vector<double> yp(static_cast<std::size_t>(d.batch * d.out_channels * d.height * d.width)), yr(yp.size());
  char name[96];
  std::snprintf(name, sizeof name, "conv%lldx%lld fwd N%lld C%lld->%lld %lldx%lld", (long long)d.kernel,
                (long long)d.kernel, (long long)d.batch, (long long)d.in_channels, (long long)d.out_channels,
                (long long)d.height, (long long)d.width);
  Row r{name, time_ms([&] { k::conv2d_forward(x.data(), w.data(), b.data(), yp.data(), d); }, reps),
        time_ms([&] { k::reference::conv2d_forward(x.data(), w.data(), b.data(), yr.data(), d); }, reps), 0.0};
  r.max_abs_diff = max_diff(yp, yr);
  return r;
}

Row bench_conv_backward(const k::ConvDims& d, int reps, Rng& rng) {
  const auto x = random_vec(static_cast<std::size_t>(d.batch * d.in_channels * d.height * d.width), rng);
  const auto w = random_vec(static_cast<std::size_t>(d.out_channels * d.in_channels * d.kernel * d.kernel), rng);
  const auto dy = random_vec(static_cast<std::size_t>(d.batch * d.out_channels * d.height * d.width), rng);
  std::vector<double> dxp(x.size()), dwp(w.size()), dbp(static_cast<std::size_t>(d.out_channels));
  std::vector<double> dxr(x.size()), dwr(w.size()), dbr(dbp.size());
  auto zero = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
  Row r{"conv3x3 bwd (dx, dw, db)",
        time_ms([&] { zero(dxp), zero(dwp), zero(dbp);
                      k::conv2d_backward(x.data(), w.data(), dy.data(), dxp.data(), dwp.data(), dbp.data(), d); }, reps),
        time_ms([&] { zero(dxr), zero(dwr), zero(dbr);
                      k::reference::conv2d_backward(x.data(), w.data(), dy.data(), dxr.data(), dwr.data(), dbr.data(), d); }, reps),
        0.0};
  r.max_abs_diff = std::max({max_diff(dxp, dxr), max_diff(dwp, dwr), max_diff(dbp, dbr)});
  return r;
}

Row bench_gemm(const k::GemmDims& d, int reps, Rng& rng) {
  const auto a = random_vec(static_cast<std::size_t>(d.batch * d.m * d.k), rng);
  const auto b = random_vec(static_cast<std::size_t>(d.batch * d.k * d.n), rng);
  std::vector<double> cp(static_cast<std::size_t>(d.batch * d.m * d.n)), cr(cp.size());
  char name[96];
  std::snprintf(name, sizeof name, "bmm B%lld %lldx%lldx%lld%s", (long long)d.batch, (long long)d.m, (long long)d.k,
                (long long)d.n, d.trans_b ? " (B^T)" : "");
  Row r{name, time_ms([&] { k::gemm(a.data(), b.data(), cp.data(), d); }, reps),
        time_ms([&] { k::reference::gemm(a.data(), b.data(), cr.data(), d); }, reps), 0.0};
  r.max_abs_diff = max_diff(cp, cr);
  return r;
}

Row bench_group_norm(const k::GroupNormDims& d, int reps, Rng& rng) {
  const auto n = static_cast<std::size_t>(d.batch * d.channels * d.spatial);
  const auto x = random_vec(n, rng);
  const auto dxh = random_vec(n, rng);
  const auto stats = static_cast<std::size_t>(d.batch * d.groups);
  std::vector<double> xp(n), mp(stats), rp(stats), dxp(n), xr(n), mr(stats), rr(stats), dxr(n);
  Row r{"group_norm fwd+bwd",
        time_ms([&] {
          k::group_norm_forward(x.data(), xp.data(), mp.data(), rp.data(), d);
          std::fill(dxp.begin(), dxp.end(), 0.0);
          k::group_norm_backward(xp.data(), rp.data(), dxh.data(), dxp.data(), d);
        }, reps),
        time_ms([&] {
          k::reference::group_norm_forward(x.data(), xr.data(), mr.data(), rr.data(), d);
          std::fill(dxr.begin(), dxr.end(), 0.0);
          k::reference::group_norm_backward(xr.data(), rr.data(), dxh.data(), dxr.data(), d);
        }, reps),
        0.0};
  r.max_abs_diff = std::max(max_diff(xp, xr), max_diff(dxp, dxr));
  return r;
}

Row bench_softmax(std::int64_t rows, std::int64_t cols, int reps, Rng& rng) {
  const auto x = random_vec(static_cast<std::size_t>(rows * cols), rng);
  std::vector<double> yp(x.size()), yr(x.size());
  char name[96];
  std::snprintf(name, sizeof name, "softmax %lldx%lld", (long long)rows, (long long)cols);
  Row r{name, time_ms([&] { k::softmax_forward(x.data(), yp.data(), rows, cols); }, reps),
        time_ms([&] { k::reference::softmax_forward(x.data(), yr.data(), rows, cols); }, reps), 0.0};
  r.max_abs_diff = max_diff(yp, yr);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  bool as_json = false;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--reps") && i + 1 < argc) reps = std::max(1, std::atoi(argv[++i]));
    else if (!std::strcmp(argv[i], "--json")) as_json = true;
    else {
      std::fprintf(stderr, "usage: %s [--reps N] [--json]\n", argv[0]);
      return 2;
    }
  }
  Rng rng(42);
  std::vector<Row> rows;
  rows.push_back(bench_conv({8, 32, 32, 32, 32, 3}, reps, rng));
  rows.push_back(bench_conv({8, 8, 16, 64, 64, 3}, reps, rng));
  rows.push_back(bench_conv({16, 48, 64, 8, 8, 3}, reps, rng));
  rows.push_back(bench_conv({8, 32, 8, 16, 16, 1}, reps, rng));
  rows.push_back(bench_conv_backward({8, 32, 32, 32, 32, 3}, reps, rng));
  rows.push_back(bench_gemm({8, 256, 256, 32, false, false}, reps, rng));
  rows.push_back(bench_gemm({8, 256, 256, 32, false, true}, reps, rng));
  rows.push_back(bench_group_norm({8, 32, 8, 32 * 32, 1e-6}, reps, rng));
  rows.push_back(bench_softmax(8 * 256, 256, reps, rng));

  if (as_json) {
    std::printf("[\n");
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::printf("  {\"kernel\": \"%s\", \"parallel_ms\": %.4f, \"reference_ms\": %.4f, \"speedup\": %.3f, "
                  "\"max_abs_diff\": %.3e}%s\n",
                  rows[i].name.c_str(), rows[i].parallel_ms, rows[i].reference_ms,
                  rows[i].reference_ms / rows[i].parallel_ms, rows[i].max_abs_diff, i + 1 < rows.size() ? "," : "");
    std::printf("]\n");
    return 0;
  }
  std::printf("threads: %d   reps: %d (best of)\n\n", k::thread_count(), reps);
  std::printf("%-40s %12s %12s %9s %12s\n", "kernel", "parallel ms", "reference ms", "speedup", "max |diff|");
  for (const auto& r : rows)
    std::printf("%-40s %12.3f %12.3f %8.2fx %12.2e\n", r.name.c_str(), r.parallel_ms, r.reference_ms,
                r.reference_ms / r.parallel_ms, r.max_abs_diff);
  return 0;
}
