// Serial reference kernels. Written for clarity, not speed; the tests compare
// the parallel kernels against these.

#include <cmath>
#include <vector>

#include "pdm/kernels.hpp"

namespace pdm::kernels::reference {

void conv2d_forward(const double* x, const double* w, const double* bias, double* y, const ConvDims& d) {
  const std::int64_t pad = d.kernel / 2;
  for (std::int64_t n = 0; n < d.batch; ++n)
    for (std::int64_t o = 0; o < d.out_channels; ++o)
      for (std::int64_t i = 0; i < d.height; ++i)
        for (std::int64_t j = 0; j < d.width; ++j) {
          double acc = bias ? bias[o] : 0.0;
          for (std::int64_t c = 0; c < d.in_channels; ++c)
            for (std::int64_t ky = 0; ky < d.kernel; ++ky)
              for (std::int64_t kx = 0; kx < d.kernel; ++kx) {
                const std::int64_t iy = i + ky - pad, ix = j + kx - pad;
                if (iy < 0 || iy >= d.height || ix < 0 || ix >= d.width) continue;
                acc += w[((o * d.in_channels + c) * d.kernel + ky) * d.kernel + kx] *
                       x[((n * d.in_channels + c) * d.height + iy) * d.width + ix];
              }
          y[((n * d.out_channels + o) * d.height + i) * d.width + j] = acc;
        }
}

void conv2d_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     double* dbias, const ConvDims& d) {
  const std::int64_t pad = d.kernel / 2;
  for (std::int64_t n = 0; n < d.batch; ++n)
    for (std::int64_t o = 0; o < d.out_channels; ++o)
      for (std::int64_t i = 0; i < d.height; ++i)
        for (std::int64_t j = 0; j < d.width; ++j) {
          const double g = dy[((n * d.out_channels + o) * d.height + i) * d.width + j];
          if (dbias) dbias[o] += g;
          for (std::int64_t c = 0; c < d.in_channels; ++c)
            for (std::int64_t ky = 0; ky < d.kernel; ++ky)
              for (std::int64_t kx = 0; kx < d.kernel; ++kx) {
                const std::int64_t iy = i + ky - pad, ix = j + kx - pad;
                if (iy < 0 || iy >= d.height || ix < 0 || ix >= d.width) continue;
                const std::int64_t wi = ((o * d.in_channels + c) * d.kernel + ky) * d.kernel + kx;
                const std::int64_t xi = ((n * d.in_channels + c) * d.height + iy) * d.width + ix;
                if (dw) dw[wi] += g * x[xi];
                if (dx) dx[xi] += g * w[wi];
              }
        }
}

void gemm(const double* a, const double* b, double* c, const GemmDims& d, bool accumulate) {
  for (std::int64_t bi = 0; bi < d.batch; ++bi) {
    const double* ab = a + (d.broadcast_a ? 0 : bi * d.m * d.k);
    const double* bb = b + (d.broadcast_b ? 0 : bi * d.k * d.n);
    double* cb = c + bi * d.m * d.n;
    for (std::int64_t i = 0; i < d.m; ++i)
      for (std::int64_t j = 0; j < d.n; ++j) {
        double acc = 0.0;
        for (std::int64_t p = 0; p < d.k; ++p) {
          const double av = d.trans_a ? ab[p * d.m + i] : ab[i * d.k + p];
          const double bv = d.trans_b ? bb[j * d.k + p] : bb[p * d.n + j];
          acc += av * bv;
        }
        cb[i * d.n + j] = accumulate ? cb[i * d.n + j] + acc : acc;
      }
  }
}

void group_norm_forward(const double* x, double* xhat, double* mean, double* rstd, const GroupNormDims& d) {
  const std::int64_t cpg = d.channels / d.groups;
  for (std::int64_t n = 0; n < d.batch; ++n)
    for (std::int64_t g = 0; g < d.groups; ++g) {
      double mu = 0.0, sq = 0.0;
      std::int64_t count = 0;
      for (std::int64_t c = g * cpg; c < (g + 1) * cpg; ++c)
        for (std::int64_t s = 0; s < d.spatial; ++s) {
          mu += x[(n * d.channels + c) * d.spatial + s];
          ++count;
        }
      mu /= static_cast<double>(count);
      for (std::int64_t c = g * cpg; c < (g + 1) * cpg; ++c)
        for (std::int64_t s = 0; s < d.spatial; ++s) {
          const double v = x[(n * d.channels + c) * d.spatial + s] - mu;
          sq += v * v;
        }
      const double r = 1.0 / std::sqrt(sq / static_cast<double>(count) + d.eps);
      for (std::int64_t c = g * cpg; c < (g + 1) * cpg; ++c)
        for (std::int64_t s = 0; s < d.spatial; ++s) {
          const std::int64_t i = (n * d.channels + c) * d.spatial + s;
          xhat[i] = (x[i] - mu) * r;
        }
      mean[n * d.groups + g] = mu;
      rstd[n * d.groups + g] = r;
    }
}

void group_norm_backward(const double* xhat, const double* rstd, const double* dxhat, double* dx,
                         const GroupNormDims& d) {
  const std::int64_t cpg = d.channels / d.groups;
  const double count = static_cast<double>(cpg * d.spatial);
  for (std::int64_t n = 0; n < d.batch; ++n)
    for (std::int64_t g = 0; g < d.groups; ++g) {
      double a = 0.0, b = 0.0;
      for (std::int64_t c = g * cpg; c < (g + 1) * cpg; ++c)
        for (std::int64_t s = 0; s < d.spatial; ++s) {
          const std::int64_t i = (n * d.channels + c) * d.spatial + s;
          a += dxhat[i];
          b += dxhat[i] * xhat[i];
        }
      const double r = rstd[n * d.groups + g];
      for (std::int64_t c = g * cpg; c < (g + 1) * cpg; ++c)
        for (std::int64_t s = 0; s < d.spatial; ++s) {
          const std::int64_t i = (n * d.channels + c) * d.spatial + s;
          dx[i] += r * (dxhat[i] - a / count - xhat[i] * b / count);
        }
    }
}

void softmax_forward(const double* x, double* y, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, x[r * cols + c]);
    double s = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) s += std::exp(x[r * cols + c] - mx);
    for (std::int64_t c = 0; c < cols; ++c) y[r * cols + c] = std::exp(x[r * cols + c] - mx) / s;
  }
}

void softmax_backward(const double* y, const double* dy, double* dx, std::int64_t rows, std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t i = 0; i < cols; ++i) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) {
        const double jac = y[r * cols + i] * ((i == j ? 1.0 : 0.0) - y[r * cols + j]);
        acc += jac * dy[r * cols + j];
      }
      dx[r * cols + i] += acc;
    }
}

}  // namespace pdm::kernels::reference
