#include "pdm/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pdm::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

int current_thread() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

// col has shape (cin*k*k, h*w)
void im2col(const double* x, double* col, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k) {
  const std::int64_t pad = k / 2;
  const std::int64_t hw = h * w;
  for (std::int64_t c = 0; c < cin; ++c) {
    const double* xc = x + c * hw;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * hw;
        for (std::int64_t oy = 0; oy < h; ++oy) {
          const std::int64_t iy = oy + ky - pad;
          double* dst = row + oy * w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = xc + iy * w;
          const std::int64_t dx = kx - pad;
          const std::int64_t lo = std::max<std::int64_t>(0, -dx);
          const std::int64_t hi = std::min<std::int64_t>(w, w - dx);
          for (std::int64_t ox = 0; ox < lo; ++ox) dst[ox] = 0.0;
          for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox + dx];
          for (std::int64_t ox = std::max(hi, lo); ox < w; ++ox) dst[ox] = 0.0;
        }
      }
    }
  }
}

void col2im_add(const double* col, double* x, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t k) {
  const std::int64_t pad = k / 2;
  const std::int64_t hw = h * w;
  for (std::int64_t c = 0; c < cin; ++c) {
    double* xc = x + c * hw;
    for (std::int64_t ky = 0; ky < k; ++ky) {
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * hw;
        for (std::int64_t oy = 0; oy < h; ++oy) {
          const std::int64_t iy = oy + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + oy * w;
          double* dst = xc + iy * w;
          const std::int64_t dx = kx - pad;
          const std::int64_t lo = std::max<std::int64_t>(0, -dx);
          const std::int64_t hi = std::min<std::int64_t>(w, w - dx);
          for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox + dx] += src[ox];
        }
      }
    }
  }
}

}  // namespace

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void conv2d_forward(const double* x, const double* w, const double* bias, double* y, const ConvDims& d) {
  const std::int64_t hw = d.height * d.width;
  const std::int64_t patch = d.in_channels * d.kernel * d.kernel;
  ConstMapMat wm(w, d.out_channels, patch);
  std::vector<std::vector<double>> scratch(static_cast<std::size_t>(thread_count()));

#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < d.batch; ++n) {
    const double* xn = x + n * d.in_channels * hw;
    MapMat yn(y + n * d.out_channels * hw, d.out_channels, hw);
    if (d.kernel == 1) {
      yn.noalias() = wm * ConstMapMat(xn, d.in_channels, hw);
    } else {
      auto& col = scratch[static_cast<std::size_t>(current_thread())];
      col.resize(static_cast<std::size_t>(patch * hw));
      im2col(xn, col.data(), d.in_channels, d.height, d.width, d.kernel);
      yn.noalias() = wm * ConstMapMat(col.data(), patch, hw);
    }
    if (bias) {
      for (std::int64_t o = 0; o < d.out_channels; ++o) yn.row(o).array() += bias[o];
    }
  }
}

void conv2d_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     double* dbias, const ConvDims& d) {
  const std::int64_t hw = d.height * d.width;
  const std::int64_t patch = d.in_channels * d.kernel * d.kernel;
  ConstMapMat wm(w, d.out_channels, patch);
  const auto threads = static_cast<std::size_t>(thread_count());
  std::vector<std::vector<double>> col_scratch(threads), dcol_scratch(threads);
  std::vector<RowMat> dw_local(threads, RowMat::Zero(dw ? d.out_channels : 0, dw ? patch : 0));

#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < d.batch; ++n) {
    const auto tid = static_cast<std::size_t>(current_thread());
    const double* xn = x + n * d.in_channels * hw;
    ConstMapMat dyn(dy + n * d.out_channels * hw, d.out_channels, hw);
    if (d.kernel == 1) {
      if (dw) dw_local[tid].noalias() += dyn * ConstMapMat(xn, d.in_channels, hw).transpose();
      if (dx) MapMat(dx + n * d.in_channels * hw, d.in_channels, hw).noalias() += wm.transpose() * dyn;
    } else {
      if (dw) {
        auto& col = col_scratch[tid];
        col.resize(static_cast<std::size_t>(patch * hw));
        im2col(xn, col.data(), d.in_channels, d.height, d.width, d.kernel);
        dw_local[tid].noalias() += dyn * ConstMapMat(col.data(), patch, hw).transpose();
      }
      if (dx) {
        auto& dcol = dcol_scratch[tid];
        dcol.resize(static_cast<std::size_t>(patch * hw));
        MapMat(dcol.data(), patch, hw).noalias() = wm.transpose() * dyn;
        col2im_add(dcol.data(), dx + n * d.in_channels * hw, d.in_channels, d.height, d.width, d.kernel);
      }
    }
  }

  if (dw) {
    MapMat dwm(dw, d.out_channels, patch);
    for (const auto& part : dw_local) dwm += part;
  }
  if (dbias) {
    for (std::int64_t n = 0; n < d.batch; ++n)
      for (std::int64_t o = 0; o < d.out_channels; ++o) {
        const double* row = dy + (n * d.out_channels + o) * hw;
        double s = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) s += row[i];
        dbias[o] += s;
      }
  }
}

void gemm(const double* a, const double* b, double* c, const GemmDims& d, bool accumulate) {
  const std::int64_t a_stride = d.broadcast_a ? 0 : d.m * d.k;
  const std::int64_t b_stride = d.broadcast_b ? 0 : d.k * d.n;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < d.batch; ++i) {
    const double* ai = a + i * a_stride;
    const double* bi = b + i * b_stride;
    MapMat ci(c + i * d.m * d.n, d.m, d.n);
    if (!accumulate) ci.setZero();
    if (!d.trans_a && !d.trans_b) {
      ci.noalias() += ConstMapMat(ai, d.m, d.k) * ConstMapMat(bi, d.k, d.n);
    } else if (d.trans_a && !d.trans_b) {
      ci.noalias() += ConstMapMat(ai, d.k, d.m).transpose() * ConstMapMat(bi, d.k, d.n);
    } else if (!d.trans_a && d.trans_b) {
      ci.noalias() += ConstMapMat(ai, d.m, d.k) * ConstMapMat(bi, d.n, d.k).transpose();
    } else {
      ci.noalias() += ConstMapMat(ai, d.k, d.m).transpose() * ConstMapMat(bi, d.n, d.k).transpose();
    }
  }
}

void group_norm_forward(const double* x, double* xhat, double* mean, double* rstd, const GroupNormDims& d) {
  const std::int64_t per_group = d.channels / d.groups * d.spatial;
#pragma omp parallel for schedule(static)
  for (std::int64_t g = 0; g < d.batch * d.groups; ++g) {
    const double* xg = x + g * per_group;
    double* yg = xhat + g * per_group;
    double mu = 0.0;
    for (std::int64_t i = 0; i < per_group; ++i) mu += xg[i];
    mu /= static_cast<double>(per_group);
    double var = 0.0;
    for (std::int64_t i = 0; i < per_group; ++i) var += (xg[i] - mu) * (xg[i] - mu);
    var /= static_cast<double>(per_group);
    const double r = 1.0 / std::sqrt(var + d.eps);
    for (std::int64_t i = 0; i < per_group; ++i) yg[i] = (xg[i] - mu) * r;
    mean[g] = mu;
    rstd[g] = r;
  }
}

void group_norm_backward(const double* xhat, const double* rstd, const double* dxhat, double* dx,
                         const GroupNormDims& d) {
  const std::int64_t per_group = d.channels / d.groups * d.spatial;
  const double inv_n = 1.0 / static_cast<double>(per_group);
#pragma omp parallel for schedule(static)
  for (std::int64_t g = 0; g < d.batch * d.groups; ++g) {
    const double* yg = xhat + g * per_group;
    const double* dyg = dxhat + g * per_group;
    double* dxg = dx + g * per_group;
    double sum_dy = 0.0, sum_dy_y = 0.0;
    for (std::int64_t i = 0; i < per_group; ++i) {
      sum_dy += dyg[i];
      sum_dy_y += dyg[i] * yg[i];
    }
    for (std::int64_t i = 0; i < per_group; ++i)
      dxg[i] += rstd[g] * (dyg[i] - inv_n * sum_dy - yg[i] * inv_n * sum_dy_y);
  }
}

void avg_pool2_forward(const double* x, double* y, std::int64_t planes, std::int64_t h, std::int64_t w) {
  const std::int64_t oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* xp = x + p * h * w;
    double* yp = y + p * oh * ow;
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        const double* r0 = xp + (2 * i) * w + 2 * j;
        const double* r1 = r0 + w;
        yp[i * ow + j] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
}

void avg_pool2_backward(const double* dy, double* dx, std::int64_t planes, std::int64_t h, std::int64_t w) {
  const std::int64_t oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* dyp = dy + p * oh * ow;
    double* dxp = dx + p * h * w;
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        const double g = 0.25 * dyp[i * ow + j];
        double* r0 = dxp + (2 * i) * w + 2 * j;
        double* r1 = r0 + w;
        r0[0] += g;
        r0[1] += g;
        r1[0] += g;
        r1[1] += g;
      }
  }
}

void upsample2_forward(const double* x, double* y, std::int64_t planes, std::int64_t h, std::int64_t w) {
  const std::int64_t ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* xp = x + p * h * w;
    double* yp = y + p * 4 * h * w;
    for (std::int64_t i = 0; i < 2 * h; ++i)
      for (std::int64_t j = 0; j < ow; ++j) yp[i * ow + j] = xp[(i / 2) * w + j / 2];
  }
}

void upsample2_backward(const double* dy, double* dx, std::int64_t planes, std::int64_t h, std::int64_t w) {
  const std::int64_t ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* dyp = dy + p * 4 * h * w;
    double* dxp = dx + p * h * w;
    for (std::int64_t i = 0; i < 2 * h; ++i)
      for (std::int64_t j = 0; j < ow; ++j) dxp[(i / 2) * w + j / 2] += dyp[i * ow + j];
  }
}

void softmax_forward(const double* x, double* y, std::int64_t rows, std::int64_t cols) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double* yr = y + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double s = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      s += yr[c];
    }
    const double inv = 1.0 / s;
    for (std::int64_t c = 0; c < cols; ++c) yr[c] *= inv;
  }
}

void softmax_backward(const double* y, const double* dy, double* dx, std::int64_t rows, std::int64_t cols) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* yr = y + r * cols;
    const double* dyr = dy + r * cols;
    double* dxr = dx + r * cols;
    double dot = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) dot += yr[c] * dyr[c];
    for (std::int64_t c = 0; c < cols; ++c) dxr[c] += yr[c] * (dyr[c] - dot);
  }
}

}  // namespace pdm::kernels
