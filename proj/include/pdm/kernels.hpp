#pragma once

// Compute kernels behind the autodiff ops. Every kernel has two versions:
//   pdm::kernels::*             OpenMP-parallel (im2col + GEMM where it pays)
//   pdm::kernels::reference::*  straight serial loops, kept as a test oracle
// Backward kernels accumulate (+=) into their gradient outputs.

#include <cstdint>

namespace pdm::kernels {

/// Stride-1 "same" convolution, square odd kernel, zero padding k/2.
struct ConvDims {
  std::int64_t batch;
  std::int64_t in_channels;
  std::int64_t out_channels;
  std::int64_t height;
  std::int64_t width;
  std::int64_t kernel;
};

/// Batched matrix product C[b] = op(A[b]) * op(B[b]); op(A) is m x k, op(B) is k x n.
/// A is stored m x k (or k x m when trans_a), B is k x n (or n x k when trans_b).
/// A batch stride of zero broadcasts that operand across the batch.
struct GemmDims {
  std::int64_t batch;
  std::int64_t m;
  std::int64_t n;
  std::int64_t k;
  bool trans_a = false;
  bool trans_b = false;
  bool broadcast_a = false;
  bool broadcast_b = false;
};

/// Per-(sample, group) statistics saved by group_norm_forward.
struct GroupNormDims {
  std::int64_t batch;
  std::int64_t channels;
  std::int64_t groups;
  std::int64_t spatial;  // H*W
  double eps;
};

void conv2d_forward(const double* x, const double* w, const double* bias, double* y, const ConvDims& d);
void conv2d_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     double* dbias, const ConvDims& d);

void gemm(const double* a, const double* b, double* c, const GemmDims& d, bool accumulate = false);

// xhat is written, mean/rstd sized batch*groups.
void group_norm_forward(const double* x, double* xhat, double* mean, double* rstd, const GroupNormDims& d);
void group_norm_backward(const double* xhat, const double* rstd, const double* dxhat, double* dx,
                         const GroupNormDims& d);

// planes = batch*channels, each plane h x w (h, w even for pooling)
void avg_pool2_forward(const double* x, double* y, std::int64_t planes, std::int64_t h, std::int64_t w);
void avg_pool2_backward(const double* dy, double* dx, std::int64_t planes, std::int64_t h, std::int64_t w);
void upsample2_forward(const double* x, double* y, std::int64_t planes, std::int64_t h, std::int64_t w);
void upsample2_backward(const double* dy, double* dx, std::int64_t planes, std::int64_t h, std::int64_t w);

void softmax_forward(const double* x, double* y, std::int64_t rows, std::int64_t cols);
void softmax_backward(const double* y, const double* dy, double* dx, std::int64_t rows, std::int64_t cols);

namespace reference {

void conv2d_forward(const double* x, const double* w, const double* bias, double* y, const ConvDims& d);
void conv2d_backward(const double* x, const double* w, const double* dy, double* dx, double* dw,
                     double* dbias, const ConvDims& d);
void gemm(const double* a, const double* b, double* c, const GemmDims& d, bool accumulate = false);
void group_norm_forward(const double* x, double* xhat, double* mean, double* rstd, const GroupNormDims& d);
void group_norm_backward(const double* xhat, const double* rstd, const double* dxhat, double* dx,
                         const GroupNormDims& d);
void softmax_forward(const double* x, double* y, std::int64_t rows, std::int64_t cols);
void softmax_backward(const double* y, const double* dy, double* dx, std::int64_t rows, std::int64_t cols);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int thread_count();

}  // namespace pdm::kernels
