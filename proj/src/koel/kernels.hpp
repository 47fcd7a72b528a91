#pragma once

#include <cstdint>

// Hot numeric kernels. Every kernel has an OpenMP-parallel entry point and a
// serial reference twin (_serial). Both compute each output element with the
// same inner-loop code, so results are bitwise identical regardless of thread
// count; the unit tests and the bench target rely on that.
namespace koel::kernels {

bool parallel_enabled();
void set_parallel(bool on);

// C[m x n] = A[m x k] . B[k x n]      (accumulate: C += ...)
template <class S>
void matmul_nn(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate = false);
template <class S>
void matmul_nn_serial(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate = false);

// C[m x n] = A[m x k] . B^T           (b stored as [n x k])
template <class S>
void matmul_nt(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate = false);
template <class S>
void matmul_nt_serial(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate = false);

// C[m x n] = A^T . B                  (a stored as [k x m])
template <class S>
void matmul_tn(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate = false);
template <class S>
void matmul_tn_serial(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate = false);

// 2-D convolution, no padding.
// in [B x Ci x H x W], w [Co x Ci x kh x kw], bias [Co] or null,
// out [B x Co x Ho x Wo] with Ho = (H - kh) / stride + 1.
template <class S>
void conv2d_forward(const S *in, const S *w, const S *bias, S *out,
                    int batch, int ci, int h, int wd, int co, int kh, int kw, int stride);
template <class S>
void conv2d_forward_serial(const S *in, const S *w, const S *bias, S *out,
                           int batch, int ci, int h, int wd, int co, int kh, int kw, int stride);

// gradients for conv2d_forward; gin/gw/gbias are accumulated into
template <class S>
void conv2d_backward(const S *in, const S *w, const S *gout,
                     S *gin, S *gw, S *gbias,
                     int batch, int ci, int h, int wd, int co, int kh, int kw, int stride);

// Depthwise 1-D convolution over time with same-padding, channel-last layout.
// x [B x T x C], w [C x k] (k odd), bias [C] or null, out [B x T x C].
template <class S>
void dwconv1d_forward(const S *x, const S *w, const S *bias, S *out,
                      int batch, int t, int c, int k);
template <class S>
void dwconv1d_forward_serial(const S *x, const S *w, const S *bias, S *out,
                             int batch, int t, int c, int k);

template <class S>
void dwconv1d_backward(const S *x, const S *w, const S *gout,
                       S *gx, S *gw, S *gbias,
                       int batch, int t, int c, int k);

} // namespace koel::kernels
