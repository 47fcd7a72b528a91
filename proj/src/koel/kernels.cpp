#include "koel/kernels.hpp"

#include <atomic>
#include <cstring>

namespace koel::kernels {

namespace {
std::atomic<bool> g_parallel{true};

// below this many multiply-adds a parallel region is not worth spawning
constexpr int64_t kParallelCutoff = 1 << 15;
} // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// one output row of C = A.B, ikj order so the inner loop runs down B's rows
template <class S>
inline void mm_nn_row(const S *a, const S *b, S *c, int i, int k, int n, bool accumulate) {
    S *crow = c + static_cast<int64_t>(i) * n;
    if (!accumulate) {
        for (int j = 0; j < n; ++j) crow[j] = S(0);
    }
    const S *arow = a + static_cast<int64_t>(i) * k;
    for (int l = 0; l < k; ++l) {
        const S al = arow[l];
        const S *brow = b + static_cast<int64_t>(l) * n;
        for (int j = 0; j < n; ++j) crow[j] += al * brow[j];
    }
}

template <class S>
void matmul_nn_serial(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) mm_nn_row(a, b, c, i, k, n, accumulate);
}

template <class S>
void matmul_nn(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate) {
    const int64_t work = static_cast<int64_t>(m) * k * n;
    if (!parallel_enabled() || work < kParallelCutoff) {
        matmul_nn_serial(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) mm_nn_row(a, b, c, i, k, n, accumulate);
}

template <class S>
inline void mm_nt_row(const S *a, const S *b, S *c, int i, int k, int n, bool accumulate) {
    const S *arow = a + static_cast<int64_t>(i) * k;
    S *crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
        const S *brow = b + static_cast<int64_t>(j) * k;
        S acc = S(0);
        for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
        crow[j] = accumulate ? crow[j] + acc : acc;
    }
}

template <class S>
void matmul_nt_serial(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) mm_nt_row(a, b, c, i, k, n, accumulate);
}

template <class S>
void matmul_nt(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate) {
    const int64_t work = static_cast<int64_t>(m) * k * n;
    if (!parallel_enabled() || work < kParallelCutoff) {
        matmul_nt_serial(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) mm_nt_row(a, b, c, i, k, n, accumulate);
}

template <class S>
inline void mm_tn_row(const S *a, const S *b, S *c, int i, int m, int k, int n, bool accumulate) {
    S *crow = c + static_cast<int64_t>(i) * n;
    if (!accumulate) {
        for (int j = 0; j < n; ++j) crow[j] = S(0);
    }
    for (int l = 0; l < k; ++l) {
        const S al = a[static_cast<int64_t>(l) * m + i];
        const S *brow = b + static_cast<int64_t>(l) * n;
        for (int j = 0; j < n; ++j) crow[j] += al * brow[j];
    }
}

template <class S>
void matmul_tn_serial(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) mm_tn_row(a, b, c, i, m, k, n, accumulate);
}

template <class S>
void matmul_tn(const S *a, const S *b, S *c, int m, int k, int n, bool accumulate) {
    const int64_t work = static_cast<int64_t>(m) * k * n;
    if (!parallel_enabled() || work < kParallelCutoff) {
        matmul_tn_serial(a, b, c, m, k, n, accumulate);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) mm_tn_row(a, b, c, i, m, k, n, accumulate);
}

// ---------------------------------------------------------------------------
// conv2d, no padding
// ---------------------------------------------------------------------------

template <class S>
inline void conv2d_cell(const S *in, const S *w, const S *bias, S *out,
                        int bi, int oc, int ci, int h, int wd, int co,
                        int kh, int kw, int stride, int ho, int wo) {
    const int64_t in_b = static_cast<int64_t>(bi) * ci * h * wd;
    S *orow = out + ((static_cast<int64_t>(bi) * co + oc) * ho) * wo;
    const S *wbase = w + static_cast<int64_t>(oc) * ci * kh * kw;
    const S b0 = bias ? bias[oc] : S(0);
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            S acc = b0;
            for (int ic = 0; ic < ci; ++ic) {
                const S *iplane = in + in_b + static_cast<int64_t>(ic) * h * wd;
                const S *wplane = wbase + static_cast<int64_t>(ic) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    const S *irow = iplane + static_cast<int64_t>(oy * stride + ky) * wd + ox * stride;
                    const S *wrow = wplane + static_cast<int64_t>(ky) * kw;
                    for (int kx = 0; kx < kw; ++kx) acc += irow[kx] * wrow[kx];
                }
            }
            orow[static_cast<int64_t>(oy) * wo + ox] = acc;
        }
    }
}

template <class S>
void conv2d_forward_serial(const S *in, const S *w, const S *bias, S *out,
                           int batch, int ci, int h, int wd, int co, int kh, int kw, int stride) {
    const int ho = (h - kh) / stride + 1;
    const int wo = (wd - kw) / stride + 1;
    for (int bi = 0; bi < batch; ++bi)
        for (int oc = 0; oc < co; ++oc)
            conv2d_cell(in, w, bias, out, bi, oc, ci, h, wd, co, kh, kw, stride, ho, wo);
}

template <class S>
void conv2d_forward(const S *in, const S *w, const S *bias, S *out,
                    int batch, int ci, int h, int wd, int co, int kh, int kw, int stride) {
    const int ho = (h - kh) / stride + 1;
    const int wo = (wd - kw) / stride + 1;
    const int64_t work = static_cast<int64_t>(batch) * co * ho * wo * ci * kh * kw;
    if (!parallel_enabled() || work < kParallelCutoff) {
        conv2d_forward_serial(in, w, bias, out, batch, ci, h, wd, co, kh, kw, stride);
        return;
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int bi = 0; bi < batch; ++bi)
        for (int oc = 0; oc < co; ++oc)
            conv2d_cell(in, w, bias, out, bi, oc, ci, h, wd, co, kh, kw, stride, ho, wo);
}

template <class S>
void conv2d_backward(const S *in, const S *w, const S *gout,
                     S *gin, S *gw, S *gbias,
                     int batch, int ci, int h, int wd, int co, int kh, int kw, int stride) {
    const int ho = (h - kh) / stride + 1;
    const int wo = (wd - kw) / stride + 1;
    for (int bi = 0; bi < batch; ++bi) {
        for (int oc = 0; oc < co; ++oc) {
            const S *gplane = gout + ((static_cast<int64_t>(bi) * co + oc) * ho) * wo;
            const S *wbase = w + static_cast<int64_t>(oc) * ci * kh * kw;
            S *gwbase = gw + static_cast<int64_t>(oc) * ci * kh * kw;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    const S g = gplane[static_cast<int64_t>(oy) * wo + ox];
                    if (gbias) gbias[oc] += g;
                    for (int ic = 0; ic < ci; ++ic) {
                        const int64_t ioff = (static_cast<int64_t>(bi) * ci + ic) * h * wd;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = oy * stride + ky;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ox * stride + kx;
                                const int64_t ii = ioff + static_cast<int64_t>(iy) * wd + ix;
                                const int64_t wi = (static_cast<int64_t>(ic) * kh + ky) * kw + kx;
                                gin[ii] += g * wbase[wi];
                                gwbase[wi] += g * in[ii];
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// depthwise conv1d, same padding, [B x T x C] layout
// ---------------------------------------------------------------------------

template <class S>
inline void dwconv1d_frame(const S *x, const S *w, const S *bias, S *out,
                           int bi, int ti, int t, int c, int k) {
    const int pad = k / 2;
    S *orow = out + (static_cast<int64_t>(bi) * t + ti) * c;
    if (bias) {
        for (int ch = 0; ch < c; ++ch) orow[ch] = bias[ch];
    } else {
        for (int ch = 0; ch < c; ++ch) orow[ch] = S(0);
    }
    for (int j = 0; j < k; ++j) {
        const int src = ti + j - pad;
        if (src < 0 || src >= t) continue;
        const S *xrow = x + (static_cast<int64_t>(bi) * t + src) * c;
        const S *wcol = w;
        // w is [C x k]; stride across channels at tap j
        for (int ch = 0; ch < c; ++ch) orow[ch] += xrow[ch] * wcol[static_cast<int64_t>(ch) * k + j];
    }
}

template <class S>
void dwconv1d_forward_serial(const S *x, const S *w, const S *bias, S *out,
                             int batch, int t, int c, int k) {
    for (int bi = 0; bi < batch; ++bi)
        for (int ti = 0; ti < t; ++ti) dwconv1d_frame(x, w, bias, out, bi, ti, t, c, k);
}

template <class S>
void dwconv1d_forward(const S *x, const S *w, const S *bias, S *out,
                      int batch, int t, int c, int k) {
    const int64_t work = static_cast<int64_t>(batch) * t * c * k;
    if (!parallel_enabled() || work < kParallelCutoff) {
        dwconv1d_forward_serial(x, w, bias, out, batch, t, c, k);
        return;
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int bi = 0; bi < batch; ++bi)
        for (int ti = 0; ti < t; ++ti) dwconv1d_frame(x, w, bias, out, bi, ti, t, c, k);
}

template <class S>
void dwconv1d_backward(const S *x, const S *w, const S *gout,
                       S *gx, S *gw, S *gbias,
                       int batch, int t, int c, int k) {
    const int pad = k / 2;
    for (int bi = 0; bi < batch; ++bi) {
        for (int ti = 0; ti < t; ++ti) {
            const S *grow = gout + (static_cast<int64_t>(bi) * t + ti) * c;
            if (gbias) {
                for (int ch = 0; ch < c; ++ch) gbias[ch] += grow[ch];
            }
            for (int j = 0; j < k; ++j) {
                const int src = ti + j - pad;
                if (src < 0 || src >= t) continue;
                const S *xrow = x + (static_cast<int64_t>(bi) * t + src) * c;
                S *gxrow = gx + (static_cast<int64_t>(bi) * t + src) * c;
                for (int ch = 0; ch < c; ++ch) {
                    gxrow[ch] += grow[ch] * w[static_cast<int64_t>(ch) * k + j];
                    gw[static_cast<int64_t>(ch) * k + j] += grow[ch] * xrow[ch];
                }
            }
        }
    }
}

// explicit instantiations
#define KOEL_INSTANTIATE(S)                                                                        \
    template void matmul_nn<S>(const S *, const S *, S *, int, int, int, bool);                    \
    template void matmul_nn_serial<S>(const S *, const S *, S *, int, int, int, bool);             \
    template void matmul_nt<S>(const S *, const S *, S *, int, int, int, bool);                    \
    template void matmul_nt_serial<S>(const S *, const S *, S *, int, int, int, bool);             \
    template void matmul_tn<S>(const S *, const S *, S *, int, int, int, bool);                    \
    template void matmul_tn_serial<S>(const S *, const S *, S *, int, int, int, bool);             \
    template void conv2d_forward<S>(const S *, const S *, const S *, S *, int, int, int, int, int, \
                                    int, int, int);                                                \
    template void conv2d_forward_serial<S>(const S *, const S *, const S *, S *, int, int, int,    \
                                           int, int, int, int, int);                               \
    template void conv2d_backward<S>(const S *, const S *, const S *, S *, S *, S *, int, int,     \
                                     int, int, int, int, int, int);                                \
    template void dwconv1d_forward<S>(const S *, const S *, const S *, S *, int, int, int, int);   \
    template void dwconv1d_forward_serial<S>(const S *, const S *, const S *, S *, int, int, int,  \
                                             int);                                                 \
    template void dwconv1d_backward<S>(const S *, const S *, const S *, S *, S *, S *, int, int,   \
                                       int, int);

KOEL_INSTANTIATE(float)
KOEL_INSTANTIATE(double)
#undef KOEL_INSTANTIATE

} // namespace koel::kernels
