#include "mfm/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

// Serial and OpenMP kernel variants funnel through the shared inner bodies
// below. noinline+noclone keeps one compiled copy of each body, so both
// variants execute identical instruction sequences and match bitwise.
#define MFM_BODY __attribute__((noinline, noclone))

namespace mfm::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

int thread_count() {
#ifdef _OPENMP
    return parallel_enabled() ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

namespace body {

using std::int32_t;
using std::int64_t;

template <class T>
MFM_BODY void matmul_row(T* c_row, const T* ahat_row, const T* bhat,
                         int n, int k, T alpha, T beta) {
    for (int j = 0; j < n; ++j) {
        const T* b_row = bhat + static_cast<int64_t>(j) * k;
        T acc = 0;
        for (int l = 0; l < k; ++l) acc += ahat_row[l] * b_row[l];
        c_row[j] = beta * c_row[j] + alpha * acc;
    }
}

template <class T>
MFM_BODY void conv2d_fwd_row(T* y_row, const T* x, const T* w, const T* bias,
                             int nb, int co_, int oy, int ci, int h, int wd,
                             int kh, int kw, int stride, int pad, int ow) {
    const T* w_co = w + static_cast<int64_t>(co_) * ci * kh * kw;
    const T b = bias ? bias[co_] : T(0);
    for (int ox = 0; ox < ow; ++ox) {
        T acc = b;
        for (int c = 0; c < ci; ++c) {
            const T* x_c = x + (static_cast<int64_t>(nb) * ci + c) * h * wd;
            const T* w_c = w_co + static_cast<int64_t>(c) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= wd) continue;
                    acc += x_c[static_cast<int64_t>(iy) * wd + ix] * w_c[ky * kw + kx];
                }
            }
        }
        y_row[ox] = acc;
    }
}

template <class T>
MFM_BODY void conv2d_bwd_input_row(T* dx_row, const T* dy, const T* w,
                                   int nb, int ci_, int iy, int ci, int h, int wd,
                                   int co, int kh, int kw, int stride, int pad,
                                   int oh, int ow) {
    for (int ix = 0; ix < wd; ++ix) {
        T acc = 0;
        for (int c = 0; c < co; ++c) {
            const T* dy_c = dy + (static_cast<int64_t>(nb) * co + c) * oh * ow;
            const T* w_c = w + (static_cast<int64_t>(c) * ci + ci_) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
                const int ny = iy + pad - ky;
                if (ny < 0 || ny % stride != 0) continue;
                const int oy = ny / stride;
                if (oy >= oh) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int nx = ix + pad - kx;
                    if (nx < 0 || nx % stride != 0) continue;
                    const int ox = nx / stride;
                    if (ox >= ow) continue;
                    acc += dy_c[static_cast<int64_t>(oy) * ow + ox] * w_c[ky * kw + kx];
                }
            }
        }
        dx_row[ix] += acc;
    }
}

template <class T>
MFM_BODY void conv2d_bwd_w_co(T* dw_co, T* db_co, const T* dy, const T* x,
                              int co_, int n, int ci, int h, int wd,
                              int co, int kh, int kw, int stride, int pad,
                              int oh, int ow) {
    for (int c = 0; c < ci; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T acc = 0;
                for (int nb = 0; nb < n; ++nb) {
                    const T* dy_b = dy + (static_cast<int64_t>(nb) * co + co_) * oh * ow;
                    const T* x_b = x + (static_cast<int64_t>(nb) * ci + c) * h * wd;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= wd) continue;
                            acc += dy_b[static_cast<int64_t>(oy) * ow + ox] *
                                   x_b[static_cast<int64_t>(iy) * wd + ix];
                        }
                    }
                }
                dw_co[(static_cast<int64_t>(c) * kh + ky) * kw + kx] += acc;
            }
        }
    }
    if (db_co) {
        T acc = 0;
        for (int nb = 0; nb < n; ++nb) {
            const T* dy_b = dy + (static_cast<int64_t>(nb) * co + co_) * oh * ow;
            for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) acc += dy_b[i];
        }
        *db_co += acc;
    }
}

template <class T>
inline int64_t tconv_x_index(int nb, int c, int iy, int ix,
                             int ci, int h, int wd, bool token_in) {
    if (token_in)
        return (static_cast<int64_t>(nb) * h * wd + static_cast<int64_t>(iy) * wd + ix) * ci + c;
    return ((static_cast<int64_t>(nb) * ci + c) * h + iy) * wd + ix;
}

template <class T>
MFM_BODY void tconv2d_fwd_row(T* y_row, const T* x, const T* w, const T* bias,
                              int nb, int co_, int oy, int ci, int h, int wd,
                              int co, int kh, int kw, int stride, int pad,
                              int ow, bool token_in) {
    const T b = bias ? bias[co_] : T(0);
    for (int ox = 0; ox < ow; ++ox) {
        T acc = b;
        for (int c = 0; c < ci; ++c) {
            const T* w_c = w + (static_cast<int64_t>(c) * co + co_) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
                const int ny = oy + pad - ky;
                if (ny < 0 || ny % stride != 0) continue;
                const int iy = ny / stride;
                if (iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int nx = ox + pad - kx;
                    if (nx < 0 || nx % stride != 0) continue;
                    const int ix = nx / stride;
                    if (ix >= wd) continue;
                    acc += x[tconv_x_index<T>(nb, c, iy, ix, ci, h, wd, token_in)] *
                           w_c[ky * kw + kx];
                }
            }
        }
        y_row[ox] = acc;
    }
}

template <class T>
MFM_BODY void tconv2d_bwd_input_row(T* dx, const T* dy, const T* w,
                                    int nb, int ci_, int iy, int ci, int h, int wd,
                                    int co, int kh, int kw, int stride, int pad,
                                    int oh, int ow, bool token_in) {
    for (int ix = 0; ix < wd; ++ix) {
        T acc = 0;
        for (int c = 0; c < co; ++c) {
            const T* dy_c = dy + (static_cast<int64_t>(nb) * co + c) * oh * ow;
            const T* w_c = w + (static_cast<int64_t>(ci_) * co + c) * kh * kw;
            for (int ky = 0; ky < kh; ++ky) {
                const int oy = iy * stride - pad + ky;
                if (oy < 0 || oy >= oh) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ox = ix * stride - pad + kx;
                    if (ox < 0 || ox >= ow) continue;
                    acc += dy_c[static_cast<int64_t>(oy) * ow + ox] * w_c[ky * kw + kx];
                }
            }
        }
        dx[tconv_x_index<T>(nb, ci_, iy, ix, ci, h, wd, token_in)] += acc;
    }
}

template <class T>
MFM_BODY void tconv2d_bwd_w_ci(T* dw_ci, const T* dy, const T* x,
                               int ci_, int n, int ci, int h, int wd,
                               int co, int kh, int kw, int stride, int pad,
                               int oh, int ow, bool token_in) {
    for (int c = 0; c < co; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T acc = 0;
                for (int nb = 0; nb < n; ++nb) {
                    const T* dy_b = dy + (static_cast<int64_t>(nb) * co + c) * oh * ow;
                    for (int iy = 0; iy < h; ++iy) {
                        const int oy = iy * stride - pad + ky;
                        if (oy < 0 || oy >= oh) continue;
                        for (int ix = 0; ix < wd; ++ix) {
                            const int ox = ix * stride - pad + kx;
                            if (ox < 0 || ox >= ow) continue;
                            acc += x[tconv_x_index<T>(nb, ci_, iy, ix, ci, h, wd, token_in)] *
                                   dy_b[static_cast<int64_t>(oy) * ow + ox];
                        }
                    }
                }
                dw_ci[(static_cast<int64_t>(c) * kh + ky) * kw + kx] += acc;
            }
        }
    }
}

template <class T>
MFM_BODY void sum_plane_acc(T* out, const T* dy, int n_planes, int64_t plane,
                            int plane_stride_planes, int first_plane) {
    T acc = 0;
    for (int p = 0; p < n_planes; ++p) {
        const T* dy_p = dy + (static_cast<int64_t>(first_plane) +
                              static_cast<int64_t>(p) * plane_stride_planes) * plane;
        for (int64_t i = 0; i < plane; ++i) acc += dy_p[i];
    }
    *out += acc;
}

struct LerpIdx {
    int i0, i1;
    double f;
};

inline LerpIdx lerp_idx(int o, int in, int out) {
    // Half-pixel mapping; degenerates to the identity when in == out.
    double s = (static_cast<double>(o) + 0.5) * in / out - 0.5;
    if (s < 0) s = 0;
    int i0 = static_cast<int>(s);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = (i0 + 1 < in) ? i0 + 1 : i0;
    return {i0, i1, s - i0};
}

template <class T>
MFM_BODY void bilinear_fwd_row(T* y_row, const T* x_plane, int h, int w,
                               int oy, int oh, int ow) {
    const LerpIdx ly = lerp_idx(oy, h, oh);
    const T fy = static_cast<T>(ly.f);
    for (int ox = 0; ox < ow; ++ox) {
        const LerpIdx lx = lerp_idx(ox, w, ow);
        const T fx = static_cast<T>(lx.f);
        const T v00 = x_plane[static_cast<int64_t>(ly.i0) * w + lx.i0];
        const T v01 = x_plane[static_cast<int64_t>(ly.i0) * w + lx.i1];
        const T v10 = x_plane[static_cast<int64_t>(ly.i1) * w + lx.i0];
        const T v11 = x_plane[static_cast<int64_t>(ly.i1) * w + lx.i1];
        const T top = v00 + fx * (v01 - v00);
        const T bot = v10 + fx * (v11 - v10);
        y_row[ox] = top + fy * (bot - top);
    }
}

template <class T>
MFM_BODY void bilinear_bwd_all(const T* dy, T* dx, int planes, int h, int w,
                               int oh, int ow) {
    // Scatter with overlapping targets; kept serial in both variants.
    for (int p = 0; p < planes; ++p) {
        const T* dy_p = dy + static_cast<int64_t>(p) * oh * ow;
        T* dx_p = dx + static_cast<int64_t>(p) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
            const LerpIdx ly = lerp_idx(oy, h, oh);
            const T fy = static_cast<T>(ly.f);
            for (int ox = 0; ox < ow; ++ox) {
                const LerpIdx lx = lerp_idx(ox, w, ow);
                const T fx = static_cast<T>(lx.f);
                const T g = dy_p[static_cast<int64_t>(oy) * ow + ox];
                dx_p[static_cast<int64_t>(ly.i0) * w + lx.i0] += g * (1 - fy) * (1 - fx);
                dx_p[static_cast<int64_t>(ly.i0) * w + lx.i1] += g * (1 - fy) * fx;
                dx_p[static_cast<int64_t>(ly.i1) * w + lx.i0] += g * fy * (1 - fx);
                dx_p[static_cast<int64_t>(ly.i1) * w + lx.i1] += g * fy * fx;
            }
        }
    }
}

template <class T>
MFM_BODY void bilinear_tokens_fwd_row(T* y_row, const T* x, int h, int w,
                                      int oy, int ox, int oh, int ow, int c) {
    const LerpIdx ly = lerp_idx(oy, h, oh);
    const LerpIdx lx = lerp_idx(ox, w, ow);
    const T fy = static_cast<T>(ly.f);
    const T fx = static_cast<T>(lx.f);
    const T* r00 = x + (static_cast<int64_t>(ly.i0) * w + lx.i0) * c;
    const T* r01 = x + (static_cast<int64_t>(ly.i0) * w + lx.i1) * c;
    const T* r10 = x + (static_cast<int64_t>(ly.i1) * w + lx.i0) * c;
    const T* r11 = x + (static_cast<int64_t>(ly.i1) * w + lx.i1) * c;
    for (int j = 0; j < c; ++j) {
        const T top = r00[j] + fx * (r01[j] - r00[j]);
        const T bot = r10[j] + fx * (r11[j] - r10[j]);
        y_row[j] = top + fy * (bot - top);
    }
}

template <class T>
MFM_BODY void bilinear_tokens_bwd_all(const T* dy, T* dx, int h, int w,
                                      int oh, int ow, int c) {
    for (int oy = 0; oy < oh; ++oy) {
        const LerpIdx ly = lerp_idx(oy, h, oh);
        const T fy = static_cast<T>(ly.f);
        for (int ox = 0; ox < ow; ++ox) {
            const LerpIdx lx = lerp_idx(ox, w, ow);
            const T fx = static_cast<T>(lx.f);
            const T* g = dy + (static_cast<int64_t>(oy) * ow + ox) * c;
            T* r00 = dx + (static_cast<int64_t>(ly.i0) * w + lx.i0) * c;
            T* r01 = dx + (static_cast<int64_t>(ly.i0) * w + lx.i1) * c;
            T* r10 = dx + (static_cast<int64_t>(ly.i1) * w + lx.i0) * c;
            T* r11 = dx + (static_cast<int64_t>(ly.i1) * w + lx.i1) * c;
            for (int j = 0; j < c; ++j) {
                r00[j] += g[j] * (1 - fy) * (1 - fx);
                r01[j] += g[j] * (1 - fy) * fx;
                r10[j] += g[j] * fy * (1 - fx);
                r11[j] += g[j] * fy * fx;
            }
        }
    }
}

template <class T>
MFM_BODY void layer_norm_fwd_row(const T* x_row, const T* gamma, const T* beta,
                                 T* y_row, T* mean_out, T* rstd_out, int c, T eps) {
    T m = 0;
    for (int j = 0; j < c; ++j) m += x_row[j];
    m /= c;
    T v = 0;
    for (int j = 0; j < c; ++j) {
        const T d = x_row[j] - m;
        v += d * d;
    }
    v /= c;
    const T r = T(1) / std::sqrt(v + eps);
    for (int j = 0; j < c; ++j) y_row[j] = (x_row[j] - m) * r * gamma[j] + beta[j];
    *mean_out = m;
    *rstd_out = r;
}

template <class T>
MFM_BODY void layer_norm_bwd_row(const T* dy_row, const T* x_row, const T* gamma,
                                 T mean, T rstd, T* dx_row, int c) {
    T s1 = 0, s2 = 0;
    for (int j = 0; j < c; ++j) {
        const T xhat = (x_row[j] - mean) * rstd;
        const T dxhat = dy_row[j] * gamma[j];
        s1 += dxhat;
        s2 += dxhat * xhat;
    }
    s1 /= c;
    s2 /= c;
    for (int j = 0; j < c; ++j) {
        const T xhat = (x_row[j] - mean) * rstd;
        const T dxhat = dy_row[j] * gamma[j];
        dx_row[j] += rstd * (dxhat - s1 - xhat * s2);
    }
}

template <class T>
MFM_BODY void layer_norm_dgb_channel(const T* dy, const T* x, const T* mean,
                                     const T* rstd, T* dgamma_j, T* dbeta_j,
                                     int64_t rows, int c, int j) {
    T dg = 0, db = 0;
    for (int64_t r = 0; r < rows; ++r) {
        const T g = dy[r * c + j];
        dg += g * (x[r * c + j] - mean[r]) * rstd[r];
        db += g;
    }
    *dgamma_j += dg;
    *dbeta_j += db;
}

template <class T>
MFM_BODY void softmax_fwd_row(const T* x_row, T* y_row, int c) {
    T m = x_row[0];
    for (int j = 1; j < c; ++j) m = x_row[j] > m ? x_row[j] : m;
    T s = 0;
    for (int j = 0; j < c; ++j) {
        y_row[j] = std::exp(x_row[j] - m);
        s += y_row[j];
    }
    const T inv = T(1) / s;
    for (int j = 0; j < c; ++j) y_row[j] *= inv;
}

template <class T>
MFM_BODY void softmax_bwd_row(const T* dy_row, const T* y_row, T* dx_row, int c) {
    T dot = 0;
    for (int j = 0; j < c; ++j) dot += dy_row[j] * y_row[j];
    for (int j = 0; j < c; ++j) dx_row[j] += y_row[j] * (dy_row[j] - dot);
}

template <class T>
MFM_BODY void axpby_chunk(const T* a, const T* b, T* out, int64_t i0, int64_t i1,
                          T alpha, T beta) {
    for (int64_t i = i0; i < i1; ++i) out[i] = alpha * a[i] + beta * b[i];
}

template <class T>
MFM_BODY void axpy_acc_chunk(const T* a, T* out, int64_t i0, int64_t i1, T alpha) {
    for (int64_t i = i0; i < i1; ++i) out[i] += alpha * a[i];
}

template <class T>
MFM_BODY void hadamard_chunk(const T* a, const T* b, T* out, int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) out[i] = a[i] * b[i];
}

template <class T>
MFM_BODY void mul_acc_chunk(const T* a, const T* b, T* out, int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) out[i] += a[i] * b[i];
}

template <class T>
MFM_BODY void gelu_fwd_chunk(const T* x, T* y, int64_t i0, int64_t i1) {
    const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
    for (int64_t i = i0; i < i1; ++i)
        y[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
}

template <class T>
MFM_BODY void gelu_bwd_chunk(const T* dy, const T* x, T* dx, int64_t i0, int64_t i1) {
    const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
    const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
    for (int64_t i = i0; i < i1; ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
        dx[i] += dy[i] * (cdf + x[i] * pdf);
    }
}

template <class T>
MFM_BODY void relu_fwd_chunk(const T* x, T* y, int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
MFM_BODY void relu_bwd_chunk(const T* dy, const T* x, T* dx, int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i)
        if (x[i] > T(0)) dx[i] += dy[i];
}

template <class T>
MFM_BODY void add_bias_row(T* y_row, const T* b, int c) {
    for (int j = 0; j < c; ++j) y_row[j] += b[j];
}

template <class T>
MFM_BODY void bias_bwd_channel(const T* dy, T* db_j, int64_t rows, int c, int j) {
    T acc = 0;
    for (int64_t r = 0; r < rows; ++r) acc += dy[r * c + j];
    *db_j += acc;
}

template <class T>
MFM_BODY T ce_pixel_loss(const T* logits, int32_t label, int c, int hw) {
    T m = logits[0];
    for (int j = 1; j < c; ++j) {
        const T z = logits[static_cast<int64_t>(j) * hw];
        if (z > m) m = z;
    }
    T s = 0;
    for (int j = 0; j < c; ++j) s += std::exp(logits[static_cast<int64_t>(j) * hw] - m);
    return m + std::log(s) - logits[static_cast<int64_t>(label) * hw];
}

template <class T>
MFM_BODY void ce_pixel_bwd(const T* logits, int32_t label, int c, int hw,
                           T scale, T* dx) {
    T m = logits[0];
    for (int j = 1; j < c; ++j) {
        const T z = logits[static_cast<int64_t>(j) * hw];
        if (z > m) m = z;
    }
    T s = 0;
    for (int j = 0; j < c; ++j) s += std::exp(logits[static_cast<int64_t>(j) * hw] - m);
    const T inv = T(1) / s;
    for (int j = 0; j < c; ++j) {
        T p = std::exp(logits[static_cast<int64_t>(j) * hw] - m) * inv;
        if (j == label) p -= T(1);
        dx[static_cast<int64_t>(j) * hw] += scale * p;
    }
}

template <class T>
MFM_BODY bool finite_chunk(const T* x, int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

template <class T>
MFM_BODY void argmax_conf_pixel(const T* logits, int c, int hw,
                                int32_t* argmax, T* conf) {
    int best = 0;
    T m = logits[0];
    for (int j = 1; j < c; ++j) {
        const T z = logits[static_cast<int64_t>(j) * hw];
        if (z > m) {
            m = z;
            best = j;
        }
    }
    T s = 0;
    for (int j = 0; j < c; ++j) s += std::exp(logits[static_cast<int64_t>(j) * hw] - m);
    *argmax = best;
    *conf = T(1) / s;
}

// Transpose-copy src (rows x cols) into dst (cols x rows). Pure data movement.
template <class T>
MFM_BODY void pack_transpose(const T* src, int rows, int cols, T* dst) {
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cols; ++j)
            dst[static_cast<int64_t>(j) * rows + r] = src[static_cast<int64_t>(r) * cols + j];
}

constexpr std::int64_t kChunk = 1 << 14;

}  // namespace body

// ---------------------------------------------------------------------------
// The two variants. MFM_FOR expands to an OpenMP-parallel loop in par and a
// plain loop in serial; loop bodies only call the shared body functions.

#define MFM_VARIANT serial
#define MFM_PRAGMA(x)
#include "kernels_variant.inc"
#undef MFM_PRAGMA
#undef MFM_VARIANT

#define MFM_VARIANT par
#ifdef _OPENMP
#define MFM_PRAGMA(x) _Pragma(#x)
#else
#define MFM_PRAGMA(x)
#endif
#include "kernels_variant.inc"
#undef MFM_PRAGMA
#undef MFM_VARIANT

#define MFM_INSTANTIATE(ns)                                                              \
    template void ns::matmul<float>(const float*, const float*, float*, int, int, int,   \
                                    bool, bool, float, float);                           \
    template void ns::matmul<double>(const double*, const double*, double*, int, int,    \
                                     int, bool, bool, double, double);                   \
    template void ns::conv2d_fwd<float>(const float*, const float*, const float*,        \
                                        float*, int, int, int, int, int, int, int, int, \
                                        int, int, int);                                  \
    template void ns::conv2d_fwd<double>(const double*, const double*, const double*,    \
                                         double*, int, int, int, int, int, int, int,    \
                                         int, int, int, int);                            \
    template void ns::conv2d_bwd_input<float>(const float*, const float*, float*, int,   \
                                              int, int, int, int, int, int, int, int,   \
                                              int, int);                                 \
    template void ns::conv2d_bwd_input<double>(const double*, const double*, double*,    \
                                               int, int, int, int, int, int, int, int,  \
                                               int, int, int);                           \
    template void ns::conv2d_bwd_params<float>(const float*, const float*, float*,       \
                                               float*, int, int, int, int, int, int,    \
                                               int, int, int, int, int);                 \
    template void ns::conv2d_bwd_params<double>(const double*, const double*, double*,   \
                                                double*, int, int, int, int, int, int,  \
                                                int, int, int, int, int);                \
    template void ns::tconv2d_fwd<float>(const float*, const float*, const float*,       \
                                         float*, int, int, int, int, int, int, int,     \
                                         int, int, int, int, int, bool);                 \
    template void ns::tconv2d_fwd<double>(const double*, const double*, const double*,   \
                                          double*, int, int, int, int, int, int, int,   \
                                          int, int, int, int, int, bool);                \
    template void ns::tconv2d_bwd_input<float>(const float*, const float*, float*, int,  \
                                               int, int, int, int, int, int, int, int,  \
                                               int, int, int, bool);                     \
    template void ns::tconv2d_bwd_input<double>(const double*, const double*, double*,   \
                                                int, int, int, int, int, int, int, int, \
                                                int, int, int, int, bool);               \
    template void ns::tconv2d_bwd_params<float>(const float*, const float*, float*,      \
                                                float*, int, int, int, int, int, int,   \
                                                int, int, int, int, int, int, bool);     \
    template void ns::tconv2d_bwd_params<double>(const double*, const double*, double*,  \
                                                 double*, int, int, int, int, int, int, \
                                                 int, int, int, int, int, int, bool);    \
    template void ns::bilinear_fwd<float>(const float*, float*, int, int, int, int,      \
                                          int);                                          \
    template void ns::bilinear_fwd<double>(const double*, double*, int, int, int, int,   \
                                           int);                                         \
    template void ns::bilinear_bwd<float>(const float*, float*, int, int, int, int,      \
                                          int);                                          \
    template void ns::bilinear_bwd<double>(const double*, double*, int, int, int, int,   \
                                           int);                                         \
    template void ns::bilinear_tokens_fwd<float>(const float*, float*, int, int, int,    \
                                                 int, int);                              \
    template void ns::bilinear_tokens_fwd<double>(const double*, double*, int, int,      \
                                                  int, int, int);                        \
    template void ns::bilinear_tokens_bwd<float>(const float*, float*, int, int, int,    \
                                                 int, int);                              \
    template void ns::bilinear_tokens_bwd<double>(const double*, double*, int, int,      \
                                                  int, int, int);                        \
    template void ns::layer_norm_fwd<float>(const float*, const float*, const float*,    \
                                            float*, float*, float*, std::int64_t, int,  \
                                            float);                                      \
    template void ns::layer_norm_fwd<double>(const double*, const double*,               \
                                             const double*, double*, double*, double*,  \
                                             std::int64_t, int, double);                 \
    template void ns::layer_norm_bwd<float>(const float*, const float*, const float*,    \
                                            const float*, const float*, float*, float*, \
                                            float*, std::int64_t, int);                  \
    template void ns::layer_norm_bwd<double>(const double*, const double*,               \
                                             const double*, const double*,              \
                                             const double*, double*, double*, double*,  \
                                             std::int64_t, int);                         \
    template void ns::softmax_fwd<float>(const float*, float*, std::int64_t, int);       \
    template void ns::softmax_fwd<double>(const double*, double*, std::int64_t, int);    \
    template void ns::softmax_bwd<float>(const float*, const float*, float*,             \
                                         std::int64_t, int);                             \
    template void ns::softmax_bwd<double>(const double*, const double*, double*,         \
                                          std::int64_t, int);                            \
    template void ns::axpby<float>(const float*, const float*, float*, std::int64_t,     \
                                   float, float);                                        \
    template void ns::axpby<double>(const double*, const double*, double*,               \
                                    std::int64_t, double, double);                       \
    template void ns::axpy_acc<float>(const float*, float*, std::int64_t, float);        \
    template void ns::axpy_acc<double>(const double*, double*, std::int64_t, double);    \
    template void ns::hadamard<float>(const float*, const float*, float*,                \
                                      std::int64_t);                                     \
    template void ns::hadamard<double>(const double*, const double*, double*,            \
                                       std::int64_t);                                    \
    template void ns::mul_acc<float>(const float*, const float*, float*, std::int64_t);  \
    template void ns::mul_acc<double>(const double*, const double*, double*,             \
                                      std::int64_t);                                     \
    template void ns::gelu_fwd<float>(const float*, float*, std::int64_t);               \
    template void ns::gelu_fwd<double>(const double*, double*, std::int64_t);            \
    template void ns::gelu_bwd<float>(const float*, const float*, float*,                \
                                      std::int64_t);                                     \
    template void ns::gelu_bwd<double>(const double*, const double*, double*,            \
                                       std::int64_t);                                    \
    template void ns::relu_fwd<float>(const float*, float*, std::int64_t);               \
    template void ns::relu_fwd<double>(const double*, double*, std::int64_t);            \
    template void ns::relu_bwd<float>(const float*, const float*, float*,                \
                                      std::int64_t);                                     \
    template void ns::relu_bwd<double>(const double*, const double*, double*,            \
                                       std::int64_t);                                    \
    template void ns::add_bias_rows<float>(float*, const float*, std::int64_t, int);     \
    template void ns::add_bias_rows<double>(double*, const double*, std::int64_t, int);  \
    template void ns::bias_bwd_rows<float>(const float*, float*, std::int64_t, int);     \
    template void ns::bias_bwd_rows<double>(const double*, double*, std::int64_t, int);  \
    template float ns::ce_fwd<float>(const float*, const std::int32_t*, int, int, int,   \
                                     int, std::int64_t*);                                \
    template double ns::ce_fwd<double>(const double*, const std::int32_t*, int, int,     \
                                       int, int, std::int64_t*);                         \
    template void ns::ce_bwd<float>(const float*, const std::int32_t*, int, int, int,    \
                                    int, std::int64_t, float, float*);                   \
    template void ns::ce_bwd<double>(const double*, const std::int32_t*, int, int, int,  \
                                     int, std::int64_t, double, double*);                \
    template bool ns::all_finite<float>(const float*, std::int64_t);                     \
    template bool ns::all_finite<double>(const double*, std::int64_t);                   \
    template void ns::argmax_conf<float>(const float*, int, int, int, std::int32_t*,     \
                                         float*);                                        \
    template void ns::argmax_conf<double>(const double*, int, int, int, std::int32_t*,   \
                                          double*);

MFM_INSTANTIATE(serial)
MFM_INSTANTIATE(par)

#undef MFM_INSTANTIATE

void nearest_resize_u8(const std::uint8_t* x, std::uint8_t* y,
                       int h, int w, int oh, int ow) {
    for (int oy = 0; oy < oh; ++oy) {
        int iy = static_cast<int>((static_cast<std::int64_t>(oy) * h) / oh);
        if (iy > h - 1) iy = h - 1;
        for (int ox = 0; ox < ow; ++ox) {
            int ix = static_cast<int>((static_cast<std::int64_t>(ox) * w) / ow);
            if (ix > w - 1) ix = w - 1;
            y[static_cast<std::int64_t>(oy) * ow + ox] =
                x[static_cast<std::int64_t>(iy) * w + ix];
        }
    }
}

}  // namespace mfm::kernels
