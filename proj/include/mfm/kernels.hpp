#pragma once

#include <cstdint>

// Low-level numeric kernels. Each kernel exists in two variants with
// identical arithmetic: kernels::serial (plain loops, the reference) and
// kernels::par (OpenMP). Both call the same inner-loop bodies, and every
// parallel loop writes disjoint outputs with reductions kept serial, so
// results are bit-identical between variants and across thread counts.
// The unqualified functions dispatch on the process-wide parallel flag.
namespace mfm::kernels {

void set_parallel(bool enabled);
bool parallel_enabled();
int thread_count();

namespace serial {

// c = alpha * op(a) Â· op(b) + beta * c; op(a) is m x k, op(b) is k x n.
// trans flags transpose the raw row-major operand.
template <class T>
void matmul(const T* a, const T* b, T* c, int m, int n, int k,
            bool trans_a, bool trans_b, T alpha, T beta);

template <class T>
void conv2d_fwd(const T* x, const T* w, const T* bias, T* y,
                int n, int ci, int h, int wd, int co, int kh, int kw,
                int stride, int pad, int oh, int ow);
template <class T>
void conv2d_bwd_input(const T* dy, const T* w, T* dx,
                      int n, int ci, int h, int wd, int co, int kh, int kw,
                      int stride, int pad, int oh, int ow);
template <class T>
void conv2d_bwd_params(const T* dy, const T* x, T* dw, T* db,
                       int n, int ci, int h, int wd, int co, int kh, int kw,
                       int stride, int pad, int oh, int ow);

// Transposed convolution; weight layout ci x co x kh x kw.
// token_in reads/writes x (and dx) as n x (h*w) x ci instead of n x ci x h x w.
template <class T>
void tconv2d_fwd(const T* x, const T* w, const T* bias, T* y,
                 int n, int ci, int h, int wd, int co, int kh, int kw,
                 int stride, int pad, int opad, int oh, int ow, bool token_in);
template <class T>
void tconv2d_bwd_input(const T* dy, const T* w, T* dx,
                       int n, int ci, int h, int wd, int co, int kh, int kw,
                       int stride, int pad, int opad, int oh, int ow, bool token_in);
template <class T>
void tconv2d_bwd_params(const T* dy, const T* x, T* dw, T* db,
                        int n, int ci, int h, int wd, int co, int kh, int kw,
                        int stride, int pad, int opad, int oh, int ow, bool token_in);

// Half-pixel bilinear over independent planes (chw layout collapses to planes).
template <class T>
void bilinear_fwd(const T* x, T* y, int planes, int h, int w, int oh, int ow);
template <class T>
void bilinear_bwd(const T* dy, T* dx, int planes, int h, int w, int oh, int ow);

// Same resize on token-major data: (h*w) x c rows -> (oh*ow) x c rows.
template <class T>
void bilinear_tokens_fwd(const T* x, T* y, int h, int w, int oh, int ow, int c);
template <class T>
void bilinear_tokens_bwd(const T* dy, T* dx, int h, int w, int oh, int ow, int c);

template <class T>
void layer_norm_fwd(const T* x, const T* gamma, const T* beta, T* y,
                    T* mean, T* rstd, std::int64_t rows, int c, T eps);
template <class T>
void layer_norm_bwd(const T* dy, const T* x, const T* gamma, const T* mean,
                    const T* rstd, T* dx, T* dgamma, T* dbeta,
                    std::int64_t rows, int c);

template <class T>
void softmax_fwd(const T* x, T* y, std::int64_t rows, int c);
template <class T>
void softmax_bwd(const T* dy, const T* y, T* dx, std::int64_t rows, int c);

// out = alpha * a + beta * b
template <class T>
void axpby(const T* a, const T* b, T* out, std::int64_t n, T alpha, T beta);
// out += alpha * a
template <class T>
void axpy_acc(const T* a, T* out, std::int64_t n, T alpha);
template <class T>
void hadamard(const T* a, const T* b, T* out, std::int64_t n);
// out += a * b
template <class T>
void mul_acc(const T* a, const T* b, T* out, std::int64_t n);
template <class T>
void gelu_fwd(const T* x, T* y, std::int64_t n);
template <class T>
void gelu_bwd(const T* dy, const T* x, T* dx, std::int64_t n);
template <class T>
void relu_fwd(const T* x, T* y, std::int64_t n);
template <class T>
void relu_bwd(const T* dy, const T* x, T* dx, std::int64_t n);

template <class T>
void add_bias_rows(T* y, const T* b, std::int64_t rows, int c);
template <class T>
void bias_bwd_rows(const T* dy, T* db, std::int64_t rows, int c);

// Mean cross-entropy over pixels whose label != ignore; class axis is strided
// by hw (n x c x hw layout). Returns the loss, writes the scored-pixel count.
template <class T>
T ce_fwd(const T* logits, const std::int32_t* labels, int n, int c, int hw,
         int ignore, std::int64_t* count_out);
template <class T>
void ce_bwd(const T* logits, const std::int32_t* labels, int n, int c, int hw,
            int ignore, std::int64_t count, T dy, T* dx);

template <class T>
bool all_finite(const T* x, std::int64_t n);

// Per-pixel argmax and max softmax probability (evaluation / pseudo-labels).
template <class T>
void argmax_conf(const T* logits, int n, int c, int hw,
                 std::int32_t* argmax, T* conf);

}  // namespace serial

namespace par {

template <class T>
void matmul(const T* a, const T* b, T* c, int m, int n, int k,
            bool trans_a, bool trans_b, T alpha, T beta);
template <class T>
void conv2d_fwd(const T* x, const T* w, const T* bias, T* y,
                int n, int ci, int h, int wd, int co, int kh, int kw,
                int stride, int pad, int oh, int ow);
template <class T>
void conv2d_bwd_input(const T* dy, const T* w, T* dx,
                      int n, int ci, int h, int wd, int co, int kh, int kw,
                      int stride, int pad, int oh, int ow);
template <class T>
void conv2d_bwd_params(const T* dy, const T* x, T* dw, T* db,
                       int n, int ci, int h, int wd, int co, int kh, int kw,
                       int stride, int pad, int oh, int ow);
template <class T>
void tconv2d_fwd(const T* x, const T* w, const T* bias, T* y,
                 int n, int ci, int h, int wd, int co, int kh, int kw,
                 int stride, int pad, int opad, int oh, int ow, bool token_in);
template <class T>
void tconv2d_bwd_input(const T* dy, const T* w, T* dx,
                       int n, int ci, int h, int wd, int co, int kh, int kw,
                       int stride, int pad, int opad, int oh, int ow, bool token_in);
template <class T>
void tconv2d_bwd_params(const T* dy, const T* x, T* dw, T* db,
                        int n, int ci, int h, int wd, int co, int kh, int kw,
                        int stride, int pad, int opad, int oh, int ow, bool token_in);
template <class T>
void bilinear_fwd(const T* x, T* y, int planes, int h, int w, int oh, int ow);
template <class T>
void bilinear_bwd(const T* dy, T* dx, int planes, int h, int w, int oh, int ow);
template <class T>
void bilinear_tokens_fwd(const T* x, T* y, int h, int w, int oh, int ow, int c);
template <class T>
void bilinear_tokens_bwd(const T* dy, T* dx, int h, int w, int oh, int ow, int c);
template <class T>
void layer_norm_fwd(const T* x, const T* gamma, const T* beta, T* y,
                    T* mean, T* rstd, std::int64_t rows, int c, T eps);
template <class T>
void layer_norm_bwd(const T* dy, const T* x, const T* gamma, const T* mean,
                    const T* rstd, T* dx, T* dgamma, T* dbeta,
                    std::int64_t rows, int c);
template <class T>
void softmax_fwd(const T* x, T* y, std::int64_t rows, int c);
template <class T>
void softmax_bwd(const T* dy, const T* y, T* dx, std::int64_t rows, int c);
template <class T>
void axpby(const T* a, const T* b, T* out, std::int64_t n, T alpha, T beta);
template <class T>
void axpy_acc(const T* a, T* out, std::int64_t n, T alpha);
template <class T>
void hadamard(const T* a, const T* b, T* out, std::int64_t n);
template <class T>
void mul_acc(const T* a, const T* b, T* out, std::int64_t n);
template <class T>
void gelu_fwd(const T* x, T* y, std::int64_t n);
template <class T>
void gelu_bwd(const T* dy, const T* x, T* dx, std::int64_t n);
template <class T>
void relu_fwd(const T* x, T* y, std::int64_t n);
template <class T>
void relu_bwd(const T* dy, const T* x, T* dx, std::int64_t n);
template <class T>
void add_bias_rows(T* y, const T* b, std::int64_t rows, int c);
template <class T>
void bias_bwd_rows(const T* dy, T* db, std::int64_t rows, int c);
template <class T>
T ce_fwd(const T* logits, const std::int32_t* labels, int n, int c, int hw,
         int ignore, std::int64_t* count_out);
template <class T>
void ce_bwd(const T* logits, const std::int32_t* labels, int n, int c, int hw,
            int ignore, std::int64_t count, T dy, T* dx);
template <class T>
bool all_finite(const T* x, std::int64_t n);
template <class T>
void argmax_conf(const T* logits, int n, int c, int hw,
                 std::int32_t* argmax, T* conf);

}  // namespace par

// Dispatching entry points used by the ops layer.
#define MFM_KERNEL_DISPATCH(name)                                   \
    template <class T, class... Args>                               \
    inline auto name(Args&&... args) {                              \
        return parallel_enabled() ? par::name<T>(args...)           \
                                  : serial::name<T>(args...);       \
    }

MFM_KERNEL_DISPATCH(matmul)
MFM_KERNEL_DISPATCH(conv2d_fwd)
MFM_KERNEL_DISPATCH(conv2d_bwd_input)
MFM_KERNEL_DISPATCH(conv2d_bwd_params)
MFM_KERNEL_DISPATCH(tconv2d_fwd)
MFM_KERNEL_DISPATCH(tconv2d_bwd_input)
MFM_KERNEL_DISPATCH(tconv2d_bwd_params)
MFM_KERNEL_DISPATCH(bilinear_fwd)
MFM_KERNEL_DISPATCH(bilinear_bwd)
MFM_KERNEL_DISPATCH(bilinear_tokens_fwd)
MFM_KERNEL_DISPATCH(bilinear_tokens_bwd)
MFM_KERNEL_DISPATCH(layer_norm_fwd)
MFM_KERNEL_DISPATCH(layer_norm_bwd)
MFM_KERNEL_DISPATCH(softmax_fwd)
MFM_KERNEL_DISPATCH(softmax_bwd)
MFM_KERNEL_DISPATCH(axpby)
MFM_KERNEL_DISPATCH(axpy_acc)
MFM_KERNEL_DISPATCH(hadamard)
MFM_KERNEL_DISPATCH(mul_acc)
MFM_KERNEL_DISPATCH(gelu_fwd)
MFM_KERNEL_DISPATCH(gelu_bwd)
MFM_KERNEL_DISPATCH(relu_fwd)
MFM_KERNEL_DISPATCH(relu_bwd)
MFM_KERNEL_DISPATCH(add_bias_rows)
MFM_KERNEL_DISPATCH(bias_bwd_rows)
MFM_KERNEL_DISPATCH(ce_fwd)
MFM_KERNEL_DISPATCH(ce_bwd)
MFM_KERNEL_DISPATCH(all_finite)
MFM_KERNEL_DISPATCH(argmax_conf)

#undef MFM_KERNEL_DISPATCH

// Nearest-neighbor resize for binary masks (not differentiated).
void nearest_resize_u8(const std::uint8_t* x, std::uint8_t* y,
                       int h, int w, int oh, int ow);

}  // namespace mfm::kernels
