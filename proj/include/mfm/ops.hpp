#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mfm/kernels.hpp"
#include "mfm/tensor.hpp"

namespace mfm {

// Closed set of differentiable primitives; every layer in this artifact is a
// composition of these and nothing else.
enum class PrimitiveId {
    matmul,
    conv2d,
    transposed_conv2d,
    bilinear_resize,
    linear,
    layer_norm,
    softmax,
    gelu,
    relu,
    add,
    hadamard,
    mean,
    cross_entropy_with_ignore,
};

constexpr std::array<PrimitiveId, 13> kAllPrimitives = {
    PrimitiveId::matmul,        PrimitiveId::conv2d,
    PrimitiveId::transposed_conv2d, PrimitiveId::bilinear_resize,
    PrimitiveId::linear,        PrimitiveId::layer_norm,
    PrimitiveId::softmax,       PrimitiveId::gelu,
    PrimitiveId::relu,          PrimitiveId::add,
    PrimitiveId::hadamard,      PrimitiveId::mean,
    PrimitiveId::cross_entropy_with_ignore,
};

inline const char* primitive_name(PrimitiveId op) {
    switch (op) {
        case PrimitiveId::matmul: return "matmul";
        case PrimitiveId::conv2d: return "conv2d";
        case PrimitiveId::transposed_conv2d: return "transposed_conv2d";
        case PrimitiveId::bilinear_resize: return "bilinear_resize";
        case PrimitiveId::linear: return "linear";
        case PrimitiveId::layer_norm: return "layer_norm";
        case PrimitiveId::softmax: return "softmax";
        case PrimitiveId::gelu: return "gelu";
        case PrimitiveId::relu: return "relu";
        case PrimitiveId::add: return "add";
        case PrimitiveId::hadamard: return "hadamard";
        case PrimitiveId::mean: return "mean";
        case PrimitiveId::cross_entropy_with_ignore: return "cross_entropy_with_ignore";
    }
    return "?";
}

struct OpAttrs {
    int stride = 1;
    int pad = 0;
    int out_pad = 0;                  // transposed_conv2d
    int out_h = 0, out_w = 0;         // bilinear_resize target
    int in_h = 0, in_w = 0;           // spatial dims of token-major inputs
    bool token_major = false;         // (H*W) x C layout for tconv / bilinear
    bool trans_a = false, trans_b = false;  // matmul operand transposes
    bool trans_x = false;             // linear input stored Cin x rows
    double alpha = 1.0;               // matmul scale / add coefficient on a
    double beta = 1.0;                // add coefficient on b
    double eps = 1e-5;                // layer_norm
    int ignore_index = 255;           // cross_entropy_with_ignore
    std::vector<std::int32_t> labels; // cross_entropy_with_ignore targets
};

namespace detail {

template <class T>
void check_finite(const std::vector<T>& v, PrimitiveId op, const char* role) {
    if (!kernels::all_finite<T>(v.data(), static_cast<std::int64_t>(v.size())))
        throw NumericError(std::string(primitive_name(op)) + ": non-finite " + role);
}

[[noreturn]] inline void shape_error(PrimitiveId op, const std::string& what) {
    throw ConfigError(std::string(primitive_name(op)) + ": " + what);
}

template <class T>
TensorT<T> make_out(Shape s, std::vector<T> data,
                    const std::vector<TensorT<T>>& inputs,
                    std::function<void(NodeT<T>&)> vjp) {
    auto node = std::make_shared<NodeT<T>>();
    node->data = std::move(data);
    bool req = false;
    for (const auto& t : inputs) req = req || t.node->requires_grad;
    if (grad_mode() && req) {
        node->requires_grad = true;
        for (const auto& t : inputs) node->parents.push_back(t.node);
        node->vjp = std::move(vjp);
    }
    return TensorT<T>(std::move(node), std::move(s));
}

struct ChwDims {
    int n, c, h, w;
    bool batched;
};

inline ChwDims chw_dims(const Shape& s, PrimitiveId op) {
    if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
    if (s.size() == 3) return {1, s[0], s[1], s[2], false};
    shape_error(op, "expected a 3-d or 4-d input, got " + shape_str(s));
}

template <class T>
TensorT<T> op_matmul(const std::vector<TensorT<T>>& in, const OpAttrs& at) {
    const auto op = PrimitiveId::matmul;
    if (in.size() != 2) shape_error(op, "expects 2 inputs");
    const Shape &sa = in[0].shape(), &sb = in[1].shape();
    if (sa.size() != 2 || sb.size() != 2)
        shape_error(op, "operands must be 2-d, got " + shape_str(sa) + " and " + shape_str(sb));
    const bool ta = at.trans_a, tb = at.trans_b;
    const int m = ta ? sa[1] : sa[0], k = ta ? sa[0] : sa[1];
    const int kb = tb ? sb[1] : sb[0], n = tb ? sb[0] : sb[1];
    if (k != kb)
        shape_error(op, "inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
    const T alpha = static_cast<T>(at.alpha);
    std::vector<T> y(static_cast<size_t>(m) * n);
    kernels::matmul<T>(in[0].data().data(), in[1].data().data(), y.data(), m, n, k,
                       ta, tb, alpha, T(0));
    auto pa = in[0].node, pb = in[1].node;
    return make_out<T>({m, n}, std::move(y), in,
                       [pa, pb, m, n, k, ta, tb, alpha](NodeT<T>& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            if (!ta)
                kernels::matmul<T>(self.grad.data(), pb->data.data(), pa->grad.data(),
                                   m, k, n, false, !tb, alpha, T(1));
            else
                kernels::matmul<T>(pb->data.data(), self.grad.data(), pa->grad.data(),
                                   k, m, n, tb, true, alpha, T(1));
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            if (!tb)
                kernels::matmul<T>(pa->data.data(), self.grad.data(), pb->grad.data(),
                                   k, n, m, !ta, false, alpha, T(1));
            else
                kernels::matmul<T>(self.grad.data(), pa->data.data(), pb->grad.data(),
                                   n, k, m, true, ta, alpha, T(1));
        }
    });
}

template <class T>
TensorT<T> op_conv2d(const std::vector<TensorT<T>>& in, const OpAttrs& at) {
    const auto op = PrimitiveId::conv2d;
    if (in.size() != 2 && in.size() != 3) shape_error(op, "expects x, w[, bias]");
    const ChwDims d = chw_dims(in[0].shape(), op);
    const Shape& sw = in[1].shape();
    if (sw.size() != 4) shape_error(op, "weight must be 4-d, got " + shape_str(sw));
    const int co = sw[0], kh = sw[2], kw = sw[3];
    if (sw[1] != d.c)
        shape_error(op, "input channels " + std::to_string(d.c) + " vs weight " + shape_str(sw));
    const bool has_bias = in.size() == 3;
    if (has_bias && in[2].shape() != Shape{co})
        shape_error(op, "bias must be [" + std::to_string(co) + "], got " + shape_str(in[2].shape()));
    const int s = at.stride, p = at.pad;
    if (s < 1) shape_error(op, "stride must be >= 1");
    const int oh = (d.h + 2 * p - kh) / s + 1;
    const int ow = (d.w + 2 * p - kw) / s + 1;
    if (oh < 1 || ow < 1)
        shape_error(op, "kernel " + shape_str(sw) + " does not fit input " + shape_str(in[0].shape()));
    std::vector<T> y(static_cast<size_t>(d.n) * co * oh * ow);
    kernels::conv2d_fwd<T>(in[0].data().data(), in[1].data().data(),
                           has_bias ? in[2].data().data() : nullptr, y.data(),
                           d.n, d.c, d.h, d.w, co, kh, kw, s, p, oh, ow);
    const Shape ys = d.batched ? Shape{d.n, co, oh, ow} : Shape{co, oh, ow};
    auto px = in[0].node, pw = in[1].node;
    auto pbias = has_bias ? in[2].node : nullptr;
    return make_out<T>(ys, std::move(y), in,
                       [px, pw, pbias, d, co, kh, kw, s, p, oh, ow](NodeT<T>& self) {
        if (px->requires_grad) {
            px->ensure_grad();
            kernels::conv2d_bwd_input<T>(self.grad.data(), pw->data.data(), px->grad.data(),
                                         d.n, d.c, d.h, d.w, co, kh, kw, s, p, oh, ow);
        }
        const bool need_w = pw->requires_grad;
        const bool need_b = pbias && pbias->requires_grad;
        if (need_w || need_b) {
            std::vector<T> dw_scratch;
            T* dw_ptr;
            if (need_w) {
                pw->ensure_grad();
                dw_ptr = pw->grad.data();
            } else {
                dw_scratch.assign(pw->data.size(), T(0));
                dw_ptr = dw_scratch.data();
            }
            T* db_ptr = nullptr;
            if (need_b) {
                pbias->ensure_grad();
                db_ptr = pbias->grad.data();
            }
            kernels::conv2d_bwd_params<T>(self.grad.data(), px->data.data(), dw_ptr, db_ptr,
                                          d.n, d.c, d.h, d.w, co, kh, kw, s, p, oh, ow);
        }
    });
}

template <class T>
TensorT<T> op_tconv2d(const std::vector<TensorT<T>>& in, const OpAttrs& at) {
    const auto op = PrimitiveId::transposed_conv2d;
    if (in.size() != 2 && in.size() != 3) shape_error(op, "expects x, w[, bias]");
    ChwDims d;
    if (at.token_major) {
        const Shape& sx = in[0].shape();
        if (sx.size() != 2) shape_error(op, "token-major input must be 2-d, got " + shape_str(sx));
        if (at.in_h * at.in_w != sx[0])
            shape_error(op, "token count " + std::to_string(sx[0]) + " != in_h*in_w " +
                                std::to_string(at.in_h) + "x" + std::to_string(at.in_w));
        d = {1, sx[1], at.in_h, at.in_w, false};
    } else {
        d = chw_dims(in[0].shape(), op);
    }
    const Shape& sw = in[1].shape();
    if (sw.size() != 4) shape_error(op, "weight must be 4-d, got " + shape_str(sw));
    if (sw[0] != d.c)
        shape_error(op, "input channels " + std::to_string(d.c) + " vs weight " + shape_str(sw));
    const int co = sw[1], kh = sw[2], kw = sw[3];
    const bool has_bias = in.size() == 3;
    if (has_bias && in[2].shape() != Shape{co})
        shape_error(op, "bias must be [" + std::to_string(co) + "], got " + shape_str(in[2].shape()));
    const int s = at.stride, p = at.pad, q = at.out_pad;
    if (s < 1 || q < 0 || q >= s) shape_error(op, "need stride >= 1 and 0 <= out_pad < stride");
    const int oh = (d.h - 1) * s - 2 * p + kh + q;
    const int ow = (d.w - 1) * s - 2 * p + kw + q;
    if (oh < 1 || ow < 1) shape_error(op, "output would be empty");
    std::vector<T> y(static_cast<size_t>(d.n) * co * oh * ow);
    const bool tok = at.token_major;
    kernels::tconv2d_fwd<T>(in[0].data().data(), in[1].data().data(),
                            has_bias ? in[2].data().data() : nullptr, y.data(),
                            d.n, d.c, d.h, d.w, co, kh, kw, s, p, q, oh, ow, tok);
    const Shape ys = d.batched ? Shape{d.n, co, oh, ow} : Shape{co, oh, ow};
    auto px = in[0].node, pw = in[1].node;
    auto pbias = has_bias ? in[2].node : nullptr;
    return make_out<T>(ys, std::move(y), in,
                       [px, pw, pbias, d, co, kh, kw, s, p, q, oh, ow, tok](NodeT<T>& self) {
        if (px->requires_grad) {
            px->ensure_grad();
            kernels::tconv2d_bwd_input<T>(self.grad.data(), pw->data.data(), px->grad.data(),
                                          d.n, d.c, d.h, d.w, co, kh, kw, s, p, q, oh, ow, tok);
        }
        const bool need_w = pw->requires_grad;
        const bool need_b = pbias && pbias->requires_grad;
        if (need_w || need_b) {
            std::vector<T> dw_scratch;
            T* dw_ptr;
            if (need_w) {
                pw->ensure_grad();
                dw_ptr = pw->grad.data();
            } else {
                dw_scratch.assign(pw->data.size(), T(0));
                dw_ptr = dw_scratch.data();
            }
            T* db_ptr = nullptr;
            if (need_b) {
                pbias->ensure_grad();
                db_ptr = pbias->grad.data();
            }
            kernels::tconv2d_bwd_params<T>(self.grad.data(), px->data.data(), dw_ptr, db_ptr,
                                           d.n, d.c, d.h, d.w, co, kh, kw, s, p, q, oh, ow, tok);
        }
    });
}

template <class T>
TensorT<T> op_bilinear(const std::vector<TensorT<T>>& in, const OpAttrs& at) {
    const auto op = PrimitiveId::bilinear_resize;
    if (in.size() != 1) shape_error(op, "expects 1 input");
    const int oh = at.out_h, ow = at.out_w;
    if (oh < 1 || ow < 1) shape_error(op, "target extents must be positive");
    auto px = in[0].node;
    if (at.token_major) {
        const Shape& sx = in[0].shape();
        if (sx.size() != 2) shape_error(op, "token-major input must be 2-d, got " + shape_str(sx));
        const int h = at.in_h, w = at.in_w, c = sx[1];
        if (h * w != sx[0])
            shape_error(op, "token count " + std::to_string(sx[0]) + " != in_h*in_w");
        std::vector<T> y(static_cast<size_t>(oh) * ow * c);
        kernels::bilinear_tokens_fwd<T>(in[0].data().data(), y.data(), h, w, oh, ow, c);
        return make_out<T>({oh * ow, c}, std::move(y), in, [px, h, w, oh, ow, c](NodeT<T>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            kernels::bilinear_tokens_bwd<T>(self.grad.data(), px->grad.data(), h, w, oh, ow, c);
        });
    }
    const ChwDims d = chw_dims(in[0].shape(), op);
    const int planes = d.n * d.c;
    std::vector<T> y(static_cast<size_t>(planes) * oh * ow);
    kernels::bilinear_fwd<T>(in[0].data().data(), y.data(), planes, d.h, d.w, oh, ow);
    const Shape ys = d.batched ? Shape{d.n, d.c, oh, ow} : Shape{d.c, oh, ow};
    const int h = d.h, w = d.w;
    return make_out<T>(ys, std::move(y), in, [px, planes, h, w, oh, ow](NodeT<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        kernels::bilinear_bwd<T>(self.grad.data(), px->grad.data(), planes, h, w, oh, ow);
    });
}

template <class T>
TensorT<T> op_linear(const std::vector<TensorT<T>>& in, const OpAttrs& at) {
    const auto op = PrimitiveId::linear;
    if (in.size() != 2 && in.size() != 3) shape_error(op, "expects x, w[, bias]");
    const Shape &sx = in[0].shape(), &sw = in[1].shape();
    if (sx.size() != 2 || sw.size() != 2)
        shape_error(op, "operands must be 2-d, got " + shape_str(sx) + " and " + shape_str(sw));
    const bool tx = at.trans_x;
    const int rows = tx ? sx[1] : sx[0];
    const int cin = tx ? sx[0] : sx[1];
    const int cout = sw[0];
    if (sw[1] != cin)
        shape_error(op, "input features " + std::to_string(cin) + " vs weight " + shape_str(sw));
    const bool has_bias = in.size() == 3;
    if (has_bias && in[2].shape() != Shape{cout})
        shape_error(op, "bias must be [" + std::to_string(cout) + "], got " + shape_str(in[2].shape()));
    std::vector<T> y(static_cast<size_t>(rows) * cout);
    kernels::matmul<T>(in[0].data().data(), in[1].data().data(), y.data(), rows, cout,
                       cin, tx, true, T(1), T(0));
    if (has_bias) kernels::add_bias_rows<T>(y.data(), in[2].data().data(), rows, cout);
    auto px = in[0].node, pw = in[1].node;
    auto pbias = has_bias ? in[2].node : nullptr;
    return make_out<T>({rows, cout}, std::move(y), in,
                       [px, pw, pbias, rows, cin, cout, tx](NodeT<T>& self) {
        if (px->requires_grad) {
            px->ensure_grad();
            if (!tx)
                kernels::matmul<T>(self.grad.data(), pw->data.data(), px->grad.data(),
                                   rows, cin, cout, false, false, T(1), T(1));
            else
                kernels::matmul<T>(pw->data.data(), self.grad.data(), px->grad.data(),
                                   cin, rows, cout, true, true, T(1), T(1));
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            kernels::matmul<T>(self.grad.data(), px->data.data(), pw->grad.data(),
                               cout, cin, rows, true, tx, T(1), T(1));
        }
        if (pbias && pbias->requires_grad) {
            pbias->ensure_grad();
            kernels::bias_bwd_rows<T>(self.grad.data(), pbias->grad.data(), rows, cout);
        }
    });
}

template <class T>
TensorT<T> op_layer_norm(const std::vector<TensorT<T>>& in, const OpAttrs& at) {
    const auto op = PrimitiveId::layer_norm;
    if (in.size() != 3) shape_error(op, "expects x, gamma, beta");
    const Shape& sx = in[0].shape();
    if (sx.size() != 2) shape_error(op, "input must be 2-d rows x channels, got " + shape_str(sx));
    const int rows = sx[0], c = sx[1];
    if (in[1].shape() != Shape{c} || in[2].shape() != Shape{c})
        shape_error(op, "gamma/beta must be [" + std::to_string(c) + "], got " +
                            shape_str(in[1].shape()) + " and " + shape_str(in[2].shape()));
    const T eps = static_cast<T>(at.eps);
    std::vector<T> y(in[0].data().size());
    auto mean = std::make_shared<std::vector<T>>(rows);
    auto rstd = std::make_shared<std::vector<T>>(rows);
    kernels::layer_norm_fwd<T>(in[0].data().data(), in[1].data().data(), in[2].data().data(),
                               y.data(), mean->data(), rstd->data(), rows, c, eps);
    auto px = in[0].node, pg = in[1].node, pb = in[2].node;
    return make_out<T>(sx, std::move(y), in, [px, pg, pb, mean, rstd, rows, c](NodeT<T>& self) {
        if (px->requires_grad) {
            px->ensure_grad();
            kernels::layer_norm_bwd<T>(self.grad.data(), px->data.data(), pg->data.data(),
                                       mean->data(), rstd->data(), px->grad.data(),
                                       nullptr, nullptr, rows, c);
        }
        if (pg->requires_grad || pb->requires_grad) {
            std::vector<T> dg_scratch, db_scratch;
            T* dg;
            T* db;
            if (pg->requires_grad) {
                pg->ensure_grad();
                dg = pg->grad.data();
            } else {
                dg_scratch.assign(c, T(0));
                dg = dg_scratch.data();
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                db = pb->grad.data();
            } else {
                db_scratch.assign(c, T(0));
                db = db_scratch.data();
            }
            kernels::layer_norm_bwd<T>(self.grad.data(), px->data.data(), pg->data.data(),
                                       mean->data(), rstd->data(), nullptr, dg, db, rows, c);
        }
    });
}

template <class T>
TensorT<T> op_softmax(const std::vector<TensorT<T>>& in, const OpAttrs&) {
    const auto op = PrimitiveId::softmax;
    if (in.size() != 1) shape_error(op, "expects 1 input");
    const Shape& sx = in[0].shape();
    if (sx.size() != 2) shape_error(op, "input must be 2-d rows x classes, got " + shape_str(sx));
    const int rows = sx[0], c = sx[1];
    std::vector<T> y(in[0].data().size());
    kernels::softmax_fwd<T>(in[0].data().data(), y.data(), rows, c);
    auto px = in[0].node;
    return make_out<T>(sx, std::move(y), in, [px, rows, c](NodeT<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        kernels::softmax_bwd<T>(self.grad.data(), self.data.data(), px->grad.data(), rows, c);
    });
}

template <class T>
TensorT<T> op_gelu(const std::vector<TensorT<T>>& in, const OpAttrs&) {
    if (in.size() != 1) shape_error(PrimitiveId::gelu, "expects 1 input");
    const std::int64_t n = in[0].numel();
    std::vector<T> y(in[0].data().size());
    kernels::gelu_fwd<T>(in[0].data().data(), y.data(), n);
    auto px = in[0].node;
    return make_out<T>(in[0].shape(), std::move(y), in, [px, n](NodeT<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        kernels::gelu_bwd<T>(self.grad.data(), px->data.data(), px->grad.data(), n);
    });
}

template <class T>
TensorT<T> op_relu(const std::vector<TensorT<T>>& in, const OpAttrs&) {
    if (in.size() != 1) shape_error(PrimitiveId::relu, "expects 1 input");
    const std::int64_t n = in[0].numel();
    std::vector<T> y(in[0].data().size());
    kernels::relu_fwd<T>(in[0].data().data(), y.data(), n);
    auto px = in[0].node;
    return make_out<T>(in[0].shape(), std::move(y), in, [px, n](NodeT<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        kernels::relu_bwd<T>(self.grad.data(), px->data.data(), px->grad.data(), n);
    });
}

template <class T>
TensorT<T> op_add(const std::vector<TensorT<T>>& in, const OpAttrs& at) {
    const auto op = PrimitiveId::add;
    if (in.size() != 2) shape_error(op, "expects 2 inputs");
    if (in[0].shape() != in[1].shape())
        shape_error(op, "shapes differ: " + shape_str(in[0].shape()) + " vs " +
                            shape_str(in[1].shape()));
    const std::int64_t n = in[0].numel();
    const T alpha = static_cast<T>(at.alpha), beta = static_cast<T>(at.beta);
    std::vector<T> y(in[0].data().size());
    kernels::axpby<T>(in[0].data().data(), in[1].data().data(), y.data(), n, alpha, beta);
    auto pa = in[0].node, pb = in[1].node;
    return make_out<T>(in[0].shape(), std::move(y), in, [pa, pb, n, alpha, beta](NodeT<T>& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            kernels::axpy_acc<T>(self.grad.data(), pa->grad.data(), n, alpha);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            kernels::axpy_acc<T>(self.grad.data(), pb->grad.data(), n, beta);
        }
    });
}

template <class T>
TensorT<T> op_hadamard(const std::vector<TensorT<T>>& in, const OpAttrs&) {
    const auto op = PrimitiveId::hadamard;
    if (in.size() != 2) shape_error(op, "expects 2 inputs");
    if (in[0].shape() != in[1].shape())
        shape_error(op, "shapes differ: " + shape_str(in[0].shape()) + " vs " +
                            shape_str(in[1].shape()));
    const std::int64_t n = in[0].numel();
    std::vector<T> y(in[0].data().size());
    kernels::hadamard<T>(in[0].data().data(), in[1].data().data(), y.data(), n);
    auto pa = in[0].node, pb = in[1].node;
    return make_out<T>(in[0].shape(), std::move(y), in, [pa, pb, n](NodeT<T>& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            kernels::mul_acc<T>(self.grad.data(), pb->data.data(), pa->grad.data(), n);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            kernels::mul_acc<T>(self.grad.data(), pa->data.data(), pb->grad.data(), n);
        }
    });
}

template <class T>
TensorT<T> op_mean(const std::vector<TensorT<T>>& in, const OpAttrs&) {
    if (in.size() != 1) shape_error(PrimitiveId::mean, "expects 1 input");
    const std::int64_t n = in[0].numel();
    double acc = 0;  // serial double accumulation: deterministic and accurate
    for (const T v : in[0].data()) acc += static_cast<double>(v);
    std::vector<T> y{static_cast<T>(acc / static_cast<double>(n))};
    auto px = in[0].node;
    return make_out<T>({1}, std::move(y), in, [px, n](NodeT<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const T g = self.grad[0] / static_cast<T>(n);
        for (std::int64_t i = 0; i < n; ++i) px->grad[i] += g;
    });
}

template <class T>
TensorT<T> op_cross_entropy(const std::vector<TensorT<T>>& in, const OpAttrs& at) {
    const auto op = PrimitiveId::cross_entropy_with_ignore;
    if (in.size() != 1) shape_error(op, "expects logits as the single tensor input");
    const ChwDims d = chw_dims(in[0].shape(), op);
    const int hw = d.h * d.w;
    const std::int64_t npix = static_cast<std::int64_t>(d.n) * hw;
    if (static_cast<std::int64_t>(at.labels.size()) != npix)
        shape_error(op, "labels length " + std::to_string(at.labels.size()) +
                            " != pixel count " + std::to_string(npix));
    for (const std::int32_t lab : at.labels)
        if (lab != at.ignore_index && (lab < 0 || lab >= d.c))
            shape_error(op, "invalid label value " + std::to_string(lab) + " (classes " +
                                std::to_string(d.c) + ", ignore " + std::to_string(at.ignore_index) + ")");
    auto labels = std::make_shared<std::vector<std::int32_t>>(at.labels);
    std::int64_t count = 0;
    const T loss = kernels::ce_fwd<T>(in[0].data().data(), labels->data(), d.n, d.c, hw,
                                      at.ignore_index, &count);
    auto px = in[0].node;
    const int ignore = at.ignore_index;
    return make_out<T>({1}, {loss}, in, [px, labels, d, hw, ignore, count](NodeT<T>& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        kernels::ce_bwd<T>(px->data.data(), labels->data(), d.n, d.c, hw, ignore, count,
                           self.grad[0], px->grad.data());
    });
}

}  // namespace detail

// Single entry point for all differentiable computation.
template <class T>
TensorT<T> forward(PrimitiveId op, const std::vector<TensorT<T>>& inputs,
                   const OpAttrs& attrs = {}) {
    for (const auto& t : inputs) {
        if (!t.defined()) detail::shape_error(op, "undefined input tensor");
        detail::check_finite(t.data(), op, "input");
    }
    TensorT<T> out;
    switch (op) {
        case PrimitiveId::matmul: out = detail::op_matmul(inputs, attrs); break;
        case PrimitiveId::conv2d: out = detail::op_conv2d(inputs, attrs); break;
        case PrimitiveId::transposed_conv2d: out = detail::op_tconv2d(inputs, attrs); break;
        case PrimitiveId::bilinear_resize: out = detail::op_bilinear(inputs, attrs); break;
        case PrimitiveId::linear: out = detail::op_linear(inputs, attrs); break;
        case PrimitiveId::layer_norm: out = detail::op_layer_norm(inputs, attrs); break;
        case PrimitiveId::softmax: out = detail::op_softmax(inputs, attrs); break;
        case PrimitiveId::gelu: out = detail::op_gelu(inputs, attrs); break;
        case PrimitiveId::relu: out = detail::op_relu(inputs, attrs); break;
        case PrimitiveId::add: out = detail::op_add(inputs, attrs); break;
        case PrimitiveId::hadamard: out = detail::op_hadamard(inputs, attrs); break;
        case PrimitiveId::mean: out = detail::op_mean(inputs, attrs); break;
        case PrimitiveId::cross_entropy_with_ignore:
            out = detail::op_cross_entropy(inputs, attrs);
            break;
    }
    detail::check_finite(out.data(), op, "output");
    return out;
}

// Typed conveniences; all route through forward() so the closed primitive set
// is the only computation path.
namespace ops {

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b, bool trans_a = false,
                  bool trans_b = false, double alpha = 1.0) {
    OpAttrs at;
    at.trans_a = trans_a;
    at.trans_b = trans_b;
    at.alpha = alpha;
    return forward(PrimitiveId::matmul, std::vector<TensorT<T>>{a, b}, at);
}

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  int stride = 1, int pad = 0) {
    OpAttrs at;
    at.stride = stride;
    at.pad = pad;
    return forward(PrimitiveId::conv2d, std::vector<TensorT<T>>{x, w, bias}, at);
}

template <class T>
TensorT<T> tconv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                   int stride, int pad = 0, int out_pad = 0) {
    OpAttrs at;
    at.stride = stride;
    at.pad = pad;
    at.out_pad = out_pad;
    return forward(PrimitiveId::transposed_conv2d, std::vector<TensorT<T>>{x, w, bias}, at);
}

// Token-major variant: x is (in_h*in_w) x Cin, output Co x OH x OW.
template <class T>
TensorT<T> tconv2d_tokens(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                          int in_h, int in_w, int stride, int pad = 0, int out_pad = 0) {
    OpAttrs at;
    at.stride = stride;
    at.pad = pad;
    at.out_pad = out_pad;
    at.token_major = true;
    at.in_h = in_h;
    at.in_w = in_w;
    return forward(PrimitiveId::transposed_conv2d, std::vector<TensorT<T>>{x, w, bias}, at);
}

template <class T>
TensorT<T> bilinear(const TensorT<T>& x, int out_h, int out_w) {
    OpAttrs at;
    at.out_h = out_h;
    at.out_w = out_w;
    return forward(PrimitiveId::bilinear_resize, std::vector<TensorT<T>>{x}, at);
}

template <class T>
TensorT<T> bilinear_tokens(const TensorT<T>& x, int in_h, int in_w, int out_h, int out_w) {
    OpAttrs at;
    at.token_major = true;
    at.in_h = in_h;
    at.in_w = in_w;
    at.out_h = out_h;
    at.out_w = out_w;
    return forward(PrimitiveId::bilinear_resize, std::vector<TensorT<T>>{x}, at);
}

template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias,
                  bool trans_x = false) {
    OpAttrs at;
    at.trans_x = trans_x;
    return forward(PrimitiveId::linear, std::vector<TensorT<T>>{x, w, bias}, at);
}

template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      double eps = 1e-5) {
    OpAttrs at;
    at.eps = eps;
    return forward(PrimitiveId::layer_norm, std::vector<TensorT<T>>{x, gamma, beta}, at);
}

template <class T>
TensorT<T> softmax(const TensorT<T>& x) {
    return forward(PrimitiveId::softmax, std::vector<TensorT<T>>{x});
}

template <class T>
TensorT<T> gelu(const TensorT<T>& x) {
    return forward(PrimitiveId::gelu, std::vector<TensorT<T>>{x});
}

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
    return forward(PrimitiveId::relu, std::vector<TensorT<T>>{x});
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b, double alpha = 1.0,
               double beta = 1.0) {
    OpAttrs at;
    at.alpha = alpha;
    at.beta = beta;
    return forward(PrimitiveId::add, std::vector<TensorT<T>>{a, b}, at);
}

// Scalar multiple as a degenerate add (the closed set has no dedicated scale op).
template <class T>
TensorT<T> scale(const TensorT<T>& a, double s) {
    return add(a, a, s, 0.0);
}

template <class T>
TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b) {
    return forward(PrimitiveId::hadamard, std::vector<TensorT<T>>{a, b});
}

template <class T>
TensorT<T> mean(const TensorT<T>& x) {
    return forward(PrimitiveId::mean, std::vector<TensorT<T>>{x});
}

template <class T>
TensorT<T> cross_entropy(const TensorT<T>& logits, std::vector<std::int32_t> labels,
                         int ignore_index = 255) {
    OpAttrs at;
    at.labels = std::move(labels);
    at.ignore_index = ignore_index;
    return forward(PrimitiveId::cross_entropy_with_ignore, std::vector<TensorT<T>>{logits}, at);
}

}  // namespace ops
}  // namespace mfm
