#pragma once

// Small neural-net building blocks on top of the autodiff tensor: a named
// parameter registry plus Linear / Conv2d / TConv2d / LayerNorm layers with
// their standard initializers.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mfm/ops.hpp"
#include "mfm/rng.hpp"
#include "mfm/tensor.hpp"

namespace mfm::nn {

// Ordered name -> tensor registry. Order is stable so optimizer slots and
// checkpoint offsets line up deterministically across runs.
struct ParamMap {
    std::vector<std::pair<std::string, Tensor>> items;

    void add(const std::string& name, const Tensor& t) {
        if (!t.defined()) throw ConfigError("ParamMap: undefined tensor for '" + name + "'");
        for (const auto& kv : items)
            if (kv.first == name) throw ConfigError("ParamMap: duplicate name '" + name + "'");
        items.emplace_back(name, t);
    }

    bool has(const std::string& name) const {
        for (const auto& kv : items)
            if (kv.first == name) return true;
        return false;
    }

    const Tensor& find(const std::string& name) const {
        for (const auto& kv : items)
            if (kv.first == name) return kv.second;
        throw ConfigError("ParamMap: no tensor named '" + name + "'");
    }

    // Append every entry of `other` under `prefix`.
    void extend(const std::string& prefix, const ParamMap& other) {
        for (const auto& kv : other.items) add(prefix + kv.first, kv.second);
    }

    std::size_t tensor_count() const { return items.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& kv : items) n += static_cast<std::size_t>(kv.second.numel());
        return n;
    }

    // Clears gradient buffers entirely; backward re-creates them only for
    // parameters reached by the loss, so untouched parameters stay skippable
    // by the optimizer (no spurious decay of unused modules).
    void zero_grads() const {
        for (const auto& kv : items) kv.second.node->grad.clear();
    }
};

inline Tensor normal_param(const Shape& shape, Rng& rng, double std_dev) {
    Tensor t = Tensor::randn(shape, rng, static_cast<float>(std_dev));
    t.node->requires_grad = true;
    return t;
}

inline Tensor zeros_param(const Shape& shape) {
    Tensor t = Tensor::zeros(shape);
    t.node->requires_grad = true;
    return t;
}

inline Tensor ones_param(const Shape& shape) {
    Tensor t = Tensor::full(shape, 1.0f);
    t.node->requires_grad = true;
    return t;
}

// Dense layer: y = x W^T + b with W stored {out, in}.
struct Linear {
    Tensor w;  // {out, in}
    Tensor b;  // {out}

    // Truncation-free normal init, the usual transformer recipe when
    // std_dev = 0.02; biases start at zero.
    static Linear make(int out, int in, Rng& rng, double std_dev = 0.02) {
        Linear l;
        l.w = normal_param({out, in}, rng, std_dev);
        l.b = zeros_param({out});
        return l;
    }

    // Identity map (requires out == in); used where an embed map must start
    // as a no-op.
    static Linear make_identity(int n) {
        Linear l;
        l.w = zeros_param({n, n});
        for (int i = 0; i < n; ++i) l.w.data()[static_cast<std::size_t>(i) * n + i] = 1.0f;
        l.b = zeros_param({n});
        return l;
    }

    // trans_x = false: x is {rows, in}. trans_x = true: x is read transposed,
    // i.e. the raw buffer is {in, rows} (channel-major feature maps become
    // token-major without a copy).
    Tensor forward(const Tensor& x, bool trans_x = false) const {
        return ops::linear(x, w, b, trans_x);
    }

    void collect(ParamMap& pm, const std::string& prefix) const {
        pm.add(prefix + ".w", w);
        pm.add(prefix + ".b", b);
    }
};

// 2-D convolution, weights {co, ci, kh, kw}.
struct Conv2d {
    Tensor w;
    Tensor b;
    int stride = 1;
    int pad = 0;

    // He (fan-in) normal init for relu-style stacks; biases zero.
    static Conv2d make(int co, int ci, int kh, int kw, int stride, int pad, Rng& rng) {
        Conv2d c;
        const double fan_in = static_cast<double>(ci) * kh * kw;
        c.w = normal_param({co, ci, kh, kw}, rng, std::sqrt(2.0 / fan_in));
        c.b = zeros_param({co});
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    Tensor forward(const Tensor& x) const { return ops::conv2d(x, w, b, stride, pad); }

    void collect(ParamMap& pm, const std::string& prefix) const {
        pm.add(prefix + ".w", w);
        pm.add(prefix + ".b", b);
    }
};

// 2-D transposed convolution, weights {ci, co, kh, kw}.
struct TConv2d {
    Tensor w;
    Tensor b;
    int stride = 1;
    int pad = 0;
    int out_pad = 0;

    static TConv2d make(int ci, int co, int kh, int kw, int stride, int pad, int out_pad,
                        Rng& rng) {
        TConv2d c;
        const double fan_in = static_cast<double>(ci) * kh * kw;
        c.w = normal_param({ci, co, kh, kw}, rng, std::sqrt(2.0 / fan_in));
        c.b = zeros_param({co});
        c.stride = stride;
        c.pad = pad;
        c.out_pad = out_pad;
        return c;
    }

    // Channel-major input {n, ci, h, w} or {ci, h, w}.
    Tensor forward(const Tensor& x) const {
        return ops::tconv2d(x, w, b, stride, pad, out_pad);
    }

    // Token-major input {tokens, ci} (or {n, tokens, ci}) laid out on an
    // in_h x in_w grid; output is channel-major.
    Tensor forward_tokens(const Tensor& x, int in_h, int in_w) const {
        return ops::tconv2d_tokens(x, w, b, in_h, in_w, stride, pad, out_pad);
    }

    void collect(ParamMap& pm, const std::string& prefix) const {
        pm.add(prefix + ".w", w);
        pm.add(prefix + ".b", b);
    }
};

// Layer normalization over the last dimension.
struct LayerNorm {
    Tensor gamma;
    Tensor beta;
    double eps = 1e-5;

    static LayerNorm make(int c, double eps = 1e-5) {
        LayerNorm ln;
        ln.gamma = ones_param({c});
        ln.beta = zeros_param({c});
        ln.eps = eps;
        return ln;
    }

    Tensor forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta, eps); }

    void collect(ParamMap& pm, const std::string& prefix) const {
        pm.add(prefix + ".gamma", gamma);
        pm.add(prefix + ".beta", beta);
    }
};

}  // namespace mfm::nn
