#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mfm/ops.hpp"

namespace mfm {

// Max over all differentiable input entries of
// |analytic - central difference| / max(1e-8, |analytic| + |numeric|),
// evaluated in double precision against a fixed random projection of the output.
inline double gradcheck_case(PrimitiveId op, std::vector<TensorT<double>> inputs,
                             const OpAttrs& attrs, Rng& rng, double eps = 1e-4) {
    TensorT<double> out = forward(op, inputs, attrs);
    std::vector<double> proj(out.numel());
    for (auto& p : proj) p = rng.normal();

    for (auto& t : inputs)
        if (t.requires_grad()) t.zero_grad();
    backward(out, proj);
    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs)
        analytic.push_back(t.requires_grad() ? t.grad() : std::vector<double>{});

    const auto eval = [&]() {
        NoGrad ng;
        TensorT<double> y = forward(op, inputs, attrs);
        double s = 0;
        for (size_t i = 0; i < proj.size(); ++i) s += proj[i] * y.data()[i];
        return s;
    };

    double max_err = 0;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        if (!inputs[ti].requires_grad()) continue;
        auto& x = inputs[ti].data();
        for (size_t j = 0; j < x.size(); ++j) {
            const double save = x[j];
            x[j] = save + eps;
            const double fp = eval();
            x[j] = save - eps;
            const double fm = eval();
            x[j] = save;
            const double num = (fp - fm) / (2 * eps);
            const double ana = analytic[ti][j];
            const double err = std::fabs(ana - num) /
                               std::max(1e-8, std::fabs(ana) + std::fabs(num));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

// Canonical seeded case per primitive; structural variants (transposes,
// token-major layouts, strides) are cycled by seed so 10 seeds cover them.
inline double gradcheck_primitive(PrimitiveId op, std::uint64_t seed, double eps = 1e-4) {
    Rng rng(derive_seed(seed, "gradcheck", static_cast<int>(op)));
    using Td = TensorT<double>;
    const auto rnd = [&rng](Shape s, double scale = 1.0) {
        return Td::randn(std::move(s), rng, scale, true);
    };
    OpAttrs at;
    std::vector<Td> in;
    switch (op) {
        case PrimitiveId::matmul: {
            at.trans_a = seed & 1;
            at.trans_b = (seed >> 1) & 1;
            at.alpha = 0.75;
            in = {rnd(at.trans_a ? Shape{5, 4} : Shape{4, 5}),
                  rnd(at.trans_b ? Shape{3, 5} : Shape{5, 3})};
            break;
        }
        case PrimitiveId::conv2d: {
            at.stride = 1 + static_cast<int>(seed % 2);
            at.pad = 1;
            in = {rnd({1, 2, 5, 4}), rnd({3, 2, 3, 3}, 0.5), rnd({3})};
            break;
        }
        case PrimitiveId::transposed_conv2d: {
            at.stride = 2;
            at.out_pad = static_cast<int>((seed >> 1) & 1);
            at.token_major = seed & 1;
            if (at.token_major) {
                at.in_h = 4;
                at.in_w = 3;
                in = {rnd({12, 2})};
            } else {
                in = {rnd({2, 4, 3})};
            }
            in.push_back(rnd({2, 3, 2, 2}, 0.5));
            in.push_back(rnd({3}));
            break;
        }
        case PrimitiveId::bilinear_resize: {
            const bool up = (seed >> 1) & 1;
            at.out_h = up ? 7 : 2;
            at.out_w = up ? 6 : 3;
            at.token_major = seed & 1;
            if (at.token_major) {
                at.in_h = 4;
                at.in_w = 5;
                in = {rnd({20, 3})};
            } else {
                in = {rnd({3, 4, 5})};
            }
            break;
        }
        case PrimitiveId::linear: {
            at.trans_x = seed & 1;
            in = {rnd(at.trans_x ? Shape{5, 6} : Shape{6, 5}), rnd({4, 5}), rnd({4})};
            break;
        }
        case PrimitiveId::layer_norm: {
            in = {rnd({4, 8}), rnd({8}), rnd({8})};
            break;
        }
        case PrimitiveId::softmax: {
            in = {rnd({5, 7}, 2.0)};
            break;
        }
        case PrimitiveId::gelu: {
            in = {rnd({60})};
            break;
        }
        case PrimitiveId::relu: {
            Td x = rnd({60});
            // keep entries away from the kink so central differences are valid
            for (auto& v : x.data()) v += std::copysign(0.05, v);
            in = {x};
            break;
        }
        case PrimitiveId::add: {
            at.alpha = -0.3;
            at.beta = 1.7;
            in = {rnd({7, 8}), rnd({7, 8})};
            break;
        }
        case PrimitiveId::hadamard: {
            in = {rnd({56}), rnd({56})};
            break;
        }
        case PrimitiveId::mean: {
            in = {rnd({6, 9})};
            break;
        }
        case PrimitiveId::cross_entropy_with_ignore: {
            in = {rnd({3, 4, 4}, 2.0)};
            at.labels.resize(16);
            for (auto& lab : at.labels) {
                const auto r = rng.below(4);
                lab = r == 3 ? 255 : static_cast<std::int32_t>(r);
            }
            at.labels[0] = 0;  // at least one scored pixel
            break;
        }
    }
    return gradcheck_case(op, std::move(in), at, rng, eps);
}

// Central-difference check of d(loss)/d(params) for an arbitrary scalar-valued
// composition. make_loss must be a pure function of the current param data.
template <class MakeLoss>
double gradcheck_scalar(std::vector<TensorT<double>> params, MakeLoss&& make_loss,
                        double eps = 1e-4) {
    TensorT<double> loss = make_loss();
    if (loss.numel() != 1) throw ConfigError("gradcheck_scalar: loss must be scalar");
    for (auto& p : params) p.zero_grad();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) analytic.push_back(p.grad());

    double max_err = 0;
    for (size_t ti = 0; ti < params.size(); ++ti) {
        auto& x = params[ti].data();
        for (size_t j = 0; j < x.size(); ++j) {
            const double save = x[j];
            double fp, fm;
            {
                NoGrad ng;
                x[j] = save + eps;
                fp = make_loss().item();
                x[j] = save - eps;
                fm = make_loss().item();
                x[j] = save;
            }
            const double num = (fp - fm) / (2 * eps);
            const double ana = analytic[ti][j];
            const double err = std::fabs(ana - num) /
                               std::max(1e-8, std::fabs(ana) + std::fabs(num));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace mfm
