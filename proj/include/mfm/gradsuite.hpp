#pragma once
// Gradient verification suite shared by the CLI `gradcheck` verb and the
// acceptance harness. Two layers:
//
//   * a per-primitive sweep: every op in the closed set is checked against
//     central differences in double precision over several seeded structural
//     variants (strides, transposes, odd extents, ...);
//
//   * one end-to-end composition: a miniature masked-reconstruction training
//     loss -- convolutional stem, token embedding, mask fusion with a learned
//     token, a pre-norm attention/MLP block, transposed-conv projection,
//     bilinear resize, pixel classification plus a masked MSE term -- built
//     from raw double-precision primitives so that a single scalar's gradient
//     flows through all thirteen ops at once.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mfm/gradcheck.hpp"
#include "mfm/ops.hpp"
#include "mfm/rng.hpp"

namespace mfm {

struct GradSuiteResult {
    struct Row {
        PrimitiveId op;
        int cases = 0;
        double max_err = 0.0;
    };
    std::vector<Row> primitives;
    double primitive_tol = 1e-4;
    double composition_err = 0.0;
    double composition_tol = 1e-3;
    double seconds = 0.0;

    bool primitives_ok() const {
        for (const auto& r : primitives)
            if (!(r.max_err <= primitive_tol)) return false;
        return !primitives.empty();
    }
    bool composition_ok() const { return composition_err <= composition_tol; }
    bool ok() const { return primitives_ok() && composition_ok(); }
};

namespace gradsuite_detail {

// End-to-end scalar loss in double precision. All learnable pieces are leaf
// parameters with requires_grad; geometry (mask pattern, labels, positional
// table) is fixed by the seed. Central differences then probe every element
// of every parameter, so sizes are deliberately tiny.
inline double composition_check(std::uint64_t seed) {
    using T = TensorT<double>;
    Rng rng(derive_seed(seed, "gradsuite-composition"));

    const int img = 16;     // input image extent
    const int feat = 8;     // stem output extent (stride 2)
    const int cin = 3, cf = 4, ce = 16, cm = 32, cls = 3;  // token width C' = 16
    const int tokens = feat * feat;

    auto param = [&](Shape s, double scale) {
        std::vector<double> v(numel(s));
        for (auto& x : v) x = scale * rng.normal();
        return T::leaf(std::move(s), std::move(v), /*requires_grad=*/true);
    };

    // Learnable pieces.
    T x = param({cin, img, img}, 0.5);            // the input image itself
    T w0 = param({cf, cin, 3, 3}, 0.4), b0 = param({cf}, 0.1);
    T we = param({ce, cf}, 0.4), be = param({ce}, 0.1);
    T mask_token = param({1, ce}, 0.4);
    T wq = param({ce, ce}, 0.4), bq = param({ce}, 0.1);
    T wk = param({ce, ce}, 0.4), bk = param({ce}, 0.1);
    T wv = param({ce, ce}, 0.4), bv = param({ce}, 0.1);
    T wo = param({ce, ce}, 0.4), bo = param({ce}, 0.1);
    T g1 = param({ce}, 0.2), h1 = param({ce}, 0.1);
    T g2 = param({ce}, 0.2), h2 = param({ce}, 0.1);
    T wm1 = param({cm, ce}, 0.4), bm1 = param({cm}, 0.1);
    T wm2 = param({ce, cm}, 0.4), bm2 = param({ce}, 0.1);
    T wt = param({ce, cls, 2, 2}, 0.4), bt = param({cls}, 0.1);

    std::vector<T> params = {x,  w0, b0, we, be, mask_token, wq, bq, wk, bk, wv, bv,
                             wo, bo, g1, h1, g2, h2,         wm1, bm1, wm2, bm2, wt, bt};

    // Fixed geometry.
    std::vector<double> keep_v(tokens), drop_v(tokens);
    for (int i = 0; i < tokens; ++i) {
        const bool keep = rng.uniform() < 0.6;
        keep_v[i] = keep ? 1.0 : 0.0;
        drop_v[i] = keep ? 0.0 : 1.0;
    }
    T keep_col = T::leaf({tokens, 1}, std::move(keep_v));
    T drop_col = T::leaf({tokens, 1}, std::move(drop_v));
    std::vector<double> ones_r(ce, 1.0), ones_c(tokens, 1.0);
    T ones_row = T::leaf({1, ce}, std::move(ones_r));
    T ones_col = T::leaf({tokens, 1}, std::move(ones_c));
    std::vector<double> pos_v(static_cast<std::size_t>(tokens) * ce);
    for (auto& v : pos_v) v = 0.3 * rng.normal();
    T pos = T::leaf({tokens, ce}, std::move(pos_v));
    std::vector<std::int32_t> labels(static_cast<std::size_t>(img) * img);
    for (auto& l : labels)
        l = rng.uniform() < 0.15 ? 255 : static_cast<std::int32_t>(rng.below(cls));
    std::vector<double> pixmask_v(static_cast<std::size_t>(cls) * img * img);
    for (std::size_t i = 0; i < pixmask_v.size(); ++i)
        pixmask_v[i] = (i % 3 == 0) ? 1.0 : 0.0;
    T pixmask = T::leaf({cls, img, img}, std::move(pixmask_v));
    std::vector<double> target_v(static_cast<std::size_t>(cls) * img * img);
    for (auto& v : target_v) v = 0.4 * rng.normal();
    T target = T::leaf({cls, img, img}, std::move(target_v));

    auto make_loss = [&]() {
        // Stem: conv -> relu, then rows-of-channels view for token embedding.
        T f = ops::relu(ops::conv2d(x, w0, b0, /*stride=*/2, /*pad=*/1));
        T tok = ops::linear(f.reshape({cf, tokens}), we, be, /*trans_x=*/true);
        // Mask fusion: kept tokens pass through, dropped ones become the
        // learned token (broadcasts built from matmul against ones).
        T kept = ops::hadamard(tok, ops::matmul(keep_col, ones_row));
        T filled = ops::hadamard(ops::matmul(ones_col, mask_token),
                                 ops::matmul(drop_col, ones_row));
        T fused = ops::add(ops::add(kept, filled), pos);
        // Pre-norm attention + MLP block (single head).
        T n1 = ops::layer_norm(fused, g1, h1);
        T q = ops::linear(n1, wq, bq);
        T k = ops::linear(n1, wk, bk);
        T v = ops::linear(n1, wv, bv);
        T att = ops::softmax(ops::matmul(q, k, false, true, 1.0 / std::sqrt(double(ce))));
        T a = ops::add(fused, ops::linear(ops::matmul(att, v), wo, bo));
        T n2 = ops::layer_norm(a, g2, h2);
        T m = ops::linear(ops::gelu(ops::linear(n2, wm1, bm1)), wm2, bm2);
        T trunk = ops::add(a, m);
        // Projection back to pixels: transposed conv, then resize to image.
        T up = ops::tconv2d_tokens(trunk, wt, bt, feat, feat, /*stride=*/2);
        T logits = ops::bilinear(up, img, img);
        T ce_loss = ops::cross_entropy(logits, labels, 255);
        T diff = ops::add(logits, target, 1.0, -1.0);
        T mse = ops::mean(ops::hadamard(ops::hadamard(diff, diff), pixmask));
        return ops::add(ce_loss, mse, 1.0, 0.5);
    };

    return gradcheck_scalar(params, make_loss, 1e-4);
}

}  // namespace gradsuite_detail

inline GradSuiteResult run_gradient_suite(int cases_per_primitive = 10,
                                          std::uint64_t seed = 7) {
    const auto t0 = std::chrono::steady_clock::now();
    GradSuiteResult res;
    for (PrimitiveId op : kAllPrimitives) {
        GradSuiteResult::Row row;
        row.op = op;
        row.cases = cases_per_primitive;
        for (int c = 0; c < cases_per_primitive; ++c)
            row.max_err = std::max(
                row.max_err, gradcheck_primitive(op, derive_seed(seed, primitive_name(op), c)));
        res.primitives.push_back(row);
    }
    res.composition_err = gradsuite_detail::composition_check(seed);
    res.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace mfm
