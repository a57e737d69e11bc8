#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "mfm/checkpoint.hpp"
#include "mfm/gradcheck.hpp"
#include "mfm/segmodel.hpp"

using namespace mfm;

namespace {

void zero_all_params(const nn::ParamMap& pm) {
    for (const auto& kv : pm.items)
        kv.second.node->data.assign(kv.second.node->data.size(), 0.0f);
}

}  // namespace

TEST_CASE("single-scale encode/decode shapes at 64x64") {
    Rng rng(derive_seed(30, "seg-single"));
    SegModelConfig cfg;
    cfg.classes = 19;
    auto m = SegModel::make(cfg, rng);
    CHECK(m.required_divisor() == 8);
    CHECK(m.feature_channels() == std::vector<int>{64});

    Tensor x = Tensor::randn({3, 64, 64}, rng, 1.0f);
    auto feats = m.encode(x);
    REQUIRE(feats.size() == 1);
    CHECK(feats[0].shape() == Shape({64, 8, 8}));
    Tensor logits = m.decode(feats);
    CHECK(logits.shape() == Shape({19, 64, 64}));

    Tensor xb = Tensor::randn({2, 3, 64, 64}, rng, 1.0f);
    auto fb = m.encode(xb);
    CHECK(fb[0].shape() == Shape({2, 64, 8, 8}));
    CHECK(m.decode(fb).shape() == Shape({2, 19, 64, 64}));
}

TEST_CASE("multi-scale encode yields the halving pyramid at 64x64") {
    Rng rng(derive_seed(31, "seg-multi"));
    SegModelConfig cfg;
    cfg.classes = 19;
    cfg.multi_scale = true;
    auto m = SegModel::make(cfg, rng);
    CHECK(m.required_divisor() == 32);
    CHECK(m.feature_channels() == std::vector<int>({16, 32, 48, 64}));

    Tensor x = Tensor::randn({1, 3, 64, 64}, rng, 1.0f);
    auto feats = m.encode(x);
    REQUIRE(feats.size() == 4);
    CHECK(feats[0].shape() == Shape({1, 16, 16, 16}));
    CHECK(feats[1].shape() == Shape({1, 32, 8, 8}));
    CHECK(feats[2].shape() == Shape({1, 48, 4, 4}));
    CHECK(feats[3].shape() == Shape({1, 64, 2, 2}));
    Tensor logits = m.decode(feats);
    CHECK(logits.shape() == Shape({1, 19, 64, 64}));
}

TEST_CASE("indivisible extents are rejected with the required divisor") {
    Rng rng(derive_seed(32, "seg-div"));
    SegModelConfig single;
    auto ms = SegModel::make(single, rng);
    Tensor bad = Tensor::zeros({3, 50, 64});
    CHECK_THROWS_WITH_AS(ms.encode(bad), doctest::Contains("divisible by 8"), ConfigError);

    SegModelConfig multi;
    multi.multi_scale = true;
    auto mm = SegModel::make(multi, rng);
    Tensor bad2 = Tensor::zeros({3, 48, 48});
    CHECK_THROWS_WITH_AS(mm.encode(bad2), doctest::Contains("divisible by 32"), ConfigError);
    CHECK_THROWS_WITH_AS(mm.encode(Tensor::zeros({1, 64, 64})),
                         doctest::Contains("3 input channels"), ConfigError);
}

TEST_CASE("zero-weight encoder gives zero features; zero decoder gives uniform softmax") {
    Rng rng(derive_seed(33, "seg-zero"));
    SegModelConfig cfg;
    cfg.classes = 19;
    auto m = SegModel::make(cfg, rng);
    zero_all_params(m.params());

    Tensor x = Tensor::randn({3, 64, 64}, rng, 1.0f);
    auto feats = m.encode(x);
    for (float v : feats[0].data()) CHECK(v == 0.0f);
    Tensor logits = m.decode(feats);
    for (float v : logits.data()) CHECK(v == 0.0f);

    // All-zero logits: any pixel-major view has uniform rows under softmax.
    Tensor probs = ops::softmax(logits.reshape({64 * 64, 19}));
    for (int p = 0; p < 8; ++p)
        CHECK(probs.data()[p] == doctest::Approx(1.0 / 19).epsilon(1e-6));

    // Uniform logits with 19 classes: loss is ln 19 regardless of labels.
    std::vector<std::int32_t> labels(64 * 64);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 19);
    Tensor loss = supervised_loss(logits, labels);
    CHECK(loss.item() == doctest::Approx(std::log(19.0)).epsilon(1e-4));
    CHECK(loss.item() == doctest::Approx(2.9444).epsilon(1e-3));
}

TEST_CASE("high-margin correct logits drive the loss to zero") {
    std::vector<float> v(3 * 2 * 2, 0.0f);
    std::vector<std::int32_t> labels = {0, 1, 2, 0};
    for (int p = 0; p < 4; ++p) v[labels[p] * 4 + p] = 60.0f;
    Tensor logits = Tensor::leaf({3, 2, 2}, v);
    CHECK(supervised_loss(logits, labels).item() < 1e-6);
}

TEST_CASE("hand-set 2x2 three-class loss matches an independent scalar oracle") {
    // logits[c][p], pixels ordered row-major.
    std::vector<float> v = {
        0.5f,  -1.0f, 2.0f, 0.0f,   // class 0
        1.5f,  0.3f,  -0.7f, 0.2f,  // class 1
        -0.2f, 0.8f,  0.1f, 1.0f,   // class 2
    };
    std::vector<std::int32_t> labels = {2, 0, 255, 1};
    Tensor logits = Tensor::leaf({3, 2, 2}, v);

    double want = 0.0;
    int count = 0;
    for (int p = 0; p < 4; ++p) {
        if (labels[p] == 255) continue;
        double z0 = v[p], z1 = v[4 + p], z2 = v[8 + p];
        double m = std::max({z0, z1, z2});
        double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m) + std::exp(z2 - m));
        double zl = labels[p] == 0 ? z0 : (labels[p] == 1 ? z1 : z2);
        want += lse - zl;
        ++count;
    }
    want /= count;
    CHECK(supervised_loss(logits, labels).item() == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("loss is permutation-invariant over pixels") {
    Rng rng(derive_seed(34, "seg-perm"));
    const int c = 4, hw = 12;
    Tensor logits = Tensor::randn({c, 3, 4}, rng, 1.5f);
    std::vector<std::int32_t> labels(hw);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.below(5));  // 4 == invalid? no: c=4
    for (auto& l : labels)
        if (l == 4) l = 255;

    std::vector<int> perm(hw);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = hw - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);

    std::vector<float> pv(c * hw);
    std::vector<std::int32_t> plabels(hw);
    for (int p = 0; p < hw; ++p) {
        plabels[perm[p]] = labels[p];
        for (int ch = 0; ch < c; ++ch) pv[ch * hw + perm[p]] = logits.data()[ch * hw + p];
    }
    Tensor permuted = Tensor::leaf({c, 3, 4}, pv);
    CHECK(supervised_loss(permuted, plabels).item() ==
          doctest::Approx(supervised_loss(logits, labels).item()).epsilon(1e-6));
}

TEST_CASE("ignored pixels contribute nothing: loss and gradient") {
    Rng rng(derive_seed(35, "seg-ignore"));
    Tensor logits = Tensor::randn({3, 2, 2}, rng, 1.0f, true);
    std::vector<std::int32_t> labels = {0, 255, 1, 2};
    Tensor loss = supervised_loss(logits, labels);

    // Perturbing the ignored pixel's logits leaves the loss unchanged.
    std::vector<float> v2 = logits.data();
    v2[0 * 4 + 1] += 100.0f;
    v2[1 * 4 + 1] -= 7.0f;
    v2[2 * 4 + 1] *= -3.0f;
    Tensor logits2 = Tensor::leaf({3, 2, 2}, v2);
    CHECK(supervised_loss(logits2, labels).item() == loss.item());

    backward(loss);
    for (int ch = 0; ch < 3; ++ch) CHECK(logits.grad()[ch * 4 + 1] == 0.0f);

    // All pixels ignored: loss exactly zero, gradient exactly zero.
    std::vector<std::int32_t> all_ignored = {255, 255, 255, 255};
    Tensor logits3 = Tensor::randn({3, 2, 2}, rng, 1.0f, true);
    Tensor zloss = supervised_loss(logits3, all_ignored);
    CHECK(zloss.item() == 0.0f);
    backward(zloss);
    for (float g : logits3.grad()) CHECK(g == 0.0f);
}

TEST_CASE("decode accepts externally produced features and rejects channel mismatch") {
    Rng rng(derive_seed(36, "seg-ext"));
    SegModelConfig cfg;
    cfg.classes = 5;
    auto m = SegModel::make(cfg, rng);
    Tensor external = Tensor::randn({64, 8, 8}, rng, 1.0f);
    CHECK(m.decode({external}).shape() == Shape({5, 64, 64}));
    Tensor wrong = Tensor::randn({32, 8, 8}, rng, 1.0f);
    CHECK_THROWS_WITH_AS(m.decode({wrong}), doctest::Contains("64"), ConfigError);

    SegModelConfig mcfg;
    mcfg.multi_scale = true;
    auto mm = SegModel::make(mcfg, rng);
    std::vector<Tensor> pyr = {
        Tensor::randn({16, 16, 16}, rng, 1.0f), Tensor::randn({32, 8, 8}, rng, 1.0f),
        Tensor::randn({48, 4, 4}, rng, 1.0f), Tensor::randn({64, 2, 2}, rng, 1.0f)};
    CHECK(mm.decode(pyr).shape() == Shape({19, 64, 64}));
    auto bad = pyr;
    bad[2] = Tensor::randn({40, 4, 4}, rng, 1.0f);
    CHECK_THROWS_WITH_AS(mm.decode(bad), doctest::Contains("stage 3"), ConfigError);
    CHECK_THROWS_AS(mm.decode({pyr[0], pyr[1]}), ConfigError);
}

TEST_CASE("label map extent mismatch is rejected") {
    Tensor logits = Tensor::zeros({3, 4, 4});
    LabelMap lm;
    lm.h = 2;
    lm.w = 4;
    lm.idx.assign(8, 0);
    CHECK_THROWS_WITH_AS(supervised_loss(logits, lm), doctest::Contains("2x4"), ConfigError);
    CHECK(first_invalid_label({0, 1, 255, 2}, 3) == -1);
    CHECK(first_invalid_label({0, 250, 1}, 19) == 250);
    CHECK(first_invalid_label({0, 19, 1}, 19) == 19);
}

TEST_CASE("tiny encode-decode-loss composition passes double-precision gradcheck") {
    using DT = TensorT<double>;
    Rng rng(derive_seed(37, "seg-gradcheck"));
    auto mk = [&](Shape s, double stddev, bool rg) { return DT::randn(s, rng, stddev, rg); };

    DT x = mk({1, 3, 16, 16}, 1.0, true);
    DT w1 = mk({2, 3, 3, 3}, 0.4, true), b1 = mk({2}, 0.1, true);
    DT w2 = mk({2, 2, 3, 3}, 0.4, true), b2 = mk({2}, 0.1, true);
    DT w3 = mk({3, 2, 3, 3}, 0.4, true), b3 = mk({3}, 0.1, true);
    DT wc = mk({3, 3, 1, 1}, 0.5, true), bc = mk({3}, 0.1, true);

    std::vector<std::int32_t> labels(16 * 16);
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = (i % 7 == 0) ? 255 : static_cast<std::int32_t>(i % 3);

    auto make_loss = [&]() {
        DT f = ops::relu(ops::conv2d(x, w1, b1, 2, 1));
        f = ops::relu(ops::conv2d(f, w2, b2, 2, 1));
        f = ops::relu(ops::conv2d(f, w3, b3, 2, 1));
        DT logits = ops::bilinear(ops::conv2d(f, wc, bc, 1, 0), 16, 16);
        return ops::cross_entropy(logits, labels, 255);
    };

    double err = gradcheck_scalar({x, w1, b1, w2, b2, w3, b3, wc, bc}, make_loss, 1e-4);
    INFO("max rel err ", err);
    CHECK(err <= 1e-4);
}

TEST_CASE("checkpoint round-trip reproduces model outputs bit-exactly") {
    Rng rng1(derive_seed(38, "seg-ckpt-a"));
    Rng rng2(derive_seed(39, "seg-ckpt-b"));
    SegModelConfig cfg;
    cfg.classes = 5;
    cfg.multi_scale = true;
    auto m1 = SegModel::make(cfg, rng1);
    auto m2 = SegModel::make(cfg, rng2);

    auto dir = std::filesystem::temp_directory_path() / "mfm_test_seg_ckpt";
    std::filesystem::remove_all(dir);
    ckpt::save(dir.string(), m1.params());
    ckpt::assign(m2.params(), ckpt::load(dir.string()));

    NoGrad ng;
    Tensor x = Tensor::randn({1, 3, 64, 64}, rng1, 1.0f);
    Tensor y1 = m1.decode(m1.encode(x));
    Tensor y2 = m2.decode(m2.encode(x));
    CHECK(std::memcmp(y1.data().data(), y2.data().data(), sizeof(float) * y1.numel()) == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("inference under no-grad records no graph") {
    Rng rng(derive_seed(40, "seg-nograd"));
    SegModelConfig cfg;
    auto m = SegModel::make(cfg, rng);
    NoGrad ng;
    Tensor x = Tensor::randn({3, 64, 64}, rng, 1.0f);
    Tensor logits = m.decode(m.encode(x));
    CHECK(logits.node->is_leaf());
    CHECK_FALSE(logits.requires_grad());
}
