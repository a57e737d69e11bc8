#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <string>

#include "mfm/gradcheck.hpp"
#include "mfm/ops.hpp"

using mfm::backward;
using mfm::OpAttrs;
using mfm::PrimitiveId;
using mfm::Rng;
using Td = mfm::TensorT<double>;
using Tf = mfm::TensorT<float>;

TEST_CASE("every primitive passes gradcheck at 1e-4 on 10 seeded cases") {
    for (const PrimitiveId op : mfm::kAllPrimitives) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const double err = mfm::gradcheck_primitive(op, seed);
            INFO(mfm::primitive_name(op) << " seed " << seed << " err " << err);
            CHECK(err <= 1e-4);
        }
    }
}

TEST_CASE("mean backward distributes the seed uniformly") {
    Rng rng(mfm::derive_seed(1, "mean-bwd"));
    auto x = Td::randn({3, 4}, rng, 1.0, true);
    auto y = mfm::ops::mean(x);
    backward(y);  // seed 1
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0 / 12).epsilon(1e-15));
}

TEST_CASE("hadamard of a tensor with itself backpropagates 2x") {
    Rng rng(mfm::derive_seed(2, "hadamard-bwd"));
    auto x = Td::randn({7}, rng, 1.0, true);
    auto y = mfm::ops::hadamard(x, x);
    backward(y, std::vector<double>(7, 1.0));
    for (int i = 0; i < 7; ++i)
        CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-15));
}

TEST_CASE("cross entropy gradient equals softmax minus onehot on a 3-class pixel") {
    Rng rng(mfm::derive_seed(3, "ce-bwd"));
    auto logits = Td::randn({3, 1, 1}, rng, 2.0, true);
    auto loss = mfm::ops::cross_entropy(logits, {1});
    backward(loss);
    // analytic reference
    double m = std::max({logits.data()[0], logits.data()[1], logits.data()[2]});
    double s = 0;
    for (double z : logits.data()) s += std::exp(z - m);
    for (int j = 0; j < 3; ++j) {
        const double soft = std::exp(logits.data()[j] - m) / s;
        const double want = soft - (j == 1 ? 1.0 : 0.0);
        CHECK(logits.grad()[j] == doctest::Approx(want).epsilon(1e-12));
    }
    // finite differences at eps 1e-3 in double precision
    const double eps = 1e-3;
    for (int j = 0; j < 3; ++j) {
        mfm::NoGrad ng;
        const double save = logits.data()[j];
        logits.data()[j] = save + eps;
        const double fp = mfm::ops::cross_entropy(logits, {1}).item();
        logits.data()[j] = save - eps;
        const double fm = mfm::ops::cross_entropy(logits, {1}).item();
        logits.data()[j] = save;
        CHECK(logits.grad()[j] == doctest::Approx((fp - fm) / (2 * eps)).epsilon(1e-6));
    }
}

TEST_CASE("repeated backward with cleared grads reproduces identical values") {
    Rng rng(mfm::derive_seed(4, "repeat"));
    auto x = Td::randn({5, 3}, rng, 1.0, true);
    auto w = Td::randn({4, 3}, rng, 0.5, true);
    auto b = Td::randn({4}, rng, 0.1, true);
    auto loss = mfm::ops::mean(mfm::ops::gelu(mfm::ops::linear(x, w, b)));
    backward(loss);
    const auto gx = x.grad();
    const auto gw = w.grad();
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
    backward(loss);
    CHECK(std::memcmp(gx.data(), x.grad().data(), gx.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(gw.data(), w.grad().data(), gw.size() * sizeof(double)) == 0);
}

TEST_CASE("backward outside a recorded composition is rejected") {
    auto x = Td::zeros({3}, true);
    CHECK_THROWS_AS(backward(x), mfm::ConfigError);
    // NoGrad forwards record nothing, so their outputs are leaves too.
    mfm::NoGrad ng;
    auto y = mfm::ops::gelu(x);
    CHECK_THROWS_AS(backward(y), mfm::ConfigError);
}

TEST_CASE("backward seed shape must match the output") {
    auto x = Td::zeros({3}, true);
    auto y = mfm::ops::gelu(x);
    CHECK_THROWS_AS(backward(y, std::vector<double>(4, 1.0)), mfm::ConfigError);
}

TEST_CASE("shape mismatches are rejected with the primitive named") {
    auto a = Tf::zeros({2, 3});
    auto b = Tf::zeros({4, 5});
    try {
        mfm::ops::matmul(a, b);
        FAIL("expected throw");
    } catch (const mfm::ConfigError& e) {
        CHECK(std::string(e.what()).find("matmul") != std::string::npos);
        CHECK(std::string(e.what()).find("2x3") != std::string::npos);
    }
    try {
        mfm::ops::hadamard(a, b);
        FAIL("expected throw");
    } catch (const mfm::ConfigError& e) {
        CHECK(std::string(e.what()).find("hadamard") != std::string::npos);
    }
}

TEST_CASE("non-finite inputs are rejected") {
    auto a = Tf::full({4}, 1.0f);
    a.data()[2] = std::nanf("");
    CHECK_THROWS_AS(mfm::ops::relu(a), mfm::NumericError);
    auto b = Tf::full({4}, std::numeric_limits<float>::infinity());
    CHECK_THROWS_AS(mfm::ops::gelu(b), mfm::NumericError);
}

TEST_CASE("invalid cross-entropy labels are rejected naming the value") {
    auto logits = Tf::zeros({19, 1, 2});
    try {
        mfm::ops::cross_entropy(logits, {0, 250});
        FAIL("expected throw");
    } catch (const mfm::ConfigError& e) {
        CHECK(std::string(e.what()).find("250") != std::string::npos);
    }
}

TEST_CASE("reshape is a zero-copy view sharing gradients") {
    Rng rng(mfm::derive_seed(5, "reshape"));
    auto x = Td::randn({2, 3}, rng, 1.0, true);
    auto v = x.reshape({3, 2});
    CHECK(v.node == x.node);
    auto y = mfm::ops::mean(v);
    backward(y);
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0 / 6).epsilon(1e-15));
    CHECK_THROWS_AS(x.reshape({7}), mfm::ConfigError);
}

TEST_CASE("scale via degenerate add backpropagates the factor") {
    auto x = Td::full({3}, 2.0, true);
    auto y = mfm::ops::scale(x, 2.5);
    for (double v : y.data()) CHECK(v == 5.0);
    backward(y, std::vector<double>(3, 1.0));
    for (double g : x.grad()) CHECK(g == 2.5);
}

TEST_CASE("detach cuts the recorded composition") {
    auto x = Td::full({3}, 1.5, true);
    auto z = x.detach();
    CHECK_FALSE(z.requires_grad());
    auto y = mfm::ops::mean(z);
    CHECK(y.node->is_leaf());  // nothing recorded downstream of a constant
}

TEST_CASE("bilinear identity resize is exact and differentiable") {
    Rng rng(mfm::derive_seed(6, "bilerp-id"));
    auto x = Tf::randn({2, 5, 4}, rng, 1.0f, true);
    auto y = mfm::ops::bilinear(x, 5, 4);
    CHECK(std::memcmp(x.data().data(), y.data().data(), x.data().size() * sizeof(float)) == 0);
    backward(mfm::ops::mean(y));
    for (float g : x.grad()) CHECK(g == doctest::Approx(1.0 / 40).epsilon(1e-6));
}

TEST_CASE("forward and backward are bit-identical with and without OpenMP dispatch") {
    const auto run = [](bool parallel) {
        mfm::kernels::set_parallel(parallel);
        Rng rng(mfm::derive_seed(7, "dispatch"));
        auto x = Tf::randn({1, 3, 8, 8}, rng, 1.0f, false);
        auto w1 = Tf::randn({8, 3, 3, 3}, rng, 0.2f, true);
        auto b1 = Tf::zeros({8}, true);
        auto w2 = Tf::randn({4, 8, 1, 1}, rng, 0.2f, true);
        auto b2 = Tf::zeros({4}, true);
        auto h = mfm::ops::relu(mfm::ops::conv2d(x, w1, b1, 2, 1));
        auto logits = mfm::ops::conv2d(h, w2, b2);
        std::vector<std::int32_t> labels(16);
        for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int32_t>(i % 4);
        auto loss = mfm::ops::cross_entropy(logits, labels);
        backward(loss);
        std::vector<float> out{loss.item()};
        const auto append = [&out](const std::vector<float>& v) {
            out.insert(out.end(), v.begin(), v.end());
        };
        append(w1.grad());
        append(b1.grad());
        append(w2.grad());
        append(b2.grad());
        mfm::kernels::set_parallel(true);
        return out;
    };
    const auto serial = run(false);
    const auto parallel = run(true);
    REQUIRE(serial.size() == parallel.size());
    CHECK(std::memcmp(serial.data(), parallel.data(), serial.size() * sizeof(float)) == 0);
}
