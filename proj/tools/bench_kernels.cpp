// Times the serial reference kernels against their OpenMP variants on
// training-shaped workloads and verifies the outputs are bit-identical
// (parallel loops write disjoint outputs and keep reductions in serial
// order, so the two variants must agree exactly).
//
//   bench_kernels [--reps N]   best-of-N timing per kernel (default 5)

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mfm/kernels.hpp"
#include "mfm/rng.hpp"

namespace {

using mfm::Rng;

std::vector<float> randn(Rng& rng, std::int64_t n, double scale = 1.0) {
    std::vector<float> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = static_cast<float>(scale * rng.normal());
    return v;
}

template <class F>
double best_seconds(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const double s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (s < best) best = s;
    }
    return best;
}

bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void row(const char* kernel, const std::string& workload, double ts, double tp, bool match) {
    std::printf("%-20s %-34s %9.2f %9.2f %7.2fx   %s\n", kernel, workload.c_str(), ts * 1e3,
                tp * 1e3, ts / tp, match ? "exact" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial vs OpenMP kernel comparison"};
    int reps = 5;
    app.add_option("--reps", reps, "best-of-N repetitions")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    namespace ker = mfm::kernels;
    Rng rng(12345);
    bool all_match = true;
    auto note = [&](bool m) { all_match = all_match && m; };

    std::printf("threads available to OpenMP: %d\n\n", ker::thread_count());
    std::printf("%-20s %-34s %9s %9s %8s   %s\n", "kernel", "workload", "serial ms",
                "openmp ms", "speedup", "check");

    {  // matmul
        const int m = 256, n = 256, k = 256;
        auto a = randn(rng, m * k), b = randn(rng, k * n);
        std::vector<float> cs(m * n, 0.f), cp(m * n, 0.f);
        const double ts = best_seconds(reps, [&] {
            ker::serial::matmul<float>(a.data(), b.data(), cs.data(), m, n, k, false, false,
                                       1.f, 0.f);
        });
        const double tp = best_seconds(reps, [&] {
            ker::par::matmul<float>(a.data(), b.data(), cp.data(), m, n, k, false, false, 1.f,
                                    0.f);
        });
        note(bits_equal(cs, cp));
        row("matmul", "256x256 * 256x256", ts, tp, bits_equal(cs, cp));
    }

    {  // conv2d forward
        const int n = 4, ci = 32, h = 64, w = 64, co = 64, kh = 3, kw = 3, s = 1, p = 1;
        const int oh = h, ow = w;
        auto x = randn(rng, int64_t(n) * ci * h * w);
        auto wt = randn(rng, int64_t(co) * ci * kh * kw, 0.1);
        auto bias = randn(rng, co, 0.1);
        std::vector<float> ys(std::size_t(n) * co * oh * ow), yp(ys.size());
        const double ts = best_seconds(reps, [&] {
            ker::serial::conv2d_fwd<float>(x.data(), wt.data(), bias.data(), ys.data(), n, ci,
                                           h, w, co, kh, kw, s, p, oh, ow);
        });
        const double tp = best_seconds(reps, [&] {
            ker::par::conv2d_fwd<float>(x.data(), wt.data(), bias.data(), yp.data(), n, ci, h,
                                        w, co, kh, kw, s, p, oh, ow);
        });
        note(bits_equal(ys, yp));
        row("conv2d_fwd", "4x32x64x64 -> 64ch, k3 s1 p1", ts, tp, bits_equal(ys, yp));
    }

    {  // conv2d parameter gradients
        const int n = 4, ci = 32, h = 64, w = 64, co = 64, kh = 3, kw = 3, s = 1, p = 1;
        const int oh = h, ow = w;
        auto x = randn(rng, int64_t(n) * ci * h * w);
        auto dy = randn(rng, int64_t(n) * co * oh * ow);
        std::vector<float> dws(std::size_t(co) * ci * kh * kw), dwp(dws.size());
        std::vector<float> dbs(co), dbp(co);
        const double ts = best_seconds(reps, [&] {
            std::fill(dws.begin(), dws.end(), 0.f);
            std::fill(dbs.begin(), dbs.end(), 0.f);
            ker::serial::conv2d_bwd_params<float>(dy.data(), x.data(), dws.data(), dbs.data(),
                                                  n, ci, h, w, co, kh, kw, s, p, oh, ow);
        });
        const double tp = best_seconds(reps, [&] {
            std::fill(dwp.begin(), dwp.end(), 0.f);
            std::fill(dbp.begin(), dbp.end(), 0.f);
            ker::par::conv2d_bwd_params<float>(dy.data(), x.data(), dwp.data(), dbp.data(), n,
                                               ci, h, w, co, kh, kw, s, p, oh, ow);
        });
        note(bits_equal(dws, dwp) && bits_equal(dbs, dbp));
        row("conv2d_bwd_params", "4x32x64x64 -> 64ch, k3 s1 p1", ts, tp,
            bits_equal(dws, dwp) && bits_equal(dbs, dbp));
    }

    {  // transposed conv forward
        const int n = 4, ci = 64, h = 16, w = 16, co = 32, kh = 2, kw = 2, s = 2;
        const int oh = 32, ow = 32;
        auto x = randn(rng, int64_t(n) * ci * h * w);
        auto wt = randn(rng, int64_t(ci) * co * kh * kw, 0.1);
        auto bias = randn(rng, co, 0.1);
        std::vector<float> ys(std::size_t(n) * co * oh * ow), yp(ys.size());
        const double ts = best_seconds(reps, [&] {
            ker::serial::tconv2d_fwd<float>(x.data(), wt.data(), bias.data(), ys.data(), n, ci,
                                            h, w, co, kh, kw, s, 0, 0, oh, ow, false);
        });
        const double tp = best_seconds(reps, [&] {
            ker::par::tconv2d_fwd<float>(x.data(), wt.data(), bias.data(), yp.data(), n, ci, h,
                                         w, co, kh, kw, s, 0, 0, oh, ow, false);
        });
        note(bits_equal(ys, yp));
        row("tconv2d_fwd", "4x64x16x16 -> 32ch, k2 s2", ts, tp, bits_equal(ys, yp));
    }

    {  // bilinear resize
        const int planes = 128, h = 64, w = 64, oh = 128, ow = 128;
        auto x = randn(rng, int64_t(planes) * h * w);
        std::vector<float> ys(std::size_t(planes) * oh * ow), yp(ys.size());
        const double ts = best_seconds(
            reps, [&] { ker::serial::bilinear_fwd<float>(x.data(), ys.data(), planes, h, w, oh, ow); });
        const double tp = best_seconds(
            reps, [&] { ker::par::bilinear_fwd<float>(x.data(), yp.data(), planes, h, w, oh, ow); });
        note(bits_equal(ys, yp));
        row("bilinear_fwd", "128 planes 64x64 -> 128x128", ts, tp, bits_equal(ys, yp));
    }

    {  // layer norm forward
        const std::int64_t rows = 4096;
        const int c = 256;
        auto x = randn(rng, rows * c);
        auto gamma = randn(rng, c, 0.1), beta = randn(rng, c, 0.1);
        std::vector<float> ys(std::size_t(rows) * c), yp(ys.size());
        std::vector<float> ms(rows), rs(rows), mp(rows), rp(rows);
        const double ts = best_seconds(reps, [&] {
            ker::serial::layer_norm_fwd<float>(x.data(), gamma.data(), beta.data(), ys.data(),
                                               ms.data(), rs.data(), rows, c, 1e-5f);
        });
        const double tp = best_seconds(reps, [&] {
            ker::par::layer_norm_fwd<float>(x.data(), gamma.data(), beta.data(), yp.data(),
                                            mp.data(), rp.data(), rows, c, 1e-5f);
        });
        note(bits_equal(ys, yp) && bits_equal(ms, mp) && bits_equal(rs, rp));
        row("layer_norm_fwd", "4096 rows x 256", ts, tp,
            bits_equal(ys, yp) && bits_equal(ms, mp) && bits_equal(rs, rp));
    }

    {  // softmax forward
        const std::int64_t rows = 4096;
        const int c = 256;
        auto x = randn(rng, rows * c);
        std::vector<float> ys(std::size_t(rows) * c), yp(ys.size());
        const double ts = best_seconds(
            reps, [&] { ker::serial::softmax_fwd<float>(x.data(), ys.data(), rows, c); });
        const double tp = best_seconds(
            reps, [&] { ker::par::softmax_fwd<float>(x.data(), yp.data(), rows, c); });
        note(bits_equal(ys, yp));
        row("softmax_fwd", "4096 rows x 256", ts, tp, bits_equal(ys, yp));
    }

    {  // gelu forward
        const std::int64_t n = std::int64_t(1) << 22;
        auto x = randn(rng, n);
        std::vector<float> ys(static_cast<std::size_t>(n)), yp(ys.size());
        const double ts =
            best_seconds(reps, [&] { ker::serial::gelu_fwd<float>(x.data(), ys.data(), n); });
        const double tp =
            best_seconds(reps, [&] { ker::par::gelu_fwd<float>(x.data(), yp.data(), n); });
        note(bits_equal(ys, yp));
        row("gelu_fwd", "4M elements", ts, tp, bits_equal(ys, yp));
    }

    {  // cross entropy forward (serial reduction on both paths)
        const int n = 4, c = 19, hw = 128 * 128;
        auto logits = randn(rng, int64_t(n) * c * hw);
        std::vector<std::int32_t> labels(std::size_t(n) * hw);
        for (auto& l : labels)
            l = rng.uniform() < 0.1 ? 255 : static_cast<std::int32_t>(rng.below(c));
        float ls = 0.f, lp = 0.f;
        std::int64_t cs = 0, cp = 0;
        const double ts = best_seconds(reps, [&] {
            ls = ker::serial::ce_fwd<float>(logits.data(), labels.data(), n, c, hw, 255, &cs);
        });
        const double tp = best_seconds(reps, [&] {
            lp = ker::par::ce_fwd<float>(logits.data(), labels.data(), n, c, hw, 255, &cp);
        });
        const bool match = std::memcmp(&ls, &lp, sizeof ls) == 0 && cs == cp;
        note(match);
        row("ce_fwd", "4x19x128x128, 10% ignored", ts, tp, match);
    }

    {  // argmax + confidence (evaluation path)
        const int n = 4, c = 19, hw = 256 * 256;
        auto logits = randn(rng, int64_t(n) * c * hw);
        std::vector<std::int32_t> as(std::size_t(n) * hw), ap(as.size());
        std::vector<float> confs(std::size_t(n) * hw), confp(confs.size());
        const double ts = best_seconds(reps, [&] {
            ker::serial::argmax_conf<float>(logits.data(), n, c, hw, as.data(), confs.data());
        });
        const double tp = best_seconds(reps, [&] {
            ker::par::argmax_conf<float>(logits.data(), n, c, hw, ap.data(), confp.data());
        });
        const bool match = as == ap && bits_equal(confs, confp);
        note(match);
        row("argmax_conf", "4x19x256x256", ts, tp, match);
    }

    if (!all_match) {
        std::fprintf(stderr, "\nFAIL: at least one parallel kernel diverged from the serial "
                             "reference\n");
        return 1;
    }
    std::printf("\nall parallel kernels match the serial reference bit-for-bit\n");
    return 0;
}
