#include <doctest.h>

#include <cmath>

#include "downscale/grid.hpp"
#include "downscale/layers.hpp"
#include "downscale/rng.hpp"

using namespace downscale;

namespace {

GridTensor randn(std::vector<int> shape, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    GridTensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(rng.normal() * scale);
    return t;
}

} // namespace

TEST_CASE("conv2d: identity kernel passes input through") {
    Rng rng(1);
    Conv2d conv("c", 1, 1, 3, rng);
    for (std::int64_t i = 0; i < conv.w.value.numel(); ++i) conv.w.value[i] = 0.0f;
    conv.w.value.at(0, 0, 1, 1) = 1.0f; // center tap
    conv.b.value[0] = 0.0f;
    GridTensor x = randn({2, 1, 8, 8}, 3);
    GridTensor y = conv.forward(x, nullptr);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d: zero weights give constant bias field") {
    Rng rng(2);
    Conv2d conv("c", 2, 3, 3, rng);
    for (std::int64_t i = 0; i < conv.w.value.numel(); ++i) conv.w.value[i] = 0.0f;
    conv.b.value[0] = 0.5f;
    conv.b.value[1] = -1.0f;
    conv.b.value[2] = 2.0f;
    GridTensor x = randn({1, 2, 6, 6}, 4);
    GridTensor y = conv.forward(x, nullptr);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 36; ++i)
            CHECK(y[c * 36 + i] == conv.b.value[c]);
}

TEST_CASE("conv2d: channel mismatch rejected") {
    Rng rng(5);
    Conv2d conv("c", 2, 4, 3, rng);
    CHECK_THROWS_AS(conv.forward(GridTensor({1, 3, 8, 8}), nullptr), ShapeError);
}

TEST_CASE("relu: forward values and gradient routing") {
    GridTensor x({3}, {-1.0f, 0.0f, 2.0f});
    ReluCtx ctx;
    GridTensor y = relu_forward(x, &ctx);
    CHECK(y[0] == 0.0f);
    CHECK(y[1] == 0.0f);
    CHECK(y[2] == 2.0f);
    GridTensor dy({3}, {1.0f, 1.0f, 1.0f});
    GridTensor dx = relu_backward(ctx, dy);
    CHECK(dx[0] == 0.0f);
    CHECK(dx[1] == 0.0f); // subgradient 0 at x == 0
    CHECK(dx[2] == 1.0f);
}

TEST_CASE("relu: all-positive input is the identity") {
    GridTensor x = randn({1, 1, 4, 4}, 6);
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = std::fabs(x[i]) + 0.1f;
    ReluCtx ctx;
    GridTensor y = relu_forward(x, &ctx);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
    GridTensor dy = randn({1, 1, 4, 4}, 7);
    GridTensor dx = relu_backward(ctx, dy);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(dx[i] == dy[i]);
}

TEST_CASE("linear: identity and zero weight behaviour") {
    Rng rng(8);
    Linear lin("l", 4, 4, rng);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) lin.w.value.at(i, j) = (i == j) ? 1.0f : 0.0f;
    for (int j = 0; j < 4; ++j) lin.b.value[j] = 0.0f;
    GridTensor x = randn({5, 4}, 9);
    GridTensor y = lin.forward(x, nullptr);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

    for (std::int64_t i = 0; i < lin.w.value.numel(); ++i) lin.w.value[i] = 0.0f;
    for (int j = 0; j < 4; ++j) lin.b.value[j] = static_cast<float>(j);
    GridTensor z = lin.forward(x, nullptr);
    for (int r = 0; r < 5; ++r)
        for (int j = 0; j < 4; ++j) CHECK(z.at(r, j) == static_cast<float>(j));
}

TEST_CASE("linear: inner dimension mismatch rejected") {
    Rng rng(10);
    Linear lin("l", 4, 2, rng);
    CHECK_THROWS_AS(lin.forward(GridTensor({5, 3}), nullptr), ShapeError);
}

TEST_CASE("mhsa: single token attends to itself with weight 1") {
    Rng rng(11);
    Mhsa attn("a", 8, 2, rng);
    GridTensor x = randn({1, 8}, 12);
    MhsaCtx ctx;
    GridTensor y = attn.forward(x, &ctx);
    CHECK(y.shape() == std::vector<int>{1, 8});
    for (const auto& p : ctx.probs[0])
        CHECK(p[0] == doctest::Approx(1.0f));
}

TEST_CASE("mhsa: two identical tokens split attention 0.5/0.5") {
    Rng rng(13);
    Mhsa attn("a", 8, 2, rng);
    GridTensor x({2, 8});
    Rng r2(14);
    for (int j = 0; j < 8; ++j) {
        const float v = static_cast<float>(r2.normal());
        x.at(0, j) = v;
        x.at(1, j) = v;
    }
    MhsaCtx ctx;
    attn.forward(x, &ctx);
    for (const auto& p : ctx.probs[0])
        for (std::int64_t i = 0; i < p.numel(); ++i)
            CHECK(p[i] == doctest::Approx(0.5f).epsilon(1e-5));
}

TEST_CASE("mhsa: softmax rows sum to one") {
    Rng rng(15);
    Mhsa attn("a", 16, 4, rng);
    GridTensor x = randn({10, 16}, 16, 2.0);
    MhsaCtx ctx;
    attn.forward(x, &ctx);
    for (const auto& p : ctx.probs[0]) {
        for (int r = 0; r < 10; ++r) {
            double s = 0.0;
            for (int c = 0; c < 10; ++c) s += p.at(r, c);
            CHECK(std::fabs(s - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("mhsa: indivisible head count rejected") {
    Rng rng(17);
    CHECK_THROWS_AS(Mhsa("a", 10, 4, rng), ConfigError);
}

TEST_CASE("spectral_conv: zero weights give zero output") {
    Rng rng(18);
    SpectralConv sc("s", 2, 2, 4, rng);
    for (std::int64_t i = 0; i < sc.w_re.value.numel(); ++i) {
        sc.w_re.value[i] = 0.0f;
        sc.w_im.value[i] = 0.0f;
    }
    GridTensor x = randn({1, 2, 16, 16}, 19);
    GridTensor y = sc.forward(x, nullptr);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(y[i]) <= 1e-6);
}

TEST_CASE("spectral_conv: unit weights pass an in-band cosine through") {
    Rng rng(20);
    SpectralConv sc("s", 1, 1, 4, rng);
    for (std::int64_t i = 0; i < sc.w_re.value.numel(); ++i) {
        sc.w_re.value[i] = 1.0f;
        sc.w_im.value[i] = 0.0f;
    }
    const int H = 16, W = 16;
    GridTensor x({1, 1, H, W});
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
            x.at(0, 0, y, xx) = std::cos(2.0 * M_PI * (3.0 * y / H + 2.0 * xx / W));
    GridTensor out = sc.forward(x, nullptr);
    for (std::int64_t i = 0; i < out.numel(); ++i)
        CHECK(std::fabs(out[i] - x[i]) <= 1e-4);
}

TEST_CASE("spectral_conv: out-of-band cosine is filtered out") {
    Rng rng(21);
    SpectralConv sc("s", 1, 1, 2, rng);
    for (std::int64_t i = 0; i < sc.w_re.value.numel(); ++i) {
        sc.w_re.value[i] = 1.0f;
        sc.w_im.value[i] = 0.0f;
    }
    const int H = 16, W = 16;
    GridTensor x({1, 1, H, W});
    for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
            x.at(0, 0, y, xx) = std::cos(2.0 * M_PI * 5.0 * xx / W); // mode 5 with m = 2
    GridTensor out = sc.forward(x, nullptr);
    for (std::int64_t i = 0; i < out.numel(); ++i)
        CHECK(std::fabs(out[i]) <= 1e-4);
}

TEST_CASE("spectral_conv: output is the real part of a (near-)real complex field") {
    // independent oracle: rebuild the symmetrized mask from the raw weights,
    // apply it in the Fourier domain and invert with full complex arithmetic
    // (ifft(Z) = conj(fft(conj(Z)))/N, complex ffts via linearity); the
    // imaginary residue must vanish and the real part must match the layer.
    Rng rng(55);
    const int C = 2, H = 16, W = 16, m = 4;
    SpectralConv sc("s", C, C, m, rng);
    GridTensor x = randn({1, C, H, W}, 56);
    GridTensor y = sc.forward(x, nullptr);

    auto stored = [&](int ky, int kx) -> int {
        int iy, ix, qr, qc;
        if (ky < m) { iy = ky; qr = 0; }
        else if (ky >= H - m) { iy = ky - (H - m); qr = 1; }
        else return -1;
        if (kx < m) { ix = kx; qc = 0; }
        else if (kx >= W - m) { ix = kx - (W - m); qc = 1; }
        else return -1;
        return ((qr * 2 + qc) * m + iy) * m + ix;
    };
    auto weff = [&](int ky, int kx, int o, int ci) -> std::complex<double> {
        std::complex<double> v{0.0, 0.0};
        const int s = stored(ky, kx);
        const int mi = stored((H - ky) % H, (W - kx) % W);
        if (s >= 0)
            v += 0.5 * std::complex<double>(sc.w_re.value[s * C * C + o * C + ci],
                                            sc.w_im.value[s * C * C + o * C + ci]);
        if (mi >= 0)
            v += 0.5 * std::complex<double>(sc.w_re.value[mi * C * C + o * C + ci],
                                            -sc.w_im.value[mi * C * C + o * C + ci]);
        return v;
    };

    ComplexGrid xh = fft2(x);
    // masked channel mixing over the full spectrum
    std::vector<std::complex<double>> yh(static_cast<std::size_t>(C) * H * W);
    for (int ky = 0; ky < H; ++ky)
        for (int kx = 0; kx < W; ++kx)
            for (int o = 0; o < C; ++o) {
                std::complex<double> acc{0.0, 0.0};
                for (int ci = 0; ci < C; ++ci) {
                    const std::size_t off = (static_cast<std::size_t>(ci) * H + ky) * W + kx;
                    acc += weff(ky, kx, o, ci) * std::complex<double>(xh.re[off], xh.im[off]);
                }
                yh[(static_cast<std::size_t>(o) * H + ky) * W + kx] = acc;
            }
    // full complex inverse via two real-input ffts: ifft(Z) = conj(fft(conj(Z)))/N
    GridTensor zr({C, H, W}), zi({C, H, W});
    for (std::int64_t i = 0; i < zr.numel(); ++i) {
        zr[i] = static_cast<float>(yh[static_cast<std::size_t>(i)].real());
        zi[i] = static_cast<float>(-yh[static_cast<std::size_t>(i)].imag());
    }
    ComplexGrid fr = fft2(zr), fi = fft2(zi);
    double worst_imag = 0.0, worst_real = 0.0;
    for (std::int64_t i = 0; i < zr.numel(); ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        // fft(zr + i*zi) = fr + i*fi; ifft value = conj(...)/N
        const double re = (fr.re[k] - fi.im[k]) / (H * W);
        const double im = -(fr.im[k] + fi.re[k]) / (H * W);
        worst_imag = std::max(worst_imag, std::fabs(im));
        worst_real = std::max(worst_real, std::fabs(re - y[i]));
    }
    CHECK(worst_imag <= 1e-5);
    CHECK(worst_real <= 1e-5);
}

TEST_CASE("spectral_conv: too-small spatial size rejected") {
    Rng rng(22);
    SpectralConv sc("s", 1, 1, 12, rng);
    CHECK_THROWS_AS(sc.forward(GridTensor({1, 1, 16, 16}), nullptr), ShapeError);
}

TEST_CASE("grad_check: every layer within 1e-3") {
    for (const std::string& name : layer_check_names()) {
        CAPTURE(name);
        OwnedCheckTarget t = make_layer_check_target(name, 7);
        GradCheckResult r = grad_check(t.target, 1e-3, 7);
        CAPTURE(r.max_rel_err);
        CAPTURE(r.worst_coord);
        CAPTURE(r.skipped);
        CHECK(r.ok(1e-3));
    }
}

TEST_CASE("grad_check: detects a corrupted backward pass") {
    // fixture layer: y = 2x forward, deliberately wrong backward dx = 2.3 dy
    struct St {
        GridTensor x, dx, g;
    };
    auto st = std::make_shared<St>();
    st->x = randn({4, 4}, 23);
    st->dx = GridTensor({4, 4});
    st->g = randn({4, 4}, 24);
    GradCheckTarget t;
    t.name = "broken";
    t.loss = [st] {
        double s = 0.0;
        for (std::int64_t i = 0; i < st->x.numel(); ++i) s += 2.0 * st->x[i] * st->g[i];
        return s;
    };
    t.loss_and_grads = [st, &t] {
        for (std::int64_t i = 0; i < st->x.numel(); ++i) st->dx[i] = 2.3f * st->g[i];
        return t.loss();
    };
    t.coords = {CoordSpan{"input", st->x.data(), st->dx.data(), st->x.numel()}};
    GradCheckResult r = grad_check(t, 1e-3, 25);
    CHECK(!r.ok(1e-3));
    CHECK(r.max_rel_err > 0.1);
}

TEST_CASE("grad_check: identity layer error is tiny") {
    struct St {
        GridTensor x, dx, g;
    };
    auto st = std::make_shared<St>();
    st->x = randn({4, 4}, 26);
    st->dx = GridTensor({4, 4});
    st->g = randn({4, 4}, 27);
    GradCheckTarget t;
    t.name = "identity";
    t.loss = [st] {
        double s = 0.0;
        for (std::int64_t i = 0; i < st->x.numel(); ++i) s += static_cast<double>(st->x[i]) * st->g[i];
        return s;
    };
    t.loss_and_grads = [st, &t] {
        for (std::int64_t i = 0; i < st->x.numel(); ++i) st->dx[i] = st->g[i];
        return t.loss();
    };
    t.coords = {CoordSpan{"input", st->x.data(), st->dx.data(), st->x.numel()}};
    GradCheckResult r = grad_check(t, 1e-3, 28);
    CHECK(r.ok(1e-3));
    CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("layers: forward passes are deterministic") {
    Rng rng(29);
    Conv2d conv("c", 2, 2, 3, rng);
    GridTensor x = randn({1, 2, 8, 8}, 30);
    GridTensor y1 = conv.forward(x, nullptr);
    GridTensor y2 = conv.forward(x, nullptr);
    for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
}
