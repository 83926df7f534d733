#include "downscale/layers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

namespace downscale {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

void fan_in_uniform_init(GridTensor& t, std::int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(rng.uniform(-bound, bound));
}

// --- conv2d -------------------------------------------------------------------

namespace {

void im2col(const float* x, int C, int H, int W, int k, int pad, float* col) {
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* dst = col + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) * hw;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + ky - pad;
                    float* drow = dst + static_cast<std::int64_t>(y) * W;
                    if (sy < 0 || sy >= H) {
                        std::fill(drow, drow + W, 0.0f);
                        continue;
                    }
                    const float* srow = x + (static_cast<std::int64_t>(c) * H + sy) * W;
                    for (int xo = 0; xo < W; ++xo) {
                        const int sx = xo + kx - pad;
                        drow[xo] = (sx >= 0 && sx < W) ? srow[sx] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_add(const float* col, int C, int H, int W, int k, int pad, float* x) {
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* src = col + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) * hw;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= H) continue;
                    float* xrow = x + (static_cast<std::int64_t>(c) * H + sy) * W;
                    const float* srow = src + static_cast<std::int64_t>(y) * W;
                    for (int xo = 0; xo < W; ++xo) {
                        const int sx = xo + kx - pad;
                        if (sx >= 0 && sx < W) xrow[sx] += srow[xo];
                    }
                }
            }
        }
    }
}

void check_rank4(const GridTensor& t, const char* who) {
    if (t.rank() != 4) throw ShapeError(std::string(who) + " expects a 4-D tensor, got " + t.shape_str());
}

} // namespace

Conv2d::Conv2d(const std::string& prefix, int in, int out, int k, Rng& rng)
    : in_ch(in), out_ch(out), ksize(k) {
    if (k < 1 || k % 2 == 0) throw ConfigError("conv kernel size must be odd and positive");
    w = Parameter(prefix + ".weight", GridTensor({out, in, k, k}));
    b = Parameter(prefix + ".bias", GridTensor({out}));
    const std::int64_t fan_in = static_cast<std::int64_t>(in) * k * k;
    fan_in_uniform_init(w.value, fan_in, rng);
    fan_in_uniform_init(b.value, fan_in, rng);
}

GridTensor Conv2d::forward(const GridTensor& x, Conv2dCtx* ctx) const {
    check_rank4(x, "conv2d");
    if (x.dim(1) != in_ch)
        throw ShapeError("conv2d channel mismatch: input has " + std::to_string(x.dim(1)) +
                         " channels, layer expects " + std::to_string(in_ch));
    const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int pad = ksize / 2;
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    const std::int64_t krows = static_cast<std::int64_t>(in_ch) * ksize * ksize;

    GridTensor y({B, out_ch, H, W});
    std::vector<float> colbuf(static_cast<std::size_t>(krows * hw));
    CMapRM wmat(w.value.data(), out_ch, krows);
    Eigen::Map<const Eigen::VectorXf> bvec(b.value.data(), out_ch);
    for (int bi = 0; bi < B; ++bi) {
        im2col(x.data() + static_cast<std::int64_t>(bi) * in_ch * hw, in_ch, H, W, ksize, pad, colbuf.data());
        CMapRM col(colbuf.data(), krows, hw);
        MapRM ymat(y.data() + static_cast<std::int64_t>(bi) * out_ch * hw, out_ch, hw);
        ymat.noalias() = wmat * col;
        ymat.colwise() += bvec;
    }
    if (ctx) ctx->x = x;
    return y;
}

GridTensor Conv2d::backward(const Conv2dCtx& ctx, const GridTensor& dy) {
    const GridTensor& x = ctx.x;
    check_rank4(dy, "conv2d backward");
    if (dy.dim(1) != out_ch || dy.dim(0) != x.dim(0) || dy.dim(2) != x.dim(2) || dy.dim(3) != x.dim(3))
        throw ShapeError("conv2d backward: dy shape " + dy.shape_str() + " inconsistent with input " + x.shape_str());
    const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int pad = ksize / 2;
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    const std::int64_t krows = static_cast<std::int64_t>(in_ch) * ksize * ksize;

    GridTensor dx(x.shape());
    std::vector<float> colbuf(static_cast<std::size_t>(krows * hw));
    std::vector<float> dcolbuf(static_cast<std::size_t>(krows * hw));
    CMapRM wmat(w.value.data(), out_ch, krows);
    MapRM gw(w.grad.data(), out_ch, krows);
    for (int bi = 0; bi < B; ++bi) {
        im2col(x.data() + static_cast<std::int64_t>(bi) * in_ch * hw, in_ch, H, W, ksize, pad, colbuf.data());
        CMapRM col(colbuf.data(), krows, hw);
        CMapRM dymat(dy.data() + static_cast<std::int64_t>(bi) * out_ch * hw, out_ch, hw);
        gw.noalias() += dymat * col.transpose();
        for (int o = 0; o < out_ch; ++o)
            b.grad[o] += static_cast<float>(dymat.row(o).cast<double>().sum());
        MapRM dcol(dcolbuf.data(), krows, hw);
        dcol.noalias() = wmat.transpose() * dymat;
        col2im_add(dcolbuf.data(), in_ch, H, W, ksize, pad,
                   dx.data() + static_cast<std::int64_t>(bi) * in_ch * hw);
    }
    return dx;
}

// --- relu ---------------------------------------------------------------------

GridTensor relu_forward(const GridTensor& x, ReluCtx* ctx) {
    GridTensor y = x;
    for (std::int64_t i = 0; i < y.numel(); ++i)
        if (y[i] < 0.0f) y[i] = 0.0f;
    if (ctx) ctx->x = x;
    return y;
}

GridTensor relu_backward(const ReluCtx& ctx, const GridTensor& dy) {
    if (!ctx.x.same_shape(dy)) throw ShapeError("relu backward: dy shape mismatch");
    GridTensor dx = dy;
    for (std::int64_t i = 0; i < dx.numel(); ++i)
        if (ctx.x[i] <= 0.0f) dx[i] = 0.0f;
    return dx;
}

// --- linear -------------------------------------------------------------------

Linear::Linear(const std::string& prefix, int in, int out, Rng& rng) : in_dim(in), out_dim(out) {
    w = Parameter(prefix + ".weight", GridTensor({in, out}));
    b = Parameter(prefix + ".bias", GridTensor({out}));
    fan_in_uniform_init(w.value, in, rng);
    fan_in_uniform_init(b.value, in, rng);
}

GridTensor Linear::forward(const GridTensor& x, LinearCtx* ctx) const {
    if (x.rank() != 2) throw ShapeError("linear expects a 2-D token matrix, got " + x.shape_str());
    if (x.dim(1) != in_dim)
        throw ShapeError("linear: inner dimension " + std::to_string(x.dim(1)) + " != " + std::to_string(in_dim));
    const int R = x.dim(0);
    GridTensor y({R, out_dim});
    CMapRM xm(x.data(), R, in_dim);
    CMapRM wm(w.value.data(), in_dim, out_dim);
    MapRM ym(y.data(), R, out_dim);
    ym.noalias() = xm * wm;
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b.value.data(), out_dim);
    if (ctx) ctx->x = x;
    return y;
}

GridTensor Linear::backward(const LinearCtx& ctx, const GridTensor& dy) {
    const GridTensor& x = ctx.x;
    if (dy.rank() != 2 || dy.dim(0) != x.dim(0) || dy.dim(1) != out_dim)
        throw ShapeError("linear backward: dy shape " + dy.shape_str());
    const int R = x.dim(0);
    CMapRM xm(x.data(), R, in_dim);
    CMapRM dym(dy.data(), R, out_dim);
    MapRM gw(w.grad.data(), in_dim, out_dim);
    gw.noalias() += xm.transpose() * dym;
    for (int o = 0; o < out_dim; ++o)
        b.grad[o] += static_cast<float>(dym.col(o).cast<double>().sum());
    GridTensor dx({R, in_dim});
    MapRM dxm(dx.data(), R, in_dim);
    CMapRM wm(w.value.data(), in_dim, out_dim);
    dxm.noalias() = dym * wm.transpose();
    return dx;
}

// --- layer norm ----------------------------------------------------------------

namespace {
constexpr float kLnEps = 1e-5f;
}

LayerNorm::LayerNorm(const std::string& prefix, int d) : dim(d) {
    gamma = Parameter(prefix + ".gamma", GridTensor::full({d}, 1.0f));
    beta = Parameter(prefix + ".beta", GridTensor({d}));
}

GridTensor LayerNorm::forward(const GridTensor& x, LayerNormCtx* ctx) const {
    if (x.rank() != 2 || x.dim(1) != dim)
        throw ShapeError("layer_norm expects (rows, " + std::to_string(dim) + "), got " + x.shape_str());
    const int R = x.dim(0);
    GridTensor y({R, dim});
    std::vector<float> means(static_cast<std::size_t>(R)), inv(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r) {
        double s = 0.0;
        for (int c = 0; c < dim; ++c) s += x.at(r, c);
        const double mu = s / dim;
        double v = 0.0;
        for (int c = 0; c < dim; ++c) {
            const double d = x.at(r, c) - mu;
            v += d * d;
        }
        const float istd = static_cast<float>(1.0 / std::sqrt(v / dim + kLnEps));
        means[static_cast<std::size_t>(r)] = static_cast<float>(mu);
        inv[static_cast<std::size_t>(r)] = istd;
        for (int c = 0; c < dim; ++c)
            y.at(r, c) = gamma.value[c] * (x.at(r, c) - static_cast<float>(mu)) * istd + beta.value[c];
    }
    if (ctx) {
        ctx->x = x;
        ctx->mean = std::move(means);
        ctx->inv_std = std::move(inv);
    }
    return y;
}

GridTensor LayerNorm::backward(const LayerNormCtx& ctx, const GridTensor& dy) {
    const GridTensor& x = ctx.x;
    if (!dy.same_shape(x)) throw ShapeError("layer_norm backward: dy shape mismatch");
    const int R = x.dim(0);
    GridTensor dx({R, dim});
    for (int r = 0; r < R; ++r) {
        const float mu = ctx.mean[static_cast<std::size_t>(r)];
        const float istd = ctx.inv_std[static_cast<std::size_t>(r)];
        double m1 = 0.0, m2 = 0.0;
        for (int c = 0; c < dim; ++c) {
            const float xh = (x.at(r, c) - mu) * istd;
            const float g = dy.at(r, c) * gamma.value[c];
            m1 += g;
            m2 += static_cast<double>(g) * xh;
            gamma.grad[c] += dy.at(r, c) * xh;
            beta.grad[c] += dy.at(r, c);
        }
        m1 /= dim;
        m2 /= dim;
        for (int c = 0; c < dim; ++c) {
            const float xh = (x.at(r, c) - mu) * istd;
            const float g = dy.at(r, c) * gamma.value[c];
            dx.at(r, c) = istd * static_cast<float>(g - m1 - xh * m2);
        }
    }
    return dx;
}

// --- spectral convolution --------------------------------------------------------

namespace {

struct ModeRef {
    int ky, kx;
    int stored; // flat block index or -1
    int mirror; // flat block index of the conjugate partner or -1
};

int stored_block_index(int ky, int kx, int H, int W, int m) {
    int iy, ix, qr, qc;
    if (ky < m) {
        iy = ky;
        qr = 0;
    } else if (ky >= H - m) {
        iy = ky - (H - m);
        qr = 1;
    } else {
        return -1;
    }
    if (kx < m) {
        ix = kx;
        qc = 0;
    } else if (kx >= W - m) {
        ix = kx - (W - m);
        qc = 1;
    } else {
        return -1;
    }
    const int q = qr * 2 + qc;
    return (q * m + iy) * m + ix;
}

std::vector<ModeRef> enumerate_support(int H, int W, int m) {
    std::map<std::pair<int, int>, bool> seen;
    auto add = [&](int ky, int kx) { seen[{ky, kx}] = true; };
    for (int q = 0; q < 4; ++q) {
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                const int ky = (q / 2 == 0) ? i : H - m + i;
                const int kx = (q % 2 == 0) ? j : W - m + j;
                add(ky, kx);
                add((H - ky) % H, (W - kx) % W);
            }
        }
    }
    std::vector<ModeRef> out;
    out.reserve(seen.size());
    for (const auto& kv : seen) {
        const int ky = kv.first.first, kx = kv.first.second;
        ModeRef r;
        r.ky = ky;
        r.kx = kx;
        r.stored = stored_block_index(ky, kx, H, W, m);
        r.mirror = stored_block_index((H - ky) % H, (W - kx) % W, H, W, m);
        out.push_back(r);
    }
    return out;
}

} // namespace

SpectralConv::SpectralConv(const std::string& prefix, int in, int out, int m, Rng& rng)
    : in_ch(in), out_ch(out), modes(m) {
    if (m < 1) throw ConfigError("spectral modes must be >= 1");
    w_re = Parameter(prefix + ".w_re", GridTensor({4, m, m, out, in}));
    w_im = Parameter(prefix + ".w_im", GridTensor({4, m, m, out, in}));
    const double s = 1.0 / (static_cast<double>(in) * out);
    for (std::int64_t i = 0; i < w_re.value.numel(); ++i)
        w_re.value[i] = static_cast<float>(rng.uniform(-s, s));
    for (std::int64_t i = 0; i < w_im.value.numel(); ++i)
        w_im.value[i] = static_cast<float>(rng.uniform(-s, s));
}

GridTensor SpectralConv::forward(const GridTensor& x, SpectralConvCtx* ctx) const {
    check_rank4(x, "spectral_conv");
    if (x.dim(1) != in_ch)
        throw ShapeError("spectral_conv channel mismatch: input has " + std::to_string(x.dim(1)) +
                         ", layer expects " + std::to_string(in_ch));
    const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
    if (H < 2 * modes || W < 2 * modes)
        throw ShapeError("spectral_conv: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                         " too small for " + std::to_string(modes) + " modes (needs >= " +
                         std::to_string(2 * modes) + " per axis)");

    const auto support = enumerate_support(H, W, modes);
    const ComplexGrid xhat = fft2(x);

    // effective conjugate-symmetric mixing matrix per support mode
    const std::int64_t cc = static_cast<std::int64_t>(out_ch) * in_ch;
    std::vector<Eigen::MatrixXcf> weff(support.size());
    for (std::size_t s = 0; s < support.size(); ++s) {
        Eigen::MatrixXcf wm = Eigen::MatrixXcf::Zero(out_ch, in_ch);
        const ModeRef& mr = support[s];
        for (int o = 0; o < out_ch; ++o) {
            for (int ci = 0; ci < in_ch; ++ci) {
                float re = 0.0f, im = 0.0f;
                if (mr.stored >= 0) {
                    const std::int64_t off = mr.stored * cc + o * in_ch + ci;
                    re += 0.5f * w_re.value[off];
                    im += 0.5f * w_im.value[off];
                }
                if (mr.mirror >= 0) {
                    const std::int64_t off = mr.mirror * cc + o * in_ch + ci;
                    re += 0.5f * w_re.value[off];
                    im -= 0.5f * w_im.value[off];
                }
                wm(o, ci) = std::complex<float>(re, im);
            }
        }
        weff[s] = wm;
    }

    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    ComplexGrid yhat({B, out_ch, H, W});
    if (ctx) {
        ctx->x_shape = x.shape();
        ctx->xhat.assign(static_cast<std::size_t>(B), {});
    }
    Eigen::VectorXcf xin(in_ch), yv(out_ch);
    for (int bi = 0; bi < B; ++bi) {
        if (ctx) ctx->xhat[static_cast<std::size_t>(bi)].resize(support.size());
        for (std::size_t s = 0; s < support.size(); ++s) {
            const ModeRef& mr = support[s];
            for (int ci = 0; ci < in_ch; ++ci) {
                const std::int64_t off = ((static_cast<std::int64_t>(bi) * in_ch + ci) * H + mr.ky) * W + mr.kx;
                xin(ci) = std::complex<float>(xhat.re[static_cast<std::size_t>(off)], xhat.im[static_cast<std::size_t>(off)]);
            }
            yv.noalias() = weff[s] * xin;
            for (int o = 0; o < out_ch; ++o) {
                const std::int64_t off = ((static_cast<std::int64_t>(bi) * out_ch + o) * H + mr.ky) * W + mr.kx;
                yhat.re[static_cast<std::size_t>(off)] = yv(o).real();
                yhat.im[static_cast<std::size_t>(off)] = yv(o).imag();
            }
            if (ctx) {
                auto& slot = ctx->xhat[static_cast<std::size_t>(bi)][s];
                slot.assign(static_cast<std::size_t>(in_ch), {});
                for (int ci = 0; ci < in_ch; ++ci) slot[static_cast<std::size_t>(ci)] = xin(ci);
            }
        }
    }
    (void)hw;
    return ifft2(yhat);
}

GridTensor SpectralConv::backward(const SpectralConvCtx& ctx, const GridTensor& dy) {
    check_rank4(dy, "spectral_conv backward");
    const int B = ctx.x_shape[0], H = ctx.x_shape[2], W = ctx.x_shape[3];
    if (dy.dim(0) != B || dy.dim(1) != out_ch || dy.dim(2) != H || dy.dim(3) != W)
        throw ShapeError("spectral_conv backward: dy shape " + dy.shape_str());

    const auto support = enumerate_support(H, W, modes);
    const std::int64_t cc = static_cast<std::int64_t>(out_ch) * in_ch;
    const float inv_hw = 1.0f / (static_cast<float>(H) * static_cast<float>(W));

    // rebuild the effective weights (cheap next to the FFTs)
    std::vector<Eigen::MatrixXcf> weff(support.size());
    for (std::size_t s = 0; s < support.size(); ++s) {
        Eigen::MatrixXcf wm = Eigen::MatrixXcf::Zero(out_ch, in_ch);
        const ModeRef& mr = support[s];
        for (int o = 0; o < out_ch; ++o) {
            for (int ci = 0; ci < in_ch; ++ci) {
                float re = 0.0f, im = 0.0f;
                if (mr.stored >= 0) {
                    const std::int64_t off = mr.stored * cc + o * in_ch + ci;
                    re += 0.5f * w_re.value[off];
                    im += 0.5f * w_im.value[off];
                }
                if (mr.mirror >= 0) {
                    const std::int64_t off = mr.mirror * cc + o * in_ch + ci;
                    re += 0.5f * w_re.value[off];
                    im -= 0.5f * w_im.value[off];
                }
                wm(o, ci) = std::complex<float>(re, im);
            }
        }
        weff[s] = wm;
    }

    const ComplexGrid hhat = fft2(dy);
    ComplexGrid dxhat({B, in_ch, H, W});
    std::vector<Eigen::MatrixXcf> dweff(support.size(), Eigen::MatrixXcf::Zero(out_ch, in_ch));
    Eigen::VectorXcf hv(out_ch), xg(in_ch), xv(in_ch);
    for (int bi = 0; bi < B; ++bi) {
        for (std::size_t s = 0; s < support.size(); ++s) {
            const ModeRef& mr = support[s];
            for (int o = 0; o < out_ch; ++o) {
                const std::int64_t off = ((static_cast<std::int64_t>(bi) * out_ch + o) * H + mr.ky) * W + mr.kx;
                hv(o) = std::complex<float>(hhat.re[static_cast<std::size_t>(off)] * inv_hw,
                                            hhat.im[static_cast<std::size_t>(off)] * inv_hw);
            }
            const auto& slot = ctx.xhat[static_cast<std::size_t>(bi)][s];
            for (int ci = 0; ci < in_ch; ++ci) xv(ci) = slot[static_cast<std::size_t>(ci)];
            dweff[s].noalias() += hv * xv.adjoint();
            xg.noalias() = weff[s].adjoint() * hv;
            for (int ci = 0; ci < in_ch; ++ci) {
                const std::int64_t off = ((static_cast<std::int64_t>(bi) * in_ch + ci) * H + mr.ky) * W + mr.kx;
                dxhat.re[static_cast<std::size_t>(off)] = xg(ci).real();
                dxhat.im[static_cast<std::size_t>(off)] = xg(ci).imag();
            }
        }
    }

    // scatter dW_eff through the symmetrization
    for (std::size_t s = 0; s < support.size(); ++s) {
        const ModeRef& mr = support[s];
        for (int o = 0; o < out_ch; ++o) {
            for (int ci = 0; ci < in_ch; ++ci) {
                const std::complex<float> g = dweff[s](o, ci);
                if (mr.stored >= 0) {
                    const std::int64_t off = mr.stored * cc + o * in_ch + ci;
                    w_re.grad[off] += 0.5f * g.real();
                    w_im.grad[off] += 0.5f * g.imag();
                }
                if (mr.mirror >= 0) {
                    const std::int64_t off = mr.mirror * cc + o * in_ch + ci;
                    w_re.grad[off] += 0.5f * g.real();
                    w_im.grad[off] -= 0.5f * g.imag();
                }
            }
        }
    }

    GridTensor dx = ifft2(dxhat);
    const float hwf = static_cast<float>(H) * static_cast<float>(W);
    for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] *= hwf;
    return dx;
}

// --- multi-head self-attention ----------------------------------------------------

Mhsa::Mhsa(const std::string& prefix, int d, int h, Rng& rng) : dim(d), heads(h) {
    if (h < 1 || d % h != 0)
        throw ConfigError("attention dim " + std::to_string(d) + " not divisible by heads " + std::to_string(h));
    wq = Parameter(prefix + ".wq", GridTensor({d, d}));
    wk = Parameter(prefix + ".wk", GridTensor({d, d}));
    wv = Parameter(prefix + ".wv", GridTensor({d, d}));
    wo = Parameter(prefix + ".wo", GridTensor({d, d}));
    bq = Parameter(prefix + ".bq", GridTensor({d}));
    bk = Parameter(prefix + ".bk", GridTensor({d}));
    bv = Parameter(prefix + ".bv", GridTensor({d}));
    bo = Parameter(prefix + ".bo", GridTensor({d}));
    for (Parameter* p : {&wq, &wk, &wv, &wo}) fan_in_uniform_init(p->value, d, rng);
    for (Parameter* p : {&bq, &bk, &bv, &bo}) fan_in_uniform_init(p->value, d, rng);
}

namespace {

GridTensor project(const CMapRM& x, const Parameter& w, const Parameter& b) {
    const int T = static_cast<int>(x.rows()), D = static_cast<int>(x.cols());
    GridTensor out({T, D});
    MapRM om(out.data(), T, D);
    CMapRM wm(w.value.data(), D, D);
    om.noalias() = x * wm;
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b.value.data(), D);
    return out;
}

} // namespace

GridTensor Mhsa::forward(const GridTensor& x, MhsaCtx* ctx) const {
    const bool batched = x.rank() == 3;
    if (!batched && x.rank() != 2)
        throw ShapeError("mhsa expects (tokens, dim) or (batch, tokens, dim), got " + x.shape_str());
    const int B = batched ? x.dim(0) : 1;
    const int T = batched ? x.dim(1) : x.dim(0);
    const int D = batched ? x.dim(2) : x.dim(1);
    if (D != dim) throw ShapeError("mhsa: token dim " + std::to_string(D) + " != " + std::to_string(dim));
    const int dh = dim / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    GridTensor y(x.shape());
    if (ctx) {
        ctx->x = x;
        ctx->q.assign(static_cast<std::size_t>(B), GridTensor());
        ctx->k.assign(static_cast<std::size_t>(B), GridTensor());
        ctx->v.assign(static_cast<std::size_t>(B), GridTensor());
        ctx->probs.assign(static_cast<std::size_t>(B), {});
    }
    const std::int64_t td = static_cast<std::int64_t>(T) * D;
    for (int bi = 0; bi < B; ++bi) {
        CMapRM xs(x.data() + bi * td, T, D);
        GridTensor q = project(xs, wq, bq);
        GridTensor k = project(xs, wk, bk);
        GridTensor v = project(xs, wv, bv);
        CMapRM qm(q.data(), T, D), km(k.data(), T, D), vm(v.data(), T, D);

        GridTensor concat({T, D});
        MapRM cm(concat.data(), T, D);
        std::vector<GridTensor> probs(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            RowMat scores = qm.middleCols(h * dh, dh) * km.middleCols(h * dh, dh).transpose() * scale;
            GridTensor p({T, T});
            MapRM pm(p.data(), T, T);
            for (int r = 0; r < T; ++r) {
                const float mx = scores.row(r).maxCoeff();
                double sum = 0.0;
                for (int c = 0; c < T; ++c) {
                    const float e = std::exp(scores(r, c) - mx);
                    pm(r, c) = e;
                    sum += e;
                }
                const float inv = static_cast<float>(1.0 / sum);
                for (int c = 0; c < T; ++c) pm(r, c) *= inv;
            }
            cm.middleCols(h * dh, dh).noalias() = pm * vm.middleCols(h * dh, dh);
            probs[static_cast<std::size_t>(h)] = std::move(p);
        }
        MapRM ys(y.data() + bi * td, T, D);
        CMapRM wom(wo.value.data(), D, D);
        ys.noalias() = cm * wom;
        ys.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bo.value.data(), D);
        if (ctx) {
            ctx->q[static_cast<std::size_t>(bi)] = std::move(q);
            ctx->k[static_cast<std::size_t>(bi)] = std::move(k);
            ctx->v[static_cast<std::size_t>(bi)] = std::move(v);
            ctx->probs[static_cast<std::size_t>(bi)] = std::move(probs);
        }
    }
    return y;
}

GridTensor Mhsa::backward(const MhsaCtx& ctx, const GridTensor& dy) {
    const GridTensor& x = ctx.x;
    if (!dy.same_shape(x)) throw ShapeError("mhsa backward: dy shape mismatch");
    const bool batched = x.rank() == 3;
    const int B = batched ? x.dim(0) : 1;
    const int T = batched ? x.dim(1) : x.dim(0);
    const int dh = dim / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    const std::int64_t td = static_cast<std::int64_t>(T) * dim;

    GridTensor dx(x.shape());
    MapRM gwq(wq.grad.data(), dim, dim), gwk(wk.grad.data(), dim, dim);
    MapRM gwv(wv.grad.data(), dim, dim), gwo(wo.grad.data(), dim, dim);
    CMapRM wqm(wq.value.data(), dim, dim), wkm(wk.value.data(), dim, dim);
    CMapRM wvm(wv.value.data(), dim, dim), wom(wo.value.data(), dim, dim);

    for (int bi = 0; bi < B; ++bi) {
        CMapRM xs(x.data() + bi * td, T, dim);
        CMapRM dys(dy.data() + bi * td, T, dim);
        CMapRM qm(ctx.q[static_cast<std::size_t>(bi)].data(), T, dim);
        CMapRM km(ctx.k[static_cast<std::size_t>(bi)].data(), T, dim);
        CMapRM vm(ctx.v[static_cast<std::size_t>(bi)].data(), T, dim);

        // rebuild the concatenated head outputs for dWo
        RowMat concat(T, dim);
        for (int h = 0; h < heads; ++h) {
            CMapRM pm(ctx.probs[static_cast<std::size_t>(bi)][static_cast<std::size_t>(h)].data(), T, T);
            concat.middleCols(h * dh, dh).noalias() = pm * vm.middleCols(h * dh, dh);
        }
        gwo.noalias() += concat.transpose() * dys;
        for (int c = 0; c < dim; ++c)
            bo.grad[c] += static_cast<float>(dys.col(c).cast<double>().sum());
        RowMat dconcat = dys * wom.transpose();

        RowMat dq(T, dim), dk(T, dim), dv(T, dim);
        for (int h = 0; h < heads; ++h) {
            CMapRM pm(ctx.probs[static_cast<std::size_t>(bi)][static_cast<std::size_t>(h)].data(), T, T);
            RowMat dch = dconcat.middleCols(h * dh, dh);
            RowMat dp = dch * vm.middleCols(h * dh, dh).transpose();
            dv.middleCols(h * dh, dh).noalias() = pm.transpose() * dch;
            // softmax backward per row
            RowMat ds(T, T);
            for (int r = 0; r < T; ++r) {
                double dot = 0.0;
                for (int c = 0; c < T; ++c) dot += static_cast<double>(dp(r, c)) * pm(r, c);
                for (int c = 0; c < T; ++c)
                    ds(r, c) = pm(r, c) * (dp(r, c) - static_cast<float>(dot));
            }
            dq.middleCols(h * dh, dh).noalias() = ds * km.middleCols(h * dh, dh) * scale;
            dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qm.middleCols(h * dh, dh) * scale;
        }

        gwq.noalias() += xs.transpose() * dq;
        gwk.noalias() += xs.transpose() * dk;
        gwv.noalias() += xs.transpose() * dv;
        for (int c = 0; c < dim; ++c) {
            bq.grad[c] += static_cast<float>(dq.col(c).cast<double>().sum());
            bk.grad[c] += static_cast<float>(dk.col(c).cast<double>().sum());
            bv.grad[c] += static_cast<float>(dv.col(c).cast<double>().sum());
        }
        MapRM dxs(dx.data() + bi * td, T, dim);
        dxs.noalias() = dq * wqm.transpose();
        dxs.noalias() += dk * wkm.transpose();
        dxs.noalias() += dv * wvm.transpose();
    }
    return dx;
}

} // namespace downscale
