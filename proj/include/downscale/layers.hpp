#pragma once

#include <complex>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "downscale/grid.hpp"
#include "downscale/rng.hpp"

namespace downscale {

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
    std::string name;
    GridTensor value;
    GridTensor grad;

    Parameter() = default;
    Parameter(std::string n, GridTensor v)
        : name(std::move(n)), value(std::move(v)), grad(GridTensor(value.shape())) {}

    void zero_grad() {
        for (std::int64_t i = 0; i < grad.numel(); ++i) grad[i] = 0.0f;
    }
};

// --- conv2d -------------------------------------------------------------------

/// Odd-kernel 2-D cross-correlation with same-padding (pad = k/2) and bias.
/// Weight layout (out_ch, in_ch, k, k). Backward accumulates into w.grad /
/// b.grad and returns the input gradient.
struct Conv2dCtx {
    GridTensor x;
};

struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 3;
    Parameter w, b;

    Conv2d() = default;
    Conv2d(const std::string& prefix, int in, int out, int k, Rng& rng);

    GridTensor forward(const GridTensor& x, Conv2dCtx* ctx) const;
    GridTensor backward(const Conv2dCtx& ctx, const GridTensor& dy);
};

// --- relu ---------------------------------------------------------------------

struct ReluCtx {
    GridTensor x;
};

GridTensor relu_forward(const GridTensor& x, ReluCtx* ctx);
/// dx = dy where x > 0, else 0 (subgradient at x == 0 is 0).
GridTensor relu_backward(const ReluCtx& ctx, const GridTensor& dy);

// --- linear -------------------------------------------------------------------

/// y = x * w + b over a token matrix x (rows, in_dim); w is (in_dim, out_dim).
struct LinearCtx {
    GridTensor x;
};

struct Linear {
    int in_dim = 0, out_dim = 0;
    Parameter w, b;

    Linear() = default;
    Linear(const std::string& prefix, int in, int out, Rng& rng);

    GridTensor forward(const GridTensor& x, LinearCtx* ctx) const;
    GridTensor backward(const LinearCtx& ctx, const GridTensor& dy);
};

// --- layer norm ----------------------------------------------------------------

/// Row-wise layer normalization with learned gain/bias, eps = 1e-5.
struct LayerNormCtx {
    GridTensor x;
    std::vector<float> mean, inv_std;
};

struct LayerNorm {
    int dim = 0;
    Parameter gamma, beta;

    LayerNorm() = default;
    LayerNorm(const std::string& prefix, int dim);

    GridTensor forward(const GridTensor& x, LayerNormCtx* ctx) const;
    GridTensor backward(const LayerNormCtx& ctx, const GridTensor& dy);
};

// --- spectral convolution -------------------------------------------------------

/// Fourier-domain channel mixing with mode truncation: y = Re(ifft2(M . fft2(x)))
/// where M applies a complex (out_ch x in_ch) matrix per retained low-frequency
/// mode and zeros all other modes. Raw weights are stored for the four corner
/// blocks of size modes x modes; the effective mask is symmetrized over the
/// blocks and their conjugate mirrors, W_eff(k) = (raw(k) + conj(raw(sigma k)))/2
/// with raw = 0 outside the blocks, so the output is real by construction.
struct SpectralConvCtx {
    std::vector<int> x_shape;
    // cached fft2(x) values at the support modes: [batch][mode] -> in_ch complex
    std::vector<std::vector<std::vector<std::complex<float>>>> xhat;
};

struct SpectralConv {
    int in_ch = 0, out_ch = 0, modes = 0;
    Parameter w_re, w_im; // (4, modes, modes, out_ch, in_ch)

    SpectralConv() = default;
    SpectralConv(const std::string& prefix, int in, int out, int modes, Rng& rng);

    GridTensor forward(const GridTensor& x, SpectralConvCtx* ctx) const;
    GridTensor backward(const SpectralConvCtx& ctx, const GridTensor& dy);
};

// --- multi-head self-attention ---------------------------------------------------

/// Scaled dot-product attention over a (tokens, dim) matrix: per-head scale
/// 1/sqrt(dim/heads), row softmax with max subtraction, concat, output
/// projection. Rank-3 (batch, tokens, dim) inputs run the per-sample core on
/// each batch entry.
struct MhsaCtx {
    GridTensor x;
    // per sample: q, k, v (T x D) and per-head attention probabilities (T x T)
    std::vector<GridTensor> q, k, v;
    std::vector<std::vector<GridTensor>> probs;
};

struct Mhsa {
    int dim = 0, heads = 0;
    Parameter wq, wk, wv, wo;
    Parameter bq, bk, bv, bo;

    Mhsa() = default;
    Mhsa(const std::string& prefix, int dim, int heads, Rng& rng);

    GridTensor forward(const GridTensor& x, MhsaCtx* ctx) const;
    GridTensor backward(const MhsaCtx& ctx, const GridTensor& dy);
};

// --- gradient checking ------------------------------------------------------------

/// A flat view over one coordinate block (an input tensor or a parameter).
struct CoordSpan {
    std::string name;
    float* value = nullptr;
    float* grad = nullptr;
    std::int64_t n = 0;
};

/// Closure bundle handed to grad_check. loss() recomputes the scalar loss from
/// the current coordinate values; loss_and_grads() additionally refreshes every
/// grad span (overwriting, not accumulating).
struct GradCheckTarget {
    std::string name;
    std::function<double()> loss;
    std::function<double()> loss_and_grads;
    std::vector<CoordSpan> coords;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::int64_t checked = 0;
    std::int64_t skipped = 0; // coordinates excluded as locally non-smooth
    std::string worst_coord;

    bool ok(double tol = 1e-3) const {
        return checked > 0 && checked >= skipped && max_rel_err <= tol;
    }
};

/// Central-difference check of analytic gradients on every coordinate (or a
/// seeded subsample of max_coords for large targets). Relative error uses
/// denominator max(|analytic|, |numeric|, 0.1*(1+max|analytic|)): the floor
/// turns the check into an absolute one for coordinates whose gradient is
/// small enough to drown in the float32 forward-evaluation noise of the
/// difference quotient (~1e-4 absolute at eps = 1e-3).
///
/// Coordinates whose +/-eps window crosses an activation kink are excluded:
/// the analytic gradient is re-evaluated at both perturbed points and a
/// non-vanishing symmetric second difference a(+eps) + a(-eps) - 2 a(0) flags
/// the crossing (it is O(eps^2) for smooth coordinates and jumps by the full
/// path weight for a crossed kink, at any crossing offset).
GradCheckResult grad_check(GradCheckTarget& target, double eps = 1e-3,
                           std::uint64_t seed = 0, std::int64_t max_coords = 256);

/// Prebuilt single-layer check targets for the CLI and test suites. Valid
/// names: conv2d, relu, linear, layer_norm, spectral_conv, mhsa.
/// Each target owns its layer, input and loss weights (seeded).
struct OwnedCheckTarget {
    GradCheckTarget target;
    std::shared_ptr<void> state; // keeps the closed-over objects alive
};

OwnedCheckTarget make_layer_check_target(const std::string& layer_name, std::uint64_t seed);
std::vector<std::string> layer_check_names();

// --- shared init helpers -----------------------------------------------------------

/// Uniform(-bound, bound) fill with bound = sqrt(1 / fan_in).
void fan_in_uniform_init(GridTensor& t, std::int64_t fan_in, Rng& rng);

} // namespace downscale
