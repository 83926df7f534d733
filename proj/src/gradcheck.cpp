#include "downscale/layers.hpp"

#include <algorithm>
#include <cmath>

namespace downscale {

GradCheckResult grad_check(GradCheckTarget& target, double eps, std::uint64_t seed,
                           std::int64_t max_coords) {
    GradCheckResult res;
    target.loss_and_grads();

    // snapshot the analytic gradient at the base point
    std::vector<std::vector<float>> analytic;
    analytic.reserve(target.coords.size());
    double gmax = 0.0;
    std::int64_t total = 0;
    for (const CoordSpan& s : target.coords) {
        analytic.emplace_back(s.grad, s.grad + s.n);
        for (std::int64_t i = 0; i < s.n; ++i) gmax = std::max(gmax, std::fabs(static_cast<double>(s.grad[i])));
        total += s.n;
    }
    // Denominator floor: the float32 forward pass quantizes every output at
    // ~ulp(|y|), which puts an absolute noise floor of roughly 1e-4 on any
    // central-difference estimate at eps = 1e-3. Coordinates whose gradient
    // sits below the floor are therefore held to an absolute bound of
    // tol * tau instead of a meaningless relative one.
    const double tau = 0.1 * (1.0 + gmax);

    std::vector<std::int64_t> ids;
    if (total <= max_coords) {
        ids.resize(static_cast<std::size_t>(total));
        for (std::int64_t i = 0; i < total; ++i) ids[static_cast<std::size_t>(i)] = i;
    } else {
        Rng rng(mix_seed(seed, 0x67636b));
        std::vector<int> all(static_cast<std::size_t>(total));
        for (std::int64_t i = 0; i < total; ++i) all[static_cast<std::size_t>(i)] = static_cast<int>(i);
        rng.shuffle(all);
        ids.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(max_coords));
    }

    for (std::int64_t id : ids) {
        // locate span and offset
        std::size_t si = 0;
        std::int64_t off = id;
        while (off >= target.coords[si].n) {
            off -= target.coords[si].n;
            ++si;
        }
        CoordSpan& span = target.coords[si];
        float* p = span.value + off;
        const double v0 = static_cast<double>(*p);

        *p = static_cast<float>(v0 + eps);
        const double hp = static_cast<double>(*p) - v0;
        const double lp = target.loss_and_grads();
        const double ap = static_cast<double>(span.grad[off]);

        *p = static_cast<float>(v0 - eps);
        const double hm = v0 - static_cast<double>(*p);
        const double lm = target.loss_and_grads();
        const double am = static_cast<double>(span.grad[off]);

        *p = static_cast<float>(v0);

        const double fd = (lp - lm) / (hp + hm);
        const double a0 = static_cast<double>(analytic[si][static_cast<std::size_t>(off)]);
        const double denom = std::max({std::fabs(a0), std::fabs(fd), tau});

        // symmetric second difference of the analytic gradient: ~eps^2 for a
        // smooth coordinate, jumps by the crossed path weight at a kink
        if (std::fabs(ap + am - 2.0 * a0) > 1e-3 * denom) {
            ++res.skipped;
            continue;
        }

        const double rel = std::fabs(a0 - fd) / denom;
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_coord = span.name + "[" + std::to_string(off) + "]";
        }
        ++res.checked;
    }

    target.loss_and_grads(); // leave gradients consistent with the base point
    return res;
}

// --- prebuilt layer targets ---------------------------------------------------

namespace {

GridTensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    GridTensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(rng.normal() * scale);
    return t;
}

/// Loss = sum(g .* y) with fixed weights g, accumulated in float64.
double weighted_sum(const GridTensor& y, const GridTensor& g) {
    double s = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i)
        s += static_cast<double>(y[i]) * static_cast<double>(g[i]);
    return s;
}

template <typename State, typename Fwd, typename FwdBwd>
OwnedCheckTarget wrap_target(const std::string& name, std::shared_ptr<State> st, Fwd fwd,
                             FwdBwd fwd_bwd, std::vector<CoordSpan> coords) {
    OwnedCheckTarget owned;
    owned.state = st;
    owned.target.name = name;
    owned.target.loss = std::move(fwd);
    owned.target.loss_and_grads = std::move(fwd_bwd);
    owned.target.coords = std::move(coords);
    return owned;
}

CoordSpan param_span(Parameter& p) {
    return CoordSpan{p.name, p.value.data(), p.grad.data(), p.value.numel()};
}

CoordSpan input_span(GridTensor& x, GridTensor& dx) {
    return CoordSpan{"input", x.data(), dx.data(), x.numel()};
}

/// Copy src values into dst's existing buffer so CoordSpan pointers stay valid.
void assign_into(GridTensor& dst, const GridTensor& src) {
    std::copy(src.data(), src.data() + src.numel(), dst.data());
}

} // namespace

OwnedCheckTarget make_layer_check_target(const std::string& layer_name, std::uint64_t seed) {
    Rng rng(mix_seed(seed, fnv1a64(layer_name.data(), layer_name.size())));

    if (layer_name == "conv2d") {
        struct St {
            Conv2d layer;
            GridTensor x, dx, g;
            St(Rng& r) : layer("conv", 1, 4, 3, r) {}
        };
        auto st = std::make_shared<St>(rng);
        st->x = random_tensor({1, 1, 8, 8}, rng);
        st->dx = GridTensor(st->x.shape());
        st->g = random_tensor({1, 4, 8, 8}, rng);
        auto fwd = [st] { return weighted_sum(st->layer.forward(st->x, nullptr), st->g); };
        auto fb = [st] {
            Conv2dCtx ctx;
            GridTensor y = st->layer.forward(st->x, &ctx);
            st->layer.w.zero_grad();
            st->layer.b.zero_grad();
            assign_into(st->dx, st->layer.backward(ctx, st->g));
            return weighted_sum(y, st->g);
        };
        return wrap_target(layer_name, st, fwd, fb,
                           {input_span(st->x, st->dx), param_span(st->layer.w), param_span(st->layer.b)});
    }
    if (layer_name == "relu") {
        struct St {
            GridTensor x, dx, g;
        };
        auto st = std::make_shared<St>();
        st->x = random_tensor({1, 2, 8, 8}, rng);
        st->dx = GridTensor(st->x.shape());
        st->g = random_tensor({1, 2, 8, 8}, rng);
        auto fwd = [st] { return weighted_sum(relu_forward(st->x, nullptr), st->g); };
        auto fb = [st] {
            ReluCtx ctx;
            GridTensor y = relu_forward(st->x, &ctx);
            assign_into(st->dx, relu_backward(ctx, st->g));
            return weighted_sum(y, st->g);
        };
        return wrap_target(layer_name, st, fwd, fb, {input_span(st->x, st->dx)});
    }
    if (layer_name == "linear") {
        struct St {
            Linear layer;
            GridTensor x, dx, g;
            St(Rng& r) : layer("linear", 16, 8, r) {}
        };
        auto st = std::make_shared<St>(rng);
        st->x = random_tensor({6, 16}, rng);
        st->dx = GridTensor(st->x.shape());
        st->g = random_tensor({6, 8}, rng);
        auto fwd = [st] { return weighted_sum(st->layer.forward(st->x, nullptr), st->g); };
        auto fb = [st] {
            LinearCtx ctx;
            GridTensor y = st->layer.forward(st->x, &ctx);
            st->layer.w.zero_grad();
            st->layer.b.zero_grad();
            assign_into(st->dx, st->layer.backward(ctx, st->g));
            return weighted_sum(y, st->g);
        };
        return wrap_target(layer_name, st, fwd, fb,
                           {input_span(st->x, st->dx), param_span(st->layer.w), param_span(st->layer.b)});
    }
    if (layer_name == "layer_norm") {
        struct St {
            LayerNorm layer;
            GridTensor x, dx, g;
            St() : layer("ln", 16) {}
        };
        auto st = std::make_shared<St>();
        st->x = random_tensor({6, 16}, rng);
        st->dx = GridTensor(st->x.shape());
        st->g = random_tensor({6, 16}, rng);
        auto fwd = [st] { return weighted_sum(st->layer.forward(st->x, nullptr), st->g); };
        auto fb = [st] {
            LayerNormCtx ctx;
            GridTensor y = st->layer.forward(st->x, &ctx);
            st->layer.gamma.zero_grad();
            st->layer.beta.zero_grad();
            assign_into(st->dx, st->layer.backward(ctx, st->g));
            return weighted_sum(y, st->g);
        };
        return wrap_target(layer_name, st, fwd, fb,
                           {input_span(st->x, st->dx), param_span(st->layer.gamma), param_span(st->layer.beta)});
    }
    if (layer_name == "spectral_conv") {
        struct St {
            SpectralConv layer;
            GridTensor x, dx, g;
            St(Rng& r) : layer("spectral", 2, 2, 4, r) {}
        };
        auto st = std::make_shared<St>(rng);
        st->x = random_tensor({1, 2, 16, 16}, rng);
        st->dx = GridTensor(st->x.shape());
        st->g = random_tensor({1, 2, 16, 16}, rng);
        auto fwd = [st] { return weighted_sum(st->layer.forward(st->x, nullptr), st->g); };
        auto fb = [st] {
            SpectralConvCtx ctx;
            GridTensor y = st->layer.forward(st->x, &ctx);
            st->layer.w_re.zero_grad();
            st->layer.w_im.zero_grad();
            assign_into(st->dx, st->layer.backward(ctx, st->g));
            return weighted_sum(y, st->g);
        };
        return wrap_target(layer_name, st, fwd, fb,
                           {input_span(st->x, st->dx), param_span(st->layer.w_re), param_span(st->layer.w_im)});
    }
    if (layer_name == "mhsa") {
        struct St {
            Mhsa layer;
            GridTensor x, dx, g;
            St(Rng& r) : layer("attn", 16, 2, r) {}
        };
        auto st = std::make_shared<St>(rng);
        st->x = random_tensor({6, 16}, rng);
        st->dx = GridTensor(st->x.shape());
        st->g = random_tensor({6, 16}, rng);
        auto fwd = [st] { return weighted_sum(st->layer.forward(st->x, nullptr), st->g); };
        auto fb = [st] {
            MhsaCtx ctx;
            GridTensor y = st->layer.forward(st->x, &ctx);
            for (Parameter* p : {&st->layer.wq, &st->layer.wk, &st->layer.wv, &st->layer.wo,
                                 &st->layer.bq, &st->layer.bk, &st->layer.bv, &st->layer.bo})
                p->zero_grad();
            assign_into(st->dx, st->layer.backward(ctx, st->g));
            return weighted_sum(y, st->g);
        };
        std::vector<CoordSpan> coords{input_span(st->x, st->dx)};
        for (Parameter* p : {&st->layer.wq, &st->layer.wk, &st->layer.wv, &st->layer.wo,
                             &st->layer.bq, &st->layer.bk, &st->layer.bv, &st->layer.bo})
            coords.push_back(param_span(*p));
        return wrap_target(layer_name, st, fwd, fb, std::move(coords));
    }
    throw ConfigError("unknown layer '" + layer_name + "' (valid: conv2d, relu, linear, layer_norm, spectral_conv, mhsa)");
}

std::vector<std::string> layer_check_names() {
    return {"conv2d", "relu", "linear", "layer_norm", "spectral_conv", "mhsa"};
}

} // namespace downscale
