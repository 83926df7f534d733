#include "downscale/arch.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace downscale {

std::string family_name(Family f) {
    switch (f) {
        case Family::CNN: return "cnn";
        case Family::FNO: return "fno";
        case Family::CNN_VIT: return "cnn-vit";
    }
    return "?";
}

Family family_from_string(const std::string& s) {
    std::string t;
    for (char c : s) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (t == "cnn") return Family::CNN;
    if (t == "fno") return Family::FNO;
    if (t == "cnn-vit" || t == "cnn_vit" || t == "cnnvit") return Family::CNN_VIT;
    throw ConfigError("unknown architecture '" + s + "' (valid: cnn, fno, cnn-vit)");
}

ArchitectureSpec ArchitectureSpec::defaults(Family f, int scale) {
    ArchitectureSpec s;
    s.family = f;
    s.scale_factor = scale;
    s.width = 64;
    switch (f) {
        case Family::CNN: s.depth = 16; break;
        case Family::FNO: s.depth = 4; break;
        case Family::CNN_VIT: s.depth = 4; break;
    }
    return s;
}

void ArchitectureSpec::validate() const {
    if (width < 1) throw ConfigError("width must be >= 1, got " + std::to_string(width));
    if (depth < 1) throw ConfigError("depth must be >= 1, got " + std::to_string(depth));
    if (scale_factor != 2 && scale_factor != 8)
        throw ConfigError("scale_factor must be 2 or 8, got " + std::to_string(scale_factor));
    if (family == Family::FNO && modes < 1)
        throw ConfigError("modes must be >= 1, got " + std::to_string(modes));
    if (family == Family::CNN_VIT) {
        if (heads < 1) throw ConfigError("heads must be >= 1");
        if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
        if (hidden_dim % heads != 0)
            throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " not divisible by heads " +
                              std::to_string(heads));
        if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
        if (hr_size < patch_size || hr_size % patch_size != 0)
            throw ConfigError("hr_size " + std::to_string(hr_size) + " not divisible by patch_size " +
                              std::to_string(patch_size));
    }
}

nlohmann::json ArchitectureSpec::to_json() const {
    return nlohmann::json{{"family", family_name(family)},
                          {"scale_factor", scale_factor},
                          {"width", width},
                          {"depth", depth},
                          {"modes", modes},
                          {"heads", heads},
                          {"hidden_dim", hidden_dim},
                          {"patch_size", patch_size},
                          {"hr_size", hr_size}};
}

ArchitectureSpec ArchitectureSpec::from_json(const nlohmann::json& j) {
    ArchitectureSpec base;
    try {
        base = defaults(family_from_string(j.at("family").get<std::string>()),
                        j.value("scale_factor", 2));
        base.width = j.value("width", base.width);
        base.depth = j.value("depth", base.depth);
        base.modes = j.value("modes", base.modes);
        base.heads = j.value("heads", base.heads);
        base.hidden_dim = j.value("hidden_dim", base.hidden_dim);
        base.patch_size = j.value("patch_size", base.patch_size);
        base.hr_size = j.value("hr_size", base.hr_size);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("architecture spec: ") + e.what());
    }
    base.validate();
    return base;
}

namespace {

void add_into(GridTensor& a, const GridTensor& b) {
    if (!a.same_shape(b)) throw ShapeError("elementwise add: shape mismatch");
    for (std::int64_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

// --- residual CNN ---------------------------------------------------------------

struct CnnCtx final : NetCtx {
    Conv2dCtx in_conv;
    struct Block {
        Conv2dCtx c1, c2;
        ReluCtx r;
    };
    std::vector<Block> blocks;
    Conv2dCtx out_conv;
};

struct CnnNet final : Net {
    Conv2d in_conv;
    struct Block {
        Conv2d conv1, conv2;
    };
    std::vector<Block> blocks;
    Conv2d out_conv;

    CnnNet(const ArchitectureSpec& s, Rng& rng) : in_conv("input_conv", 1, s.width, 3, rng) {
        blocks.reserve(static_cast<std::size_t>(s.depth));
        for (int i = 0; i < s.depth; ++i) {
            const std::string p = "block" + std::to_string(i + 1);
            blocks.push_back(Block{Conv2d(p + ".conv1", s.width, s.width, 3, rng),
                                   Conv2d(p + ".conv2", s.width, s.width, 3, rng)});
        }
        out_conv = Conv2d("output_conv", s.width, 1, 3, rng);
    }

    GridTensor forward_hr(const GridTensor& x, std::unique_ptr<NetCtx>* ctx) const override {
        CnnCtx* c = nullptr;
        if (ctx) {
            auto owned = std::make_unique<CnnCtx>();
            c = owned.get();
            c->blocks.resize(blocks.size());
            *ctx = std::move(owned);
        }
        GridTensor h = in_conv.forward(x, c ? &c->in_conv : nullptr);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            auto* bc = c ? &c->blocks[i] : nullptr;
            GridTensor t = blocks[i].conv1.forward(h, bc ? &bc->c1 : nullptr);
            t = relu_forward(t, bc ? &bc->r : nullptr);
            t = blocks[i].conv2.forward(t, bc ? &bc->c2 : nullptr);
            add_into(h, t); // identity skip
        }
        return out_conv.forward(h, c ? &c->out_conv : nullptr);
    }

    GridTensor backward(NetCtx& ctx, const GridTensor& dy) override {
        auto& c = static_cast<CnnCtx&>(ctx);
        GridTensor dh = out_conv.backward(c.out_conv, dy);
        for (std::size_t i = blocks.size(); i-- > 0;) {
            GridTensor dt = blocks[i].conv2.backward(c.blocks[i].c2, dh);
            dt = relu_backward(c.blocks[i].r, dt);
            GridTensor dbranch = blocks[i].conv1.backward(c.blocks[i].c1, dt);
            add_into(dh, dbranch);
        }
        return in_conv.backward(c.in_conv, dh);
    }

    void collect_params(std::vector<Parameter*>& out) override {
        out.push_back(&in_conv.w);
        out.push_back(&in_conv.b);
        for (auto& b : blocks) {
            out.push_back(&b.conv1.w);
            out.push_back(&b.conv1.b);
            out.push_back(&b.conv2.w);
            out.push_back(&b.conv2.b);
        }
        out.push_back(&out_conv.w);
        out.push_back(&out_conv.b);
    }
};

// --- FNO --------------------------------------------------------------------------

struct FnoCtx final : NetCtx {
    Conv2dCtx lift;
    struct Block {
        SpectralConvCtx spec;
        Conv2dCtx skip;
        ReluCtx r;
        bool activated = false;
    };
    std::vector<Block> blocks;
    Conv2dCtx proj;
};

struct FnoNet final : Net {
    Conv2d lift;
    struct Block {
        SpectralConv spectral;
        Conv2d skip;
    };
    std::vector<Block> blocks;
    Conv2d proj;

    FnoNet(const ArchitectureSpec& s, Rng& rng) : lift("lift", 1, s.width, 1, rng) {
        blocks.reserve(static_cast<std::size_t>(s.depth));
        for (int i = 0; i < s.depth; ++i) {
            const std::string p = "fourier" + std::to_string(i + 1);
            blocks.push_back(Block{SpectralConv(p + ".spectral", s.width, s.width, s.modes, rng),
                                   Conv2d(p + ".skip", s.width, s.width, 1, rng)});
        }
        proj = Conv2d("proj", s.width, 1, 1, rng);
    }

    GridTensor forward_hr(const GridTensor& x, std::unique_ptr<NetCtx>* ctx) const override {
        FnoCtx* c = nullptr;
        if (ctx) {
            auto owned = std::make_unique<FnoCtx>();
            c = owned.get();
            c->blocks.resize(blocks.size());
            *ctx = std::move(owned);
        }
        GridTensor h = lift.forward(x, c ? &c->lift : nullptr);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            auto* bc = c ? &c->blocks[i] : nullptr;
            GridTensor s = blocks[i].spectral.forward(h, bc ? &bc->spec : nullptr);
            GridTensor p = blocks[i].skip.forward(h, bc ? &bc->skip : nullptr);
            add_into(s, p);
            const bool act = i + 1 < blocks.size(); // last block unactivated
            if (act) s = relu_forward(s, bc ? &bc->r : nullptr);
            if (bc) bc->activated = act;
            h = std::move(s);
        }
        return proj.forward(h, c ? &c->proj : nullptr);
    }

    GridTensor backward(NetCtx& ctx, const GridTensor& dy) override {
        auto& c = static_cast<FnoCtx&>(ctx);
        GridTensor dh = proj.backward(c.proj, dy);
        for (std::size_t i = blocks.size(); i-- > 0;) {
            GridTensor dt = c.blocks[i].activated ? relu_backward(c.blocks[i].r, dh) : std::move(dh);
            GridTensor dx1 = blocks[i].spectral.backward(c.blocks[i].spec, dt);
            GridTensor dx2 = blocks[i].skip.backward(c.blocks[i].skip, dt);
            add_into(dx1, dx2);
            dh = std::move(dx1);
        }
        return lift.backward(c.lift, dh);
    }

    void collect_params(std::vector<Parameter*>& out) override {
        out.push_back(&lift.w);
        out.push_back(&lift.b);
        for (auto& b : blocks) {
            out.push_back(&b.spectral.w_re);
            out.push_back(&b.spectral.w_im);
            out.push_back(&b.skip.w);
            out.push_back(&b.skip.b);
        }
        out.push_back(&proj.w);
        out.push_back(&proj.b);
    }
};

// --- CNN-ViT hybrid ------------------------------------------------------------------

struct VitCtx final : NetCtx {
    Conv2dCtx stem1, stem2;
    ReluCtx r1, r2;
    LinearCtx embed;
    int b = 0, ty = 0, tx = 0;
    struct Block {
        LayerNormCtx ln1, ln2;
        MhsaCtx attn;
        LinearCtx ff1, ff2;
        ReluCtx ffr;
    };
    std::vector<Block> blocks;
    LinearCtx unpatch;
    Conv2dCtx head;
};

struct VitNet final : Net {
    int width, patch, hidden, token_grid;
    Conv2d stem1, stem2;
    Linear embed;
    Parameter pos_embed;
    struct Block {
        LayerNorm ln1;
        Mhsa attn;
        LayerNorm ln2;
        Linear ff1, ff2;
    };
    std::vector<Block> blocks;
    Linear unpatch;
    Conv2d head;

    VitNet(const ArchitectureSpec& s, Rng& rng)
        : width(s.width), patch(s.patch_size), hidden(s.hidden_dim), token_grid(s.hr_size / s.patch_size),
          stem1("stem1", 1, s.width, 3, rng), stem2("stem2", s.width, s.width, 3, rng),
          embed("patch_embed", s.width * s.patch_size * s.patch_size, s.hidden_dim, rng) {
        pos_embed = Parameter("pos_embed", GridTensor({token_grid * token_grid, s.hidden_dim}));
        for (std::int64_t i = 0; i < pos_embed.value.numel(); ++i)
            pos_embed.value[i] = static_cast<float>(rng.normal() * 0.02);
        blocks.reserve(static_cast<std::size_t>(s.depth));
        for (int i = 0; i < s.depth; ++i) {
            const std::string p = "vit" + std::to_string(i + 1);
            Block b{LayerNorm(p + ".ln1", s.hidden_dim),
                    Mhsa(p + ".attn", s.hidden_dim, s.heads, rng),
                    LayerNorm(p + ".ln2", s.hidden_dim),
                    Linear(p + ".ff1", s.hidden_dim, 4 * s.hidden_dim, rng),
                    Linear(p + ".ff2", 4 * s.hidden_dim, s.hidden_dim, rng)};
            blocks.push_back(std::move(b));
        }
        unpatch = Linear("unpatch", s.hidden_dim, s.width * s.patch_size * s.patch_size, rng);
        head = Conv2d("head", s.width, 1, 3, rng);
    }

    void check_spatial(int H, int W) const {
        if (H % patch != 0 || W % patch != 0)
            throw ShapeError("cnn-vit: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                             " not divisible by patch_size " + std::to_string(patch));
        if (H / patch > token_grid || W / patch > token_grid)
            throw ShapeError("cnn-vit: token grid " + std::to_string(H / patch) + "x" + std::to_string(W / patch) +
                             " exceeds the positional grid " + std::to_string(token_grid) + "x" +
                             std::to_string(token_grid) + " (hr_size too small)");
    }

    // (B, width, H, W) -> (B*T, width*p*p); also the adjoint of scatter_tokens
    GridTensor gather_tokens(const GridTensor& f, int Ty, int Tx) const {
        const int B = f.dim(0);
        const int T = Ty * Tx, cols = width * patch * patch;
        GridTensor tok({B * T, cols});
        for (int b = 0; b < B; ++b)
            for (int ty = 0; ty < Ty; ++ty)
                for (int tx = 0; tx < Tx; ++tx) {
                    const int row = b * T + ty * Tx + tx;
                    for (int c = 0; c < width; ++c)
                        for (int py = 0; py < patch; ++py)
                            for (int px = 0; px < patch; ++px)
                                tok.at(row, (c * patch + py) * patch + px) =
                                    f.at(b, c, ty * patch + py, tx * patch + px);
                }
        return tok;
    }

    GridTensor scatter_tokens(const GridTensor& tok, int B, int Ty, int Tx) const {
        const int T = Ty * Tx;
        GridTensor f({B, width, Ty * patch, Tx * patch});
        for (int b = 0; b < B; ++b)
            for (int ty = 0; ty < Ty; ++ty)
                for (int tx = 0; tx < Tx; ++tx) {
                    const int row = b * T + ty * Tx + tx;
                    for (int c = 0; c < width; ++c)
                        for (int py = 0; py < patch; ++py)
                            for (int px = 0; px < patch; ++px)
                                f.at(b, c, ty * patch + py, tx * patch + px) =
                                    tok.at(row, (c * patch + py) * patch + px);
                }
        return f;
    }

    GridTensor forward_hr(const GridTensor& x, std::unique_ptr<NetCtx>* ctx) const override {
        if (x.rank() != 4) throw ShapeError("cnn-vit expects a 4-D tensor, got " + x.shape_str());
        const int B = x.dim(0), H = x.dim(2), W = x.dim(3);
        check_spatial(H, W);
        const int Ty = H / patch, Tx = W / patch, T = Ty * Tx;

        VitCtx* c = nullptr;
        if (ctx) {
            auto owned = std::make_unique<VitCtx>();
            c = owned.get();
            c->blocks.resize(blocks.size());
            c->b = B;
            c->ty = Ty;
            c->tx = Tx;
            *ctx = std::move(owned);
        }

        GridTensor s = stem1.forward(x, c ? &c->stem1 : nullptr);
        s = relu_forward(s, c ? &c->r1 : nullptr);
        s = stem2.forward(s, c ? &c->stem2 : nullptr);
        s = relu_forward(s, c ? &c->r2 : nullptr);

        GridTensor tok = gather_tokens(s, Ty, Tx);
        GridTensor e = embed.forward(tok, c ? &c->embed : nullptr);
        // learned positional embeddings, top-left crop of the token_grid^2 table
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T; ++t) {
                const int prow = (t / Tx) * token_grid + (t % Tx);
                for (int d = 0; d < hidden; ++d)
                    e.at(b * T + t, d) += pos_embed.value.at(prow, d);
            }

        for (std::size_t i = 0; i < blocks.size(); ++i) {
            auto* bc = c ? &c->blocks[i] : nullptr;
            GridTensor n1 = blocks[i].ln1.forward(e, bc ? &bc->ln1 : nullptr);
            GridTensor a = blocks[i].attn.forward(n1.reshaped({B, T, hidden}), bc ? &bc->attn : nullptr);
            add_into(e, a.reshaped({B * T, hidden}));
            GridTensor n2 = blocks[i].ln2.forward(e, bc ? &bc->ln2 : nullptr);
            GridTensor f = blocks[i].ff1.forward(n2, bc ? &bc->ff1 : nullptr);
            f = relu_forward(f, bc ? &bc->ffr : nullptr);
            f = blocks[i].ff2.forward(f, bc ? &bc->ff2 : nullptr);
            add_into(e, f);
        }

        GridTensor out_tok = unpatch.forward(e, c ? &c->unpatch : nullptr);
        GridTensor fmap = scatter_tokens(out_tok, B, Ty, Tx);
        return head.forward(fmap, c ? &c->head : nullptr);
    }

    GridTensor backward(NetCtx& ctx, const GridTensor& dy) override {
        auto& c = static_cast<VitCtx&>(ctx);
        const int B = c.b, Ty = c.ty, Tx = c.tx, T = Ty * Tx;

        GridTensor dfmap = head.backward(c.head, dy);
        GridTensor dtok = gather_tokens(dfmap, Ty, Tx);
        GridTensor de = unpatch.backward(c.unpatch, dtok);

        for (std::size_t i = blocks.size(); i-- > 0;) {
            auto& bc = c.blocks[i];
            GridTensor df = blocks[i].ff2.backward(bc.ff2, de);
            df = relu_backward(bc.ffr, df);
            df = blocks[i].ff1.backward(bc.ff1, df);
            GridTensor dn2 = blocks[i].ln2.backward(bc.ln2, df);
            add_into(de, dn2);
            GridTensor da = blocks[i].attn.backward(bc.attn, de.reshaped({B, T, hidden}));
            GridTensor dn1 = blocks[i].ln1.backward(bc.ln1, da.reshaped({B * T, hidden}));
            add_into(de, dn1);
        }

        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T; ++t) {
                const int prow = (t / Tx) * token_grid + (t % Tx);
                for (int d = 0; d < hidden; ++d)
                    pos_embed.grad.at(prow, d) += de.at(b * T + t, d);
            }

        GridTensor dtok_in = embed.backward(c.embed, de);
        GridTensor ds = scatter_tokens(dtok_in, B, Ty, Tx);
        ds = relu_backward(c.r2, ds);
        ds = stem2.backward(c.stem2, ds);
        ds = relu_backward(c.r1, ds);
        return stem1.backward(c.stem1, ds);
    }

    void collect_params(std::vector<Parameter*>& out) override {
        out.push_back(&stem1.w);
        out.push_back(&stem1.b);
        out.push_back(&stem2.w);
        out.push_back(&stem2.b);
        out.push_back(&embed.w);
        out.push_back(&embed.b);
        out.push_back(&pos_embed);
        for (auto& b : blocks) {
            out.push_back(&b.ln1.gamma);
            out.push_back(&b.ln1.beta);
            out.push_back(&b.attn.wq);
            out.push_back(&b.attn.wk);
            out.push_back(&b.attn.wv);
            out.push_back(&b.attn.wo);
            out.push_back(&b.attn.bq);
            out.push_back(&b.attn.bk);
            out.push_back(&b.attn.bv);
            out.push_back(&b.attn.bo);
            out.push_back(&b.ln2.gamma);
            out.push_back(&b.ln2.beta);
            out.push_back(&b.ff1.w);
            out.push_back(&b.ff1.b);
            out.push_back(&b.ff2.w);
            out.push_back(&b.ff2.b);
        }
        out.push_back(&unpatch.w);
        out.push_back(&unpatch.b);
        out.push_back(&head.w);
        out.push_back(&head.b);
    }
};

GridTensor batch_slice(const GridTensor& t, int b0, int b1) {
    std::vector<int> shape = t.shape();
    const std::int64_t per = t.numel() / t.dim(0);
    shape[0] = b1 - b0;
    GridTensor out(shape);
    std::copy(t.data() + b0 * per, t.data() + b1 * per, out.data());
    return out;
}

// activation memory cap: backward contexts live per micro-batch, not per batch
constexpr int kMicroBatch = 8;

} // namespace

Parameter* Model::find(const std::string& name) {
    for (Parameter* p : params_)
        if (p->name == name) return p;
    return nullptr;
}

void Model::zero_grads() {
    for (Parameter* p : params_) p->zero_grad();
}

GridTensor Model::forward(const GridTensor& lr) const {
    if (lr.rank() != 4) throw ShapeError("forward expects (batch, 1, h, w), got " + lr.shape_str());
    if (lr.dim(1) != 1) throw ShapeError("models are single-channel; got " + std::to_string(lr.dim(1)) + " channels");
    return net_->forward_hr(bicubic_upsample(lr, spec.scale_factor), nullptr);
}

GridTensor Model::forward_hr(const GridTensor& hr_in) const {
    return net_->forward_hr(hr_in, nullptr);
}

double Model::forward_backward(const GridTensor& lr, const GridTensor& hr_target) {
    if (lr.rank() != 4 || hr_target.rank() != 4)
        throw ShapeError("forward_backward expects 4-D lr and hr tensors");
    if (lr.dim(1) != 1) throw ShapeError("models are single-channel");
    const int B = lr.dim(0);
    if (hr_target.dim(0) != B || hr_target.dim(1) != 1 ||
        hr_target.dim(2) != lr.dim(2) * spec.scale_factor || hr_target.dim(3) != lr.dim(3) * spec.scale_factor)
        throw ShapeError("hr target " + hr_target.shape_str() + " does not match lr " + lr.shape_str() +
                         " at scale " + std::to_string(spec.scale_factor));

    zero_grads();
    const std::int64_t n_total = hr_target.numel();
    double sq_sum = 0.0;
    for (int b0 = 0; b0 < B; b0 += kMicroBatch) {
        const int b1 = std::min(B, b0 + kMicroBatch);
        GridTensor up = bicubic_upsample(batch_slice(lr, b0, b1), spec.scale_factor);
        GridTensor tgt = batch_slice(hr_target, b0, b1);
        std::unique_ptr<NetCtx> ctx;
        GridTensor pred = net_->forward_hr(up, &ctx);
        GridTensor dy(pred.shape());
        const float g = 2.0f / static_cast<float>(n_total);
        for (std::int64_t i = 0; i < pred.numel(); ++i) {
            const double r = static_cast<double>(pred[i]) - tgt[i];
            sq_sum += r * r;
            dy[i] = g * static_cast<float>(r);
        }
        net_->backward(*ctx, dy);
    }
    return sq_sum / static_cast<double>(n_total);
}

double Model::loss_only(const GridTensor& lr, const GridTensor& hr_target) const {
    const int B = lr.dim(0);
    const std::int64_t n_total = hr_target.numel();
    double sq_sum = 0.0;
    for (int b0 = 0; b0 < B; b0 += kMicroBatch) {
        const int b1 = std::min(B, b0 + kMicroBatch);
        GridTensor up = bicubic_upsample(batch_slice(lr, b0, b1), spec.scale_factor);
        GridTensor tgt = batch_slice(hr_target, b0, b1);
        GridTensor pred = net_->forward_hr(up, nullptr);
        for (std::int64_t i = 0; i < pred.numel(); ++i) {
            const double r = static_cast<double>(pred[i]) - tgt[i];
            sq_sum += r * r;
        }
    }
    return sq_sum / static_cast<double>(n_total);
}

Model build_model(const ArchitectureSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    m.seed = seed;
    Rng rng(mix_seed(seed, 0xa2c1));
    switch (spec.family) {
        case Family::CNN: m.net_ = std::make_unique<CnnNet>(spec, rng); break;
        case Family::FNO: m.net_ = std::make_unique<FnoNet>(spec, rng); break;
        case Family::CNN_VIT: m.net_ = std::make_unique<VitNet>(spec, rng); break;
    }
    m.net_->collect_params(m.params_);
    return m;
}

std::int64_t parameter_count(const Model& m) {
    std::int64_t n = 0;
    for (const Parameter* p : m.params()) n += p->value.numel();
    return n;
}

// --- checkpoints ---------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[5] = {'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const Model& m, const std::string& path) {
    nlohmann::json params = nlohmann::json::array();
    std::int64_t offset = 0;
    for (const Parameter* p : m.params()) {
        params.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}});
        offset += p->value.numel() * 4;
    }
    nlohmann::json header{{"format", "CKPT1"},
                          {"spec", m.spec.to_json()},
                          {"seed", m.seed},
                          {"meta", m.meta},
                          {"params", params}};
    const std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kCkptMagic, 5);
    const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
    const unsigned char lb[4] = {static_cast<unsigned char>(len), static_cast<unsigned char>(len >> 8),
                                 static_cast<unsigned char>(len >> 16), static_cast<unsigned char>(len >> 24)};
    os.write(reinterpret_cast<const char*>(lb), 4);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Parameter* p : m.params())
        os.write(reinterpret_cast<const char*>(p->value.data()), p->value.numel() * 4);
    if (!os) throw IoError("write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path);
    char magic[5];
    if (!is.read(magic, 5) || std::memcmp(magic, kCkptMagic, 5) != 0)
        throw ParseError(path + ": bad CKPT1 magic");
    unsigned char lb[4];
    if (!is.read(reinterpret_cast<char*>(lb), 4)) throw ParseError(path + ": truncated header length");
    const std::uint32_t len = static_cast<std::uint32_t>(lb[0]) | (static_cast<std::uint32_t>(lb[1]) << 8) |
                              (static_cast<std::uint32_t>(lb[2]) << 16) | (static_cast<std::uint32_t>(lb[3]) << 24);
    std::string hs(len, '\0');
    if (!is.read(hs.data(), len)) throw ParseError(path + ": truncated JSON header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }

    Model m = build_model(ArchitectureSpec::from_json(header.at("spec")), header.value("seed", std::uint64_t{0}));
    m.meta = header.value("meta", nlohmann::json::object());

    const auto& table = header.at("params");
    if (table.size() != m.params_.size())
        throw ParseError(path + ": parameter table size mismatch");
    for (std::size_t i = 0; i < m.params_.size(); ++i) {
        Parameter* p = m.params_[i];
        const auto& row = table[i];
        if (row.at("name").get<std::string>() != p->name)
            throw ParseError(path + ": parameter " + std::to_string(i) + " name mismatch (" +
                             row.at("name").get<std::string>() + " vs " + p->name + ")");
        if (row.at("shape").get<std::vector<int>>() != p->value.shape())
            throw ParseError(path + ": parameter " + p->name + " shape mismatch");
        if (!is.read(reinterpret_cast<char*>(p->value.data()), p->value.numel() * 4))
            throw ParseError(path + ": truncated payload at " + p->name);
    }
    return m;
}

} // namespace downscale
