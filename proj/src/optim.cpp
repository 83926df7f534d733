#include "downscale/optim.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "downscale/rng.hpp"

namespace fs = std::filesystem;

namespace downscale {

AdamState AdamState::init(const Model& model) {
    AdamState st;
    st.slots.resize(model.params().size());
    for (std::size_t i = 0; i < st.slots.size(); ++i) {
        const std::size_t n = static_cast<std::size_t>(model.params()[i]->value.numel());
        st.slots[i].m.assign(n, 0.0);
        st.slots[i].v.assign(n, 0.0);
    }
    return st;
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state, const TrainingConfig& cfg) {
    if (state.slots.size() != params.size())
        throw ConfigError("AdamState does not match the parameter registry");
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter* p = params[i];
        AdamState::Slot& s = state.slots[i];
        for (std::int64_t j = 0; j < p->value.numel(); ++j) {
            const double g = p->grad[j];
            s.m[static_cast<std::size_t>(j)] = cfg.beta1 * s.m[static_cast<std::size_t>(j)] + (1.0 - cfg.beta1) * g;
            s.v[static_cast<std::size_t>(j)] = cfg.beta2 * s.v[static_cast<std::size_t>(j)] + (1.0 - cfg.beta2) * g * g;
            const double mhat = s.m[static_cast<std::size_t>(j)] / bc1;
            const double vhat = s.v[static_cast<std::size_t>(j)] / bc2;
            const double theta = static_cast<double>(p->value[j]) - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
            p->value[j] = static_cast<float>(theta);
        }
    }
}

void write_history_jsonl(const TrainHistory& h, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
        nlohmann::json j{{"epoch", e + 1}, {"train_loss", h.train_loss[e]}, {"seconds", h.seconds[e]}};
        if (std::isfinite(h.val_loss[e]))
            j["val_loss"] = h.val_loss[e];
        else
            j["val_loss"] = nullptr;
        os << j.dump() << "\n";
    }
}

namespace {

void stack_batch(const std::vector<SamplePair>& set, const std::vector<int>& idx, int i0, int i1,
                 GridTensor& lr, GridTensor& hr) {
    const int b = i1 - i0;
    const int lh = set[0].lr.height(), lw = set[0].lr.width();
    const int hh = set[0].hr.height(), hw = set[0].hr.width();
    lr = GridTensor({b, 1, lh, lw});
    hr = GridTensor({b, 1, hh, hw});
    for (int k = 0; k < b; ++k) {
        const SamplePair& sp = set[static_cast<std::size_t>(idx[static_cast<std::size_t>(i0 + k)])];
        std::copy(sp.lr.data(), sp.lr.data() + sp.lr.numel(), lr.data() + static_cast<std::int64_t>(k) * lh * lw);
        std::copy(sp.hr.data(), sp.hr.data() + sp.hr.numel(), hr.data() + static_cast<std::int64_t>(k) * hh * hw);
    }
}

double eval_mean_loss(const Model& model, const std::vector<SamplePair>& set, const std::vector<int>& idx,
                      int batch_size) {
    if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    std::int64_t n = 0;
    GridTensor lr, hr;
    for (int i0 = 0; i0 < static_cast<int>(idx.size()); i0 += batch_size) {
        const int i1 = std::min<int>(static_cast<int>(idx.size()), i0 + batch_size);
        stack_batch(set, idx, i0, i1, lr, hr);
        sum += model.loss_only(lr, hr) * (i1 - i0);
        n += i1 - i0;
    }
    return sum / static_cast<double>(n);
}

void check_sample_shapes(const std::vector<SamplePair>& set, const Model& model, const char* what) {
    if (set.empty()) throw ConfigError(std::string(what) + " set is empty");
    const int lh = set[0].lr.height(), lw = set[0].lr.width();
    const int hh = set[0].hr.height(), hw = set[0].hr.width();
    if (hh != lh * model.spec.scale_factor || hw != lw * model.spec.scale_factor)
        throw ShapeError(std::string(what) + " pairs have hr " + set[0].hr.shape_str() + " vs lr " +
                         set[0].lr.shape_str() + ", inconsistent with scale " +
                         std::to_string(model.spec.scale_factor));
    for (const SamplePair& sp : set)
        if (sp.lr.height() != lh || sp.lr.width() != lw || sp.hr.height() != hh || sp.hr.width() != hw)
            throw ShapeError(std::string(what) + " set has mixed sample shapes");
}

} // namespace

TrainHistory train(Model& model, const std::vector<SamplePair>& train_set,
                   const std::vector<SamplePair>& val_set, const TrainingConfig& cfg) {
    cfg.validate();
    check_sample_shapes(train_set, model, "train");
    if (!val_set.empty()) check_sample_shapes(val_set, model, "val");

    const int n = static_cast<int>(train_set.size());
    std::vector<int> train_idx, val_idx;
    const std::vector<SamplePair>* val_src = &val_set;
    if (!val_set.empty()) {
        for (int i = 0; i < n; ++i) train_idx.push_back(i);
        for (int i = 0; i < static_cast<int>(val_set.size()); ++i) val_idx.push_back(i);
    } else {
        const int n_val = static_cast<int>(std::floor(cfg.val_fraction * n));
        if (n_val > 0 && n - n_val >= 1) {
            Rng carve(mix_seed(cfg.seed, 0x76616c)); // deterministic validation carve
            std::vector<int> perm = carve.permutation(n);
            train_idx.assign(perm.begin(), perm.end() - n_val);
            val_idx.assign(perm.end() - n_val, perm.end());
            val_src = &train_set;
        } else {
            for (int i = 0; i < n; ++i) train_idx.push_back(i);
        }
    }

    if (!cfg.checkpoint_dir.empty()) fs::create_directories(cfg.checkpoint_dir);

    AdamState state = AdamState::init(model);
    TrainHistory hist;
    GridTensor lr, hr;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<int> order = train_idx;
        if (cfg.shuffle) {
            Rng shuf(mix_seed(cfg.seed, 0x65700000ULL + static_cast<std::uint64_t>(epoch)));
            shuf.shuffle(order);
        }
        double loss_sum = 0.0;
        std::int64_t seen = 0;
        for (int i0 = 0; i0 < static_cast<int>(order.size()); i0 += cfg.batch_size) {
            const int i1 = std::min<int>(static_cast<int>(order.size()), i0 + cfg.batch_size);
            stack_batch(train_set, order, i0, i1, lr, hr);
            const double loss = model.forward_backward(lr, hr); // per-cell mean, so partial batches need no special casing
            adam_step(model.params(), state, cfg);
            loss_sum += loss * (i1 - i0);
            seen += i1 - i0;
        }
        hist.train_loss.push_back(loss_sum / static_cast<double>(seen));
        hist.val_loss.push_back(eval_mean_loss(model, *val_src, val_idx, cfg.batch_size));
        hist.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

        if (!cfg.checkpoint_dir.empty()) {
            save_checkpoint(model, (fs::path(cfg.checkpoint_dir) / "latest.ckpt").string());
            if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
                char name[32];
                std::snprintf(name, sizeof(name), "epoch%04d.ckpt", epoch);
                save_checkpoint(model, (fs::path(cfg.checkpoint_dir) / name).string());
            }
        }
    }
    return hist;
}

TrainHistory fine_tune(Model& model, const std::vector<SamplePair>& target_train_set, double fraction,
                       const TrainingConfig& cfg) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fine-tune fraction must be in (0, 1]");
    const int n = static_cast<int>(target_train_set.size());
    const int keep = static_cast<int>(std::floor(fraction * n));
    if (keep < 1) throw ConfigError("fine-tune subset is empty (fraction " + std::to_string(fraction) +
                                    " of " + std::to_string(n) + " samples)");
    if (keep == n) return train(model, target_train_set, {}, cfg);

    Rng rng(mix_seed(cfg.seed, 0x66740000));
    std::vector<int> perm = rng.permutation(n);
    std::vector<SamplePair> subset;
    subset.reserve(static_cast<std::size_t>(keep));
    for (int i = 0; i < keep; ++i) subset.push_back(target_train_set[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
    return train(model, subset, {}, cfg);
}

} // namespace downscale
