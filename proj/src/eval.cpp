#include "downscale/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "downscale/optim.hpp"
#include "downscale/rng.hpp"

namespace fs = std::filesystem;

namespace downscale {

namespace {

/// Per-sample metric partials; pairwise-combined in sample order.
struct Partial {
    double sse = 0.0;    // sum (t - p)^2
    double sum_t = 0.0;  // sum t
    double sum_t2 = 0.0; // sum t^2
    std::int64_t n = 0;
};

Partial combine(const Partial& a, const Partial& b) {
    return Partial{a.sse + b.sse, a.sum_t + b.sum_t, a.sum_t2 + b.sum_t2, a.n + b.n};
}

Partial pairwise_reduce(std::vector<Partial> v) {
    if (v.empty()) return {};
    while (v.size() > 1) {
        std::vector<Partial> next;
        next.reserve((v.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < v.size(); i += 2) next.push_back(combine(v[i], v[i + 1]));
        if (v.size() % 2 == 1) next.push_back(v.back());
        v = std::move(next);
    }
    return v[0];
}

Partial accumulate_pair(const GridTensor& pred, const GridTensor& target) {
    Partial p;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const double t = target[i];
        const double d = t - static_cast<double>(pred[i]);
        p.sse += d * d;
        p.sum_t += t;
        p.sum_t2 += t * t;
    }
    p.n = pred.numel();
    return p;
}

double r2_from(const Partial& p) {
    const double ss_tot = p.sum_t2 - p.sum_t * p.sum_t / static_cast<double>(p.n);
    if (!(ss_tot > 1e-12)) throw MetricError("zero target variance over the evaluation set");
    return 1.0 - p.sse / ss_tot;
}

} // namespace

double mse(const GridTensor& pred, const GridTensor& target) {
    if (!pred.same_shape(target))
        throw ShapeError("mse: shape mismatch " + pred.shape_str() + " vs " + target.shape_str());
    const Partial p = accumulate_pair(pred, target);
    return p.sse / static_cast<double>(p.n);
}

double r2(const GridTensor& pred, const GridTensor& target) {
    if (!pred.same_shape(target))
        throw ShapeError("r2: shape mismatch " + pred.shape_str() + " vs " + target.shape_str());
    return r2_from(accumulate_pair(pred, target));
}

GridTensor Predictor::predict(const GridTensor& lr_norm) const {
    if (kind == Kind::Bicubic) return bicubic_upsample(lr_norm, scale);
    return model->forward(lr_norm);
}

namespace {

const NormStats& stats_for(const std::map<std::string, NormStats>& stats, const std::string& var) {
    auto it = stats.find(var);
    if (it == stats.end()) throw StatsError("no training-time stats for variable '" + var + "'");
    return it->second;
}

GridTensor as_batch1(const GridTensor& field) {
    return field.reshaped({1, 1, field.height(), field.width()});
}

Partial eval_one(const Predictor& p, const SamplePair& sp, const std::map<std::string, NormStats>& stats,
                 GridTensor* pred_out = nullptr) {
    const NormStats& ns = stats_for(stats, sp.variable);
    GridTensor nlr = normalize(as_batch1(sp.lr), ns);
    GridTensor nhr = normalize(as_batch1(sp.hr), ns);
    GridTensor pred = p.predict(nlr);
    if (!pred.same_shape(nhr))
        throw ShapeError("prediction shape " + pred.shape_str() + " != target " + nhr.shape_str());
    if (pred_out) *pred_out = pred;
    return accumulate_pair(pred, nhr);
}

} // namespace

EvalResult evaluate_model(const Predictor& p, const std::vector<SamplePair>& eval_set,
                          const std::map<std::string, NormStats>& stats, int threads) {
    if (eval_set.empty()) throw ConfigError("evaluation set is empty");
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min<int>(threads, static_cast<int>(eval_set.size())));

    std::vector<Partial> partials(eval_set.size());
    if (threads == 1) {
        for (std::size_t i = 0; i < eval_set.size(); ++i) partials[i] = eval_one(p, eval_set[i], stats);
    } else {
        std::vector<std::thread> pool;
        std::exception_ptr err;
        std::mutex err_mu;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = static_cast<std::size_t>(t); i < eval_set.size();
                         i += static_cast<std::size_t>(threads))
                        partials[i] = eval_one(p, eval_set[i], stats);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(err_mu);
                    if (!err) err = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        if (err) std::rethrow_exception(err);
    }

    const Partial total = pairwise_reduce(partials);
    EvalResult res;
    res.mse = total.sse / static_cast<double>(total.n);
    res.r2 = r2_from(total);
    res.n_samples = static_cast<std::int64_t>(eval_set.size());
    res.n_cells = total.n;
    return res;
}

void emit_error_grids(const Predictor& p, const std::vector<SamplePair>& eval_set,
                      const std::map<std::string, NormStats>& stats, const std::string& out_dir) {
    if (eval_set.empty()) throw ConfigError("evaluation set is empty");
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        GridTensor pred;
        eval_one(p, eval_set[i], stats, &pred);
        const NormStats& ns = stats_for(stats, eval_set[i].variable);
        GridTensor nhr = normalize(as_batch1(eval_set[i].hr), ns);
        GridTensor abserr(pred.shape());
        for (std::int64_t k = 0; k < pred.numel(); ++k) abserr[k] = std::fabs(pred[k] - nhr[k]);
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%05zu_pred.grd", i);
        write_grd1((fs::path(out_dir) / name).string(), pred.reshaped({pred.height(), pred.width()}));
        std::snprintf(name, sizeof(name), "sample_%05zu_abserr.grd", i);
        write_grd1((fs::path(out_dir) / name).string(), abserr.reshaped({abserr.height(), abserr.width()}));
    }
}

// --- protocol spec -------------------------------------------------------------------

void ProtocolSpec::validate() const {
    if (kind != "spatial" && kind != "variable" && kind != "product" && kind != "two-simulation")
        throw ConfigError("unknown protocol kind '" + kind +
                          "' (valid: spatial, variable, product, two-simulation)");
    if (train_manifests.empty()) throw ConfigError("train_manifests must be non-empty");
    if (eval_manifest.empty()) throw ConfigError("eval_manifest is required");
    if (scales.empty()) throw ConfigError("scales must be non-empty");
    for (int s : scales)
        if (s != 2 && s != 8) throw ConfigError("scales entries must be 2 or 8, got " + std::to_string(s));
    if (modes.empty()) throw ConfigError("modes must be non-empty");
    for (const auto& m : modes)
        if (m != "zero-shot" && m != "fine-tune")
            throw ConfigError("modes entries must be zero-shot or fine-tune, got '" + m + "'");
    if (models.empty()) throw ConfigError("models must be non-empty");
    for (const auto& m : models)
        if (m != "cnn" && m != "fno" && m != "cnn-vit" && m != "bicubic")
            throw ConfigError("models entries must be cnn, fno, cnn-vit or bicubic, got '" + m + "'");
    if (!(fine_tune_fraction > 0.0 && fine_tune_fraction <= 1.0))
        throw ConfigError("fine_tune_fraction must be in (0, 1]");
    if (hr_patch < 4) throw ConfigError("hr_patch must be >= 4");
    if (kind == "variable" && held_out_variable.empty())
        throw ConfigError("variable protocol requires held_out.variable");
    if ((kind == "product" || kind == "two-simulation") && held_out_product.empty())
        throw ConfigError(kind + " protocol requires held_out.product");
    if (kind == "spatial") held_out_region.validate();
    if (!has_training && checkpoint_dir.empty())
        throw ConfigError("either a training section or checkpoint_dir is required");
}

nlohmann::json ProtocolSpec::to_json() const {
    nlohmann::json held = nlohmann::json::object();
    if (kind == "spatial")
        held["region"] = {{"lat_min", held_out_region.lat_min},
                          {"lat_max", held_out_region.lat_max},
                          {"lon_min", held_out_region.lon_min},
                          {"lon_max", held_out_region.lon_max}};
    else if (kind == "variable")
        held["variable"] = held_out_variable;
    else
        held["product"] = held_out_product;

    nlohmann::json j{{"kind", kind},
                     {"train_manifests", train_manifests},
                     {"eval_manifest", eval_manifest},
                     {"held_out", held},
                     {"scales", scales},
                     {"modes", modes},
                     {"fine_tune_fraction", fine_tune_fraction},
                     {"models", models},
                     {"seed", seed},
                     {"hr_patch", hr_patch},
                     {"emit_error_grids", emit_grids}};
    if (has_training) {
        j["training"] = {{"epochs", train_epochs},
                         {"batch_size", train_batch_size},
                         {"learning_rate", train_learning_rate},
                         {"arch", arch_overrides}};
        j["fine_tune"] = {{"epochs", fine_tune_epochs}};
    }
    if (!checkpoint_dir.empty()) j["checkpoint_dir"] = checkpoint_dir;
    return j;
}

ProtocolSpec ProtocolSpec::from_json(const nlohmann::json& j) {
    ProtocolSpec s;
    try {
        s.kind = j.at("kind").get<std::string>();
        s.train_manifests = j.at("train_manifests").get<std::vector<std::string>>();
        s.eval_manifest = j.at("eval_manifest").get<std::string>();
        const auto held = j.value("held_out", nlohmann::json::object());
        if (held.contains("region")) {
            const auto& r = held.at("region");
            s.held_out_region = Region{r.at("lat_min").get<double>(), r.at("lat_max").get<double>(),
                                       r.at("lon_min").get<double>(), r.at("lon_max").get<double>()};
        }
        s.held_out_variable = held.value("variable", "");
        s.held_out_product = held.value("product", "");
        s.scales = j.value("scales", s.scales);
        if (j.contains("modes"))
            s.modes = j.at("modes").get<std::vector<std::string>>();
        else if (j.contains("mode"))
            s.modes = {j.at("mode").get<std::string>()};
        else if (s.kind == "two-simulation")
            s.modes = {"zero-shot", "fine-tune"};
        s.fine_tune_fraction = j.value("fine_tune_fraction", 0.30);
        s.models = j.value("models", s.models);
        s.seed = j.value("seed", std::uint64_t{0});
        s.hr_patch = j.value("hr_patch", 64);
        s.emit_grids = j.value("emit_error_grids", false);
        s.checkpoint_dir = j.value("checkpoint_dir", "");
        if (j.contains("training")) {
            s.has_training = true;
            const auto& t = j.at("training");
            s.train_epochs = t.value("epochs", 10);
            s.train_batch_size = t.value("batch_size", 32);
            s.train_learning_rate = t.value("learning_rate", 0.001);
            s.arch_overrides = t.value("arch", nlohmann::json::object());
        }
        if (j.contains("fine_tune")) s.fine_tune_epochs = j.at("fine_tune").value("epochs", 5);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("protocol spec: ") + e.what());
    }
    s.validate();
    return s;
}

ProtocolSpec ProtocolSpec::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open protocol spec " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return from_json(j);
}

// --- leakage guards ---------------------------------------------------------------------

void check_protocol_guards(const ProtocolSpec& spec, const std::vector<DatasetManifest>& train,
                           const DatasetManifest& eval_manifest) {
    if (spec.kind == "spatial") {
        if (!spec.held_out_region.contains(eval_manifest.region))
            throw ProtocolError("eval manifest region is not inside the held-out region");
        for (const auto& tm : train) {
            if (tm.region.overlaps(spec.held_out_region))
                throw ProtocolError("held-out region overlaps the training region of '" + tm.name + "'");
            if (tm.region.overlaps(eval_manifest.region))
                throw ProtocolError("eval region overlaps the training region of '" + tm.name + "'");
        }
    } else if (spec.kind == "variable") {
        const auto& v = spec.held_out_variable;
        if (std::find(eval_manifest.variables.begin(), eval_manifest.variables.end(), v) ==
            eval_manifest.variables.end())
            throw ProtocolError("eval manifest does not provide the held-out variable '" + v + "'");
        for (const auto& tm : train)
            if (std::find(tm.variables.begin(), tm.variables.end(), v) != tm.variables.end())
                throw ProtocolError("held-out variable '" + v + "' appears in training manifest '" +
                                    tm.name + "'");
    } else { // product, two-simulation
        if (eval_manifest.name != spec.held_out_product)
            throw ProtocolError("eval manifest product '" + eval_manifest.name +
                                "' != held-out product '" + spec.held_out_product + "'");
        for (const auto& tm : train)
            if (tm.name == spec.held_out_product)
                throw ProtocolError("held-out product '" + spec.held_out_product +
                                    "' appears in the training manifests");
    }
}

std::map<std::string, NormStats> pooled_train_stats(const std::vector<DatasetManifest>& manifests) {
    struct Acc {
        double sum = 0.0, sq = 0.0;
        std::int64_t n = 0;
    };
    std::map<std::string, Acc> acc;
    for (const auto& m : manifests) {
        const auto stats = compute_norm_stats(m, "train");
        for (const auto& [var, s] : stats) {
            Acc& a = acc[var];
            a.sum += s.mean * static_cast<double>(s.n_cells);
            a.sq += (s.std * s.std + s.mean * s.mean) * static_cast<double>(s.n_cells);
            a.n += s.n_cells;
        }
    }
    std::map<std::string, NormStats> out;
    for (const auto& [var, a] : acc) {
        const double mean = a.sum / static_cast<double>(a.n);
        const double var_ = a.sq / static_cast<double>(a.n) - mean * mean;
        if (!(var_ > 1e-12)) throw StatsError("zero pooled variance for variable '" + var + "'");
        out[var] = NormStats{mean, std::sqrt(var_), a.n};
    }
    return out;
}

// --- report ---------------------------------------------------------------------------------

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const Row& r : rows)
        rows_j.push_back({{"model", r.model},
                          {"scale", r.scale},
                          {"mode", r.mode},
                          {"r2", r.r2},
                          {"mse", r.mse},
                          {"n_samples", r.n_samples},
                          {"n_cells", r.n_cells},
                          {"checkpoint_id", r.checkpoint_id}});
    return nlohmann::json{{"rows", rows_j},
                          {"provenance", {{"spec_hash", spec_hash}, {"stats_hash", stats_hash}}}};
}

std::string MetricsReport::to_table() const {
    std::vector<int> scales;
    std::vector<std::string> modes, model_names;
    for (const Row& r : rows) {
        if (std::find(scales.begin(), scales.end(), r.scale) == scales.end()) scales.push_back(r.scale);
        if (std::find(modes.begin(), modes.end(), r.mode) == modes.end()) modes.push_back(r.mode);
        if (std::find(model_names.begin(), model_names.end(), r.model) == model_names.end())
            model_names.push_back(r.model);
    }
    std::sort(scales.begin(), scales.end());

    auto find_row = [&](const std::string& model, int scale, const std::string& mode) -> const Row* {
        for (const Row& r : rows)
            if (r.model == model && r.scale == scale && r.mode == mode) return &r;
        return nullptr;
    };

    std::ostringstream os;
    for (const std::string& mode : modes) {
        os << "== " << mode << " ==\n";
        os << "model    ";
        for (int s : scales) {
            char head[48];
            std::snprintf(head, sizeof(head), "  %8s  %10s", ("R2(" + std::to_string(s) + "x)").c_str(),
                          ("MSE(" + std::to_string(s) + "x)").c_str());
            os << head;
        }
        os << "\n";
        for (const std::string& model : model_names) {
            char cell[64];
            std::snprintf(cell, sizeof(cell), "%-9s", model.c_str());
            os << cell;
            for (int s : scales) {
                const Row* r = find_row(model, s, mode);
                if (r)
                    std::snprintf(cell, sizeof(cell), "  %8.4f  %10.6f", r->r2, r->mse);
                else
                    std::snprintf(cell, sizeof(cell), "  %8s  %10s", "-", "-");
                os << cell;
            }
            os << "\n";
        }
        os << "\n";
    }
    return os.str();
}

// --- protocol runner ---------------------------------------------------------------------------

namespace {

std::string file_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot hash " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    const std::string bytes = ss.str();
    return fnv1a64_hex(bytes.data(), bytes.size());
}

std::vector<SamplePair> normalize_pairs(std::vector<SamplePair> pairs,
                                        const std::map<std::string, NormStats>& stats) {
    for (SamplePair& sp : pairs) {
        auto it = stats.find(sp.variable);
        if (it == stats.end()) throw StatsError("no stats for variable '" + sp.variable + "'");
        sp.lr = normalize(sp.lr, it->second);
        sp.hr = normalize(sp.hr, it->second);
    }
    return pairs;
}

std::vector<SamplePair> filter_variable(std::vector<SamplePair> pairs, const std::string& var) {
    if (var.empty()) return pairs;
    std::vector<SamplePair> out;
    for (auto& p : pairs)
        if (p.variable == var) out.push_back(std::move(p));
    return out;
}

} // namespace

MetricsReport run_protocol(const ProtocolSpec& spec, const std::string& out_dir, int threads) {
    spec.validate();
    std::vector<DatasetManifest> train_manifests;
    for (const auto& path : spec.train_manifests) train_manifests.push_back(load_manifest(path));
    DatasetManifest eval_manifest = load_manifest(spec.eval_manifest);

    // guards abort before any data is touched
    check_protocol_guards(spec, train_manifests, eval_manifest);

    fs::create_directories(out_dir);
    const fs::path ckpt_dir = spec.checkpoint_dir.empty() ? fs::path(out_dir) / "checkpoints"
                                                          : fs::path(spec.checkpoint_dir);
    fs::create_directories(ckpt_dir);

    const auto stats = pooled_train_stats(train_manifests);
    const std::string stats_path = (fs::path(out_dir) / "stats.json").string();
    save_stats(stats, stats_path);

    MetricsReport report;
    const std::string spec_dump = spec.to_json().dump();
    report.spec_hash = fnv1a64_hex(spec_dump.data(), spec_dump.size());
    report.stats_hash = file_hash(stats_path);

    const bool want_ft = std::find(spec.modes.begin(), spec.modes.end(), "fine-tune") != spec.modes.end();
    const bool want_zs = std::find(spec.modes.begin(), spec.modes.end(), "zero-shot") != spec.modes.end();

    for (int scale : spec.scales) {
        // evaluation pairs for this scale (physical units; normalized on use)
        auto eval_pairs = filter_variable(load_pairs(eval_manifest, "test", spec.hr_patch, scale),
                                          spec.kind == "variable" ? spec.held_out_variable : "");
        if (eval_pairs.empty()) throw ConfigError("no evaluation pairs for scale " + std::to_string(scale));

        std::vector<SamplePair> train_pairs;
        if (spec.has_training) {
            for (const auto& tm : train_manifests) {
                auto pairs = load_pairs(tm, "train", spec.hr_patch, scale);
                for (auto& p : pairs) train_pairs.push_back(std::move(p));
            }
            train_pairs = normalize_pairs(std::move(train_pairs), stats);
        }

        std::vector<SamplePair> ft_pairs;
        if (want_ft)
            ft_pairs = normalize_pairs(filter_variable(load_pairs(eval_manifest, "train", spec.hr_patch, scale),
                                                       spec.kind == "variable" ? spec.held_out_variable : ""),
                                       stats);

        for (const std::string& model_name : spec.models) {
            if (model_name == "bicubic") {
                const EvalResult res = evaluate_model(Predictor::bicubic(scale), eval_pairs, stats, threads);
                for (const std::string& mode : spec.modes)
                    report.rows.push_back({model_name, scale, mode, res.r2, res.mse, res.n_samples,
                                           res.n_cells, ""});
                if (spec.emit_grids)
                    emit_error_grids(Predictor::bicubic(scale), eval_pairs, stats,
                                     (fs::path(out_dir) / "error_grids" /
                                      (model_name + "_x" + std::to_string(scale))).string());
                continue;
            }

            const std::string tag = model_name + "_x" + std::to_string(scale);
            const std::string zs_ckpt = (ckpt_dir / (tag + ".ckpt")).string();
            const std::uint64_t train_seed = mix_seed(spec.seed, fnv1a64(tag.data(), tag.size()));

            Model model;
            if (fs::exists(zs_ckpt) && !spec.has_training) {
                model = load_checkpoint(zs_ckpt);
            } else if (spec.has_training) {
                ArchitectureSpec aspec = ArchitectureSpec::defaults(family_from_string(model_name), scale);
                aspec.hr_size = spec.hr_patch;
                nlohmann::json aj = aspec.to_json();
                // flat keys apply to every family; per-family sub-objects win
                for (auto it = spec.arch_overrides.begin(); it != spec.arch_overrides.end(); ++it)
                    if (!it.value().is_object()) aj[it.key()] = it.value();
                if (spec.arch_overrides.contains(model_name))
                    for (auto it = spec.arch_overrides.at(model_name).begin();
                         it != spec.arch_overrides.at(model_name).end(); ++it)
                        aj[it.key()] = it.value();
                aj["family"] = model_name;
                aj["scale_factor"] = scale;
                aspec = ArchitectureSpec::from_json(aj);

                model = build_model(aspec, train_seed);
                TrainingConfig tc;
                tc.learning_rate = spec.train_learning_rate;
                tc.batch_size = spec.train_batch_size;
                tc.epochs = spec.train_epochs;
                tc.seed = train_seed;
                model.meta["train"] = {{"learning_rate", tc.learning_rate},
                                       {"batch_size", tc.batch_size},
                                       {"epochs", tc.epochs},
                                       {"beta1", tc.beta1},
                                       {"beta2", tc.beta2},
                                       {"eps", tc.eps},
                                       {"init", "fan_in_uniform"}};
                TrainHistory h = train(model, train_pairs, {}, tc);
                write_history_jsonl(h, (fs::path(out_dir) / (tag + "_history.jsonl")).string());
                save_checkpoint(model, zs_ckpt);
            } else {
                throw IoError("missing checkpoint " + zs_ckpt + " and no training section in the spec");
            }
            const std::string zs_id = file_hash(zs_ckpt);

            if (want_zs) {
                const EvalResult res = evaluate_model(Predictor::net(model), eval_pairs, stats, threads);
                report.rows.push_back({model_name, scale, "zero-shot", res.r2, res.mse, res.n_samples,
                                       res.n_cells, zs_id});
                if (spec.emit_grids)
                    emit_error_grids(Predictor::net(model), eval_pairs, stats,
                                     (fs::path(out_dir) / "error_grids" / (tag + "_zero-shot")).string());
            }

            if (want_ft) {
                Model ft_model = load_checkpoint(zs_ckpt);
                TrainingConfig fc;
                fc.learning_rate = spec.train_learning_rate;
                fc.batch_size = spec.train_batch_size;
                fc.epochs = spec.fine_tune_epochs;
                fc.seed = mix_seed(train_seed, 0xf7);
                fine_tune(ft_model, ft_pairs, spec.fine_tune_fraction, fc);
                const std::string ft_ckpt = (ckpt_dir / (tag + "_ft.ckpt")).string();
                save_checkpoint(ft_model, ft_ckpt);
                const EvalResult res = evaluate_model(Predictor::net(ft_model), eval_pairs, stats, threads);
                report.rows.push_back({model_name, scale, "fine-tune", res.r2, res.mse, res.n_samples,
                                       res.n_cells, file_hash(ft_ckpt)});
                if (spec.emit_grids)
                    emit_error_grids(Predictor::net(ft_model), eval_pairs, stats,
                                     (fs::path(out_dir) / "error_grids" / (tag + "_fine-tune")).string());
            }
        }
    }

    {
        std::ofstream os((fs::path(out_dir) / "report.json").string());
        os << report.to_json().dump(2) << "\n";
    }
    {
        std::ofstream os((fs::path(out_dir) / "report.txt").string());
        os << report.to_table();
    }
    return report;
}

} // namespace downscale
