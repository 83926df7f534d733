// downscale: command-line workbench for deep-learning climate downscaling.
// Subcommands: synth (generate synthetic datasets), train (fit one model),
// protocol (run a transferability experiment), gradcheck (verify backward
// passes). Exit codes: 0 success, 1 runtime/protocol failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "downscale/data.hpp"
#include "downscale/eval.hpp"
#include "downscale/optim.hpp"
#include "downscale/rng.hpp"

namespace fs = std::filesystem;
using namespace downscale;

namespace {

void echo_config(const std::string& out_dir, const nlohmann::json& cfg) {
    fs::create_directories(out_dir);
    std::ofstream os((fs::path(out_dir) / "resolved_config.json").string());
    if (!os) throw IoError("cannot write resolved_config.json under " + out_dir);
    os << cfg.dump(2) << "\n";
}

// Pre-parse --config <file.json>: loads values into the bound variables so
// that explicit flags (parsed afterwards) win.
nlohmann::json load_config_file(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            std::ifstream is(argv[i + 1]);
            if (!is) throw ConfigError(std::string("cannot open config file ") + argv[i + 1]);
            nlohmann::json j;
            try {
                is >> j;
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(std::string(argv[i + 1]) + ": " + e.what());
            }
            return j;
        }
    }
    return nlohmann::json::object();
}

template <typename T>
void from_cfg(const nlohmann::json& j, const char* key, T& var) {
    if (j.contains(key)) var = j.at(key).get<T>();
}

struct SynthArgs {
    std::string kind = "gaussian-bumps";
    int n = 100;
    int size = 64;
    std::uint64_t seed = 0;
    std::string out;
    std::string variable = "field";
    double lat_min = 45.0, lat_max = 55.0, lon_min = 5.0, lon_max = 15.0;
    double train_fraction = 0.8;
    double slope = 2.5;
};

int run_synth(const SynthArgs& a) {
    SynthOptions opt;
    opt.kind = a.kind;
    opt.n = a.n;
    opt.size = a.size;
    opt.seed = a.seed;
    opt.variable = a.variable;
    opt.region = Region{a.lat_min, a.lat_max, a.lon_min, a.lon_max};
    opt.train_fraction = a.train_fraction;
    opt.spectral_slope = a.slope;

    DatasetManifest m = synth_dataset(opt, a.out);
    echo_config(a.out, nlohmann::json{{"command", "synth"},
                                      {"kind", a.kind},
                                      {"n", a.n},
                                      {"size", a.size},
                                      {"seed", a.seed},
                                      {"out", a.out},
                                      {"variable", a.variable},
                                      {"region", {{"lat_min", a.lat_min}, {"lat_max", a.lat_max},
                                                  {"lon_min", a.lon_min}, {"lon_max", a.lon_max}}},
                                      {"train_fraction", a.train_fraction},
                                      {"spectral_slope", a.slope}});
    std::cout << (fs::path(a.out) / "manifest.json").string() << "\n";
    std::cout << "wrote " << m.sample_files.size() << " samples (" << m.name << ")\n";
    return 0;
}

struct TrainArgs {
    std::string arch = "cnn";
    int scale = 2;
    std::vector<std::string> manifests;
    int epochs = 10;
    int batch_size = 32;
    double lr = 0.001;
    std::uint64_t seed = 0;
    std::string out;
    int hr_patch = 64;
    double val_fraction = 0.10;
    int checkpoint_every = 0;
    int width = 0, depth = 0, modes = 0, heads = 0, hidden_dim = 0, patch_size = 0;
};

int run_train(const TrainArgs& a) {
    ArchitectureSpec spec = ArchitectureSpec::defaults(family_from_string(a.arch), a.scale);
    spec.hr_size = a.hr_patch;
    if (a.width > 0) spec.width = a.width;
    if (a.depth > 0) spec.depth = a.depth;
    if (a.modes > 0) spec.modes = a.modes;
    if (a.heads > 0) spec.heads = a.heads;
    if (a.hidden_dim > 0) spec.hidden_dim = a.hidden_dim;
    if (a.patch_size > 0) spec.patch_size = a.patch_size;
    spec.validate();
    if (a.manifests.empty()) throw ConfigError("at least one --manifest is required");

    std::vector<DatasetManifest> manifests;
    for (const auto& p : a.manifests) manifests.push_back(load_manifest(p));
    const auto stats = pooled_train_stats(manifests);
    fs::create_directories(a.out);
    save_stats(stats, (fs::path(a.out) / "stats.json").string());

    std::vector<SamplePair> pairs;
    for (const auto& m : manifests) {
        auto mp = load_pairs(m, "train", a.hr_patch, a.scale);
        for (auto& p : mp) {
            p.lr = normalize(p.lr, stats.at(p.variable));
            p.hr = normalize(p.hr, stats.at(p.variable));
            pairs.push_back(std::move(p));
        }
    }

    TrainingConfig cfg;
    cfg.learning_rate = a.lr;
    cfg.batch_size = a.batch_size;
    cfg.epochs = a.epochs;
    cfg.seed = a.seed;
    cfg.val_fraction = a.val_fraction;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.checkpoint_dir = a.out;
    cfg.validate();

    Model model = build_model(spec, a.seed);
    model.meta["train"] = {{"learning_rate", cfg.learning_rate}, {"batch_size", cfg.batch_size},
                           {"epochs", cfg.epochs},             {"beta1", cfg.beta1},
                           {"beta2", cfg.beta2},               {"eps", cfg.eps},
                           {"init", "fan_in_uniform"}};

    echo_config(a.out, nlohmann::json{{"command", "train"},
                                      {"arch", spec.to_json()},
                                      {"manifests", a.manifests},
                                      {"epochs", a.epochs},
                                      {"batch_size", a.batch_size},
                                      {"learning_rate", a.lr},
                                      {"seed", a.seed},
                                      {"hr_patch", a.hr_patch},
                                      {"val_fraction", a.val_fraction},
                                      {"checkpoint_every", a.checkpoint_every},
                                      {"out", a.out}});

    std::cout << "training " << family_name(spec.family) << " x" << spec.scale_factor << " on "
              << pairs.size() << " pairs, " << parameter_count(model) << " parameters\n";
    TrainHistory h = train(model, pairs, {}, cfg);
    write_history_jsonl(h, (fs::path(a.out) / "history.jsonl").string());
    for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
        std::printf("epoch %3zu  train %.6f", e + 1, h.train_loss[e]);
        if (std::isfinite(h.val_loss[e])) std::printf("  val %.6f", h.val_loss[e]);
        std::printf("  (%.1fs)\n", h.seconds[e]);
    }
    std::cout << "checkpoint: " << (fs::path(a.out) / "latest.ckpt").string() << "\n";
    return 0;
}

struct ProtocolArgs {
    std::string spec_path;
    std::string out;
    int threads = 0;
};

int run_protocol_cmd(const ProtocolArgs& a) {
    ProtocolSpec spec = ProtocolSpec::from_file(a.spec_path);
    const int threads = a.threads > 0 ? a.threads : static_cast<int>(std::thread::hardware_concurrency());
    echo_config(a.out, nlohmann::json{{"command", "protocol"},
                                      {"spec_path", a.spec_path},
                                      {"spec", spec.to_json()},
                                      {"threads", threads},
                                      {"out", a.out}});
    MetricsReport report = run_protocol(spec, a.out, threads);
    std::cout << report.to_table();
    std::cout << "report: " << (fs::path(a.out) / "report.json").string() << "\n";
    return 0;
}

struct GradcheckArgs {
    bool all = false;
    std::string layer;
    std::uint64_t seed = 7;
    std::string out = "gradcheck_out";
};

int run_gradcheck(const GradcheckArgs& a) {
    std::vector<std::string> names;
    if (a.all)
        names = layer_check_names();
    else if (!a.layer.empty())
        names = {a.layer};
    else
        throw ConfigError("pass --all or --layer NAME");

    echo_config(a.out, nlohmann::json{{"command", "gradcheck"},
                                      {"layers", names},
                                      {"seed", a.seed},
                                      {"out", a.out}});

    bool ok = true;
    std::printf("%-14s %12s %9s %9s  %s\n", "layer", "max_rel_err", "checked", "skipped", "status");
    for (const auto& name : names) {
        OwnedCheckTarget t = make_layer_check_target(name, a.seed); // ConfigError on unknown name
        GradCheckResult r = grad_check(t.target, 1e-3, a.seed);
        const bool pass = r.ok(1e-3);
        ok = ok && pass;
        std::printf("%-14s %12.3e %9lld %9lld  %s\n", name.c_str(), r.max_rel_err,
                    static_cast<long long>(r.checked), static_cast<long long>(r.skipped),
                    pass ? "pass" : "FAIL");
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"downscale: deep-learning climate downscaling workbench"};
    app.require_subcommand(1);

    nlohmann::json cfg;
    try {
        cfg = load_config_file(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    std::string config_path; // consumed by the pre-parse; registered so CLI11 accepts it

    SynthArgs sa;
    from_cfg(cfg, "kind", sa.kind);
    from_cfg(cfg, "n", sa.n);
    from_cfg(cfg, "size", sa.size);
    from_cfg(cfg, "seed", sa.seed);
    from_cfg(cfg, "out", sa.out);
    from_cfg(cfg, "variable", sa.variable);
    from_cfg(cfg, "train_fraction", sa.train_fraction);
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset + manifest");
    synth->add_option("--config", config_path, "JSON config file (flags win)");
    synth->add_option("--kind", sa.kind, "gaussian-bumps | anisotropic-bumps | banded-spectrum");
    synth->add_option("--n", sa.n, "number of fields");
    synth->add_option("--size", sa.size, "field side length (power of two)");
    synth->add_option("--seed", sa.seed, "generator seed");
    synth->add_option("--out", sa.out, "output directory")->required();
    synth->add_option("--variable", sa.variable, "variable name in sidecars");
    synth->add_option("--lat-min", sa.lat_min);
    synth->add_option("--lat-max", sa.lat_max);
    synth->add_option("--lon-min", sa.lon_min);
    synth->add_option("--lon-max", sa.lon_max);
    synth->add_option("--train-fraction", sa.train_fraction, "leading fraction tagged train");
    synth->add_option("--slope", sa.slope, "banded-spectrum power-law slope");

    TrainArgs ta;
    from_cfg(cfg, "arch", ta.arch);
    from_cfg(cfg, "scale", ta.scale);
    from_cfg(cfg, "manifests", ta.manifests);
    from_cfg(cfg, "epochs", ta.epochs);
    from_cfg(cfg, "batch_size", ta.batch_size);
    from_cfg(cfg, "learning_rate", ta.lr);
    from_cfg(cfg, "seed", ta.seed);
    from_cfg(cfg, "out", ta.out);
    from_cfg(cfg, "hr_patch", ta.hr_patch);
    CLI::App* train_cmd = app.add_subcommand("train", "train one model on manifest data");
    train_cmd->add_option("--config", config_path, "JSON config file (flags win)");
    train_cmd->add_option("--arch", ta.arch, "cnn | fno | cnn-vit");
    train_cmd->add_option("--scale", ta.scale, "2 or 8");
    train_cmd->add_option("--manifest", ta.manifests, "training manifest path (repeatable)");
    train_cmd->add_option("--epochs", ta.epochs);
    train_cmd->add_option("--batch-size", ta.batch_size);
    train_cmd->add_option("--lr", ta.lr, "learning rate");
    train_cmd->add_option("--seed", ta.seed);
    train_cmd->add_option("--out", ta.out, "output directory")->required();
    train_cmd->add_option("--hr-patch", ta.hr_patch, "HR patch side");
    train_cmd->add_option("--val-fraction", ta.val_fraction);
    train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "extra checkpoint cadence (epochs)");
    train_cmd->add_option("--width", ta.width);
    train_cmd->add_option("--depth", ta.depth);
    train_cmd->add_option("--modes", ta.modes);
    train_cmd->add_option("--heads", ta.heads);
    train_cmd->add_option("--hidden-dim", ta.hidden_dim);
    train_cmd->add_option("--patch-size", ta.patch_size);

    ProtocolArgs pa;
    CLI::App* proto = app.add_subcommand("protocol", "run a transferability protocol");
    proto->add_option("--spec", pa.spec_path, "protocol spec JSON")->required();
    proto->add_option("--out", pa.out, "output directory")->required();
    proto->add_option("--threads", pa.threads, "evaluation parallelism (default: cores)");

    GradcheckArgs ga;
    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_flag("--all", ga.all, "check every layer");
    gc->add_option("--layer", ga.layer, "single layer name");
    gc->add_option("--seed", ga.seed);
    gc->add_option("--out", ga.out, "output directory for the resolved config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return run_synth(sa);
        if (train_cmd->parsed()) return run_train(ta);
        if (proto->parsed()) {
            if (!fs::exists(pa.spec_path)) {
                std::cerr << "no such spec file: " << pa.spec_path << "\n";
                return 2;
            }
            return run_protocol_cmd(pa);
        }
        if (gc->parsed()) return run_gradcheck(ga);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    return 0;
}
