#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "downscale/arch.hpp"
#include "downscale/data.hpp"

namespace downscale {

/// Mean squared difference over all cells (float64 accumulation).
double mse(const GridTensor& pred, const GridTensor& target);

/// Coefficient of determination, pooled over all cells:
/// 1 - sum((t-p)^2) / sum((t-mean(t))^2). Zero target variance is rejected.
double r2(const GridTensor& pred, const GridTensor& target);

/// Either a trained network or the bicubic baseline, evaluated identically.
struct Predictor {
    enum class Kind { Bicubic, Net };
    Kind kind = Kind::Bicubic;
    const Model* model = nullptr;
    int scale = 2;

    static Predictor bicubic(int scale) { return Predictor{Kind::Bicubic, nullptr, scale}; }
    static Predictor net(const Model& m) { return Predictor{Kind::Net, &m, m.spec.scale_factor}; }

    std::string name() const { return kind == Kind::Bicubic ? "bicubic" : family_name(model->spec.family); }

    /// lr (B,1,h,w) in normalized units -> prediction (B,1,h*scale,w*scale).
    GridTensor predict(const GridTensor& lr_norm) const;
};

struct EvalResult {
    double r2 = 0.0;
    double mse = 0.0;
    std::int64_t n_samples = 0;
    std::int64_t n_cells = 0;
};

/// Normalizes each pair with the training-time stats, predicts, and pools
/// r2/mse over every cell of every sample. Per-sample partial sums are
/// combined pairwise in sample order, so results are identical for any
/// thread count (threads <= 0 picks the hardware concurrency).
EvalResult evaluate_model(const Predictor& p, const std::vector<SamplePair>& eval_set,
                          const std::map<std::string, NormStats>& stats, int threads = 1);

/// Writes per-sample prediction and |pred - target| grids (normalized units)
/// as GRD1 under out_dir: sample_NNNNN_pred.grd / sample_NNNNN_abserr.grd.
void emit_error_grids(const Predictor& p, const std::vector<SamplePair>& eval_set,
                      const std::map<std::string, NormStats>& stats, const std::string& out_dir);

/// One transferability experiment: what to train on, what is held out, which
/// models/scales/modes to run, and the desk-scale training budget.
struct ProtocolSpec {
    std::string kind; // spatial | variable | product | two-simulation
    std::vector<std::string> train_manifests;
    std::string eval_manifest;

    // held-out scope, kind-dependent
    Region held_out_region;
    std::string held_out_variable;
    std::string held_out_product;

    std::vector<int> scales{2, 8};
    std::vector<std::string> modes{"zero-shot"};
    double fine_tune_fraction = 0.30;
    std::vector<std::string> models{"cnn", "fno", "cnn-vit", "bicubic"};
    std::uint64_t seed = 0;

    // run configuration
    int hr_patch = 64;
    nlohmann::json arch_overrides = nlohmann::json::object();
    bool has_training = false;
    int train_epochs = 10;
    int train_batch_size = 32;
    double train_learning_rate = 0.001;
    int fine_tune_epochs = 5;
    std::string checkpoint_dir; // reuse pre-trained checkpoints from here
    bool emit_grids = false;

    void validate() const;
    nlohmann::json to_json() const;
    static ProtocolSpec from_json(const nlohmann::json& j);
    static ProtocolSpec from_file(const std::string& path);
};

struct MetricsReport {
    struct Row {
        std::string model;
        int scale = 0;
        std::string mode;
        double r2 = 0.0;
        double mse = 0.0;
        std::int64_t n_samples = 0;
        std::int64_t n_cells = 0;
        std::string checkpoint_id; // content hash; empty for bicubic
    };
    std::vector<Row> rows;
    std::string spec_hash;
    std::string stats_hash;

    nlohmann::json to_json() const;
    /// Aligned table: one block per mode, models as rows, {R2, MSE} per scale.
    std::string to_table() const;
};

/// Checks the leakage guards, trains or loads one model per (family, scale),
/// optionally fine-tunes on the held-out product's training split, evaluates
/// everything on the held-out test split and writes report.json, report.txt,
/// stats.json and checkpoints under out_dir.
MetricsReport run_protocol(const ProtocolSpec& spec, const std::string& out_dir, int threads = 1);

/// Pools per-variable statistics across products (exact merge via n_cells).
std::map<std::string, NormStats> pooled_train_stats(const std::vector<DatasetManifest>& manifests);

/// Leakage guards only (also run inside run_protocol before any computation).
void check_protocol_guards(const ProtocolSpec& spec, const std::vector<DatasetManifest>& train,
                           const DatasetManifest& eval_manifest);

} // namespace downscale
