#pragma once

#include <string>
#include <vector>

#include "downscale/arch.hpp"
#include "downscale/data.hpp"

namespace downscale {

struct TrainingConfig {
    double learning_rate = 0.001;
    int batch_size = 32;
    int epochs = 150;
    std::uint64_t seed = 0;
    bool shuffle = true;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;

    // artifact plumbing beyond the core schedule
    double val_fraction = 0.10;  // carved from the training set when no val set is given
    int checkpoint_every = 0;    // extra epochNNNN.ckpt cadence; 0 = latest only
    std::string checkpoint_dir;  // empty = no checkpoints written

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must be in [0, 1)");
    }
};

/// Per-parameter Adam moments, kept in float64; parameters themselves stay
/// float32 (updates are computed in float64 and stored back once per step).
struct AdamState {
    struct Slot {
        std::vector<double> m, v;
    };
    std::vector<Slot> slots; // aligned with the model's parameter registry
    std::int64_t step = 0;

    static AdamState init(const Model& model);
};

/// One Adam update over populated gradients:
///   t += 1; m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)  (bias-corrected).
void adam_step(const std::vector<Parameter*>& params, AdamState& state, const TrainingConfig& cfg);

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss; // NaN when no validation split exists
    std::vector<double> seconds;
};

/// One epoch per line: {"epoch":1,"train_loss":...,"val_loss":...,"seconds":...}
void write_history_jsonl(const TrainHistory& h, const std::string& path);

/// Shuffled fixed-seed mini-batch training with Adam. If val_set is empty and
/// cfg.val_fraction > 0, a validation split is carved deterministically from
/// the training samples. Checkpoints go to cfg.checkpoint_dir (latest.ckpt
/// each epoch; epochNNNN.ckpt every cfg.checkpoint_every). Loss trajectories
/// are a pure function of (model, data, cfg.seed).
TrainHistory train(Model& model, const std::vector<SamplePair>& train_set,
                   const std::vector<SamplePair>& val_set, const TrainingConfig& cfg);

/// Deterministically subsamples floor(fraction*N) samples by seeded
/// permutation, then runs train() on the subset.
TrainHistory fine_tune(Model& model, const std::vector<SamplePair>& target_train_set, double fraction,
                       const TrainingConfig& cfg);

} // namespace downscale
