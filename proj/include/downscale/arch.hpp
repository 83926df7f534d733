#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "downscale/grid.hpp"
#include "downscale/layers.hpp"

namespace downscale {

enum class Family { CNN, FNO, CNN_VIT };

std::string family_name(Family f);
Family family_from_string(const std::string& s);

/// Declarative description of one model family plus its hyperparameters.
/// width/depth defaults depend on the family (see defaults()); hr_size anchors
/// the CNN-ViT positional-embedding grid (hr_size/patch_size tokens per axis),
/// smaller divisible inputs use the top-left crop of that grid.
struct ArchitectureSpec {
    Family family = Family::CNN;
    int scale_factor = 2;
    int width = 64;
    int depth = 16;
    int modes = 12;      // FNO
    int heads = 4;       // CNN-ViT
    int hidden_dim = 256; // CNN-ViT token dimension
    int patch_size = 8;  // CNN-ViT
    int hr_size = 64;    // CNN-ViT positional grid anchor

    static ArchitectureSpec defaults(Family f, int scale);
    void validate() const; // ConfigError naming the violated constraint

    nlohmann::json to_json() const;
    static ArchitectureSpec from_json(const nlohmann::json& j);
};

/// Per-family network core operating at HR resolution. Forward/backward pairs
/// are explicit; backward accumulates parameter gradients.
struct NetCtx {
    virtual ~NetCtx() = default;
};

struct Net {
    virtual ~Net() = default;
    virtual GridTensor forward_hr(const GridTensor& hr_in, std::unique_ptr<NetCtx>* ctx) const = 0;
    virtual GridTensor backward(NetCtx& ctx, const GridTensor& dy) = 0;
    virtual void collect_params(std::vector<Parameter*>& out) = 0;
};

/// A built model: spec + seed + parameter registry. forward() consumes an LR
/// batch (B,1,h,w), upsamples it bicubically by spec.scale_factor and refines
/// at HR resolution; output is (B,1,h*scale,w*scale).
class Model {
public:
    ArchitectureSpec spec;
    std::uint64_t seed = 0;
    nlohmann::json meta = nlohmann::json::object(); // free-form, persisted in checkpoints

    Model() = default;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const std::vector<Parameter*>& params() const { return params_; }
    Parameter* find(const std::string& name);

    GridTensor forward(const GridTensor& lr) const;
    /// Network core applied directly to an HR-sized field (no pre-upsampling).
    GridTensor forward_hr(const GridTensor& hr_in) const;

    /// MSE loss over all cells plus full parameter gradients. Gradients are
    /// zeroed on entry; large batches run in fixed micro-batches internally,
    /// which leaves the result bit-identical for a given input.
    double forward_backward(const GridTensor& lr, const GridTensor& hr_target);

    /// Forward-only MSE in the same units as forward_backward.
    double loss_only(const GridTensor& lr, const GridTensor& hr_target) const;

    void zero_grads();

private:
    friend Model build_model(const ArchitectureSpec&, std::uint64_t);
    friend Model load_checkpoint(const std::string&);
    std::unique_ptr<Net> net_;
    std::vector<Parameter*> params_;
};

Model build_model(const ArchitectureSpec& spec, std::uint64_t seed);

std::int64_t parameter_count(const Model& m);

/// Checkpoint format "CKPT1": magic bytes CKPT1, u32 LE JSON header length,
/// JSON header {format, spec, seed, meta, params: [{name, shape, offset}]},
/// then concatenated float32 LE parameter payloads. save(load(p)) is
/// byte-identical to p.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

} // namespace downscale
