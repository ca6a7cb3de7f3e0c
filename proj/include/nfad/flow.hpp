#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfad/array_file.hpp"
#include "nfad/rng.hpp"
#include "nfad/tensor.hpp"

namespace nfad {

enum class CouplingMode { additive, affine };
// raw_exp is the deliberately unstabilized variant (scale = exp(raw));
// it exists so the stability failure mode can be exercised on purpose.
enum class ScaleMode { clamp, raw_exp };
enum class NllNorm { total, per_dim };

std::string nll_norm_name(NllNorm n);
NllNorm nll_norm_from_name(const std::string& s);

// Bounded positive scale for affine transforms:
// sigmoid(raw + 2) + 1e-3, so scale lies in (0.001, 1.001).
Tensor scale_clamp(const Tensor& raw);

struct FlowConfig {
    std::string preset = "maf_additive"; // maf_additive|maf_affine|glow_additive|glow_affine
    int window_frames = 4;               // frames per input window
    int n_mels = 128;                    // feature bins per frame
    // MAF
    int made_blocks = 4;
    int made_hidden = 512;
    // Glow
    int glow_blocks = 3;
    int glow_steps = 12;
    int glow_hidden = 128;              // conditioner hidden channels (conv) or units (dense)
    bool glow_dense_conditioner = false; // dense conditioners for small inputs
    ScaleMode scale_mode = ScaleMode::clamp;
    // default picked from the preset when left empty: per_dim for glow,
    // total for maf
    std::string nll_normalization;
    uint64_t seed = 0;

    int input_dim() const { return window_frames * n_mels; }
    bool is_glow() const { return preset.rfind("glow", 0) == 0; }
    CouplingMode coupling_mode() const;
    NllNorm resolved_normalization() const;
};

void to_json(nlohmann::json& j, const FlowConfig& c);
void from_json(const nlohmann::json& j, FlowConfig& c);

struct FlowResult {
    Tensor z;       // [B, D]
    Tensor log_det; // [B]
};

struct NllValue {
    double value = 0.0;
    NllNorm normalization = NllNorm::total;
    int dim = 0;

    double total() const { return normalization == NllNorm::total ? value : value * dim; }
    double per_dim() const { return normalization == NllNorm::total ? value / dim : value; }
};

class FlowModel {
public:
    virtual ~FlowModel() = default;

    // x: [B, D] window values. Builds the graph when grads are enabled.
    // Throws NonFiniteActivation naming the layer on inf/nan.
    virtual FlowResult forward(const Tensor& x) const = 0;

    // Value-level inverse of forward; z_flat holds batch*D values.
    virtual std::vector<double> inverse(const std::vector<double>& z_flat, int batch) const = 0;

    // Data-dependent initialization hooks (actnorm). No-op for MAF.
    virtual void init_from_batch(const Tensor& x) {}
    virtual bool needs_init() const { return false; }
    virtual void mark_initialized() {}

    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<Tensor>& parameters() const { return params_; }
    const std::vector<std::string>& parameter_names() const { return param_names_; }

    const FlowConfig& config() const { return cfg_; }
    int input_dim() const { return cfg_.input_dim(); }
    NllNorm nll_normalization() const { return cfg_.resolved_normalization(); }

protected:
    explicit FlowModel(FlowConfig cfg) : cfg_(std::move(cfg)) {}
    void add_param(const std::string& name, Tensor t) {
        t.set_label(name);
        param_names_.push_back(name);
        params_.push_back(std::move(t));
    }

    FlowConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::string> param_names_;
};

std::unique_ptr<FlowModel> build_maf(const FlowConfig& cfg);
std::unique_ptr<FlowModel> build_glow(const FlowConfig& cfg);
// dispatches on cfg.preset
std::unique_ptr<FlowModel> build_flow(const FlowConfig& cfg);

// Per-sample total NLL as a graph tensor [B]:
//   D/2 * log(2*pi) + ||z||^2 / 2 - log_det.
Tensor nll_total_graph(const FlowModel& model, const Tensor& x);
// Same, then divided by D when the model is per_dim normalized.
Tensor nll_graph(const FlowModel& model, const Tensor& x);

// Value-level scoring path (no graph).
std::vector<NllValue> nll(const FlowModel& model, const std::vector<double>& x_flat, int batch);

// Model parameters into / out of a checkpoint container. Interchange
// arrays are float32 under "params/<name>"; exact float64 copies for
// resume live under "train/params/<name>".
void save_model_arrays(ArrayFile& af, const FlowModel& model);
void load_model_arrays(FlowModel& model, const ArrayFile& af);

} // namespace nfad
