#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfad/features.hpp"
#include "nfad/flow.hpp"
#include "nfad/losses.hpp"
#include "nfad/optimizer.hpp"

namespace nfad {

// One seed drives the whole run: parameter init, the per-epoch target
// and outlier shuffles, and the data-dependent actnorm init all pull
// named substreams of it. That, plus float64 training copies in the
// checkpoint, is what makes runs repeatable and resumable bit for bit.
struct TrainConfig {
    FlowConfig model; // model.seed is overridden with this seed at train time
    int epochs = 100;
    int batch_size = 64;
    double learning_rate = 0.0; // 0 picks the preset default
    LossSpec loss;
    double outlier_fraction = 0.5; // outlier sub-batch = round(batch_size * this)
    double grad_clip = 100.0;      // global-norm ceiling, generous on purpose
    int checkpoint_every = 10;     // epochs between periodic checkpoint writes
    uint64_t seed = 1;

    OptimizerKind optimizer_kind() const;  // Adam for MAF, AdaMax for Glow
    double resolved_learning_rate() const; // 1e-4 (Adam) / 5e-4 (AdaMax) when unset
    int outlier_batch() const;
    void validate() const; // ConfigError
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochStats {
    int epoch = 0;            // absolute epoch index
    double target_nll = 0.0;  // mean over all target samples this epoch
    double outlier_nll = 0.0; // mean over outlier samples; nan when none seen
    double qualifying_fraction = 0.0;
    int clip_events = 0; // batches whose gradient norm exceeded the ceiling
};

struct RunManifest {
    TrainConfig config;
    std::vector<EpochStats> epochs; // completed epochs only
    bool failed = false;
    std::string failed_layer; // first layer that went non-finite
    std::string checkpoint_path;
    double wall_time_s = 0.0; // never enters manifest_text
};

// Config as key=value lines, then one CSV row per epoch
// (epoch,target_nll,outlier_nll,qualifying_fraction). Identical seeds
// render identical text; wall time goes to a ".time" sidecar instead.
std::string manifest_text(const RunManifest& m);
void write_manifest(const RunManifest& m, const std::string& path);

struct TrainResult {
    std::unique_ptr<FlowModel> model;
    OptimizerState optimizer;
    RunManifest manifest;
    int epoch = 0;                             // total epochs completed
    std::vector<double> final_epoch_batch_nll; // per-batch mean target NLL
};

// Checkpoint container: model parameters (float32 interchange plus
// float64 training copies), optimizer moments, feature statistics and
// the config snapshot in the metadata record.
void save_checkpoint(const std::string& path, const FlowModel& model, const TrainConfig& cfg,
                     const FeatureConfig& feats, const FeatureStats& stats,
                     const OptimizerState& opt, int epoch);

struct Checkpoint {
    std::unique_ptr<FlowModel> model;
    TrainConfig train;
    FeatureConfig features;
    FeatureStats stats;
    OptimizerState optimizer;
    int epoch = 0;
};

// CheckpointVersionError when the container is not a readable NFAD file
// of the current version or was written by a different RNG stream;
// FormatError when the container opens but arrays are missing or
// mis-shaped.
Checkpoint load_checkpoint(const std::string& path);

// Trains on flattened, already-standardized windows. outlier may be
// empty only for loss kind nll_only. checkpoint_path may be empty to
// skip checkpointing. A failed run (non-finite activation or gradient)
// stops early with manifest.failed set and the last periodic checkpoint
// left untouched on disk.
TrainResult train(const std::vector<FeatureWindow>& target,
                  const std::vector<FeatureWindow>& outlier, const TrainConfig& cfg,
                  const FeatureConfig& feats, const FeatureStats& stats,
                  const std::string& checkpoint_path);

// Continues a checkpointed run on the same data. The combined run is
// bit-identical to having trained start+additional epochs in one go.
// additional_epochs = 0 loads and returns without touching the file.
TrainResult resume(const std::string& checkpoint_path, int additional_epochs,
                   const std::vector<FeatureWindow>& target,
                   const std::vector<FeatureWindow>& outlier);

struct CalibrationResult {
    double c = 0.0;
    std::vector<double> batch_means; // final-epoch per-batch target NLL means
};

// Short NLL-only warmup on data pooled across every ID of a machine
// type; c is the mean of the final epoch's per-batch NLL means, in the
// model's own normalization. CalibrationFailed when the warmup run
// fails or the mean is non-finite.
CalibrationResult calibrate_c(const std::vector<FeatureWindow>& pooled,
                              const FlowConfig& model_cfg, int warmup_epochs = 5,
                              int batch_size = 64, uint64_t seed = 1);

} // namespace nfad
