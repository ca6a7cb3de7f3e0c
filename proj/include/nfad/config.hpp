#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nfad/errors.hpp"
#include "nfad/features.hpp"
#include "nfad/flow.hpp"
#include "nfad/losses.hpp"
#include "nfad/trainer.hpp"

namespace nfad {

// Flat key=value run configuration. One format serves the config file,
// the --set flag and the synthesis spec file; every key is listed in
// config_key_docs() and anything else is rejected up front.

struct ConfigEntry {
    std::string value;
    int line = 0; // 0 for values that did not come from a file
};

struct ParsedConfig {
    std::string origin; // file path, or a tag like "--set" for flags
    std::map<std::string, ConfigEntry> entries;
};

// key=value per line, '#' lines and blank lines ignored, whitespace
// around key and value trimmed. ConfigError with "<origin>:<line>:" on
// anything else, including duplicate keys.
ParsedConfig parse_config_text(const std::string& text, const std::string& origin);
ParsedConfig parse_config_file(const std::string& path);

struct ConfigKeyDoc {
    std::string key;
    std::string fallback; // rendered default; "" means unset
    std::string help;
};

// Every accepted config key in display order.
const std::vector<ConfigKeyDoc>& config_key_docs();
// The docs rendered as an indented block for --help.
std::string config_key_help();

struct RunConfig {
    // paths and dataset selection
    std::string data_root;
    std::string out = "out";
    std::string cache_root;       // empty: <out>/cache
    std::string calibration_file; // empty: <out>/calibration.txt
    std::string checkpoint;       // empty: derived from type/id/preset
    std::string machine_type;
    std::string machine_id;

    FeatureConfig features;
    // window_frames/n_mels live on `features`; model_config() mirrors
    // them so the two can never disagree.
    FlowConfig model;
    LossSpec loss;
    bool loss_c_set = false; // false: fetch c from the calibration file

    int epochs = 100;
    int batch_size = 64;
    double learning_rate = 0.0; // 0 picks the preset default
    double outlier_fraction = 0.5;
    double grad_clip = 100.0;
    int checkpoint_every = 10;
    int warmup_epochs = 5; // calibration warmup length
    uint64_t seed = 1;

    // evaluation
    std::string aggregation = "mean";
    double pauc_p = 0.1;

    // synthesis
    int synth_ids = 3;
    int synth_train_per_id = 60;
    int synth_test_normal_per_id = 20;
    int synth_test_anomaly_per_id = 20;
    double synth_duration_s = 2.0;
    std::string synth_anomaly = "swap";
    double synth_anomaly_magnitude = 1.0;
    double synth_anomaly_tone_hz = 5000.0;
    int synth_variant = 0;
    std::string synth_cross_type; // second machine type: emit a two-type corpus

    std::string resolved_cache_root() const;
    std::string resolved_calibration_file() const;
    // Explicit `checkpoint` wins; otherwise <out>/<type>_id_<id>_<preset>.nfad.
    std::string resolved_checkpoint(const std::string& id) const;

    FlowConfig model_config() const;
    TrainConfig train_config() const;

    // Applies parsed entries over the current values. Unknown keys and
    // unparseable values raise ConfigError pointing at origin:line.
    void apply(const ParsedConfig& parsed);
};

// Defaults, then the config file (when path is non-empty), then the
// overrides in order. Overrides carry the "--set"/flag origin.
RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

// Calibration store: a key=value file mapping "<machine_type>/<preset>"
// to the threshold c. store rewrites the file, keeping other keys.
void store_calibration(const std::string& path, const std::string& machine_type,
                       const std::string& preset, double c);
std::optional<double> lookup_calibration(const std::string& path, const std::string& machine_type,
                                         const std::string& preset);

} // namespace nfad
