#include "nfad/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "nfad/datagen.hpp"
#include "nfad/dataset.hpp"
#include "nfad/metrics.hpp"
#include "nfad/trainer.hpp"

namespace fs = std::filesystem;

namespace nfad {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path + "'");
    out << text;
}

std::vector<DatasetEntry> scan_for(const RunConfig& cfg) {
    if (cfg.data_root.empty()) throw ConfigError("data_root is required");
    if (cfg.machine_type.empty()) throw ConfigError("machine_type is required");
    return scan_dataset(cfg.data_root, cfg.machine_type);
}

LogMelSpectrogram load_cached(const RunConfig& cfg, const DatasetEntry& e) {
    std::string path = cache_path_for(cfg.resolved_cache_root(), e);
    try {
        return load_feature_cache(path).spec;
    } catch (const Error& err) {
        throw ConfigError("missing or unreadable feature cache '" + path +
                          "' (run the features command first): " + err.what());
    }
}

// Standardizes copies of the cached spectrograms with `stats` and
// flattens them into one window list.
std::vector<FeatureWindow> windows_for(const RunConfig& cfg, const std::vector<DatasetEntry>& entries,
                                       const FeatureStats& stats) {
    std::vector<FeatureWindow> windows;
    for (const auto& e : entries) {
        LogMelSpectrogram spec = load_cached(cfg, e);
        standardize_in_place(spec, stats);
        auto w = make_windows(spec, cfg.features.window_frames, cfg.features.window_hop, e.path);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                       std::make_move_iterator(w.end()));
    }
    return windows;
}

std::vector<DatasetEntry> train_entries(const std::vector<DatasetEntry>& entries,
                                        const std::string& machine_id, bool invert_id) {
    std::vector<DatasetEntry> out;
    for (const auto& e : entries) {
        if (!e.train) continue;
        if (!machine_id.empty() && (e.machine_id == machine_id) == invert_id) continue;
        out.push_back(e);
    }
    return out;
}

SyntheticSpec synth_spec_for(const RunConfig& cfg, const std::string& machine_type, int variant) {
    SyntheticSpec s = make_default_spec(cfg.seed, cfg.synth_ids, machine_type, variant);
    s.train_per_id = cfg.synth_train_per_id;
    s.test_normal_per_id = cfg.synth_test_normal_per_id;
    s.test_anomaly_per_id = cfg.synth_test_anomaly_per_id;
    s.duration_s = cfg.synth_duration_s;
    s.anomaly = anomaly_kind_from_name(cfg.synth_anomaly);
    s.anomaly_magnitude = cfg.synth_anomaly_magnitude;
    s.anomaly_tone_hz = cfg.synth_anomaly_tone_hz;
    return s;
}

} // namespace

int cmd_features(const RunConfig& cfg, std::ostream& log) {
    auto entries = scan_for(cfg);
    if (entries.empty())
        throw ConfigError("zero recordings under " + cfg.data_root + "/" + cfg.machine_type);
    int written = 0;
    std::vector<std::string> failures;
    for (const auto& e : entries) {
        std::string out_path = cache_path_for(cfg.resolved_cache_root(), e);
        try {
            Recording rec = load_entry(e);
            LogMelSpectrogram spec = compute_log_mel(rec, cfg.features);
            fs::create_directories(fs::path(out_path).parent_path());
            save_feature_cache(out_path, spec, e, cfg.features);
            ++written;
        } catch (const Error& err) {
            failures.push_back(e.path + ": " + err.what());
        }
    }
    log << "features: " << written << " of " << entries.size() << " caches under "
        << cfg.resolved_cache_root() << "\n";
    for (const auto& f : failures) log << "features: failed " << f << "\n";
    return failures.empty() ? 0 : 1;
}

int cmd_calibrate(const RunConfig& cfg, std::ostream& log) {
    auto entries = scan_for(cfg);
    auto train_all = train_entries(entries, "", false);
    if (train_all.empty())
        throw ConfigError("no training recordings under " + cfg.data_root + "/" + cfg.machine_type);

    std::vector<LogMelSpectrogram> specs;
    specs.reserve(train_all.size());
    for (const auto& e : train_all) specs.push_back(load_cached(cfg, e));
    FeatureStats stats = compute_feature_stats(specs);

    std::vector<FeatureWindow> pooled = windows_for(cfg, train_all, stats);
    FlowConfig mc = cfg.model_config();
    CalibrationResult cal = calibrate_c(pooled, mc, cfg.warmup_epochs, cfg.batch_size, cfg.seed);

    std::string path = cfg.resolved_calibration_file();
    store_calibration(path, cfg.machine_type, mc.preset, cal.c);
    log << "calibrate: " << cfg.machine_type << "/" << mc.preset << " c = " << fmt_double(cal.c)
        << " (" << cfg.warmup_epochs << " warmup epochs over " << pooled.size() << " windows) -> "
        << path << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
    if (cfg.machine_id.empty()) throw ConfigError("machine_id is required for train");
    auto entries = scan_for(cfg);
    auto target = train_entries(entries, cfg.machine_id, false);
    if (target.empty())
        throw ConfigError("no training recordings for machine_id " + cfg.machine_id + " under " +
                          cfg.data_root + "/" + cfg.machine_type);

    TrainConfig tc = cfg.train_config();
    // Resolve c before any data is loaded so a missing calibration is
    // cheap to hit.
    if (tc.loss.kind != LossKind::nll_only && !cfg.loss_c_set) {
        std::string cal_path = cfg.resolved_calibration_file();
        auto c = lookup_calibration(cal_path, cfg.machine_type, tc.model.preset);
        if (!c)
            throw ConfigError("no stored threshold for " + cfg.machine_type + "/" + tc.model.preset +
                              " in " + cal_path + "; run calibrate first or set loss_c");
        tc.loss.c = *c;
    }
    tc.loss.validate();

    std::vector<LogMelSpectrogram> target_specs;
    target_specs.reserve(target.size());
    for (const auto& e : target) target_specs.push_back(load_cached(cfg, e));
    FeatureStats stats = compute_feature_stats(target_specs);
    std::vector<FeatureWindow> target_w = windows_for(cfg, target, stats);

    std::vector<FeatureWindow> outlier_w;
    if (tc.loss.kind != LossKind::nll_only) {
        auto outliers = train_entries(entries, cfg.machine_id, true);
        if (outliers.empty())
            throw ConfigError("outlier-exposure loss needs training recordings from other machine "
                              "IDs of " +
                              cfg.machine_type);
        // Outliers pass through the target's standardization: the model
        // only ever sees the target's feature space.
        outlier_w = windows_for(cfg, outliers, stats);
    }

    std::string ckpt = cfg.resolved_checkpoint(cfg.machine_id);
    fs::path parent = fs::path(ckpt).parent_path();
    if (!parent.empty()) fs::create_directories(parent);

    TrainResult res = train(target_w, outlier_w, tc, cfg.features, stats, ckpt);
    std::string manifest_path = ckpt + ".manifest.txt";
    write_manifest(res.manifest, manifest_path);

    log << "train: " << cfg.machine_type << "/id_" << cfg.machine_id << " " << tc.model.preset
        << " loss=" << loss_kind_name(tc.loss.kind) << " epochs=" << res.epoch << "\n";
    if (!res.manifest.epochs.empty())
        log << "train: final target NLL " << fmt_double(res.manifest.epochs.back().target_nll)
            << "\n";
    log << "train: checkpoint " << ckpt << "\n";
    log << "train: manifest " << manifest_path << "\n";
    if (res.manifest.failed) {
        log << "train: FAILED on non-finite values in " << res.manifest.failed_layer << "\n";
        return 2;
    }
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
    auto entries = scan_for(cfg);
    std::vector<std::string> ids;
    if (!cfg.machine_id.empty()) {
        ids.push_back(cfg.machine_id);
    } else {
        std::set<std::string> seen;
        for (const auto& e : entries)
            if (!e.train) seen.insert(e.machine_id);
        ids.assign(seen.begin(), seen.end());
    }
    if (ids.empty())
        throw ConfigError("no test recordings under " + cfg.data_root + "/" + cfg.machine_type);
    if (!cfg.checkpoint.empty() && ids.size() > 1)
        throw ConfigError("an explicit checkpoint path covers one machine ID; set machine_id");

    ScoreAggregation agg = aggregation_from_name(cfg.aggregation);
    std::vector<EvalReport> reports;
    for (const auto& id : ids) {
        Checkpoint ck = load_checkpoint(cfg.resolved_checkpoint(id));
        Scorer scorer(*ck.model, ck.features, ck.stats, agg);
        EvalReport rep = evaluate_id(scorer, entries, cfg.machine_type, id, cfg.pauc_p);
        write_text(cfg.out + "/scores_" + cfg.machine_type + "_id_" + id + ".csv",
                   scores_csv(rep));
        reports.push_back(std::move(rep));
    }

    std::string report_path = cfg.out + "/report_" + cfg.machine_type + ".csv";
    write_text(report_path, report_csv(reports));
    log << report_table(reports);
    log << "evaluate: report " << report_path << "\n";
    return 0;
}

int cmd_synth(const RunConfig& cfg, std::ostream& log) {
    std::string type = cfg.machine_type.empty() ? "synthA" : cfg.machine_type;
    SyntheticSpec spec = synth_spec_for(cfg, type, cfg.synth_variant);
    int per_type = spec.n_ids *
                   (spec.train_per_id + spec.test_normal_per_id + spec.test_anomaly_per_id);
    if (!cfg.synth_cross_type.empty()) {
        SyntheticSpec other = synth_spec_for(cfg, cfg.synth_cross_type, cfg.synth_variant + 1);
        generate_cross_type(spec, other, cfg.out);
        log << "synth: " << per_type << " recordings each for " << spec.machine_type << " and "
            << other.machine_type << " under " << cfg.out << "\n";
    } else {
        generate(spec, cfg.out);
        log << "synth: " << per_type << " recordings for " << spec.machine_type << " under "
            << cfg.out << "\n";
    }
    return 0;
}

} // namespace nfad
