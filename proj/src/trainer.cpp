#include "nfad/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "nfad/errors.hpp"

namespace nfad {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

// Gathers `count` windows (by shuffled index, wrapping around) into one
// [count, dim] constant tensor.
Tensor make_batch(const std::vector<FeatureWindow>& windows, const std::vector<size_t>& order,
                  size_t start, size_t count, int dim) {
    std::vector<double> buf;
    buf.reserve(count * static_cast<size_t>(dim));
    for (size_t i = 0; i < count; ++i) {
        const auto& w = windows[order[(start + i) % order.size()]];
        if (static_cast<int>(w.values.size()) != dim)
            throw ShapeError("window from '" + w.recording + "' has " +
                             std::to_string(w.values.size()) + " values, model expects " +
                             std::to_string(dim));
        buf.insert(buf.end(), w.values.begin(), w.values.end());
    }
    return Tensor::constant({static_cast<int>(count), dim}, std::move(buf));
}

std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    rng.shuffle(idx);
    return idx;
}

// The heart of both train() and resume(): epochs [start_epoch,
// start_epoch + n_epochs) over an existing model/optimizer pair.
TrainResult run_training(std::unique_ptr<FlowModel> model, OptimizerState opt,
                         const TrainConfig& cfg, const FeatureConfig& feats,
                         const FeatureStats& stats, const std::vector<FeatureWindow>& target,
                         const std::vector<FeatureWindow>& outlier, int start_epoch, int n_epochs,
                         const std::string& checkpoint_path) {
    auto t0 = std::chrono::steady_clock::now();
    const int dim = model->input_dim();
    const size_t batch_size = static_cast<size_t>(cfg.batch_size);
    const size_t outlier_batch = static_cast<size_t>(cfg.outlier_batch());
    const bool use_outliers = outlier_batch > 0 && !outlier.empty();

    if (target.empty()) throw EmptyBatchError("train: no target windows");
    if (cfg.loss.kind != LossKind::nll_only && outlier.empty())
        throw EmptyBatchError("train: outlier-exposure loss without outlier windows");

    TrainResult res;
    res.manifest.config = cfg;
    res.manifest.checkpoint_path = checkpoint_path;
    res.epoch = start_epoch;

    // partial trailing batches are dropped, except that fewer target
    // windows than one batch still make a single (smaller) batch
    size_t n_batches = std::max<size_t>(1, target.size() / batch_size);

    for (int e = start_epoch; e < start_epoch + n_epochs; ++e) {
        Rng shuffle_rng = substream(cfg.seed, "epoch", static_cast<uint64_t>(e));
        Rng outlier_rng = substream(cfg.seed, "outlier", static_cast<uint64_t>(e));
        auto perm_t = shuffled_indices(target.size(), shuffle_rng);
        auto perm_o = use_outliers ? shuffled_indices(outlier.size(), outlier_rng)
                                   : std::vector<size_t>{};

        EpochStats ep;
        ep.epoch = e;
        double target_sum = 0.0, outlier_sum = 0.0;
        size_t target_seen = 0, outlier_seen = 0, qualifying = 0;
        std::vector<double> batch_means;

        try {
            for (size_t b = 0; b < n_batches; ++b) {
                size_t bt = std::min(batch_size, target.size() - b * batch_size);
                Tensor xt = make_batch(target, perm_t, b * batch_size, bt, dim);
                if (e == 0 && b == 0 && model->needs_init()) model->init_from_batch(xt);

                Tensor nll_t = nll_graph(*model, xt);
                Tensor nll_o;
                if (use_outliers) {
                    Tensor xo = make_batch(outlier, perm_o, b * outlier_batch, outlier_batch, dim);
                    nll_o = nll_graph(*model, xo);
                }
                Tensor loss = apply_loss(cfg.loss, nll_t, nll_o);

                for (auto& p : model->parameters()) p.zero_grad();
                backward(loss);
                double pre_norm = clip_grad_norm(model->parameters(), cfg.grad_clip);
                if (pre_norm > cfg.grad_clip) ++ep.clip_events;
                optimizer_step(opt, model->parameters());

                double bsum = 0.0;
                for (double v : nll_t.value()) bsum += v;
                target_sum += bsum;
                target_seen += bt;
                batch_means.push_back(bsum / static_cast<double>(bt));
                if (nll_o.defined()) {
                    const auto& ov = nll_o.value();
                    for (double v : ov) outlier_sum += v;
                    outlier_seen += ov.size();
                    if (cfg.loss.kind != LossKind::nll_only) {
                        double tmax = *std::max_element(nll_t.value().begin(),
                                                        nll_t.value().end());
                        auto gate = qualifying_outliers(ov, cfg.loss.c, tmax,
                                                        cfg.loss.kind == LossKind::oe_modified);
                        qualifying += static_cast<size_t>(gate.count);
                    }
                }
            }
        } catch (const NonFiniteActivation& err) {
            res.manifest.failed = true;
            res.manifest.failed_layer = err.layer();
        } catch (const NonFiniteGradient& err) {
            res.manifest.failed = true;
            res.manifest.failed_layer = err.layer();
        }
        if (res.manifest.failed) break; // the partial epoch is not recorded

        ep.target_nll = target_sum / static_cast<double>(target_seen);
        ep.outlier_nll = outlier_seen ? outlier_sum / static_cast<double>(outlier_seen)
                                      : std::nan("");
        ep.qualifying_fraction =
            outlier_seen ? static_cast<double>(qualifying) / static_cast<double>(outlier_seen)
                         : 0.0;
        res.manifest.epochs.push_back(ep);
        res.final_epoch_batch_nll = std::move(batch_means);
        res.epoch = e + 1;

        if (!checkpoint_path.empty() && (e + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(checkpoint_path, *model, cfg, feats, stats, opt, e + 1);
    }

    // final checkpoint; a failed run keeps the last periodic one instead
    bool ran = res.epoch > start_epoch;
    if (!res.manifest.failed && !checkpoint_path.empty() && (ran || start_epoch == 0))
        save_checkpoint(checkpoint_path, *model, cfg, feats, stats, opt, res.epoch);

    res.model = std::move(model);
    res.optimizer = std::move(opt);
    res.manifest.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

OptimizerState fresh_optimizer(const TrainConfig& cfg) {
    return cfg.optimizer_kind() == OptimizerKind::AdaMax
               ? make_adamax(cfg.resolved_learning_rate())
               : make_adam(cfg.resolved_learning_rate());
}

} // namespace

OptimizerKind TrainConfig::optimizer_kind() const {
    return model.is_glow() ? OptimizerKind::AdaMax : OptimizerKind::Adam;
}

double TrainConfig::resolved_learning_rate() const {
    if (learning_rate > 0.0) return learning_rate;
    return model.is_glow() ? 5e-4 : 1e-4;
}

int TrainConfig::outlier_batch() const {
    return static_cast<int>(std::lround(batch_size * outlier_fraction));
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (learning_rate < 0.0) throw ConfigError("learning_rate must be non-negative");
    if (outlier_fraction < 0.0 || outlier_fraction >= 1.0)
        throw ConfigError("outlier_fraction must be in [0, 1)");
    if (grad_clip <= 0.0) throw ConfigError("grad_clip must be positive");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
    loss.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"model", c.model},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"loss", c.loss},
         {"outlier_fraction", c.outlier_fraction},
         {"grad_clip", c.grad_clip},
         {"checkpoint_every", c.checkpoint_every},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.model = j.at("model").get<FlowConfig>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.loss = j.at("loss").get<LossSpec>();
    c.outlier_fraction = j.at("outlier_fraction").get<double>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
}

std::string manifest_text(const RunManifest& m) {
    const TrainConfig& c = m.config;
    std::string out;
    out += "preset=" + c.model.preset + "\n";
    out += "window_frames=" + std::to_string(c.model.window_frames) + "\n";
    out += "n_mels=" + std::to_string(c.model.n_mels) + "\n";
    out += "epochs=" + std::to_string(c.epochs) + "\n";
    out += "batch_size=" + std::to_string(c.batch_size) + "\n";
    out += "optimizer=" + optimizer_kind_name(c.optimizer_kind()) + "\n";
    out += "learning_rate=" + fmt(c.resolved_learning_rate()) + "\n";
    out += "loss=" + loss_kind_name(c.loss.kind) + "\n";
    out += "loss_c=" + fmt(c.loss.c) + "\n";
    out += "loss_k=" + fmt(c.loss.k) + "\n";
    out += "outlier_fraction=" + fmt(c.outlier_fraction) + "\n";
    out += "grad_clip=" + fmt(c.grad_clip) + "\n";
    out += "seed=" + std::to_string(c.seed) + "\n";
    out += "nll_normalization=" + nll_norm_name(c.model.resolved_normalization()) + "\n";
    out += "epochs_done=" + std::to_string(m.epochs.size()) + "\n";
    out += std::string("failed=") + (m.failed ? "1" : "0") + "\n";
    if (m.failed) out += "failed_layer=" + m.failed_layer + "\n";
    if (!m.checkpoint_path.empty()) out += "checkpoint=" + m.checkpoint_path + "\n";
    int clip_total = 0;
    for (const auto& e : m.epochs) clip_total += e.clip_events;
    if (clip_total > 0) out += "clip_events=" + std::to_string(clip_total) + "\n";
    out += "epoch,target_nll,outlier_nll,qualifying_fraction\n";
    for (const auto& e : m.epochs)
        out += std::to_string(e.epoch) + "," + fmt(e.target_nll) + "," + fmt(e.outlier_nll) +
               "," + fmt(e.qualifying_fraction) + "\n";
    return out;
}

void write_manifest(const RunManifest& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path);
    f << manifest_text(m);
    std::ofstream t(path + ".time");
    if (!t) throw FormatError("cannot write " + path + ".time");
    char buf[48];
    std::snprintf(buf, sizeof(buf), "wall_time_s=%.3f\n", m.wall_time_s);
    t << buf;
}

void save_checkpoint(const std::string& path, const FlowModel& model, const TrainConfig& cfg,
                     const FeatureConfig& feats, const FeatureStats& stats,
                     const OptimizerState& opt, int epoch) {
    ArrayFile af("NFAD", kCheckpointVersion);
    af.metadata = {{"kind", "checkpoint"},
                   {"train", cfg},
                   {"features", feats},
                   {"nll_normalization", nll_norm_name(model.nll_normalization())},
                   {"rng_version", kRngVersion},
                   {"epoch", epoch},
                   {"optimizer",
                    {{"kind", optimizer_kind_name(opt.kind)},
                     {"learning_rate", opt.learning_rate},
                     {"beta1", opt.beta1},
                     {"beta2", opt.beta2},
                     {"epsilon", opt.epsilon},
                     {"step_count", opt.step_count}}}};
    save_model_arrays(af, model);
    if (!stats.empty()) {
        Shape shape{static_cast<int>(stats.mean.size())};
        af.put_f64("stats/mean", shape, stats.mean);
        af.put_f64("stats/stdev", shape, stats.stdev);
    }
    const auto& names = model.parameter_names();
    if (opt.first_moment.size() == names.size()) {
        for (size_t i = 0; i < names.size(); ++i) {
            const Shape& shape = model.parameters()[i].shape();
            af.put_f64("opt/m1/" + names[i], shape, opt.first_moment[i]);
            af.put_f64("opt/m2/" + names[i], shape, opt.second_moment[i]);
        }
    }
    af.save(path);
}

Checkpoint load_checkpoint(const std::string& path) {
    ArrayFile af;
    try {
        af = ArrayFile::load(path, "NFAD");
    } catch (const FormatError& err) {
        throw CheckpointVersionError(err.what());
    }
    if (af.version() != kCheckpointVersion)
        throw CheckpointVersionError(path + ": checkpoint version " +
                                     std::to_string(af.version()) + ", expected " +
                                     std::to_string(kCheckpointVersion));
    const auto& meta = af.metadata;
    std::string rng_version = meta.at("rng_version").get<std::string>();
    if (rng_version != kRngVersion)
        throw CheckpointVersionError(path + ": written with RNG stream '" + rng_version +
                                     "', this build uses '" + kRngVersion + "'");

    Checkpoint ck;
    ck.train = meta.at("train").get<TrainConfig>();
    ck.features = meta.at("features").get<FeatureConfig>();
    ck.epoch = meta.at("epoch").get<int>();
    ck.model = build_flow(ck.train.model);
    load_model_arrays(*ck.model, af);

    if (af.has("stats/mean")) {
        ck.stats.mean = af.get("stats/mean").data;
        ck.stats.stdev = af.get("stats/stdev").data;
    }

    const auto& om = meta.at("optimizer");
    ck.optimizer.kind = optimizer_kind_from_name(om.at("kind").get<std::string>());
    ck.optimizer.learning_rate = om.at("learning_rate").get<double>();
    ck.optimizer.beta1 = om.at("beta1").get<double>();
    ck.optimizer.beta2 = om.at("beta2").get<double>();
    ck.optimizer.epsilon = om.at("epsilon").get<double>();
    ck.optimizer.step_count = om.at("step_count").get<int64_t>();
    const auto& names = ck.model->parameter_names();
    if (!names.empty() && af.has("opt/m1/" + names[0])) {
        for (const auto& name : names) {
            ck.optimizer.first_moment.push_back(af.get("opt/m1/" + name).data);
            ck.optimizer.second_moment.push_back(af.get("opt/m2/" + name).data);
        }
    }
    return ck;
}

TrainResult train(const std::vector<FeatureWindow>& target,
                  const std::vector<FeatureWindow>& outlier, const TrainConfig& cfg,
                  const FeatureConfig& feats, const FeatureStats& stats,
                  const std::string& checkpoint_path) {
    cfg.validate();
    TrainConfig effective = cfg;
    effective.model.seed = cfg.seed;
    auto model = build_flow(effective.model);
    return run_training(std::move(model), fresh_optimizer(effective), effective, feats, stats,
                        target, outlier, 0, effective.epochs, checkpoint_path);
}

TrainResult resume(const std::string& checkpoint_path, int additional_epochs,
                   const std::vector<FeatureWindow>& target,
                   const std::vector<FeatureWindow>& outlier) {
    if (additional_epochs < 0) throw ConfigError("additional_epochs must be non-negative");
    Checkpoint ck = load_checkpoint(checkpoint_path);
    return run_training(std::move(ck.model), std::move(ck.optimizer), ck.train, ck.features,
                        ck.stats, target, outlier, ck.epoch, additional_epochs, checkpoint_path);
}

CalibrationResult calibrate_c(const std::vector<FeatureWindow>& pooled,
                              const FlowConfig& model_cfg, int warmup_epochs, int batch_size,
                              uint64_t seed) {
    if (warmup_epochs < 1) throw ConfigError("warmup_epochs must be at least 1");
    if (pooled.empty()) throw EmptyBatchError("calibrate_c: no pooled windows");

    TrainConfig warm;
    warm.model = model_cfg;
    warm.epochs = warmup_epochs;
    warm.batch_size = batch_size;
    warm.loss.kind = LossKind::nll_only;
    warm.seed = seed;

    TrainResult r = train(pooled, {}, warm, FeatureConfig{}, FeatureStats{}, "");
    if (r.manifest.failed)
        throw CalibrationFailed("warmup went non-finite in layer '" + r.manifest.failed_layer +
                                "'");
    CalibrationResult out;
    out.batch_means = r.final_epoch_batch_nll;
    double sum = 0.0;
    for (double v : out.batch_means) sum += v;
    out.c = sum / static_cast<double>(out.batch_means.size());
    if (!std::isfinite(out.c)) throw CalibrationFailed("calibrated c is not finite");
    return out;
}

} // namespace nfad
