#include "nfad/flow.hpp"

#include <cmath>
#include <cstdio>

#include "nfad/errors.hpp"
#include "nfad/linalg.hpp"

namespace nfad {

namespace {

constexpr double kLog2Pi = 1.8378770664093453; // log(2*pi)

[[noreturn]] void bad_config(const std::string& msg) { throw ConfigError(msg); }

std::string step_prefix(int scale, int step) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "g%d/s%d", scale, step);
    return buf;
}

std::vector<double> uniform_init(Rng& rng, int64_t count, double bound) {
    std::vector<double> v(static_cast<size_t>(count));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return v;
}

// Random orthogonal matrix (row-major, n x n) via Gram-Schmidt on
// normal-distributed columns. Two projection passes keep the columns
// orthogonal to near machine precision.
std::vector<double> orthogonal_init(Rng& rng, int n) {
    std::vector<double> a(static_cast<size_t>(n) * n);
    for (auto& x : a) x = rng.normal();
    for (int j = 0; j < n; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (int k = 0; k < j; ++k) {
                double dot = 0.0;
                for (int i = 0; i < n; ++i) dot += a[i * n + k] * a[i * n + j];
                for (int i = 0; i < n; ++i) a[i * n + j] -= dot * a[i * n + k];
            }
        }
        double nrm = 0.0;
        for (int i = 0; i < n; ++i) nrm += a[i * n + j] * a[i * n + j];
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) bad_config("degenerate random basis during orthogonal init");
        for (int i = 0; i < n; ++i) a[i * n + j] /= nrm;
    }
    return a;
}

// ---------------------------------------------------------------------------
// Masked autoregressive block: one hidden layer whose connectivity masks
// enforce that output j only depends on inputs strictly earlier in this
// block's dimension order.

struct MadeBlock {
    std::string name;
    CouplingMode mode = CouplingMode::additive;
    ScaleMode scale_mode = ScaleMode::clamp;
    std::vector<int> order; // order[i] in 1..D, position of input i
    Tensor mask_in;         // [D, H], constant
    Tensor mask_out;        // [H, D], constant
    Tensor w_hidden, b_hidden;
    Tensor w_mu, b_mu;
    Tensor w_scale, b_scale; // affine mode only

    // Shift and (for affine mode) raw scale, both [B, D]. Every output
    // column only sees input columns earlier in `order`.
    void conditioner(const Tensor& x, Tensor& mu, Tensor& raw) const {
        Tensor h = tanh(bias_add(masked_matmul(x, w_hidden, mask_in), b_hidden));
        mu = bias_add(masked_matmul(h, w_mu, mask_out), b_mu);
        if (mode == CouplingMode::affine)
            raw = bias_add(masked_matmul(h, w_scale, mask_out), b_scale);
    }

    Tensor forward(const Tensor& x, Tensor& log_det) const {
        Tensor mu, raw;
        conditioner(x, mu, raw);
        if (mode == CouplingMode::additive) return sub(x, mu);
        Tensor s, log_s;
        if (scale_mode == ScaleMode::clamp) {
            s = scale_clamp(raw);
            log_s = log(s);
        } else {
            s = exp(raw);
            log_s = raw;
        }
        log_det = add(log_det, sum_rows(log_s));
        return mul(sub(x, mu), s);
    }

    // Value-level inverse: recover x column by column in order-position
    // sequence. Each conditioner pass only reads already-recovered
    // columns, so the sweep converges exactly in D passes.
    std::vector<double> inverse(const std::vector<double>& z, int batch, int dim) const {
        NoGradGuard ng;
        std::vector<int> pos(static_cast<size_t>(dim));
        for (int i = 0; i < dim; ++i) pos[static_cast<size_t>(order[i]) - 1] = i;
        std::vector<double> x = z;
        for (int d = 0; d < dim; ++d) {
            Tensor xt = Tensor::constant({batch, dim}, x);
            Tensor mu, raw;
            conditioner(xt, mu, raw);
            int j = pos[d];
            const auto& muv = mu.value();
            if (mode == CouplingMode::additive) {
                for (int b = 0; b < batch; ++b) {
                    size_t idx = static_cast<size_t>(b) * dim + j;
                    x[idx] = z[idx] + muv[idx];
                }
            } else {
                Tensor s = scale_mode == ScaleMode::clamp ? scale_clamp(raw) : exp(raw);
                const auto& sv = s.value();
                for (int b = 0; b < batch; ++b) {
                    size_t idx = static_cast<size_t>(b) * dim + j;
                    x[idx] = z[idx] / sv[idx] + muv[idx];
                }
            }
        }
        return x;
    }
};

class MafModel final : public FlowModel {
public:
    explicit MafModel(FlowConfig cfg) : FlowModel(std::move(cfg)) {}
    using FlowModel::add_param;

    FlowResult forward(const Tensor& x) const override {
        int dim = cfg_.input_dim();
        if (x.shape().size() != 2 || x.shape()[1] != dim)
            throw ShapeError("flow input must be [batch, " + std::to_string(dim) + "], got " +
                             shape_str(x.shape()));
        int batch = x.shape()[0];
        Tensor z = x;
        Tensor log_det = Tensor::zeros({batch});
        for (const auto& blk : blocks_) {
            LayerScope scope(blk.name);
            z = blk.forward(z, log_det);
            z.check_finite();
        }
        return {z, log_det};
    }

    std::vector<double> inverse(const std::vector<double>& z_flat, int batch) const override {
        int dim = cfg_.input_dim();
        if (batch <= 0 || z_flat.size() != static_cast<size_t>(batch) * dim)
            throw ShapeError("inverse input size does not match batch * input_dim");
        std::vector<double> x = z_flat;
        for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it)
            x = it->inverse(x, batch, dim);
        return x;
    }

    std::vector<MadeBlock> blocks_;
};

// ---------------------------------------------------------------------------
// Multi-scale convolutional flow: squeeze, then steps of
// (activation normalization, invertible channel mixing, coupling),
// splitting half the channels off to the latent after every scale but
// the last.

struct ActNorm {
    Tensor log_scale; // [C]
    Tensor bias;      // [C]

    Tensor forward(const Tensor& x, Tensor& log_det) const {
        int hw = x.shape()[2] * x.shape()[3];
        Tensor y = affine_channels(x, exp(log_scale), bias);
        log_det = add_broadcast(log_det, mul_scalar(sum_all(log_scale), hw));
        return y;
    }

    Tensor invert(const Tensor& y) const {
        Tensor inv_s = exp(mul_scalar(log_scale, -1.0));
        Tensor shift = mul_scalar(mul(bias, inv_s), -1.0);
        return affine_channels(y, inv_s, shift);
    }
};

struct ChannelMix {
    Tensor w; // [C, C]

    Tensor forward(const Tensor& x, Tensor& log_det) const {
        int hw = x.shape()[2] * x.shape()[3];
        Tensor y = channel_mix(x, w);
        log_det = add_broadcast(log_det, mul_scalar(logdet_abs(w), hw));
        return y;
    }

    Tensor invert(const Tensor& y) const {
        int c = w.shape()[0];
        Lu lu(c, w.value());
        if (lu.singular()) throw ShapeError("channel mixing matrix became singular");
        Tensor w_inv = Tensor::constant({c, c}, lu.inverse());
        return channel_mix(y, w_inv);
    }
};

struct Coupling {
    CouplingMode mode = CouplingMode::additive;
    ScaleMode scale_mode = ScaleMode::clamp;
    bool dense = false;
    int c_half = 0; // channels in each half (input has 2 * c_half)
    Tensor w1, b1, w2, b2, w3, b3;

    // Conditioner on the unchanged half, producing the shift (and, in
    // affine mode, the raw scale stacked on the channel axis).
    Tensor conditioner(const Tensor& xa) const {
        if (!dense) {
            Tensor h1 = relu(conv2d(xa, w1, b1));
            Tensor h2 = relu(conv2d(h1, w2, b2));
            return conv2d(h2, w3, b3);
        }
        int batch = xa.shape()[0];
        int height = xa.shape()[2], width = xa.shape()[3];
        Tensor flat = reshape(xa, {batch, c_half * height * width});
        Tensor h1 = relu(bias_add(matmul(flat, w1), b1));
        Tensor h2 = relu(bias_add(matmul(h1, w2), b2));
        Tensor out = bias_add(matmul(h2, w3), b3);
        int out_c = mode == CouplingMode::affine ? 2 * c_half : c_half;
        return reshape(out, {batch, out_c, height, width});
    }

    Tensor forward(const Tensor& x, Tensor& log_det) const {
        int c = x.shape()[1];
        Tensor xa = slice_channels(x, 0, c_half);
        Tensor xb = slice_channels(x, c_half, c);
        Tensor out = conditioner(xa);
        Tensor yb;
        if (mode == CouplingMode::additive) {
            yb = add(xb, out);
        } else {
            Tensor t = slice_channels(out, 0, c_half);
            Tensor raw = slice_channels(out, c_half, 2 * c_half);
            Tensor s, log_s;
            if (scale_mode == ScaleMode::clamp) {
                s = scale_clamp(raw);
                log_s = log(s);
            } else {
                s = exp(raw);
                log_s = raw;
            }
            yb = add(mul(xb, s), t);
            log_det = add(log_det, sum_rows(log_s));
        }
        return concat_channels(xa, yb);
    }

    Tensor invert(const Tensor& y) const {
        int c = y.shape()[1];
        Tensor ya = slice_channels(y, 0, c_half);
        Tensor yb = slice_channels(y, c_half, c);
        Tensor out = conditioner(ya);
        Tensor xb;
        if (mode == CouplingMode::additive) {
            xb = sub(yb, out);
        } else {
            Tensor t = slice_channels(out, 0, c_half);
            Tensor raw = slice_channels(out, c_half, 2 * c_half);
            Tensor s = scale_mode == ScaleMode::clamp ? scale_clamp(raw) : exp(raw);
            Tensor inv_s = Tensor::constant(s.shape(), [&] {
                std::vector<double> v = s.value();
                for (auto& x : v) x = 1.0 / x;
                return v;
            }());
            xb = mul(sub(yb, t), inv_s);
        }
        return concat_channels(ya, xb);
    }
};

struct GlowStep {
    std::string prefix;
    ActNorm norm;
    ChannelMix mix;
    Coupling couple;
};

struct GlowScale {
    int channels = 0, height = 0, width = 0; // dims after the squeeze
    bool split = false;
    std::vector<GlowStep> steps;
};

class GlowModel final : public FlowModel {
public:
    explicit GlowModel(FlowConfig cfg) : FlowModel(std::move(cfg)) {}
    using FlowModel::add_param;

    FlowResult forward(const Tensor& x) const override {
        int batch = check_input(x);
        Tensor h = reshape(x, {batch, 1, cfg_.window_frames, cfg_.n_mels});
        Tensor log_det = Tensor::zeros({batch});
        std::vector<Tensor> parts;
        for (const auto& scale : scales_) {
            h = squeeze2(h);
            for (const auto& step : scale.steps) {
                {
                    LayerScope scope(step.prefix + "/actnorm");
                    h = step.norm.forward(h, log_det);
                    h.check_finite();
                }
                {
                    LayerScope scope(step.prefix + "/mix");
                    h = step.mix.forward(h, log_det);
                    h.check_finite();
                }
                {
                    LayerScope scope(step.prefix + "/coupling");
                    h = step.couple.forward(h, log_det);
                    h.check_finite();
                }
            }
            if (scale.split) {
                int half = scale.channels / 2;
                int hw = scale.height * scale.width;
                parts.push_back(reshape(slice_channels(h, half, scale.channels), {batch, half * hw}));
                h = slice_channels(h, 0, half);
            }
        }
        const auto& last = scales_.back();
        parts.push_back(reshape(h, {batch, last.channels * last.height * last.width}));
        Tensor z = parts[0];
        for (size_t i = 1; i < parts.size(); ++i) z = concat_cols(z, parts[i]);
        return {z, log_det};
    }

    std::vector<double> inverse(const std::vector<double>& z_flat, int batch) const override {
        int dim = cfg_.input_dim();
        if (batch <= 0 || z_flat.size() != static_cast<size_t>(batch) * dim)
            throw ShapeError("inverse input size does not match batch * input_dim");
        NoGradGuard ng;

        // Cut z back into the per-scale latent segments, in forward order.
        std::vector<Tensor> parts;
        int col = 0;
        Tensor zt = Tensor::constant({batch, dim}, z_flat);
        for (const auto& scale : scales_) {
            int c = scale.split ? scale.channels / 2 : scale.channels;
            int n = c * scale.height * scale.width;
            parts.push_back(reshape(slice_cols(zt, col, col + n), {batch, c, scale.height, scale.width}));
            col += n;
        }

        Tensor h;
        for (int k = static_cast<int>(scales_.size()) - 1; k >= 0; --k) {
            const auto& scale = scales_[static_cast<size_t>(k)];
            h = scale.split ? concat_channels(h, parts[static_cast<size_t>(k)])
                            : parts[static_cast<size_t>(k)];
            for (auto it = scale.steps.rbegin(); it != scale.steps.rend(); ++it) {
                h = it->couple.invert(h);
                h = it->mix.invert(h);
                h = it->norm.invert(h);
            }
            h = unsqueeze2(h);
        }
        return reshape(h, {batch, dim}).value();
    }

    // Data-dependent start for the normalization layers: one value-level
    // pass through the network, setting each layer's scale and bias so
    // its own output has per-channel zero mean and unit variance on this
    // batch. Layers are initialized in network order so downstream stats
    // see upstream layers already normalized.
    void init_from_batch(const Tensor& x) override {
        if (!needs_init_) return;
        NoGradGuard ng;
        int batch = check_input(x);
        Tensor h = reshape(x, {batch, 1, cfg_.window_frames, cfg_.n_mels});
        Tensor log_det = Tensor::zeros({batch});
        for (auto& scale : scales_) {
            h = squeeze2(h);
            for (auto& step : scale.steps) {
                set_norm_from_stats(step.norm, h);
                h = step.norm.forward(h, log_det);
                h = step.mix.forward(h, log_det);
                h = step.couple.forward(h, log_det);
            }
            if (scale.split) h = slice_channels(h, 0, scale.channels / 2);
        }
        needs_init_ = false;
    }

    bool needs_init() const override { return needs_init_; }
    void mark_initialized() override { needs_init_ = false; }

    std::vector<GlowScale> scales_;
    bool needs_init_ = true;

private:
    int check_input(const Tensor& x) const {
        int dim = cfg_.input_dim();
        if (x.shape().size() != 2 || x.shape()[1] != dim)
            throw ShapeError("flow input must be [batch, " + std::to_string(dim) + "], got " +
                             shape_str(x.shape()));
        return x.shape()[0];
    }

    static void set_norm_from_stats(ActNorm& norm, const Tensor& x) {
        int batch = x.shape()[0], channels = x.shape()[1];
        int hw = x.shape()[2] * x.shape()[3];
        const auto& v = x.value();
        auto& log_scale = norm.log_scale.mutable_value();
        auto& bias = norm.bias.mutable_value();
        int64_t n = static_cast<int64_t>(batch) * hw;
        for (int c = 0; c < channels; ++c) {
            double sum = 0.0, sq = 0.0;
            for (int b = 0; b < batch; ++b) {
                const double* p = v.data() + (static_cast<size_t>(b) * channels + c) * hw;
                for (int i = 0; i < hw; ++i) {
                    sum += p[i];
                    sq += p[i] * p[i];
                }
            }
            double mean = sum / static_cast<double>(n);
            double var = sq / static_cast<double>(n) - mean * mean;
            double stdev = std::sqrt(var > 0.0 ? var : 0.0);
            if (stdev < 1e-6) stdev = 1e-6;
            log_scale[static_cast<size_t>(c)] = -std::log(stdev);
            bias[static_cast<size_t>(c)] = -mean / stdev;
        }
    }
};

} // namespace

// ---------------------------------------------------------------------------

Tensor scale_clamp(const Tensor& raw) {
    return add_scalar(sigmoid(add_scalar(raw, 2.0)), 1e-3);
}

std::string nll_norm_name(NllNorm n) {
    return n == NllNorm::total ? "total" : "per_dim";
}

NllNorm nll_norm_from_name(const std::string& s) {
    if (s == "total") return NllNorm::total;
    if (s == "per_dim") return NllNorm::per_dim;
    throw ConfigError("unknown nll normalization '" + s + "' (expected total or per_dim)");
}

CouplingMode FlowConfig::coupling_mode() const {
    if (preset == "maf_additive" || preset == "glow_additive") return CouplingMode::additive;
    if (preset == "maf_affine" || preset == "glow_affine") return CouplingMode::affine;
    throw ConfigError("unknown preset '" + preset +
                      "' (expected maf_additive, maf_affine, glow_additive or glow_affine)");
}

NllNorm FlowConfig::resolved_normalization() const {
    if (nll_normalization.empty()) return is_glow() ? NllNorm::per_dim : NllNorm::total;
    return nll_norm_from_name(nll_normalization);
}

void to_json(nlohmann::json& j, const FlowConfig& c) {
    j = nlohmann::json{{"preset", c.preset},
                       {"window_frames", c.window_frames},
                       {"n_mels", c.n_mels},
                       {"made_blocks", c.made_blocks},
                       {"made_hidden", c.made_hidden},
                       {"glow_blocks", c.glow_blocks},
                       {"glow_steps", c.glow_steps},
                       {"glow_hidden", c.glow_hidden},
                       {"glow_dense_conditioner", c.glow_dense_conditioner},
                       {"scale_mode", c.scale_mode == ScaleMode::clamp ? "clamp" : "raw_exp"},
                       {"nll_normalization", c.nll_normalization},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, FlowConfig& c) {
    FlowConfig d;
    c.preset = j.value("preset", d.preset);
    c.window_frames = j.value("window_frames", d.window_frames);
    c.n_mels = j.value("n_mels", d.n_mels);
    c.made_blocks = j.value("made_blocks", d.made_blocks);
    c.made_hidden = j.value("made_hidden", d.made_hidden);
    c.glow_blocks = j.value("glow_blocks", d.glow_blocks);
    c.glow_steps = j.value("glow_steps", d.glow_steps);
    c.glow_hidden = j.value("glow_hidden", d.glow_hidden);
    c.glow_dense_conditioner = j.value("glow_dense_conditioner", d.glow_dense_conditioner);
    std::string sm = j.value("scale_mode", std::string("clamp"));
    if (sm == "clamp") {
        c.scale_mode = ScaleMode::clamp;
    } else if (sm == "raw_exp") {
        c.scale_mode = ScaleMode::raw_exp;
    } else {
        throw ConfigError("unknown scale_mode '" + sm + "' (expected clamp or raw_exp)");
    }
    c.nll_normalization = j.value("nll_normalization", d.nll_normalization);
    c.seed = j.value("seed", d.seed);
}

std::unique_ptr<FlowModel> build_maf(const FlowConfig& cfg) {
    if (cfg.is_glow()) bad_config("build_maf called with glow preset '" + cfg.preset + "'");
    CouplingMode mode = cfg.coupling_mode();
    int dim = cfg.input_dim();
    if (dim < 2) bad_config("autoregressive blocks need input_dim >= 2");
    if (cfg.made_blocks < 1) bad_config("made_blocks must be >= 1");
    if (cfg.made_hidden < 1) bad_config("made_hidden must be >= 1");

    auto model = std::make_unique<MafModel>(cfg);
    Rng rng(substream(cfg.seed, "init"));
    int hidden = cfg.made_hidden;
    double bound = 1.0 / std::sqrt(static_cast<double>(dim));

    for (int b = 0; b < cfg.made_blocks; ++b) {
        MadeBlock blk;
        blk.name = "made" + std::to_string(b);
        blk.mode = mode;
        blk.scale_mode = cfg.scale_mode;

        // Alternate the dimension order between blocks so the stack as a
        // whole can couple every pair of dimensions.
        blk.order.resize(static_cast<size_t>(dim));
        for (int i = 0; i < dim; ++i)
            blk.order[static_cast<size_t>(i)] = (b % 2 == 0) ? i + 1 : dim - i;

        // Hidden degrees cycle 1..D-1; a hidden unit may read inputs at
        // or below its degree, an output reads hidden units strictly
        // below its own position.
        std::vector<int> degree(static_cast<size_t>(hidden));
        for (int h = 0; h < hidden; ++h) degree[static_cast<size_t>(h)] = h % (dim - 1) + 1;
        std::vector<double> m_in(static_cast<size_t>(dim) * hidden, 0.0);
        std::vector<double> m_out(static_cast<size_t>(hidden) * dim, 0.0);
        for (int i = 0; i < dim; ++i)
            for (int h = 0; h < hidden; ++h)
                if (degree[static_cast<size_t>(h)] >= blk.order[static_cast<size_t>(i)])
                    m_in[static_cast<size_t>(i) * hidden + h] = 1.0;
        for (int h = 0; h < hidden; ++h)
            for (int j = 0; j < dim; ++j)
                if (blk.order[static_cast<size_t>(j)] > degree[static_cast<size_t>(h)])
                    m_out[static_cast<size_t>(h) * dim + j] = 1.0;
        blk.mask_in = Tensor::constant({dim, hidden}, std::move(m_in));
        blk.mask_out = Tensor::constant({hidden, dim}, std::move(m_out));

        blk.w_hidden = Tensor::parameter({dim, hidden}, uniform_init(rng, int64_t(dim) * hidden, bound));
        blk.b_hidden = Tensor::parameter({hidden}, std::vector<double>(static_cast<size_t>(hidden), 0.0));
        // Zero output heads make the fresh model start near the identity.
        blk.w_mu = Tensor::parameter({hidden, dim}, std::vector<double>(static_cast<size_t>(hidden) * dim, 0.0));
        blk.b_mu = Tensor::parameter({dim}, std::vector<double>(static_cast<size_t>(dim), 0.0));
        model->add_param(blk.name + "/w_hidden", blk.w_hidden);
        model->add_param(blk.name + "/b_hidden", blk.b_hidden);
        model->add_param(blk.name + "/w_mu", blk.w_mu);
        model->add_param(blk.name + "/b_mu", blk.b_mu);
        if (mode == CouplingMode::affine) {
            blk.w_scale = Tensor::parameter({hidden, dim}, std::vector<double>(static_cast<size_t>(hidden) * dim, 0.0));
            blk.b_scale = Tensor::parameter({dim}, std::vector<double>(static_cast<size_t>(dim), 0.0));
            model->add_param(blk.name + "/w_scale", blk.w_scale);
            model->add_param(blk.name + "/b_scale", blk.b_scale);
        }
        model->blocks_.push_back(std::move(blk));
    }
    return model;
}

std::unique_ptr<FlowModel> build_glow(const FlowConfig& cfg) {
    if (!cfg.is_glow()) bad_config("build_glow called with preset '" + cfg.preset + "'");
    CouplingMode mode = cfg.coupling_mode();
    if (cfg.glow_blocks < 1) bad_config("glow_blocks must be >= 1");
    if (cfg.glow_steps < 1) bad_config("glow_steps must be >= 1");
    if (cfg.glow_hidden < 1) bad_config("glow_hidden must be >= 1");

    auto model = std::make_unique<GlowModel>(cfg);
    Rng rng(substream(cfg.seed, "init"));

    int channels = 1, height = cfg.window_frames, width = cfg.n_mels;
    for (int k = 0; k < cfg.glow_blocks; ++k) {
        if (height % 2 != 0 || width % 2 != 0)
            bad_config("scale " + std::to_string(k) + " needs even spatial dims, got " +
                       std::to_string(height) + "x" + std::to_string(width));
        channels *= 4;
        height /= 2;
        width /= 2;

        GlowScale scale;
        scale.channels = channels;
        scale.height = height;
        scale.width = width;
        scale.split = k + 1 < cfg.glow_blocks;

        int half = channels / 2;
        int hid = cfg.glow_hidden;
        int out_c = mode == CouplingMode::affine ? 2 * half : half;
        for (int s = 0; s < cfg.glow_steps; ++s) {
            GlowStep step;
            step.prefix = step_prefix(k, s);

            step.norm.log_scale = Tensor::parameter({channels}, std::vector<double>(static_cast<size_t>(channels), 0.0));
            step.norm.bias = Tensor::parameter({channels}, std::vector<double>(static_cast<size_t>(channels), 0.0));
            model->add_param(step.prefix + "/actnorm/log_scale", step.norm.log_scale);
            model->add_param(step.prefix + "/actnorm/bias", step.norm.bias);

            step.mix.w = Tensor::parameter({channels, channels}, orthogonal_init(rng, channels));
            model->add_param(step.prefix + "/mix/w", step.mix.w);

            Coupling& cp = step.couple;
            cp.mode = mode;
            cp.scale_mode = cfg.scale_mode;
            cp.dense = cfg.glow_dense_conditioner;
            cp.c_half = half;
            if (!cp.dense) {
                cp.w1 = Tensor::parameter({hid, half, 3, 3},
                                          uniform_init(rng, int64_t(hid) * half * 9, 1.0 / std::sqrt(9.0 * half)));
                cp.b1 = Tensor::parameter({hid}, std::vector<double>(static_cast<size_t>(hid), 0.0));
                cp.w2 = Tensor::parameter({hid, hid, 1, 1},
                                          uniform_init(rng, int64_t(hid) * hid, 1.0 / std::sqrt(double(hid))));
                cp.b2 = Tensor::parameter({hid}, std::vector<double>(static_cast<size_t>(hid), 0.0));
                cp.w3 = Tensor::parameter({out_c, hid, 3, 3},
                                          std::vector<double>(static_cast<size_t>(out_c) * hid * 9, 0.0));
                cp.b3 = Tensor::parameter({out_c}, std::vector<double>(static_cast<size_t>(out_c), 0.0));
            } else {
                int in_n = half * height * width;
                int out_n = out_c * height * width;
                cp.w1 = Tensor::parameter({in_n, hid},
                                          uniform_init(rng, int64_t(in_n) * hid, 1.0 / std::sqrt(double(in_n))));
                cp.b1 = Tensor::parameter({hid}, std::vector<double>(static_cast<size_t>(hid), 0.0));
                cp.w2 = Tensor::parameter({hid, hid},
                                          uniform_init(rng, int64_t(hid) * hid, 1.0 / std::sqrt(double(hid))));
                cp.b2 = Tensor::parameter({hid}, std::vector<double>(static_cast<size_t>(hid), 0.0));
                cp.w3 = Tensor::parameter({hid, out_n},
                                          std::vector<double>(static_cast<size_t>(hid) * out_n, 0.0));
                cp.b3 = Tensor::parameter({out_n}, std::vector<double>(static_cast<size_t>(out_n), 0.0));
            }
            model->add_param(step.prefix + "/coupling/w1", cp.w1);
            model->add_param(step.prefix + "/coupling/b1", cp.b1);
            model->add_param(step.prefix + "/coupling/w2", cp.w2);
            model->add_param(step.prefix + "/coupling/b2", cp.b2);
            model->add_param(step.prefix + "/coupling/w3", cp.w3);
            model->add_param(step.prefix + "/coupling/b3", cp.b3);

            scale.steps.push_back(std::move(step));
        }
        bool split = scale.split;
        model->scales_.push_back(std::move(scale));
        if (split) channels = half;
    }
    return model;
}

std::unique_ptr<FlowModel> build_flow(const FlowConfig& cfg) {
    cfg.coupling_mode(); // validates the preset string
    return cfg.is_glow() ? build_glow(cfg) : build_maf(cfg);
}

Tensor nll_total_graph(const FlowModel& model, const Tensor& x) {
    FlowResult r = model.forward(x);
    int dim = model.input_dim();
    LayerScope scope("nll");
    Tensor half_sq = mul_scalar(sum_rows(mul(r.z, r.z)), 0.5);
    Tensor out = add_scalar(sub(half_sq, r.log_det), 0.5 * dim * kLog2Pi);
    out.check_finite();
    return out;
}

Tensor nll_graph(const FlowModel& model, const Tensor& x) {
    Tensor total = nll_total_graph(model, x);
    if (model.nll_normalization() == NllNorm::per_dim)
        return mul_scalar(total, 1.0 / model.input_dim());
    return total;
}

std::vector<NllValue> nll(const FlowModel& model, const std::vector<double>& x_flat, int batch) {
    int dim = model.input_dim();
    if (batch <= 0 || x_flat.size() != static_cast<size_t>(batch) * dim)
        throw ShapeError("nll input size does not match batch * input_dim");
    NoGradGuard ng;
    Tensor x = Tensor::constant({batch, dim}, x_flat);
    Tensor t = nll_graph(model, x);
    std::vector<NllValue> out(static_cast<size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        out[static_cast<size_t>(b)].value = t.value()[static_cast<size_t>(b)];
        out[static_cast<size_t>(b)].normalization = model.nll_normalization();
        out[static_cast<size_t>(b)].dim = dim;
    }
    return out;
}

void save_model_arrays(ArrayFile& af, const FlowModel& model) {
    const auto& params = model.parameters();
    const auto& names = model.parameter_names();
    for (size_t i = 0; i < params.size(); ++i) {
        af.put_f32("params/" + names[i], params[i].shape(), params[i].value());
        af.put_f64("train/params/" + names[i], params[i].shape(), params[i].value());
    }
}

void load_model_arrays(FlowModel& model, const ArrayFile& af) {
    auto& params = model.parameters();
    const auto& names = model.parameter_names();
    for (size_t i = 0; i < params.size(); ++i) {
        std::string train_key = "train/params/" + names[i];
        std::string key = af.has(train_key) ? train_key : "params/" + names[i];
        if (!af.has(key))
            throw FormatError("checkpoint is missing parameter '" + names[i] + "'");
        const auto& entry = af.get(key);
        if (entry.shape != params[i].shape())
            throw FormatError("checkpoint parameter '" + names[i] + "' has shape " +
                              shape_str(entry.shape) + ", model expects " +
                              shape_str(params[i].shape()));
        params[i].mutable_value() = entry.data;
    }
    model.mark_initialized();
}

} // namespace nfad
