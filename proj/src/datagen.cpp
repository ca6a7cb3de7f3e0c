#include "nfad/datagen.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nfad/errors.hpp"
#include "nfad/wav.hpp"

namespace nfad {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kNyquist = kGenSampleRate / 2.0;

// Sinusoids per noise band. The sum of this many random-phase tones at
// random in-band frequencies is close enough to Gaussian band noise for
// the log-mel features, and it renders with plain oscillators.
constexpr int kNoiseOscillators = 24;

void check_template(const SpectralTemplate& t, const std::string& what) {
    if (t.tones.empty() && t.bands.empty())
        throw SpecError(what + ": template has no components");
    for (const auto& tone : t.tones) {
        if (tone.fundamental_hz <= 0.0 || tone.fundamental_hz >= kNyquist)
            throw SpecError(what + ": tone fundamental outside (0, nyquist)");
        if (tone.n_harmonics < 1) throw SpecError(what + ": tone needs at least one harmonic");
        if (tone.amplitude < 0.0) throw SpecError(what + ": negative tone amplitude");
        if (tone.decay <= 0.0 || tone.decay > 1.0)
            throw SpecError(what + ": harmonic decay must be in (0, 1]");
    }
    for (const auto& band : t.bands) {
        if (band.low_hz <= 0.0 || band.high_hz <= band.low_hz || band.high_hz >= kNyquist)
            throw SpecError(what + ": noise band must satisfy 0 < low < high < nyquist");
        if (band.amplitude < 0.0) throw SpecError(what + ": negative band amplitude");
    }
}

// Accumulates one sinusoid via complex rotation; far cheaper than a sin()
// call per sample and drift over a few hundred thousand samples is
// negligible.
void add_sinusoid(std::vector<double>& samples, double freq_hz, double phase, double amp) {
    if (amp == 0.0 || freq_hz >= kNyquist) return;
    std::complex<double> z = std::polar(1.0, phase);
    const std::complex<double> w = std::polar(1.0, kTwoPi * freq_hz / kGenSampleRate);
    for (double& s : samples) {
        s += amp * z.imag();
        z *= w;
    }
}

// Renders a template at the given gain. Draw order is fixed (tones, then
// bands, each component's jitter before its phases) so a file's content
// is a pure function of its substream.
void add_template(std::vector<double>& samples, const SpectralTemplate& t, double gain,
                  double jitter, Rng& rng) {
    for (const auto& tone : t.tones) {
        double amp0 = tone.amplitude * (1.0 + jitter * rng.normal());
        for (int k = 0; k < tone.n_harmonics; ++k) {
            double f = tone.fundamental_hz * (k + 1);
            double phase = rng.uniform(0.0, kTwoPi);
            add_sinusoid(samples, f, phase, gain * amp0 * std::pow(tone.decay, k));
        }
    }
    for (const auto& band : t.bands) {
        double amp = band.amplitude * (1.0 + jitter * rng.normal());
        // per-oscillator amplitude chosen so the band sums to roughly the
        // requested RMS: N tones of amplitude a have RMS a*sqrt(N/2)
        double per_osc = amp * std::sqrt(2.0 / kNoiseOscillators);
        for (int i = 0; i < kNoiseOscillators; ++i) {
            double f = rng.uniform(band.low_hz, band.high_hz);
            double phase = rng.uniform(0.0, kTwoPi);
            add_sinusoid(samples, f, phase, gain * per_osc);
        }
    }
}

std::string template_manifest(const SpectralTemplate& t) {
    std::string out;
    char buf[128];
    for (const auto& tone : t.tones) {
        std::snprintf(buf, sizeof(buf), "tone f=%.6g n=%d a=%.6g d=%.6g; ", tone.fundamental_hz,
                      tone.n_harmonics, tone.amplitude, tone.decay);
        out += buf;
    }
    for (const auto& band : t.bands) {
        std::snprintf(buf, sizeof(buf), "band lo=%.6g hi=%.6g a=%.6g; ", band.low_hz,
                      band.high_hz, band.amplitude);
        out += buf;
    }
    if (!out.empty()) out.erase(out.size() - 2); // trailing "; "
    return out;
}

void write_manifest(const SyntheticSpec& spec, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    char buf[160];
    f << "machine_type=" << spec.machine_type << "\n";
    f << "n_ids=" << spec.n_ids << "\n";
    f << "train_per_id=" << spec.train_per_id << "\n";
    f << "test_normal_per_id=" << spec.test_normal_per_id << "\n";
    f << "test_anomaly_per_id=" << spec.test_anomaly_per_id << "\n";
    std::snprintf(buf, sizeof(buf), "duration_s=%.6g\n", spec.duration_s);
    f << buf;
    f << "sample_rate_hz=" << kGenSampleRate << "\n";
    f << "anomaly=" << anomaly_kind_name(spec.anomaly) << "\n";
    std::snprintf(buf, sizeof(buf), "anomaly_magnitude=%.6g\nanomaly_tone_hz=%.6g\n",
                  spec.anomaly_magnitude, spec.anomaly_tone_hz);
    f << buf;
    std::snprintf(buf, sizeof(buf), "noise_floor=%.6g\namplitude_jitter=%.6g\n", spec.noise_floor,
                  spec.amplitude_jitter);
    f << buf;
    f << "seed=" << spec.seed << "\n";
    f << "shared=" << template_manifest(spec.shared) << "\n";
    for (int i = 0; i < spec.n_ids; ++i) {
        std::snprintf(buf, sizeof(buf), "specific_%02d=", i);
        f << buf << template_manifest(spec.specific[static_cast<size_t>(i)]) << "\n";
    }
}

std::string wav_name(const char* label, int id, int seq) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_id_%02d_%08d.wav", label, id, seq);
    return buf;
}

} // namespace

std::vector<double> spectral_envelope(const SpectralTemplate& t, int n_bins, double nyquist_hz) {
    std::vector<double> env(static_cast<size_t>(n_bins), 0.0);
    double bin_width = nyquist_hz / n_bins;
    auto bin_of = [&](double f) { return static_cast<int>(f / bin_width); };
    for (const auto& tone : t.tones) {
        for (int k = 0; k < tone.n_harmonics; ++k) {
            double f = tone.fundamental_hz * (k + 1);
            if (f >= nyquist_hz) break;
            env[static_cast<size_t>(bin_of(f))] += tone.amplitude * std::pow(tone.decay, k);
        }
    }
    for (const auto& band : t.bands) {
        int lo = bin_of(band.low_hz);
        int hi = std::min(bin_of(band.high_hz), n_bins - 1);
        if (hi < lo) hi = lo;
        double per_bin = band.amplitude / (hi - lo + 1);
        for (int b = lo; b <= hi; ++b) env[static_cast<size_t>(b)] += per_bin;
    }
    return env;
}

double template_distance(const SpectralTemplate& a, const SpectralTemplate& b) {
    auto ea = spectral_envelope(a);
    auto eb = spectral_envelope(b);
    double acc = 0.0;
    for (size_t i = 0; i < ea.size(); ++i) {
        double d = ea[i] - eb[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

const char* anomaly_kind_name(AnomalyKind k) {
    switch (k) {
    case AnomalyKind::tone: return "tone";
    case AnomalyKind::swap: return "swap";
    case AnomalyKind::broadband: return "broadband";
    }
    return "?";
}

AnomalyKind anomaly_kind_from_name(const std::string& name) {
    if (name == "tone") return AnomalyKind::tone;
    if (name == "swap") return AnomalyKind::swap;
    if (name == "broadband") return AnomalyKind::broadband;
    throw ConfigError("unknown anomaly kind '" + name + "'");
}

void SyntheticSpec::validate() const {
    if (machine_type.empty()) throw SpecError("machine_type is empty");
    if (machine_type.find('/') != std::string::npos)
        throw SpecError("machine_type must not contain '/'");
    if (n_ids < 1) throw SpecError("n_ids must be at least 1");
    if (static_cast<int>(specific.size()) != n_ids)
        throw SpecError("need exactly one specific template per ID");
    if (train_per_id < 1) throw SpecError("train_per_id must be at least 1");
    if (test_normal_per_id < 0 || test_anomaly_per_id < 0)
        throw SpecError("test counts must be non-negative");
    if (duration_s < 0.1) throw SpecError("duration_s must be at least 0.1");
    if (anomaly_magnitude < 0.0) throw SpecError("anomaly_magnitude must be non-negative");
    if (anomaly == AnomalyKind::swap) {
        if (n_ids < 2) throw SpecError("swap anomalies need at least two IDs");
        if (anomaly_magnitude > 1.0) throw SpecError("swap blend weight cannot exceed 1");
    }
    if (anomaly == AnomalyKind::tone &&
        (anomaly_tone_hz <= 0.0 || anomaly_tone_hz >= kNyquist))
        throw SpecError("anomaly_tone_hz outside (0, nyquist)");
    if (noise_floor < 0.0) throw SpecError("noise_floor must be non-negative");
    if (amplitude_jitter < 0.0 || amplitude_jitter >= 1.0)
        throw SpecError("amplitude_jitter must be in [0, 1)");
    check_template(shared, "shared");
    for (int i = 0; i < n_ids; ++i) {
        char what[32];
        std::snprintf(what, sizeof(what), "specific %02d", i);
        check_template(specific[static_cast<size_t>(i)], what);
    }
    for (int i = 0; i < n_ids; ++i)
        for (int j = i + 1; j < n_ids; ++j) {
            double d = template_distance(specific[static_cast<size_t>(i)],
                                         specific[static_cast<size_t>(j)]);
            if (d < kMinTemplateDistance) {
                char msg[96];
                std::snprintf(msg, sizeof(msg),
                              "specific templates %02d and %02d too close (distance %.4g)", i, j,
                              d);
                throw SpecError(msg);
            }
        }
}

SyntheticSpec make_default_spec(uint64_t seed, int n_ids, const std::string& machine_type,
                                int variant) {
    if (n_ids < 1 || n_ids > 8) throw SpecError("make_default_spec supports 1..8 IDs");
    SyntheticSpec spec;
    spec.machine_type = machine_type;
    spec.n_ids = n_ids;
    spec.seed = seed;

    // frequency plan: the shared stack sits low, each ID owns a slice of
    // the midrange, and variants shift everything so two variants do not
    // overlap anywhere that matters
    double v = static_cast<double>(variant);
    spec.shared.tones.push_back({120.0 + 40.0 * v, 5, 0.16, 0.75});
    spec.shared.tones.push_back({233.0 + 60.0 * v, 3, 0.10, 0.70});
    spec.shared.bands.push_back({300.0 + 200.0 * v, 900.0 + 200.0 * v, 0.05});

    Rng rng = substream(seed, "templates");
    for (int i = 0; i < n_ids; ++i) {
        SpectralTemplate t;
        double detune = rng.uniform(-8.0, 8.0);
        t.tones.push_back({700.0 + 180.0 * i + 25.0 * v + detune, 3, 0.13, 0.65});
        double lo = 1600.0 + 450.0 * i + 120.0 * v;
        t.bands.push_back({lo, lo + 350.0, 0.06});
        spec.specific.push_back(std::move(t));
    }
    return spec;
}

std::vector<double> render_recording(const SyntheticSpec& spec, int id, bool anomalous, Rng& rng) {
    if (id < 0 || id >= spec.n_ids) throw SpecError("render_recording: ID out of range");
    auto n = static_cast<size_t>(spec.duration_s * kGenSampleRate + 0.5);
    std::vector<double> samples(n, 0.0);

    add_template(samples, spec.shared, 1.0, spec.amplitude_jitter, rng);

    double own_gain = 1.0;
    if (anomalous && spec.anomaly == AnomalyKind::swap) {
        // blend another ID's specific template in; magnitude 1 replaces
        // the own template entirely
        own_gain = 1.0 - spec.anomaly_magnitude;
        int other = static_cast<int>((id + 1 + rng.below(static_cast<uint64_t>(spec.n_ids - 1))) %
                                     spec.n_ids);
        add_template(samples, spec.specific[static_cast<size_t>(other)], spec.anomaly_magnitude,
                     spec.amplitude_jitter, rng);
    }
    add_template(samples, spec.specific[static_cast<size_t>(id)], own_gain, spec.amplitude_jitter,
                 rng);

    if (anomalous && spec.anomaly == AnomalyKind::tone)
        add_sinusoid(samples, spec.anomaly_tone_hz, rng.uniform(0.0, kTwoPi),
                     spec.anomaly_magnitude);

    double extra_noise = (anomalous && spec.anomaly == AnomalyKind::broadband)
                             ? spec.anomaly_magnitude
                             : 0.0;
    for (double& s : samples) s += (spec.noise_floor + extra_noise) * rng.normal();
    return samples;
}

void generate(const SyntheticSpec& spec, const std::string& out_root) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::path base = fs::path(out_root) / spec.machine_type;
    fs::create_directories(base / "train");
    fs::create_directories(base / "test");

    // file_idx enumerates every file in a fixed order so each one gets
    // its own substream regardless of how the counts are configured
    uint64_t file_idx = 0;
    auto emit = [&](const fs::path& dir, const char* label, int id, int seq, bool anomalous) {
        Rng rng = substream(spec.seed, "wav", file_idx++);
        auto samples = render_recording(spec, id, anomalous, rng);
        write_wav_16bit((dir / wav_name(label, id, seq)).string(), samples, kGenSampleRate);
    };

    for (int id = 0; id < spec.n_ids; ++id) {
        for (int s = 0; s < spec.train_per_id; ++s) emit(base / "train", "normal", id, s, false);
        for (int s = 0; s < spec.test_normal_per_id; ++s)
            emit(base / "test", "normal", id, s, false);
        for (int s = 0; s < spec.test_anomaly_per_id; ++s)
            emit(base / "test", "anomaly", id, s, true);
    }
    write_manifest(spec, base / "spec.txt");
}

void generate_cross_type(const SyntheticSpec& a, const SyntheticSpec& b,
                         const std::string& out_root) {
    a.validate();
    b.validate();
    if (a.machine_type == b.machine_type)
        throw SpecError("cross-type generation needs two distinct machine_type names");
    double d = template_distance(a.shared, b.shared);
    if (d < kMinTemplateDistance) {
        char msg[96];
        std::snprintf(msg, sizeof(msg), "shared templates too close for cross-type data (%.4g)",
                      d);
        throw SpecError(msg);
    }
    generate(a, out_root);
    generate(b, out_root);
}

} // namespace nfad
