#include "nfad/features.hpp"

#include <algorithm>
#include <cmath>

namespace nfad {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMelFMaxHz = 8000.0;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

} // namespace

std::string label_name(Label l) {
    switch (l) {
        case Label::normal: return "normal";
        case Label::anomaly: return "anomaly";
        default: return "unlabeled";
    }
}

Label label_from_name(const std::string& s) {
    if (s == "normal") return Label::normal;
    if (s == "anomaly") return Label::anomaly;
    if (s == "unlabeled") return Label::unlabeled;
    throw FormatError("unknown label '" + s + "'");
}

Recording load_wav(const std::string& path) {
    WavData w = read_wav(path);
    if (w.samples.empty()) throw FormatError(path + ": no samples");
    if (w.sample_rate_hz != 16000)
        throw SampleRateError(path + ": sample rate " + std::to_string(w.sample_rate_hz) +
                              " Hz, expected 16000");
    Recording rec;
    rec.samples = std::move(w.samples);
    rec.sample_rate_hz = w.sample_rate_hz;
    rec.source_path = path;
    return rec;
}

void fft_inplace(std::vector<double>& re, std::vector<double>& im) {
    size_t n = re.size();
    if (n != im.size() || !is_pow2(static_cast<int>(n)))
        throw ShapeError("fft_inplace: length must be a power of two");
    // bit reversal
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * kPi / static_cast<double>(len);
        double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (size_t k = 0; k < len / 2; ++k) {
                size_t a = i + k, b = i + k + len / 2;
                double tr = re[b] * cr - im[b] * ci;
                double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

PowerSpectrogram stft_power(const std::vector<double>& samples, int frame_length, int hop_length) {
    if (!is_pow2(frame_length)) throw ShapeError("stft_power: frame_length must be a power of two");
    if (hop_length <= 0 || hop_length > frame_length)
        throw ShapeError("stft_power: need 0 < hop_length <= frame_length");
    int64_t n = static_cast<int64_t>(samples.size());
    int pad = frame_length / 2;
    // reflect padding needs at least pad+1 samples to mirror
    if (n < pad + 1)
        throw TooShortError("stft_power: recording of " + std::to_string(n) +
                            " samples is too short for frame length " + std::to_string(frame_length));

    std::vector<double> padded(n + 2 * static_cast<int64_t>(pad));
    for (int j = 0; j < pad; ++j) padded[j] = samples[pad - j];
    std::copy(samples.begin(), samples.end(), padded.begin() + pad);
    for (int j = 0; j < pad; ++j) padded[pad + n + j] = samples[n - 2 - j];

    std::vector<double> window(frame_length);
    for (int i = 0; i < frame_length; ++i)
        window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / frame_length);

    PowerSpectrogram out;
    out.n_frames = 1 + static_cast<int>(n / hop_length);
    out.n_bins = frame_length / 2 + 1;
    out.data.resize(static_cast<size_t>(out.n_frames) * out.n_bins);

    std::vector<double> re(frame_length), im(frame_length);
    for (int t = 0; t < out.n_frames; ++t) {
        size_t base = static_cast<size_t>(t) * hop_length;
        for (int i = 0; i < frame_length; ++i) {
            re[i] = padded[base + i] * window[i];
            im[i] = 0.0;
        }
        fft_inplace(re, im);
        double* row = out.data.data() + static_cast<size_t>(t) * out.n_bins;
        for (int b = 0; b < out.n_bins; ++b) row[b] = re[b] * re[b] + im[b] * im[b];
    }
    return out;
}

PowerSpectrogram stft_power(const Recording& rec, int frame_length, int hop_length) {
    return stft_power(rec.samples, frame_length, hop_length);
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }

double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::vector<double> mel_filterbank(int n_fft_bins, int n_mels, int sample_rate_hz) {
    if (n_mels < 1) throw ShapeError("mel_filterbank: n_mels must be >= 1");
    int n_fft = 2 * (n_fft_bins - 1);
    double mel_hi = hz_to_mel(kMelFMaxHz);
    std::vector<double> edges(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(mel_hi * i / (n_mels + 1));

    std::vector<double> fb(static_cast<size_t>(n_mels) * n_fft_bins, 0.0);
    for (int m = 0; m < n_mels; ++m) {
        double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
        bool any = false;
        for (int b = 0; b < n_fft_bins; ++b) {
            double f = static_cast<double>(b) * sample_rate_hz / n_fft;
            double w = 0.0;
            if (f >= lo && f <= mid && mid > lo)
                w = (f - lo) / (mid - lo);
            else if (f > mid && f <= hi && hi > mid)
                w = (hi - f) / (hi - mid);
            if (w > 0.0) {
                fb[static_cast<size_t>(m) * n_fft_bins + b] = w;
                any = true;
            }
        }
        if (!any)
            throw DegenerateFilterError("mel filter " + std::to_string(m) +
                                        " has no positive weight; n_mels too large for the FFT resolution");
    }
    return fb;
}

LogMelSpectrogram log_mel(const PowerSpectrogram& power, const std::vector<double>& fb, int n_mels,
                          double floor_value) {
    if (fb.size() != static_cast<size_t>(n_mels) * power.n_bins)
        throw ShapeError("log_mel: filterbank does not match spectrogram bins");
    LogMelSpectrogram out;
    out.n_frames = power.n_frames;
    out.n_mels = n_mels;
    out.frames.resize(static_cast<size_t>(power.n_frames) * n_mels);
    for (int t = 0; t < power.n_frames; ++t) {
        const double* p = power.data.data() + static_cast<size_t>(t) * power.n_bins;
        double* row = out.frames.data() + static_cast<size_t>(t) * n_mels;
        for (int m = 0; m < n_mels; ++m) {
            const double* w = fb.data() + static_cast<size_t>(m) * power.n_bins;
            double acc = 0.0;
            for (int b = 0; b < power.n_bins; ++b) acc += w[b] * p[b];
            row[m] = std::log10(std::max(acc, floor_value));
        }
    }
    return out;
}

std::vector<FeatureWindow> make_windows(const LogMelSpectrogram& spec, int window_frames, int window_hop,
                                        const std::string& recording_id) {
    if (window_hop < 1) throw ShapeError("make_windows: window_hop must be >= 1");
    if (window_frames > spec.n_frames)
        throw TooShortError("make_windows: " + std::to_string(spec.n_frames) + " frames cannot fill a window of " +
                            std::to_string(window_frames));
    int count = (spec.n_frames - window_frames) / window_hop + 1;
    std::vector<FeatureWindow> out;
    out.reserve(count);
    for (int k = 0; k < count; ++k) {
        FeatureWindow w;
        w.window_frames = window_frames;
        w.recording = recording_id;
        w.start_frame = k * window_hop;
        w.values.assign(spec.frames.begin() + static_cast<size_t>(w.start_frame) * spec.n_mels,
                        spec.frames.begin() + static_cast<size_t>(w.start_frame + window_frames) * spec.n_mels);
        out.push_back(std::move(w));
    }
    return out;
}

void to_json(nlohmann::json& j, const FeatureConfig& c) {
    j = {{"frame_length", c.frame_length}, {"hop_length", c.hop_length}, {"n_mels", c.n_mels},
         {"window_frames", c.window_frames}, {"window_hop", c.window_hop},
         {"log_floor", c.log_floor}};
}

void from_json(const nlohmann::json& j, FeatureConfig& c) {
    c.frame_length = j.at("frame_length").get<int>();
    c.hop_length = j.at("hop_length").get<int>();
    c.n_mels = j.at("n_mels").get<int>();
    c.window_frames = j.at("window_frames").get<int>();
    c.window_hop = j.at("window_hop").get<int>();
    c.log_floor = j.at("log_floor").get<double>();
}

LogMelSpectrogram compute_log_mel(const Recording& rec, const FeatureConfig& cfg) {
    PowerSpectrogram p = stft_power(rec, cfg.frame_length, cfg.hop_length);
    std::vector<double> fb = mel_filterbank(p.n_bins, cfg.n_mels, rec.sample_rate_hz);
    LogMelSpectrogram s = log_mel(p, fb, cfg.n_mels, cfg.log_floor);
    s.frame_length = cfg.frame_length;
    s.hop_length = cfg.hop_length;
    return s;
}

FeatureStats compute_feature_stats(const std::vector<LogMelSpectrogram>& specs) {
    if (specs.empty()) throw EmptyBatchError("compute_feature_stats: no spectrograms");
    int n_mels = specs[0].n_mels;
    std::vector<double> sum(n_mels, 0.0), sumsq(n_mels, 0.0);
    int64_t n = 0;
    for (const auto& s : specs) {
        if (s.n_mels != n_mels) throw ShapeError("compute_feature_stats: inconsistent n_mels");
        for (int t = 0; t < s.n_frames; ++t) {
            const double* row = s.frames.data() + static_cast<size_t>(t) * n_mels;
            for (int m = 0; m < n_mels; ++m) {
                sum[m] += row[m];
                sumsq[m] += row[m] * row[m];
            }
        }
        n += s.n_frames;
    }
    FeatureStats st;
    st.mean.resize(n_mels);
    st.stdev.resize(n_mels);
    for (int m = 0; m < n_mels; ++m) {
        st.mean[m] = sum[m] / static_cast<double>(n);
        double var = sumsq[m] / static_cast<double>(n) - st.mean[m] * st.mean[m];
        st.stdev[m] = std::max(std::sqrt(std::max(var, 0.0)), 1e-6);
    }
    return st;
}

FeatureStats identity_stats(int n_mels) {
    FeatureStats st;
    st.mean.assign(n_mels, 0.0);
    st.stdev.assign(n_mels, 1.0);
    return st;
}

void standardize_in_place(LogMelSpectrogram& spec, const FeatureStats& st) {
    if (static_cast<int>(st.mean.size()) != spec.n_mels)
        throw ShapeError("standardize_in_place: stats do not match n_mels");
    for (int t = 0; t < spec.n_frames; ++t) {
        double* row = spec.frames.data() + static_cast<size_t>(t) * spec.n_mels;
        for (int m = 0; m < spec.n_mels; ++m) row[m] = (row[m] - st.mean[m]) / st.stdev[m];
    }
}

double log_std_sum(const FeatureStats& st) {
    double s = 0.0;
    for (double v : st.stdev) s += std::log(v);
    return s;
}

} // namespace nfad
