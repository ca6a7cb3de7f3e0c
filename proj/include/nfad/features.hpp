#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "nfad/errors.hpp"
#include "nfad/wav.hpp"

namespace nfad {

enum class Label { normal, anomaly, unlabeled };

std::string label_name(Label l);
Label label_from_name(const std::string& s);

struct Recording {
    std::vector<double> samples; // mono, [-1, 1]
    int sample_rate_hz = 0;
    std::string source_path;
    std::string machine_type;
    std::string machine_id;
    Label label = Label::unlabeled;
};

// Reads a WAV and enforces the 16 kHz contract. machine_type/id/label
// are left for the dataset scanner to fill in.
Recording load_wav(const std::string& path);

struct PowerSpectrogram {
    int n_frames = 0;
    int n_bins = 0; // frame_length/2 + 1
    std::vector<double> data; // [n_frames x n_bins]

    double at(int t, int b) const { return data[static_cast<size_t>(t) * n_bins + b]; }
};

// Hann-windowed, reflect-center-padded power STFT.
// n_frames = 1 + floor(n_samples / hop_length).
PowerSpectrogram stft_power(const std::vector<double>& samples, int frame_length, int hop_length);
PowerSpectrogram stft_power(const Recording& rec, int frame_length, int hop_length);

// In-place iterative radix-2 FFT; exposed so tests can compare it
// against a brute-force DFT.
void fft_inplace(std::vector<double>& re, std::vector<double>& im);

double hz_to_mel(double f);
double mel_to_hz(double m);

// Triangular unit-peak filters spaced evenly on the mel scale over
// 0..8000 Hz. Returns [n_mels x n_fft_bins] row-major.
std::vector<double> mel_filterbank(int n_fft_bins, int n_mels, int sample_rate_hz);

struct LogMelSpectrogram {
    int n_frames = 0;
    int n_mels = 0;
    int frame_length = 0;
    int hop_length = 0;
    std::vector<double> frames; // [n_frames x n_mels]

    double at(int t, int m) const { return frames[static_cast<size_t>(t) * n_mels + m]; }
};

LogMelSpectrogram log_mel(const PowerSpectrogram& power, const std::vector<double>& fb, int n_mels,
                          double floor_value = 1e-10);

struct FeatureWindow {
    std::vector<double> values; // window_frames x n_mels, frame-major
    int window_frames = 0;
    std::string recording; // origin
    int start_frame = 0;
};

std::vector<FeatureWindow> make_windows(const LogMelSpectrogram& spec, int window_frames, int window_hop,
                                        const std::string& recording_id);

struct FeatureConfig {
    int frame_length = 1024;
    int hop_length = 512;
    int n_mels = 128;
    int window_frames = 4; // 4 for the MAF presets, 32 for Glow
    int window_hop = 4;
    double log_floor = 1e-10;
};

void to_json(nlohmann::json& j, const FeatureConfig& c);
void from_json(const nlohmann::json& j, FeatureConfig& c);

LogMelSpectrogram compute_log_mel(const Recording& rec, const FeatureConfig& cfg);

// Per-mel-bin standardization statistics, computed over a training set
// and stored in the checkpoint so scoring reproduces training exactly.
struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> stdev; // floored at 1e-6

    bool empty() const { return mean.empty(); }
};

FeatureStats compute_feature_stats(const std::vector<LogMelSpectrogram>& specs);
FeatureStats identity_stats(int n_mels);
void standardize_in_place(LogMelSpectrogram& spec, const FeatureStats& st);

// Sum over bins of log(stdev). Standardizing divides each feature by
// its stdev, which shifts every log-density by this amount per frame;
// adding window_frames * log_std_sum puts NLLs back in original input
// units so thresholds stay comparable across models.
double log_std_sum(const FeatureStats& st);

} // namespace nfad
