#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "nfad/features.hpp"
#include "nfad/rng.hpp"
#include "nfad/wav.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace nfad;

namespace {

constexpr double kPi = 3.14159265358979323846;

Recording make_recording(std::vector<double> samples) {
    Recording r;
    r.samples = std::move(samples);
    r.sample_rate_hz = 16000;
    return r;
}

} // namespace

TEST_CASE("fft matches the brute-force dft") {
    Rng rng(5);
    std::vector<double> x(64);
    for (auto& v : x) v = rng.normal();
    auto want = oracle::dft(x);
    std::vector<double> re = x, im(x.size(), 0.0);
    fft_inplace(re, im);
    for (size_t k = 0; k < x.size(); ++k) {
        CHECK(re[k] == doctest::Approx(want[k].real()).epsilon(1e-9).scale(1.0));
        CHECK(im[k] == doctest::Approx(want[k].imag()).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("ten seconds at 16 kHz gives exactly 313 frames") {
    auto p = stft_power(std::vector<double>(160000, 0.1), 1024, 512);
    CHECK(p.n_frames == 313);
    CHECK(p.n_bins == 513);
}

TEST_CASE("dc input concentrates energy in bin zero") {
    auto p = stft_power(std::vector<double>(8192, 1.0), 1024, 512);
    // skip first and last frames, whose reflect padding is atypical
    for (int t = 1; t < p.n_frames - 1; ++t) {
        double b0 = p.at(t, 0);
        REQUIRE(b0 > 0.0);
        for (int b = 2; b < p.n_bins; ++b) CHECK(p.at(t, b) / b0 < 1e-6);
        // the Hann window itself leaks only into bin 1
        CHECK(p.at(t, 1) / b0 < 0.3);
    }
}

TEST_CASE("windowed frame spectrum matches the dft oracle") {
    // one interior frame, checked bin by bin against the direct DFT of
    // the same Hann-windowed slice
    Rng rng(17);
    std::vector<double> x(4096);
    for (auto& v : x) v = rng.normal();
    int flen = 256, hop = 128;
    auto p = stft_power(x, flen, hop);

    int t = 5; // interior: starts at 5*128 - 128 = 512 in the raw signal
    std::vector<double> frame(flen);
    for (int i = 0; i < flen; ++i) {
        double w = 0.5 - 0.5 * std::cos(2.0 * kPi * i / flen);
        frame[i] = x[t * hop - flen / 2 + i] * w;
    }
    auto spec = oracle::dft(frame);
    for (int b = 0; b < flen / 2 + 1; ++b) {
        double want = std::norm(spec[b]);
        CHECK(p.at(t, b) == doctest::Approx(want).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("bin-centered sinusoids peak at their own bin") {
    for (int k : {3, 10, 100, 200}) {
        double f = k * 16000.0 / 1024.0;
        std::vector<double> x(16000);
        for (size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2.0 * kPi * f * i / 16000.0);
        auto p = stft_power(x, 1024, 512);
        for (int t = 1; t < p.n_frames - 1; ++t) {
            int argmax = 0;
            for (int b = 1; b < p.n_bins; ++b)
                if (p.at(t, b) > p.at(t, argmax)) argmax = b;
            CHECK(argmax == k);
        }
    }
}

TEST_CASE("spectrogram energy agrees with windowed time-domain energy") {
    Rng rng(23);
    std::vector<double> x(8000);
    for (auto& v : x) v = rng.normal();
    int flen = 512, hop = 256, pad = flen / 2;
    auto p = stft_power(x, flen, hop);

    // rebuild the padded signal the same way to sum windowed energy
    std::vector<double> padded(x.size() + 2 * pad);
    for (int j = 0; j < pad; ++j) padded[j] = x[pad - j];
    std::copy(x.begin(), x.end(), padded.begin() + pad);
    for (int j = 0; j < pad; ++j) padded[pad + x.size() + j] = x[x.size() - 2 - j];

    double time_energy = 0.0;
    for (int t = 0; t < p.n_frames; ++t)
        for (int i = 0; i < flen; ++i) {
            double w = 0.5 - 0.5 * std::cos(2.0 * kPi * i / flen);
            double v = padded[t * hop + i] * w;
            time_energy += v * v;
        }

    // one-sided power sum: double the interior bins, divide by N
    double spec_energy = 0.0;
    for (int t = 0; t < p.n_frames; ++t) {
        spec_energy += p.at(t, 0) + p.at(t, p.n_bins - 1);
        for (int b = 1; b < p.n_bins - 1; ++b) spec_energy += 2.0 * p.at(t, b);
    }
    spec_energy /= flen;

    CHECK(std::fabs(spec_energy - time_energy) / time_energy < 0.01);
}

TEST_CASE("too-short input is rejected") {
    CHECK_THROWS_AS(stft_power(std::vector<double>(100, 0.0), 1024, 512), TooShortError);
}

TEST_CASE("mel scale formula") {
    CHECK(hz_to_mel(0.0) == 0.0);
    CHECK(hz_to_mel(1000.0) == doctest::Approx(999.99).epsilon(1e-4));
    CHECK(mel_to_hz(hz_to_mel(440.0)) == doctest::Approx(440.0));
}

TEST_CASE("mel filterbank shape and filter properties") {
    int n_bins = 513, n_mels = 128;
    auto fb = mel_filterbank(n_bins, n_mels, 16000);
    REQUIRE(fb.size() == static_cast<size_t>(n_mels) * n_bins);

    std::vector<int> peak(n_mels, -1);
    for (int m = 0; m < n_mels; ++m) {
        double best = 0.0;
        bool any = false;
        for (int b = 0; b < n_bins; ++b) {
            double w = fb[static_cast<size_t>(m) * n_bins + b];
            CHECK(w >= 0.0);
            CHECK(w <= 1.0);
            if (w > 0.0) any = true;
            if (w > best) {
                best = w;
                peak[m] = b;
            }
        }
        CHECK(any);
    }
    // center frequencies strictly increasing
    for (int m = 1; m < n_mels; ++m) CHECK(peak[m] > peak[m - 1]);
}

TEST_CASE("overly fine filterbank is rejected") {
    CHECK_THROWS_AS(mel_filterbank(9, 64, 16000), DegenerateFilterError);
}

TEST_CASE("log mel floors silence at -10") {
    PowerSpectrogram p;
    p.n_frames = 3;
    p.n_bins = 513;
    p.data.assign(static_cast<size_t>(p.n_frames) * p.n_bins, 0.0);
    auto fb = mel_filterbank(p.n_bins, 16, 16000);
    auto s = log_mel(p, fb, 16);
    for (double v : s.frames) CHECK(v == doctest::Approx(-10.0));
}

TEST_CASE("doubling power raises every unclamped mel value by log10(2)") {
    Rng rng(31);
    PowerSpectrogram p;
    p.n_frames = 2;
    p.n_bins = 129;
    p.data.resize(static_cast<size_t>(p.n_frames) * p.n_bins);
    for (auto& v : p.data) v = rng.uniform(0.1, 2.0);
    PowerSpectrogram p2 = p;
    for (auto& v : p2.data) v *= 2.0;

    auto fb = mel_filterbank(p.n_bins, 8, 16000);
    auto a = log_mel(p, fb, 8);
    auto b = log_mel(p2, fb, 8);
    for (size_t i = 0; i < a.frames.size(); ++i)
        CHECK(b.frames[i] - a.frames[i] == doctest::Approx(std::log10(2.0)).epsilon(1e-10));
}

TEST_CASE("log mel equals the direct matrix-vector oracle") {
    Rng rng(37);
    PowerSpectrogram p;
    p.n_frames = 4;
    p.n_bins = 257;
    p.data.resize(static_cast<size_t>(p.n_frames) * p.n_bins);
    for (auto& v : p.data) v = rng.uniform(0.0, 1.0);
    int n_mels = 24;
    auto fb = mel_filterbank(p.n_bins, n_mels, 16000);
    auto s = log_mel(p, fb, n_mels);
    for (int t = 0; t < p.n_frames; ++t)
        for (int m = 0; m < n_mels; ++m) {
            double acc = 0.0;
            for (int b = 0; b < p.n_bins; ++b)
                acc += fb[static_cast<size_t>(m) * p.n_bins + b] * p.at(t, b);
            double want = std::log10(std::max(acc, 1e-10));
            CHECK(std::fabs(s.at(t, m) - want) < 1e-12);
        }
}

TEST_CASE("window counts match the closed form") {
    LogMelSpectrogram s;
    s.n_frames = 313;
    s.n_mels = 4;
    s.frames.resize(static_cast<size_t>(s.n_frames) * s.n_mels);
    for (size_t i = 0; i < s.frames.size(); ++i) s.frames[i] = static_cast<double>(i);

    CHECK(make_windows(s, 32, 4, "r").size() == 71);
    CHECK(make_windows(s, 4, 4, "r").size() == 78);
    CHECK(make_windows(s, 313, 1, "r").size() == 1);

    auto ws = make_windows(s, 4, 4, "r");
    for (size_t k = 0; k < ws.size(); ++k) {
        CHECK(ws[k].start_frame == static_cast<int>(k) * 4);
        REQUIRE(ws[k].values.size() == 16);
        // values are the original frames, in temporal order
        for (int i = 0; i < 16; ++i)
            CHECK(ws[k].values[i] == s.frames[static_cast<size_t>(ws[k].start_frame) * 4 + i]);
    }

    LogMelSpectrogram tiny = s;
    tiny.n_frames = 3;
    tiny.frames.resize(12);
    CHECK_THROWS_AS(make_windows(tiny, 4, 4, "r"), TooShortError);
}

TEST_CASE("full pipeline is deterministic for the same file") {
    TempDir td("dsp-det");
    Rng rng(41);
    std::vector<double> samples(32000);
    for (auto& v : samples) v = 0.3 * rng.normal();
    write_wav_16bit(td.file("a.wav"), samples, 16000);

    FeatureConfig cfg;
    cfg.n_mels = 16;
    auto run = [&]() {
        Recording rec = load_wav(td.file("a.wav"));
        auto spec = compute_log_mel(rec, cfg);
        return make_windows(spec, 4, 4, "a");
    };
    auto w1 = run();
    auto w2 = run();
    REQUIRE(w1.size() == w2.size());
    for (size_t k = 0; k < w1.size(); ++k)
        for (size_t i = 0; i < w1[k].values.size(); ++i) {
            CHECK(w1[k].values[i] == w2[k].values[i]);
            CHECK(std::isfinite(w1[k].values[i]));
        }
}

TEST_CASE("standardization zeroes means and normalizes spread") {
    Rng rng(43);
    LogMelSpectrogram s;
    s.n_frames = 200;
    s.n_mels = 3;
    s.frames.resize(600);
    for (int t = 0; t < s.n_frames; ++t) {
        s.frames[t * 3 + 0] = 5.0 + 2.0 * rng.normal();
        s.frames[t * 3 + 1] = -1.0 + 0.5 * rng.normal();
        s.frames[t * 3 + 2] = 0.25 * rng.normal();
    }
    auto st = compute_feature_stats({s});
    CHECK(st.mean[0] == doctest::Approx(5.0).epsilon(0.2));
    CHECK(st.stdev[0] == doctest::Approx(2.0).epsilon(0.2));

    LogMelSpectrogram z = s;
    standardize_in_place(z, st);
    auto zst = compute_feature_stats({z});
    for (int m = 0; m < 3; ++m) {
        CHECK(std::fabs(zst.mean[m]) < 1e-9);
        CHECK(zst.stdev[m] == doctest::Approx(1.0).epsilon(1e-9));
    }

    CHECK(log_std_sum(st) == doctest::Approx(std::log(st.stdev[0]) + std::log(st.stdev[1]) + std::log(st.stdev[2])));
    auto id = identity_stats(3);
    CHECK(log_std_sum(id) == 0.0);
}

TEST_CASE("load_wav enforces the sample-rate contract") {
    TempDir td("dsp-wav");
    write_wav_16bit(td.file("ok.wav"), std::vector<double>(1600, 0.0), 16000);
    Recording rec = load_wav(td.file("ok.wav"));
    CHECK(rec.sample_rate_hz == 16000);
    CHECK(rec.samples.size() == 1600);
    for (double v : rec.samples) CHECK(v == 0.0);

    write_wav_16bit(td.file("bad.wav"), std::vector<double>(100, 0.0), 22050);
    CHECK_THROWS_AS(load_wav(td.file("bad.wav")), SampleRateError);
}
