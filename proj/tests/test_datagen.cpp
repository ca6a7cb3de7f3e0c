#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "nfad/dataset.hpp"
#include "nfad/datagen.hpp"
#include "nfad/errors.hpp"
#include "nfad/features.hpp"
#include "nfad/metrics.hpp"
#include "nfad/wav.hpp"

using namespace nfad;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// every regular file under root, keyed by its path relative to root
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

std::vector<double> mean_frame(const LogMelSpectrogram& s) {
    std::vector<double> m(static_cast<size_t>(s.n_mels), 0.0);
    for (int t = 0; t < s.n_frames; ++t)
        for (int b = 0; b < s.n_mels; ++b) m[static_cast<size_t>(b)] += s.at(t, b);
    for (double& v : m) v /= s.n_frames;
    return m;
}

double l2(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc);
}

// Cheap model-free anomaly score: distance of a recording's mean log-mel
// frame to the average over the ID's training recordings. Good enough to
// tell whether the generator actually planted a detectable difference.
double profile_auc(const std::string& root, const SyntheticSpec& spec, const std::string& id) {
    FeatureConfig fc;
    auto entries = scan_dataset(root, spec.machine_type);
    std::vector<double> profile;
    int n_train = 0;
    std::vector<AnomalyScore> scores;
    for (const auto& e : entries) {
        if (e.machine_id != id) continue;
        auto mf = mean_frame(compute_log_mel(load_entry(e), fc));
        if (e.train) {
            if (profile.empty()) profile.assign(mf.size(), 0.0);
            for (size_t i = 0; i < mf.size(); ++i) profile[i] += mf[i];
            ++n_train;
        }
    }
    REQUIRE(n_train > 0);
    for (double& v : profile) v /= n_train;
    for (const auto& e : entries) {
        if (e.machine_id != id || e.train) continue;
        auto mf = mean_frame(compute_log_mel(load_entry(e), fc));
        scores.push_back({e.path, l2(mf, profile), e.label});
    }
    return auc(scores);
}

} // namespace

TEST_CASE("spectral envelope places tones and bands in the right bins") {
    SpectralTemplate t;
    t.tones.push_back({1000.0, 2, 0.5, 0.5});
    t.bands.push_back({1000.0, 1250.0, 0.1});
    auto env = spectral_envelope(t); // 128 bins over 8 kHz, 62.5 Hz each
    REQUIRE(env.size() == 128);
    // fundamental at bin 16, second harmonic at bin 32, band over 16..20
    CHECK(env[16] == doctest::Approx(0.5 + 0.02).epsilon(1e-12));
    CHECK(env[32] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(env[17] == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(env[20] == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(env[21] == 0.0);
    CHECK(env[15] == 0.0);

    CHECK(template_distance(t, t) == 0.0);
    SpectralTemplate u = t;
    u.tones[0].fundamental_hz = 1500.0;
    CHECK(template_distance(t, u) > kMinTemplateDistance);
}

TEST_CASE("default spec passes validation with distinct templates") {
    for (int n = 2; n <= 4; ++n) {
        auto spec = make_default_spec(7, n);
        CHECK_NOTHROW(spec.validate());
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                CHECK(template_distance(spec.specific[static_cast<size_t>(i)],
                                        spec.specific[static_cast<size_t>(j)]) >=
                      kMinTemplateDistance);
    }
    CHECK_THROWS_AS(make_default_spec(7, 0), SpecError);
    CHECK_THROWS_AS(make_default_spec(7, 9), SpecError);
}

TEST_CASE("validation rejects degenerate specs") {
    auto spec = make_default_spec(3, 2);

    SUBCASE("identical specific templates") {
        spec.specific[1] = spec.specific[0];
        CHECK_THROWS_AS(spec.validate(), SpecError);
    }
    SUBCASE("swap needs two ids") {
        spec.anomaly = AnomalyKind::swap;
        spec.n_ids = 1;
        spec.specific.resize(1);
        CHECK_THROWS_AS(spec.validate(), SpecError);
    }
    SUBCASE("swap blend cannot exceed one") {
        spec.anomaly_magnitude = 1.5;
        CHECK_THROWS_AS(spec.validate(), SpecError);
    }
    SUBCASE("template count must match n_ids") {
        spec.specific.pop_back();
        CHECK_THROWS_AS(spec.validate(), SpecError);
    }
    SUBCASE("band above nyquist") {
        spec.shared.bands.push_back({7000.0, 8200.0, 0.01});
        CHECK_THROWS_AS(spec.validate(), SpecError);
    }
    SUBCASE("zero harmonic decay") {
        spec.shared.tones[0].decay = 0.0;
        CHECK_THROWS_AS(spec.validate(), SpecError);
    }
    SUBCASE("too short to frame") {
        spec.duration_s = 0.05;
        CHECK_THROWS_AS(spec.validate(), SpecError);
    }
    SUBCASE("jitter below one") {
        spec.amplitude_jitter = 1.0;
        CHECK_THROWS_AS(spec.validate(), SpecError);
    }
    SUBCASE("tone anomaly frequency in range") {
        spec.anomaly = AnomalyKind::tone;
        spec.anomaly_tone_hz = 9000.0;
        CHECK_THROWS_AS(spec.validate(), SpecError);
    }
    SUBCASE("empty template") {
        spec.shared.tones.clear();
        spec.shared.bands.clear();
        CHECK_THROWS_AS(spec.validate(), SpecError);
    }
}

TEST_CASE("anomaly kind names round-trip") {
    for (auto k : {AnomalyKind::tone, AnomalyKind::swap, AnomalyKind::broadband})
        CHECK(anomaly_kind_from_name(anomaly_kind_name(k)) == k);
    CHECK_THROWS_AS(anomaly_kind_from_name("impulse"), ConfigError);
}

TEST_CASE("generation is deterministic in the seed") {
    auto spec = make_default_spec(11, 2);
    spec.train_per_id = 2;
    spec.test_normal_per_id = 1;
    spec.test_anomaly_per_id = 1;

    TempDir a("nfad_gen_det_a"), b("nfad_gen_det_b"), c("nfad_gen_det_c");
    generate(spec, a.str());
    generate(spec, b.str());
    CHECK(tree_bytes(a.path) == tree_bytes(b.path));

    auto other = spec;
    other.seed = 12;
    generate(other, c.str());
    auto ta = tree_bytes(a.path), tc = tree_bytes(c.path);
    REQUIRE(ta.size() == tc.size());
    std::string first = "synthA/train/normal_id_00_00000000.wav";
    REQUIRE(ta.count(first) == 1);
    CHECK(ta[first] != tc[first]);
}

TEST_CASE("layout matches the dataset scanner") {
    auto spec = make_default_spec(5, 2, "gear");
    spec.train_per_id = 3;
    spec.test_normal_per_id = 2;
    spec.test_anomaly_per_id = 2;

    TempDir dir("nfad_gen_layout");
    generate(spec, dir.str());

    auto types = list_machine_types(dir.str());
    REQUIRE(types.size() == 1);
    CHECK(types[0] == "gear");

    auto entries = scan_dataset(dir.str(), "gear");
    CHECK(entries.size() == 2u * (3 + 2 + 2));
    int train = 0, test_normal = 0, test_anomaly = 0;
    for (const auto& e : entries) {
        CHECK(e.machine_type == "gear");
        CHECK((e.machine_id == "00" || e.machine_id == "01"));
        if (e.train) {
            ++train;
            CHECK(e.label == Label::normal);
        } else if (e.label == Label::normal) {
            ++test_normal;
        } else {
            CHECK(e.label == Label::anomaly);
            ++test_anomaly;
        }
    }
    CHECK(train == 6);
    CHECK(test_normal == 4);
    CHECK(test_anomaly == 4);

    // manifest records the generating parameters next to the audio
    std::string manifest = slurp(dir.path / "gear" / "spec.txt");
    CHECK(manifest.find("seed=5") != std::string::npos);
    CHECK(manifest.find("machine_type=gear") != std::string::npos);
    CHECK(manifest.find("anomaly=swap") != std::string::npos);
    CHECK(manifest.find("specific_01=") != std::string::npos);

    // generated audio honours the sample-rate and duration contract
    auto rec = load_entry(entries.front());
    CHECK(rec.sample_rate_hz == 16000);
    CHECK(rec.samples.size() == 32000);
    for (double s : rec.samples) {
        CHECK(s <= 1.0);
        CHECK(s >= -1.0);
    }
}

TEST_CASE("full-length files frame like the reference pipeline expects") {
    auto spec = make_default_spec(2, 2);
    spec.duration_s = 10.0;
    Rng rng = substream(spec.seed, "wav", 0);
    Recording rec;
    rec.samples = render_recording(spec, 0, false, rng);
    rec.sample_rate_hz = kGenSampleRate;
    REQUIRE(rec.samples.size() == 160000);

    FeatureConfig fc;
    auto mel = compute_log_mel(rec, fc);
    CHECK(mel.n_frames == 313);
    CHECK(mel.n_mels == 128);

    spec.duration_s = 2.0;
    Rng rng2 = substream(spec.seed, "wav", 1);
    rec.samples = render_recording(spec, 0, false, rng2);
    CHECK(compute_log_mel(rec, fc).n_frames == 63);

    CHECK_THROWS_AS(render_recording(spec, 5, false, rng2), SpecError);
}

TEST_CASE("swap anomalies are detectable, zero-magnitude ones are not") {
    auto spec = make_default_spec(21, 2);
    spec.train_per_id = 6;
    spec.test_normal_per_id = 8;
    spec.test_anomaly_per_id = 8;

    TempDir strong("nfad_gen_swap");
    generate(spec, strong.str());
    // a full template swap moves the spectrum far from the ID profile
    CHECK(profile_auc(strong.str(), spec, "00") >= 0.9);

    auto null_spec = spec;
    null_spec.anomaly_magnitude = 0.0;
    null_spec.test_normal_per_id = 16;
    null_spec.test_anomaly_per_id = 16;
    TempDir null_dir("nfad_gen_null");
    generate(null_spec, null_dir.str());
    // with the perturbation off, "anomalies" are ordinary recordings
    double a = profile_auc(null_dir.str(), null_spec, "00");
    CHECK(a > 0.15);
    CHECK(a < 0.85);
}

TEST_CASE("tone anomalies add energy at the configured frequency") {
    auto spec = make_default_spec(31, 2);
    spec.anomaly = AnomalyKind::tone;
    spec.anomaly_magnitude = 0.3;
    spec.train_per_id = 1;
    spec.test_normal_per_id = 5;
    spec.test_anomaly_per_id = 5;

    TempDir dir("nfad_gen_tone");
    generate(spec, dir.str());

    FeatureConfig fc;
    std::vector<double> norm_mean, anom_mean;
    int nn = 0, na = 0;
    for (const auto& e : scan_dataset(dir.str(), spec.machine_type)) {
        if (e.train || e.machine_id != "00") continue;
        auto mf = mean_frame(compute_log_mel(load_entry(e), fc));
        auto& acc = (e.label == Label::anomaly) ? anom_mean : norm_mean;
        auto& n = (e.label == Label::anomaly) ? na : nn;
        if (acc.empty()) acc.assign(mf.size(), 0.0);
        for (size_t i = 0; i < mf.size(); ++i) acc[i] += mf[i];
        ++n;
    }
    REQUIRE(nn == 5);
    REQUIRE(na == 5);
    int best = 0;
    double best_diff = -1.0;
    for (int b = 0; b < 128; ++b) {
        double d = anom_mean[static_cast<size_t>(b)] / na - norm_mean[static_cast<size_t>(b)] / nn;
        if (d > best_diff) {
            best_diff = d;
            best = b;
        }
    }
    // the most-lifted mel band should sit at the injected tone
    double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(8000.0);
    double center_hz = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (best + 1) / (128 + 1));
    CHECK(best_diff > 1.0);
    CHECK(std::fabs(center_hz - spec.anomaly_tone_hz) < 600.0);
}

TEST_CASE("broadband anomalies raise overall energy") {
    auto spec = make_default_spec(41, 2);
    spec.anomaly = AnomalyKind::broadband;
    spec.anomaly_magnitude = 0.15;
    spec.train_per_id = 1;
    spec.test_normal_per_id = 4;
    spec.test_anomaly_per_id = 4;

    TempDir dir("nfad_gen_broad");
    generate(spec, dir.str());

    FeatureConfig fc;
    double norm_energy = 0.0, anom_energy = 0.0;
    for (const auto& e : scan_dataset(dir.str(), spec.machine_type)) {
        if (e.train || e.machine_id != "00") continue;
        auto mf = mean_frame(compute_log_mel(load_entry(e), fc));
        double total = 0.0;
        for (double v : mf) total += v;
        (e.label == Label::anomaly ? anom_energy : norm_energy) += total;
    }
    CHECK(anom_energy / 4 > norm_energy / 4 + 1.0);
}

TEST_CASE("cross-type generation keeps types apart") {
    auto a = make_default_spec(51, 2, "typeA", 0);
    auto b = make_default_spec(52, 2, "typeB", 1);
    for (auto* s : {&a, &b}) {
        s->train_per_id = 2;
        s->test_normal_per_id = 1;
        s->test_anomaly_per_id = 1;
    }

    TempDir dir("nfad_gen_cross");
    generate_cross_type(a, b, dir.str());
    auto types = list_machine_types(dir.str());
    REQUIRE(types.size() == 2);
    CHECK(types[0] == "typeA");
    CHECK(types[1] == "typeB");
    CHECK(scan_dataset(dir.str(), "typeA").size() == 8);
    CHECK(scan_dataset(dir.str(), "typeB").size() == 8);

    // same variant means the same shared template, which defeats the
    // purpose of a cross-type corpus
    auto b_same = make_default_spec(53, 2, "typeB", 0);
    b_same.train_per_id = 2;
    CHECK_THROWS_AS(generate_cross_type(a, b_same, dir.str()), SpecError);

    auto a_clone = a;
    CHECK_THROWS_AS(generate_cross_type(a, a_clone, dir.str()), SpecError);
}
