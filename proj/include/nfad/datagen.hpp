#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nfad/rng.hpp"

namespace nfad {

// A spectral template is what a machine "sounds like": a few harmonic
// stacks plus band-limited noise. Recordings for one machine ID are the
// sum of a template shared by the whole machine type and a template
// specific to that ID, so the generated corpus has the same
// shared/specific structure the outlier-exposure losses rely on.

struct ToneStack {
    double fundamental_hz = 0.0;
    int n_harmonics = 1;
    double amplitude = 0.0; // amplitude of the fundamental
    double decay = 0.7;     // harmonic k carries amplitude * decay^(k-1)
};

struct NoiseBand {
    double low_hz = 0.0;
    double high_hz = 0.0;
    double amplitude = 0.0; // approximate RMS of the whole band
};

struct SpectralTemplate {
    std::vector<ToneStack> tones;
    std::vector<NoiseBand> bands;
};

// Coarse per-bin amplitude envelope over [0, nyquist), used only to
// decide whether two templates are distinguishable. Jitter and random
// phases never enter here; this is a function of the parameters alone.
std::vector<double> spectral_envelope(const SpectralTemplate& t, int n_bins = 128,
                                      double nyquist_hz = 8000.0);
double template_distance(const SpectralTemplate& a, const SpectralTemplate& b);

enum class AnomalyKind {
    tone,      // inject an extra tone at anomaly_tone_hz
    swap,      // blend in another ID's specific template
    broadband, // add white noise on top
};

const char* anomaly_kind_name(AnomalyKind k);
AnomalyKind anomaly_kind_from_name(const std::string& name);

inline constexpr int kGenSampleRate = 16000;

// Two specific templates closer than this (envelope L2) make the IDs
// indistinguishable by construction, which breaks every downstream
// claim; generation refuses to start.
inline constexpr double kMinTemplateDistance = 0.05;

struct SyntheticSpec {
    std::string machine_type = "synthA";
    int n_ids = 3;
    int train_per_id = 60;
    int test_normal_per_id = 20;
    int test_anomaly_per_id = 20;
    double duration_s = 2.0; // 2 s at desk scale; switch to 10.0 for full-length files
    AnomalyKind anomaly = AnomalyKind::swap;
    // tone: injected amplitude; swap: blend weight in [0, 1] where 1 is a
    // full template swap; broadband: RMS of the added noise. Zero always
    // means "anomalies are generated exactly like normals".
    double anomaly_magnitude = 1.0;
    double anomaly_tone_hz = 5000.0; // kept clear of the default templates
    double noise_floor = 0.003;      // white noise under every recording
    double amplitude_jitter = 0.05;  // relative per-component amplitude spread
    uint64_t seed = 1;
    SpectralTemplate shared;
    std::vector<SpectralTemplate> specific; // one per ID

    // SpecError on any violated invariant (counts, frequencies, template
    // distinctness, swap with a single ID, ...).
    void validate() const;
};

// Deterministic ready-to-use spec. variant shifts every frequency so two
// variants share no spectral structure, standing in for two different
// machine types.
SyntheticSpec make_default_spec(uint64_t seed, int n_ids = 3,
                                const std::string& machine_type = "synthA", int variant = 0);

// One rendered recording (mono, kGenSampleRate). Exposed for tests; the
// generator calls it per file with a substream of the spec seed.
std::vector<double> render_recording(const SyntheticSpec& spec, int id, bool anomalous, Rng& rng);

// Writes <out_root>/<machine_type>/{train,test}/... in the scan_dataset
// layout plus a spec.txt manifest. Same spec (seed included) writes
// byte-identical files.
void generate(const SyntheticSpec& spec, const std::string& out_root);

// Two machine types side by side under one root, for outlier-exposure
// experiments across types. Rejects specs whose shared templates are not
// clearly separated or whose type names collide.
void generate_cross_type(const SyntheticSpec& a, const SyntheticSpec& b,
                         const std::string& out_root);

} // namespace nfad
