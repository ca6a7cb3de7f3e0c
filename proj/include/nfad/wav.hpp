#pragma once

#include <string>
#include <vector>

#include "nfad/errors.hpp"

namespace nfad {

struct WavData {
    int sample_rate_hz = 0;
    std::vector<double> samples; // mono, in [-1, 1]
};

// Reads a mono PCM WAV: 16-bit integer (divided by 32768) or 32-bit
// IEEE float. Anything else is a FormatError.
WavData read_wav(const std::string& path);

// Writes 16-bit PCM mono; samples are clipped to [-1, 1] first.
void write_wav_16bit(const std::string& path, const std::vector<double>& samples, int sample_rate_hz);

} // namespace nfad
