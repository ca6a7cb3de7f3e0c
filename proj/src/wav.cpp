#include "nfad/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace nfad {

namespace {

uint32_t rd_u32(const std::string& b, size_t at) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
    return v;
}

uint16_t rd_u16(const std::string& b, size_t at) {
    return static_cast<uint16_t>(static_cast<unsigned char>(b[at]) |
                                 (static_cast<unsigned char>(b[at + 1]) << 8));
}

void wr_u32(std::string& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void wr_u16(std::string& b, uint16_t v) {
    b.push_back(static_cast<char>(v & 0xff));
    b.push_back(static_cast<char>((v >> 8) & 0xff));
}

} // namespace

WavData read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0)
        throw FormatError(path + ": not a RIFF/WAVE file");

    uint16_t audio_format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    bool have_fmt = false;
    size_t data_at = 0, data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        std::string id = buf.substr(pos, 4);
        uint32_t len = rd_u32(buf, pos + 4);
        size_t body = pos + 8;
        if (body + len > buf.size()) throw FormatError(path + ": truncated chunk '" + id + "'");
        if (id == "fmt ") {
            if (len < 16) throw FormatError(path + ": fmt chunk too small");
            audio_format = rd_u16(buf, body);
            channels = rd_u16(buf, body + 2);
            rate = rd_u32(buf, body + 4);
            bits = rd_u16(buf, body + 14);
            have_fmt = true;
        } else if (id == "data") {
            data_at = body;
            data_len = len;
        }
        pos = body + len + (len & 1); // chunks are word-aligned
    }
    if (!have_fmt || data_at == 0) throw FormatError(path + ": missing fmt or data chunk");
    if (channels != 1) throw FormatError(path + ": only mono is supported");

    WavData out;
    out.sample_rate_hz = static_cast<int>(rate);
    if (audio_format == 1 && bits == 16) {
        size_t n = data_len / 2;
        out.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
            int16_t s;
            std::memcpy(&s, buf.data() + data_at + 2 * i, 2);
            out.samples[i] = static_cast<double>(s) / 32768.0;
        }
    } else if (audio_format == 3 && bits == 32) {
        size_t n = data_len / 4;
        out.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
            float s;
            std::memcpy(&s, buf.data() + data_at + 4 * i, 4);
            out.samples[i] = static_cast<double>(s);
        }
    } else {
        throw FormatError(path + ": unsupported encoding (PCM16 or float32 only)");
    }
    return out;
}

void write_wav_16bit(const std::string& path, const std::vector<double>& samples, int sample_rate_hz) {
    uint32_t data_len = static_cast<uint32_t>(samples.size() * 2);
    std::string b;
    b.reserve(44 + data_len);
    b += "RIFF";
    wr_u32(b, 36 + data_len);
    b += "WAVE";
    b += "fmt ";
    wr_u32(b, 16);
    wr_u16(b, 1); // PCM
    wr_u16(b, 1); // mono
    wr_u32(b, static_cast<uint32_t>(sample_rate_hz));
    wr_u32(b, static_cast<uint32_t>(sample_rate_hz) * 2); // byte rate
    wr_u16(b, 2);                                         // block align
    wr_u16(b, 16);                                        // bits
    b += "data";
    wr_u32(b, data_len);
    for (double v : samples) {
        double c = std::clamp(v, -1.0, 1.0);
        int16_t s = static_cast<int16_t>(std::lround(c * 32767.0));
        b.push_back(static_cast<char>(s & 0xff));
        b.push_back(static_cast<char>((s >> 8) & 0xff));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
    if (!os) throw FormatError("short write to '" + path + "'");
}

} // namespace nfad
