#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace nfad {

// All randomness in the toolkit flows through this generator so that runs
// are reproducible from a single seed. PCG32 core with Box-Muller normals
// (cached spare). The version tag is persisted in checkpoints; bump it if
// the stream ever changes.
inline constexpr const char* kRngVersion = "pcg32-boxmuller-v1";

class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) { reseed(seed, stream); }

    void reseed(uint64_t seed, uint64_t stream = 0) {
        state_ = 0;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += seed;
        next_u32();
        has_spare_ = false;
        spare_ = 0.0;
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // uniform in [0, 1) with 53 random bits
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased integer in [0, n)
    uint64_t below(uint64_t n) {
        if (n <= 1) return 0;
        uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // Box-Muller; u1 > 0 guaranteed by adding the smallest step
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 1;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a over a purpose string, for deriving independent named streams
// from one run seed (e.g. "init", "epoch":3).
inline uint64_t stream_id(std::string_view purpose, uint64_t index = 0) {
    uint64_t h = 14695981039346656037ULL;
    for (char c : purpose) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    h ^= index + 0x9e3779b97f4a7c15ULL;
    h *= 1099511628211ULL;
    return h;
}

inline Rng substream(uint64_t seed, std::string_view purpose, uint64_t index = 0) {
    return Rng(seed, stream_id(purpose, index));
}

} // namespace nfad
