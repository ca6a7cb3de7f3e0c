#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nfad/errors.hpp"
#include "nfad/tensor.hpp"

namespace nfad {

// Self-describing binary container shared by feature caches ("NFFC")
// and checkpoints ("NFAD"): magic, version, one JSON metadata record,
// then named arrays with shape headers. Everything little-endian.
// Arrays are float32 unless written with put_f64; training state uses
// f64 entries so a resumed run continues bit-identically.
class ArrayFile {
public:
    struct Entry {
        Shape shape;
        bool f64 = false;
        std::vector<double> data;
    };

    ArrayFile() = default;
    ArrayFile(std::string magic, uint32_t version) : magic_(std::move(magic)), version_(version) {}

    const std::string& magic() const { return magic_; }
    uint32_t version() const { return version_; }

    nlohmann::json metadata;

    void put_f32(const std::string& name, const Shape& shape, const std::vector<double>& data);
    void put_f64(const std::string& name, const Shape& shape, const std::vector<double>& data);

    bool has(const std::string& name) const;
    const Entry& get(const std::string& name) const; // FormatError if missing
    const std::vector<std::pair<std::string, Entry>>& entries() const { return arrays_; }

    // Writes to a temp file in the same directory, then renames, so a
    // crash mid-write never leaves a truncated file at `path`.
    void save(const std::string& path) const;

    // FormatError on bad magic/corruption. Version checking is the
    // caller's job (cache vs checkpoint policies differ).
    static ArrayFile load(const std::string& path, const std::string& expected_magic);

private:
    void put(const std::string& name, Entry e);

    std::string magic_ = "NFFC";
    uint32_t version_ = 1;
    std::vector<std::pair<std::string, Entry>> arrays_;
};

inline constexpr uint32_t kFeatureCacheVersion = 1;
inline constexpr uint32_t kCheckpointVersion = 1;

} // namespace nfad
