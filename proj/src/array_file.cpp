#include "nfad/array_file.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace nfad {

namespace {

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    uint8_t u8() {
        need(1);
        return static_cast<unsigned char>(buf_[pos_++]);
    }

    std::string bytes(size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    const char* raw(size_t n) {
        need(n);
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }

    bool done() const { return pos_ == buf_.size(); }

private:
    void need(size_t n) {
        if (pos_ + n > buf_.size()) throw FormatError(path_ + ": truncated array file");
    }
    const std::string& buf_;
    std::string path_;
    size_t pos_ = 0;
};

} // namespace

void ArrayFile::put_f32(const std::string& name, const Shape& shape, const std::vector<double>& data) {
    if (shape_size(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("ArrayFile::put_f32: shape/data mismatch for '" + name + "'");
    Entry e;
    e.shape = shape;
    e.f64 = false;
    e.data = data;
    put(name, std::move(e));
}

void ArrayFile::put_f64(const std::string& name, const Shape& shape, const std::vector<double>& data) {
    if (shape_size(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("ArrayFile::put_f64: shape/data mismatch for '" + name + "'");
    Entry e;
    e.shape = shape;
    e.f64 = true;
    e.data = data;
    put(name, std::move(e));
}

// Writing an existing name replaces the entry in place so the container
// never holds two arrays under one name.
void ArrayFile::put(const std::string& name, Entry e) {
    for (auto& [n, existing] : arrays_) {
        if (n == name) {
            existing = std::move(e);
            return;
        }
    }
    arrays_.emplace_back(name, std::move(e));
}

bool ArrayFile::has(const std::string& name) const {
    for (const auto& [n, e] : arrays_)
        if (n == name) return true;
    return false;
}

const ArrayFile::Entry& ArrayFile::get(const std::string& name) const {
    for (const auto& [n, e] : arrays_)
        if (n == name) return e;
    throw FormatError("array '" + name + "' not present in " + magic_ + " file");
}

void ArrayFile::save(const std::string& path) const {
    std::string out;
    out.reserve(1024);
    if (magic_.size() != 4) throw FormatError("array file magic must be 4 bytes");
    out += magic_;
    put_u32(out, version_);
    std::string meta = metadata.is_null() ? "{}" : metadata.dump();
    put_u64(out, meta.size());
    out += meta;
    put_u32(out, static_cast<uint32_t>(arrays_.size()));
    for (const auto& [name, e] : arrays_) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        out.push_back(e.f64 ? 1 : 0);
        put_u32(out, static_cast<uint32_t>(e.shape.size()));
        for (int d : e.shape) put_u32(out, static_cast<uint32_t>(d));
        if (e.f64) {
            put_u64(out, e.data.size() * 8);
            size_t base = out.size();
            out.resize(base + e.data.size() * 8);
            std::memcpy(out.data() + base, e.data.data(), e.data.size() * 8);
        } else {
            put_u64(out, e.data.size() * 4);
            std::vector<float> f(e.data.begin(), e.data.end());
            size_t base = out.size();
            out.resize(base + f.size() * 4);
            std::memcpy(out.data() + base, f.data(), f.size() * 4);
        }
    }

    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw FormatError("cannot open '" + tmp + "' for writing");
        os.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!os) throw FormatError("short write to '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

ArrayFile ArrayFile::load(const std::string& path, const std::string& expected_magic) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    Reader r(buf, path);

    ArrayFile af;
    af.magic_ = r.bytes(4);
    if (af.magic_ != expected_magic)
        throw FormatError(path + ": expected " + expected_magic + " file, found '" + af.magic_ + "'");
    af.version_ = r.u32();
    uint64_t meta_len = r.u64();
    std::string meta = r.bytes(meta_len);
    try {
        af.metadata = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": bad metadata record: " + e.what());
    }
    uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        Entry e;
        e.f64 = r.u8() != 0;
        uint32_t rank = r.u32();
        e.shape.resize(rank);
        int64_t n = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            e.shape[d] = static_cast<int>(r.u32());
            n *= e.shape[d];
        }
        uint64_t payload = r.u64();
        size_t width = e.f64 ? 8 : 4;
        if (payload != static_cast<uint64_t>(n) * width)
            throw FormatError(path + ": array '" + name + "' payload does not match its shape");
        const char* p = r.raw(payload);
        e.data.resize(n);
        if (e.f64) {
            std::memcpy(e.data.data(), p, payload);
        } else {
            std::vector<float> f(n);
            std::memcpy(f.data(), p, payload);
            for (int64_t k = 0; k < n; ++k) e.data[k] = f[k];
        }
        af.arrays_.emplace_back(std::move(name), std::move(e));
    }
    if (!r.done()) throw FormatError(path + ": trailing bytes after last array");
    return af;
}

} // namespace nfad
