#include "nfad/dataset.hpp"

#include <algorithm>
#include <filesystem>

namespace fs = std::filesystem;

namespace nfad {

bool parse_wav_name(const std::string& filename, Label& label, std::string& machine_id) {
    // <label>_id_<NN>_<seq>.wav with digit-only NN and seq
    std::string stem = filename;
    if (stem.size() < 5 || stem.substr(stem.size() - 4) != ".wav") return false;
    stem = stem.substr(0, stem.size() - 4);

    size_t id_at = stem.find("_id_");
    if (id_at == std::string::npos) return false;
    std::string label_part = stem.substr(0, id_at);
    if (label_part == "normal")
        label = Label::normal;
    else if (label_part == "anomaly")
        label = Label::anomaly;
    else
        return false;

    std::string rest = stem.substr(id_at + 4);
    size_t us = rest.find('_');
    if (us == std::string::npos || us == 0 || us + 1 >= rest.size()) return false;
    std::string id = rest.substr(0, us);
    std::string seq = rest.substr(us + 1);
    auto all_digits = [](const std::string& s) {
        return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
    };
    if (!all_digits(id) || !all_digits(seq)) return false;
    machine_id = id;
    return true;
}

std::vector<DatasetEntry> scan_dataset(const std::string& root, const std::string& machine_type) {
    fs::path base = fs::path(root) / machine_type;
    if (!fs::is_directory(base))
        throw FormatError("dataset directory '" + base.string() + "' does not exist");

    std::vector<DatasetEntry> out;
    for (const char* split : {"train", "test"}) {
        fs::path dir = base / split;
        if (!fs::is_directory(dir)) continue;
        for (const auto& de : fs::directory_iterator(dir)) {
            if (!de.is_regular_file()) continue;
            std::string name = de.path().filename().string();
            Label label;
            std::string id;
            if (!parse_wav_name(name, label, id)) continue;
            DatasetEntry e;
            e.path = de.path().string();
            e.machine_type = machine_type;
            e.machine_id = id;
            e.label = label;
            e.train = std::string(split) == "train";
            out.push_back(std::move(e));
        }
    }
    std::sort(out.begin(), out.end(), [](const DatasetEntry& a, const DatasetEntry& b) { return a.path < b.path; });
    return out;
}

std::vector<std::string> list_machine_types(const std::string& root) {
    if (!fs::is_directory(root)) throw FormatError("dataset root '" + root + "' does not exist");
    std::vector<std::string> out;
    for (const auto& de : fs::directory_iterator(root)) {
        if (de.is_directory()) out.push_back(de.path().filename().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

Recording load_entry(const DatasetEntry& e) {
    Recording rec = load_wav(e.path);
    rec.machine_type = e.machine_type;
    rec.machine_id = e.machine_id;
    rec.label = e.label;
    return rec;
}

void save_feature_cache(const std::string& path, const LogMelSpectrogram& spec, const DatasetEntry& entry,
                        const FeatureConfig& cfg) {
    ArrayFile af("NFFC", kFeatureCacheVersion);
    af.metadata = {
        {"source_path", entry.path},
        {"machine_type", entry.machine_type},
        {"machine_id", entry.machine_id},
        {"label", label_name(entry.label)},
        {"train", entry.train},
        {"frame_length", cfg.frame_length},
        {"hop_length", cfg.hop_length},
        {"n_mels", cfg.n_mels},
        {"log_floor", cfg.log_floor},
    };
    af.put_f32("log_mel", {spec.n_frames, spec.n_mels}, spec.frames);
    af.save(path);
}

CachedFeatures load_feature_cache(const std::string& path) {
    ArrayFile af = ArrayFile::load(path, "NFFC");
    if (af.version() != kFeatureCacheVersion)
        throw FormatError(path + ": feature cache version " + std::to_string(af.version()) +
                          ", expected " + std::to_string(kFeatureCacheVersion));
    CachedFeatures out;
    const auto& meta = af.metadata;
    out.entry.path = meta.at("source_path").get<std::string>();
    out.entry.machine_type = meta.at("machine_type").get<std::string>();
    out.entry.machine_id = meta.at("machine_id").get<std::string>();
    out.entry.label = label_from_name(meta.at("label").get<std::string>());
    out.entry.train = meta.at("train").get<bool>();
    out.cfg.frame_length = meta.at("frame_length").get<int>();
    out.cfg.hop_length = meta.at("hop_length").get<int>();
    out.cfg.n_mels = meta.at("n_mels").get<int>();
    out.cfg.log_floor = meta.at("log_floor").get<double>();
    const auto& e = af.get("log_mel");
    if (e.shape.size() != 2) throw FormatError(path + ": log_mel array must be rank 2");
    out.spec.n_frames = e.shape[0];
    out.spec.n_mels = e.shape[1];
    out.spec.frame_length = out.cfg.frame_length;
    out.spec.hop_length = out.cfg.hop_length;
    out.spec.frames = e.data;
    return out;
}

std::string cache_path_for(const std::string& cache_root, const DatasetEntry& e) {
    fs::path p(e.path);
    std::string name = p.stem().string() + ".nffc";
    fs::path dir = fs::path(cache_root) / e.machine_type / (e.train ? "train" : "test");
    return (dir / name).string();
}

} // namespace nfad
