#pragma once

#include <string>
#include <vector>

#include "nfad/array_file.hpp"
#include "nfad/features.hpp"

namespace nfad {

// One WAV in the on-disk layout
//   <root>/<machine_type>/train/normal_id_<NN>_<seq>.wav
//   <root>/<machine_type>/test/{normal,anomaly}_id_<NN>_<seq>.wav
struct DatasetEntry {
    std::string path;
    std::string machine_type;
    std::string machine_id; // the <NN> digits
    Label label = Label::unlabeled;
    bool train = false;
};

// Parses "<label>_id_<NN>_<seq>.wav"; returns false if it does not match.
bool parse_wav_name(const std::string& filename, Label& label, std::string& machine_id);

// Entries sorted by path; FormatError when the directory is missing.
std::vector<DatasetEntry> scan_dataset(const std::string& root, const std::string& machine_type);

std::vector<std::string> list_machine_types(const std::string& root);

Recording load_entry(const DatasetEntry& e);

// Feature cache: one NFFC file per recording, holding the raw log-mel
// spectrogram. Standardization happens at train/score time because the
// statistics depend on which machine ID is the target.
struct CachedFeatures {
    LogMelSpectrogram spec;
    DatasetEntry entry;
    FeatureConfig cfg;
};

void save_feature_cache(const std::string& path, const LogMelSpectrogram& spec, const DatasetEntry& entry,
                        const FeatureConfig& cfg);
CachedFeatures load_feature_cache(const std::string& path);

// Mirrors the dataset layout under cache_root, swapping .wav for .nffc.
std::string cache_path_for(const std::string& cache_root, const DatasetEntry& e);

} // namespace nfad
