#include "nfad/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace nfad {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '/' || c == '.' ||
              c == '-'))
            return false;
    }
    return true;
}

std::string where(const std::string& origin, int line) {
    if (line > 0) return origin + ":" + std::to_string(line) + ": ";
    return origin + ": ";
}

double to_double(const std::string& key, const ConfigEntry& e, const std::string& origin) {
    try {
        size_t pos = 0;
        double v = std::stod(e.value, &pos);
        if (pos != e.value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where(origin, e.line) + "key '" + key + "' expects a number, got '" +
                          e.value + "'");
    }
}

long long to_int(const std::string& key, const ConfigEntry& e, const std::string& origin) {
    try {
        size_t pos = 0;
        long long v = std::stoll(e.value, &pos);
        if (pos != e.value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where(origin, e.line) + "key '" + key + "' expects an integer, got '" +
                          e.value + "'");
    }
}

uint64_t to_u64(const std::string& key, const ConfigEntry& e, const std::string& origin) {
    try {
        // stoull would wrap a negative sign around instead of failing
        if (!e.value.empty() && e.value[0] == '-') throw std::invalid_argument("negative");
        size_t pos = 0;
        unsigned long long v = std::stoull(e.value, &pos);
        if (pos != e.value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where(origin, e.line) + "key '" + key +
                          "' expects a non-negative integer, got '" + e.value + "'");
    }
}

bool to_bool(const std::string& key, const ConfigEntry& e, const std::string& origin) {
    if (e.value == "1" || e.value == "true" || e.value == "on") return true;
    if (e.value == "0" || e.value == "false" || e.value == "off") return false;
    throw ConfigError(where(origin, e.line) + "key '" + key + "' expects a boolean (0/1), got '" +
                      e.value + "'");
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

} // namespace

ParsedConfig parse_config_text(const std::string& text, const std::string& origin) {
    ParsedConfig out;
    out.origin = origin;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where(origin, line_no) + "expected key=value, got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!valid_key(key))
            throw ConfigError(where(origin, line_no) + "invalid key '" + key + "'");
        auto prev = out.entries.find(key);
        if (prev != out.entries.end())
            throw ConfigError(where(origin, line_no) + "duplicate key '" + key +
                              "' (first set on line " + std::to_string(prev->second.line) + ")");
        out.entries[key] = ConfigEntry{value, line_no};
    }
    return out;
}

ParsedConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

const std::vector<ConfigKeyDoc>& config_key_docs() {
    static const std::vector<ConfigKeyDoc> docs = {
        {"data_root", "", "root directory of the WAV dataset layout"},
        {"machine_type", "", "machine type to operate on (subdirectory of data_root)"},
        {"machine_id", "", "target machine ID; required for train, optional filter for evaluate"},
        {"out", "out", "output directory for caches, checkpoints and reports"},
        {"cache_root", "", "feature cache directory (default <out>/cache)"},
        {"calibration_file", "", "calibration store (default <out>/calibration.txt)"},
        {"checkpoint", "", "checkpoint path (default <out>/<type>_id_<id>_<preset>.nfad)"},

        {"frame_length", "1024", "STFT frame length in samples"},
        {"hop_length", "512", "STFT hop in samples"},
        {"n_mels", "128", "mel bins per frame"},
        {"window_frames", "4", "frames per model input (4 for MAF presets, 32 for Glow)"},
        {"window_hop", "4", "frames between window starts (4 = no overlap at the MAF size)"},
        {"log_floor", "1e-10", "power floor before the log"},

        {"preset", "maf_additive", "maf_additive | maf_affine | glow_additive | glow_affine"},
        {"made_blocks", "4", "MADE blocks in the MAF presets"},
        {"made_hidden", "512", "hidden units per MADE block"},
        {"glow_blocks", "3", "Glow scales"},
        {"glow_steps", "12", "flow steps per Glow scale"},
        {"glow_hidden", "128", "Glow conditioner hidden channels (conv) or units (dense)"},
        {"glow_dense_conditioner", "0", "1 uses dense conditioners (for small inputs)"},
        {"scale_mode", "clamp", "affine scale handling: clamp | raw_exp (unstable, for tests)"},
        {"nll_normalization", "", "total | per_dim (default: per_dim for glow, total for maf)"},

        {"loss", "nll_only", "nll_only | oe_threshold | oe_modified"},
        {"loss_c", "", "NLL threshold c (default: looked up in the calibration file)"},
        {"loss_k", "0.5", "outlier-term weight k in (0,1), oe_modified only"},

        {"epochs", "100", "training epochs"},
        {"batch_size", "64", "target samples per batch"},
        {"learning_rate", "0", "0 picks the preset default (1e-4 Adam MAF, 5e-4 AdaMax Glow)"},
        {"outlier_fraction", "0.5", "outlier sub-batch = round(batch_size * this)"},
        {"grad_clip", "100", "global gradient-norm ceiling"},
        {"checkpoint_every", "10", "epochs between periodic checkpoint writes"},
        {"warmup_epochs", "5", "NLL-only epochs used by the calibrate command"},
        {"seed", "1", "run seed; drives init, shuffles and synthesis"},

        {"aggregation", "mean", "window-score aggregation per recording: mean | max"},
        {"pauc_p", "0.1", "false-positive-rate cap for the partial AUC"},

        {"synth_ids", "3", "synthetic machine IDs per type"},
        {"synth_train_per_id", "60", "synthetic training recordings per ID"},
        {"synth_test_normal_per_id", "20", "synthetic normal test recordings per ID"},
        {"synth_test_anomaly_per_id", "20", "synthetic anomalous test recordings per ID"},
        {"synth_duration_s", "2", "synthetic recording length in seconds"},
        {"synth_anomaly", "swap", "anomaly kind: tone | swap | broadband"},
        {"synth_anomaly_magnitude", "1", "anomaly strength; 0 renders anomalies like normals"},
        {"synth_anomaly_tone_hz", "5000", "frequency of the injected tone anomaly"},
        {"synth_variant", "0", "frequency-shift variant; distinct variants share no structure"},
        {"synth_cross_type", "", "second machine type name; set to emit a two-type corpus"},
    };
    return docs;
}

std::string config_key_help() {
    std::ostringstream out;
    out << "Config keys (config file or --set key=value; flags win over the file):\n";
    for (const auto& d : config_key_docs()) {
        std::string def = d.fallback.empty() ? "(unset)" : d.fallback;
        out << "  " << d.key;
        for (size_t i = d.key.size(); i < 26; ++i) out << ' ';
        out << def;
        for (size_t i = def.size(); i < 14; ++i) out << ' ';
        out << d.help << "\n";
    }
    return out.str();
}

std::string RunConfig::resolved_cache_root() const {
    if (!cache_root.empty()) return cache_root;
    return out + "/cache";
}

std::string RunConfig::resolved_calibration_file() const {
    if (!calibration_file.empty()) return calibration_file;
    return out + "/calibration.txt";
}

std::string RunConfig::resolved_checkpoint(const std::string& id) const {
    if (!checkpoint.empty()) return checkpoint;
    return out + "/" + machine_type + "_id_" + id + "_" + model.preset + ".nfad";
}

FlowConfig RunConfig::model_config() const {
    FlowConfig mc = model;
    mc.window_frames = features.window_frames;
    mc.n_mels = features.n_mels;
    mc.seed = seed;
    return mc;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig tc;
    tc.model = model_config();
    tc.epochs = epochs;
    tc.batch_size = batch_size;
    tc.learning_rate = learning_rate;
    tc.loss = loss;
    tc.loss.nll_normalization = nll_norm_name(tc.model.resolved_normalization());
    tc.outlier_fraction = outlier_fraction;
    tc.grad_clip = grad_clip;
    tc.checkpoint_every = checkpoint_every;
    tc.seed = seed;
    return tc;
}

void RunConfig::apply(const ParsedConfig& parsed) {
    const std::string& og = parsed.origin;
    for (const auto& [key, e] : parsed.entries) {
        if (key == "data_root") data_root = e.value;
        else if (key == "machine_type") machine_type = e.value;
        else if (key == "machine_id") machine_id = e.value;
        else if (key == "out") out = e.value;
        else if (key == "cache_root") cache_root = e.value;
        else if (key == "calibration_file") calibration_file = e.value;
        else if (key == "checkpoint") checkpoint = e.value;

        else if (key == "frame_length") features.frame_length = static_cast<int>(to_int(key, e, og));
        else if (key == "hop_length") features.hop_length = static_cast<int>(to_int(key, e, og));
        else if (key == "n_mels") features.n_mels = static_cast<int>(to_int(key, e, og));
        else if (key == "window_frames") features.window_frames = static_cast<int>(to_int(key, e, og));
        else if (key == "window_hop") features.window_hop = static_cast<int>(to_int(key, e, og));
        else if (key == "log_floor") features.log_floor = to_double(key, e, og);

        else if (key == "preset") model.preset = e.value;
        else if (key == "made_blocks") model.made_blocks = static_cast<int>(to_int(key, e, og));
        else if (key == "made_hidden") model.made_hidden = static_cast<int>(to_int(key, e, og));
        else if (key == "glow_blocks") model.glow_blocks = static_cast<int>(to_int(key, e, og));
        else if (key == "glow_steps") model.glow_steps = static_cast<int>(to_int(key, e, og));
        else if (key == "glow_hidden") model.glow_hidden = static_cast<int>(to_int(key, e, og));
        else if (key == "glow_dense_conditioner") model.glow_dense_conditioner = to_bool(key, e, og);
        else if (key == "scale_mode") {
            if (e.value == "clamp") model.scale_mode = ScaleMode::clamp;
            else if (e.value == "raw_exp") model.scale_mode = ScaleMode::raw_exp;
            else
                throw ConfigError(where(og, e.line) + "key 'scale_mode' expects clamp or raw_exp, got '" +
                                  e.value + "'");
        } else if (key == "nll_normalization") {
            if (!e.value.empty()) nll_norm_from_name(e.value); // name check only
            model.nll_normalization = e.value;
        }

        else if (key == "loss") loss.kind = loss_kind_from_name(e.value);
        else if (key == "loss_c") {
            loss.c = to_double(key, e, og);
            loss_c_set = true;
        } else if (key == "loss_k") loss.k = to_double(key, e, og);

        else if (key == "epochs") epochs = static_cast<int>(to_int(key, e, og));
        else if (key == "batch_size") batch_size = static_cast<int>(to_int(key, e, og));
        else if (key == "learning_rate") learning_rate = to_double(key, e, og);
        else if (key == "outlier_fraction") outlier_fraction = to_double(key, e, og);
        else if (key == "grad_clip") grad_clip = to_double(key, e, og);
        else if (key == "checkpoint_every") checkpoint_every = static_cast<int>(to_int(key, e, og));
        else if (key == "warmup_epochs") warmup_epochs = static_cast<int>(to_int(key, e, og));
        else if (key == "seed") seed = to_u64(key, e, og);

        else if (key == "aggregation") aggregation = e.value;
        else if (key == "pauc_p") pauc_p = to_double(key, e, og);

        else if (key == "synth_ids") synth_ids = static_cast<int>(to_int(key, e, og));
        else if (key == "synth_train_per_id") synth_train_per_id = static_cast<int>(to_int(key, e, og));
        else if (key == "synth_test_normal_per_id")
            synth_test_normal_per_id = static_cast<int>(to_int(key, e, og));
        else if (key == "synth_test_anomaly_per_id")
            synth_test_anomaly_per_id = static_cast<int>(to_int(key, e, og));
        else if (key == "synth_duration_s") synth_duration_s = to_double(key, e, og);
        else if (key == "synth_anomaly") synth_anomaly = e.value;
        else if (key == "synth_anomaly_magnitude") synth_anomaly_magnitude = to_double(key, e, og);
        else if (key == "synth_anomaly_tone_hz") synth_anomaly_tone_hz = to_double(key, e, og);
        else if (key == "synth_variant") synth_variant = static_cast<int>(to_int(key, e, og));
        else if (key == "synth_cross_type") synth_cross_type = e.value;

        else
            throw ConfigError(where(og, e.line) + "unknown config key '" + key + "'");
    }
}

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    if (!config_path.empty()) cfg.apply(parse_config_file(config_path));
    if (!overrides.empty()) {
        ParsedConfig flags;
        flags.origin = "--set";
        for (const auto& [k, v] : overrides) {
            // later flags win silently, unlike duplicate file lines
            flags.entries[k] = ConfigEntry{v, 0};
        }
        cfg.apply(flags);
    }
    return cfg;
}

void store_calibration(const std::string& path, const std::string& machine_type,
                       const std::string& preset, double c) {
    std::map<std::string, std::string> kv;
    if (std::filesystem::exists(path)) {
        ParsedConfig existing = parse_config_file(path);
        for (const auto& [k, e] : existing.entries) kv[k] = e.value;
    }
    kv[machine_type + "/" + preset] = fmt_double(c);
    std::filesystem::path parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write calibration file '" + path + "'");
    out << "# NLL thresholds recorded by the calibrate command\n";
    for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
}

std::optional<double> lookup_calibration(const std::string& path, const std::string& machine_type,
                                         const std::string& preset) {
    if (!std::filesystem::exists(path)) return std::nullopt;
    ParsedConfig existing = parse_config_file(path);
    auto it = existing.entries.find(machine_type + "/" + preset);
    if (it == existing.entries.end()) return std::nullopt;
    return to_double(it->first, it->second, path);
}

} // namespace nfad
