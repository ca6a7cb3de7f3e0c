#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nfad/commands.hpp"
#include "nfad/config.hpp"
#include "nfad/errors.hpp"

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

void spit(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    REQUIRE(f.good());
    f << text;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

int count_files(const fs::path& root, const std::string& ext) {
    int n = 0;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().extension() == ext) ++n;
    return n;
}

// Small-but-complete pipeline configuration: 2 IDs, 2 s recordings,
// a 2-block MAF on 24 mel bins. Everything downstream of synth runs in
// well under a second per command.
RunConfig tiny_config(const std::string& root, uint64_t seed = 5) {
    RunConfig cfg;
    cfg.data_root = root + "/data";
    cfg.out = root + "/out";
    cfg.machine_type = "gear";
    cfg.seed = seed;
    cfg.synth_ids = 2;
    cfg.synth_train_per_id = 3;
    cfg.synth_test_normal_per_id = 2;
    cfg.synth_test_anomaly_per_id = 2;
    cfg.features.n_mels = 24;
    cfg.model.made_blocks = 2;
    cfg.model.made_hidden = 16;
    cfg.epochs = 2;
    cfg.warmup_epochs = 1;
    cfg.batch_size = 32;
    return cfg;
}

// synth into cfg.data_root (generate wants the dataset root, cmd_synth
// writes under cfg.out) and then extract caches
void synth_and_features(RunConfig cfg, std::ostream& log) {
    RunConfig synth_cfg = cfg;
    synth_cfg.out = cfg.data_root;
    REQUIRE(cmd_synth(synth_cfg, log) == 0);
    REQUIRE(cmd_features(cfg, log) == 0);
}

} // namespace

TEST_CASE("key=value parser: trimming, comments, first-equals split") {
    std::string text = "# heading comment\n"
                       "\n"
                       "  data_root =  /some/dir  \n"
                       "loss=oe_modified\n"
                       "checkpoint=out/name=with=equals.nfad\n";
    ParsedConfig p = parse_config_text(text, "run.conf");
    CHECK(p.origin == "run.conf");
    CHECK(p.entries.size() == 3);
    CHECK(p.entries.at("data_root").value == "/some/dir");
    CHECK(p.entries.at("data_root").line == 3);
    CHECK(p.entries.at("loss").value == "oe_modified");
    CHECK(p.entries.at("checkpoint").value == "out/name=with=equals.nfad");
    CHECK(p.entries.at("checkpoint").line == 5);

    CHECK(parse_config_text("", "empty.conf").entries.empty());
    CHECK(parse_config_text("# only a comment\n", "c.conf").entries.empty());

    // empty value is a valid way to reset a key to ""
    ParsedConfig blank = parse_config_text("machine_id=\n", "b.conf");
    CHECK(blank.entries.at("machine_id").value.empty());
}

TEST_CASE("key=value parser: malformed input names the line") {
    auto message_of = [](const std::string& text) {
        try {
            parse_config_text(text, "spec.conf");
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };

    std::string msg = message_of("seed=1\nepochs=2\njust some words\n");
    CHECK(msg.find("spec.conf:3:") != std::string::npos);
    CHECK(msg.find("key=value") != std::string::npos);

    msg = message_of("bad key!=1\n");
    CHECK(msg.find("spec.conf:1:") != std::string::npos);
    CHECK(msg.find("invalid key") != std::string::npos);

    msg = message_of("seed=1\n\nseed=2\n");
    CHECK(msg.find("spec.conf:3:") != std::string::npos);
    CHECK(msg.find("duplicate key 'seed'") != std::string::npos);
    CHECK(msg.find("line 1") != std::string::npos);

    CHECK_THROWS_AS(parse_config_file("/nonexistent/p.conf"), ConfigError);
}

TEST_CASE("RunConfig rejects unknown keys and bad values with locations") {
    RunConfig cfg;
    auto apply_text = [&](const std::string& text) {
        cfg.apply(parse_config_text(text, "f.conf"));
    };

    CHECK_THROWS_WITH_AS(apply_text("no_such_key=1\n"),
                         "f.conf:1: unknown config key 'no_such_key'", ConfigError);
    CHECK_THROWS_WITH_AS(apply_text("seed=1\nepochs=soon\n"),
                         "f.conf:2: key 'epochs' expects an integer, got 'soon'", ConfigError);
    CHECK_THROWS_AS(apply_text("pauc_p=0.1.5\n"), ConfigError);
    CHECK_THROWS_AS(apply_text("glow_dense_conditioner=maybe\n"), ConfigError);
    CHECK_THROWS_AS(apply_text("scale_mode=soft\n"), ConfigError);
    CHECK_THROWS_AS(apply_text("loss=mse\n"), ConfigError);
    CHECK_THROWS_AS(apply_text("nll_normalization=either\n"), ConfigError);
    CHECK_THROWS_AS(apply_text("seed=-3\n"), ConfigError);
}

TEST_CASE("every documented key parses, defaults match the fresh struct") {
    // feed each documented default back through the parser; the result
    // must equal an untouched RunConfig, which keeps the help text and
    // the code from drifting apart
    std::ostringstream all;
    for (const auto& d : config_key_docs())
        if (!d.fallback.empty()) all << d.key << "=" << d.fallback << "\n";

    RunConfig cfg;
    cfg.apply(parse_config_text(all.str(), "defaults.conf"));

    RunConfig fresh;
    CHECK(cfg.out == fresh.out);
    CHECK(cfg.features.frame_length == fresh.features.frame_length);
    CHECK(cfg.features.hop_length == fresh.features.hop_length);
    CHECK(cfg.features.n_mels == fresh.features.n_mels);
    CHECK(cfg.features.window_frames == fresh.features.window_frames);
    CHECK(cfg.features.window_hop == fresh.features.window_hop);
    CHECK(cfg.features.log_floor == fresh.features.log_floor);
    CHECK(cfg.model.preset == fresh.model.preset);
    CHECK(cfg.model.made_blocks == fresh.model.made_blocks);
    CHECK(cfg.model.made_hidden == fresh.model.made_hidden);
    CHECK(cfg.model.glow_blocks == fresh.model.glow_blocks);
    CHECK(cfg.model.glow_steps == fresh.model.glow_steps);
    CHECK(cfg.model.glow_hidden == fresh.model.glow_hidden);
    CHECK(cfg.model.glow_dense_conditioner == fresh.model.glow_dense_conditioner);
    CHECK((cfg.model.scale_mode == fresh.model.scale_mode));
    CHECK((cfg.loss.kind == fresh.loss.kind));
    CHECK(cfg.loss.k == fresh.loss.k);
    CHECK_FALSE(cfg.loss_c_set);
    CHECK(cfg.epochs == fresh.epochs);
    CHECK(cfg.batch_size == fresh.batch_size);
    CHECK(cfg.learning_rate == fresh.learning_rate);
    CHECK(cfg.outlier_fraction == fresh.outlier_fraction);
    CHECK(cfg.grad_clip == fresh.grad_clip);
    CHECK(cfg.checkpoint_every == fresh.checkpoint_every);
    CHECK(cfg.warmup_epochs == fresh.warmup_epochs);
    CHECK(cfg.seed == fresh.seed);
    CHECK(cfg.aggregation == fresh.aggregation);
    CHECK(cfg.pauc_p == fresh.pauc_p);
    CHECK(cfg.synth_ids == fresh.synth_ids);
    CHECK(cfg.synth_train_per_id == fresh.synth_train_per_id);
    CHECK(cfg.synth_test_normal_per_id == fresh.synth_test_normal_per_id);
    CHECK(cfg.synth_test_anomaly_per_id == fresh.synth_test_anomaly_per_id);
    CHECK(cfg.synth_duration_s == fresh.synth_duration_s);
    CHECK(cfg.synth_anomaly == fresh.synth_anomaly);
    CHECK(cfg.synth_anomaly_magnitude == fresh.synth_anomaly_magnitude);
    CHECK(cfg.synth_anomaly_tone_hz == fresh.synth_anomaly_tone_hz);
    CHECK(cfg.synth_variant == fresh.synth_variant);

    // and the help block mentions every key
    std::string help = config_key_help();
    for (const auto& d : config_key_docs()) CHECK(help.find(d.key) != std::string::npos);
}

TEST_CASE("flag overrides win over the config file") {
    TempDir tmp("nfad_cli_overrides");
    spit(tmp.path / "run.conf", "seed=3\nepochs=7\nmachine_type=fan\nout=filedir\n");

    RunConfig cfg = load_run_config((tmp.path / "run.conf").string(),
                                    {{"seed", "9"}, {"out", "flagdir"}});
    CHECK(cfg.seed == 9);
    CHECK(cfg.out == "flagdir");
    CHECK(cfg.epochs == 7);              // untouched by flags
    CHECK(cfg.machine_type == "fan");

    // later overrides beat earlier ones (--seed after --set seed=...)
    RunConfig cfg2 = load_run_config("", {{"seed", "4"}, {"seed", "11"}});
    CHECK(cfg2.seed == 11);

    CHECK_THROWS_AS(load_run_config("", {{"bogus", "1"}}), ConfigError);
}

TEST_CASE("derived paths and the train-config view") {
    RunConfig cfg;
    cfg.out = "runs/a";
    cfg.machine_type = "pump";
    cfg.features.window_frames = 32;
    cfg.features.n_mels = 48;
    cfg.seed = 17;
    CHECK(cfg.resolved_cache_root() == "runs/a/cache");
    CHECK(cfg.resolved_calibration_file() == "runs/a/calibration.txt");
    CHECK(cfg.resolved_checkpoint("02") == "runs/a/pump_id_02_maf_additive.nfad");
    cfg.cache_root = "elsewhere";
    cfg.calibration_file = "cal.txt";
    cfg.checkpoint = "fixed.nfad";
    CHECK(cfg.resolved_cache_root() == "elsewhere");
    CHECK(cfg.resolved_calibration_file() == "cal.txt");
    CHECK(cfg.resolved_checkpoint("02") == "fixed.nfad");

    FlowConfig mc = cfg.model_config();
    CHECK(mc.window_frames == 32);
    CHECK(mc.n_mels == 48);
    CHECK(mc.seed == 17);

    TrainConfig tc = cfg.train_config();
    CHECK(tc.model.input_dim() == 32 * 48);
    CHECK(tc.seed == 17);
    CHECK(tc.loss.nll_normalization == "total"); // recorded from the MAF preset
    tc.validate();                               // nll_only needs no c
}

TEST_CASE("calibration store round-trips and keeps other entries") {
    TempDir tmp("nfad_cli_calstore");
    std::string path = (tmp.path / "calibration.txt").string();

    CHECK_FALSE(lookup_calibration(path, "fan", "maf_additive").has_value());

    store_calibration(path, "fan", "maf_additive", -751.25);
    store_calibration(path, "pump", "glow_affine", 5.703125);
    store_calibration(path, "fan", "maf_additive", -752.5); // overwrite

    auto fan = lookup_calibration(path, "fan", "maf_additive");
    auto pump = lookup_calibration(path, "pump", "glow_affine");
    REQUIRE(fan.has_value());
    REQUIRE(pump.has_value());
    CHECK(*fan == -752.5);
    CHECK(*pump == 5.703125);
    CHECK_FALSE(lookup_calibration(path, "fan", "glow_affine").has_value());

    // a value that does not fit %.12g exactly still comes back close
    store_calibration(path, "fan", "maf_affine", -751.0 + 1.0 / 3.0);
    CHECK(*lookup_calibration(path, "fan", "maf_affine") ==
          doctest::Approx(-751.0 + 1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("features: one cache per recording, idempotent rerun") {
    TempDir tmp("nfad_cli_features");
    RunConfig cfg = tiny_config(tmp.str());
    std::ostringstream log;

    RunConfig synth_cfg = cfg;
    synth_cfg.out = cfg.data_root;
    REQUIRE(cmd_synth(synth_cfg, log) == 0);
    int n_wavs = count_files(cfg.data_root, ".wav");
    CHECK(n_wavs == 2 * (3 + 2 + 2));

    REQUIRE(cmd_features(cfg, log) == 0);
    CHECK(count_files(cfg.out + "/cache", ".nffc") == n_wavs);

    auto first = tree_bytes(cfg.out + "/cache");
    REQUIRE(cmd_features(cfg, log) == 0);
    CHECK(tree_bytes(cfg.out + "/cache") == first);

    CHECK(log.str().find("features: 14 of 14 caches") != std::string::npos);
}

TEST_CASE("features: empty dataset reports zero recordings") {
    TempDir tmp("nfad_cli_features_empty");
    fs::create_directories(tmp.path / "data/hollow/train");
    fs::create_directories(tmp.path / "data/hollow/test");
    RunConfig cfg = tiny_config(tmp.str());
    cfg.machine_type = "hollow";
    std::ostringstream log;
    CHECK_THROWS_WITH_AS(cmd_features(cfg, log),
                         ("zero recordings under " + cfg.data_root + "/hollow").c_str(),
                         ConfigError);
}

TEST_CASE("features: a corrupt wav is summarized, the rest still cache") {
    TempDir tmp("nfad_cli_features_bad");
    RunConfig cfg = tiny_config(tmp.str());
    std::ostringstream log;
    RunConfig synth_cfg = cfg;
    synth_cfg.out = cfg.data_root;
    REQUIRE(cmd_synth(synth_cfg, log) == 0);

    std::string victim = cfg.data_root + "/gear/train/normal_id_00_00000000.wav";
    REQUIRE(fs::exists(victim));
    spit(victim, "RIFFgarbage");

    CHECK(cmd_features(cfg, log) == 1);
    CHECK(count_files(cfg.out + "/cache", ".nffc") == 13);
    CHECK(log.str().find("features: 13 of 14 caches") != std::string::npos);
    CHECK(log.str().find("failed " + victim) != std::string::npos);
}

TEST_CASE("calibrate stores c, train reads it back") {
    TempDir tmp("nfad_cli_calibrate");
    RunConfig cfg = tiny_config(tmp.str());
    std::ostringstream log;
    synth_and_features(cfg, log);

    REQUIRE(cmd_calibrate(cfg, log) == 0);
    auto stored = lookup_calibration(cfg.resolved_calibration_file(), "gear", "maf_additive");
    REQUIRE(stored.has_value());
    CHECK(std::isfinite(*stored));

    // same seed, same stored value
    std::string before = slurp(cfg.resolved_calibration_file());
    REQUIRE(cmd_calibrate(cfg, log) == 0);
    CHECK(slurp(cfg.resolved_calibration_file()) == before);

    cfg.machine_id = "00";
    cfg.loss.kind = LossKind::oe_threshold;
    REQUIRE(cmd_train(cfg, log) == 0);

    // the manifest records the resolved threshold
    std::string manifest = slurp(cfg.resolved_checkpoint("00") + ".manifest.txt");
    char want[64];
    std::snprintf(want, sizeof want, "loss_c=%.12g", *stored);
    CHECK(manifest.find(want) != std::string::npos);
    CHECK(manifest.find("loss=oe_threshold") != std::string::npos);
}

TEST_CASE("train: missing stored c fails before touching the model") {
    TempDir tmp("nfad_cli_missing_c");
    RunConfig cfg = tiny_config(tmp.str());
    std::ostringstream log;
    synth_and_features(cfg, log);

    cfg.machine_id = "00";
    cfg.loss.kind = LossKind::oe_modified;
    CHECK_THROWS_AS(cmd_train(cfg, log), ConfigError);
    try {
        cmd_train(cfg, log);
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("gear/maf_additive") != std::string::npos);
        CHECK(msg.find("run calibrate first") != std::string::npos);
    }
    CHECK_FALSE(fs::exists(cfg.resolved_checkpoint("00")));

    // an explicit loss_c skips the store entirely
    cfg.loss.c = 1.0e5;
    cfg.loss_c_set = true;
    REQUIRE(cmd_train(cfg, log) == 0);
    CHECK(fs::exists(cfg.resolved_checkpoint("00")));
}

TEST_CASE("train: nll_only works with a single machine ID, oe does not") {
    TempDir tmp("nfad_cli_single_id");
    RunConfig cfg = tiny_config(tmp.str());
    cfg.synth_ids = 1;
    cfg.synth_anomaly = "tone"; // swap needs two IDs
    std::ostringstream log;
    synth_and_features(cfg, log);

    cfg.machine_id = "00";
    REQUIRE(cmd_train(cfg, log) == 0);
    CHECK(fs::exists(cfg.resolved_checkpoint("00")));

    cfg.loss.kind = LossKind::oe_threshold;
    cfg.loss.c = 10.0;
    cfg.loss_c_set = true;
    CHECK_THROWS_AS(cmd_train(cfg, log), ConfigError);
    try {
        cmd_train(cfg, log);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("other machine IDs") != std::string::npos);
    }
}

TEST_CASE("evaluate: exact columns, aggregate mean, deterministic bytes") {
    TempDir tmp("nfad_cli_evaluate");
    RunConfig cfg = tiny_config(tmp.str());
    std::ostringstream log;
    synth_and_features(cfg, log);

    for (const std::string id : {"00", "01"}) {
        cfg.machine_id = id;
        REQUIRE(cmd_train(cfg, log) == 0);
    }

    cfg.machine_id.clear();
    std::ostringstream table;
    REQUIRE(cmd_evaluate(cfg, table) == 0);

    std::string report = slurp(cfg.out + "/report_gear.csv");
    std::istringstream lines(report);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "machine_type,machine_id,auc,pauc,n_normal,n_anomaly");
    std::vector<std::string> rows;
    for (std::string row; std::getline(lines, row);) rows.push_back(row);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].substr(0, 8) == "gear,00,");
    CHECK(rows[1].substr(0, 8) == "gear,01,");

    // the printed table carries per-type mean and overall rows
    CHECK(table.str().find("mean") != std::string::npos);
    CHECK(table.str().find("total") != std::string::npos);

    // per-id score files: header plus 4 test recordings each
    for (const std::string id : {"00", "01"}) {
        std::string scores = slurp(cfg.out + "/scores_gear_id_" + id + ".csv");
        CHECK(scores.rfind("path,score,label\n", 0) == 0);
        CHECK(std::count(scores.begin(), scores.end(), '\n') == 5);
    }

    // rerun reproduces both outputs byte for byte
    std::string scores_before = slurp(cfg.out + "/scores_gear_id_00.csv");
    REQUIRE(cmd_evaluate(cfg, log) == 0);
    CHECK(slurp(cfg.out + "/report_gear.csv") == report);
    CHECK(slurp(cfg.out + "/scores_gear_id_00.csv") == scores_before);

    // single-id evaluation with an explicit checkpoint path
    cfg.machine_id = "00";
    cfg.checkpoint = cfg.out + "/gear_id_00_maf_additive.nfad";
    REQUIRE(cmd_evaluate(cfg, log) == 0);
    cfg.machine_id.clear();
    CHECK_THROWS_AS(cmd_evaluate(cfg, log), ConfigError); // two ids, one fixed path
}

TEST_CASE("evaluate: anomaly-free test split raises SingleClassError") {
    TempDir tmp("nfad_cli_single_class");
    RunConfig cfg = tiny_config(tmp.str());
    cfg.synth_test_anomaly_per_id = 0;
    std::ostringstream log;
    synth_and_features(cfg, log);

    cfg.machine_id = "00";
    REQUIRE(cmd_train(cfg, log) == 0);
    CHECK_THROWS_AS(cmd_evaluate(cfg, log), SingleClassError);
}

TEST_CASE("synth: cross-type corpus and spec validation errors surface") {
    TempDir tmp("nfad_cli_synth");
    RunConfig cfg = tiny_config(tmp.str());
    cfg.out = tmp.str() + "/corpus";
    cfg.synth_cross_type = "belt";
    std::ostringstream log;
    REQUIRE(cmd_synth(cfg, log) == 0);
    CHECK(fs::exists(fs::path(cfg.out) / "gear/spec.txt"));
    CHECK(fs::exists(fs::path(cfg.out) / "belt/spec.txt"));
    CHECK(count_files(cfg.out, ".wav") == 2 * 14);

    cfg.synth_cross_type = "gear"; // same name both sides
    CHECK_THROWS_AS(cmd_synth(cfg, log), SpecError);

    cfg.synth_cross_type.clear();
    cfg.synth_anomaly = "hum";
    CHECK_THROWS_AS(cmd_synth(cfg, log), ConfigError);
    cfg.synth_anomaly = "swap";
    cfg.synth_ids = 1;
    CHECK_THROWS_AS(cmd_synth(cfg, log), SpecError);
}

TEST_CASE("pipeline determinism: same seed, byte-identical reports") {
    std::ostringstream log;
    std::string report[2];
    std::string scores[2];
    TempDir tmp("nfad_cli_determinism");
    for (int run = 0; run < 2; ++run) {
        // wipe and rebuild in place; scores carry recording paths, so the
        // runs must share a root to be byte-comparable
        fs::remove_all(tmp.path);
        fs::create_directories(tmp.path);
        RunConfig cfg = tiny_config(tmp.str(), 11);
        synth_and_features(cfg, log);
        REQUIRE(cmd_calibrate(cfg, log) == 0);
        cfg.loss.kind = LossKind::oe_modified;
        for (const std::string id : {"00", "01"}) {
            cfg.machine_id = id;
            REQUIRE(cmd_train(cfg, log) == 0);
        }
        cfg.machine_id.clear();
        REQUIRE(cmd_evaluate(cfg, log) == 0);
        report[run] = slurp(cfg.out + "/report_gear.csv");
        scores[run] = slurp(cfg.out + "/scores_gear_id_01.csv");
    }
    CHECK(report[0] == report[1]);
    CHECK(scores[0] == scores[1]);
}

