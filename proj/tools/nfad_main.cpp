// nfad: anomalous-sound detection with normalizing flows.
// Subcommands cover the whole pipeline: synth -> features -> calibrate
// -> train -> evaluate. Configuration is a flat key=value file plus
// flag overrides; `nfad --help` lists every key.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "nfad/commands.hpp"
#include "nfad/config.hpp"
#include "nfad/errors.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::string out;
    std::int64_t seed = -1;
    bool seed_given = false;
    std::vector<std::string> sets;
};

void add_common_flags(CLI::App* sub, CommonFlags& f) {
    sub->add_option("--config", f.config, "key=value config file");
    sub->add_option("--out", f.out, "output directory (overrides the config file)");
    sub->add_option("--seed", f.seed, "run seed (overrides the config file)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--set", f.sets,
                    "override any config key as key=value; may be repeated, wins over the file");
}

// --set entries first, then the dedicated flags so --seed/--out beat a
// conflicting --set.
std::vector<std::pair<std::string, std::string>> overrides_from(const CLI::App* sub,
                                                                const CommonFlags& f) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : f.sets) {
        size_t eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw nfad::ConfigError("--set expects key=value, got '" + s + "'");
        out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (sub->count("--seed") > 0) out.emplace_back("seed", std::to_string(f.seed));
    if (!f.out.empty()) out.emplace_back("out", f.out);
    return out;
}

bool quiet_logging() {
    const char* v = std::getenv("NFAD_LOG");
    if (v == nullptr) return false;
    std::string s(v);
    return s == "quiet" || s == "0" || s == "error";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"nfad: normalizing-flow anomaly detection for machine sounds"};
    app.require_subcommand(1);
    app.footer(nfad::config_key_help() +
               "\nEnvironment:\n  NFAD_LOG=quiet    suppress progress output (errors still go to "
               "stderr)\n");

    struct SubSpec {
        const char* name;
        const char* help;
        int (*run)(const nfad::RunConfig&, std::ostream&);
    };
    const SubSpec subs[] = {
        {"synth", "generate a synthetic labeled dataset", nfad::cmd_synth},
        {"features", "extract log-mel feature caches for a machine type", nfad::cmd_features},
        {"calibrate", "run the NLL warmup and store the threshold c", nfad::cmd_calibrate},
        {"train", "train one machine ID's model", nfad::cmd_train},
        {"evaluate", "score the test set and write AUC/pAUC reports", nfad::cmd_evaluate},
    };

    std::vector<CommonFlags> flags(std::size(subs));
    std::vector<CLI::App*> apps(std::size(subs));
    for (size_t i = 0; i < std::size(subs); ++i) {
        apps[i] = app.add_subcommand(subs[i].name, subs[i].help);
        add_common_flags(apps[i], flags[i]);
    }

    CLI11_PARSE(app, argc, argv);

    std::ostringstream devnull;
    std::ostream& log = quiet_logging() ? static_cast<std::ostream&>(devnull) : std::cout;

    for (size_t i = 0; i < std::size(subs); ++i) {
        if (!apps[i]->parsed()) continue;
        try {
            nfad::RunConfig cfg =
                nfad::load_run_config(flags[i].config, overrides_from(apps[i], flags[i]));
            return subs[i].run(cfg, log);
        } catch (const nfad::Error& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        } catch (const std::exception& e) {
            std::cerr << "internal error: " << e.what() << "\n";
            return 1;
        }
    }
    return 1; // unreachable: require_subcommand(1)
}
