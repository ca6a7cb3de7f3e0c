#pragma once

#include <ostream>

#include "nfad/config.hpp"

namespace nfad {

// The five CLI entry points. Each returns the process exit code: 0 on
// success, 1 when some recordings failed feature extraction, 2 when a
// training run stopped on a non-finite value. Configuration and I/O
// problems throw (ConfigError, FormatError, ...) and the binary maps
// them to exit code 1. `log` receives progress output; errors travel
// as exceptions, not log lines.

int cmd_features(const RunConfig& cfg, std::ostream& log);
int cmd_calibrate(const RunConfig& cfg, std::ostream& log);
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_evaluate(const RunConfig& cfg, std::ostream& log);
int cmd_synth(const RunConfig& cfg, std::ostream& log);

} // namespace nfad
