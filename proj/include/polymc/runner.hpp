#pragma once

#include <string>
#include <vector>

#include "polymc/config.hpp"

namespace polymc::runner {

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> subs = {
      "partition", "free-energy", "phase-scan", "lln",      "tau",
      "martingale", "concentration", "criteria", "green",   "validate"};
  return subs;
}

struct RunOutcome {
  int exit_code = 0;           // 0 ok, 2 config, 3 numerical, 4 resource cap
  std::string error;           // message on failure, names the failing stage
  std::vector<std::string> report; // validate findings (empty = valid)
};

// Executes one subcommand against a parsed config, writing CSV outputs and
// manifest.txt into outdir. Outputs are byte-identical for identical
// (config, seed, version) regardless of the worker count.
RunOutcome run(const std::string& subcommand, const config::Config& cfg, const std::string& outdir);

} // namespace polymc::runner
