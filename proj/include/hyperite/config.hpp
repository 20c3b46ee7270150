#pragma once

// JSON run configuration shared by the command-line tool.
//
//   {
//     "data":       {"source": "synthetic", "n": 1000, "d": 10, "rho": 0.9, ...},
//     "learners":   ["t_learner/baseline", {"kind": "t_learner", "mode": "hyper", "strategy": "split_head"}],
//     "training":   {"lr": 1e-4, "weight_decay": 1e-4, "batch_size": 1024, "patience": 50, "val_frac": 0.3},
//     "experiment": {"seeds": 10, "test_frac": 0.2, "sweep": {"axis": "dataset_size", "values": [250, 500]}},
//     "output":     {"dir": "results"},
//     "gradcheck":  {"draws": 20}
//   }
//
// Every section is optional; unknown keys are errors.

#include <filesystem>
#include <stdexcept>
#include <string>

#include "hyperite/eval.hpp"
#include "hyperite/gradcheck.hpp"

namespace hyperite::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Environment variable that replaces output.dir (a --out flag still wins).
inline constexpr const char* kOutputDirEnv = "HYPERITE_OUT_DIR";

struct RunConfig {
  eval::ExperimentConfig experiment;
  bool include_mu = true;  // gen-data writes mu0/mu1 columns
  std::filesystem::path output_dir = "results";
  gradcheck::Options gradcheck;
};

// Defaults: one synthetic dataset, t_learner baseline and hyper, seeds 0..9.
RunConfig default_config();

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

// Adds `offset` to every seed.
void apply_seed_offset(RunConfig& cfg, std::uint64_t offset);

// --out (when non-empty) > $HYPERITE_OUT_DIR > output.dir.
std::filesystem::path resolve_output_dir(const RunConfig& cfg, const std::string& cli_out);

}  // namespace hyperite::config
