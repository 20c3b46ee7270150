#pragma once

// Central finite-difference checks for the hand-written adjoints.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hyperite/hypernet.hpp"
#include "hyperite/nn.hpp"

namespace hyperite::gradcheck {

// ||a - b|| / max(||a||, ||b||); 0 when both are zero.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

struct Options {
  double step = 1e-5;
  std::size_t draws = 20;
  std::uint64_t seed = 20240607;
  double mlp_tolerance = 1e-5;
  double loss_tolerance = 1e-6;
  double hypernet_tolerance = 1e-4;
  // Negative control: perturb the analytic hypernet gradient before comparing.
  bool inject_adjoint_error = false;
};

struct SuiteResult {
  std::string name;
  std::size_t cases = 0;
  double worst_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return worst_error <= tolerance; }
};

struct Report {
  std::vector<SuiteResult> suites;
  bool passed() const;
  std::string format() const;
};

struct HypernetCase {
  std::size_t embedding_size = 3;
  std::vector<std::size_t> trunk_hidden{8};
  std::vector<std::size_t> target_layers{3, 4, 1};
  hyper::GenerationStrategy strategy;
  bool spectral_norm = true;
  std::size_t n_targets = 2;
  std::size_t rows = 5;
};

struct HypernetErrors {
  double psi = 0.0;         // trunk, heads and auxiliary embeddings
  double embeddings = 0.0;  // target identity embeddings
};

// Loss = MSE of the generated target network on a random batch, summed over
// all targets, with dropout active under a fixed seed.
HypernetErrors check_hypernet(const HypernetCase& c, std::uint64_t seed, double step = 1e-5,
                              bool inject_adjoint_error = false);

// Random small configuration (embedding <= 4, trunk width <= 8, target <= [3,4,1]).
HypernetCase random_hypernet_case(std::uint64_t seed, hyper::StrategyKind kind, bool spectral_norm);

double check_mlp(const nn::MlpSpec& spec, std::uint64_t seed, double step = 1e-5);
double check_mse(std::uint64_t seed, double step = 1e-5);
double check_bce(std::uint64_t seed, double step = 1e-5);

Report run_all(const Options& opts = {});

}  // namespace hyperite::gradcheck
