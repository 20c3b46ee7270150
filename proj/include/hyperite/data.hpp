#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hyperite/nn.hpp"

namespace hyperite::data {

using nn::Matrix;

enum class OutcomeType { continuous, binary };

std::string to_string(OutcomeType t);
OutcomeType parse_outcome_type(const std::string& name);

struct CounterfactualsUnavailable : std::runtime_error {
  CounterfactualsUnavailable() : std::runtime_error("counterfactuals unavailable: dataset has no mu0/mu1 columns") {}
};

struct CausalDataset {
  Matrix x;                 // N x d covariates
  std::vector<int> t;       // binary treatment
  std::vector<double> y;    // factual outcome
  std::optional<std::vector<double>> mu0;
  std::optional<std::vector<double>> mu1;
  OutcomeType outcome_type = OutcomeType::continuous;

  std::size_t size() const { return t.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t treated() const;
  bool has_counterfactuals() const { return mu0.has_value() && mu1.has_value(); }
  // mu1 - mu0; throws CounterfactualsUnavailable.
  std::vector<double> true_effect() const;

  CausalDataset subset(const std::vector<std::size_t>& rows) const;
  // Throws std::invalid_argument on shape mismatch, non-finite values, T outside
  // {0,1}, or a missing treatment arm.
  void validate() const;
};

enum class EffectFunction { linear, first_coordinate };

std::string to_string(EffectFunction e);
EffectFunction parse_effect_function(const std::string& name);

// Synthetic process with known potential outcomes:
//   X ~ N(0, I_d), pi(x) = sigmoid(a <beta_pi, x>), T ~ Bernoulli(pi(x)),
//   mu0(x) = sin(<beta_b, x>) + 0.5 x_1^2,
//   mu1(x) = mu0(x) + 0.5 rho + (1 - rho) g(x),
// where g is <beta_tau, x> (linear) or x_1 (first_coordinate). The beta vectors
// are unit-norm and depend only on structure_seed. For binary outcomes the
// stored surfaces are sigmoid(mu_t) and Y(t) ~ Bernoulli(sigmoid(mu_t)).
struct DgpConfig {
  std::size_t n = 1000;
  std::size_t d = 10;
  double confounding = 0.5;
  double rho = 0.9;
  EffectFunction effect = EffectFunction::linear;
  double noise_sd = 0.5;
  OutcomeType outcome_type = OutcomeType::continuous;
  std::uint64_t structure_seed = 0;
  std::uint64_t noise_seed = 0;

  void validate() const;
};

CausalDataset generate_synthetic(const DgpConfig& cfg, std::uint64_t seed);

struct CsvSchema {
  std::vector<std::string> covariates;  // empty: every column named x<k>
  std::string treatment = "t";
  std::string outcome = "y";
  std::string mu0 = "mu0";
  std::string mu1 = "mu1";
  OutcomeType outcome_type = OutcomeType::continuous;
};

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

CausalDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
// Columns x0..x{d-1}, t, y and, when requested and present, mu0, mu1.
void write_csv(const CausalDataset& data, const std::filesystem::path& path, bool include_mu = true);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

struct Split {
  CausalDataset train, val, test;
};

// test_frac of all rows go to test, val_frac of the remainder to validation.
// Stratified splits allocate each arm proportionally (largest remainder).
SplitIndices split_indices(const CausalDataset& data, double test_frac, double val_frac, std::uint64_t seed,
                           bool stratify_by_t = true);
Split split(const CausalDataset& data, double test_frac, double val_frac, std::uint64_t seed, bool stratify_by_t = true);

// Stratified subset of `rows` with exactly `count` entries. For a fixed seed
// smaller counts are prefixes of larger ones within each arm.
std::vector<std::size_t> stratified_subsample(const CausalDataset& data, const std::vector<std::size_t>& rows,
                                              std::size_t count, std::uint64_t seed);

// Stratified holdout of `rows`: returns (kept, held_out) with held_out holding
// round(frac * rows) units allocated proportionally across arms.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(const std::vector<int>& t,
                                                                                const std::vector<std::size_t>& rows,
                                                                                double frac, std::uint64_t seed);

// Fold id in [0, k) per entry of `rows`, balanced within each arm. Throws when
// an arm has fewer than k units (some fold would miss that arm).
std::vector<std::size_t> stratified_folds(const std::vector<int>& t, const std::vector<std::size_t>& rows, std::size_t k,
                                          std::uint64_t seed);

CausalDataset subsample_treated(const CausalDataset& data, double keep_prob, std::uint64_t seed);

}  // namespace hyperite::data
