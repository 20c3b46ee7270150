#pragma once

// CATE learners: S-, T-, DR-, RA-learner and TARNet, each trainable directly
// (baseline) or through a hypernet (hyper) with identical target architectures.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hyperite/bank.hpp"
#include "hyperite/data.hpp"
#include "hyperite/hypernet.hpp"

namespace hyperite::learners {

enum class LearnerType { s_learner, t_learner, dr_learner, ra_learner, tarnet };

std::string to_string(LearnerType type);
std::string to_string(LearnerMode mode);
LearnerType parse_learner_type(const std::string& name);
LearnerMode parse_learner_mode(const std::string& name);

struct LearnerKind {
  LearnerType type = LearnerType::t_learner;
  LearnerMode mode = LearnerMode::baseline;

  // Two-step learners that regress a pseudo-outcome.
  bool is_direct() const { return type == LearnerType::dr_learner || type == LearnerType::ra_learner; }
  std::string label() const { return to_string(type) + "/" + to_string(mode); }
  static LearnerKind parse(const std::string& label);  // "t_learner/hyper"

  friend bool operator==(const LearnerKind&, const LearnerKind&) = default;
};

// Embedding width used by each hyper learner when none is configured.
std::size_t default_embedding_size(LearnerType type);

struct HyperSettings {
  hyper::GenerationStrategy strategy;
  std::size_t embedding_size = 0;  // 0: default_embedding_size(type)
  std::vector<std::size_t> hidden{100, 100};
  double dropout_rate = 0.05;
  bool spectral_norm = true;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 1024;
  std::size_t patience = 50;
  double val_frac = 0.3;
  std::size_t max_epochs = 2000;
  std::size_t hidden_width = 100;
  std::size_t folds = 5;
  double propensity_eps = 0.01;
  HyperSettings hyper;

  void validate() const;
  LoopConfig loop() const { return {learning_rate, weight_decay, batch_size, patience, max_epochs}; }
};

inline constexpr double kDefaultPropensityClip = 0.01;

double clip_propensity(double p, double eps = kDefaultPropensityClip);
double pseudo_outcome_dr(double y, int t, double mu0, double mu1, double pi);
double pseudo_outcome_ra(double y, int t, double mu0, double mu1);

struct NuisanceEstimates {
  std::vector<double> mu0, mu1, pi;  // out-of-fold, pi clipped
  std::vector<std::size_t> fold;     // fold each unit was predicted in
  std::vector<nn::MlpSpec> specs;    // mu0, mu1[, pi]
  std::vector<TrainingHistory> histories;
};

// Cross-fitted mu0, mu1 and (when with_propensity) pi. In hyper mode one
// hypernet per fold generates every nuisance network.
NuisanceEstimates fit_nuisance(const data::CausalDataset& data, const TrainConfig& cfg, LearnerMode mode,
                               bool with_propensity, std::uint64_t seed);

// Bank layout and objectives used for the given learner stage; exposed so that
// tests and the gradient checker can build the exact training problem.
BankSpec one_step_bank_spec(LearnerKind kind, std::size_t input_dim, data::OutcomeType outcome, const TrainConfig& cfg);
BankSpec nuisance_bank_spec(LearnerMode mode, std::size_t input_dim, data::OutcomeType outcome, bool with_propensity,
                            const TrainConfig& cfg);
BankSpec stage2_bank_spec(std::size_t input_dim, const TrainConfig& cfg);

// Stage-2 regression problem of a direct learner: covariates with the
// pseudo-outcome in place of Y.
BankData pseudo_outcome_data(LearnerType type, const data::CausalDataset& data, const NuisanceEstimates& nuisance);

// Inputs the bank consumes: X, or [X, T] for the S-learner.
BankData bank_data(LearnerType type, const data::CausalDataset& data);

class FittedLearner {
 public:
  FittedLearner(LearnerKind kind, TargetBank model, TrainingHistory history,
                std::optional<NuisanceEstimates> nuisance = std::nullopt);

  LearnerKind kind() const { return kind_; }
  const TargetBank& model() const { return model_; }
  const TrainingHistory& history() const { return history_; }
  const std::optional<NuisanceEstimates>& nuisance() const { return nuisance_; }

  // Architectures of the networks the learner estimates with (the generated
  // ones in hyper mode). Identical between baseline and hyper variants.
  std::vector<nn::MlpSpec> target_specs() const;
  std::size_t target_parameter_count() const;

  std::vector<double> predict_cate(const data::Matrix& x) const;

 private:
  LearnerKind kind_;
  TargetBank model_;
  TrainingHistory history_;
  std::optional<NuisanceEstimates> nuisance_;
  std::vector<nn::WeightVector> frozen_;
};

FittedLearner train(LearnerKind kind, const data::CausalDataset& data, const TrainConfig& cfg, std::uint64_t seed,
                    const BatchObserver& observer = {});

}  // namespace hyperite::learners
