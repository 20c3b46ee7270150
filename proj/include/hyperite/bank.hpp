#pragma once

// A bank of same-architecture target networks trained under one loop.
//
// Each network is either owned directly (baseline) or generated by a shared
// hypernet (hyper). An optional representation network phi feeds every target
// (TARNet). Objectives say which rows train which target with which loss; the
// batch loss is the sum over objectives of the mean loss over their rows.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperite/hypernet.hpp"
#include "hyperite/nn.hpp"

namespace hyperite::learners {

using nn::Matrix;

enum class LearnerMode { baseline, hyper };

enum class LossKind { mse, bce };
enum class RowFilter { all, control, treated };
enum class LabelSource { outcome, treatment };

struct Objective {
  std::size_t target = 0;
  RowFilter rows = RowFilter::all;
  LossKind loss = LossKind::mse;
  LabelSource label = LabelSource::outcome;
};

struct BankData {
  Matrix inputs;
  std::vector<int> t;
  std::vector<double> y;

  std::size_t size() const { return t.size(); }
};

struct BankSpec {
  std::vector<nn::MlpSpec> targets;  // identical layouts; output activation may differ
  std::optional<nn::MlpSpec> representation;
  std::vector<Objective> objectives;
  LearnerMode mode = LearnerMode::baseline;
  hyper::HypernetConfig hypernet;  // n_targets is set from targets.size()

  void validate() const;
};

struct BankGradient {
  double loss = 0.0;
  std::vector<std::vector<double>> blocks;           // same shape as parameter_blocks()
  std::vector<std::vector<std::size_t>> objective_rows;  // data rows each objective used
};

class TargetBank {
 public:
  TargetBank(BankSpec spec, std::uint64_t seed);
  TargetBank(const TargetBank& other);
  TargetBank& operator=(const TargetBank& other);
  TargetBank(TargetBank&&) noexcept = default;
  TargetBank& operator=(TargetBank&&) noexcept = default;
  ~TargetBank();

  const BankSpec& spec() const { return spec_; }
  std::vector<std::span<double>> parameter_blocks();
  std::vector<std::span<const double>> parameter_blocks() const;
  std::vector<double> snapshot() const;
  void restore(std::span<const double> flat);

  const hyper::Hypernet* hypernet() const { return hypernet_.get(); }
  hyper::Hypernet* hypernet() { return hypernet_.get(); }

  // Once per optimizer step (spectral-norm power iteration).
  void before_step();

  BankGradient loss_and_gradient(const BankData& data, const std::vector<std::size_t>& rows, nn::Mode mode,
                                 std::uint64_t seed) const;
  double loss(const BankData& data, const std::vector<std::size_t>& rows) const;

  // Eval-mode weights of target k.
  nn::WeightVector target_weights(std::size_t k) const;
  // Eval-mode representation of the inputs (identity when there is no phi).
  Matrix represent(const Matrix& inputs) const;

 private:
  BankSpec spec_;
  std::unique_ptr<hyper::Hypernet> hypernet_;
  std::vector<nn::WeightVector> direct_;  // baseline target weights
  nn::WeightVector phi_;
};

struct TracePoint {
  std::size_t step = 0;  // optimizer updates performed so far
  double val_loss = 0.0;
};

struct TrainingHistory {
  std::vector<TracePoint> points;  // one per epoch
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  std::size_t best_step = 0;
  std::size_t epochs = 0;
  std::size_t steps = 0;
  bool stopped_early = false;
};

struct LoopConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 1024;
  std::size_t patience = 50;
  std::size_t max_epochs = 2000;
};

using BatchObserver = std::function<void(std::size_t epoch, const BankGradient&)>;

// Mini-batch Adam with early stopping on `val_rows`; leaves the bank at the
// best validation snapshot.
TrainingHistory fit_bank(TargetBank& bank, const BankData& data, const std::vector<std::size_t>& train_rows,
                         const std::vector<std::size_t>& val_rows, const LoopConfig& cfg, std::uint64_t seed,
                         const BatchObserver& observer = {});

}  // namespace hyperite::learners
