#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperite/data.hpp"
#include "hyperite/learners.hpp"

namespace hyperite::eval {

// Root mean squared error between estimated and true effects.
double pehe(std::span<const double> tau_hat, std::span<const double> mu1, std::span<const double> mu0);
// Throws data::CounterfactualsUnavailable when the dataset carries no surfaces.
double pehe(const learners::FittedLearner& model, const data::CausalDataset& data);

struct DataSource {
  enum class Kind { synthetic, csv };
  Kind kind = Kind::synthetic;
  data::DgpConfig dgp;
  std::filesystem::path csv_path;
  data::CsvSchema schema;
};

enum class SweepAxis { none, dataset_size, embedding_size, strategy };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& name);

struct Sweep {
  SweepAxis axis = SweepAxis::none;
  std::vector<std::size_t> sizes;                     // dataset_size / embedding_size
  std::vector<hyper::GenerationStrategy> strategies;  // strategy
  std::size_t count() const;
  std::string label(std::size_t i) const;
};

// Per-learner hypernet settings that replace the shared training defaults.
struct LearnerOverride {
  std::optional<hyper::GenerationStrategy> strategy;
  std::optional<std::size_t> embedding_size;
};

struct ExperimentConfig {
  std::vector<learners::LearnerKind> learners;
  std::vector<LearnerOverride> overrides;  // empty, or one per learner; sweep values win
  DataSource data;
  std::vector<std::uint64_t> seeds;
  double test_frac = 0.2;
  std::optional<std::size_t> n_train;  // stratified subsample of the training part
  learners::TrainConfig train;
  Sweep sweep;
  std::size_t jobs = 1;

  void validate() const;
};

struct RunRecord {
  std::string learner;  // "t_learner/hyper"
  std::string sweep_value;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  double pehe_in = 0.0;
  double pehe_out = 0.0;
  std::size_t steps_to_best = 0;
  std::size_t epochs = 0;
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  std::vector<learners::TracePoint> trace;
};

struct ResultRow {
  std::string learner;
  std::string sweep_value;
  std::size_t runs = 0;
  double pehe_in_mean = 0.0;
  double pehe_in_se = 0.0;
  double pehe_out_mean = 0.0;
  double pehe_out_se = 0.0;
  bool low_sample = false;  // a single run: standard errors reported as 0
};

struct ResultsTable {
  SweepAxis axis = SweepAxis::none;
  std::vector<ResultRow> rows;
  std::vector<RunRecord> records;

  // Rows in first-appearance order of (learner, sweep value).
  static ResultsTable aggregate(SweepAxis axis, std::vector<RunRecord> records);
  const ResultRow& row(const std::string& learner, const std::string& sweep_value = "") const;
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

// Sample standard deviation over sqrt(n); se = 0 for a single value.
MeanSe mean_and_se(std::span<const double> values);

ResultsTable run_experiment(const ExperimentConfig& cfg);
ResultsTable dataset_size_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& sizes);
ResultsTable embedding_size_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& sizes);
ResultsTable strategy_sweep(const ExperimentConfig& cfg, const std::vector<hyper::GenerationStrategy>& strategies);
// Dispatches on cfg.sweep.axis (none runs a plain experiment).
ResultsTable run_sweep(const ExperimentConfig& cfg);

// 1-based position of the first minimum of a per-update loss sequence.
std::size_t steps_to_best(std::span<const double> losses);
// Update count at which the trace first reaches its minimum.
std::size_t steps_to_best(const std::vector<learners::TracePoint>& trace);

struct ConvergenceSummary {
  std::string learner_type;
  double baseline_mean_steps = 0.0;
  double hyper_mean_steps = 0.0;
  double ratio = 0.0;             // hyper / baseline
  std::size_t pairs = 0;          // (seed, sweep value) cells with both modes
  std::size_t hyper_not_slower = 0;
};

double steps_ratio(double baseline_steps, double hyper_steps);
std::vector<ConvergenceSummary> convergence_trace_compare(const std::vector<RunRecord>& records);

void write_results_csv(const ResultsTable& table, const std::filesystem::path& path);
void write_raw_jsonl(const ResultsTable& table, const std::filesystem::path& path);
void write_traces_jsonl(const ResultsTable& table, const std::filesystem::path& path);
// x = sweep value, y = mean PEHE-out, err = its standard error.
void write_sweep_csv(const ResultsTable& table, const std::filesystem::path& path);
std::vector<RunRecord> read_raw_jsonl(const std::filesystem::path& path);

// Console block: learner, PEHE-in mean (SE), PEHE-out mean (SE).
std::string format_table(const ResultsTable& table);

}  // namespace hyperite::eval
