#include "hyperite/learners.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "hyperite/rng.hpp"

namespace hyperite::learners {

namespace {

constexpr std::size_t kMu0 = 0;
constexpr std::size_t kMu1 = 1;
constexpr std::size_t kPropensity = 2;

nn::MlpSpec mlp(std::vector<std::size_t> sizes, nn::Activation output = nn::Activation::identity) {
  nn::MlpSpec s;
  s.layer_sizes = std::move(sizes);
  s.output_activation = output;
  return s;
}

nn::Activation outcome_activation(data::OutcomeType o) {
  return o == data::OutcomeType::binary ? nn::Activation::sigmoid : nn::Activation::identity;
}

LossKind outcome_loss(data::OutcomeType o) { return o == data::OutcomeType::binary ? LossKind::bce : LossKind::mse; }

hyper::HypernetConfig hypernet_config(const TrainConfig& cfg, LearnerType type) {
  hyper::HypernetConfig h;
  h.embedding_size = cfg.hyper.embedding_size > 0 ? cfg.hyper.embedding_size : default_embedding_size(type);
  h.hidden = cfg.hyper.hidden;
  h.strategy = cfg.hyper.strategy;
  h.dropout_rate = cfg.hyper.dropout_rate;
  h.spectral_norm = cfg.hyper.spectral_norm;
  return h;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

std::vector<double> column(const Matrix& m) { return {m.data(), m.data() + m.rows()}; }

void require_both_arms(const data::CausalDataset& data) {
  const auto n1 = data.treated();
  if (n1 == 0 || n1 == data.size()) {
    throw std::invalid_argument("training data needs both treated and untreated units (n=" + std::to_string(data.size()) +
                                ", treated=" + std::to_string(n1) + ")");
  }
}

}  // namespace

std::string to_string(LearnerType type) {
  switch (type) {
    case LearnerType::s_learner: return "s_learner";
    case LearnerType::t_learner: return "t_learner";
    case LearnerType::dr_learner: return "dr_learner";
    case LearnerType::ra_learner: return "ra_learner";
    case LearnerType::tarnet: return "tarnet";
  }
  return "unknown";
}

std::string to_string(LearnerMode mode) { return mode == LearnerMode::hyper ? "hyper" : "baseline"; }

LearnerType parse_learner_type(const std::string& name) {
  for (auto t : {LearnerType::s_learner, LearnerType::t_learner, LearnerType::dr_learner, LearnerType::ra_learner,
                 LearnerType::tarnet}) {
    if (to_string(t) == name) return t;
  }
  throw std::invalid_argument("unknown learner kind '" + name + "'");
}

LearnerMode parse_learner_mode(const std::string& name) {
  if (name == "baseline") return LearnerMode::baseline;
  if (name == "hyper") return LearnerMode::hyper;
  throw std::invalid_argument("unknown learner mode '" + name + "'");
}

LearnerKind LearnerKind::parse(const std::string& label) {
  const auto slash = label.find('/');
  if (slash == std::string::npos) return {parse_learner_type(label), LearnerMode::baseline};
  return {parse_learner_type(label.substr(0, slash)), parse_learner_mode(label.substr(slash + 1))};
}

std::size_t default_embedding_size(LearnerType type) {
  switch (type) {
    case LearnerType::s_learner: return 1;
    case LearnerType::t_learner: return 8;
    case LearnerType::tarnet: return 8;
    case LearnerType::ra_learner: return 8;
    case LearnerType::dr_learner: return 16;
  }
  return 8;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (max_epochs == 0) throw std::invalid_argument("max_epochs must be positive");
  if (!(val_frac > 0.0 && val_frac < 1.0)) throw std::invalid_argument("val_frac must lie in (0, 1)");
  if (hidden_width == 0) throw std::invalid_argument("hidden_width must be positive");
  if (folds < 2) throw std::invalid_argument("folds must be at least 2");
  if (!(propensity_eps > 0.0 && propensity_eps < 0.5)) throw std::invalid_argument("propensity_eps must lie in (0, 0.5)");
  if (!(hyper.dropout_rate >= 0.0 && hyper.dropout_rate < 1.0)) {
    throw std::invalid_argument("hypernet dropout must lie in [0, 1)");
  }
  if (hyper.hidden.empty()) throw std::invalid_argument("hypernet needs at least one hidden layer");
  hyper.strategy.validate();
}

double clip_propensity(double p, double eps) { return std::min(std::max(p, eps), 1.0 - eps); }

double pseudo_outcome_dr(double y, int t, double mu0, double mu1, double pi) {
  const double mu_t = t == 1 ? mu1 : mu0;
  return (static_cast<double>(t) - pi) / (pi * (1.0 - pi)) * (y - mu_t) + mu1 - mu0;
}

double pseudo_outcome_ra(double y, int t, double mu0, double mu1) {
  const double tt = static_cast<double>(t);
  return tt * (y - mu0) + (1.0 - tt) * (mu1 - y);
}

BankSpec one_step_bank_spec(LearnerKind kind, std::size_t d, data::OutcomeType outcome, const TrainConfig& cfg) {
  const auto h = cfg.hidden_width;
  const auto act = outcome_activation(outcome);
  const auto loss = outcome_loss(outcome);
  BankSpec spec;
  spec.mode = kind.mode;
  spec.hypernet = hypernet_config(cfg, kind.type);
  switch (kind.type) {
    case LearnerType::s_learner:
      spec.targets = {mlp({d + 1, h, h, 1}, act)};
      spec.objectives = {{0, RowFilter::all, loss, LabelSource::outcome}};
      break;
    case LearnerType::t_learner:
      spec.targets = {mlp({d, h, h, 1}, act), mlp({d, h, h, 1}, act)};
      spec.objectives = {{kMu0, RowFilter::control, loss, LabelSource::outcome},
                         {kMu1, RowFilter::treated, loss, LabelSource::outcome}};
      break;
    case LearnerType::tarnet:
      spec.representation = mlp({d, h}, nn::Activation::relu);
      spec.targets = {mlp({h, h, 1}, act), mlp({h, h, 1}, act)};
      spec.objectives = {{kMu0, RowFilter::control, loss, LabelSource::outcome},
                         {kMu1, RowFilter::treated, loss, LabelSource::outcome}};
      break;
    case LearnerType::dr_learner:
    case LearnerType::ra_learner:
      throw std::invalid_argument(to_string(kind.type) + " is a two-step learner; use nuisance_bank_spec");
  }
  return spec;
}

BankSpec nuisance_bank_spec(LearnerMode mode, std::size_t d, data::OutcomeType outcome, bool with_propensity,
                            const TrainConfig& cfg) {
  const auto h = cfg.hidden_width;
  const auto act = outcome_activation(outcome);
  const auto loss = outcome_loss(outcome);
  BankSpec spec;
  spec.mode = mode;
  spec.hypernet = hypernet_config(cfg, with_propensity ? LearnerType::dr_learner : LearnerType::ra_learner);
  spec.targets = {mlp({d, h, h, 1}, act), mlp({d, h, h, 1}, act)};
  spec.objectives = {{kMu0, RowFilter::control, loss, LabelSource::outcome},
                     {kMu1, RowFilter::treated, loss, LabelSource::outcome}};
  if (with_propensity) {
    spec.targets.push_back(mlp({d, h, h, 1}, nn::Activation::sigmoid));
    spec.objectives.push_back({kPropensity, RowFilter::all, LossKind::bce, LabelSource::treatment});
  }
  return spec;
}

BankSpec stage2_bank_spec(std::size_t d, const TrainConfig& cfg) {
  BankSpec spec;
  spec.mode = LearnerMode::baseline;
  spec.targets = {mlp({d, cfg.hidden_width, cfg.hidden_width, 1})};
  spec.objectives = {{0, RowFilter::all, LossKind::mse, LabelSource::outcome}};
  return spec;
}

BankData bank_data(LearnerType type, const data::CausalDataset& data) {
  BankData bd;
  bd.t = data.t;
  bd.y = data.y;
  if (type == LearnerType::s_learner) {
    bd.inputs.resize(data.x.rows(), data.x.cols() + 1);
    bd.inputs.leftCols(data.x.cols()) = data.x;
    for (std::size_t i = 0; i < data.size(); ++i) {
      bd.inputs(static_cast<Eigen::Index>(i), data.x.cols()) = static_cast<double>(data.t[i]);
    }
  } else {
    bd.inputs = data.x;
  }
  return bd;
}

NuisanceEstimates fit_nuisance(const data::CausalDataset& data, const TrainConfig& cfg, LearnerMode mode,
                               bool with_propensity, std::uint64_t seed) {
  cfg.validate();
  require_both_arms(data);
  const auto n = data.size();
  const auto rows = all_rows(n);
  const auto folds = data::stratified_folds(data.t, rows, cfg.folds, derive_seed(seed, {0xf0}));
  const auto spec = nuisance_bank_spec(mode, data.dim(), data.outcome_type, with_propensity, cfg);
  const auto bd = bank_data(LearnerType::t_learner, data);

  NuisanceEstimates est;
  est.mu0.assign(n, 0.0);
  est.mu1.assign(n, 0.0);
  est.pi.assign(n, 0.5);
  est.fold = folds;
  est.specs = spec.targets;
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    std::vector<std::size_t> fit_rows, predict_rows;
    for (std::size_t i = 0; i < n; ++i) (folds[i] == f ? predict_rows : fit_rows).push_back(i);
    const auto fold_seed = derive_seed(seed, {0xf1, f});
    const auto [train_rows, val_rows] = data::stratified_holdout(data.t, fit_rows, cfg.val_frac, fold_seed);
    TargetBank bank(spec, fold_seed);
    est.histories.push_back(fit_bank(bank, bd, train_rows, val_rows, cfg.loop(), fold_seed));

    Matrix xf(static_cast<Eigen::Index>(predict_rows.size()), data.x.cols());
    for (std::size_t i = 0; i < predict_rows.size(); ++i) {
      xf.row(static_cast<Eigen::Index>(i)) = data.x.row(static_cast<Eigen::Index>(predict_rows[i]));
    }
    const auto mu0 = column(nn::predict(spec.targets[kMu0], bank.target_weights(kMu0).view(), xf));
    const auto mu1 = column(nn::predict(spec.targets[kMu1], bank.target_weights(kMu1).view(), xf));
    std::vector<double> pi;
    if (with_propensity) pi = column(nn::predict(spec.targets[kPropensity], bank.target_weights(kPropensity).view(), xf));
    for (std::size_t i = 0; i < predict_rows.size(); ++i) {
      const auto r = predict_rows[i];
      est.mu0[r] = mu0[i];
      est.mu1[r] = mu1[i];
      if (with_propensity) est.pi[r] = clip_propensity(pi[i], cfg.propensity_eps);
    }
  }
  return est;
}

BankData pseudo_outcome_data(LearnerType type, const data::CausalDataset& data, const NuisanceEstimates& nuisance) {
  if (type != LearnerType::dr_learner && type != LearnerType::ra_learner) {
    throw std::invalid_argument(to_string(type) + " has no pseudo-outcome");
  }
  if (nuisance.mu0.size() != data.size() || nuisance.mu1.size() != data.size() || nuisance.pi.size() != data.size()) {
    throw std::invalid_argument("nuisance estimates do not match the dataset");
  }
  const bool dr = type == LearnerType::dr_learner;
  BankData out;
  out.inputs = data.x;
  out.t = data.t;
  out.y.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.y[i] = dr ? pseudo_outcome_dr(data.y[i], data.t[i], nuisance.mu0[i], nuisance.mu1[i], nuisance.pi[i])
                  : pseudo_outcome_ra(data.y[i], data.t[i], nuisance.mu0[i], nuisance.mu1[i]);
  }
  return out;
}

FittedLearner::FittedLearner(LearnerKind kind, TargetBank model, TrainingHistory history,
                             std::optional<NuisanceEstimates> nuisance)
    : kind_(kind), model_(std::move(model)), history_(std::move(history)), nuisance_(std::move(nuisance)) {
  for (std::size_t k = 0; k < model_.spec().targets.size(); ++k) frozen_.push_back(model_.target_weights(k));
}

std::vector<nn::MlpSpec> FittedLearner::target_specs() const {
  std::vector<nn::MlpSpec> specs;
  if (nuisance_) specs = nuisance_->specs;
  if (model_.spec().representation) specs.push_back(*model_.spec().representation);
  for (const auto& s : model_.spec().targets) specs.push_back(s);
  return specs;
}

std::size_t FittedLearner::target_parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : target_specs()) n += nn::parameter_count(s);
  return n;
}

std::vector<double> FittedLearner::predict_cate(const data::Matrix& x) const {
  const auto& spec = model_.spec();
  const auto expected = kind_.type == LearnerType::s_learner ? spec.targets[0].input_dim() - 1
                        : spec.representation                ? spec.representation->input_dim()
                                                             : spec.targets[0].input_dim();
  if (static_cast<std::size_t>(x.cols()) != expected) {
    throw std::invalid_argument("predict_cate: input has " + std::to_string(x.cols()) + " columns, learner expects " +
                                std::to_string(expected));
  }
  switch (kind_.type) {
    case LearnerType::s_learner: {
      Matrix treated(x.rows(), x.cols() + 1);
      treated.leftCols(x.cols()) = x;
      treated.col(x.cols()).setOnes();
      Matrix control = treated;
      control.col(x.cols()).setZero();
      const Matrix f1 = nn::predict(spec.targets[0], frozen_[0].view(), treated);
      const Matrix f0 = nn::predict(spec.targets[0], frozen_[0].view(), control);
      return column(f1 - f0);
    }
    case LearnerType::t_learner:
    case LearnerType::tarnet: {
      const Matrix features = model_.represent(x);
      const Matrix m1 = nn::predict(spec.targets[kMu1], frozen_[kMu1].view(), features);
      const Matrix m0 = nn::predict(spec.targets[kMu0], frozen_[kMu0].view(), features);
      return column(m1 - m0);
    }
    case LearnerType::dr_learner:
    case LearnerType::ra_learner:
      return column(nn::predict(spec.targets[0], frozen_[0].view(), x));
  }
  return {};
}

FittedLearner train(LearnerKind kind, const data::CausalDataset& data, const TrainConfig& cfg, std::uint64_t seed,
                    const BatchObserver& observer) {
  cfg.validate();
  data.validate();
  require_both_arms(data);
  const auto rows = all_rows(data.size());

  if (!kind.is_direct()) {
    const auto spec = one_step_bank_spec(kind, data.dim(), data.outcome_type, cfg);
    const auto bd = bank_data(kind.type, data);
    const auto split_seed = derive_seed(seed, {0x5e});
    const auto [train_rows, val_rows] = data::stratified_holdout(data.t, rows, cfg.val_frac, split_seed);
    // Baseline and hyper share the initialisation seed stream per learner type.
    TargetBank bank(spec, derive_seed(seed, {0xb0, static_cast<std::uint64_t>(kind.type)}));
    auto history = fit_bank(bank, bd, train_rows, val_rows, cfg.loop(), derive_seed(seed, {0x100}), observer);
    return FittedLearner(kind, std::move(bank), std::move(history));
  }

  const bool dr = kind.type == LearnerType::dr_learner;
  auto nuisance = fit_nuisance(data, cfg, kind.mode, dr, derive_seed(seed, {0x4a}));

  const auto stage2 = pseudo_outcome_data(kind.type, data, nuisance);
  const auto [train_rows, val_rows] = data::stratified_holdout(data.t, rows, cfg.val_frac, derive_seed(seed, {0x5e}));
  TargetBank bank(stage2_bank_spec(data.dim(), cfg), derive_seed(seed, {0xb2}));
  auto history = fit_bank(bank, stage2, train_rows, val_rows, cfg.loop(), derive_seed(seed, {0x200}), observer);
  return FittedLearner(kind, std::move(bank), std::move(history), std::move(nuisance));
}

}  // namespace hyperite::learners
