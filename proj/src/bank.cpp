#include "hyperite/bank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hyperite/optim.hpp"
#include "hyperite/rng.hpp"

namespace hyperite::learners {

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

bool passes(RowFilter f, int t) {
  switch (f) {
    case RowFilter::all: return true;
    case RowFilter::control: return t == 0;
    case RowFilter::treated: return t == 1;
  }
  return false;
}

nn::LossResult objective_loss(LossKind kind, const Matrix& pred, const Matrix& target) {
  return kind == LossKind::mse ? nn::mse_loss(pred, target) : nn::bce_loss(pred, target);
}

// Positions (within `rows`) selected by the objective, and their labels.
std::vector<std::size_t> select(const Objective& o, const BankData& data, const std::vector<std::size_t>& rows,
                                Matrix& labels) {
  std::vector<std::size_t> local;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (passes(o.rows, data.t[rows[j]])) local.push_back(j);
  }
  labels.resize(static_cast<Eigen::Index>(local.size()), 1);
  for (std::size_t i = 0; i < local.size(); ++i) {
    const auto r = rows[local[i]];
    labels(static_cast<Eigen::Index>(i), 0) = o.label == LabelSource::outcome ? data.y[r] : static_cast<double>(data.t[r]);
  }
  return local;
}

}  // namespace

void BankSpec::validate() const {
  if (targets.empty()) throw std::invalid_argument("bank needs at least one target network");
  const auto size = nn::parameter_count(targets.front());
  for (const auto& t : targets) {
    t.validate();
    if (nn::parameter_count(t) != size || t.layer_sizes != targets.front().layer_sizes) {
      throw std::invalid_argument("bank target networks must share one architecture");
    }
  }
  if (representation) {
    representation->validate();
    if (representation->output_dim() != targets.front().input_dim()) {
      throw std::invalid_argument("representation output does not match target input");
    }
  }
  if (objectives.empty()) throw std::invalid_argument("bank needs at least one objective");
  for (const auto& o : objectives) {
    if (o.target >= targets.size()) throw std::invalid_argument("objective refers to an unknown target");
  }
}

TargetBank::TargetBank(BankSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.mode == LearnerMode::hyper) {
    spec_.hypernet.n_targets = spec_.targets.size();
    hypernet_ = std::make_unique<hyper::Hypernet>(spec_.hypernet, spec_.targets.front(), derive_seed(seed, {0x4e}));
  } else {
    for (std::size_t k = 0; k < spec_.targets.size(); ++k) {
      direct_.push_back(nn::init_weights(spec_.targets[k], derive_seed(seed, {0x7a, k})));
    }
  }
  if (spec_.representation) phi_ = nn::init_weights(*spec_.representation, derive_seed(seed, {0xf1}));
}

TargetBank::TargetBank(const TargetBank& other)
    : spec_(other.spec_),
      hypernet_(other.hypernet_ ? std::make_unique<hyper::Hypernet>(*other.hypernet_) : nullptr),
      direct_(other.direct_),
      phi_(other.phi_) {}

TargetBank& TargetBank::operator=(const TargetBank& other) {
  if (this != &other) {
    TargetBank copy(other);
    *this = std::move(copy);
  }
  return *this;
}

TargetBank::~TargetBank() = default;

std::vector<std::span<double>> TargetBank::parameter_blocks() {
  std::vector<std::span<double>> blocks;
  if (hypernet_) {
    blocks.push_back(hypernet_->parameters());
  } else {
    for (auto& w : direct_) blocks.push_back(w.view());
  }
  if (spec_.representation) blocks.push_back(phi_.view());
  return blocks;
}

std::vector<std::span<const double>> TargetBank::parameter_blocks() const {
  auto blocks = const_cast<TargetBank*>(this)->parameter_blocks();
  return {blocks.begin(), blocks.end()};
}

std::vector<double> TargetBank::snapshot() const {
  std::vector<double> flat;
  for (auto b : parameter_blocks()) flat.insert(flat.end(), b.begin(), b.end());
  return flat;
}

void TargetBank::restore(std::span<const double> flat) {
  std::size_t offset = 0;
  auto blocks = parameter_blocks();
  std::size_t total = 0;
  for (auto b : blocks) total += b.size();
  if (flat.size() != total) throw std::invalid_argument("snapshot size does not match the bank");
  for (auto b : blocks) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), b.size(), b.begin());
    offset += b.size();
  }
}

void TargetBank::before_step() {
  if (hypernet_) hypernet_->refresh_spectral_state(1);
}

BankGradient TargetBank::loss_and_gradient(const BankData& data, const std::vector<std::size_t>& rows, nn::Mode mode,
                                           std::uint64_t seed) const {
  const Matrix xb = gather_rows(data.inputs, rows);
  std::optional<nn::ForwardResult> phi_pass;
  if (spec_.representation) phi_pass = nn::forward(*spec_.representation, phi_.view(), xb, mode, derive_seed(seed, {1}));
  const Matrix& features = phi_pass ? phi_pass->output : xb;

  const auto n_targets = spec_.targets.size();
  std::vector<std::optional<hyper::Generated>> generated(n_targets);
  std::vector<std::vector<double>> grad_targets(n_targets);
  Matrix grad_features;
  if (phi_pass) grad_features = Matrix::Zero(features.rows(), features.cols());

  BankGradient out;
  out.objective_rows.resize(spec_.objectives.size());
  for (std::size_t oi = 0; oi < spec_.objectives.size(); ++oi) {
    const auto& o = spec_.objectives[oi];
    Matrix labels;
    const auto local = select(o, data, rows, labels);
    if (local.empty()) continue;
    const auto k = o.target;
    std::span<const double> w;
    if (hypernet_) {
      if (!generated[k]) generated[k] = hypernet_->generate(k, mode, derive_seed(seed, {2, k}));
      w = generated[k]->weights.view();
    } else {
      w = direct_[k].view();
    }
    const Matrix inputs = gather_rows(features, local);
    const auto pass = nn::forward(spec_.targets[k], w, inputs, mode, derive_seed(seed, {3, oi}));
    const auto lr = objective_loss(o.loss, pass.output, labels);
    out.loss += lr.loss;
    auto back = nn::backward(spec_.targets[k], w, pass.cache, lr.grad);
    if (grad_targets[k].empty()) {
      grad_targets[k] = std::move(back.grad_weights);
    } else {
      for (std::size_t i = 0; i < grad_targets[k].size(); ++i) grad_targets[k][i] += back.grad_weights[i];
    }
    if (phi_pass) {
      for (std::size_t i = 0; i < local.size(); ++i) {
        grad_features.row(static_cast<Eigen::Index>(local[i])) += back.grad_input.row(static_cast<Eigen::Index>(i));
      }
    }
    out.objective_rows[oi].reserve(local.size());
    for (auto j : local) out.objective_rows[oi].push_back(rows[j]);
  }

  if (hypernet_) {
    std::vector<double> g(hypernet_->num_parameters(), 0.0);
    for (std::size_t k = 0; k < n_targets; ++k) {
      if (generated[k]) hypernet_->backprop_generated_into(generated[k]->cache, grad_targets[k], g);
    }
    out.blocks.push_back(std::move(g));
  } else {
    for (std::size_t k = 0; k < n_targets; ++k) {
      if (grad_targets[k].empty()) grad_targets[k].assign(direct_[k].size(), 0.0);
      out.blocks.push_back(std::move(grad_targets[k]));
    }
  }
  if (phi_pass) {
    out.blocks.push_back(nn::backward(*spec_.representation, phi_.view(), phi_pass->cache, grad_features).grad_weights);
  }
  return out;
}

double TargetBank::loss(const BankData& data, const std::vector<std::size_t>& rows) const {
  const Matrix xb = gather_rows(data.inputs, rows);
  const Matrix features = spec_.representation ? nn::predict(*spec_.representation, phi_.view(), xb) : xb;
  std::vector<std::optional<nn::WeightVector>> weights(spec_.targets.size());
  double total = 0.0;
  for (const auto& o : spec_.objectives) {
    Matrix labels;
    const auto local = select(o, data, rows, labels);
    if (local.empty()) continue;
    if (!weights[o.target]) weights[o.target] = target_weights(o.target);
    const Matrix pred = nn::predict(spec_.targets[o.target], weights[o.target]->view(), gather_rows(features, local));
    total += objective_loss(o.loss, pred, labels).loss;
  }
  return total;
}

nn::WeightVector TargetBank::target_weights(std::size_t k) const {
  if (k >= spec_.targets.size()) throw std::out_of_range("unknown target network");
  if (hypernet_) return hypernet_->generate(k, nn::Mode::eval, 0).weights;
  return direct_[k];
}

Matrix TargetBank::represent(const Matrix& inputs) const {
  if (!spec_.representation) return inputs;
  return nn::predict(*spec_.representation, phi_.view(), inputs);
}

TrainingHistory fit_bank(TargetBank& bank, const BankData& data, const std::vector<std::size_t>& train_rows,
                         const std::vector<std::size_t>& val_rows, const LoopConfig& cfg, std::uint64_t seed,
                         const BatchObserver& observer) {
  if (train_rows.empty() || val_rows.empty()) throw std::invalid_argument("training needs non-empty train and validation rows");
  if (cfg.batch_size == 0 || cfg.max_epochs == 0) throw std::invalid_argument("batch_size and max_epochs must be positive");

  std::vector<optim::AdamState> states;
  for (auto b : bank.parameter_blocks()) states.emplace_back(b.size(), cfg.learning_rate, cfg.weight_decay);
  optim::EarlyStopController stopper(cfg.patience);

  TrainingHistory h;
  h.initial_val_loss = bank.loss(data, val_rows);
  Rng rng(derive_seed(seed, {0x5f}));
  std::vector<std::size_t> order = train_rows;
  std::vector<std::size_t> batch;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const auto end = std::min(order.size(), start + cfg.batch_size);
      batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
      bank.before_step();
      const auto g = bank.loss_and_gradient(data, batch, nn::Mode::train, derive_seed(seed, {epoch, start}));
      if (!std::isfinite(g.loss)) throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch));
      if (observer) observer(epoch, g);
      auto blocks = bank.parameter_blocks();
      for (std::size_t i = 0; i < blocks.size(); ++i) optim::adam_step(states[i], blocks[i], g.blocks[i]);
      ++h.steps;
    }
    const double val = bank.loss(data, val_rows);
    if (!std::isfinite(val)) throw std::runtime_error("non-finite validation loss at epoch " + std::to_string(epoch));
    h.points.push_back({h.steps, val});
    h.epochs = epoch;
    if (stopper.update_with(val, [&] { return bank.snapshot(); }) == optim::Decision::stop) {
      h.stopped_early = true;
      break;
    }
  }
  bank.restore(stopper.best_weights());
  h.best_val_loss = stopper.best_val_loss();
  h.best_step = h.points[stopper.best_update() - 1].step;
  return h;
}

}  // namespace hyperite::learners
