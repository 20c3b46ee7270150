#include "hyperite/optim.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace hyperite::optim {

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment lengths differ");
  }
  if (!(state.learning_rate > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  using Array = Eigen::Map<Eigen::ArrayXd>;
  const Eigen::Map<const Eigen::ArrayXd> g(grads.data(), static_cast<Eigen::Index>(grads.size()));
  if (!g.allFinite()) throw std::domain_error("adam_step: non-finite gradient");
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double lr = state.learning_rate;
  const auto n = static_cast<Eigen::Index>(params.size());
  Array m(state.m.data(), n);
  Array v(state.v.data(), n);
  Array p(params.data(), n);
  m = state.beta1 * m + (1.0 - state.beta1) * g;
  v = state.beta2 * v + (1.0 - state.beta2) * g.square();
  p *= 1.0 - lr * state.weight_decay;
  p -= (lr / c1) * m / ((v / c2).sqrt() + state.epsilon);
}

bool EarlyStopController::record(double val_loss) {
  if (!std::isfinite(val_loss)) throw std::domain_error("early stopping: non-finite validation loss");
  ++seen_;
  if (val_loss < best_) {
    best_ = val_loss;
    since_ = 0;
    best_update_ = seen_;
    return true;
  }
  ++since_;
  return false;
}

Decision EarlyStopController::update(double val_loss, std::span<const double> weights) {
  return update_with(val_loss, [&] { return std::vector<double>(weights.begin(), weights.end()); });
}

}  // namespace hyperite::optim
