#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace hyperite::optim {

// Adam with decoupled weight decay (AdamW ordering: decay first, then the
// bias-corrected adaptive step).
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;

  AdamState() = default;
  AdamState(std::size_t n, double lr, double wd) : m(n, 0.0), v(n, 0.0), learning_rate(lr), weight_decay(wd) {}
};

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

enum class Decision { proceed, stop };

class EarlyStopController {
 public:
  explicit EarlyStopController(std::size_t patience) : patience_(patience) {}

  // Strict improvement resets the counter and snapshots `weights`.
  Decision update(double val_loss, std::span<const double> weights);

  // Same as update(), but the snapshot is only materialised on improvement.
  template <class SnapshotFn>
  Decision update_with(double val_loss, SnapshotFn&& snapshot) {
    if (record(val_loss)) {
      snapshot_ = snapshot();
      return Decision::proceed;
    }
    return since_ > patience_ ? Decision::stop : Decision::proceed;
  }

  std::size_t patience() const { return patience_; }
  double best_val_loss() const { return best_; }
  std::size_t steps_since_improvement() const { return since_; }
  std::size_t updates_seen() const { return seen_; }
  // 1-based index of the update call that produced the best snapshot.
  std::size_t best_update() const { return best_update_; }
  const std::vector<double>& best_weights() const { return snapshot_; }
  bool has_snapshot() const { return best_update_ > 0; }

 private:
  bool record(double val_loss);

  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t since_ = 0;
  std::size_t seen_ = 0;
  std::size_t best_update_ = 0;
  std::vector<double> snapshot_;
};

}  // namespace hyperite::optim
