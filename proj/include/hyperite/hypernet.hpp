#pragma once

// Hypernetwork that emits the flat weights of a target MLP.
//
// A hypernet owns one learnable embedding per target network (e.g. mu0, mu1,
// propensity) and a ReLU trunk whose output heads produce the target weights.
// Only the hypernet parameters are trainable; gradients computed on the
// generated weights are routed back through `backprop_generated`.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hyperite/nn.hpp"

namespace hyperite::hyper {

using nn::Matrix;
using nn::Vector;

enum class StrategyKind { generate_once, chunk_wise, layer_wise, split_head };

std::string to_string(StrategyKind kind);
StrategyKind parse_strategy(const std::string& name);

struct GenerationStrategy {
  StrategyKind kind = StrategyKind::generate_once;
  std::size_t n_chunks = 10;  // chunk_wise
  std::size_t n_heads = 2;    // split_head

  static GenerationStrategy generate_once() { return {}; }
  static GenerationStrategy chunk_wise(std::size_t n) { return {StrategyKind::chunk_wise, n, 2}; }
  static GenerationStrategy layer_wise() { return {StrategyKind::layer_wise, 10, 2}; }
  static GenerationStrategy split_head(std::size_t n) { return {StrategyKind::split_head, 10, n}; }

  void validate() const;
};

inline constexpr std::size_t kDiscarded = std::numeric_limits<std::size_t>::max();

// How trunk outputs map onto the flat target weights. Raw output r of pass p,
// head k, column j is r = (p * n_heads + k) * head_size + j.
struct HeadPlan {
  std::size_t passes = 1;
  std::size_t n_heads = 1;
  std::size_t head_size = 0;
  std::size_t aux_embeddings = 0;        // learnable chunk/layer embeddings
  std::vector<std::size_t> target_index;  // raw position -> flat target index or kDiscarded

  std::size_t raw_size() const { return passes * n_heads * head_size; }
  std::size_t discarded() const;
};

HeadPlan plan_heads(const GenerationStrategy& strategy, const nn::WeightLayout& target);

struct SpectralResult {
  Matrix normalized;
  Vector u;
  Vector v;
  double sigma = 1.0;
};

// Power-iteration estimate of the leading singular value; w is divided by it.
// Empty u/v are initialised deterministically. A zero matrix is returned
// unchanged with sigma = 1.
SpectralResult spectral_normalize(const Matrix& w, int n_power_iterations, Vector u = {}, Vector v = {});

using TargetId = std::size_t;

struct HypernetConfig {
  std::size_t n_targets = 2;
  std::size_t embedding_size = 8;
  std::vector<std::size_t> hidden{100, 100};
  GenerationStrategy strategy;
  double dropout_rate = 0.05;
  bool spectral_norm = true;
  int init_power_iterations = 300;
};

struct GenerationCache {
  TargetId target = 0;
  nn::Mode mode = nn::Mode::eval;
  Matrix input;                  // passes x trunk_in
  std::vector<Matrix> pre;       // per hidden layer
  std::vector<Matrix> post;      // after relu and dropout
  std::vector<Matrix> masks;     // empty in eval mode
  std::vector<double> sigma;     // per hidden layer (1 when spectral norm is off)
  std::vector<char> normalized;  // whether sigma was estimated for that layer
  std::vector<Vector> u, v;      // power-iteration vectors used for this pass
};

struct Generated {
  nn::WeightVector weights;
  GenerationCache cache;
};

class Hypernet {
 public:
  Hypernet(HypernetConfig config, const nn::MlpSpec& target_spec, std::uint64_t seed);

  const HypernetConfig& config() const { return config_; }
  const nn::WeightLayout& target_layout() const { return target_layout_; }
  const HeadPlan& plan() const { return plan_; }
  std::size_t trunk_input_dim() const;

  // All learnable values: [target embeddings | aux embeddings | trunk | heads].
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t num_parameters() const { return params_.size(); }
  // Target embeddings occupy [0, embeddings_size()); the rest is psi.
  std::size_t embeddings_size() const { return config_.n_targets * config_.embedding_size; }

  // One warm-started power iteration per trunk matrix; call once per optimizer step.
  void refresh_spectral_state(int iterations = 1);

  Generated generate(TargetId target, nn::Mode mode, std::uint64_t seed) const;

  // Returns the gradient over parameters() given d loss / d generated weights.
  std::vector<double> backprop_generated(const GenerationCache& cache, std::span<const double> grad_weights) const;
  // Accumulating variant: adds the gradient into `out` (length num_parameters()).
  void backprop_generated_into(const GenerationCache& cache, std::span<const double> grad_weights,
                               std::span<double> out) const;

 private:
  struct TrunkLayer {
    nn::Slice weight;
    nn::Slice bias;
  };

  Matrix trunk_weight(std::size_t layer) const;
  Matrix forward_hidden(const Matrix& input, nn::Mode mode, std::uint64_t seed, GenerationCache* cache) const;
  Matrix trunk_input(TargetId target) const;
  void init_heads(std::uint64_t seed);

  HypernetConfig config_;
  nn::WeightLayout target_layout_;
  HeadPlan plan_;
  std::vector<double> params_;
  std::size_t aux_offset_ = 0;
  std::vector<TrunkLayer> trunk_;
  std::vector<TrunkLayer> heads_;
  std::vector<Vector> u_, v_;
};

}  // namespace hyperite::hyper
