#pragma once

// Dense MLPs whose weights live outside the network object.
//
// Every function here takes the parameters as a flat span laid out by
// WeightLayout, so the same forward/backward code serves ordinary trainable
// networks and networks whose weights are produced by a hypernetwork.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace hyperite::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { identity, relu, sigmoid };
enum class Mode { train, eval };

struct MlpSpec {
  std::vector<std::size_t> layer_sizes;  // input dim first, output dim last
  Activation hidden_activation = Activation::relu;
  Activation output_activation = Activation::identity;
  double dropout_rate = 0.0;  // hidden layers only

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }

  // Throws std::invalid_argument when the spec is malformed.
  void validate() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct Slice {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

// Weight matrix is stored fan_in x fan_out, row-major; the bias is 1 x fan_out.
struct LayerSlices {
  Slice weight;
  Slice bias;
};

class WeightLayout {
 public:
  WeightLayout() = default;
  explicit WeightLayout(const MlpSpec& spec);

  const std::vector<LayerSlices>& layers() const { return layers_; }
  std::size_t total_size() const { return total_size_; }
  // Size of layer l's weights plus bias.
  std::size_t layer_size(std::size_t l) const {
    return layers_[l].weight.size() + layers_[l].bias.size();
  }
  // Fan-in of the layer that owns flat position `index`.
  std::size_t fan_in_at(std::size_t index) const;
  bool is_bias_at(std::size_t index) const;

 private:
  std::vector<LayerSlices> layers_;
  std::size_t total_size_ = 0;
};

WeightLayout build_layout(const MlpSpec& spec);
std::size_t parameter_count(const MlpSpec& spec);

struct WeightVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  std::span<const double> view() const { return values; }
  std::span<double> view() { return values; }
  bool conforms(const WeightLayout& layout) const { return values.size() == layout.total_size(); }
};

// He-style uniform bound sqrt(6 / fan_in) for every weight matrix, zero biases.
WeightVector init_weights(const MlpSpec& spec, std::uint64_t seed);

struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;    // affine outputs per layer
  std::vector<Matrix> post;   // after activation (and dropout for hidden layers)
  std::vector<Matrix> masks;  // inverted-dropout masks; empty in eval mode or p == 0
  Mode mode = Mode::eval;
};

struct ForwardResult {
  Matrix output;
  ForwardCache cache;
};

ForwardResult forward(const MlpSpec& spec, std::span<const double> weights, const Matrix& x,
                      Mode mode = Mode::eval, std::uint64_t seed = 0);

// Forward without keeping the cache.
Matrix predict(const MlpSpec& spec, std::span<const double> weights, const Matrix& x);

struct BackwardResult {
  std::vector<double> grad_weights;
  Matrix grad_input;
};

BackwardResult backward(const MlpSpec& spec, std::span<const double> weights,
                        const ForwardCache& cache, const Matrix& grad_output);

struct LossResult {
  double loss = 0.0;
  Matrix grad;
};

LossResult mse_loss(const Matrix& pred, const Matrix& target);

inline constexpr double kProbabilityClamp = 1e-7;
LossResult bce_loss(const Matrix& prob, const Matrix& target);

// Owns its weights; evaluates through the same functional path as above.
class Mlp {
 public:
  Mlp(MlpSpec spec, WeightVector weights);
  Mlp(MlpSpec spec, std::uint64_t seed) : Mlp(spec, init_weights(spec, seed)) {}

  const MlpSpec& spec() const { return spec_; }
  const WeightVector& weights() const { return weights_; }
  WeightVector& weights() { return weights_; }
  Matrix operator()(const Matrix& x) const { return predict(spec_, weights_.view(), x); }

 private:
  MlpSpec spec_;
  WeightVector weights_;
};

bool all_finite(std::span<const double> values);

}  // namespace hyperite::nn
