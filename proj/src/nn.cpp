#include "hyperite/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "hyperite/rng.hpp"

namespace hyperite::nn {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using RowMap = Eigen::Map<const Eigen::RowVectorXd>;

ConstMap weight_of(std::span<const double> w, const LayerSlices& s) {
  return ConstMap(w.data() + s.weight.offset, static_cast<Eigen::Index>(s.weight.rows),
                  static_cast<Eigen::Index>(s.weight.cols));
}

RowMap bias_of(std::span<const double> w, const LayerSlices& s) {
  return RowMap(w.data() + s.bias.offset, static_cast<Eigen::Index>(s.bias.cols));
}

void apply_activation(Activation a, Matrix& m) {
  switch (a) {
    case Activation::identity:
      break;
    case Activation::relu:
      m = m.cwiseMax(0.0);
      break;
    case Activation::sigmoid:
      m = m.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
      break;
  }
}

// grad wrt pre-activation given grad wrt activation output.
Matrix activation_adjoint(Activation a, const Matrix& pre, const Matrix& act, const Matrix& grad) {
  switch (a) {
    case Activation::identity:
      return grad;
    case Activation::relu:
      return grad.array() * (pre.array() > 0.0).cast<double>();
    case Activation::sigmoid:
      return grad.array() * act.array() * (1.0 - act.array());
  }
  return grad;
}

void check_weights(const MlpSpec& spec, std::span<const double> weights) {
  const auto expected = parameter_count(spec);
  if (weights.size() != expected) {
    throw std::invalid_argument("weight vector has " + std::to_string(weights.size()) +
                                " entries, layout expects " + std::to_string(expected));
  }
}

}  // namespace

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw std::invalid_argument("MlpSpec needs at least 2 layer sizes");
  for (auto s : layer_sizes) {
    if (s == 0) throw std::invalid_argument("MlpSpec layer sizes must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("dropout_rate must lie in [0, 1)");
  }
  if (hidden_activation != Activation::relu) {
    throw std::invalid_argument("hidden activation must be relu");
  }
}

WeightLayout::WeightLayout(const MlpSpec& spec) {
  spec.validate();
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto in = spec.layer_sizes[l];
    const auto out = spec.layer_sizes[l + 1];
    LayerSlices s;
    s.weight = {offset, in, out};
    offset += in * out;
    s.bias = {offset, 1, out};
    offset += out;
    layers_.push_back(s);
  }
  total_size_ = offset;
}

std::size_t WeightLayout::fan_in_at(std::size_t index) const {
  for (const auto& s : layers_) {
    if (index < s.bias.offset + s.bias.size()) return s.weight.rows;
  }
  throw std::out_of_range("index outside weight layout");
}

bool WeightLayout::is_bias_at(std::size_t index) const {
  for (const auto& s : layers_) {
    if (index < s.weight.offset + s.weight.size()) return false;
    if (index < s.bias.offset + s.bias.size()) return true;
  }
  throw std::out_of_range("index outside weight layout");
}

WeightLayout build_layout(const MlpSpec& spec) { return WeightLayout(spec); }

std::size_t parameter_count(const MlpSpec& spec) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    n += (spec.layer_sizes[l] + 1) * spec.layer_sizes[l + 1];
  }
  return n;
}

WeightVector init_weights(const MlpSpec& spec, std::uint64_t seed) {
  const WeightLayout layout(spec);
  WeightVector w{std::vector<double>(layout.total_size(), 0.0)};
  Rng rng(derive_seed(seed, {0x1a17}));
  for (const auto& s : layout.layers()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(s.weight.rows));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < s.weight.size(); ++i) w.values[s.weight.offset + i] = dist(rng);
  }
  return w;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

ForwardResult forward(const MlpSpec& spec, std::span<const double> weights, const Matrix& x,
                      Mode mode, std::uint64_t seed) {
  check_weights(spec, weights);
  if (static_cast<std::size_t>(x.cols()) != spec.input_dim()) {
    throw std::invalid_argument("input has " + std::to_string(x.cols()) + " columns, network expects " +
                                std::to_string(spec.input_dim()));
  }
  if (!all_finite(weights)) throw std::invalid_argument("non-finite network weights");

  const WeightLayout layout(spec);
  const bool use_dropout = mode == Mode::train && spec.dropout_rate > 0.0;
  Rng rng(derive_seed(seed, {0xd209}));
  std::bernoulli_distribution keep(1.0 - spec.dropout_rate);
  const double scale = use_dropout ? 1.0 / (1.0 - spec.dropout_rate) : 1.0;

  ForwardResult r;
  r.cache.input = x;
  r.cache.mode = mode;
  const auto n_layers = spec.num_layers();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& s = layout.layers()[l];
    const Matrix& a_prev = l == 0 ? r.cache.input : r.cache.post[l - 1];
    Matrix z = a_prev * weight_of(weights, s);
    z.rowwise() += bias_of(weights, s);
    Matrix a = z;
    const bool hidden = l + 1 < n_layers;
    apply_activation(hidden ? spec.hidden_activation : spec.output_activation, a);
    if (hidden && use_dropout) {
      Matrix mask(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
      a.array() *= mask.array();
      r.cache.masks.push_back(std::move(mask));
    }
    r.cache.pre.push_back(std::move(z));
    r.cache.post.push_back(std::move(a));
  }
  r.output = r.cache.post.back();
  return r;
}

Matrix predict(const MlpSpec& spec, std::span<const double> weights, const Matrix& x) {
  return forward(spec, weights, x, Mode::eval, 0).output;
}

BackwardResult backward(const MlpSpec& spec, std::span<const double> weights,
                        const ForwardCache& cache, const Matrix& grad_output) {
  check_weights(spec, weights);
  const auto n_layers = spec.num_layers();
  if (cache.pre.size() != n_layers || cache.post.size() != n_layers) {
    throw std::invalid_argument("forward cache does not match network depth");
  }
  if (grad_output.rows() != cache.post.back().rows() || grad_output.cols() != cache.post.back().cols()) {
    throw std::invalid_argument("grad_output shape does not match network output");
  }
  const bool has_masks = !cache.masks.empty();
  if (has_masks && cache.masks.size() + 1 != n_layers) {
    throw std::invalid_argument("forward cache dropout masks do not match network depth");
  }

  const WeightLayout layout(spec);
  BackwardResult r;
  r.grad_weights.assign(layout.total_size(), 0.0);
  Matrix g = grad_output;
  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& s = layout.layers()[l];
    const bool hidden = l + 1 < n_layers;
    if (hidden && has_masks) g.array() *= cache.masks[l].array();
    // For hidden layers the cached post includes the mask; only its sign matters for relu.
    const Matrix dz = activation_adjoint(hidden ? spec.hidden_activation : spec.output_activation,
                                         cache.pre[l], cache.post[l], g);
    const Matrix& a_prev = l == 0 ? cache.input : cache.post[l - 1];
    Eigen::Map<Matrix> gw(r.grad_weights.data() + s.weight.offset, static_cast<Eigen::Index>(s.weight.rows),
                          static_cast<Eigen::Index>(s.weight.cols));
    gw.noalias() = a_prev.transpose() * dz;
    Eigen::Map<Eigen::RowVectorXd> gb(r.grad_weights.data() + s.bias.offset,
                                      static_cast<Eigen::Index>(s.bias.cols));
    gb = dz.colwise().sum();
    g = dz * weight_of(weights, s).transpose();
  }
  r.grad_input = std::move(g);
  return r;
}

LossResult mse_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("mse_loss: shape mismatch");
  }
  if (pred.size() == 0) throw std::invalid_argument("mse_loss: empty batch");
  const double n = static_cast<double>(pred.size());
  const Matrix diff = pred - target;
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

LossResult bce_loss(const Matrix& prob, const Matrix& target) {
  if (prob.rows() != target.rows() || prob.cols() != target.cols()) {
    throw std::invalid_argument("bce_loss: shape mismatch");
  }
  if (prob.size() == 0) throw std::invalid_argument("bce_loss: empty batch");
  const double n = static_cast<double>(prob.size());
  LossResult r;
  r.grad.resize(prob.rows(), prob.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < prob.size(); ++i) {
    const double p = std::clamp(prob.data()[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double y = target.data()[i];
    total -= y * std::log(p) + (1.0 - y) * std::log1p(-p);
    r.grad.data()[i] = (p - y) / (p * (1.0 - p) * n);
  }
  r.loss = total / n;
  return r;
}

Mlp::Mlp(MlpSpec spec, WeightVector weights) : spec_(std::move(spec)), weights_(std::move(weights)) {
  spec_.validate();
  check_weights(spec_, weights_.view());
}

}  // namespace hyperite::nn
