#include "hyperite/hypernet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hyperite/rng.hpp"

namespace hyperite::hyper {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

Vector unit_or_default(const Vector& x, Eigen::Index n) {
  if (x.size() == n) {
    const double norm = x.norm();
    if (norm > 0.0) return x / norm;
  }
  return Vector::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
}

void power_iterate(const Matrix& w, Vector& u, Vector& v, int iterations) {
  for (int i = 0; i < iterations; ++i) {
    Vector nv = w.transpose() * u;
    const double nv_norm = nv.norm();
    if (nv_norm == 0.0) return;
    v = nv / nv_norm;
    Vector nu = w * v;
    const double nu_norm = nu.norm();
    if (nu_norm == 0.0) return;
    u = nu / nu_norm;
  }
}

}  // namespace

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::generate_once: return "generate_once";
    case StrategyKind::chunk_wise: return "chunk_wise";
    case StrategyKind::layer_wise: return "layer_wise";
    case StrategyKind::split_head: return "split_head";
  }
  return "unknown";
}

StrategyKind parse_strategy(const std::string& name) {
  for (auto k : {StrategyKind::generate_once, StrategyKind::chunk_wise, StrategyKind::layer_wise,
                 StrategyKind::split_head}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown generation strategy '" + name + "'");
}

void GenerationStrategy::validate() const {
  if (kind == StrategyKind::chunk_wise && n_chunks < 2) throw std::invalid_argument("chunk_wise needs n_chunks >= 2");
  if (kind == StrategyKind::split_head && n_heads < 2) throw std::invalid_argument("split_head needs n_heads >= 2");
}

std::size_t HeadPlan::discarded() const {
  return static_cast<std::size_t>(std::count(target_index.begin(), target_index.end(), kDiscarded));
}

HeadPlan plan_heads(const GenerationStrategy& strategy, const nn::WeightLayout& target) {
  strategy.validate();
  const std::size_t total = target.total_size();
  if (total == 0) throw std::invalid_argument("target layout is empty");
  HeadPlan plan;
  switch (strategy.kind) {
    case StrategyKind::generate_once:
      plan.head_size = total;
      break;
    case StrategyKind::chunk_wise: {
      plan.passes = strategy.n_chunks;
      plan.head_size = ceil_div(total, strategy.n_chunks);
      plan.aux_embeddings = strategy.n_chunks;
      if ((plan.passes - 1) * plan.head_size >= total) {
        throw std::invalid_argument("chunk_wise: " + std::to_string(strategy.n_chunks) + " chunks leave an empty chunk for " +
                                    std::to_string(total) + " weights");
      }
      break;
    }
    case StrategyKind::layer_wise: {
      plan.passes = target.layers().size();
      for (std::size_t l = 0; l < plan.passes; ++l) plan.head_size = std::max(plan.head_size, target.layer_size(l));
      plan.aux_embeddings = plan.passes;
      break;
    }
    case StrategyKind::split_head: {
      plan.n_heads = strategy.n_heads;
      plan.head_size = ceil_div(total, strategy.n_heads);
      if ((plan.n_heads - 1) * plan.head_size >= total) {
        throw std::invalid_argument("split_head: " + std::to_string(strategy.n_heads) + " heads leave an empty head for " +
                                    std::to_string(total) + " weights");
      }
      break;
    }
  }
  plan.target_index.assign(plan.raw_size(), kDiscarded);
  if (strategy.kind == StrategyKind::layer_wise) {
    for (std::size_t l = 0; l < plan.passes; ++l) {
      const auto offset = target.layers()[l].weight.offset;
      for (std::size_t j = 0; j < target.layer_size(l); ++j) plan.target_index[l * plan.head_size + j] = offset + j;
    }
  } else {
    for (std::size_t r = 0; r < std::min(total, plan.raw_size()); ++r) plan.target_index[r] = r;
  }
  return plan;
}

SpectralResult spectral_normalize(const Matrix& w, int n_power_iterations, Vector u, Vector v) {
  if (n_power_iterations < 1) throw std::invalid_argument("spectral_normalize needs at least one power iteration");
  SpectralResult r;
  r.u = unit_or_default(u, w.rows());
  r.v = unit_or_default(v, w.cols());
  if (w.size() == 0 || w.cwiseAbs().maxCoeff() == 0.0) {
    r.normalized = w;
    r.sigma = 1.0;
    return r;
  }
  power_iterate(w, r.u, r.v, n_power_iterations);
  r.sigma = r.u.dot(w * r.v);
  if (!(r.sigma > 0.0)) r.sigma = 1.0;
  r.normalized = w / r.sigma;
  return r;
}

Hypernet::Hypernet(HypernetConfig config, const nn::MlpSpec& target_spec, std::uint64_t seed)
    : config_(std::move(config)), target_layout_(target_spec) {
  if (config_.n_targets == 0) throw std::invalid_argument("hypernet needs at least one target");
  if (config_.embedding_size == 0) throw std::invalid_argument("embedding_size must be positive");
  if (config_.hidden.empty()) throw std::invalid_argument("hypernet trunk needs at least one hidden layer");
  if (!(config_.dropout_rate >= 0.0 && config_.dropout_rate < 1.0)) {
    throw std::invalid_argument("hypernet dropout must lie in [0, 1)");
  }
  plan_ = plan_heads(config_.strategy, target_layout_);

  std::size_t offset = embeddings_size();
  aux_offset_ = offset;
  offset += plan_.aux_embeddings * config_.embedding_size;
  std::size_t in = trunk_input_dim();
  for (auto h : config_.hidden) {
    if (h == 0) throw std::invalid_argument("hypernet hidden sizes must be positive");
    TrunkLayer layer;
    layer.weight = {offset, in, h};
    offset += in * h;
    layer.bias = {offset, 1, h};
    offset += h;
    trunk_.push_back(layer);
    in = h;
  }
  for (std::size_t k = 0; k < plan_.n_heads; ++k) {
    TrunkLayer head;
    head.weight = {offset, in, plan_.head_size};
    offset += in * plan_.head_size;
    head.bias = {offset, 1, plan_.head_size};
    offset += plan_.head_size;
    heads_.push_back(head);
  }
  params_.assign(offset, 0.0);

  Rng rng(derive_seed(seed, {0x4e7}));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < aux_offset_ + plan_.aux_embeddings * config_.embedding_size; ++i) params_[i] = normal(rng);
  for (const auto& layer : trunk_) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.rows));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < layer.weight.size(); ++i) params_[layer.weight.offset + i] = dist(rng);
  }
  for (const auto& layer : trunk_) {
    Vector u(static_cast<Eigen::Index>(layer.weight.rows));
    Vector v(static_cast<Eigen::Index>(layer.weight.cols));
    for (auto& x : u) x = normal(rng);
    for (auto& x : v) x = normal(rng);
    u_.push_back(u.normalized());
    v_.push_back(v.normalized());
  }
  if (config_.spectral_norm) refresh_spectral_state(config_.init_power_iterations);
  init_heads(derive_seed(seed, {0x4ead}));
}

std::size_t Hypernet::trunk_input_dim() const {
  return plan_.aux_embeddings > 0 ? 2 * config_.embedding_size : config_.embedding_size;
}

// Head columns are scaled so that, at initialisation, every generated weight has
// the variance a fan-in initialised target layer would have (2 / fan_in), and
// generated biases start at zero.
void Hypernet::init_heads(std::uint64_t seed) {
  double mean_sq = 0.0;
  for (TargetId t = 0; t < config_.n_targets; ++t) {
    const Matrix h = forward_hidden(trunk_input(t), nn::Mode::eval, 0, nullptr);
    mean_sq += h.rowwise().squaredNorm().mean();
  }
  mean_sq /= static_cast<double>(config_.n_targets);
  if (!(mean_sq > 0.0)) mean_sq = 1.0;

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    const auto& head = heads_[k];
    for (std::size_t j = 0; j < plan_.head_size; ++j) {
      double var = 0.0;
      std::size_t used = 0;
      for (std::size_t p = 0; p < plan_.passes; ++p) {
        const auto idx = plan_.target_index[(p * plan_.n_heads + k) * plan_.head_size + j];
        if (idx == kDiscarded) continue;
        ++used;
        if (!target_layout_.is_bias_at(idx)) var += 2.0 / static_cast<double>(target_layout_.fan_in_at(idx));
      }
      if (used > 0) var /= static_cast<double>(used);
      const double bound = std::sqrt(3.0 * var / mean_sq);
      for (std::size_t i = 0; i < head.weight.rows; ++i) {
        params_[head.weight.offset + i * head.weight.cols + j] = bound * unit(rng);
      }
    }
  }
}

Matrix Hypernet::trunk_weight(std::size_t layer) const {
  const auto& s = trunk_[layer].weight;
  return Eigen::Map<const Matrix>(params_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                                  static_cast<Eigen::Index>(s.cols));
}

void Hypernet::refresh_spectral_state(int iterations) {
  if (!config_.spectral_norm) return;
  for (std::size_t l = 0; l < trunk_.size(); ++l) power_iterate(trunk_weight(l), u_[l], v_[l], iterations);
}

Matrix Hypernet::trunk_input(TargetId target) const {
  if (target >= config_.n_targets) {
    throw std::out_of_range("target id " + std::to_string(target) + " outside embedding table of " +
                            std::to_string(config_.n_targets));
  }
  const auto e = static_cast<Eigen::Index>(config_.embedding_size);
  const auto passes = static_cast<Eigen::Index>(plan_.passes);
  Matrix z(passes, static_cast<Eigen::Index>(trunk_input_dim()));
  const Eigen::Map<const Eigen::RowVectorXd> emb(params_.data() + target * config_.embedding_size, e);
  for (Eigen::Index p = 0; p < passes; ++p) {
    z.row(p).head(e) = emb;
    if (plan_.aux_embeddings > 0) {
      z.row(p).tail(e) = Eigen::Map<const Eigen::RowVectorXd>(
          params_.data() + aux_offset_ + static_cast<std::size_t>(p) * config_.embedding_size, e);
    }
  }
  return z;
}

Matrix Hypernet::forward_hidden(const Matrix& input, nn::Mode mode, std::uint64_t seed, GenerationCache* cache) const {
  const bool use_dropout = mode == nn::Mode::train && config_.dropout_rate > 0.0;
  Rng rng(derive_seed(seed, {0xd40f}));
  std::bernoulli_distribution keep(1.0 - config_.dropout_rate);
  const double scale = use_dropout ? 1.0 / (1.0 - config_.dropout_rate) : 1.0;

  Matrix a = input;
  for (std::size_t l = 0; l < trunk_.size(); ++l) {
    const Matrix w = trunk_weight(l);
    double sigma = 1.0;
    bool normalized = false;
    if (config_.spectral_norm) {
      sigma = u_[l].dot(w * v_[l]);
      normalized = sigma > 0.0;
      if (!normalized) sigma = 1.0;
    }
    const auto& b = trunk_[l].bias;
    Matrix z = a * w;
    if (normalized) z /= sigma;
    z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(params_.data() + b.offset, static_cast<Eigen::Index>(b.cols));
    a = z.cwiseMax(0.0);
    if (use_dropout) {
      Matrix mask(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
      a.array() *= mask.array();
      if (cache) cache->masks.push_back(std::move(mask));
    }
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(a);
      cache->sigma.push_back(sigma);
      cache->normalized.push_back(normalized ? 1 : 0);
      cache->u.push_back(u_[l]);
      cache->v.push_back(v_[l]);
    }
  }
  return a;
}

Generated Hypernet::generate(TargetId target, nn::Mode mode, std::uint64_t seed) const {
  Generated g;
  g.cache.target = target;
  g.cache.mode = mode;
  g.cache.input = trunk_input(target);
  const Matrix h = forward_hidden(g.cache.input, mode, seed, &g.cache);

  g.weights.values.assign(target_layout_.total_size(), 0.0);
  const auto hs = static_cast<Eigen::Index>(plan_.head_size);
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    const auto& head = heads_[k];
    const Eigen::Map<const Matrix> w(params_.data() + head.weight.offset, static_cast<Eigen::Index>(head.weight.rows), hs);
    Matrix out = h * w;
    out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(params_.data() + head.bias.offset, hs);
    for (std::size_t p = 0; p < plan_.passes; ++p) {
      const std::size_t base = (p * plan_.n_heads + k) * plan_.head_size;
      for (std::size_t j = 0; j < plan_.head_size; ++j) {
        const auto idx = plan_.target_index[base + j];
        if (idx != kDiscarded) g.weights.values[idx] = out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j));
      }
    }
  }
  if (!nn::all_finite(g.weights.view())) throw std::runtime_error("hypernet generated non-finite weights");
  return g;
}

std::vector<double> Hypernet::backprop_generated(const GenerationCache& cache, std::span<const double> grad_weights) const {
  std::vector<double> grad(params_.size(), 0.0);
  backprop_generated_into(cache, grad_weights, grad);
  return grad;
}

void Hypernet::backprop_generated_into(const GenerationCache& cache, std::span<const double> grad_weights,
                                       std::span<double> grad) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer does not match hypernet parameters");
  if (grad_weights.size() != target_layout_.total_size()) {
    throw std::invalid_argument("gradient length does not match the target layout");
  }
  if (cache.post.size() != trunk_.size() || cache.input.rows() != static_cast<Eigen::Index>(plan_.passes) ||
      cache.target >= config_.n_targets) {
    throw std::invalid_argument("generation cache does not belong to this hypernet");
  }
  const Matrix& h = cache.post.back();
  const auto passes = static_cast<Eigen::Index>(plan_.passes);
  const auto hs = static_cast<Eigen::Index>(plan_.head_size);

  Matrix g_h = Matrix::Zero(h.rows(), h.cols());
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    const auto& head = heads_[k];
    Matrix g_out = Matrix::Zero(passes, hs);
    for (std::size_t p = 0; p < plan_.passes; ++p) {
      const std::size_t base = (p * plan_.n_heads + k) * plan_.head_size;
      for (std::size_t j = 0; j < plan_.head_size; ++j) {
        const auto idx = plan_.target_index[base + j];
        if (idx != kDiscarded) g_out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(j)) = grad_weights[idx];
      }
    }
    const auto rows = static_cast<Eigen::Index>(head.weight.rows);
    Eigen::Map<Matrix>(grad.data() + head.weight.offset, rows, hs).noalias() += h.transpose() * g_out;
    Eigen::Map<Eigen::RowVectorXd>(grad.data() + head.bias.offset, hs) += g_out.colwise().sum();
    const Eigen::Map<const Matrix> w(params_.data() + head.weight.offset, rows, hs);
    g_h.noalias() += g_out * w.transpose();
  }

  Matrix g = std::move(g_h);
  for (std::size_t l = trunk_.size(); l-- > 0;) {
    const auto& layer = trunk_[l];
    if (!cache.masks.empty()) g.array() *= cache.masks[l].array();
    const Matrix dz = g.array() * (cache.pre[l].array() > 0.0).cast<double>();
    const Matrix& a_prev = l == 0 ? cache.input : cache.post[l - 1];
    const double sigma = cache.sigma[l];
    const Matrix w = trunk_weight(l);
    const auto rows = static_cast<Eigen::Index>(layer.weight.rows);
    const auto cols = static_cast<Eigen::Index>(layer.weight.cols);
    // Gradient wrt the normalised matrix W / sigma.
    const Matrix g_wn = a_prev.transpose() * dz;
    Eigen::Map<Matrix> g_w(grad.data() + layer.weight.offset, rows, cols);
    if (cache.normalized[l]) {
      // sigma = u^T W v with u, v held fixed: dL/dW = G / sigma - <G, W> / sigma^2 * u v^T.
      const double inner = (g_wn.array() * w.array()).sum();
      g_w += g_wn / sigma - (inner / (sigma * sigma)) * (cache.u[l] * cache.v[l].transpose());
    } else {
      g_w += g_wn;
    }
    Eigen::Map<Eigen::RowVectorXd>(grad.data() + layer.bias.offset, cols) += dz.colwise().sum();
    g = dz * (w.transpose() / sigma);
  }

  const auto e = static_cast<Eigen::Index>(config_.embedding_size);
  Eigen::Map<Eigen::RowVectorXd> g_emb(grad.data() + cache.target * config_.embedding_size, e);
  g_emb += g.leftCols(e).colwise().sum();
  if (plan_.aux_embeddings > 0) {
    for (Eigen::Index p = 0; p < passes; ++p) {
      Eigen::Map<Eigen::RowVectorXd>(grad.data() + aux_offset_ + static_cast<std::size_t>(p) * config_.embedding_size, e) +=
          g.row(p).tail(e);
    }
  }
}

}  // namespace hyperite::hyper
