#include "hyperite/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

#include "hyperite/rng.hpp"

namespace hyperite::gradcheck {

namespace {

using nn::Matrix;

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Central differences of f over every entry of x (restored afterwards).
std::vector<double> numeric_gradient(std::span<double> x, const std::function<double()>& f, double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f();
    x[i] = saved - step;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double hypernet_loss(const hyper::Hypernet& net, const nn::MlpSpec& target, const Matrix& x, const Matrix& y,
                     std::uint64_t seed) {
  double total = 0.0;
  for (std::size_t k = 0; k < net.config().n_targets; ++k) {
    const auto g = net.generate(k, nn::Mode::train, derive_seed(seed, {k}));
    total += nn::mse_loss(nn::predict(target, g.weights.view(), x), y).loss;
  }
  return total;
}

}  // namespace

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw std::invalid_argument("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nb += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

double check_mlp(const nn::MlpSpec& spec, std::uint64_t seed, double step) {
  Rng rng(seed);
  auto w = nn::init_weights(spec, derive_seed(seed, {1}));
  for (std::size_t i = 0; i < w.size(); ++i) {
    w.values[i] += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  }
  const auto n = static_cast<Eigen::Index>(4);
  const Matrix x = random_matrix(rng, n, static_cast<Eigen::Index>(spec.input_dim()));
  const Matrix y = random_matrix(rng, n, static_cast<Eigen::Index>(spec.output_dim()), 0.05, 0.95);
  const auto loss_of = [&](const Matrix& pred) {
    return spec.output_activation == nn::Activation::sigmoid ? nn::bce_loss(pred, y) : nn::mse_loss(pred, y);
  };
  const std::uint64_t drop_seed = derive_seed(seed, {2});
  const auto pass = nn::forward(spec, w.view(), x, nn::Mode::train, drop_seed);
  const auto analytic = nn::backward(spec, w.view(), pass.cache, loss_of(pass.output).grad).grad_weights;
  const auto numeric = numeric_gradient(
      w.view(), [&] { return loss_of(nn::forward(spec, w.view(), x, nn::Mode::train, drop_seed).output).loss; }, step);
  return relative_error(analytic, numeric);
}

double check_mse(std::uint64_t seed, double step) {
  Rng rng(seed);
  Matrix pred = random_matrix(rng, 6, 2);
  const Matrix y = random_matrix(rng, 6, 2);
  const auto analytic = nn::mse_loss(pred, y).grad;
  const auto numeric =
      numeric_gradient({pred.data(), static_cast<std::size_t>(pred.size())}, [&] { return nn::mse_loss(pred, y).loss; }, step);
  return relative_error({analytic.data(), static_cast<std::size_t>(analytic.size())}, numeric);
}

double check_bce(std::uint64_t seed, double step) {
  Rng rng(seed);
  Matrix prob = random_matrix(rng, 6, 1, 0.1, 0.9);
  Matrix y(6, 1);
  for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, 0) = static_cast<double>(i % 2);
  const auto analytic = nn::bce_loss(prob, y).grad;
  const auto numeric = numeric_gradient({prob.data(), static_cast<std::size_t>(prob.size())},
                                        [&] { return nn::bce_loss(prob, y).loss; }, step);
  return relative_error({analytic.data(), static_cast<std::size_t>(analytic.size())}, numeric);
}

HypernetCase random_hypernet_case(std::uint64_t seed, hyper::StrategyKind kind, bool spectral_norm) {
  Rng rng(seed);
  const auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  HypernetCase c;
  c.embedding_size = pick(1, 4);
  c.trunk_hidden = {pick(2, 8)};
  if (pick(0, 1) == 1) c.trunk_hidden.push_back(pick(2, 8));
  c.target_layers = {pick(1, 3), pick(1, 4), 1};
  c.spectral_norm = spectral_norm;
  c.n_targets = pick(1, 3);
  switch (kind) {
    case hyper::StrategyKind::generate_once: c.strategy = hyper::GenerationStrategy::generate_once(); break;
    case hyper::StrategyKind::chunk_wise: c.strategy = hyper::GenerationStrategy::chunk_wise(pick(2, 4)); break;
    case hyper::StrategyKind::layer_wise: c.strategy = hyper::GenerationStrategy::layer_wise(); break;
    case hyper::StrategyKind::split_head: c.strategy = hyper::GenerationStrategy::split_head(pick(2, 3)); break;
  }
  // Tiny targets cannot host many chunks or heads; shrink until every one is non-empty.
  const nn::WeightLayout layout(nn::MlpSpec{c.target_layers});
  for (;;) {
    try {
      hyper::plan_heads(c.strategy, layout);
      return c;
    } catch (const std::invalid_argument&) {
      auto& n = kind == hyper::StrategyKind::chunk_wise ? c.strategy.n_chunks : c.strategy.n_heads;
      if (n <= 1) throw;
      --n;
    }
  }
}

HypernetErrors check_hypernet(const HypernetCase& c, std::uint64_t seed, double step, bool inject_adjoint_error) {
  const nn::MlpSpec target{c.target_layers};
  hyper::HypernetConfig cfg;
  cfg.n_targets = c.n_targets;
  cfg.embedding_size = c.embedding_size;
  cfg.hidden = c.trunk_hidden;
  cfg.strategy = c.strategy;
  cfg.spectral_norm = c.spectral_norm;
  hyper::Hypernet net(cfg, target, derive_seed(seed, {0x11}));
  const std::vector<double> initial(net.parameters().begin(), net.parameters().end());

  Rng rng(derive_seed(seed, {0x22}));
  const auto rows = static_cast<Eigen::Index>(c.rows);
  const Matrix x = random_matrix(rng, rows, static_cast<Eigen::Index>(target.input_dim()));
  const Matrix y = random_matrix(rng, rows, 1);
  const std::uint64_t drop_seed = derive_seed(seed, {0x33});

  // Move away from the zero-bias initial state, and redraw while any ReLU input
  // sits close enough to its kink for a central difference to straddle it.
  std::uniform_real_distribution<double> jitter(-0.2, 0.2);
  std::vector<double> analytic;
  for (int attempt = 0;; ++attempt) {
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i] = initial[i] + jitter(rng);
    net.refresh_spectral_state(5);

    analytic.assign(net.num_parameters(), 0.0);
    double margin = std::numeric_limits<double>::infinity();
    const auto closest = [&](const std::vector<Matrix>& pre, std::size_t count) {
      for (std::size_t l = 0; l < count; ++l) margin = std::min(margin, pre[l].cwiseAbs().minCoeff());
    };
    for (std::size_t k = 0; k < c.n_targets; ++k) {
      const auto g = net.generate(k, nn::Mode::train, derive_seed(drop_seed, {k}));
      const auto pass = nn::forward(target, g.weights.view(), x);
      const auto back = nn::backward(target, g.weights.view(), pass.cache, nn::mse_loss(pass.output, y).grad);
      net.backprop_generated_into(g.cache, back.grad_weights, analytic);
      closest(g.cache.pre, g.cache.pre.size());
      closest(pass.cache.pre, target.num_layers() - 1);
    }
    if (margin > 1e3 * step || attempt == 50) break;
  }
  if (inject_adjoint_error) {
    double norm = 0.0;
    for (double v : analytic) norm += v * v;
    analytic.back() += 1e-2 * (std::sqrt(norm) + 1.0);
  }

  const auto numeric = numeric_gradient(net.parameters(), [&] { return hypernet_loss(net, target, x, y, drop_seed); }, step);
  const auto e = net.embeddings_size();
  HypernetErrors out;
  out.embeddings = relative_error(std::span<const double>(analytic).first(e), std::span<const double>(numeric).first(e));
  out.psi = relative_error(std::span<const double>(analytic).subspan(e), std::span<const double>(numeric).subspan(e));
  return out;
}

bool Report::passed() const {
  return std::all_of(suites.begin(), suites.end(), [](const auto& s) { return s.passed(); });
}

std::string Report::format() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-34s %6s %14s %10s  %s\n", "suite", "cases", "worst rel err", "tolerance", "status");
  out << line;
  for (const auto& s : suites) {
    std::snprintf(line, sizeof(line), "%-34s %6zu %14.3e %10.1e  %s\n", s.name.c_str(), s.cases, s.worst_error,
                  s.tolerance, s.passed() ? "ok" : "FAIL");
    out << line;
  }
  return out.str();
}

Report run_all(const Options& opts) {
  Report report;
  Rng rng(opts.seed);
  const auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };

  SuiteResult mlp{"nn/backward", 0, 0.0, opts.mlp_tolerance};
  for (std::size_t i = 0; i < opts.draws; ++i) {
    nn::MlpSpec spec;
    const auto layers = pick(1, 4);
    spec.layer_sizes.push_back(pick(1, 5));
    for (std::size_t l = 1; l < layers; ++l) spec.layer_sizes.push_back(pick(1, 6));
    spec.layer_sizes.push_back(pick(1, 2));
    if (i % 3 == 1) spec.output_activation = nn::Activation::sigmoid;
    if (i % 4 == 2) spec.dropout_rate = 0.2;
    mlp.worst_error = std::max(mlp.worst_error, check_mlp(spec, derive_seed(opts.seed, {0x100, i}), opts.step));
    ++mlp.cases;
  }
  report.suites.push_back(mlp);

  SuiteResult mse{"nn/mse_loss", 0, 0.0, opts.loss_tolerance};
  SuiteResult bce{"nn/bce_loss", 0, 0.0, opts.loss_tolerance};
  for (std::size_t i = 0; i < opts.draws; ++i) {
    mse.worst_error = std::max(mse.worst_error, check_mse(derive_seed(opts.seed, {0x200, i}), opts.step));
    bce.worst_error = std::max(bce.worst_error, check_bce(derive_seed(opts.seed, {0x300, i}), opts.step));
    ++mse.cases;
    ++bce.cases;
  }
  report.suites.push_back(mse);
  report.suites.push_back(bce);

  const std::size_t per_row = std::max<std::size_t>(1, opts.draws / 4);
  for (auto kind : {hyper::StrategyKind::generate_once, hyper::StrategyKind::chunk_wise, hyper::StrategyKind::layer_wise,
                    hyper::StrategyKind::split_head}) {
    for (bool sn : {false, true}) {
      SuiteResult s{"hypernet/" + hyper::to_string(kind) + "/sn_" + (sn ? "on" : "off"), 0, 0.0, opts.hypernet_tolerance};
      for (std::size_t i = 0; i < per_row; ++i) {
        const auto seed = derive_seed(opts.seed, {0x400, static_cast<std::uint64_t>(kind), sn ? 1u : 0u, i});
        const auto e = check_hypernet(random_hypernet_case(seed, kind, sn), seed, opts.step, opts.inject_adjoint_error);
        s.worst_error = std::max({s.worst_error, e.psi, e.embeddings});
        ++s.cases;
      }
      report.suites.push_back(s);
    }
  }
  return report;
}

}  // namespace hyperite::gradcheck
