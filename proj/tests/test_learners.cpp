#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "hyperite/learners.hpp"
#include "hyperite/optim.hpp"
#include "oracles.hpp"

using namespace hyperite;
using namespace hyperite::learners;

namespace {

TrainConfig quick(std::size_t epochs = 3) {
  TrainConfig c;
  c.max_epochs = epochs;
  c.hidden_width = 16;
  c.hyper.hidden = {16, 16};
  c.folds = 3;
  return c;
}

data::CausalDataset small_data(std::size_t n, std::uint64_t seed, double confounding = 0.5) {
  data::DgpConfig cfg;
  cfg.n = n;
  cfg.d = 4;
  cfg.confounding = confounding;
  return data::generate_synthetic(cfg, seed);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), 0);
  return r;
}

const LearnerType kTypes[] = {LearnerType::s_learner, LearnerType::t_learner, LearnerType::dr_learner,
                              LearnerType::ra_learner, LearnerType::tarnet};

}  // namespace

TEST_CASE("propensity clipping") {
  CHECK(clip_propensity(0.5) == 0.5);
  CHECK(clip_propensity(0.0) == 0.01);
  CHECK(clip_propensity(0.999) == doctest::Approx(0.99));
  CHECK(clip_propensity(0.3, 0.4) == 0.4);
}

TEST_CASE("pseudo-outcome examples") {
  CHECK(pseudo_outcome_dr(1, 1, 0, 0.5, 0.5) == doctest::Approx(1.5));
  CHECK(pseudo_outcome_dr(0.7, 1, 0.2, 0.7, 0.3) == doctest::Approx(0.5));
  CHECK(pseudo_outcome_dr(0.2, 0, 0.2, 0.9, 0.6) == doctest::Approx(0.7));
  CHECK(pseudo_outcome_ra(1, 1, 0.2, 9) == doctest::Approx(0.8));
  CHECK(pseudo_outcome_ra(3, 0, 0.2, 3) == 0.0);
}

TEST_CASE("pseudo-outcomes match the closed forms on random inputs") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.01, 0.99);
  for (int i = 0; i < 2000; ++i) {
    const double y = n(rng), m0 = n(rng), m1 = n(rng), p = u(rng);
    const int t = static_cast<int>(rng() % 2);
    CHECK(pseudo_outcome_dr(y, t, m0, m1, p) == doctest::Approx(oracle::dr_pseudo(y, t, m0, m1, p)).epsilon(1e-12));
    CHECK(pseudo_outcome_ra(y, t, m0, m1) == doctest::Approx(oracle::ra_pseudo(y, t, m0, m1)).epsilon(1e-12));
    // Zero residual leaves exactly the plug-in difference.
    CHECK(pseudo_outcome_dr(t ? m1 : m0, t, m0, m1, p) == doctest::Approx(m1 - m0).epsilon(1e-12));
  }
}

TEST_CASE("RA pseudo-outcome is unbiased with oracle nuisances") {
  data::DgpConfig cfg;
  cfg.n = 20000;
  cfg.d = 3;
  cfg.noise_sd = 1.0;
  const auto d = data::generate_synthetic(cfg, 2);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double r = pseudo_outcome_ra(d.y[i], d.t[i], (*d.mu0)[i], (*d.mu1)[i]) - ((*d.mu1)[i] - (*d.mu0)[i]);
    sum += r;
    sq += r * r;
  }
  const double n = static_cast<double>(d.size());
  const double mean = sum / n;
  const double se = std::sqrt(sq / n - mean * mean) / std::sqrt(n);
  CHECK(std::abs(mean) < 4.0 * se);
}

TEST_CASE("learner labels") {
  for (auto t : kTypes) {
    for (auto m : {LearnerMode::baseline, LearnerMode::hyper}) {
      const LearnerKind k{t, m};
      CHECK(LearnerKind::parse(k.label()) == k);
    }
  }
  CHECK_THROWS(LearnerKind::parse("x_learner/hyper"));
  CHECK_THROWS(LearnerKind::parse("t_learner/sometimes"));
  CHECK(default_embedding_size(LearnerType::s_learner) == 1);
  CHECK(default_embedding_size(LearnerType::t_learner) == 8);
  CHECK(default_embedding_size(LearnerType::tarnet) == 8);
  CHECK(default_embedding_size(LearnerType::ra_learner) == 8);
  CHECK(default_embedding_size(LearnerType::dr_learner) == 16);
}

TEST_CASE("training defaults") {
  const TrainConfig c;
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.weight_decay == 1e-4);
  CHECK(c.batch_size == 1024);
  CHECK(c.patience == 50);
  CHECK(c.val_frac == 0.3);
  CHECK(c.hidden_width == 100);
  CHECK(c.folds == 5);
  CHECK(c.propensity_eps == 0.01);
  CHECK(c.hyper.dropout_rate == 0.05);
  CHECK(c.hyper.strategy.kind == hyper::StrategyKind::generate_once);
}

TEST_CASE("bank layouts") {
  const TrainConfig c;
  const auto s = one_step_bank_spec({LearnerType::s_learner, LearnerMode::hyper}, 10, data::OutcomeType::continuous, c);
  REQUIRE(s.targets.size() == 1);
  CHECK(s.targets[0].layer_sizes == std::vector<std::size_t>{11, 100, 100, 1});
  CHECK(s.hypernet.embedding_size == 1);

  const auto t = one_step_bank_spec({LearnerType::t_learner, LearnerMode::baseline}, 10, data::OutcomeType::continuous, c);
  REQUIRE(t.targets.size() == 2);
  CHECK(t.targets[0].layer_sizes == std::vector<std::size_t>{10, 100, 100, 1});
  CHECK(t.objectives.size() == 2);

  const auto tar = one_step_bank_spec({LearnerType::tarnet, LearnerMode::hyper}, 10, data::OutcomeType::continuous, c);
  REQUIRE(tar.representation);
  CHECK(tar.representation->input_dim() == 10);
  CHECK(tar.targets[0].input_dim() == tar.representation->output_dim());

  const auto nu = nuisance_bank_spec(LearnerMode::hyper, 10, data::OutcomeType::continuous, true, c);
  REQUIRE(nu.targets.size() == 3);
  CHECK(nu.targets[2].output_activation == nn::Activation::sigmoid);
  CHECK(nu.hypernet.embedding_size == 16);
  CHECK(nuisance_bank_spec(LearnerMode::hyper, 10, data::OutcomeType::continuous, false, c).targets.size() == 2);

  const auto bin = one_step_bank_spec({LearnerType::t_learner, LearnerMode::baseline}, 10, data::OutcomeType::binary, c);
  CHECK(bin.targets[0].output_activation == nn::Activation::sigmoid);
  CHECK(bin.objectives[0].loss == LossKind::bce);
  CHECK_THROWS(one_step_bank_spec({LearnerType::dr_learner, LearnerMode::baseline}, 10, data::OutcomeType::continuous, c));
}

TEST_CASE("architecture parity between baseline and hyper") {
  const auto d = small_data(150, 3);
  const auto cfg = quick(2);
  for (auto t : kTypes) {
    const auto base = train({t, LearnerMode::baseline}, d, cfg, 1);
    const auto hyp = train({t, LearnerMode::hyper}, d, cfg, 1);
    CHECK(base.target_specs() == hyp.target_specs());
    CHECK(base.target_parameter_count() == hyp.target_parameter_count());
    CHECK(base.target_parameter_count() > 0);
  }
}

TEST_CASE("t_learner routing: each head sees exactly its own group") {
  const auto d = small_data(300, 4);
  const auto cfg = quick();
  for (auto mode : {LearnerMode::baseline, LearnerMode::hyper}) {
    const auto spec = one_step_bank_spec({LearnerType::t_learner, mode}, d.dim(), d.outcome_type, cfg);
    TargetBank bank(spec, 1);
    const auto bd = bank_data(LearnerType::t_learner, d);
    LoopConfig loop = cfg.loop();
    loop.batch_size = 64;
    loop.max_epochs = 1;
    const auto rows = iota(d.size());
    std::vector<std::size_t> train_rows(rows.begin(), rows.begin() + 250), val_rows(rows.begin() + 250, rows.end());
    std::size_t n0 = 0;
    for (auto r : train_rows) n0 += d.t[r] == 0;
    std::set<std::size_t> seen0, seen1;
    std::size_t count0 = 0;
    fit_bank(bank, bd, train_rows, val_rows, loop, 2, [&](std::size_t, const BankGradient& g) {
      for (auto r : g.objective_rows[0]) {
        CHECK(d.t[r] == 0);
        seen0.insert(r);
        ++count0;
      }
      for (auto r : g.objective_rows[1]) {
        CHECK(d.t[r] == 1);
        seen1.insert(r);
      }
    });
    CHECK(seen0.size() == n0);
    CHECK(count0 == n0);
    CHECK(seen1.size() == train_rows.size() - n0);
  }
}

TEST_CASE("tarnet routing: each row's loss uses the head for its arm") {
  const auto d = small_data(100, 5);
  const auto spec = one_step_bank_spec({LearnerType::tarnet, LearnerMode::hyper}, d.dim(), d.outcome_type, quick());
  REQUIRE(spec.objectives.size() == 2);
  CHECK(spec.objectives[0].rows == RowFilter::control);
  CHECK(spec.objectives[0].target == 0);
  CHECK(spec.objectives[1].rows == RowFilter::treated);
  CHECK(spec.objectives[1].target == 1);
  TargetBank bank(spec, 3);
  const auto g = bank.loss_and_gradient(bank_data(LearnerType::tarnet, d), iota(100), nn::Mode::eval, 0);
  for (auto r : g.objective_rows[0]) CHECK(d.t[r] == 0);
  for (auto r : g.objective_rows[1]) CHECK(d.t[r] == 1);
  CHECK(g.objective_rows[0].size() + g.objective_rows[1].size() == 100);
}

TEST_CASE("soft weight sharing: a group-0 step moves the group-1 network") {
  const auto d = small_data(200, 6);
  auto cfg = quick();
  cfg.weight_decay = 0.0;
  std::vector<std::size_t> group0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.t[i] == 0) group0.push_back(i);
  }
  const auto bd = bank_data(LearnerType::t_learner, d);
  for (auto mode : {LearnerMode::baseline, LearnerMode::hyper}) {
    TargetBank bank(one_step_bank_spec({LearnerType::t_learner, mode}, d.dim(), d.outcome_type, cfg), 7);
    const auto before = bank.target_weights(1).values;
    const auto g = bank.loss_and_gradient(bd, group0, nn::Mode::train, 1);
    auto blocks = bank.parameter_blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      optim::AdamState st(blocks[b].size(), cfg.learning_rate, cfg.weight_decay);
      optim::adam_step(st, blocks[b], g.blocks[b]);
    }
    const auto after = bank.target_weights(1).values;
    double diff = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) diff += std::abs(after[i] - before[i]);
    if (mode == LearnerMode::hyper) {
      CHECK(diff > 0.0);
    } else {
      CHECK(diff == 0.0);
    }
  }
}

TEST_CASE("cross-fitting: a unit never influences its own fold's estimates") {
  auto d = small_data(120, 8);
  const auto cfg = quick(4);
  const auto a = fit_nuisance(d, cfg, LearnerMode::baseline, true, 11);
  const std::size_t victim = 17;
  d.y[victim] += 50.0;
  const auto b = fit_nuisance(d, cfg, LearnerMode::baseline, true, 11);
  REQUIRE(a.fold == b.fold);
  std::size_t same_fold = 0, moved_elsewhere = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (a.fold[i] == a.fold[victim]) {
      ++same_fold;
      CHECK(a.mu0[i] == b.mu0[i]);
      CHECK(a.mu1[i] == b.mu1[i]);
      CHECK(a.pi[i] == b.pi[i]);
    } else if (a.mu0[i] != b.mu0[i] || a.mu1[i] != b.mu1[i]) {
      ++moved_elsewhere;
    }
  }
  CHECK(same_fold > 1);
  CHECK(moved_elsewhere > 0);
  for (double p : a.pi) {
    CHECK(p >= 0.01);
    CHECK(p <= 0.99);
  }
  std::set<std::size_t> folds(a.fold.begin(), a.fold.end());
  CHECK(folds.size() == cfg.folds);
}

TEST_CASE("nuisance fits a constant outcome") {
  auto d = small_data(200, 9);
  for (auto& y : d.y) y = 2.0;
  // Strong decay pulls the tiny nets towards their bias-only solution.
  auto cfg = quick(3000);
  cfg.learning_rate = 3e-2;
  cfg.weight_decay = 0.1;
  cfg.hidden_width = 8;
  cfg.patience = 3000;
  for (auto mode : {LearnerMode::baseline, LearnerMode::hyper}) {
    const auto est = fit_nuisance(d, cfg, mode, false, 3);
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(std::abs(est.mu0[i] - 2.0) < 1e-2);
      CHECK(std::abs(est.mu1[i] - 2.0) < 1e-2);
    }
  }
}

TEST_CASE("propensity is calibrated under random assignment") {
  const auto d = small_data(1000, 10, 0.0);
  auto cfg = quick(200);
  cfg.learning_rate = 1e-3;
  const auto est = fit_nuisance(d, cfg, LearnerMode::baseline, true, 4);
  const double mean = std::accumulate(est.pi.begin(), est.pi.end(), 0.0) / static_cast<double>(est.pi.size());
  CHECK(std::abs(mean - 0.5) < 0.05);
}

TEST_CASE("stage 2 regresses pseudo-outcomes, not raw outcomes") {
  const auto d = small_data(60, 12);
  NuisanceEstimates est;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (std::size_t i = 0; i < d.size(); ++i) {
    est.mu0.push_back(u(rng));
    est.mu1.push_back(u(rng));
    est.pi.push_back(u(rng));
  }
  const auto dr = pseudo_outcome_data(LearnerType::dr_learner, d, est);
  const auto ra = pseudo_outcome_data(LearnerType::ra_learner, d, est);
  CHECK((dr.inputs.array() == d.x.array()).all());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(dr.y[i] == doctest::Approx(oracle::dr_pseudo(d.y[i], d.t[i], est.mu0[i], est.mu1[i], est.pi[i])));
    CHECK(ra.y[i] == doctest::Approx(oracle::ra_pseudo(d.y[i], d.t[i], est.mu0[i], est.mu1[i])));
  }
  CHECK_THROWS(pseudo_outcome_data(LearnerType::t_learner, d, est));
}

TEST_CASE("predict_cate definitions") {
  const auto d = small_data(100, 13);
  const auto cfg = quick();

  // Identical heads give a zero effect everywhere.
  TargetBank bank(one_step_bank_spec({LearnerType::t_learner, LearnerMode::baseline}, d.dim(), d.outcome_type, cfg), 1);
  auto blocks = bank.parameter_blocks();
  std::copy(blocks[0].begin(), blocks[0].end(), blocks[1].begin());
  const FittedLearner same({LearnerType::t_learner, LearnerMode::baseline}, bank, {});
  for (double tau : same.predict_cate(d.x)) CHECK(tau == 0.0);

  const auto s = train({LearnerType::s_learner, LearnerMode::hyper}, d, cfg, 2);
  const auto w = s.model().target_weights(0);
  data::Matrix x1(d.x.rows(), d.x.cols() + 1), x0;
  x1 << d.x, data::Matrix::Ones(d.x.rows(), 1);
  x0 = x1;
  x0.col(d.x.cols()).setZero();
  const auto& spec = s.model().spec().targets[0];
  const data::Matrix diff = nn::predict(spec, w.view(), x1) - nn::predict(spec, w.view(), x0);
  const auto tau = s.predict_cate(d.x);
  for (std::size_t i = 0; i < tau.size(); ++i) CHECK(tau[i] == doctest::Approx(diff(static_cast<Eigen::Index>(i), 0)));

  CHECK(s.predict_cate(d.x) == tau);
  CHECK_THROWS_AS(s.predict_cate(data::Matrix::Zero(2, d.dim() + 1)), std::invalid_argument);
}

TEST_CASE("t_learner recovers a strong linear effect") {
  data::DgpConfig dgp;
  dgp.n = 3000;
  dgp.d = 3;
  dgp.rho = 0.0;
  dgp.effect = data::EffectFunction::first_coordinate;
  dgp.noise_sd = 0.1;
  const auto all = data::generate_synthetic(dgp, 14);
  const auto rows = iota(all.size());
  const auto [train_rows, test_rows] = data::stratified_holdout(all.t, rows, 0.2, 1);
  const auto tr = all.subset(train_rows);
  const auto te = all.subset(test_rows);
  auto cfg = quick(300);
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 256;
  cfg.hidden_width = 32;
  const auto m = train({LearnerType::t_learner, LearnerMode::baseline}, tr, cfg, 3);
  const auto tau_hat = m.predict_cate(te.x);
  const auto tau = te.true_effect();
  const auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  const double ma = mean(tau_hat), mb = mean(tau);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    sab += (tau_hat[i] - ma) * (tau[i] - mb);
    saa += (tau_hat[i] - ma) * (tau_hat[i] - ma);
    sbb += (tau[i] - mb) * (tau[i] - mb);
  }
  CHECK(sab / std::sqrt(saa * sbb) > 0.9);
}

TEST_CASE("training errors") {
  auto d = small_data(100, 15);
  for (auto& t : d.t) t = 0;
  CHECK_THROWS_AS(train({LearnerType::t_learner, LearnerMode::baseline}, d, quick(), 1), std::invalid_argument);
  auto bad = quick();
  bad.folds = 1;
  CHECK_THROWS_AS(train({LearnerType::dr_learner, LearnerMode::baseline}, small_data(100, 15), bad, 1),
                  std::invalid_argument);
}

TEST_CASE("training is deterministic and records a trace") {
  const auto d = small_data(120, 16);
  const auto cfg = quick(5);
  const auto a = train({LearnerType::tarnet, LearnerMode::hyper}, d, cfg, 9);
  const auto b = train({LearnerType::tarnet, LearnerMode::hyper}, d, cfg, 9);
  CHECK(a.predict_cate(d.x) == b.predict_cate(d.x));
  const auto& h = a.history();
  CHECK(h.points.size() == h.epochs);
  CHECK(h.steps == h.points.back().step);
  double best = 1e300;
  for (const auto& p : h.points) best = std::min(best, p.val_loss);
  CHECK(h.best_val_loss == best);
}
