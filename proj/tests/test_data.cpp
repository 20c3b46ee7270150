#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <set>

#include "hyperite/data.hpp"

using namespace hyperite;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "hyperite_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

data::CausalDataset toy(std::size_t n0, std::size_t n1) {
  data::CausalDataset d;
  d.x = data::Matrix::Zero(static_cast<Eigen::Index>(n0 + n1), 2);
  for (std::size_t i = 0; i < n0 + n1; ++i) {
    d.x(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i);
    d.t.push_back(i < n0 ? 0 : 1);
    d.y.push_back(0.1 * static_cast<double>(i));
  }
  return d;
}

}  // namespace

TEST_CASE("synthetic examples") {
  data::DgpConfig cfg;
  cfg.noise_sd = 0.0;
  cfg.rho = 1.0;
  const auto d = data::generate_synthetic(cfg, 1);
  CHECK(d.size() == 1000);
  CHECK(d.dim() == 10);
  for (double tau : d.true_effect()) CHECK(tau == doctest::Approx(0.5).epsilon(1e-12));

  cfg = {};
  cfg.confounding = 0.0;
  cfg.n = 4000;
  const auto bal = data::generate_synthetic(cfg, 2);
  const double frac = static_cast<double>(bal.treated()) / 4000.0;
  CHECK(std::abs(frac - 0.5) <= 3.0 / std::sqrt(4000.0));

  const auto a = data::generate_synthetic({}, 7);
  const auto b = data::generate_synthetic({}, 7);
  CHECK((a.x.array() == b.x.array()).all());
  CHECK(a.t == b.t);
  CHECK(a.y == b.y);
  CHECK(*a.mu0 == *b.mu0);
}

TEST_CASE("synthetic factual consistency without noise") {
  data::DgpConfig cfg;
  cfg.noise_sd = 0.0;
  cfg.rho = 0.3;
  const auto d = data::generate_synthetic(cfg, 3);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double y0 = (*d.mu0)[i], y1 = (*d.mu1)[i];
    CHECK(d.y[i] == d.t[i] * y1 + (1 - d.t[i]) * y0);
  }
}

TEST_CASE("synthetic surfaces follow the stated formula") {
  data::DgpConfig cfg;
  cfg.effect = data::EffectFunction::first_coordinate;
  cfg.rho = 0.25;
  const auto d = data::generate_synthetic(cfg, 4);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x1 = d.x(static_cast<Eigen::Index>(i), 0);
    CHECK((*d.mu1)[i] - (*d.mu0)[i] == doctest::Approx(0.25 * 0.5 + 0.75 * x1).epsilon(1e-12));
  }
}

TEST_CASE("noise seed changes outcomes but not surfaces") {
  data::DgpConfig cfg;
  const auto a = data::generate_synthetic(cfg, 5);
  cfg.noise_seed = 9;
  const auto b = data::generate_synthetic(cfg, 5);
  CHECK(*a.mu0 == *b.mu0);
  CHECK(*a.mu1 == *b.mu1);
  CHECK(a.t == b.t);
  CHECK(a.y != b.y);
}

TEST_CASE("binary outcomes") {
  data::DgpConfig cfg;
  cfg.outcome_type = data::OutcomeType::binary;
  const auto d = data::generate_synthetic(cfg, 6);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK((d.y[i] == 0.0 || d.y[i] == 1.0));
    CHECK((*d.mu0)[i] > 0.0);
    CHECK((*d.mu0)[i] < 1.0);
  }
}

TEST_CASE("dgp validation and degenerate draws") {
  data::DgpConfig cfg;
  cfg.n = 10;
  CHECK_THROWS_AS(data::generate_synthetic(cfg, 1), std::invalid_argument);
  cfg = {};
  cfg.d = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.noise_sd = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("csv round trip is lossless") {
  const auto d = data::generate_synthetic({}, 11);
  const auto p = temp_path("roundtrip.csv");
  data::write_csv(d, p);
  const auto back = data::load_csv(p);
  CHECK((back.x.array() == d.x.array()).all());
  CHECK(back.t == d.t);
  CHECK(back.y == d.y);
  CHECK(*back.mu0 == *d.mu0);
  CHECK(*back.mu1 == *d.mu1);

  const auto q = temp_path("roundtrip2.csv");
  data::write_csv(back, q);
  CHECK(read_text(p) == read_text(q));
}

TEST_CASE("csv without counterfactuals") {
  const auto d = data::generate_synthetic({}, 12);
  const auto p = temp_path("nomu.csv");
  data::write_csv(d, p, false);
  const auto back = data::load_csv(p);
  CHECK_FALSE(back.has_counterfactuals());
  CHECK_THROWS_AS(back.true_effect(), data::CounterfactualsUnavailable);
  CHECK(back.size() == 1000);
}

TEST_CASE("csv benchmark-shaped file") {
  std::ostringstream text;
  for (int k = 0; k < 25; ++k) text << "x" << k << ",";
  text << "t,y,mu0,mu1\n";
  for (int i = 0; i < 747; ++i) {
    for (int k = 0; k < 25; ++k) text << (i * 0.01 + k) << ",";
    text << (i < 139 ? 1 : 0) << "," << i * 0.5 << ",1.5,2.5\n";
  }
  const auto p = temp_path("ihdp_like.csv");
  write_text(p, text.str());
  const auto d = data::load_csv(p);
  CHECK(d.size() == 747);
  CHECK(d.dim() == 25);
  CHECK(d.treated() == 139);
  CHECK(d.has_counterfactuals());
}

TEST_CASE("csv with a custom schema") {
  const auto p = temp_path("schema.csv");
  write_text(p, "age,dose,treat,outcome,y0,y1\n1,2,0,3,3,4\n5,6,1,7,6,7\n8,9,0,1,1,3\n");
  data::CsvSchema schema;
  schema.covariates = {"age", "dose"};
  schema.treatment = "treat";
  schema.outcome = "outcome";
  schema.mu0 = "y0";
  schema.mu1 = "y1";
  const auto d = data::load_csv(p, schema);
  CHECK(d.dim() == 2);
  CHECK(d.t == std::vector<int>{0, 1, 0});
  CHECK(d.true_effect() == std::vector<double>{1, 1, 2});
}

TEST_CASE("csv errors") {
  const auto p = temp_path("bad.csv");
  write_text(p, "x0,x1,y\n1,2,3\n");
  try {
    data::load_csv(p);
    FAIL("expected an error");
  } catch (const data::CsvError& e) {
    CHECK(std::string(e.what()).find("'t'") != std::string::npos);
  }
  write_text(p, "x0,t,y\n1,2,3\n4,0,1\n");
  CHECK_THROWS_AS(data::load_csv(p), data::CsvError);
  write_text(p, "x0,t,y\n1,1,abc\n4,0,1\n");
  try {
    data::load_csv(p);
    FAIL("expected an error");
  } catch (const data::CsvError& e) {
    CHECK(std::string(e.what()).find("abc") != std::string::npos);
  }
  CHECK_THROWS_AS(data::load_csv(temp_path("missing.csv")), data::CsvError);
}

TEST_CASE("split sizes and partition") {
  data::DgpConfig cfg;
  cfg.confounding = 0.0;
  const auto d = data::generate_synthetic(cfg, 13);
  const auto s = data::split_indices(d, 0.5, 0.3, 1);
  CHECK(s.train.size() == 350);
  CHECK(s.val.size() == 150);
  CHECK(s.test.size() == 500);
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
  CHECK(all.size() == 1000);

  const auto again = data::split_indices(d, 0.5, 0.3, 1);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
}

TEST_CASE("stratified split preserves treated fraction") {
  const auto d = toy(608, 139);
  const auto s = data::split(d, 0.5, 0.3, 2);
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    const double expected = 139.0 * static_cast<double>(part->size()) / 747.0;
    CHECK(std::abs(static_cast<double>(part->treated()) - expected) <= 1.0);
  }
  CHECK_THROWS(data::split_indices(toy(50, 1), 0.5, 0.3, 1));
}

TEST_CASE("subsample_treated") {
  const auto d = toy(500, 1000);
  const auto same = data::subsample_treated(d, 1.0, 1);
  CHECK(same.t == d.t);
  CHECK(same.y == d.y);
  const auto sub = data::subsample_treated(d, 0.1, 2);
  CHECK(std::abs(static_cast<double>(sub.treated()) - 100.0) <= 30.0);
  CHECK(sub.size() - sub.treated() == 500);
  CHECK_THROWS_AS(data::subsample_treated(toy(10, 1), 1e-9, 3), std::runtime_error);
  CHECK_THROWS_AS(data::subsample_treated(d, 0.0, 3), std::invalid_argument);
}

TEST_CASE("stratified subsamples are nested and balanced") {
  const auto d = data::generate_synthetic({}, 14);
  std::vector<std::size_t> rows(d.size());
  std::iota(rows.begin(), rows.end(), 0);
  const auto big = data::stratified_subsample(d, rows, 500, 3);
  const auto small = data::stratified_subsample(d, rows, 250, 3);
  CHECK(big.size() == 500);
  CHECK(small.size() == 250);
  CHECK(std::includes(big.begin(), big.end(), small.begin(), small.end()));
  CHECK(data::stratified_subsample(d, rows, 250, 3) == small);
  CHECK(data::stratified_subsample(d, rows, 1000, 3).size() == 1000);
  CHECK_THROWS_AS(data::stratified_subsample(d, rows, 1001, 3), std::invalid_argument);
  CHECK_THROWS_AS(data::stratified_subsample(d, rows, 3, 3), std::invalid_argument);
}

TEST_CASE("stratified folds") {
  const auto d = toy(23, 11);
  std::vector<std::size_t> rows(d.size());
  std::iota(rows.begin(), rows.end(), 0);
  const auto folds = data::stratified_folds(d.t, rows, 5, 1);
  for (std::size_t f = 0; f < 5; ++f) {
    std::size_t n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (folds[i] == f) (d.t[i] ? n1 : n0)++;
    }
    CHECK(n0 >= 4);
    CHECK(n1 >= 2);
  }
  CHECK_THROWS(data::stratified_folds(toy(20, 3).t, std::vector<std::size_t>{0, 1, 2, 3, 20, 21, 22}, 5, 1));
}
