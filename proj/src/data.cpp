#include "hyperite/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>

#include "hyperite/rng.hpp"

namespace hyperite::data {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Eigen::VectorXd unit_vector(std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (auto& x : v) x = normal(rng);
  return v / v.norm();
}

// Largest-remainder allocation of `total` across groups proportional to sizes.
std::vector<std::size_t> allocate(const std::vector<std::size_t>& sizes, std::size_t total) {
  const double n = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
  std::vector<std::size_t> quota(sizes.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    const double exact = n > 0 ? static_cast<double>(total) * static_cast<double>(sizes[g]) / n : 0.0;
    quota[g] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[g];
    remainders.emplace_back(exact - std::floor(exact), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i) {
    const auto g = remainders[i].second;
    if (quota[g] < sizes[g]) {
      ++quota[g];
      ++assigned;
    }
  }
  return quota;
}

std::size_t round_count(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, std::size_t line, const std::string& column) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last) {
    throw CsvError("line " + std::to_string(line) + ": non-numeric value '" + cell + "' in column '" + column + "'");
  }
  return value;
}

void append_number(std::string& out, double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

std::string to_string(OutcomeType t) { return t == OutcomeType::binary ? "binary" : "continuous"; }

OutcomeType parse_outcome_type(const std::string& name) {
  if (name == "continuous") return OutcomeType::continuous;
  if (name == "binary") return OutcomeType::binary;
  throw std::invalid_argument("unknown outcome type '" + name + "'");
}

std::string to_string(EffectFunction e) { return e == EffectFunction::linear ? "linear" : "first_coordinate"; }

EffectFunction parse_effect_function(const std::string& name) {
  if (name == "linear") return EffectFunction::linear;
  if (name == "first_coordinate") return EffectFunction::first_coordinate;
  throw std::invalid_argument("unknown effect function '" + name + "'");
}

std::size_t CausalDataset::treated() const {
  return static_cast<std::size_t>(std::count(t.begin(), t.end(), 1));
}

std::vector<double> CausalDataset::true_effect() const {
  if (!has_counterfactuals()) throw CounterfactualsUnavailable();
  std::vector<double> tau(size());
  for (std::size_t i = 0; i < size(); ++i) tau[i] = (*mu1)[i] - (*mu0)[i];
  return tau;
}

CausalDataset CausalDataset::subset(const std::vector<std::size_t>& rows) const {
  CausalDataset out;
  out.outcome_type = outcome_type;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.t.reserve(rows.size());
  out.y.reserve(rows.size());
  if (has_counterfactuals()) {
    out.mu0.emplace();
    out.mu1.emplace();
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    if (r >= size()) throw std::out_of_range("subset row index out of range");
    out.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(r));
    out.t.push_back(t[r]);
    out.y.push_back(y[r]);
    if (has_counterfactuals()) {
      out.mu0->push_back((*mu0)[r]);
      out.mu1->push_back((*mu1)[r]);
    }
  }
  return out;
}

void CausalDataset::validate() const {
  const auto n = size();
  if (static_cast<std::size_t>(x.rows()) != n || y.size() != n) {
    throw std::invalid_argument("dataset columns have inconsistent lengths");
  }
  if (mu0.has_value() != mu1.has_value()) throw std::invalid_argument("dataset has only one of mu0/mu1");
  if (has_counterfactuals() && (mu0->size() != n || mu1->size() != n)) {
    throw std::invalid_argument("counterfactual columns have inconsistent lengths");
  }
  if (!x.allFinite()) throw std::invalid_argument("dataset covariates contain non-finite values");
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i] != 0 && t[i] != 1) throw std::invalid_argument("treatment values must be 0 or 1");
    if (!std::isfinite(y[i])) throw std::invalid_argument("dataset outcome contains non-finite values");
    if (outcome_type == OutcomeType::binary && y[i] != 0.0 && y[i] != 1.0) {
      throw std::invalid_argument("binary outcome values must be 0 or 1");
    }
    if (has_counterfactuals() && !(std::isfinite((*mu0)[i]) && std::isfinite((*mu1)[i]))) {
      throw std::invalid_argument("counterfactual columns contain non-finite values");
    }
  }
  const auto n1 = treated();
  if (n1 == 0 || n1 == n) throw std::invalid_argument("dataset needs both treated and untreated units");
}

void DgpConfig::validate() const {
  if (n < 20) throw std::invalid_argument("DgpConfig.n must be at least 20");
  if (d < 1) throw std::invalid_argument("DgpConfig.d must be at least 1");
  if (!(noise_sd >= 0.0)) throw std::invalid_argument("DgpConfig.noise_sd must be non-negative");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("DgpConfig.rho must lie in [0, 1]");
  if (!std::isfinite(confounding)) throw std::invalid_argument("DgpConfig.confounding must be finite");
}

CausalDataset generate_synthetic(const DgpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng structure(derive_seed(cfg.structure_seed, {0x57c}));
  const Eigen::VectorXd beta_pi = unit_vector(cfg.d, structure);
  const Eigen::VectorXd beta_b = unit_vector(cfg.d, structure);
  const Eigen::VectorXd beta_tau = unit_vector(cfg.d, structure);

  Rng rng(derive_seed(seed, {0xc0f}));
  Rng noise(derive_seed(seed, {0x7015e, cfg.noise_seed}));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  CausalDataset data;
  data.outcome_type = cfg.outcome_type;
  const auto n = static_cast<Eigen::Index>(cfg.n);
  data.x.resize(n, static_cast<Eigen::Index>(cfg.d));
  for (Eigen::Index i = 0; i < data.x.size(); ++i) data.x.data()[i] = normal(rng);
  data.t.resize(cfg.n);
  data.y.resize(cfg.n);
  data.mu0.emplace(cfg.n);
  data.mu1.emplace(cfg.n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = data.x.row(i);
    const double propensity = sigmoid(cfg.confounding * row.dot(beta_pi));
    data.t[i] = uniform(rng) < propensity ? 1 : 0;
    const double x1 = row(0);
    const double base = std::sin(row.dot(beta_b)) + 0.5 * x1 * x1;
    const double hetero = cfg.effect == EffectFunction::linear ? row.dot(beta_tau) : x1;
    const double m0 = base;
    const double m1 = base + cfg.rho * 0.5 + (1.0 - cfg.rho) * hetero;
    if (cfg.outcome_type == OutcomeType::continuous) {
      (*data.mu0)[i] = m0;
      (*data.mu1)[i] = m1;
      const double y0 = m0 + cfg.noise_sd * normal(noise);
      const double y1 = m1 + cfg.noise_sd * normal(noise);
      data.y[i] = data.t[i] == 1 ? y1 : y0;
    } else {
      (*data.mu0)[i] = sigmoid(m0);
      (*data.mu1)[i] = sigmoid(m1);
      const double u0 = uniform(noise);
      const double u1 = uniform(noise);
      data.y[i] = data.t[i] == 1 ? (u1 < (*data.mu1)[i] ? 1.0 : 0.0) : (u0 < (*data.mu0)[i] ? 1.0 : 0.0);
    }
  }
  const auto n1 = data.treated();
  if (n1 == 0 || n1 == cfg.n) {
    throw std::runtime_error("synthetic draw assigned every unit to one arm (n=" + std::to_string(cfg.n) +
                             ", confounding=" + std::to_string(cfg.confounding) + "); reduce confounding or raise n");
  }
  return data;
}

CausalDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw CsvError("'" + path.string() + "' is empty; a header row is required");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_line(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column.emplace(header[i], i);

  const auto require = [&](const std::string& name) {
    const auto it = column.find(name);
    if (it == column.end()) throw CsvError("'" + path.string() + "' is missing column '" + name + "'");
    return it->second;
  };

  std::vector<std::size_t> cov_cols;
  if (schema.covariates.empty()) {
    const std::regex pattern("x([0-9]+)");
    std::vector<std::pair<std::size_t, std::size_t>> found;
    for (std::size_t i = 0; i < header.size(); ++i) {
      std::smatch m;
      if (std::regex_match(header[i], m, pattern)) found.emplace_back(std::stoul(m[1].str()), i);
    }
    std::sort(found.begin(), found.end());
    for (std::size_t k = 0; k < found.size(); ++k) {
      if (found[k].first != k) throw CsvError("'" + path.string() + "' is missing column 'x" + std::to_string(k) + "'");
      cov_cols.push_back(found[k].second);
    }
    if (cov_cols.empty()) throw CsvError("'" + path.string() + "' is missing column 'x0'");
  } else {
    for (const auto& name : schema.covariates) cov_cols.push_back(require(name));
  }
  const auto t_col = require(schema.treatment);
  const auto y_col = require(schema.outcome);
  const bool has_mu0 = column.contains(schema.mu0);
  const bool has_mu1 = column.contains(schema.mu1);
  if (has_mu0 != has_mu1) require(has_mu0 ? schema.mu1 : schema.mu0);
  const bool has_mu = has_mu0 && has_mu1;

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw CsvError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) + " cells, found " +
                     std::to_string(cells.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) row[i] = parse_cell(cells[i], line_no, header[i]);
    const double tv = row[t_col];
    if (tv != 0.0 && tv != 1.0) {
      throw CsvError("line " + std::to_string(line_no) + ": treatment '" + cells[t_col] + "' is not 0 or 1");
    }
    rows.push_back(std::move(row));
  }

  CausalDataset data;
  data.outcome_type = schema.outcome_type;
  data.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cov_cols.size()));
  if (has_mu) {
    data.mu0.emplace();
    data.mu1.emplace();
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      data.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][cov_cols[k]];
    }
    data.t.push_back(static_cast<int>(rows[i][t_col]));
    data.y.push_back(rows[i][y_col]);
    if (has_mu) {
      data.mu0->push_back(rows[i][column.at(schema.mu0)]);
      data.mu1->push_back(rows[i][column.at(schema.mu1)]);
    }
  }
  try {
    data.validate();
  } catch (const std::invalid_argument& e) {
    throw CsvError("'" + path.string() + "': " + e.what());
  }
  return data;
}

void write_csv(const CausalDataset& data, const std::filesystem::path& path, bool include_mu) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  const bool mu = include_mu && data.has_counterfactuals();
  std::string buf;
  for (std::size_t k = 0; k < data.dim(); ++k) buf += "x" + std::to_string(k) + ",";
  buf += mu ? "t,y,mu0,mu1\n" : "t,y\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t k = 0; k < data.dim(); ++k) {
      append_number(buf, data.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
      buf += ',';
    }
    buf += data.t[i] == 1 ? "1," : "0,";
    append_number(buf, data.y[i]);
    if (mu) {
      buf += ',';
      append_number(buf, (*data.mu0)[i]);
      buf += ',';
      append_number(buf, (*data.mu1)[i]);
    }
    buf += '\n';
  }
  out << buf;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

SplitIndices split_indices(const CausalDataset& data, double test_frac, double val_frac, std::uint64_t seed,
                           bool stratify_by_t) {
  if (!(test_frac > 0.0 && test_frac < 1.0) || !(val_frac > 0.0 && val_frac < 1.0)) {
    throw std::invalid_argument("split fractions must lie in (0, 1)");
  }
  const auto n = data.size();
  Rng rng(derive_seed(seed, {0x5b11}));
  std::vector<std::vector<std::size_t>> groups;
  if (stratify_by_t) {
    groups.resize(2);
    for (std::size_t i = 0; i < n; ++i) groups[static_cast<std::size_t>(data.t[i])].push_back(i);
  } else {
    groups.resize(1);
    groups[0].resize(n);
    std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
  }
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);

  std::vector<std::size_t> sizes;
  for (const auto& g : groups) sizes.push_back(g.size());
  const auto test_q = allocate(sizes, round_count(test_frac, n));
  std::vector<std::size_t> pool_sizes;
  for (std::size_t g = 0; g < groups.size(); ++g) pool_sizes.push_back(sizes[g] - test_q[g]);
  const auto pool = std::accumulate(pool_sizes.begin(), pool_sizes.end(), std::size_t{0});
  const auto val_q = allocate(pool_sizes, round_count(val_frac, pool));

  SplitIndices s;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& idx = groups[g];
    s.test.insert(s.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(test_q[g]));
    s.val.insert(s.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(test_q[g]),
                 idx.begin() + static_cast<std::ptrdiff_t>(test_q[g] + val_q[g]));
    s.train.insert(s.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(test_q[g] + val_q[g]), idx.end());
  }
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());

  if (stratify_by_t) {
    for (const auto& [name, part] : {std::pair{"train", &s.train}, std::pair{"validation", &s.val},
                                     std::pair{"test", &s.test}}) {
      std::size_t n1 = 0;
      for (auto i : *part) n1 += static_cast<std::size_t>(data.t[i]);
      if (n1 == 0 || n1 == part->size()) {
        throw std::invalid_argument(std::string("stratified split leaves the ") + name + " part without both arms");
      }
    }
  }
  return s;
}

Split split(const CausalDataset& data, double test_frac, double val_frac, std::uint64_t seed, bool stratify_by_t) {
  const auto s = split_indices(data, test_frac, val_frac, seed, stratify_by_t);
  return {data.subset(s.train), data.subset(s.val), data.subset(s.test)};
}

std::vector<std::size_t> stratified_subsample(const CausalDataset& data, const std::vector<std::size_t>& rows,
                                              std::size_t count, std::uint64_t seed) {
  if (count > rows.size()) {
    throw std::invalid_argument("requested " + std::to_string(count) + " rows but only " + std::to_string(rows.size()) +
                                " are available");
  }
  std::vector<std::vector<std::size_t>> groups(2);
  for (auto r : rows) groups[static_cast<std::size_t>(data.t.at(r))].push_back(r);
  Rng rng(derive_seed(seed, {0x5ab5}));
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);
  const auto q = allocate({groups[0].size(), groups[1].size()}, count);
  if (q[0] < 2 || q[1] < 2) {
    throw std::invalid_argument("subsample of " + std::to_string(count) + " rows leaves fewer than 2 units in an arm");
  }
  std::vector<std::size_t> out;
  for (std::size_t g = 0; g < 2; ++g) out.insert(out.end(), groups[g].begin(), groups[g].begin() + static_cast<std::ptrdiff_t>(q[g]));
  std::sort(out.begin(), out.end());
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(const std::vector<int>& t,
                                                                                const std::vector<std::size_t>& rows,
                                                                                double frac, std::uint64_t seed) {
  if (!(frac > 0.0 && frac < 1.0)) throw std::invalid_argument("holdout fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> groups(2);
  for (auto r : rows) groups[static_cast<std::size_t>(t.at(r))].push_back(r);
  Rng rng(derive_seed(seed, {0x401d}));
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);
  const auto q = allocate({groups[0].size(), groups[1].size()}, round_count(frac, rows.size()));
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  for (std::size_t g = 0; g < 2; ++g) {
    out.second.insert(out.second.end(), groups[g].begin(), groups[g].begin() + static_cast<std::ptrdiff_t>(q[g]));
    out.first.insert(out.first.end(), groups[g].begin() + static_cast<std::ptrdiff_t>(q[g]), groups[g].end());
  }
  std::sort(out.first.begin(), out.first.end());
  std::sort(out.second.begin(), out.second.end());
  return out;
}

std::vector<std::size_t> stratified_folds(const std::vector<int>& t, const std::vector<std::size_t>& rows, std::size_t k,
                                          std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("cross-fitting needs at least 2 folds");
  std::vector<std::vector<std::size_t>> groups(2);
  for (std::size_t i = 0; i < rows.size(); ++i) groups[static_cast<std::size_t>(t.at(rows[i]))].push_back(i);
  for (std::size_t g = 0; g < 2; ++g) {
    if (groups[g].size() < k) {
      throw std::invalid_argument("arm t=" + std::to_string(g) + " has " + std::to_string(groups[g].size()) +
                                  " units, fewer than the " + std::to_string(k) + " folds");
    }
  }
  Rng rng(derive_seed(seed, {0xf01d}));
  std::vector<std::size_t> fold(rows.size(), 0);
  std::size_t next = 0;
  for (auto& g : groups) {
    std::shuffle(g.begin(), g.end(), rng);
    for (auto i : g) fold[i] = next++ % k;
  }
  return fold;
}

CausalDataset subsample_treated(const CausalDataset& data, double keep_prob, std::uint64_t seed) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw std::invalid_argument("keep_prob must lie in (0, 1]");
  Rng rng(derive_seed(seed, {0x7a1}));
  std::bernoulli_distribution keep(keep_prob);
  std::vector<std::size_t> rows;
  std::size_t kept_treated = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.t[i] == 0) {
      rows.push_back(i);
    } else if (keep_prob == 1.0 || keep(rng)) {
      rows.push_back(i);
      ++kept_treated;
    }
  }
  if (kept_treated == 0) {
    throw std::runtime_error("subsampling with keep_prob=" + std::to_string(keep_prob) + " removed all " +
                             std::to_string(data.treated()) + " treated units");
  }
  return data.subset(rows);
}

}  // namespace hyperite::data
