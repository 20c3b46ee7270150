#include "hyperite/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "hyperite/rng.hpp"

namespace hyperite::eval {

namespace {

using json = nlohmann::json;

struct Prepared {
  data::CausalDataset train;
  data::CausalDataset test;
  std::string sweep_value;
  std::uint64_t seed = 0;
  std::optional<std::size_t> sweep_embedding;
  std::optional<hyper::GenerationStrategy> sweep_strategy;
};

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

class SourceData {
 public:
  explicit SourceData(const DataSource& src) : src_(src) {
    if (src_.kind == DataSource::Kind::csv) {
      loaded_ = data::load_csv(src_.csv_path, src_.schema);
      if (!loaded_->has_counterfactuals()) {
        throw data::CounterfactualsUnavailable();
      }
    }
  }

  data::CausalDataset for_seed(std::uint64_t seed) const {
    if (loaded_) return *loaded_;
    return data::generate_synthetic(src_.dgp, seed);
  }

 private:
  const DataSource& src_;
  std::optional<data::CausalDataset> loaded_;
};

// Stratified (train, test) row split for one seed.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> train_test_rows(const data::CausalDataset& d,
                                                                              double test_frac, std::uint64_t seed) {
  return data::stratified_holdout(d.t, iota_rows(d.size()), test_frac, derive_seed(seed, {0x7e57}));
}

Prepared prepare(const ExperimentConfig& cfg, const SourceData& source, std::uint64_t seed,
                 std::optional<std::size_t> n_train, std::string sweep_value) {
  const auto full = source.for_seed(seed);
  auto [train_rows, test_rows] = train_test_rows(full, cfg.test_frac, seed);
  if (n_train && *n_train != train_rows.size()) {
    train_rows = data::stratified_subsample(full, train_rows, *n_train, derive_seed(seed, {0x5a3}));
  }
  return {full.subset(train_rows), full.subset(test_rows), std::move(sweep_value), seed, std::nullopt, std::nullopt};
}

template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n_threads = std::max<std::size_t>(1, std::min(jobs, n));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

learners::TrainConfig cell_config(const ExperimentConfig& cfg, std::size_t learner, const Prepared& p) {
  auto tc = cfg.train;
  if (!cfg.overrides.empty()) {
    const auto& o = cfg.overrides[learner];
    if (o.strategy) tc.hyper.strategy = *o.strategy;
    if (o.embedding_size) tc.hyper.embedding_size = *o.embedding_size;
  }
  if (p.sweep_strategy) tc.hyper.strategy = *p.sweep_strategy;
  if (p.sweep_embedding) tc.hyper.embedding_size = *p.sweep_embedding;
  return tc;
}

std::vector<RunRecord> run_prepared(const ExperimentConfig& cfg, const std::vector<Prepared>& preps) {
  const auto& kinds = cfg.learners;
  std::vector<RunRecord> records(preps.size() * kinds.size());
  parallel_for(records.size(), cfg.jobs, [&](std::size_t cell) {
    const auto& p = preps[cell / kinds.size()];
    const auto& kind = kinds[cell % kinds.size()];
    try {
      const auto model = learners::train(kind, p.train, cell_config(cfg, cell % kinds.size(), p), p.seed);
      RunRecord r;
      r.learner = kind.label();
      r.sweep_value = p.sweep_value;
      r.seed = p.seed;
      r.n_train = p.train.size();
      r.pehe_in = pehe(model, p.train);
      r.pehe_out = pehe(model, p.test);
      const auto& h = model.history();
      r.steps_to_best = h.best_step;
      r.epochs = h.epochs;
      r.initial_val_loss = h.initial_val_loss;
      r.best_val_loss = h.best_val_loss;
      r.trace = h.points;
      records[cell] = std::move(r);
    } catch (const std::exception& e) {
      throw std::runtime_error("learner " + kind.label() + ", seed " + std::to_string(p.seed) +
                               (p.sweep_value.empty() ? "" : ", sweep value " + p.sweep_value) + ": " + e.what());
    }
  });
  return records;
}

// One sweep value per entry of `labels`; the tweak sets the per-value fields.
std::vector<RunRecord> run_with(const ExperimentConfig& cfg, const SourceData& source,
                                const std::vector<std::string>& labels,
                                const std::function<void(std::size_t, Prepared&)>& tweak,
                                const std::vector<std::optional<std::size_t>>& n_train) {
  std::vector<Prepared> preps;
  for (std::size_t v = 0; v < labels.size(); ++v) {
    for (auto seed : cfg.seeds) {
      preps.push_back(prepare(cfg, source, seed, n_train[v], labels[v]));
      if (tweak) tweak(v, preps.back());
    }
  }
  return run_prepared(cfg, preps);
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

double pehe(std::span<const double> tau_hat, std::span<const double> mu1, std::span<const double> mu0) {
  if (tau_hat.size() != mu1.size() || tau_hat.size() != mu0.size()) throw std::invalid_argument("pehe: length mismatch");
  if (tau_hat.empty()) throw std::invalid_argument("pehe: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    const double e = tau_hat[i] - (mu1[i] - mu0[i]);
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(tau_hat.size()));
}

double pehe(const learners::FittedLearner& model, const data::CausalDataset& data) {
  if (!data.has_counterfactuals()) throw data::CounterfactualsUnavailable();
  const auto tau_hat = model.predict_cate(data.x);
  return pehe(tau_hat, *data.mu1, *data.mu0);
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::none: return "none";
    case SweepAxis::dataset_size: return "dataset_size";
    case SweepAxis::embedding_size: return "embedding_size";
    case SweepAxis::strategy: return "strategy";
  }
  return "none";
}

SweepAxis parse_sweep_axis(const std::string& name) {
  for (auto a : {SweepAxis::none, SweepAxis::dataset_size, SweepAxis::embedding_size, SweepAxis::strategy}) {
    if (to_string(a) == name) return a;
  }
  throw std::invalid_argument("unknown sweep axis '" + name + "'");
}

std::size_t Sweep::count() const {
  switch (axis) {
    case SweepAxis::none: return 0;
    case SweepAxis::strategy: return strategies.size();
    default: return sizes.size();
  }
}

std::string Sweep::label(std::size_t i) const {
  if (axis == SweepAxis::strategy) return hyper::to_string(strategies.at(i).kind);
  if (axis == SweepAxis::none) return "";
  return std::to_string(sizes.at(i));
}

void ExperimentConfig::validate() const {
  if (learners.empty()) throw std::invalid_argument("experiment needs at least one learner");
  if (!overrides.empty() && overrides.size() != learners.size()) {
    throw std::invalid_argument("learner overrides must match the learner list");
  }
  for (std::size_t i = 0; i < learners.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (learners[i] == learners[j]) throw std::invalid_argument("learner " + learners[i].label() + " listed twice");
    }
  }
  for (const auto& o : overrides) {
    if (o.strategy) o.strategy->validate();
    if (o.embedding_size && *o.embedding_size == 0) throw std::invalid_argument("embedding_size must be positive");
  }
  if (seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
  if (!(test_frac > 0.0 && test_frac < 1.0)) throw std::invalid_argument("test_frac must lie in (0, 1)");
  if (n_train && *n_train == 0) throw std::invalid_argument("n_train must be positive");
  if (jobs == 0) throw std::invalid_argument("jobs must be positive");
  if (sweep.axis != SweepAxis::none && sweep.count() == 0) throw std::invalid_argument("sweep has no values");
  for (auto s : sweep.sizes) {
    if (s == 0) throw std::invalid_argument("sweep values must be positive");
  }
  train.validate();
  if (data.kind == DataSource::Kind::synthetic) data.dgp.validate();
}

MeanSe mean_and_se(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_and_se: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

ResultsTable ResultsTable::aggregate(SweepAxis axis, std::vector<RunRecord> records) {
  ResultsTable table;
  table.axis = axis;
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.learner, r.sweep_value);
    if (!groups.contains(key)) keys.push_back(key);
    groups[key].first.push_back(r.pehe_in);
    groups[key].second.push_back(r.pehe_out);
  }
  for (const auto& key : keys) {
    const auto& [in, out] = groups[key];
    const auto a = mean_and_se(in);
    const auto b = mean_and_se(out);
    table.rows.push_back({key.first, key.second, in.size(), a.mean, a.se, b.mean, b.se, in.size() < 2});
  }
  table.records = std::move(records);
  return table;
}

const ResultRow& ResultsTable::row(const std::string& learner, const std::string& sweep_value) const {
  for (const auto& r : rows) {
    if (r.learner == learner && r.sweep_value == sweep_value) return r;
  }
  throw std::out_of_range("no result row for " + learner + (sweep_value.empty() ? "" : " @ " + sweep_value));
}

ResultsTable run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const SourceData source(cfg.data);
  return ResultsTable::aggregate(SweepAxis::none, run_with(cfg, source, {""}, {}, {cfg.n_train}));
}

ResultsTable dataset_size_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& sizes) {
  cfg.validate();
  if (sizes.empty()) throw std::invalid_argument("dataset_size sweep needs at least one size");
  const SourceData source(cfg.data);
  std::vector<std::size_t> ordered = sizes;
  std::sort(ordered.begin(), ordered.end());
  std::vector<std::string> labels;
  std::vector<std::optional<std::size_t>> n_train;
  for (auto s : ordered) {
    labels.push_back(std::to_string(s));
    n_train.emplace_back(s);
  }
  return ResultsTable::aggregate(SweepAxis::dataset_size,
                                 run_with(cfg, source, labels, {}, n_train));
}

ResultsTable embedding_size_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& sizes) {
  cfg.validate();
  const SourceData source(cfg.data);
  if (sizes.empty()) throw std::invalid_argument("embedding_size sweep needs at least one size");
  std::vector<std::string> labels;
  for (auto s : sizes) {
    if (s == 0) throw std::invalid_argument("embedding sizes must be positive");
    labels.push_back(std::to_string(s));
  }
  const auto tweak = [&](std::size_t v, Prepared& p) { p.sweep_embedding = sizes[v]; };
  return ResultsTable::aggregate(SweepAxis::embedding_size,
                                 run_with(cfg, source, labels, tweak, std::vector(sizes.size(), cfg.n_train)));
}

ResultsTable strategy_sweep(const ExperimentConfig& cfg, const std::vector<hyper::GenerationStrategy>& strategies) {
  cfg.validate();
  const SourceData source(cfg.data);
  if (strategies.empty()) throw std::invalid_argument("strategy sweep needs at least one strategy");
  std::vector<std::string> labels;
  for (const auto& s : strategies) {
    s.validate();
    labels.push_back(hyper::to_string(s.kind));
  }
  const auto tweak = [&](std::size_t v, Prepared& p) { p.sweep_strategy = strategies[v]; };
  return ResultsTable::aggregate(SweepAxis::strategy,
                                 run_with(cfg, source, labels, tweak, std::vector(strategies.size(), cfg.n_train)));
}

ResultsTable run_sweep(const ExperimentConfig& cfg) {
  switch (cfg.sweep.axis) {
    case SweepAxis::none: return run_experiment(cfg);
    case SweepAxis::dataset_size: return dataset_size_sweep(cfg, cfg.sweep.sizes);
    case SweepAxis::embedding_size: return embedding_size_sweep(cfg, cfg.sweep.sizes);
    case SweepAxis::strategy: return strategy_sweep(cfg, cfg.sweep.strategies);
  }
  return run_experiment(cfg);
}

std::size_t steps_to_best(std::span<const double> losses) {
  if (losses.empty()) throw std::invalid_argument("steps_to_best: empty trace");
  const auto it = std::min_element(losses.begin(), losses.end());
  return static_cast<std::size_t>(it - losses.begin()) + 1;
}

std::size_t steps_to_best(const std::vector<learners::TracePoint>& trace) {
  if (trace.empty()) throw std::invalid_argument("steps_to_best: empty trace");
  const auto it = std::min_element(trace.begin(), trace.end(),
                                   [](const auto& a, const auto& b) { return a.val_loss < b.val_loss; });
  return it->step;
}

double steps_ratio(double baseline_steps, double hyper_steps) {
  if (!(baseline_steps > 0.0)) throw std::invalid_argument("steps_ratio: baseline steps must be positive");
  return hyper_steps / baseline_steps;
}

std::vector<ConvergenceSummary> convergence_trace_compare(const std::vector<RunRecord>& records) {
  if (records.empty()) throw std::invalid_argument("convergence_trace_compare: no traces");
  struct Cell {
    std::optional<std::size_t> baseline, hyper;
  };
  std::vector<std::string> types;
  std::map<std::string, std::map<std::pair<std::uint64_t, std::string>, Cell>> cells;
  for (const auto& r : records) {
    const auto kind = learners::LearnerKind::parse(r.learner);
    const auto type = learners::to_string(kind.type);
    if (!cells.contains(type)) types.push_back(type);
    const auto steps = r.trace.empty() ? r.steps_to_best : steps_to_best(r.trace);
    auto& cell = cells[type][{r.seed, r.sweep_value}];
    (kind.mode == learners::LearnerMode::hyper ? cell.hyper : cell.baseline) = steps;
  }
  std::vector<ConvergenceSummary> out;
  for (const auto& type : types) {
    ConvergenceSummary s;
    s.learner_type = type;
    double base_sum = 0.0, hyper_sum = 0.0;
    for (const auto& [key, cell] : cells[type]) {
      if (!cell.baseline || !cell.hyper) continue;
      ++s.pairs;
      base_sum += static_cast<double>(*cell.baseline);
      hyper_sum += static_cast<double>(*cell.hyper);
      if (*cell.hyper <= *cell.baseline) ++s.hyper_not_slower;
    }
    if (s.pairs == 0) continue;
    s.baseline_mean_steps = base_sum / static_cast<double>(s.pairs);
    s.hyper_mean_steps = hyper_sum / static_cast<double>(s.pairs);
    s.ratio = steps_ratio(s.baseline_mean_steps, s.hyper_mean_steps);
    out.push_back(s);
  }
  return out;
}

void write_results_csv(const ResultsTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "learner,sweep_axis,sweep_value,runs,pehe_in_mean,pehe_in_se,pehe_out_mean,pehe_out_se\n";
  out.precision(17);
  for (const auto& r : table.rows) {
    out << r.learner << ',' << to_string(table.axis) << ',' << r.sweep_value << ',' << r.runs << ',' << r.pehe_in_mean
        << ',' << r.pehe_in_se << ',' << r.pehe_out_mean << ',' << r.pehe_out_se << '\n';
  }
}

void write_raw_jsonl(const ResultsTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  for (const auto& r : table.records) {
    const json j = {{"learner", r.learner},
                    {"sweep_axis", to_string(table.axis)},
                    {"sweep_value", r.sweep_value},
                    {"seed", r.seed},
                    {"n_train", r.n_train},
                    {"pehe_in", r.pehe_in},
                    {"pehe_out", r.pehe_out},
                    {"steps_to_best", r.steps_to_best},
                    {"epochs", r.epochs},
                    {"initial_val_loss", r.initial_val_loss},
                    {"best_val_loss", r.best_val_loss}};
    out << j.dump() << '\n';
  }
}

void write_traces_jsonl(const ResultsTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  for (const auto& r : table.records) {
    json steps = json::array();
    json losses = json::array();
    for (const auto& p : r.trace) {
      steps.push_back(p.step);
      losses.push_back(p.val_loss);
    }
    const json j = {{"learner", r.learner}, {"sweep_value", r.sweep_value}, {"seed", r.seed},
                    {"steps_to_best", r.steps_to_best}, {"step", steps}, {"val_loss", losses}};
    out << j.dump() << '\n';
  }
}

void write_sweep_csv(const ResultsTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  auto rows = table.rows;
  if (table.axis == SweepAxis::dataset_size || table.axis == SweepAxis::embedding_size) {
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      return std::stoull(a.sweep_value) < std::stoull(b.sweep_value);
    });
  }
  out << "learner,sweep_axis,x,y,err\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.learner << ',' << to_string(table.axis) << ',' << r.sweep_value << ',' << r.pehe_out_mean << ','
        << r.pehe_out_se << '\n';
  }
}

std::vector<RunRecord> read_raw_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::vector<RunRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    RunRecord r;
    r.learner = j.at("learner").get<std::string>();
    r.sweep_value = j.at("sweep_value").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n_train = j.at("n_train").get<std::size_t>();
    r.pehe_in = j.at("pehe_in").get<double>();
    r.pehe_out = j.at("pehe_out").get<double>();
    r.steps_to_best = j.at("steps_to_best").get<std::size_t>();
    r.epochs = j.at("epochs").get<std::size_t>();
    r.initial_val_loss = j.at("initial_val_loss").get<double>();
    r.best_val_loss = j.at("best_val_loss").get<double>();
    records.push_back(std::move(r));
  }
  return records;
}

std::string format_table(const ResultsTable& table) {
  std::ostringstream out;
  const bool sweep = table.axis != SweepAxis::none;
  char line[256];
  if (sweep) {
    std::snprintf(line, sizeof(line), "%-16s %-22s %-20s %-20s\n", to_string(table.axis).c_str(), "learner", "PEHE-in",
                  "PEHE-out");
  } else {
    std::snprintf(line, sizeof(line), "%-22s %-20s %-20s\n", "learner", "PEHE-in", "PEHE-out");
  }
  out << line;
  for (const auto& r : table.rows) {
    const auto in = format_number(r.pehe_in_mean) + " (" + format_number(r.pehe_in_se) + ")";
    const auto o = format_number(r.pehe_out_mean) + " (" + format_number(r.pehe_out_se) + ")";
    if (sweep) {
      std::snprintf(line, sizeof(line), "%-16s %-22s %-20s %-20s\n", r.sweep_value.c_str(), r.learner.c_str(), in.c_str(),
                    o.c_str());
    } else {
      std::snprintf(line, sizeof(line), "%-22s %-20s %-20s\n", r.learner.c_str(), in.c_str(), o.c_str());
    }
    out << line;
  }
  return out.str();
}

}  // namespace hyperite::eval
