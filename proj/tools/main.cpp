#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hyperite/config.hpp"
#include "hyperite/data.hpp"
#include "hyperite/eval.hpp"
#include "hyperite/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace hyperite;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::size_t jobs = 0;
  std::uint64_t seed_offset = 0;
};

config::RunConfig load(const Flags& f) {
  auto cfg = f.config.empty() ? config::default_config() : config::load_config(f.config);
  config::apply_seed_offset(cfg, f.seed_offset);
  if (f.jobs > 0) cfg.experiment.jobs = f.jobs;
  return cfg;
}

fs::path prepare_dir(const config::RunConfig& cfg, const Flags& f) {
  const auto dir = config::resolve_output_dir(cfg, f.out);
  fs::create_directories(dir);
  return dir;
}

void warn_low_sample(const eval::ResultsTable& table) {
  for (const auto& r : table.rows) {
    if (r.low_sample) {
      std::cerr << "warning: single run per cell; standard errors are reported as 0\n";
      return;
    }
  }
}

void write_common(const eval::ResultsTable& table, const fs::path& dir) {
  eval::write_results_csv(table, dir / "results.csv");
  eval::write_raw_jsonl(table, dir / "raw.jsonl");
  eval::write_traces_jsonl(table, dir / "traces.jsonl");
}

int cmd_gen_data(const Flags& f) {
  const auto cfg = load(f);
  const auto& src = cfg.experiment.data;
  if (src.kind != eval::DataSource::Kind::synthetic) throw std::invalid_argument("gen-data needs data.source = synthetic");
  const auto path = f.out.empty() ? config::resolve_output_dir(cfg, "") / "data.csv" : fs::path(f.out);
  const auto d = data::generate_synthetic(src.dgp, cfg.experiment.seeds.front());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::write_csv(d, path, cfg.include_mu);
  std::printf("wrote %s: N=%zu d=%zu treated_fraction=%.4f\n", path.string().c_str(), d.size(), d.dim(),
              static_cast<double>(d.treated()) / static_cast<double>(d.size()));
  return 0;
}

int cmd_run(const Flags& f) {
  auto cfg = load(f);
  cfg.experiment.sweep = {};
  const auto dir = prepare_dir(cfg, f);
  const auto table = eval::run_experiment(cfg.experiment);
  write_common(table, dir);
  std::cout << eval::format_table(table);
  warn_low_sample(table);
  std::cout << "results written to " << dir.string() << "\n";
  return 0;
}

int cmd_sweep(const Flags& f) {
  const auto cfg = load(f);
  if (cfg.experiment.sweep.axis == eval::SweepAxis::none) {
    throw std::invalid_argument("sweep needs experiment.sweep.axis in the config");
  }
  const auto dir = prepare_dir(cfg, f);
  const auto table = eval::run_sweep(cfg.experiment);
  write_common(table, dir);
  eval::write_sweep_csv(table, dir / "sweep.csv");

  std::vector<std::string> values;
  for (const auto& r : table.rows) {
    if (std::find(values.begin(), values.end(), r.sweep_value) == values.end()) values.push_back(r.sweep_value);
  }
  for (const auto& v : values) {
    eval::ResultsTable block;
    for (const auto& r : table.rows) {
      if (r.sweep_value == v) block.rows.push_back(r);
    }
    std::cout << "== " << eval::to_string(table.axis) << " = " << v << "\n" << eval::format_table(block) << "\n";
  }
  warn_low_sample(table);
  std::cout << "results written to " << dir.string() << "\n";
  return 0;
}

int cmd_gradcheck(const Flags& f) {
  const auto cfg = load(f);
  const auto report = gradcheck::run_all(cfg.gradcheck);
  std::cout << report.format();
  if (!report.passed()) {
    std::cerr << "gradient check failed\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment effect estimation with hypernetwork-generated learners"};
  app.require_subcommand(1);
  Flags flags;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed-offset", flags.seed_offset, "Added to every configured seed");
  };
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
  add_common(gen);
  gen->add_option("--out", flags.out, "Output CSV path (default <output dir>/data.csv)");
  auto* run = app.add_subcommand("run", "Train every learner on every seed and report PEHE");
  auto* sweep = app.add_subcommand("sweep", "Repeat the experiment along the configured sweep axis");
  for (auto* sub : {run, sweep}) {
    add_common(sub);
    sub->add_option("--out", flags.out, "Output directory (overrides the config and $HYPERITE_OUT_DIR)");
    sub->add_option("--jobs", flags.jobs, "Parallel (seed, learner) cells")->check(CLI::PositiveNumber);
  }
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference checks of every adjoint");
  add_common(grad);

  CLI11_PARSE(app, argc, argv);
  try {
    if (gen->parsed()) return cmd_gen_data(flags);
    if (run->parsed()) return cmd_run(flags);
    if (sweep->parsed()) return cmd_sweep(flags);
    return cmd_gradcheck(flags);
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
