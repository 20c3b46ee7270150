#include "hyperite/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string_view>

#include <nlohmann/json.hpp>

namespace hyperite::config {

namespace {

using json = nlohmann::json;

void check_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

double get_number(const json& obj, const char* key, double fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return v.get<double>();
}

std::uint64_t to_unsigned(const json& v, const std::string& what) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) throw ConfigError(what + ": expected a non-negative integer");
  throw ConfigError(what + ": expected an integer");
}

std::uint64_t get_unsigned(const json& obj, const char* key, std::uint64_t fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  return to_unsigned(obj.at(key), where + "." + key);
}

std::string get_string(const json& obj, const char* key, const std::string& fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

bool get_bool(const json& obj, const char* key, bool fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected true or false");
  return v.get<bool>();
}

// Wraps parse_* helpers so their errors carry the config location.
template <class Fn>
auto named(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

hyper::GenerationStrategy parse_strategy_value(const json& v, const hyper::GenerationStrategy& base,
                                               const std::string& where) {
  hyper::GenerationStrategy s = base;
  if (v.is_string()) {
    s.kind = named(where, [&] { return hyper::parse_strategy(v.get<std::string>()); });
  } else {
    check_keys(v, where, {"kind", "n_chunks", "n_heads"});
    s.kind = named(where, [&] { return hyper::parse_strategy(get_string(v, "kind", "generate_once", where)); });
    s.n_chunks = get_unsigned(v, "n_chunks", s.n_chunks, where);
    s.n_heads = get_unsigned(v, "n_heads", s.n_heads, where);
  }
  named(where, [&] {
    s.validate();
    return 0;
  });
  return s;
}

void parse_data(const json& j, RunConfig& cfg) {
  const std::string w = "data";
  check_keys(j, w,
             {"source", "n", "d", "confounding", "rho", "effect", "noise_sd", "outcome_type", "structure_seed",
              "noise_seed", "include_mu", "csv_path", "covariates", "treatment", "outcome", "mu0", "mu1"});
  auto& src = cfg.experiment.data;
  const auto source = get_string(j, "source", "synthetic", w);
  if (source == "synthetic") {
    src.kind = eval::DataSource::Kind::synthetic;
  } else if (source == "csv") {
    src.kind = eval::DataSource::Kind::csv;
  } else {
    throw ConfigError("data.source: expected 'synthetic' or 'csv', got '" + source + "'");
  }
  auto& dgp = src.dgp;
  dgp.n = get_unsigned(j, "n", dgp.n, w);
  dgp.d = get_unsigned(j, "d", dgp.d, w);
  dgp.confounding = get_number(j, "confounding", dgp.confounding, w);
  dgp.rho = get_number(j, "rho", dgp.rho, w);
  dgp.effect = named("data.effect", [&] { return data::parse_effect_function(get_string(j, "effect", to_string(dgp.effect), w)); });
  dgp.noise_sd = get_number(j, "noise_sd", dgp.noise_sd, w);
  const auto outcome =
      named("data.outcome_type", [&] { return data::parse_outcome_type(get_string(j, "outcome_type", "continuous", w)); });
  dgp.outcome_type = outcome;
  dgp.structure_seed = get_unsigned(j, "structure_seed", dgp.structure_seed, w);
  dgp.noise_seed = get_unsigned(j, "noise_seed", dgp.noise_seed, w);
  cfg.include_mu = get_bool(j, "include_mu", cfg.include_mu, w);

  auto& schema = src.schema;
  schema.outcome_type = outcome;
  src.csv_path = get_string(j, "csv_path", "", w);
  if (j.contains("covariates")) {
    const auto& c = j.at("covariates");
    if (!c.is_array()) throw ConfigError("data.covariates: expected a list of column names");
    for (const auto& name : c) {
      if (!name.is_string()) throw ConfigError("data.covariates: expected a list of column names");
      schema.covariates.push_back(name.get<std::string>());
    }
  }
  schema.treatment = get_string(j, "treatment", schema.treatment, w);
  schema.outcome = get_string(j, "outcome", schema.outcome, w);
  schema.mu0 = get_string(j, "mu0", schema.mu0, w);
  schema.mu1 = get_string(j, "mu1", schema.mu1, w);
  if (src.kind == eval::DataSource::Kind::csv && src.csv_path.empty()) {
    throw ConfigError("data.csv_path is required when data.source is 'csv'");
  }
}

void parse_training(const json& j, learners::TrainConfig& t) {
  const std::string w = "training";
  check_keys(j, w,
             {"lr", "weight_decay", "batch_size", "patience", "val_frac", "max_epochs", "hidden_width", "folds",
              "propensity_eps", "strategy", "embedding_size", "hyper_hidden", "hyper_dropout", "spectral_norm"});
  t.learning_rate = get_number(j, "lr", t.learning_rate, w);
  t.weight_decay = get_number(j, "weight_decay", t.weight_decay, w);
  t.batch_size = get_unsigned(j, "batch_size", t.batch_size, w);
  t.patience = get_unsigned(j, "patience", t.patience, w);
  t.val_frac = get_number(j, "val_frac", t.val_frac, w);
  t.max_epochs = get_unsigned(j, "max_epochs", t.max_epochs, w);
  t.hidden_width = get_unsigned(j, "hidden_width", t.hidden_width, w);
  t.folds = get_unsigned(j, "folds", t.folds, w);
  t.propensity_eps = get_number(j, "propensity_eps", t.propensity_eps, w);
  if (j.contains("strategy")) t.hyper.strategy = parse_strategy_value(j.at("strategy"), t.hyper.strategy, w + ".strategy");
  t.hyper.embedding_size = get_unsigned(j, "embedding_size", t.hyper.embedding_size, w);
  if (j.contains("hyper_hidden")) {
    const auto& h = j.at("hyper_hidden");
    if (!h.is_array() || h.empty()) throw ConfigError("training.hyper_hidden: expected a non-empty list of widths");
    t.hyper.hidden.clear();
    for (const auto& v : h) t.hyper.hidden.push_back(to_unsigned(v, "training.hyper_hidden"));
  }
  t.hyper.dropout_rate = get_number(j, "hyper_dropout", t.hyper.dropout_rate, w);
  t.hyper.spectral_norm = get_bool(j, "spectral_norm", t.hyper.spectral_norm, w);
}

void parse_learners(const json& j, RunConfig& cfg, const hyper::GenerationStrategy& base_strategy) {
  if (!j.is_array() || j.empty()) throw ConfigError("learners: expected a non-empty list");
  auto& exp = cfg.experiment;
  exp.learners.clear();
  exp.overrides.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto w = "learners[" + std::to_string(i) + "]";
    const auto& e = j[i];
    learners::LearnerKind kind;
    eval::LearnerOverride o;
    if (e.is_string()) {
      const auto label = e.get<std::string>();
      kind = named(w, [&] {
        return label.find('/') == std::string::npos
                   ? learners::LearnerKind{learners::parse_learner_type(label), learners::LearnerMode::baseline}
                   : learners::LearnerKind::parse(label);
      });
    } else {
      check_keys(e, w, {"kind", "mode", "strategy", "embedding_size"});
      if (!e.contains("kind")) throw ConfigError(w + ": missing 'kind'");
      kind.type = named(w, [&] { return learners::parse_learner_type(get_string(e, "kind", "", w)); });
      kind.mode = named(w, [&] { return learners::parse_learner_mode(get_string(e, "mode", "baseline", w)); });
      if (e.contains("strategy")) o.strategy = parse_strategy_value(e.at("strategy"), base_strategy, w + ".strategy");
      if (e.contains("embedding_size")) o.embedding_size = to_unsigned(e.at("embedding_size"), w + ".embedding_size");
      if ((o.strategy || o.embedding_size) && kind.mode != learners::LearnerMode::hyper) {
        throw ConfigError(w + ": strategy and embedding_size only apply to hyper learners");
      }
    }
    exp.learners.push_back(kind);
    exp.overrides.push_back(o);
  }
}

void parse_experiment(const json& j, RunConfig& cfg) {
  const std::string w = "experiment";
  check_keys(j, w, {"seeds", "seed_start", "test_frac", "n_train", "jobs", "sweep"});
  auto& exp = cfg.experiment;
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    exp.seeds.clear();
    if (s.is_array()) {
      for (const auto& v : s) exp.seeds.push_back(to_unsigned(v, "experiment.seeds"));
    } else {
      const auto count = to_unsigned(s, "experiment.seeds");
      const auto start = get_unsigned(j, "seed_start", 0, w);
      for (std::uint64_t i = 0; i < count; ++i) exp.seeds.push_back(start + i);
    }
  } else if (j.contains("seed_start")) {
    throw ConfigError("experiment.seed_start needs an integer experiment.seeds");
  }
  exp.test_frac = get_number(j, "test_frac", exp.test_frac, w);
  if (j.contains("n_train") && !j.at("n_train").is_null()) exp.n_train = to_unsigned(j.at("n_train"), "experiment.n_train");
  exp.jobs = get_unsigned(j, "jobs", exp.jobs, w);
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    check_keys(s, "experiment.sweep", {"axis", "values"});
    if (!s.contains("axis")) throw ConfigError("experiment.sweep: missing 'axis'");
    exp.sweep.axis = named("experiment.sweep.axis",
                           [&] { return eval::parse_sweep_axis(get_string(s, "axis", "none", "experiment.sweep")); });
    if (exp.sweep.axis != eval::SweepAxis::none) {
      const auto* values = s.contains("values") ? &s.at("values") : nullptr;
      if (exp.sweep.axis == eval::SweepAxis::strategy) {
        if (!values) {
          using G = hyper::GenerationStrategy;
          exp.sweep.strategies = {G::generate_once(), G::chunk_wise(10), G::layer_wise(), G::split_head(2)};
        } else {
          if (!values->is_array()) throw ConfigError("experiment.sweep.values: expected a list");
          for (const auto& v : *values) {
            exp.sweep.strategies.push_back(parse_strategy_value(v, exp.train.hyper.strategy, "experiment.sweep.values"));
          }
        }
      } else {
        if (!values || !values->is_array()) throw ConfigError("experiment.sweep.values: expected a list of sizes");
        for (const auto& v : *values) exp.sweep.sizes.push_back(to_unsigned(v, "experiment.sweep.values"));
      }
    }
  }
}

void parse_gradcheck(const json& j, gradcheck::Options& g) {
  const std::string w = "gradcheck";
  check_keys(j, w, {"step", "draws", "seed", "tolerance", "mlp_tolerance", "loss_tolerance", "inject_adjoint_error"});
  g.step = get_number(j, "step", g.step, w);
  g.draws = get_unsigned(j, "draws", g.draws, w);
  g.seed = get_unsigned(j, "seed", g.seed, w);
  g.hypernet_tolerance = get_number(j, "tolerance", g.hypernet_tolerance, w);
  g.mlp_tolerance = get_number(j, "mlp_tolerance", g.mlp_tolerance, w);
  g.loss_tolerance = get_number(j, "loss_tolerance", g.loss_tolerance, w);
  g.inject_adjoint_error = get_bool(j, "inject_adjoint_error", g.inject_adjoint_error, w);
  if (!(g.step > 0.0)) throw ConfigError("gradcheck.step must be positive");
  if (g.draws == 0) throw ConfigError("gradcheck.draws must be positive");
}

}  // namespace

RunConfig default_config() {
  RunConfig cfg;
  cfg.experiment.learners = {{learners::LearnerType::t_learner, learners::LearnerMode::baseline},
                             {learners::LearnerType::t_learner, learners::LearnerMode::hyper}};
  for (std::uint64_t s = 0; s < 10; ++s) cfg.experiment.seeds.push_back(s);
  return cfg;
}

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "config", {"data", "learners", "training", "experiment", "output", "gradcheck"});
  auto cfg = default_config();
  if (root.contains("data")) parse_data(root.at("data"), cfg);
  if (root.contains("training")) parse_training(root.at("training"), cfg.experiment.train);
  if (root.contains("learners")) parse_learners(root.at("learners"), cfg, cfg.experiment.train.hyper.strategy);
  if (root.contains("experiment")) parse_experiment(root.at("experiment"), cfg);
  if (root.contains("output")) {
    const auto& o = root.at("output");
    check_keys(o, "output", {"dir"});
    cfg.output_dir = get_string(o, "dir", cfg.output_dir.string(), "output");
  }
  if (root.contains("gradcheck")) parse_gradcheck(root.at("gradcheck"), cfg.gradcheck);

  try {
    cfg.experiment.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void apply_seed_offset(RunConfig& cfg, std::uint64_t offset) {
  for (auto& s : cfg.experiment.seeds) s += offset;
}

std::filesystem::path resolve_output_dir(const RunConfig& cfg, const std::string& cli_out) {
  if (!cli_out.empty()) return cli_out;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return cfg.output_dir;
}

}  // namespace hyperite::config
