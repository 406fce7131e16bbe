#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixlab/regret.hpp"
#include "mixlab/sgld.hpp"
#include "mixlab/weight_bound.hpp"

namespace mixlab {

inline constexpr const char* kReportSchema = "mixlab.report/1";

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumerical = 3, kExitAcceptance = 4 };

enum class ExperimentKind { Regret, Bound, Fisher, Sgld, Dominance, DeepLinear };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Regret: return "regret";
    case ExperimentKind::Bound: return "bound";
    case ExperimentKind::Fisher: return "fisher";
    case ExperimentKind::Sgld: return "sgld";
    case ExperimentKind::Dominance: return "dominance";
    default: return "deep-linear";
  }
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Regret;
  std::string name;
  std::uint64_t seed = 1;

  std::optional<ModelFamily> family;
  PriorSpec prior;
  ParamVector theta0;
  std::vector<int> n = {2};
  Setting setting = Setting::Online;
  std::string method = "auto";  // auto | exact | mc
  std::size_t mc_draws = 10000;
  std::vector<double> epsilon_grid;
  std::optional<SupervisedSetting> features;

  std::vector<double> gamma = {1.0};
  std::string learner = "erm";  // erm | fixed
  ParamVector fixed_theta;

  std::size_t fisher_samples = 100000;
  DatasetKind dataset = DatasetKind::Structured;
  std::size_t n_train = 200;

  SgldConfig sgld;

  std::vector<int> layers = {0, 1, 2, 4, 8};
  int dim = 16;
  std::size_t seeds = 50;

  std::string out_dir;

  // Section -> key -> raw value, echoed into the report.
  std::map<std::string, std::map<std::string, std::string>> raw;
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"experiment", {"kind", "name", "seed"}},
      {"family", {"name", "alphabet", "order", "features", "noise_var", "inputs", "hidden", "classes"}},
      {"prior", {"kind", "grid", "half_width", "center", "lower", "upper", "atoms", "weights", "particles"}},
      {"run",
       {"theta0", "n", "setting", "method", "mc_draws", "epsilon_grid", "feature_points", "feature_probs", "gamma",
        "learner", "fixed_theta", "samples", "dataset", "n_train", "layers", "dim", "seeds", "step_size", "steps",
        "burn_in", "thinning", "minibatch", "boundary", "noise"}},
      {"output", {"dir"}},
  };
  return schema;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  const double d = parse_double(key, v);
  if (d != std::floor(d)) throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return static_cast<long long>(d);
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  const long long i = parse_int(key, v);
  if (i < 0) throw ConfigError("config key '" + key + "' must be nonnegative");
  return static_cast<std::size_t>(i);
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split(v, ',')) out.push_back(parse_double(key, s));
  if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
  return out;
}

inline ParamVector parse_vector(const std::string& key, const std::string& v) {
  const auto d = parse_doubles(key, v);
  return Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
}

inline std::vector<int> parse_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& s : split(v, ',')) out.push_back(static_cast<int>(parse_int(key, s)));
  if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

}  // namespace detail

// Parses and validates an INI experiment config. Every referenced
// parameter is checked here, before any computation starts.
inline ExperimentConfig parse_config_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig cfg;
  const auto& schema = detail::config_schema();
  for (const auto& [section, body] : tree) {
    const auto it = schema.find(section);
    if (it == schema.end()) {
      if (body.empty()) throw ConfigError("config key '" + section + "' must be inside a section");
      throw ConfigError("unknown config section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
      cfg.raw[section][key] = detail::trim(value.data());
    }
  }
  auto get = [&](const std::string& section, const std::string& key) -> std::optional<std::string> {
    const auto s = cfg.raw.find(section);
    if (s == cfg.raw.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
  };
  auto key_of = [](const std::string& s, const std::string& k) { return s + "." + k; };

  // [experiment]
  const auto kind = get("experiment", "kind");
  if (!kind) throw ConfigError("config needs experiment.kind");
  static const std::map<std::string, ExperimentKind> kinds = {
      {"regret", ExperimentKind::Regret},   {"bound", ExperimentKind::Bound},
      {"fisher", ExperimentKind::Fisher},   {"sgld", ExperimentKind::Sgld},
      {"dominance", ExperimentKind::Dominance}, {"deep-linear", ExperimentKind::DeepLinear}};
  if (!kinds.count(*kind)) throw ConfigError("unknown experiment.kind '" + *kind + "'");
  cfg.kind = kinds.at(*kind);
  cfg.name = get("experiment", "name").value_or(*kind);
  for (char ch : cfg.name)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_')
      throw ConfigError("experiment.name may only contain letters, digits, '-' and '_'");
  if (auto v = get("experiment", "seed")) cfg.seed = static_cast<std::uint64_t>(detail::parse_count("experiment.seed", *v));
  if (auto v = get("output", "dir")) cfg.out_dir = *v;

  auto iget = [&](const std::string& s, const std::string& k, long long def) {
    const auto v = get(s, k);
    return v ? detail::parse_int(key_of(s, k), *v) : def;
  };
  auto dget = [&](const std::string& s, const std::string& k, double def) {
    const auto v = get(s, k);
    return v ? detail::parse_double(key_of(s, k), *v) : def;
  };

  // [run] (shared)
  if (auto v = get("run", "n")) cfg.n = detail::parse_ints("run.n", *v);
  if (auto v = get("run", "setting")) {
    if (*v == "online") cfg.setting = Setting::Online;
    else if (*v == "batch") cfg.setting = Setting::Batch;
    else if (*v == "supervised") cfg.setting = Setting::Supervised;
    else throw ConfigError("run.setting must be online, batch or supervised");
  }
  if (auto v = get("run", "method")) {
    if (*v != "auto" && *v != "exact" && *v != "mc") throw ConfigError("run.method must be auto, exact or mc");
    cfg.method = *v;
  }
  if (auto v = get("run", "mc_draws")) cfg.mc_draws = detail::parse_count("run.mc_draws", *v);
  if (auto v = get("run", "epsilon_grid")) cfg.epsilon_grid = detail::parse_doubles("run.epsilon_grid", *v);
  if (auto v = get("run", "gamma")) cfg.gamma = detail::parse_doubles("run.gamma", *v);
  if (auto v = get("run", "learner")) {
    if (*v != "erm" && *v != "fixed") throw ConfigError("run.learner must be erm or fixed");
    cfg.learner = *v;
  }
  if (auto v = get("run", "samples")) cfg.fisher_samples = detail::parse_count("run.samples", *v);
  if (auto v = get("run", "dataset")) {
    if (*v == "structured") cfg.dataset = DatasetKind::Structured;
    else if (*v == "random_labels") cfg.dataset = DatasetKind::RandomLabels;
    else if (*v == "random_inputs") cfg.dataset = DatasetKind::RandomInputs;
    else throw ConfigError("run.dataset must be structured, random_labels or random_inputs");
  }
  if (auto v = get("run", "n_train")) cfg.n_train = detail::parse_count("run.n_train", *v);
  if (auto v = get("run", "layers")) cfg.layers = detail::parse_ints("run.layers", *v);
  cfg.dim = static_cast<int>(iget("run", "dim", cfg.dim));
  if (auto v = get("run", "seeds")) cfg.seeds = detail::parse_count("run.seeds", *v);
  cfg.sgld.step_size = dget("run", "step_size", cfg.sgld.step_size);
  if (auto v = get("run", "steps")) cfg.sgld.steps = detail::parse_count("run.steps", *v);
  if (auto v = get("run", "burn_in")) cfg.sgld.burn_in = detail::parse_count("run.burn_in", *v);
  if (auto v = get("run", "thinning")) cfg.sgld.thinning = detail::parse_count("run.thinning", *v);
  if (auto v = get("run", "minibatch")) cfg.sgld.minibatch = detail::parse_count("run.minibatch", *v);
  if (auto v = get("run", "boundary")) {
    if (*v == "reflect") cfg.sgld.boundary = Boundary::Reflect;
    else if (*v == "clip") cfg.sgld.boundary = Boundary::Clip;
    else throw ConfigError("run.boundary must be reflect or clip");
  }
  if (auto v = get("run", "noise")) cfg.sgld.noise = detail::parse_bool("run.noise", *v);

  if (cfg.kind == ExperimentKind::DeepLinear) {
    if (cfg.dim < 2) throw ConfigError("run.dim must be at least 2");
    if (cfg.seeds < 1) throw ConfigError("run.seeds must be at least 1");
    for (int l : cfg.layers)
      if (l < 0) throw ConfigError("run.layers must be nonnegative");
    return cfg;
  }

  // [family]
  const auto fname = get("family", "name");
  if (!fname) throw ConfigError("config needs family.name");
  try {
    if (*fname == "bernoulli") {
      cfg.family = ModelFamily::bernoulli();
    } else if (*fname == "categorical") {
      cfg.family = ModelFamily::categorical(static_cast<int>(iget("family", "alphabet", 3)));
    } else if (*fname == "markov") {
      cfg.family = ModelFamily::markov(static_cast<int>(iget("family", "alphabet", 2)),
                                       static_cast<int>(iget("family", "order", 1)));
    } else if (*fname == "linear_gaussian") {
      cfg.family = ModelFamily::linear_gaussian(static_cast<int>(iget("family", "features", 1)),
                                                dget("family", "noise_var", 1.0));
    } else if (*fname == "softmax_net") {
      cfg.family = ModelFamily::softmax_net(static_cast<int>(iget("family", "inputs", 2)),
                                            static_cast<int>(iget("family", "hidden", 4)),
                                            static_cast<int>(iget("family", "classes", 2)));
    } else {
      throw ConfigError("unknown family.name '" + *fname + "'");
    }
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  const auto& family = *cfg.family;
  const int d = family.dimension();

  // [prior]
  const std::string pkind = get("prior", "kind").value_or("uniform");
  if (pkind == "uniform" || pkind == "box") {
    cfg.prior.grid = static_cast<int>(iget("prior", "grid", family.is_sequence() ? 1001 : 101));
    if (pkind == "box") {
      const double a = dget("prior", "half_width", 0.5);
      const double c = dget("prior", "center", family.is_sequence() ? 0.5 : 0.0);
      cfg.prior.lower = ParamVector::Constant(d, c - a);
      cfg.prior.upper = ParamVector::Constant(d, c + a);
    }
    if (auto v = get("prior", "lower")) cfg.prior.lower = detail::parse_vector("prior.lower", *v);
    if (auto v = get("prior", "upper")) cfg.prior.upper = detail::parse_vector("prior.upper", *v);
    if (auto v = get("prior", "particles")) cfg.prior.particles = detail::parse_count("prior.particles", *v);
    cfg.prior.particle_seed = mix_seed(cfg.seed, 0xB0);
  } else if (pkind == "finite") {
    const auto atoms = get("prior", "atoms");
    if (!atoms) throw ConfigError("finite prior needs prior.atoms");
    std::vector<ParamVector> pts;
    for (const auto& a : detail::split(*atoms, ';')) pts.push_back(detail::parse_vector("prior.atoms", a));
    std::vector<double> w;
    if (auto v = get("prior", "weights")) w = detail::parse_doubles("prior.weights", *v);
    if (pts.empty()) throw ConfigError("finite prior needs at least one atom");
    cfg.prior = PriorSpec::finite(std::move(pts), std::move(w));
  } else {
    throw ConfigError("prior.kind must be uniform, box or finite");
  }
  const bool spectrum_run = cfg.kind == ExperimentKind::Fisher && std::holds_alternative<SoftmaxNet>(family.spec());
  if (!spectrum_run) {
    try {
      validate_prior(cfg.prior, family);
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("prior: ") + e.what());
    }
  }

  // theta0
  if (auto v = get("run", "theta0")) {
    cfg.theta0 = detail::parse_vector("run.theta0", *v);
  } else if (cfg.kind != ExperimentKind::Dominance && !spectrum_run) {
    throw ConfigError("config needs run.theta0");
  }
  if (cfg.theta0.size() > 0) {
    try {
      family.validate(cfg.theta0);
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("run.theta0: ") + e.what());
    }
  }
  if (auto v = get("run", "fixed_theta")) {
    cfg.fixed_theta = detail::parse_vector("run.fixed_theta", *v);
    try {
      family.validate(cfg.fixed_theta);
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("run.fixed_theta: ") + e.what());
    }
  } else if (cfg.learner == "fixed") {
    throw ConfigError("learner = fixed needs run.fixed_theta");
  }

  // finite feature alphabet
  if (auto v = get("run", "feature_points")) {
    SupervisedSetting s;
    for (const auto& p : detail::split(*v, ';')) s.features.push_back(detail::parse_vector("run.feature_points", p));
    if (auto w = get("run", "feature_probs")) {
      s.feature_probs = detail::parse_doubles("run.feature_probs", *w);
    } else {
      s.feature_probs.assign(s.features.size(), 1.0 / static_cast<double>(s.features.size()));
    }
    try {
      s.validate(family);
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("run.feature_points: ") + e.what());
    }
    cfg.features = std::move(s);
  }

  // per-kind checks
  for (int n : cfg.n)
    if (n < (cfg.setting == Setting::Supervised ? 0 : 1)) throw ConfigError("run.n values must be at least 1");
  if (cfg.mc_draws < 2) throw ConfigError("run.mc_draws must be at least 2");
  if (!cfg.epsilon_grid.empty()) {
    try {
      detail::check_grid(cfg.epsilon_grid);
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("run.epsilon_grid: ") + e.what());
    }
  }
  for (double g : cfg.gamma)
    if (!(g > 0.0)) throw ConfigError("run.gamma values must be positive");
  if (cfg.kind == ExperimentKind::Sgld) {
    try {
      cfg.sgld.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("sgld: ") + e.what());
    }
  }
  if ((cfg.kind == ExperimentKind::Dominance) && !family.is_sequence())
    throw ConfigError("dominance needs a sequence family");
  if (cfg.setting != Setting::Supervised && family.is_supervised() &&
      (cfg.kind == ExperimentKind::Regret || cfg.kind == ExperimentKind::Dominance))
    throw ConfigError("supervised families need run.setting = supervised");
  if (cfg.setting == Setting::Supervised && family.is_sequence())
    throw ConfigError("run.setting = supervised needs a supervised family");
  if (cfg.kind == ExperimentKind::Fisher && cfg.fisher_samples < static_cast<std::size_t>(d))
    throw ConfigError("run.samples must be at least the parameter dimension");
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// A finished run: the JSON report plus CSV side files (name -> contents).
struct RunResult {
  nlohmann::ordered_json report;
  std::map<std::string, std::string> csv;
  int exit_code = kExitOk;
};

namespace detail {

inline nlohmann::json to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline nlohmann::json number_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

inline std::string csv_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void run_regret(const ExperimentConfig& cfg, RunResult& out) {
  const auto& family = *cfg.family;
  const Mixture mix(family, cfg.prior);
  std::ostringstream csv;
  csv << "n,setting,method,value_bits,std_error,seed\n";
  for (std::size_t i = 0; i < cfg.n.size(); ++i) {
    const int n = cfg.n[i];
    const std::uint64_t seed = mix_seed(cfg.seed, i);
    RegretReport r;
    auto mc = [&] { return mc_regret(mix, cfg.theta0, n, cfg.setting, cfg.mc_draws, seed, cfg.features); };
    auto exact = [&] {
      switch (cfg.setting) {
        case Setting::Online: return exact_regret_online(mix, cfg.theta0, n);
        case Setting::Batch: return exact_regret_batch(mix, cfg.theta0, n);
        default:
          if (!cfg.features) throw NotAvailableError("exact supervised regret needs run.feature_points");
          return exact_regret_supervised(mix, cfg.theta0, *cfg.features, n);
      }
    };
    if (cfg.method == "mc") {
      r = mc();
    } else if (cfg.method == "exact") {
      r = exact();
    } else {
      try {
        r = exact();
      } catch (const SizeError&) {
        r = mc();
      } catch (const NotAvailableError&) {
        r = mc();
      }
    }
    nlohmann::ordered_json row;
    row["type"] = "regret";
    row["n"] = n;
    row["setting"] = to_string(r.setting);
    row["method"] = to_string(r.method);
    row["value_bits"] = number_or_null(r.value);
    row["std_error"] = r.std_error ? nlohmann::json(*r.std_error) : nlohmann::json(nullptr);
    row["seed"] = seed;
    out.report["rows"].push_back(row);
    csv << n << ',' << to_string(r.setting) << ',' << to_string(r.method) << ',' << csv_number(r.value) << ','
        << (r.std_error ? csv_number(*r.std_error) : "") << ',' << seed << '\n';
  }
  out.csv["regret"] = csv.str();
}

inline void run_bound(const ExperimentConfig& cfg, RunResult& out) {
  const auto& family = *cfg.family;
  std::ostringstream csv;
  csv << "n,epsilon_sq,weight,weight_lower,log_term,bound\n";
  for (std::size_t i = 0; i < cfg.n.size(); ++i) {
    const int n = cfg.n[i];
    const std::uint64_t seed = mix_seed(cfg.seed, i);
    const auto b = regret_bound(family, cfg.theta0, cfg.prior, n, cfg.setting, cfg.epsilon_grid, cfg.mc_draws, seed,
                                cfg.features);
    nlohmann::ordered_json row;
    row["type"] = "bound";
    row["n"] = n;
    row["setting"] = to_string(cfg.setting);
    row["bound_bits"] = number_or_null(b.bound);
    row["epsilon_sq"] = b.epsilon_sq;
    row["unbounded"] = b.unbounded;
    row["seed"] = seed;
    if (b.unbounded) {
      row["advice"] = "every grid point has zero estimated weight; use larger epsilon or more Monte-Carlo draws";
      out.report["flags"].push_back("unbounded_bound n=" + std::to_string(n));
      out.exit_code = kExitNumerical;
    }
    out.report["rows"].push_back(row);
    for (const auto& r : b.rows)
      csv << n << ',' << csv_number(r.epsilon_sq) << ',' << csv_number(r.weight) << ',' << csv_number(r.weight_lower)
          << ',' << csv_number(r.log_term) << ',' << csv_number(r.bound) << '\n';
  }
  out.csv["bound_table"] = csv.str();
}

inline void run_fisher(const ExperimentConfig& cfg, RunResult& out) {
  const auto& family = *cfg.family;
  std::ostringstream csv;
  csv << "index,eigenvalue\n";
  nlohmann::ordered_json row;
  row["type"] = "spectrum";
  row["seed"] = cfg.seed;
  Eigen::VectorXd spectrum;
  if (const auto* net = std::get_if<SoftmaxNet>(&family.spec())) {
    const auto res = fim_spectrum_experiment(cfg.dataset, *net, cfg.n_train, cfg.seed);
    spectrum = res.report.eigenvalues;
    row["dataset"] = to_string(cfg.dataset);
    row["n_train"] = cfg.n_train;
    row["train_steps"] = res.steps;
    row["converged"] = res.report.converged;
    row["final_loss"] = res.report.final_loss;
    row["tail_mass_ratio"] = res.report.tail_mass_ratio;
    row["mean_grad_norm"] = res.report.mean_grad_norm;
    row["effective_k"] = res.report.effective_k;
    if (!res.report.converged) out.report["flags"].push_back("training_not_converged");
  } else {
    const Matrix fim = empirical_fim(family, cfg.theta0, cfg.fisher_samples, cfg.seed);
    spectrum = eigen_spectrum(fim);
    row["samples"] = cfg.fisher_samples;
    if (family.has_analytic_fisher()) {
      const Matrix exact = family.analytic_fisher(cfg.theta0, 1);
      row["analytic_eigenvalues_nats"] = to_json(eigen_spectrum(exact));
      row["relative_frobenius_error"] = (fim - exact).norm() / exact.norm();
    }
    const Box box = prior_box(cfg.prior, family);
    const double radius = box.radius();
    row["radius"] = radius;
    for (int n : cfg.n) {
      const auto t1 = theorem1_bound(spectrum * static_cast<double>(n), static_cast<std::size_t>(n), radius);
      nlohmann::ordered_json b;
      b["n"] = n;
      b["applicable"] = t1.applicable;
      b["bound_bits"] = number_or_null(t1.bound_bits);
      b["epsilon_sq"] = t1.epsilon_sq;
      b["k"] = t1.k;
      const auto t2 = theorem2_check(spectrum, static_cast<std::size_t>(n), radius);
      b["tail_delta_nats"] = t2.delta;
      b["tail_delta_ok"] = t2.ok;
      if (!t1.applicable) out.report["flags"].push_back("theorem1_not_applicable n=" + std::to_string(n));
      row["theorem1"].push_back(b);
    }
  }
  row["eigenvalues_nats"] = to_json(spectrum);
  out.report["rows"].push_back(row);
  for (Eigen::Index i = 0; i < spectrum.size(); ++i) csv << i + 1 << ',' << csv_number(spectrum[i]) << '\n';
  out.csv["spectrum"] = csv.str();
}

inline void run_sgld(const ExperimentConfig& cfg, RunResult& out) {
  const auto& family = *cfg.family;
  std::ostringstream csv;
  const int d = family.dimension();
  csv << "index";
  for (int j = 0; j < d; ++j) csv << ",theta" << j;
  csv << '\n';
  for (std::size_t i = 0; i < cfg.n.size(); ++i) {
    const int n = cfg.n[i];
    const std::uint64_t data_seed = mix_seed(cfg.seed, 2 * i);
    const std::uint64_t chain_seed = mix_seed(cfg.seed, 2 * i + 1);
    const auto data = family.sample_sequence(cfg.theta0, static_cast<std::size_t>(n), data_seed);
    nlohmann::ordered_json row;
    row["type"] = "sgld";
    row["n"] = n;
    row["seed"] = chain_seed;
    row["data_seed"] = data_seed;
    try {
      const auto chain = sgld_chain(family, data, cfg.prior, cfg.sgld, chain_seed);
      ParamVector mean = ParamVector::Zero(d);
      for (const auto& t : chain.thetas) mean += t;
      mean /= static_cast<double>(chain.thetas.size());
      row["kept"] = chain.thetas.size();
      row["posterior_mean"] = to_json(mean);
      if (family.is_sequence()) {
        const auto ens = ensemble_predict(chain, family, data.symbols);
        row["ensemble_predictive"] = ens.probs;
        if (d <= 3) {
          const Mixture mix(family, cfg.prior);
          const auto grid = predict_batch(mix, data.symbols);
          row["mixture_predictive"] = grid.probs;
          row["tv_to_mixture"] = total_variation(ens, grid);
        }
      }
      if (i == 0)
        for (std::size_t k = 0; k < chain.thetas.size(); ++k) {
          csv << k;
          for (int j = 0; j < d; ++j) csv << ',' << csv_number(chain.thetas[k][j]);
          csv << '\n';
        }
    } catch (const InstabilityError& e) {
      row["diverged"] = true;
      row["error"] = e.what();
      out.report["flags"].push_back("sgld_diverged n=" + std::to_string(n));
      out.exit_code = kExitNumerical;
    }
    out.report["rows"].push_back(row);
  }
  out.csv["chain_trace"] = csv.str();
}

inline void run_dominance(const ExperimentConfig& cfg, RunResult& out) {
  const auto& family = *cfg.family;
  const Mixture mix(family, cfg.prior);
  const SequenceLearner alt =
      cfg.learner == "erm" ? erm_plugin_learner(family) : fixed_model_learner(family, cfg.fixed_theta);
  for (std::size_t i = 0; i < cfg.n.size(); ++i) {
    for (std::size_t j = 0; j < cfg.gamma.size(); ++j) {
      const std::uint64_t seed = mix_seed(cfg.seed, i * cfg.gamma.size() + j);
      const auto d = dominance_mass(mix, cfg.n[i], alt, cfg.gamma[j], cfg.mc_draws, seed);
      nlohmann::ordered_json row;
      row["type"] = "dominance";
      row["n"] = cfg.n[i];
      row["learner"] = cfg.learner;
      row["gamma"] = d.gamma;
      row["mass"] = d.mass;
      row["ci_halfwidth"] = d.ci_halfwidth;
      row["bound"] = std::pow(2.0, -d.gamma);
      row["draws"] = d.draws;
      row["seed"] = seed;
      out.report["rows"].push_back(row);
    }
  }
}

inline void run_deep_linear(const ExperimentConfig& cfg, RunResult& out) {
  const auto rows = deep_linear_spectrum(cfg.layers, cfg.dim, cfg.seeds, cfg.seed);
  std::ostringstream csv;
  csv << "layers,seed_index,condition_number\n";
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["type"] = "deep_linear";
    row["layers"] = r.layers;
    row["dim"] = cfg.dim;
    row["median_condition"] = number_or_null(r.median_condition);
    row["singular_values_first_seed"] = to_json(r.singular_values);
    row["seed"] = cfg.seed;
    out.report["rows"].push_back(row);
    for (std::size_t s = 0; s < r.conditions.size(); ++s)
      csv << r.layers << ',' << s << ',' << csv_number(r.conditions[s]) << '\n';
  }
  out.csv["deep_linear"] = csv.str();
}

}  // namespace detail

// Executes the experiment. Numerical failures are flagged in the report
// (exit code 3) and whatever finished is kept.
inline RunResult run(const ExperimentConfig& cfg) {
  RunResult out;
  auto& rep = out.report;
  rep["schema"] = kReportSchema;
  rep["experiment"] = to_string(cfg.kind);
  rep["name"] = cfg.name;
  rep["seed"] = cfg.seed;
  nlohmann::ordered_json echo = nlohmann::ordered_json::object();
  for (const auto& [section, body] : cfg.raw)
    for (const auto& [key, value] : body) echo[section][key] = value;
  rep["config"] = echo;
  rep["rows"] = nlohmann::ordered_json::array();
  rep["flags"] = nlohmann::ordered_json::array();
  const auto start = std::chrono::steady_clock::now();
  try {
    switch (cfg.kind) {
      case ExperimentKind::Regret: detail::run_regret(cfg, out); break;
      case ExperimentKind::Bound: detail::run_bound(cfg, out); break;
      case ExperimentKind::Fisher: detail::run_fisher(cfg, out); break;
      case ExperimentKind::Sgld: detail::run_sgld(cfg, out); break;
      case ExperimentKind::Dominance: detail::run_dominance(cfg, out); break;
      case ExperimentKind::DeepLinear: detail::run_deep_linear(cfg, out); break;
    }
  } catch (const Error& e) {
    rep["flags"].push_back(std::string("error: ") + e.what());
    out.exit_code = kExitNumerical;
  }
  rep["status"] = out.exit_code == kExitOk ? "ok" : "numerical_failure";
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  rep["timings"] = {{"wall_seconds", secs}, {"threads", num_threads()}};
  return out;
}

// Report with the timings object removed, for reproducibility comparisons.
inline std::string report_without_timings(nlohmann::ordered_json report) {
  report.erase("timings");
  return report.dump(2);
}

// Output directory: explicit override, then config, then MIXLAB_OUT, then
// ./mixlab_out.
inline std::filesystem::path output_dir(const ExperimentConfig& cfg, const std::string& override_dir = "") {
  if (!override_dir.empty()) return override_dir;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  if (const char* env = std::getenv("MIXLAB_OUT"); env && *env) return env;
  return "mixlab_out";
}

inline std::vector<std::filesystem::path> write_outputs(const RunResult& result, const std::string& name,
                                                        const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const auto json_path = dir / (name + ".json");
  std::ofstream(json_path) << result.report.dump(2) << '\n';
  written.push_back(json_path);
  for (const auto& [suffix, body] : result.csv) {
    const auto p = dir / (name + "_" + suffix + ".csv");
    std::ofstream(p) << body;
    written.push_back(p);
  }
  return written;
}

}  // namespace mixlab
