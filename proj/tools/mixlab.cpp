#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "mixlab/acceptance.hpp"
#include "mixlab/report.hpp"

namespace {

std::string to_ini(const std::map<std::string, std::map<std::string, std::string>>& raw) {
  std::ostringstream os;
  for (const auto& [section, body] : raw) {
    os << '[' << section << "]\n";
    for (const auto& [k, v] : body) os << k << " = " << v << '\n';
  }
  return os.str();
}

struct Globals {
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string out;
};

int run_config_text(const std::string& text, const Globals& g) {
  mixlab::ExperimentConfig cfg;
  try {
    cfg = mixlab::parse_config_text(text);
    if (g.seed) {
      auto raw = cfg.raw;
      raw["experiment"]["seed"] = std::to_string(*g.seed);
      cfg = mixlab::parse_config_text(to_ini(raw));
    }
  } catch (const mixlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return mixlab::kExitConfig;
  }
  const auto result = mixlab::run(cfg);
  const auto dir = mixlab::output_dir(cfg, g.out);
  for (const auto& p : mixlab::write_outputs(result, cfg.name, dir)) std::cout << "wrote " << p.string() << '\n';
  for (const auto& f : result.report["flags"]) std::cerr << "flag: " << f.get<std::string>() << '\n';
  return result.exit_code;
}

int run_verify(const std::string& level_name, const Globals& g) {
  const auto level = level_name == "full" ? mixlab::acceptance::Level::Full : mixlab::acceptance::Level::Fast;
  nlohmann::ordered_json report;
  report["schema"] = mixlab::kReportSchema;
  report["experiment"] = "verify";
  report["level"] = level_name;
  report["rows"] = nlohmann::ordered_json::array();
  bool all = true;
  double total = 0.0;
  for (int id = 1; id <= static_cast<int>(mixlab::acceptance::all_criteria().size()); ++id) {
    const auto r = mixlab::acceptance::run_criterion(id, level);
    std::cout << mixlab::acceptance::format_line(r) << std::endl;
    all = all && r.passed;
    total += r.seconds;
    report["rows"].push_back({{"type", "criterion"}, {"id", r.id}, {"name", r.name}, {"passed", r.passed},
                              {"detail", r.detail}, {"seed", "fixed per criterion"}});
  }
  report["status"] = all ? "ok" : "acceptance_failure";
  report["timings"] = {{"wall_seconds", total}, {"threads", g.threads}};
  mixlab::ExperimentConfig cfg;
  const auto dir = mixlab::output_dir(cfg, g.out);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "verify.json") << report.dump(2) << '\n';
  std::cout << (all ? "all criteria passed" : "some criteria failed") << '\n';
  return all ? mixlab::kExitOk : mixlab::kExitAcceptance;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-learner regret laboratory"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the experiment seed");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::Range(1u, 1024u));
  app.add_option("--out", g.out, "Output directory (default: $MIXLAB_OUT or ./mixlab_out)");

  auto* run_cmd = app.add_subcommand("run", "Run an experiment config");
  std::string config_path;
  run_cmd->add_option("config", config_path, "INI config file")->required();
  run_cmd->fallthrough();

  auto* verify_cmd = app.add_subcommand("verify", "Run the acceptance suite");
  std::string level = "fast";
  verify_cmd->add_option("--level", level)->check(CLI::IsMember({"fast", "full"}));
  verify_cmd->fallthrough();

  auto* spectrum_cmd = app.add_subcommand("spectrum", "Fisher spectrum of a small softmax net");
  std::string dataset = "structured";
  int inputs = 8, hidden = 8, classes = 3;
  std::size_t n_train = 200;
  spectrum_cmd->add_option("--dataset", dataset)->check(CLI::IsMember({"structured", "random_labels", "random_inputs"}));
  spectrum_cmd->add_option("--inputs", inputs);
  spectrum_cmd->add_option("--hidden", hidden);
  spectrum_cmd->add_option("--classes", classes);
  spectrum_cmd->add_option("--n-train", n_train);
  spectrum_cmd->fallthrough();

  auto* sgld_cmd = app.add_subcommand("sgld", "SGLD posterior sampling for a Bernoulli source");
  std::string sgld_theta = "0.6", sgld_n = "50";
  double step_size = 1e-3;
  std::size_t steps = 110000;
  sgld_cmd->add_option("--theta0", sgld_theta);
  sgld_cmd->add_option("--n", sgld_n);
  sgld_cmd->add_option("--step-size", step_size);
  sgld_cmd->add_option("--steps", steps);
  sgld_cmd->fallthrough();

  auto* bound_cmd = app.add_subcommand("bound", "Weight-based regret bound");
  std::string family = "bernoulli", theta = "0.5", ns = "2,8,32,128", setting = "online";
  std::size_t mc_draws = 100000;
  bound_cmd->add_option("--family", family)->check(CLI::IsMember({"bernoulli", "categorical"}));
  bound_cmd->add_option("--theta0", theta);
  bound_cmd->add_option("--n", ns);
  bound_cmd->add_option("--setting", setting)->check(CLI::IsMember({"online", "batch"}));
  bound_cmd->add_option("--mc-draws", mc_draws);
  bound_cmd->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mixlab::kExitConfig;
  }
  if (*seed_opt) g.seed = seed;
  mixlab::set_num_threads(g.threads);

  if (*run_cmd) {
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "config error: cannot read '" << config_path << "'\n";
      return mixlab::kExitConfig;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return run_config_text(ss.str(), g);
  }
  if (*verify_cmd) return run_verify(level, g);

  std::ostringstream ini;
  if (*spectrum_cmd) {
    ini << "[experiment]\nkind = fisher\nname = spectrum_" << dataset << "\n"
        << "[family]\nname = softmax_net\ninputs = " << inputs << "\nhidden = " << hidden << "\nclasses = " << classes
        << "\n[run]\ndataset = " << dataset << "\nn_train = " << n_train << "\n";
  } else if (*sgld_cmd) {
    ini << "[experiment]\nkind = sgld\nname = sgld\n[family]\nname = bernoulli\n[prior]\nkind = uniform\n"
        << "[run]\ntheta0 = " << sgld_theta << "\nn = " << sgld_n << "\nstep_size = " << step_size
        << "\nsteps = " << steps << "\n";
  } else {
    ini << "[experiment]\nkind = bound\nname = bound_" << family << "\n[family]\nname = " << family << "\n"
        << "[prior]\nkind = uniform\ngrid = " << (family == "bernoulli" ? 1001 : 201) << "\n"
        << "[run]\ntheta0 = " << theta << "\nn = " << ns << "\nsetting = " << setting << "\nmc_draws = " << mc_draws
        << "\n";
  }
  return run_config_text(ini.str(), g);
}
