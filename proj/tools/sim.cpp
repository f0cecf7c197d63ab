// Command-line front end: single trials, Monte-Carlo campaigns and the
// Jacobian self-check.

#include "vtolnav/harness.hpp"
#include "vtolnav/io.hpp"
#include "vtolnav/jacobian_check.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using namespace vtolnav;

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  return os;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

ScenarioConfig load_or_default(const std::string& path) { return path.empty() ? ScenarioConfig{} : load_config(path); }

int cmd_run(const std::string& config_path, std::uint64_t seed, int campaign_trial, const std::string& out_dir) {
  ScenarioConfig cfg = load_or_default(config_path);
  cfg.seed = seed;
  if (campaign_trial >= 0) {
    // Reproduce trial i of a campaign with this seed: derived seed and random heading.
    cfg = campaign_trial_config(cfg, campaign_trial);
    seed = cfg.seed;
  }
  fs::create_directories(out_dir);
  const TrialLog log = run_trial(cfg, seed);
  const TrialMetrics m = compute_metrics(log, cfg.convergence_threshold);
  {
    auto os = open_output(fs::path(out_dir) / "trial.csv");
    write_trial_csv(os, log);
  }
  {
    auto os = open_output(fs::path(out_dir) / "summary.txt");
    write_trial_summary(os, m);
  }
  {
    auto os = open_output(fs::path(out_dir) / "config.json");
    os << to_json(cfg).dump(2) << '\n';
  }
  write_trial_summary(std::cout, m);
  return log.failed ? 3 : 0;
}

int cmd_montecarlo(const std::string& config_path, int trials, double gamma, const std::string& wind_in_loop,
                   int threads, std::uint64_t seed, bool seed_set, const std::string& out_dir) {
  ScenarioConfig cfg = load_or_default(config_path);
  cfg.trials = trials;
  cfg.noise.gamma = gamma;
  cfg.wind_in_loop = parse_bool(wind_in_loop);
  if (threads > 0) cfg.threads = threads;
  if (seed_set) cfg.seed = seed;
  cfg.validate();
  fs::create_directories(out_dir);
  const CampaignSummary s = run_campaign(cfg);
  {
    auto os = open_output(fs::path(out_dir) / "campaign.csv");
    write_campaign_csv(os, s);
  }
  {
    auto os = open_output(fs::path(out_dir) / "summary.txt");
    write_campaign_text(os, s);
  }
  {
    auto os = open_output(fs::path(out_dir) / "config.json");
    os << to_json(cfg).dump(2) << '\n';
  }
  write_campaign_text(std::cout, s);
  return 0;
}

int cmd_validate(int points, std::uint64_t seed, double tol) {
  const JacobianCheckResult r = validate_jacobians(points, seed);
  std::printf("points = %d\n", r.points);
  std::printf("max_rel_error_A = %.3e\n", r.max_rel_error_a);
  std::printf("max_rel_error_H = %.3e\n", r.max_rel_error_h);
  std::printf("max_rel_error_M = %.3e\n", r.max_rel_error_m);
  std::printf("tolerance = %.1e\n", tol);
  std::printf("%s\n", r.passed(tol) ? "PASS" : "FAIL");
  return r.passed(tol) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fixed-wing VTOL navigation and control simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;

  auto* run = app.add_subcommand("run", "Run one closed-loop trial");
  std::uint64_t run_seed = 1;
  run->add_option("--config", config_path, "Scenario config (JSON)")->check(CLI::ExistingFile);
  run->add_option("--seed", run_seed, "Trial seed")->required();
  run->add_option("--out", out_dir, "Output directory")->required();
  int campaign_trial = -1;
  run->add_option("--campaign-trial", campaign_trial, "Replay trial i of the campaign seeded by --seed")
      ->check(CLI::NonNegativeNumber);

  auto* mc = app.add_subcommand("montecarlo", "Run a Monte-Carlo campaign");
  int trials = 50;
  double gamma = 5.0;
  std::string wind_in_loop = "true";
  int threads = 0;
  std::uint64_t mc_seed = 1;
  mc->add_option("--config", config_path, "Scenario config (JSON)")->check(CLI::ExistingFile);
  mc->add_option("--trials", trials, "Number of trials")->check(CLI::PositiveNumber);
  mc->add_option("--gamma", gamma, "Noise scale factor")->check(CLI::NonNegativeNumber);
  mc->add_option("--wind-in-loop", wind_in_loop, "Feed the wind estimate to control (true|false)")
      ->check(CLI::IsMember({"true", "false", "1", "0", "yes", "no"}));
  mc->add_option("--threads", threads, "Worker threads (0 = all cores)");
  auto* mc_seed_opt = mc->add_option("--seed", mc_seed, "Campaign seed (overrides the config)");
  mc->add_option("--out", out_dir, "Output directory")->required();

  auto* val = app.add_subcommand("validate-jacobians", "Check A, H, M against finite differences");
  int points = 100;
  std::uint64_t val_seed = 7;
  double tol = 1e-5;
  val->add_option("--points", points, "Random linearization points")->check(CLI::PositiveNumber);
  val->add_option("--seed", val_seed, "Seed for the random points");
  val->add_option("--tol", tol, "Relative error tolerance");

  auto* dump = app.add_subcommand("print-config", "Print the built-in default config as JSON");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, run_seed, campaign_trial, out_dir);
    if (*mc) return cmd_montecarlo(config_path, trials, gamma, wind_in_loop, threads, mc_seed, mc_seed_opt->count() > 0,
                                   out_dir);
    if (*val) return cmd_validate(points, val_seed, tol);
    if (*dump) {
      std::cout << to_json(ScenarioConfig{}).dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
