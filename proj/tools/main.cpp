// Command line driver: instance generation, flows, regularization solves,
// the three experiment sweeps, and the invariant check suite.

#include <CLI11.hpp>

#include "factorflow/analysis.hpp"
#include "factorflow/experiment.hpp"
#include "factorflow/flow.hpp"
#include "factorflow/instance.hpp"
#include "factorflow/normal_form.hpp"
#include "factorflow/regularizer.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace factorflow;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Vector parse_y(const std::vector<double>& y) {
  return Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
}

int cmd_gen(const std::string& type, int n, std::vector<int> ranks, double y_max,
            double spectrum_top, double spectrum_rest, std::vector<double> y_in,
            std::vector<double> gammas, std::uint64_t seed, const std::string& out) {
  Rng rng(seed);
  ProblemInstance inst;
  if (type == "generic") {
    inst = gen_generic(n, ranks, y_max, rng);
  } else if (type == "tame") {
    Vector y;
    if (!y_in.empty()) {
      y = parse_y(y_in);
    } else {
      y.resize(static_cast<Eigen::Index>(ranks.size()));
      for (int i = 0; i < y.size(); ++i) y(i) = rng.uniform_positive(y_max);
    }
    inst = gen_tame(n, ranks, spectrum_top, spectrum_rest, y, rng).first;
  } else if (type == "commuting") {
    if (gammas.empty()) gammas.assign(ranks.size(), 1.0);
    inst = gen_commuting_projections(n, ranks, gammas, rng);
  } else {
    throw std::invalid_argument("unknown instance type: " + type);
  }
  inst.seed = seed;
  save_instance(inst, out);
  RankSpreadReport rs = check_rank_spread(inst);
  std::cout << "wrote " << out << " (n=" << inst.n << ", q=" << inst.q << ", m=" << rs.m
            << ", rank spread " << (rs.ok ? "yes" : "no") << ")\n";
  return 0;
}

int cmd_flow(const std::string& instance_path, double delta, const std::string& coords,
             FlowOptions opts, std::uint64_t seed, const std::string& out,
             const std::string& state_out) {
  ProblemInstance inst = load_instance(instance_path);
  Rng rng(seed);
  Matrix U0 = rng.gaussian_matrix(inst.n, inst.n);
  U0 /= U0.norm();
  opts.abs_tol = std::min(opts.abs_tol, delta * opts.rel_tol);
  ConvergeResult cr;
  bool is_x = coords == "X";
  if (is_x) {
    cr = converge(inst, Matrix(delta * (U0 * U0.transpose())), Coordinates::X, opts);
  } else if (coords == "U") {
    cr = converge(inst, Matrix(std::sqrt(delta) * U0), Coordinates::U, opts);
  } else {
    throw std::invalid_argument("coords must be X or U");
  }
  export_trajectory_csv(cr.trajectory, out, is_x, state_out);
  std::cout << "converged=" << (cr.trajectory.converged ? "yes" : "no")
            << " t=" << cr.trajectory.terminal_time
            << " J=" << cr.trajectory.J_values.back();
  if (is_x) std::cout << " spectral_ratio=" << spectral_ratio(cr.state);
  std::cout << " -> " << out << "\n";
  return cr.trajectory.converged ? 0 : 1;
}

int cmd_solve(const std::string& instance_path, const std::string& mode, int k, int restarts,
              std::uint64_t seed, const std::string& out) {
  ProblemInstance inst = load_instance(instance_path);
  NormalForm nf = build_normal_form(inst);
  Rng rng(seed);
  RegSolution sol;
  if (mode == "tame") {
    TameCheck tc = check_tame(inst, 1e-6);
    if (!tc.certificate) {
      std::cerr << "instance is not tame: " << tc.reason << "\n";
      return 1;
    }
    sol = solve_min_tame(inst, *tc.certificate, nf);
  } else if (mode == "min") {
    sol = solve_min_numeric(nf, inst.y, k, restarts, rng);
  } else if (mode == "max") {
    sol = solve_max_numeric(nf, inst.y, k, restarts, rng);
  } else {
    throw std::invalid_argument("mode must be tame, min, or max");
  }
  save_solution(sol, out);
  std::cout << "K=" << sol.K_star << " grad=" << sol.grad_norm
            << " converged=" << (sol.converged ? "yes" : "no") << " -> " << out << "\n";
  return sol.converged ? 0 : 1;
}

int cmd_experiment(const std::string& which, const std::string& config_path,
                   std::vector<double> grid, int n_instances, double delta,
                   std::uint64_t seed, const std::string& out_dir, int jobs, int restarts) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = config_from_json(slurp(config_path));
  cfg.experiment = experiment_kind_from_string(which);
  if (!grid.empty()) cfg.grid = grid;
  if (n_instances > 0) cfg.instances_per_point = n_instances;
  if (delta > 0) cfg.delta = delta;
  if (seed) cfg.master_seed = seed;
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (jobs > 0) cfg.jobs = jobs;
  if (restarts > 0) cfg.restarts = restarts;

  if (cfg.grid.empty()) {
    switch (cfg.experiment) {
      case ExperimentKind::GapSweep: cfg.grid = {0.5, 1.0, 2.0, 4.0}; break;
      case ExperimentKind::DispersionSweep: cfg.grid = {0.0, 0.1, 0.25, 0.5}; break;
      case ExperimentKind::DeltaSweep:
        cfg.grid = {1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12};
        break;
      default: break;
    }
  }
  if (cfg.experiment == ExperimentKind::DispersionSweep ||
      cfg.experiment == ExperimentKind::DeltaSweep) {
    // both sweeps need m = n for a finite constrained maximum
    if (std::accumulate(cfg.ranks.begin(), cfg.ranks.end(), 0) != cfg.n) {
      cfg.n = 4;
      cfg.ranks = {2, 2};
    }
  }
  auto records = run_experiment(cfg);
  std::size_t failures = 0;
  for (const auto& r : records)
    if (!r.note.empty()) ++failures;
  auto aggs = aggregate_relative_error(records);
  for (const auto& a : aggs)
    std::cout << a.group << " sweep=" << a.sweep_value << " mean_rel_err=" << a.mean
              << " +- " << a.stderr_ << " (N=" << a.count << ")\n";
  if (failures) std::cerr << failures << " records failed\n";
  return failures == 0 ? 0 : 1;
}

int cmd_check(std::uint64_t seed, const std::string& out) {
  ExperimentConfig cfg;
  cfg.master_seed = seed ? seed : 1;
  auto checks = run_property_suite(cfg);
  int failed = 0;
  for (const auto& c : checks) {
    std::cout << (c.passed ? "[PASS] " : "[FAIL] ") << c.name;
    if (!c.passed) std::cout << ": " << c.detail;
    std::cout << "\n";
    if (!c.passed) ++failed;
  }
  if (!out.empty()) {
    std::ofstream f(out);
    f << property_report_json(checks);
    std::cout << "report -> " << out << "\n";
  }
  std::cout << (failed ? "FAILED " + std::to_string(failed) + " checks\n" : "all checks passed\n");
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"matrix-factorization gradient flows and their implicit regularization"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a problem instance");
  std::string gen_type = "generic", gen_out = "instance.json";
  int gen_n = 7;
  std::vector<int> gen_ranks{3, 2, 2};
  double gen_ymax = 5.0, gen_top = 2.0, gen_rest = 1.0;
  std::vector<double> gen_y, gen_gammas;
  std::uint64_t gen_seed = 1;
  gen->add_option("--type", gen_type, "generic | tame | commuting");
  gen->add_option("--n", gen_n, "ambient dimension");
  gen->add_option("--ranks", gen_ranks, "ranks of the A_i")->expected(-1);
  gen->add_option("--y-max", gen_ymax, "targets drawn uniformly on (0, y_max]");
  gen->add_option("--spectrum-top", gen_top, "leading eigenvalue (tame)");
  gen->add_option("--spectrum-rest", gen_rest, "bulk eigenvalue (tame)");
  gen->add_option("--y", gen_y, "explicit targets")->expected(-1);
  gen->add_option("--gammas", gen_gammas, "projection scales (commuting)")->expected(-1);
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--out", gen_out, "output path");

  // flow
  auto* flow = app.add_subcommand("flow", "integrate the gradient flow of an instance");
  std::string flow_inst, flow_coords = "X", flow_out = "trajectory.csv", flow_state;
  double flow_delta = 1e-10;
  FlowOptions flow_opts;
  std::uint64_t flow_seed = 1;
  bool flow_fixed_horizon = false;
  flow->add_option("--instance", flow_inst, "instance JSON")->required();
  flow->add_option("--delta", flow_delta, "initial-condition scale");
  flow->add_option("--coords", flow_coords, "X | U");
  flow->add_option("--t-max", flow_opts.t_max, "time horizon");
  flow->add_option("--grad-tol", flow_opts.grad_tol, "gradient stopping tolerance");
  flow->add_option("--rel-tol", flow_opts.rel_tol, "integrator relative tolerance");
  flow->add_option("--snapshot-every", flow_opts.snapshot_every, "snapshot interval");
  flow->add_flag("--fixed-horizon", flow_fixed_horizon,
                 "integrate to t-max instead of stopping on the gradient");
  flow->add_option("--seed", flow_seed, "seed for the random start");
  flow->add_option("--out", flow_out, "trajectory CSV path");
  flow->add_option("--state-out", flow_state, "binary state sidecar path");

  // solve
  auto* solve = app.add_subcommand("solve", "solve the trace regularization problem");
  std::string solve_inst, solve_mode = "min", solve_out = "solution.json";
  int solve_k = 1, solve_restarts = 20;
  std::uint64_t solve_seed = 1;
  solve->add_option("--instance", solve_inst, "instance JSON")->required();
  solve->add_option("--mode", solve_mode, "tame | min | max");
  solve->add_option("--k", solve_k, "factor rank");
  solve->add_option("--restarts", solve_restarts, "random restarts");
  solve->add_option("--seed", solve_seed, "rng seed");
  solve->add_option("--out", solve_out, "solution JSON path");

  // experiment
  auto* exp = app.add_subcommand("experiment", "run a sweep (gap | dispersion | delta)");
  std::string exp_which, exp_config, exp_out;
  std::vector<double> exp_grid;
  int exp_n = 0, exp_jobs = 0, exp_restarts = 0;
  double exp_delta = 0;
  std::uint64_t exp_seed = 0;
  exp->add_option("which", exp_which, "gap | dispersion | delta")->required();
  exp->add_option("--config", exp_config, "ExperimentConfig JSON");
  exp->add_option("--grid", exp_grid, "sweep values")->expected(-1);
  exp->add_option("--n-instances", exp_n, "instances per grid point");
  exp->add_option("--delta", exp_delta, "initial-condition scale");
  exp->add_option("--seed", exp_seed, "master seed");
  exp->add_option("--out", exp_out, "output directory");
  exp->add_option("--jobs", exp_jobs, "worker threads");
  exp->add_option("--restarts", exp_restarts, "solver restarts");

  // check
  auto* check = app.add_subcommand("check", "run the invariant suite");
  std::uint64_t check_seed = 0;
  std::string check_out;
  check->add_option("--seed", check_seed, "master seed");
  check->add_option("--out", check_out, "JSON report path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen(gen_type, gen_n, gen_ranks, gen_ymax, gen_top, gen_rest, gen_y,
                     gen_gammas, gen_seed, gen_out);
    if (flow->parsed()) {
      if (flow_fixed_horizon) flow_opts.grad_tol = 1e-300;
      return cmd_flow(flow_inst, flow_delta, flow_coords, flow_opts, flow_seed, flow_out,
                      flow_state);
    }
    if (solve->parsed())
      return cmd_solve(solve_inst, solve_mode, solve_k, solve_restarts, solve_seed, solve_out);
    if (exp->parsed())
      return cmd_experiment(exp_which, exp_config, exp_grid, exp_n, exp_delta, exp_seed,
                            exp_out, exp_jobs, exp_restarts);
    if (check->parsed()) return cmd_check(check_seed, check_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
