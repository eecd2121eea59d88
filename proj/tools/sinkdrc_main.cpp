// Command-line front end: synthesis runs, ambiguity sweeps, out-of-sample
// comparisons, feasibility reports, sample generation, and rollouts.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "sinkdrc/experiment.hpp"

namespace fs = std::filesystem;
using namespace sinkdrc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInfeasible = 2;
constexpr int kExitSolverFailure = 3;
constexpr int kExitConfigError = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string strategy;
  std::string backend;
  int jobs = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_out = true) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")
      ->required();
  auto* out = cmd->add_option("--out", args.out_dir, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--seed", args.seed, "override the config seed")
      ->each([&](const std::string&) { args.seed_set = true; });
  cmd->add_option("--strategy", args.strategy, "outer | direct")
      ->check(CLI::IsMember({"outer", "direct"}));
  cmd->add_option("--backend", args.backend, "conic backend name");
  cmd->add_option("--jobs", args.jobs, "parallel workers")->check(CLI::PositiveNumber);
}

ExperimentConfig load_with_overrides(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args.config_path);
  if (args.seed_set) {
    cfg.seed = args.seed;
    if (cfg.samples.generated) cfg.samples.seed = args.seed;
    cfg.raw["seed"] = args.seed;
  }
  if (!args.strategy.empty()) {
    cfg.strategy = args.strategy == "outer" ? Strategy::OuterLambdaSearch
                                            : Strategy::DirectConic;
    cfg.raw["strategy"] = args.strategy;
  }
  if (!args.backend.empty()) {
    cfg.backend = args.backend;
    cfg.raw["backend"] = args.backend;
  }
  return cfg;
}

int cmd_synthesize(const CommonArgs& args) {
  ExperimentConfig cfg = load_with_overrides(args);
  const double rho = cfg.rho_grid.front();
  const double eps = cfg.eps_grid.front();
  auto samples = cfg.samples.load(cfg.system.s());
  auto bundle = synthesize_sinkhorn(cfg.request(rho, eps, samples));

  const fs::path dir(args.out_dir);
  write_manifest(dir, cfg, "synthesize");
  write_matrix_csv(dir / "phi_x.csv", bundle.map.PhiX);
  write_matrix_csv(dir / "phi_u.csv", bundle.map.PhiU);
  bool recovered = false;
  try {
    auto ctrl = recover_controller(cfg.system, bundle.map);
    write_matrix_csv(dir / "controller_k.csv", ctrl.K);
    recovered = true;
  } catch (const UnsupportedRecoveryError&) {
    // map-based evaluation remains available
  }
  json sol;
  sol["rho"] = rho;
  sol["eps"] = eps;
  sol["wc_cost"] = bundle.wc_cost;
  sol["lambda_star"] = bundle.lambda_star;
  sol["rho_min"] = bundle.rho_min;
  sol["achievability_residual"] = bundle.achievability;
  sol["controller_recovered"] = recovered;
  sol["solver"] = {{"backend", bundle.solver_report.backend},
                   {"status", conic::status_name(bundle.solver_report.status)},
                   {"iterations", bundle.solver_report.iterations},
                   {"wall_time", bundle.solver_report.wall_time}};
  std::ofstream(dir / "solution.json") << sol.dump(2) << "\n";
  std::cout << "wc_cost " << fmt_num(bundle.wc_cost) << "\nlambda_star "
            << fmt_num(bundle.lambda_star) << "\nwritten to " << dir << "\n";
  return kExitOk;
}

int cmd_sweep(const CommonArgs& args) {
  ExperimentConfig cfg = load_with_overrides(args);
  auto result = run_sweep(cfg, args.jobs);
  const fs::path dir(args.out_dir);
  write_manifest(dir, cfg, "sweep");
  write_sweep_csv(dir / "sweep.csv", result.records);
  if (cfg.samples.generated)
    write_matrix_csv(dir / "samples.csv", result.samples.trajectories,
                     sample_header(cfg.system));
  int ok = 0, infeasible = 0, failed = 0;
  for (const auto& r : result.records) {
    if (r.status == "ok")
      ++ok;
    else if (r.status == "infeasible")
      ++infeasible;
    else
      ++failed;
  }
  std::cout << "sweep: " << ok << " solved, " << infeasible << " infeasible, "
            << failed << " failed -> " << (dir / "sweep.csv") << "\n";
  return failed == 0 ? kExitOk : kExitSolverFailure;
}

int cmd_compare(const CommonArgs& args) {
  ExperimentConfig cfg = load_with_overrides(args);
  auto result = run_compare(cfg, args.jobs);
  const fs::path dir(args.out_dir);
  write_manifest(dir, cfg, "compare");
  write_compare_csv(dir, result);
  std::cout << "controller          rho      eps      median\n";
  for (const auto& s : result.summary) {
    std::printf("%-18s %-8.3g %-8.3g %.6f\n", s.controller.c_str(), s.rho, s.eps,
                s.median);
  }
  std::cout << "written to " << dir << "\n";
  return kExitOk;
}

int cmd_feasibility(const CommonArgs& args) {
  ExperimentConfig cfg = load_with_overrides(args);
  auto records = run_feasibility(cfg);
  std::cout << "eps            rho_min(closed)  rho_min(oracle)  method        agree\n";
  for (const auto& r : records)
    std::printf("%-14.6g %-16.9g %-16.9g %-13s %s\n", r.eps, r.rho_min_closed,
                r.rho_min_oracle, r.method.c_str(), r.agree ? "yes" : "no");
  if (!args.out_dir.empty()) {
    const fs::path dir(args.out_dir);
    write_manifest(dir, cfg, "feasibility");
    write_feasibility_csv(dir / "feasibility.csv", records);
  }
  for (const auto& r : records)
    if (!r.agree) return kExitSolverFailure;
  return kExitOk;
}

int cmd_gen_samples(const CommonArgs& args) {
  ExperimentConfig cfg = load_with_overrides(args);
  if (!cfg.samples.generated)
    throw ValidationError("gen-samples needs a generator block, not a path");
  auto samples = cfg.samples.load(cfg.system.s());
  const fs::path dir(args.out_dir);
  write_manifest(dir, cfg, "gen-samples");
  write_matrix_csv(dir / "samples.csv", samples.trajectories,
                   sample_header(cfg.system));
  std::cout << samples.count() << " trajectories of dimension " << samples.dim()
            << " -> " << (dir / "samples.csv") << "\n";
  return kExitOk;
}

int cmd_rollout(const CommonArgs& args, const std::string& solution_dir) {
  ExperimentConfig cfg = load_with_overrides(args);
  auto samples = cfg.samples.load(cfg.system.s());

  auto read_matrix = [](const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ValidationError("cannot open '" + file.string() + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
      rows.push_back(std::move(row));
    }
    Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (size_t r = 0; r < rows.size(); ++r)
      for (size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
    return m;
  };
  const fs::path sol(solution_dir);
  ClosedLoopMap map;
  map.PhiX = read_matrix(sol / "phi_x.csv");
  map.PhiU = read_matrix(sol / "phi_u.csv");
  const auto sys = build_stacked(cfg.system);
  if (achievability_residual(sys, map) > cfg.tolerances.achievability_tol)
    throw ValidationError("solution maps violate achievability for this system");

  const fs::path dir(args.out_dir);
  write_manifest(dir, cfg, "rollout");
  std::ofstream out(dir / "rollout.csv");
  out << "trajectory,realized_cost,map_cost\n";
  double mean = 0.0;
  for (int i = 0; i < samples.count(); ++i) {
    const Vector w = samples.sample(i);
    const double realized = rollout(cfg.system, cfg.cost, map, w).cost;
    const double via_map = (cfg.cost.Dhalf * map.stacked() * w).squaredNorm();
    out << i << ',' << fmt_num(realized) << ',' << fmt_num(via_map) << "\n";
    mean += realized / samples.count();
  }
  std::cout << "mean realized cost " << fmt_num(mean) << " over "
            << samples.count() << " trajectories -> " << (dir / "rollout.csv")
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributionally robust finite-horizon controller synthesis "
               "over entropic-transport ambiguity sets"};
  app.require_subcommand(1);

  CommonArgs syn_args, sweep_args, cmp_args, feas_args, gen_args, roll_args;
  std::string solution_dir;

  add_common(app.add_subcommand("synthesize", "solve one (rho, eps) instance"),
             syn_args);
  add_common(app.add_subcommand("sweep", "solve the full (rho, eps) grid"),
             sweep_args);
  add_common(app.add_subcommand("compare", "out-of-sample controller comparison"),
             cmp_args);
  add_common(app.add_subcommand("feasibility",
                                "radius thresholds: closed form vs oracle"),
             feas_args, /*needs_out=*/false);
  add_common(app.add_subcommand("gen-samples", "draw seeded noise trajectories"),
             gen_args);
  auto* roll = app.add_subcommand("rollout", "simulate a stored solution");
  add_common(roll, roll_args);
  roll->add_option("--solution", solution_dir,
                   "directory written by `synthesize`")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (app.got_subcommand("synthesize")) return cmd_synthesize(syn_args);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep_args);
    if (app.got_subcommand("compare")) return cmd_compare(cmp_args);
    if (app.got_subcommand("feasibility")) return cmd_feasibility(feas_args);
    if (app.got_subcommand("gen-samples")) return cmd_gen_samples(gen_args);
    if (app.got_subcommand("rollout")) return cmd_rollout(roll_args, solution_dir);
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\nrho_min " << fmt_num(e.rho_min)
              << "\n";
    return kExitInfeasible;
  } catch (const ValidationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const Error& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolverFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolverFailure;
  }
  return kExitConfigError;
}
