// Experiment drivers shared by the command-line tool and the verification
// suites: ambiguity sweeps, out-of-sample comparisons, feasibility reports,
// and the CSV/manifest output layer.
#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <thread>

#include "sinkdrc/config.hpp"

namespace sinkdrc {

// Full-precision scientific formatting for every numeric CSV field.
inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17e", v);
  return buf;
}

inline uint64_t fnv1a_hash(const std::string& text) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Run manifest embedded next to every output file set.
inline json make_manifest(const ExperimentConfig& cfg, const std::string& command) {
  json m;
  m["command"] = command;
  m["config_hash"] = fnv1a_hash(cfg.raw.dump());
  m["seed"] = cfg.seed;
  m["rng"] = "mt19937_64";
  m["strategy"] = cfg.strategy == Strategy::OuterLambdaSearch ? "outer" : "direct";
  m["backend"] = cfg.backend;
  m["tolerances"] = {{"lambda_rel_tol", cfg.tolerances.lambda_rel_tol},
                     {"solver_tol", cfg.tolerances.solver_tol},
                     {"achievability_tol", cfg.tolerances.achievability_tol},
                     {"feasibility_margin", cfg.tolerances.feasibility_margin}};
  m["rho_grid"] = cfg.rho_grid;
  m["eps_grid"] = cfg.eps_grid;
  m["version"] = "0.1.0";
  return m;
}

inline void write_manifest(const std::filesystem::path& dir,
                           const ExperimentConfig& cfg, const std::string& command) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "manifest.json");
  out << make_manifest(cfg, command).dump(2) << "\n";
}

inline void write_matrix_csv(const std::filesystem::path& file, const Matrix& m,
                             const std::string& header = "") {
  std::ofstream out(file);
  if (!header.empty()) out << header << "\n";
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c)
      out << (c ? "," : "") << fmt_num(m(r, c));
    out << "\n";
  }
}

// Header naming the stacked noise blocks: x0_1..x0_d, w0_1..w0_p, ...
inline std::string sample_header(const SystemSpec& spec) {
  std::string h;
  for (int i = 1; i <= spec.d; ++i) h += (h.empty() ? "" : ",") + ("x0_" + std::to_string(i));
  for (int t = 0; t + 1 < spec.N; ++t)
    for (int i = 1; i <= spec.p; ++i)
      h += ",w" + std::to_string(t) + "_" + std::to_string(i);
  return h;
}

// ---------------------------------------------------------------------------
// Sweep over the (rho, eps) grid.

struct SweepRecord {
  double rho = 0.0;
  double eps = 0.0;
  std::string status;  // "ok", "infeasible", or an error tag
  double wc_cost = std::numeric_limits<double>::quiet_NaN();
  double lambda_star = std::numeric_limits<double>::quiet_NaN();
  double rho_min = std::numeric_limits<double>::quiet_NaN();
  double solve_time = 0.0;
  std::string backend;
  double wasserstein_wc = std::numeric_limits<double>::quiet_NaN();
  double h2_ref_cost = std::numeric_limits<double>::quiet_NaN();
};

struct SweepResult {
  std::vector<SweepRecord> records;  // sorted by (rho, eps)
  SampleSet samples;
};

inline SweepResult run_sweep(const ExperimentConfig& cfg, int jobs = 1) {
  SweepResult result;
  result.samples = cfg.samples.load(cfg.system.s());

  // Reference columns: the eps = 0 cost per rho and the expected cost of the
  // H2 design under the reference measure.
  const auto h2_ref = synthesize_h2(cfg.system, cfg.cost,
                                    MomentSpec::from_reference(cfg.reference));
  std::vector<double> wass(cfg.rho_grid.size());
  for (size_t r = 0; r < cfg.rho_grid.size(); ++r)
    wass[r] =
        synthesize_wasserstein(cfg.request(cfg.rho_grid[r], 0.0, result.samples))
            .wc_cost;

  struct Cell {
    size_t ir, ie;
  };
  std::vector<Cell> cells;
  for (size_t ir = 0; ir < cfg.rho_grid.size(); ++ir)
    for (size_t ie = 0; ie < cfg.eps_grid.size(); ++ie) cells.push_back({ir, ie});
  result.records.resize(cells.size());

  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (size_t k = next.fetch_add(1); k < cells.size(); k = next.fetch_add(1)) {
      const auto [ir, ie] = cells[k];
      SweepRecord rec;
      rec.rho = cfg.rho_grid[ir];
      rec.eps = cfg.eps_grid[ie];
      rec.wasserstein_wc = wass[ir];
      rec.h2_ref_cost = h2_ref.wc_cost;
      rec.rho_min = feasibility_threshold(result.samples, cfg.reference, rec.eps);
      try {
        auto bundle =
            synthesize_sinkhorn(cfg.request(rec.rho, rec.eps, result.samples));
        rec.status = "ok";
        rec.wc_cost = bundle.wc_cost;
        rec.lambda_star = bundle.lambda_star;
        rec.solve_time = bundle.solver_report.wall_time;
        rec.backend = bundle.solver_report.backend;
      } catch (const InfeasibleError& e) {
        rec.status = "infeasible";
        rec.rho_min = e.rho_min;
      } catch (const Error& e) {
        rec.status = std::string("error: ") + e.what();
      }
      result.records[k] = std::move(rec);
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::sort(result.records.begin(), result.records.end(),
            [](const SweepRecord& a, const SweepRecord& b) {
              return a.rho != b.rho ? a.rho < b.rho : a.eps < b.eps;
            });
  return result;
}

inline void write_sweep_csv(const std::filesystem::path& file,
                            const std::vector<SweepRecord>& records) {
  std::ofstream out(file);
  out << "rho,eps,status,wc_cost,lambda_star,rho_min,solve_time,backend,"
         "wasserstein_wc,h2_ref_cost\n";
  for (const auto& r : records)
    out << fmt_num(r.rho) << ',' << fmt_num(r.eps) << ',' << r.status << ','
        << fmt_num(r.wc_cost) << ',' << fmt_num(r.lambda_star) << ','
        << fmt_num(r.rho_min) << ',' << fmt_num(r.solve_time) << ',' << r.backend
        << ',' << fmt_num(r.wasserstein_wc) << ',' << fmt_num(r.h2_ref_cost)
        << "\n";
}

// ---------------------------------------------------------------------------
// Out-of-sample comparison under the true distribution.

struct CompareRecord {
  int replication = 0;
  std::string controller;  // "nominal", "wasserstein", "sinkhorn", "h2_true"
  double rho = std::numeric_limits<double>::quiet_NaN();
  double eps = std::numeric_limits<double>::quiet_NaN();
  std::string status;
  double realized_cost = std::numeric_limits<double>::quiet_NaN();
};

struct CompareSummary {
  std::string controller;
  double rho = std::numeric_limits<double>::quiet_NaN();
  double eps = std::numeric_limits<double>::quiet_NaN();
  double median = 0.0, q25 = 0.0, q75 = 0.0;
  int count = 0;
};

struct CompareResult {
  std::vector<CompareRecord> records;
  std::vector<CompareSummary> summary;
};

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

inline CompareResult run_compare(const ExperimentConfig& cfg, int jobs = 1) {
  if (!cfg.true_distribution)
    throw ValidationError("compare requires a true_distribution block");
  const MomentSpec truth = *cfg.true_distribution;
  CompareResult result;
  std::mutex mu;

  const auto h2_true = synthesize_h2(cfg.system, cfg.cost, truth);

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int rep = next.fetch_add(1); rep < cfg.replications;
         rep = next.fetch_add(1)) {
      std::vector<CompareRecord> local;
      SampleSet samples = draw_gaussian_samples(
          cfg.samples.n > 0 ? cfg.samples.n : 4, truth.mean, truth.cov,
          cfg.seed + static_cast<uint64_t>(rep));
      auto push = [&](const std::string& name, double rho, double eps,
                      const std::string& status, double cost) {
        CompareRecord r;
        r.replication = rep;
        r.controller = name;
        r.rho = rho;
        r.eps = eps;
        r.status = status;
        r.realized_cost = cost;
        local.push_back(std::move(r));
      };

      auto nominal = synthesize_h2(cfg.system, cfg.cost,
                                   MomentSpec::from_samples(samples));
      push("nominal", std::numeric_limits<double>::quiet_NaN(),
           std::numeric_limits<double>::quiet_NaN(), "ok",
           evaluate_expected_cost(nominal.map, cfg.cost, truth));
      push("h2_true", std::numeric_limits<double>::quiet_NaN(),
           std::numeric_limits<double>::quiet_NaN(), "ok",
           evaluate_expected_cost(h2_true.map, cfg.cost, truth));

      for (double rho : cfg.rho_grid) {
        try {
          auto w = synthesize_wasserstein(cfg.request(rho, 0.0, samples));
          push("wasserstein", rho, 0.0, "ok",
               evaluate_expected_cost(w.map, cfg.cost, truth));
        } catch (const Error& e) {
          push("wasserstein", rho, 0.0, std::string("error: ") + e.what(),
               std::numeric_limits<double>::quiet_NaN());
        }
        for (double eps : cfg.eps_grid) {
          try {
            auto s = synthesize_sinkhorn(cfg.request(rho, eps, samples));
            push("sinkhorn", rho, eps, "ok",
                 evaluate_expected_cost(s.map, cfg.cost, truth));
          } catch (const InfeasibleError&) {
            push("sinkhorn", rho, eps, "infeasible",
                 std::numeric_limits<double>::quiet_NaN());
          } catch (const Error& e) {
            push("sinkhorn", rho, eps, std::string("error: ") + e.what(),
                 std::numeric_limits<double>::quiet_NaN());
          }
        }
      }
      std::lock_guard<std::mutex> lock(mu);
      for (auto& r : local) result.records.push_back(std::move(r));
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::sort(result.records.begin(), result.records.end(),
            [](const CompareRecord& a, const CompareRecord& b) {
              if (a.controller != b.controller) return a.controller < b.controller;
              if (a.rho != b.rho) return a.rho < b.rho;
              if (a.eps != b.eps) return a.eps < b.eps;
              return a.replication < b.replication;
            });

  // Group into summaries.
  std::map<std::tuple<std::string, double, double>, std::vector<double>> groups;
  for (const auto& r : result.records)
    if (r.status == "ok")
      groups[{r.controller, r.rho, r.eps}].push_back(r.realized_cost);
  for (const auto& [key, costs] : groups) {
    CompareSummary s;
    s.controller = std::get<0>(key);
    s.rho = std::get<1>(key);
    s.eps = std::get<2>(key);
    s.median = quantile(costs, 0.5);
    s.q25 = quantile(costs, 0.25);
    s.q75 = quantile(costs, 0.75);
    s.count = static_cast<int>(costs.size());
    result.summary.push_back(std::move(s));
  }
  return result;
}

inline void write_compare_csv(const std::filesystem::path& dir,
                              const CompareResult& result) {
  {
    std::ofstream out(dir / "compare.csv");
    out << "replication,controller,rho,eps,status,realized_cost\n";
    for (const auto& r : result.records)
      out << r.replication << ',' << r.controller << ',' << fmt_num(r.rho) << ','
          << fmt_num(r.eps) << ',' << r.status << ',' << fmt_num(r.realized_cost)
          << "\n";
  }
  {
    std::ofstream out(dir / "compare_summary.csv");
    out << "controller,rho,eps,median,q25,q75,count\n";
    for (const auto& s : result.summary)
      out << s.controller << ',' << fmt_num(s.rho) << ',' << fmt_num(s.eps) << ','
          << fmt_num(s.median) << ',' << fmt_num(s.q25) << ',' << fmt_num(s.q75)
          << ',' << s.count << "\n";
  }
}

// ---------------------------------------------------------------------------
// Feasibility report: closed form against the independent oracle.

struct FeasibilityRecord {
  double eps = 0.0;
  double rho_min_closed = 0.0;
  double rho_min_oracle = 0.0;
  std::string method;
  bool agree = false;
};

inline std::vector<FeasibilityRecord> run_feasibility(const ExperimentConfig& cfg,
                                                      double rel_tol = 1e-3) {
  auto samples = cfg.samples.load(cfg.system.s());
  std::vector<FeasibilityRecord> out;
  for (double eps : cfg.eps_grid) {
    FeasibilityRecord rec;
    rec.eps = eps;
    rec.rho_min_closed = feasibility_threshold(samples, cfg.reference, eps);
    if (eps > 0.0) {
      auto oracle = feasibility_oracle(samples, cfg.reference, eps);
      rec.rho_min_oracle = oracle.value;
      rec.method = oracle.method;
    } else {
      rec.rho_min_oracle = 0.0;
      rec.method = "exact";
    }
    rec.agree = std::abs(rec.rho_min_oracle - rec.rho_min_closed) <=
                rel_tol * std::max(1.0, std::abs(rec.rho_min_closed));
    out.push_back(rec);
  }
  return out;
}

inline void write_feasibility_csv(const std::filesystem::path& file,
                                  const std::vector<FeasibilityRecord>& records) {
  std::ofstream out(file);
  out << "eps,rho_min_closed_form,rho_min_oracle,method,agree\n";
  for (const auto& r : records)
    out << fmt_num(r.eps) << ',' << fmt_num(r.rho_min_closed) << ','
        << fmt_num(r.rho_min_oracle) << ',' << r.method << ','
        << (r.agree ? "yes" : "no") << "\n";
}

}  // namespace sinkdrc
