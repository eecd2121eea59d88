// JSON experiment configuration: plant, cost, sample source, reference
// measure, ambiguity grids and solver options. Matrices are nested arrays in
// row-major order; scalars broadcast (c -> c*I for covariances, constant
// vectors for means).
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sinkdrc/synthesis.hpp"

namespace sinkdrc {

using nlohmann::json;

namespace cfg {

inline Matrix parse_matrix(const json& j, int rows, int cols) {
  if (j.is_number()) {
    if (rows != cols)
      throw ValidationError("scalar shorthand needs a square matrix context");
    return j.get<double>() * Matrix::Identity(rows, cols);
  }
  if (!j.is_array() || j.empty())
    throw ValidationError("matrix must be a scalar or a nested array");
  Matrix m(j.size(), j.at(0).size());
  if (m.rows() != rows || m.cols() != cols)
    throw ValidationError("matrix has shape " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + ", expected " +
                          std::to_string(rows) + "x" + std::to_string(cols));
  for (int r = 0; r < m.rows(); ++r) {
    const auto& row = j.at(r);
    if (static_cast<int>(row.size()) != cols)
      throw ValidationError("ragged matrix row " + std::to_string(r));
    for (int c = 0; c < cols; ++c) m(r, c) = row.at(c).get<double>();
  }
  return m;
}

inline Vector parse_vector(const json& j, int size) {
  if (j.is_number()) return Vector::Constant(size, j.get<double>());
  if (!j.is_array()) throw ValidationError("vector must be a scalar or an array");
  if (static_cast<int>(j.size()) != size)
    throw ValidationError("vector has length " + std::to_string(j.size()) +
                          ", expected " + std::to_string(size));
  Vector v(size);
  for (int i = 0; i < size; ++i) v[i] = j.at(i).get<double>();
  return v;
}

inline SystemSpec parse_system(const json& j) {
  if (j.contains("preset")) {
    const std::string preset = j.at("preset");
    if (preset == "mass_spring")
      return SystemSpec::mass_spring(j.at("N").get<int>(), j.value("Ts", 1.0),
                                     j.value("k", 1.0), j.value("c", 1.0),
                                     j.value("mass", 1.0));
    throw ValidationError("unknown system preset '" + preset + "'");
  }
  const int N = j.at("N").get<int>();
  const int d = j.at("d").get<int>();
  const int m = j.at("m").get<int>();
  const int p = j.at("p").get<int>();
  auto parse_list = [&](const json& mats, int rows, int cols) {
    std::vector<Matrix> out;
    // single matrix = time-invariant shorthand
    if (mats.is_number() || (mats.is_array() && !mats.empty() && mats.at(0).is_array() &&
                             !mats.at(0).empty() && mats.at(0).at(0).is_number()))
      out.assign(N - 1, parse_matrix(mats, rows, cols));
    else
      for (const auto& mj : mats) out.push_back(parse_matrix(mj, rows, cols));
    return out;
  };
  SystemSpec spec;
  spec.N = N;
  spec.d = d;
  spec.m = m;
  spec.p = p;
  spec.A = parse_list(j.at("A"), d, d);
  spec.B = parse_list(j.at("B"), d, m);
  spec.E = parse_list(j.at("E"), d, p);
  spec.validate();
  return spec;
}

inline CostSpec parse_cost(const json& j, const SystemSpec& spec) {
  if (!j.is_object() || j.contains("type")) {
    if (!j.is_object() || j.at("type") == "identity") return CostSpec::identity(spec);
    throw ValidationError("unknown cost type");
  }
  if (j.contains("D"))
    return CostSpec::from_matrix(
        parse_matrix(j.at("D"), spec.N * (spec.d + spec.m), spec.N * (spec.d + spec.m)));
  return CostSpec::from_weights(spec, j.value("state_weight", 1.0),
                                j.value("input_weight", 1.0));
}

}  // namespace cfg

struct SampleSource {
  // either a CSV path or generator parameters
  std::string path;
  int n = 0;
  Vector mean;
  Matrix cov;
  uint64_t seed = 0;
  bool generated = false;

  SampleSet load(int s_dim) const;
};

struct ExperimentConfig {
  SystemSpec system;
  CostSpec cost;
  SampleSource samples;
  GaussianReference reference;
  std::vector<double> rho_grid;
  std::vector<double> eps_grid;
  Strategy strategy = Strategy::OuterLambdaSearch;
  std::string backend = "default";
  SynthesisTolerances tolerances;
  std::optional<MomentSpec> true_distribution;
  int replications = 20;
  uint64_t seed = 1;
  json raw;  // canonical source, hashed into the manifest

  SynthesisRequest request(double rho, double eps, const SampleSet& set) const {
    SynthesisRequest req;
    req.system = system;
    req.cost = cost;
    req.samples = set;
    req.ref = reference;
    req.amb = {rho, eps};
    req.strategy = strategy;
    req.backend = backend;
    req.tol = tolerances;
    return req;
  }
};

inline SampleSet SampleSource::load(int s_dim) const {
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open sample file '" + path + "'");
    std::string line;
    if (!std::getline(in, line))
      throw ValidationError("sample file '" + path + "' is empty");
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ValidationError("sample file has a header but no rows");
    SampleSet set;
    set.trajectories.resize(rows.size(), rows.front().size());
    for (size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<int>(rows[r].size()) != set.dim())
        throw ValidationError("ragged sample row " + std::to_string(r));
      for (int c = 0; c < set.dim(); ++c) set.trajectories(r, c) = rows[r][c];
    }
    set.validate(s_dim);
    return set;
  }
  SampleSet set = draw_gaussian_samples(n, mean, cov, seed);
  set.validate(s_dim);
  return set;
}

inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.system = cfg::parse_system(j.at("system"));
  const int s = cfg.system.s();
  cfg.cost = j.contains("cost") ? cfg::parse_cost(j.at("cost"), cfg.system)
                                : CostSpec::identity(cfg.system);

  const auto& ref = j.at("reference");
  cfg.reference = GaussianReference::make(
      cfg::parse_vector(ref.value("mean", json(0.0)), s),
      cfg::parse_matrix(ref.at("cov"), s, s));

  const auto& sj = j.at("samples");
  if (sj.contains("path")) {
    cfg.samples.path = sj.at("path");
  } else {
    cfg.samples.n = sj.at("n").get<int>();
    cfg.samples.mean = cfg::parse_vector(sj.value("mean", json(0.0)), s);
    cfg.samples.cov = cfg::parse_matrix(sj.at("cov"), s, s);
    cfg.samples.seed = sj.value("seed", 0);
    cfg.samples.generated = true;
  }

  auto parse_grid = [](const json& g) {
    std::vector<double> out;
    if (g.is_number()) {
      out.push_back(g.get<double>());
    } else if (g.is_array()) {
      for (const auto& v : g) out.push_back(v.get<double>());
    } else if (g.is_object()) {
      const double lo = g.at("log_min").get<double>();
      const double hi = g.at("log_max").get<double>();
      const int pts = g.at("points").get<int>();
      if (lo <= 0.0 || hi < lo || pts < 1)
        throw ValidationError("malformed logarithmic grid");
      for (int i = 0; i < pts; ++i)
        out.push_back(pts == 1 ? lo
                               : std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) *
                                                             i / (pts - 1)));
    } else {
      throw ValidationError("grid must be a number, array, or log-grid object");
    }
    if (out.empty()) throw ValidationError("empty parameter grid");
    return out;
  };
  cfg.rho_grid = parse_grid(j.at("rho"));
  cfg.eps_grid = parse_grid(j.at("eps"));

  const std::string strategy = j.value("strategy", "outer");
  if (strategy == "outer")
    cfg.strategy = Strategy::OuterLambdaSearch;
  else if (strategy == "direct")
    cfg.strategy = Strategy::DirectConic;
  else
    throw ValidationError("strategy must be 'outer' or 'direct'");
  cfg.backend = j.value("backend", "default");

  if (j.contains("tolerances")) {
    const auto& t = j.at("tolerances");
    cfg.tolerances.lambda_rel_tol =
        t.value("lambda_rel_tol", cfg.tolerances.lambda_rel_tol);
    cfg.tolerances.solver_tol = t.value("solver_tol", cfg.tolerances.solver_tol);
    cfg.tolerances.achievability_tol =
        t.value("achievability_tol", cfg.tolerances.achievability_tol);
    cfg.tolerances.feasibility_margin =
        t.value("feasibility_margin", cfg.tolerances.feasibility_margin);
  }

  if (j.contains("true_distribution")) {
    const auto& t = j.at("true_distribution");
    cfg.true_distribution = MomentSpec::make(
        cfg::parse_vector(t.value("mean", json(0.0)), s),
        cfg::parse_matrix(t.at("cov"), s, s));
  }
  cfg.replications = j.value("replications", 20);
  cfg.seed = j.value("seed", 1);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config parse error: " + std::string(e.what()));
  }
  return parse_config(j);
}

}  // namespace sinkdrc
