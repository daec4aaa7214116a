#include "horloop/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "horloop/error.hpp"
#include "horloop/extremals.hpp"
#include "horloop/paths.hpp"
#include "horloop/rng.hpp"

namespace horloop::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

double parse_real(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ConfigError(key + ": not a number: '" + text + "'");
  return v;
}

int parse_int(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ConfigError(key + ": not an integer: '" + text + "'");
  return static_cast<int>(v);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Ordered key=value lines.
class Summary {
 public:
  void add(const std::string& key, const std::string& value) { lines_.emplace_back(key, value); }
  void add(const std::string& key, double value) { add(key, fmt(value)); }
  void add(const std::string& key, int value) { add(key, std::to_string(value)); }
  void add(const std::string& key, std::size_t value) { add(key, std::to_string(value)); }
  void add(const std::string& key, bool value) { add(key, std::string(value ? "true" : "false")); }
  void add_vector(const std::string& prefix, const Vec& v) {
    for (int i = 0; i < v.size(); ++i) add(prefix + "_" + std::to_string(i + 1), v(i));
  }
  void add_vector(const std::string& prefix, const IVec& v) {
    for (int i = 0; i < v.size(); ++i) add(prefix + "_" + std::to_string(i + 1), v(i));
  }
  std::string str() const {
    std::string out;
    for (const auto& [k, v] : lines_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  std::vector<std::pair<std::string, std::string>> lines_;
};

struct Outcome {
  int code = kExitOk;
  std::string status = "converged";
  std::string reason = "ok";
};

using Files = std::vector<std::pair<std::string, std::string>>;

void write_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

SolverConfig solver_config(const Config& c) {
  SolverConfig s;
  s.substeps = c.integer("grid.S", s.substeps);
  s.tol_loop = c.real("solver.tol_loop", s.tol_loop);
  s.tol_grad = c.real("solver.tol_grad", s.tol_grad);
  s.tol_const = c.real("solver.tol_const", s.tol_const);
  s.cond_max = c.real("solver.cond_max", s.cond_max);
  s.max_iter = c.integer("solver.max_iter", s.max_iter);
  s.step0 = c.real("solver.step0", s.step0);
  s.backtrack = c.real("solver.backtrack", s.backtrack);
  s.armijo = c.real("solver.armijo", s.armijo);
  s.certificate.tol_geo = c.real("solver.tol_geo", s.certificate.tol_geo);
  s.certificate.tol_speed = c.real("solver.tol_speed", s.certificate.tol_speed);
  s.certificate.tol_loop = c.real("solver.tol_certificate_loop", s.certificate.tol_loop);
  s.certificate.tol_const = s.tol_const;
  return s;
}

int intervals(const Config& c) { return c.integer("grid.N", 64); }

std::uint64_t rng_seed(const Config& c) {
  const std::string text = c.text("run.rng_seed", "1");
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ConfigError("run.rng_seed: not an unsigned integer");
  return v;
}

IVec seed_class(const Model& model, const Config& c) {
  if (!model.has_lattice()) return IVec::Zero(0);
  if (!c.has("seed.class")) {
    IVec k = IVec::Zero(model.dim);
    k(0) = 1;
    return k;
  }
  const std::vector<int> v = c.integers("seed.class");
  if (static_cast<int>(v.size()) != model.dim) throw RankMismatch("seed.class has the wrong length");
  return Eigen::Map<const IVec>(v.data(), model.dim);
}

std::string curve_csv(const Model& model, const Loop& loop, int substeps) {
  const HorizontalPath path = integrate(model, loop.control, loop.basepoint, substeps);
  std::ostringstream os;
  write_path_csv(os, model, path,
                 model.has_lattice() ? std::optional<IVec>(loop.klass) : std::nullopt, substeps);
  return os.str();
}

std::string trace_csv(const SolveTrace& trace) {
  std::ostringstream os;
  os << "iteration,energy,grad_norm,constraint_norm\n";
  for (std::size_t i = 0; i < trace.iterates.size(); ++i) {
    const TraceEntry& e = trace.iterates[i];
    os << i << ',' << fmt(e.energy) << ',' << fmt(e.grad_norm) << ',' << fmt(e.constraint_norm) << '\n';
  }
  return os.str();
}

void add_report(Summary& s, const GeodesicReport& r) {
  s.add("lagrange_residual_control", r.lagrange_residual_control);
  s.add("lagrange_residual_base", r.lagrange_residual_base);
  s.add("closure_residual", r.closure_residual);
  s.add("speed_variation", r.speed_variation);
  s.add("mean_speed", r.mean_speed);
  s.add("constant", r.constant);
  s.add("certified", r.certified);
  s.add_vector("multiplier", r.multiplier);
}

Outcome solve_status(SolveStatus status, const GeodesicReport& report) {
  Outcome o;
  if (status != SolveStatus::converged) {
    o.code = kExitNotConverged;
    o.status = to_string(status);
    o.reason = status == SolveStatus::stalled ? "line search made no progress"
                                              : "iteration limit reached";
  } else if (!report.certified) {
    o.code = kExitNotConverged;
    o.status = "not_certified";
    o.reason = report.constant ? "constant curve: not a geodesic" : "lagrange residual above tolerance";
  }
  return o;
}

Outcome cmd_solve_min(const Model& model, const Config& c, Summary& s, Files& files) {
  const SolverConfig sc = solver_config(c);
  Loop seed;
  if (c.has("seed.file")) {
    std::ifstream in(c.text("seed.file", ""));
    if (!in) throw ConfigError("cannot open seed.file");
    seed = read_loop_csv(in, model);
  } else {
    SplitMix64 rng(rng_seed(c));
    seed = random_loop_in_class(model, seed_class(model, c), intervals(c), rng,
                                c.real("seed.amplitude", 0.5), sc);
  }
  s.add("seed_energy", loop_energy(seed));
  const MinimizeResult r = minimize_in_class(model, seed, sc);
  const TraceEntry& last = r.trace.iterates.back();
  s.add("energy", loop_energy(r.loop));
  s.add("grad_norm", last.grad_norm);
  s.add("constraint_norm", last.constraint_norm);
  s.add("iterations", r.trace.iterates.size() - 1);
  s.add_vector("klass", r.loop.klass);
  s.add_vector("x0", r.loop.basepoint);
  add_report(s, r.report);
  files.emplace_back("curve.csv", curve_csv(model, r.loop, sc.substeps));
  files.emplace_back("trace.csv", trace_csv(r.trace));
  return solve_status(r.trace.status, r.report);
}

Sweep build_sweep(const Model& model, const Config& c, const SolverConfig& sc, SplitMix64& rng) {
  const std::string kind = c.text("sweep.kind", model.has_lattice() ? "small" : "latitude");
  const int P = c.integer("sweep.P", 32);
  const int N = intervals(c);
  Sweep sweep;
  if (kind == "latitude") {
    sweep = latitude_sweep(model, P, N, c.real("sweep.margin", 0.15), sc);
  } else if (kind == "constant") {
    sweep = constant_sweep(model, P, N);
  } else if (kind == "small") {
    sweep = small_loop_sweep(model, P, N, c.real("sweep.energy", 1e-4), rng);
  } else {
    throw ConfigError("sweep.kind must be latitude, constant or small");
  }
  if (c.has("sweep.include_class")) {
    const std::vector<int> v = c.integers("sweep.include_class");
    if (static_cast<int>(v.size()) != model.dim) throw RankMismatch("sweep.include_class has the wrong length");
    const IVec k = Eigen::Map<const IVec>(v.data(), model.dim);
    sweep.loops.push_back(random_loop_in_class(model, k, N, rng, c.real("seed.amplitude", 0.5), sc));
  }
  return sweep;
}

Outcome cmd_solve_minmax(const Model& model, const Config& c, Summary& s, Files& files) {
  MinmaxConfig mc;
  mc.solver = solver_config(c);
  mc.band_frac = c.real("sweep.band_frac", mc.band_frac);
  mc.mesh_bound = c.real("sweep.mesh_bound", mc.mesh_bound);
  mc.epsilon_contract = c.real("contract.epsilon", mc.epsilon_contract);
  mc.max_loops = c.integer("sweep.max_loops", mc.max_loops);
  SplitMix64 rng(rng_seed(c));
  const Sweep sweep = build_sweep(model, c, mc.solver, rng);
  s.add("initial_loops", sweep.loops.size());
  const MinmaxResult r = minmax_sweep(model, sweep, mc);
  const TraceEntry& last = r.trace.iterates.back();
  s.add("level", r.level);
  s.add("energy", loop_energy(r.critical));
  s.add("grad_norm", last.grad_norm);
  s.add("constraint_norm", last.constraint_norm);
  s.add("iterations", r.trace.iterates.size() - 1);
  s.add("loops", r.sweep.loops.size());
  s.add("tail_spread", tail_spread(r.trace));
  s.add_vector("x0", r.critical.basepoint);
  add_report(s, r.report);
  files.emplace_back("curve.csv", curve_csv(model, r.critical, mc.solver.substeps));
  files.emplace_back("trace.csv", trace_csv(r.trace));
  std::ostringstream sw;
  sw << "index,energy\n";
  for (std::size_t i = 0; i < r.sweep.loops.size(); ++i) sw << i << ',' << fmt(loop_energy(r.sweep.loops[i])) << '\n';
  files.emplace_back("sweep.csv", sw.str());
  return solve_status(r.trace.status, r.report);
}

Vec vector_of(const Config& c, const std::string& key, int dim, bool required) {
  if (!c.has(key)) {
    if (required) throw ConfigError(key + " is required");
    return Vec::Zero(dim);
  }
  const std::vector<double> v = c.reals(key);
  if (static_cast<int>(v.size()) != dim) throw RankMismatch(key + " has the wrong length");
  return Eigen::Map<const Vec>(v.data(), dim);
}

Outcome cmd_shoot(const Model& model, const Config& c, Summary& s, Files& files) {
  ShootConfig sh;
  const SolverConfig sc = solver_config(c);
  sh.steps = c.integer("shoot.steps", sh.steps);
  sh.tol_shoot = c.real("shoot.tol_shoot", sh.tol_shoot);
  sh.max_iter = c.integer("shoot.max_iter", sh.max_iter);
  sh.intervals = intervals(c);
  sh.substeps = sc.substeps;
  sh.certificate = sc.certificate;
  const ExtremalState guess{vector_of(c, "shoot.x0", model.dim, false),
                            vector_of(c, "shoot.lam0", model.dim, true)};
  const ShootResult r = shoot_closed(model, guess, c.real("shoot.period", 1.0), sh);
  s.add("length", r.length);
  s.add("energy", r.report.energy);
  s.add("periodicity_residual", r.periodicity_residual);
  s.add("iterations", r.history.size() - 1);
  s.add_vector("klass", r.klass);
  s.add_vector("x0", r.state.x);
  s.add_vector("lam0", r.state.lam);
  add_report(s, r.report);
  Loop loop{r.control, r.state.x, model.has_lattice() ? r.klass : IVec::Zero(0)};
  files.emplace_back("curve.csv", curve_csv(model, loop, sc.substeps));
  Outcome o;
  if (!r.report.certified) {
    o.code = kExitNotConverged;
    o.status = "not_certified";
    o.reason = "lagrange residual above tolerance";
  }
  return o;
}

Outcome cmd_verify(const Model& model, const Config& c, Summary& s, Files&) {
  const SolverConfig sc = solver_config(c);
  if (!c.has("verify.loop_file")) throw ConfigError("verify.loop_file is required");
  std::ifstream in(c.text("verify.loop_file", ""));
  if (!in) throw ConfigError("cannot open verify.loop_file");
  const Loop loop = read_loop_csv(in, model);
  std::optional<Vec> lam;
  if (c.has("verify.lam")) lam = vector_of(c, "verify.lam", model.dim, true);
  const GeodesicReport r =
      lagrange_residual(model, loop.control, loop.basepoint, lam, sc.certificate, sc.substeps, true);
  s.add("energy", r.energy);
  add_report(s, r);
  Outcome o;
  o.status = "certified";
  if (r.constant) {
    o = {kExitNotConverged, "rejected", "constant curve: not a geodesic"};
  } else if (!r.certified) {
    o = {kExitNotConverged, "rejected", "lagrange residual above tolerance"};
  }
  return o;
}

Vec random_point(const Model& model, SplitMix64& rng) {
  Vec x(model.dim);
  const double half = model.has_lattice() ? 0.5 * model.scale : 0.5;
  for (int i = 0; i < model.dim; ++i) x(i) = rng.uniform(-half, half);
  return x;
}

double metric_dot(const Vec& a, const Vec& b, int nu, double w) {
  return w * a.head(nu).dot(b.head(nu)) + a.tail(a.size() - nu).dot(b.tail(b.size() - nu));
}

Outcome cmd_check_gradients(const Model& model, const Config& c, Summary& s, Files&) {
  const SolverConfig sc = solver_config(c);
  const int samples = c.integer("check.samples", 20);
  const int N = intervals(c);
  SplitMix64 rng(rng_seed(c));

  double jac_err = 0.0;
  for (int k = 0; k < samples; ++k) {
    ControlMatrix values(N, model.rank);
    for (int j = 0; j < N; ++j)
      for (int i = 0; i < model.rank; ++i) values(j, i) = rng.normal();
    const Control u(std::move(values));
    const Vec x0 = random_point(model, rng);
    const EndpointJacobians jac = endpoint_jacobians(model, u, x0, sc.substeps);
    Mat fd_u(model.dim, u.flat().size());
    for (int i = 0; i < u.flat().size(); ++i) {
      const double h = 1e-6;
      Control up = u, um = u;
      up.flat()(i) += h;
      um.flat()(i) -= h;
      fd_u.col(i) = (integrate(model, up, x0, sc.substeps).endpoint() -
                     integrate(model, um, x0, sc.substeps).endpoint()) / (2.0 * h);
    }
    Mat fd_x(model.dim, model.dim);
    for (int i = 0; i < model.dim; ++i) {
      const double h = 1e-6;
      Vec xp = x0, xm = x0;
      xp(i) += h;
      xm(i) -= h;
      fd_x.col(i) = (integrate(model, u, xp, sc.substeps).endpoint() -
                     integrate(model, u, xm, sc.substeps).endpoint()) / (2.0 * h);
    }
    jac_err = std::max(jac_err, (jac.jac_control - fd_u).cwiseAbs().maxCoeff() / fd_u.cwiseAbs().maxCoeff());
    jac_err = std::max(jac_err, (jac.jac_flow - fd_x).cwiseAbs().maxCoeff() / fd_x.cwiseAbs().maxCoeff());
  }

  // Projected gradient: directional derivative of the energy along tangent
  // directions of the loop space, by central differences through restoration.
  double grad_err = 0.0;
  double ortho = 0.0;
  int grad_samples = 0;
  for (int k = 0; k < samples; ++k) {
    Loop loop;
    try {
      if (model.has_lattice()) {
        IVec klass = IVec::Zero(model.dim);
        klass(0) = 1;
        loop = random_loop_in_class(model, klass, N, rng, 0.5, sc);
      } else {
        ControlMatrix values(N, model.rank);
        for (int j = 0; j < N; ++j)
          for (int i = 0; i < model.rank; ++i) values(j, i) = 0.5 * rng.normal();
        Control u(std::move(values));
        const Vec mean = u.values().colwise().mean().transpose();
        for (int j = 0; j < N; ++j) u.values().row(j) -= mean.transpose();
        loop = restore_constraint(model, Loop{u, random_point(model, rng), IVec::Zero(0)}, sc);
      }
    } catch (const NumericalFailure&) {
      continue;
    }
    const ProjectedGradient g = project_gradient(model, loop, sc);
    const int nu = static_cast<int>(loop.control.flat().size());
    Vec grad(nu + model.dim);
    grad << g.grad_control.flat(), g.grad_base;
    for (int i = 0; i < g.normals.cols(); ++i) {
      const Vec wi = g.normals.col(i);
      const double denom = std::sqrt(metric_dot(wi, wi, nu, g.weight) * metric_dot(grad, grad, nu, g.weight));
      if (denom > 0.0) ortho = std::max(ortho, std::abs(metric_dot(grad, wi, nu, g.weight)) / denom);
    }
    Vec v(nu + model.dim);
    for (int i = 0; i < v.size(); ++i) v(i) = rng.normal();
    Mat gram(model.dim, model.dim);
    Vec rhs(model.dim);
    for (int i = 0; i < model.dim; ++i) {
      rhs(i) = metric_dot(g.normals.col(i), v, nu, g.weight);
      for (int j = 0; j < model.dim; ++j) gram(i, j) = metric_dot(g.normals.col(i), g.normals.col(j), nu, g.weight);
    }
    v -= g.normals * gram.ldlt().solve(rhs);
    v /= std::sqrt(metric_dot(v, v, nu, g.weight));
    const double h = 1e-4;
    auto energy_at = [&](double t) {
      Loop trial = loop;
      trial.control.flat() += t * v.head(nu);
      trial.basepoint += t * v.tail(model.dim);
      return loop_energy(restore_constraint(model, trial, sc));
    };
    const double fd = (energy_at(h) - energy_at(-h)) / (2.0 * h);
    const double an = metric_dot(grad, v, nu, g.weight);
    grad_err = std::max(grad_err, std::abs(fd - an) / std::max({std::abs(an), std::abs(fd), 1.0}));
    ++grad_samples;
  }
  s.add("samples", samples);
  s.add("max_rel_error_jacobian", jac_err);
  s.add("gradient_samples", grad_samples);
  s.add("max_rel_error_gradient", grad_err);
  s.add("max_orthogonality", ortho);
  Outcome o;
  o.status = "passed";
  if (!(jac_err < 1e-5 && grad_err < 1e-5)) {
    o = {kExitNotConverged, "failed", "finite-difference mismatch above 1e-5"};
  }
  return o;
}

Outcome cmd_contract(const Model& model, const Config& c, Summary& s, Files&) {
  ContractConfig cc;
  cc.solver = solver_config(c);
  cc.slices = c.integer("contract.slices", cc.slices);
  SplitMix64 rng(rng_seed(c));
  const Sweep sweep = build_sweep(model, c, cc.solver, rng);
  double sup = 0.0;
  for (const Loop& l : sweep.loops) sup = std::max(sup, loop_energy(l));
  const double epsilon = c.real("contract.epsilon", 1e-6 * model.scale * model.scale);
  s.add("loops", sweep.loops.size());
  s.add("sweep_max_energy", sup);
  s.add("epsilon", epsilon);
  const ContractionResult r = contract_small_sweep(model, sweep, epsilon, cc);
  s.add("slices", r.slice_count);
  s.add("max_energy", r.max_energy);
  Outcome o;
  o.status = "contracted";
  return o;
}

void validate(const Config& c) {
  for (const char* key : {"grid.N", "grid.S", "sweep.P", "check.samples", "contract.slices",
                          "solver.max_iter", "shoot.steps", "shoot.max_iter"}) {
    if (c.has(key) && c.integer(key, 1) <= 0) throw ConfigError(std::string(key) + " must be a positive integer");
  }
  for (const char* key : {"solver.tol_loop", "solver.tol_grad", "solver.tol_const", "solver.tol_geo",
                          "solver.tol_speed", "solver.tol_certificate_loop", "shoot.tol_shoot",
                          "contract.epsilon", "solver.cond_max", "solver.step0", "seed.amplitude",
                          "sweep.energy", "shoot.period"}) {
    if (c.has(key) && !(c.real(key, 1.0) > 0.0)) throw ConfigError(std::string(key) + " must be positive");
  }
}

}  // namespace

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "model.name", "model.params", "grid.N", "grid.S",
      "solver.tol_loop", "solver.tol_grad", "solver.tol_const", "solver.tol_geo",
      "solver.tol_speed", "solver.tol_certificate_loop", "solver.cond_max", "solver.max_iter",
      "solver.step0", "solver.backtrack", "solver.armijo",
      "seed.class", "seed.amplitude", "seed.file",
      "sweep.kind", "sweep.P", "sweep.margin", "sweep.energy", "sweep.band_frac",
      "sweep.mesh_bound", "sweep.max_loops", "sweep.include_class",
      "shoot.x0", "shoot.lam0", "shoot.period", "shoot.steps", "shoot.tol_shoot", "shoot.max_iter",
      "verify.loop_file", "verify.lam",
      "check.samples",
      "contract.epsilon", "contract.slices",
      "run.rng_seed", "output.dir"};
  return keys;
}

Config Config::parse(std::istream& in) {
  static const std::set<std::string> allowed(known_keys().begin(), known_keys().end());
  Config c;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (!allowed.count(key)) throw ConfigError("line " + std::to_string(number) + ": unknown key '" + key + "'");
    if (c.has(key)) throw ConfigError("line " + std::to_string(number) + ": repeated key '" + key + "'");
    c.values_[key] = value;
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse(in);
}

void Config::set(const std::string& key, const std::string& value) {
  if (std::find(known_keys().begin(), known_keys().end(), key) == known_keys().end()) {
    throw ConfigError("unknown key '" + key + "'");
  }
  values_[key] = value;
}

std::string Config::text(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::real(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_real(key, it->second);
}

int Config::integer(const std::string& key, int fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_int(key, it->second);
}

std::vector<double> Config::reals(const std::string& key) const {
  std::vector<double> out;
  const auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) return out;
  for (const std::string& item : split(it->second, ',')) out.push_back(parse_real(key, item));
  return out;
}

std::vector<int> Config::integers(const std::string& key) const {
  std::vector<int> out;
  const auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) return out;
  for (const std::string& item : split(it->second, ',')) out.push_back(parse_int(key, item));
  return out;
}

Loop read_loop_csv(std::istream& in, const Model& model) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("#", 0) != 0) throw InputError("loop file: missing metadata line");
  Loop loop;
  loop.basepoint = Vec::Constant(model.dim, std::nan(""));
  loop.klass = model.has_lattice() ? IVec(IVec::Zero(model.dim)) : IVec(IVec::Zero(0));
  double duration = 1.0;
  for (const std::string& item : split(trim(line.substr(1)), ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InputError("loop file: bad metadata entry '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (key.rfind("x0_", 0) == 0) {
      const int i = parse_int(key, key.substr(3)) - 1;
      if (i < 0 || i >= model.dim) throw RankMismatch("loop file: basepoint index out of range");
      loop.basepoint(i) = parse_real(key, value);
    } else if (key.rfind("klass_", 0) == 0) {
      const int i = parse_int(key, key.substr(6)) - 1;
      if (!model.has_lattice() || i < 0 || i >= model.dim) throw RankMismatch("loop file: unexpected class entry");
      loop.klass(i) = parse_int(key, value);
    } else if (key == "duration") {
      duration = parse_real(key, value);
    } else {
      throw InputError("loop file: unknown metadata key '" + key + "'");
    }
  }
  if (loop.basepoint.hasNaN()) throw InputError("loop file: incomplete basepoint");
  if (!std::getline(in, line)) throw InputError("loop file: missing header");
  const std::vector<std::string> header = split(line, ',');
  std::vector<int> ucols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].rfind("u_", 0) == 0) ucols.push_back(static_cast<int>(i));
  }
  if (static_cast<int>(ucols.size()) != model.rank) throw RankMismatch("loop file: control rank does not match the model");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split(line, ',');
    if (cells.size() != header.size()) throw InputError("loop file: ragged row");
    std::vector<double> row;
    for (int col : ucols) row.push_back(parse_real("u", cells[col]));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InputError("loop file: no intervals");
  ControlMatrix values(rows.size(), model.rank);
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (int i = 0; i < model.rank; ++i) values(j, i) = rows[j][i];
  loop.control = Control(std::move(values), duration);
  return loop;
}

double tail_spread(const SolveTrace& trace, std::size_t window) {
  const std::size_t n = trace.tracked.size();
  const std::size_t first = n > window ? n - window : 0;
  double spread = 0.0;
  for (std::size_t i = first; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      spread = std::max(spread, control_distance(trace.tracked[i], trace.tracked[j]));
  return spread;
}

int run(const std::string& command, const std::string& config_path, const RunOptions& options) {
  Config config;
  try {
    config = Config::load(config_path);
  } catch (const InputError& e) {
    // Still leave a summary behind.
    Config empty;
    RunOptions o = options;
    if (!o.output_dir) o.output_dir = "horloop_out";
    const fs::path out(*o.output_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    Summary s;
    s.add("command", command);
    s.add("status", std::string("input_error"));
    s.add("reason", std::string(e.what()));
    s.add("exit_code", kExitInputError);
    try {
      write_atomic(out / "summary.txt", s.str());
    } catch (const std::exception&) {
    }
    if (!options.quiet) std::cerr << command << ": input_error: " << e.what() << '\n';
    return kExitInputError;
  }
  return run(command, config, options);
}

int run(const std::string& command, const Config& config, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path out(options.output_dir ? *options.output_dir : config.text("output.dir", "horloop_out"));
  Summary head;
  Summary body;
  Files files;
  Outcome outcome;
  head.add("command", command);
  try {
    validate(config);
    const std::string name = config.text("model.name", "");
    if (name.empty()) throw ConfigError("model.name is required");
    const Model model = make_model(name, config.reals("model.params"));
    head.add("model", model.name);
    if (command == "solve-min") {
      outcome = cmd_solve_min(model, config, body, files);
    } else if (command == "solve-minmax") {
      outcome = cmd_solve_minmax(model, config, body, files);
    } else if (command == "shoot") {
      outcome = cmd_shoot(model, config, body, files);
    } else if (command == "verify") {
      outcome = cmd_verify(model, config, body, files);
    } else if (command == "check-gradients") {
      outcome = cmd_check_gradients(model, config, body, files);
    } else if (command == "contract") {
      outcome = cmd_contract(model, config, body, files);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
  } catch (const InputError& e) {
    outcome = {kExitInputError, "input_error", e.what()};
    files.clear();
  } catch (const NumericalFailure& e) {
    outcome = {kExitNumericalFailure, "numerical_failure", e.what()};
    files.clear();
  } catch (const std::exception& e) {
    outcome = {kExitNumericalFailure, "numerical_failure", e.what()};
    files.clear();
  }
  std::string reason = outcome.reason;
  std::replace(reason.begin(), reason.end(), '\n', ' ');
  head.add("status", outcome.status);
  head.add("reason", reason);
  head.add("exit_code", outcome.code);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  try {
    fs::create_directories(out);
    for (const auto& [name, content] : files) write_atomic(out / name, content);
    write_atomic(out / "summary.txt", head.str() + body.str());
    write_atomic(out / "timing.txt", "wall_time=" + fmt(wall) + "\n");
  } catch (const std::exception& e) {
    if (!options.quiet) std::cerr << command << ": cannot write outputs: " << e.what() << '\n';
    return kExitInputError;
  }
  if (!options.quiet) {
    std::cout << command << ": " << outcome.status;
    if (outcome.code != kExitOk) std::cout << " (" << reason << ")";
    std::cout << '\n';
  }
  return outcome.code;
}

}  // namespace horloop::cli
