#include "horloop/extremals.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "horloop/error.hpp"

namespace horloop {

namespace {

struct PhaseVelocity {
  Vec dx;
  Vec dlam;
};

PhaseVelocity hamilton_field(const Model& model, const Vec& x, const Vec& lam) {
  const int m = model.dim;
  const Mat X = model.frame(x);
  const Vec p = X.transpose() * lam;
  const Mat D = model.frame_jacobian(x);
  Vec dlam = Vec::Zero(m);
  for (int i = 0; i < model.rank; ++i) {
    if (p(i) != 0.0) dlam.noalias() -= p(i) * (D.middleCols(i * m, m).transpose() * lam);
  }
  return {X * p, dlam};
}

void check_state(const Model& model, const ExtremalState& s) {
  if (s.x.size() != model.dim || s.lam.size() != model.dim) {
    throw RankMismatch(model.name + ": extremal state dimension mismatch");
  }
  if (!s.x.allFinite() || !s.lam.allFinite()) throw InputError("extremal state has non-finite entries");
}

ExtremalState flow_end(const Model& model, const ExtremalState& s0, double T, int steps) {
  return extremal_flow(model, s0, T, steps).back();
}

}  // namespace

double hamiltonian(const Model& model, const ExtremalState& s) {
  check_state(model, s);
  return 0.5 * (frame_at(model, s.x).transpose() * s.lam).squaredNorm();
}

Vec extremal_control(const Model& model, const ExtremalState& s) {
  return frame_at(model, s.x).transpose() * s.lam;
}

std::vector<ExtremalState> extremal_flow(const Model& model, const ExtremalState& s0, double T,
                                         int steps) {
  check_state(model, s0);
  if (steps <= 0) throw InputError("extremal_flow: steps must be positive");
  if (!model.contains(s0.x)) throw DomainError(model.name + ": extremal starts outside the chart", 0.0);
  std::vector<ExtremalState> out;
  out.reserve(steps + 1);
  out.push_back(s0);
  const double h = T / steps;
  Vec x = s0.x;
  Vec lam = s0.lam;
  for (int k = 0; k < steps; ++k) {
    const PhaseVelocity k1 = hamilton_field(model, x, lam);
    const PhaseVelocity k2 = hamilton_field(model, x + 0.5 * h * k1.dx, lam + 0.5 * h * k1.dlam);
    const PhaseVelocity k3 = hamilton_field(model, x + 0.5 * h * k2.dx, lam + 0.5 * h * k2.dlam);
    const PhaseVelocity k4 = hamilton_field(model, x + h * k3.dx, lam + h * k3.dlam);
    x += (h / 6.0) * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx);
    lam += (h / 6.0) * (k1.dlam + 2.0 * k2.dlam + 2.0 * k3.dlam + k4.dlam);
    if (!x.allFinite() || !lam.allFinite() || !model.contains(x)) {
      std::ostringstream msg;
      msg << model.name << ": extremal left the chart domain at t=" << (k + 1) * h;
      throw DomainError(msg.str(), (k + 1) * h);
    }
    out.push_back({x, lam});
  }
  return out;
}

PeriodicityResidual periodicity_residual(const Model& model, const ExtremalState& s0, double T,
                                         int steps) {
  const ExtremalState end = flow_end(model, s0, T, steps);
  const Point dx = reduce_displacement(model, end.x - s0.x);
  PeriodicityResidual out;
  out.residual.resize(2 * model.dim);
  out.residual.head(model.dim) = dx.coords;
  out.residual.tail(model.dim) = end.lam - s0.lam;
  out.klass = *dx.klass;
  return out;
}

Vec least_squares_multiplier(const EndpointJacobians& jac, const Control& u) {
  // Minimizes || dF* lam - u ||^2, whose normal equations are
  // (1/w) J J^T lam = J u.
  const Mat& J = jac.jac_control;
  const Mat gram = J * J.transpose();
  const Vec rhs = jac.weight() * (J * u.flat());
  return gram.completeOrthogonalDecomposition().solve(rhs);
}

GeodesicReport lagrange_residual(const Model& model, const Control& u, const Vec& x,
                                 const std::optional<Vec>& lam, const CertificateTolerances& tol,
                                 int substeps, bool require_closed) {
  const EndpointJacobians jac = endpoint_jacobians(model, u, x, substeps);
  GeodesicReport report;
  report.closure_residual = reduce_displacement(model, jac.endpoint - x).coords.norm();
  if (require_closed && report.closure_residual > tol.tol_loop) {
    std::ostringstream msg;
    msg << "curve is not closed (|G| = " << report.closure_residual << ")";
    throw ConstraintViolation(msg.str());
  }
  report.energy = energy(u);
  report.constant = u.norm() < tol.tol_const;
  report.multiplier = lam ? *lam : least_squares_multiplier(jac, u);
  if (report.multiplier.size() != model.dim) throw RankMismatch("multiplier dimension mismatch");

  const Cotangent adj = adjoint_apply(jac, report.multiplier);
  report.lagrange_residual_control = (u - adj.control).norm();
  report.lagrange_residual_base = (adj.base - report.multiplier).norm();

  // Speed of the curve on each interval is the norm of the least-norm
  // representative of X(x_j) u_j.
  const HorizontalPath path = integrate(model, u, x, substeps);
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  double sum = 0.0;
  for (int j = 0; j < u.intervals(); ++j) {
    const Mat X = model.frame(path.state(j));
    const Vec v = X * u.value(j);
    const double speed = X.completeOrthogonalDecomposition().solve(v).norm();
    lo = std::min(lo, speed);
    hi = std::max(hi, speed);
    sum += speed;
  }
  report.mean_speed = sum / u.intervals();
  report.speed_variation = hi - lo;
  const double relative_speed =
      report.mean_speed > 0.0 ? report.speed_variation / report.mean_speed : 0.0;
  report.certified = !report.constant && report.lagrange_residual_control < tol.tol_geo &&
                     report.lagrange_residual_base < tol.tol_geo && relative_speed < tol.tol_speed;
  return report;
}

ShootResult shoot_closed(const Model& model, const ExtremalState& guess, double T_guess,
                         const ShootConfig& config) {
  const int m = model.dim;
  const double H0 = hamiltonian(model, guess);
  if (!(H0 > 0.0)) throw DegenerateSolution("shoot_closed: guess has H = 0");
  if (!(T_guess > 0.0)) throw InputError("shoot_closed: period guess must be positive");

  // Unit-speed normalization: scaling lam by c speeds the flow up by c.
  const double c = 1.0 / std::sqrt(2.0 * H0);
  const Vec anchor_point = guess.x;
  Vec anchor_normal = frame_at(model, guess.x) * extremal_control(model, guess);
  anchor_normal.normalize();

  const int n = 2 * m + 1;
  Vec z(n);
  z.head(m) = guess.x;
  z.segment(m, m) = c * guess.lam;
  z(2 * m) = T_guess / c;

  auto residual = [&](const Vec& w) {
    const ExtremalState s{w.head(m), w.segment(m, m)};
    Vec r(2 * m + 2);
    r.head(2 * m) = periodicity_residual(model, s, w(2 * m), config.steps).residual;
    r(2 * m) = hamiltonian(model, s) - 0.5;
    r(2 * m + 1) = (s.x - anchor_point).dot(anchor_normal);
    return r;
  };

  std::vector<double> history;
  Vec r = residual(z);
  history.push_back(r.norm());
  for (int it = 0; it < config.max_iter && r.norm() >= config.tol_shoot; ++it) {
    Mat J(2 * m + 2, n);
    for (int k = 0; k < n; ++k) {
      const double step = 1e-6 * (1.0 + std::abs(z(k)));
      Vec zp = z, zm = z;
      zp(k) += step;
      zm(k) -= step;
      J.col(k) = (residual(zp) - residual(zm)) / (2.0 * step);
    }
    auto cod = J.completeOrthogonalDecomposition();
    cod.setThreshold(1e-10);
    const Vec delta = -cod.solve(r);
    double alpha = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 30; ++bt) {
      const Vec trial = z + alpha * delta;
      try {
        if (trial(2 * m) > 0.0) {
          const Vec rt = residual(trial);
          if (rt.norm() < r.norm()) {
            z = trial;
            r = rt;
            accepted = true;
            break;
          }
        }
      } catch (const DomainError&) {
      }
      alpha *= 0.5;
    }
    history.push_back(r.norm());
    if (!accepted) break;
  }
  if (!(r.norm() < config.tol_shoot)) {
    std::ostringstream msg;
    msg << "shoot_closed: Newton did not converge (residual " << r.norm() << ")";
    throw ShootingFailure(msg.str(), history);
  }

  ShootResult out;
  out.length = z(2 * m);
  const ExtremalState unit{z.head(m), z.segment(m, m)};
  if (unit.lam.norm() < 1e-12) throw DegenerateSolution("shoot_closed: converged to lam = 0");
  out.state = {unit.x, out.length * unit.lam};
  const PeriodicityResidual closing = periodicity_residual(model, out.state, 1.0, config.steps);
  out.klass = closing.klass;
  out.periodicity_residual = closing.residual.norm();
  out.history = std::move(history);

  // Sample the control at interval midpoints of [0, 1] and certify the
  // resulting discrete loop a posteriori.
  const int N = config.intervals;
  const int per = std::max(1, config.steps / N);
  const std::vector<ExtremalState> traj = extremal_flow(model, out.state, 1.0, 2 * per * N);
  ControlMatrix values(N, model.rank);
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const double speed = std::sqrt(2.0 * hamiltonian(model, traj[k]));
    lo = std::min(lo, speed);
    hi = std::max(hi, speed);
    sum += speed;
  }
  for (int j = 0; j < N; ++j) values.row(j) = extremal_control(model, traj[(2 * j + 1) * per]).transpose();
  out.control = Control(std::move(values));
  out.report = lagrange_residual(model, out.control, out.state.x, out.state.lam, config.certificate,
                                 config.substeps, false);
  // Energy and speed from the continuous extremal rather than the samples.
  out.report.energy = 0.5 * out.length * out.length;
  out.report.mean_speed = sum / traj.size();
  out.report.speed_variation = hi - lo;
  out.report.certified =
      !out.report.constant && out.report.lagrange_residual_control < config.certificate.tol_geo &&
      out.report.lagrange_residual_base < config.certificate.tol_geo &&
      out.report.speed_variation / out.report.mean_speed < config.certificate.tol_speed;
  return out;
}

}  // namespace horloop
