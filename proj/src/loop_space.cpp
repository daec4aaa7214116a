#include <cmath>
#include <limits>
#include <sstream>

#include "horloop/error.hpp"
#include "horloop/solvers.hpp"

namespace horloop {

namespace {

Vec deck_shift(const Model& model, const Loop& loop) {
  if (!model.lattice) return Vec::Zero(model.dim);
  if (loop.klass.size() != model.dim) throw RankMismatch("loop class has the wrong dimension");
  return *model.lattice * loop.klass.cast<double>();
}

struct Linearization {
  EndpointJacobians jac;
  Vec residual;
  Mat normals;  // (N*l + m) x m, columns w_i = dG* e_i
  Mat gram;     // <w_i, w_k>
};

Linearization linearize(const Model& model, const Loop& loop, int substeps) {
  Linearization lin;
  lin.jac = endpoint_jacobians(model, loop.control, loop.basepoint, substeps);
  lin.residual = lin.jac.endpoint - loop.basepoint - deck_shift(model, loop);
  const int nu = static_cast<int>(lin.jac.jac_control.cols());
  const int m = model.dim;
  const double w = lin.jac.weight();
  const Mat flow_minus_id = lin.jac.jac_flow - Mat::Identity(m, m);
  lin.normals.resize(nu + m, m);
  lin.normals.topRows(nu) = lin.jac.jac_control.transpose() / w;
  lin.normals.bottomRows(m) = flow_minus_id.transpose();
  lin.gram = lin.jac.jac_control * lin.jac.jac_control.transpose() / w +
             flow_minus_id * flow_minus_id.transpose();
  return lin;
}

double condition_number(const Mat& gram) {
  Eigen::JacobiSVD<Mat> svd(gram);
  const Vec& s = svd.singularValues();
  if (s.size() == 0) return 1.0;
  const double smin = s(s.size() - 1);
  return smin > 0.0 ? s(0) / smin : std::numeric_limits<double>::infinity();
}

Loop displaced(const Loop& loop, const Vec& delta_flat) {
  Loop out = loop;
  const int nu = static_cast<int>(loop.control.flat().size());
  out.control.flat() += delta_flat.head(nu);
  out.basepoint += delta_flat.tail(delta_flat.size() - nu);
  return out;
}

}  // namespace

std::string to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::stalled: return "stalled";
  }
  return "unknown";
}

Vec loop_residual(const Model& model, const Loop& loop, int substeps) {
  const HorizontalPath path = integrate(model, loop.control, loop.basepoint, substeps);
  return path.endpoint() - loop.basepoint - deck_shift(model, loop);
}

double loop_energy(const Loop& loop) { return energy(loop.control); }

double control_distance(const Loop& a, const Loop& b) { return (a.control - b.control).norm(); }

ProjectedGradient project_gradient(const Model& model, const Loop& loop, const SolverConfig& config) {
  const int nu = static_cast<int>(loop.control.flat().size());
  const int m = model.dim;
  ProjectedGradient out;
  out.weight = loop.control.step();
  if (loop.control.norm() < config.tol_const) {
    // Constant loops are the singular points of the loop space on contact
    // models; the constrained gradient is set to zero there.
    out.constant = true;
    out.grad_control = Control::zeros(loop.control.intervals(), loop.control.rank(),
                                      loop.control.duration());
    out.grad_base = Vec::Zero(m);
    out.multiplier = Vec::Zero(m);
    out.normals = Mat::Zero(nu + m, m);
    return out;
  }
  const Linearization lin = linearize(model, loop, config.substeps);
  out.condition = condition_number(lin.gram);
  if (!(out.condition <= config.cond_max)) {
    std::ostringstream msg;
    msg << "constraint Gram matrix is near singular (condition " << out.condition << ")";
    throw NearSingularConstraint(msg.str());
  }
  // <w_i, (u, 0)> = (J_u u)_i
  const Vec rhs = lin.jac.jac_control * loop.control.flat();
  out.multiplier = lin.gram.ldlt().solve(rhs);
  Vec grad(nu + m);
  grad.head(nu) = loop.control.flat();
  grad.tail(m).setZero();
  grad -= lin.normals * out.multiplier;
  out.grad_control = Control::from_flat(grad.head(nu), loop.control.rank(), loop.control.duration());
  out.grad_base = grad.tail(m);
  out.norm = std::sqrt(out.weight * grad.head(nu).squaredNorm() + out.grad_base.squaredNorm());
  out.normals = lin.normals;
  return out;
}

Loop restore_constraint(const Model& model, const Loop& loop, const SolverConfig& config) {
  // Charts grow away from the origin, so the default radius does too.
  const double capture =
      config.capture_radius > 0.0 ? config.capture_radius : model.scale + loop.basepoint.norm();
  Loop current = loop;
  double last = std::numeric_limits<double>::infinity();
  for (int it = 0; it < config.restore_max_iter; ++it) {
    Linearization lin;
    try {
      lin = linearize(model, current, config.substeps);
    } catch (const DomainError& e) {
      throw RestorationFailure(std::string("restoration left the chart: ") + e.what());
    }
    const double norm = lin.residual.norm();
    if (norm < config.tol_loop) return current;
    if (it == 0 && norm > capture) {
      std::ostringstream msg;
      msg << "loop residual " << norm << " outside the capture radius " << capture;
      throw RestorationFailure(msg.str());
    }
    last = norm;
    // Minimum-norm Gauss-Newton step along span{w_i}; a tiny Tikhonov term
    // keeps the solve defined next to constant loops.
    Mat gram = lin.gram;
    gram.diagonal().array() += 1e-14 * (1.0 + gram.trace());
    const Vec nu = gram.ldlt().solve(lin.residual);
    const Vec step = -(lin.normals * nu);
    double alpha = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < config.max_backtracks; ++bt) {
      const Loop trial = displaced(current, alpha * step);
      try {
        const double trial_norm = loop_residual(model, trial, config.substeps).norm();
        if (trial_norm < (1.0 - 1e-4 * alpha) * norm || trial_norm < config.tol_loop) {
          current = trial;
          accepted = true;
          break;
        }
      } catch (const DomainError&) {
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
  }
  const double final_norm = loop_residual(model, current, config.substeps).norm();
  if (final_norm < config.tol_loop) return current;
  std::ostringstream msg;
  msg << "restoration did not converge (|G| = " << std::min(final_norm, last) << ")";
  throw RestorationFailure(msg.str());
}

}  // namespace horloop
