#include <cmath>
#include <sstream>

#include "horloop/error.hpp"
#include "horloop/solvers.hpp"

namespace horloop {

namespace {

Loop gradient_step(const Loop& loop, const ProjectedGradient& g, double alpha) {
  Loop out = loop;
  out.control.flat() -= alpha * g.grad_control.flat();
  out.basepoint -= alpha * g.grad_base;
  return out;
}

// The deck element is discrete, so a continuous update cannot change it;
// compare the observed one against the recorded class.
void check_class(const Model& model, const Loop& loop, int substeps) {
  if (!model.lattice) return;
  const HorizontalPath path = integrate(model, loop.control, loop.basepoint, substeps);
  const Point d = reduce_displacement(model, path.endpoint() - loop.basepoint);
  if (*d.klass != loop.klass) throw ConstraintViolation("homotopy class changed during descent");
}

}  // namespace

MinimizeResult minimize_in_class(const Model& model, const Loop& seed, const SolverConfig& config) {
  if (seed.klass.size() != model.dim && model.lattice) throw RankMismatch("seed class has the wrong dimension");
  if (seed.klass.size() == 0 || seed.klass.isZero()) {
    throw InputError("minimize_in_class: seed must lie in a nonzero class");
  }
  MinimizeResult result;
  Loop current = restore_constraint(model, seed, config);
  check_class(model, current, config.substeps);
  double current_energy = loop_energy(current);
  ProjectedGradient grad;
  result.trace.status = SolveStatus::max_iter;
  for (int it = 0; it <= config.max_iter; ++it) {
    grad = project_gradient(model, current, config);
    result.trace.iterates.push_back(
        {current_energy, grad.norm, loop_residual(model, current, config.substeps).norm()});
    if (grad.norm < config.tol_grad) {
      result.trace.status = SolveStatus::converged;
      break;
    }
    if (it == config.max_iter) break;
    // Backtracking Armijo search along -grad g, each trial re-closed.
    double alpha = config.step0;
    bool accepted = false;
    for (int bt = 0; bt < config.max_backtracks; ++bt) {
      try {
        Loop trial = restore_constraint(model, gradient_step(current, grad, alpha), config);
        const double e = loop_energy(trial);
        if (e <= current_energy - config.armijo * alpha * grad.norm * grad.norm) {
          check_class(model, trial, config.substeps);
          current = std::move(trial);
          current_energy = e;
          accepted = true;
          break;
        }
      } catch (const RestorationFailure&) {
      } catch (const DomainError&) {
      }
      alpha *= config.backtrack;
    }
    if (!accepted) {
      result.trace.status = SolveStatus::stalled;
      break;
    }
  }
  result.loop = current;
  result.report = lagrange_residual(model, current.control, current.basepoint, grad.multiplier,
                                    config.certificate, config.substeps, true);
  return result;
}

}  // namespace horloop
