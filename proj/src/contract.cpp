#include <sstream>

#include "horloop/error.hpp"
#include "horloop/solvers.hpp"

namespace horloop {

ContractionResult contract_small_sweep(const Model& model, const Sweep& sweep, double epsilon,
                                       const ContractConfig& config) {
  if (!(epsilon > 0.0)) throw InputError("contract_small_sweep: epsilon must be positive");
  if (config.slices <= 0) throw InputError("contract_small_sweep: slice count must be positive");
  const SolverConfig& sc = config.solver;
  const double bound = config.energy_factor * epsilon * (1.0 + 1e-12);

  ContractionResult result;
  result.slices.resize(sweep.loops.size());
  for (std::size_t i = 0; i < sweep.loops.size(); ++i) {
    const Loop& loop = sweep.loops[i];
    if (loop.control.norm() < sc.tol_const) continue;  // already constant
    const HorizontalPath path = integrate(model, loop.control, loop.basepoint, sc.substeps);
    const Mat velocities = path_velocities(model, path);
    const Eigen::RowVectorXd x0 = loop.basepoint.transpose();
    // Straight-line shrink of the chart curve towards its basepoint; each
    // slice is re-expressed through its minimal control and re-closed.
    for (int k = 1; k <= config.slices; ++k) {
      const double s = 1.0 - static_cast<double>(k) / config.slices;
      const Mat states = (path.states.rowwise() - x0) * s;
      Mat shrunk = states.rowwise() + x0;
      Loop slice;
      try {
        const Control u = minimal_control(model, shrunk, s * velocities, loop.control.duration(),
                                          kDefaultTolSpan);
        slice = restore_constraint(model, Loop{u, loop.basepoint, loop.klass}, sc);
      } catch (const NumericalFailure& e) {
        std::ostringstream msg;
        msg << "loop " << i << ", slice " << k << ": " << e.what();
        throw ContractionFailure(msg.str());
      }
      const double e = loop_energy(slice);
      if (e > bound) {
        std::ostringstream msg;
        msg << "loop " << i << ", slice " << k << ": energy " << e << " exceeds " << bound;
        throw ContractionFailure(msg.str());
      }
      result.max_energy = std::max(result.max_energy, e);
      result.slices[i].push_back(std::move(slice));
      ++result.slice_count;
    }
    if (result.slices[i].back().control.norm() >= sc.tol_const) {
      throw ContractionFailure("loop " + std::to_string(i) + " did not reach a constant loop");
    }
  }
  return result;
}

}  // namespace horloop
