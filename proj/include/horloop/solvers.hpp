#pragma once

#include <optional>
#include <string>
#include <vector>

#include "horloop/extremals.hpp"
#include "horloop/models.hpp"
#include "horloop/paths.hpp"
#include "horloop/rng.hpp"

namespace horloop {

// A horizontal loop in the global chart: the curve from `basepoint` driven
// by `control`, closing up to the deck element `klass` (zero on models
// without a lattice).
struct Loop {
  Control control;
  Vec basepoint;
  IVec klass;
};

// A cyclic family of loops discretizing a map S^1 -> loop space.
struct Sweep {
  std::vector<Loop> loops;
};

enum class SolveStatus { converged, max_iter, stalled };

std::string to_string(SolveStatus status);

struct TraceEntry {
  double energy = 0.0;
  double grad_norm = 0.0;
  double constraint_norm = 0.0;
};

struct SolveTrace {
  std::vector<TraceEntry> iterates;
  SolveStatus status = SolveStatus::max_iter;
  // Loop attaining the recorded energy at each iterate (min-max only).
  std::vector<Loop> tracked;
};

struct SolverConfig {
  int substeps = kDefaultSubsteps;
  double tol_loop = 1e-10;
  double tol_grad = 1e-7;
  double tol_const = 1e-10;
  double cond_max = 1e12;
  int max_iter = 500;
  double step0 = 1.0;
  double backtrack = 0.5;
  double armijo = 1e-4;
  int max_backtracks = 30;
  int restore_max_iter = 50;
  // Largest |G| restoration will attempt; non-positive means model.scale
  // plus the chart norm of the basepoint.
  double capture_radius = 0.0;
  CertificateTolerances certificate{};
};

// G(u, x) = F_x^1(u) - x - B klass
Vec loop_residual(const Model& model, const Loop& loop, int substeps = kDefaultSubsteps);

double loop_energy(const Loop& loop);

// L2 distance of the controls.
double control_distance(const Loop& a, const Loop& b);

struct ProjectedGradient {
  Control grad_control;
  Vec grad_base;
  Vec multiplier;
  double norm = 0.0;
  bool constant = false;
  // w_i = dG* e_i, stored as columns of the flattened (control, base)
  // vectors; the control part is in the flat coefficient order.
  Mat normals;
  double condition = 1.0;

  // <a, b> in the product metric (weighted L2 on controls).
  double weight = 1.0;
};

ProjectedGradient project_gradient(const Model& model, const Loop& loop,
                                   const SolverConfig& config = {});

Loop restore_constraint(const Model& model, const Loop& loop, const SolverConfig& config = {});

struct MinimizeResult {
  Loop loop;
  GeodesicReport report;
  SolveTrace trace;
};

MinimizeResult minimize_in_class(const Model& model, const Loop& seed,
                                 const SolverConfig& config = {});

struct MinmaxConfig {
  SolverConfig solver{};
  double band_frac = 0.2;
  // Maximum control distance between neighbours; non-positive means 1.5x
  // the largest gap of the initial sweep.
  double mesh_bound = 0.0;
  // Level-collapse threshold; non-positive means 1e-6 * model.scale^2.
  double epsilon_contract = 0.0;
  // Cap on the number of loops; non-positive means 8x the initial count.
  int max_loops = 0;
  // The top loop climbs out of its unstable modes instead of descending.
  bool climb = true;
  // Worker threads for per-loop steps; non-positive reads HORLOOP_THREADS.
  int threads = 0;
};

struct MinmaxResult {
  double level = 0.0;
  Loop critical;
  GeodesicReport report;
  SolveTrace trace;
  Sweep sweep;
};

MinmaxResult minmax_sweep(const Model& model, const Sweep& sweep0, const MinmaxConfig& config = {});

struct ContractionResult {
  // slices[i] is the homotopy of loop i, ending at its constant loop.
  std::vector<std::vector<Loop>> slices;
  int slice_count = 0;
  double max_energy = 0.0;
};

struct ContractConfig {
  SolverConfig solver{};
  int slices = 10;
  double energy_factor = 1.0;  // slice energies must stay <= factor * epsilon
};

ContractionResult contract_small_sweep(const Model& model, const Sweep& sweep, double epsilon,
                                       const ContractConfig& config = {});

// Sweep and seed builders.

// Random closed loop in `klass`: least-norm constant control realizing the
// lattice translation plus Gaussian noise of the given amplitude, restored.
Loop random_loop_in_class(const Model& model, const IVec& klass, int intervals, SplitMix64& rng,
                          double amplitude, const SolverConfig& config = {});

// Circles of constant latitude from near one pole to near the other, for
// round_s2 and contact_s3; `margin` is the polar angle left out at each end.
Sweep latitude_sweep(const Model& model, int count, int intervals, double margin = 0.15,
                     const SolverConfig& config = {});

Sweep constant_sweep(const Model& model, int count, int intervals);

// Closed contractible loops with energy `energy`, for flat charts.
Sweep small_loop_sweep(const Model& model, int count, int intervals, double energy, SplitMix64& rng);

}  // namespace horloop
