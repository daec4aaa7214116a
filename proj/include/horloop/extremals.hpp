#pragma once

#include <optional>
#include <vector>

#include "horloop/control.hpp"
#include "horloop/models.hpp"
#include "horloop/paths.hpp"

namespace horloop {

// Point and covector (chart components) of a normal extremal.
struct ExtremalState {
  Vec x;
  Vec lam;
};

// Lagrange-condition summary for a closed curve. The curve is accepted as a
// closed geodesic only when it is non-constant, both residuals are below
// tol_geo and the relative speed variation is below tol_speed.
struct GeodesicReport {
  double energy = 0.0;
  double speed_variation = 0.0;  // max |gamma'| - min |gamma'| over intervals
  double mean_speed = 0.0;
  double lagrange_residual_control = 0.0;  // || u - dF* lam ||
  double lagrange_residual_base = 0.0;     // | (d_x phi - I)^T lam |
  double closure_residual = 0.0;           // | G(u, x) |
  Vec multiplier;
  bool constant = false;
  bool certified = false;
};

struct CertificateTolerances {
  double tol_loop = 1e-8;
  double tol_geo = 1e-6;
  // Relative: speed_variation / mean_speed.
  double tol_speed = 1e-2;
  double tol_const = 1e-10;
};

double hamiltonian(const Model& model, const ExtremalState& s);

// u_i = <lam, X_i(x)>
Vec extremal_control(const Model& model, const ExtremalState& s);

// RK4 on Hamilton's equations; returns steps + 1 samples from t = 0 to T.
std::vector<ExtremalState> extremal_flow(const Model& model, const ExtremalState& s0, double T,
                                         int steps);

struct PeriodicityResidual {
  Vec residual;  // (x(T) - x0 reduced mod lattice, lam(T) - lam0)
  IVec klass;    // deck element removed from x(T) - x0
};

PeriodicityResidual periodicity_residual(const Model& model, const ExtremalState& s0, double T,
                                         int steps = 1000);

struct ShootConfig {
  int steps = 1000;
  double tol_shoot = 1e-10;
  int max_iter = 50;
  // Discretization used for the a-posteriori Lagrange report.
  int intervals = 64;
  int substeps = kDefaultSubsteps;
  CertificateTolerances certificate{};
};

// A closed normal extremal in unit-period form: flowing `state` for time 1
// closes up, `length` is the sub-Riemannian length and the energy is
// length^2 / 2.
struct ShootResult {
  ExtremalState state;
  double length = 0.0;
  IVec klass;
  Control control;  // the extremal's control sampled at interval midpoints
  GeodesicReport report;
  double periodicity_residual = 0.0;
  std::vector<double> history;
};

// Damped Gauss-Newton on (x0, lam0, period) with H = 1/2 and a hyperplane
// anchor through guess.x orthogonal to the initial velocity.
ShootResult shoot_closed(const Model& model, const ExtremalState& guess, double T_guess,
                         const ShootConfig& config = {});

// Both residuals of lam d_uF = u and lam (d_x phi - I) = 0. When lam is
// absent it is the least-squares solution of the first equation.
GeodesicReport lagrange_residual(const Model& model, const Control& u, const Vec& x,
                                 const std::optional<Vec>& lam = std::nullopt,
                                 const CertificateTolerances& tol = {},
                                 int substeps = kDefaultSubsteps, bool require_closed = true);

// Least-squares multiplier of lam d_uF = u.
Vec least_squares_multiplier(const EndpointJacobians& jac, const Control& u);

}  // namespace horloop
