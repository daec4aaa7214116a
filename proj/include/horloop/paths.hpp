#pragma once

#include <optional>
#include <ostream>

#include "horloop/control.hpp"
#include "horloop/models.hpp"

namespace horloop {

inline constexpr int kDefaultSubsteps = 4;
inline constexpr double kDefaultTolSpan = 1e-8;
inline constexpr double kDefaultTolEndpoint = 1e-9;

// The curve solving x' = sum_i u_i(t) X_i(x), x(0) = basepoint, sampled at
// the N + 1 grid times. The Jacobians are filled by endpoint_jacobians().
struct HorizontalPath {
  Control control;
  Vec basepoint;
  Mat states;  // (N + 1) x m
  std::optional<Mat> jac_flow;
  std::optional<Mat> jac_control;

  Vec endpoint() const { return states.row(states.rows() - 1).transpose(); }
  Vec state(int j) const { return states.row(j).transpose(); }
};

// Classical RK4 with `substeps` fixed steps per control interval.
HorizontalPath integrate(const Model& model, const Control& u, const Vec& x0,
                         int substeps = kDefaultSubsteps);

// Derivatives of the discrete endpoint map. jac_control is m x (N*l) in the
// flat coefficient order of Control; jac_flow is m x m.
struct EndpointJacobians {
  Vec endpoint;
  Mat jac_control;
  Mat jac_flow;
  int intervals = 0;
  int rank = 0;
  double duration = 1.0;

  double weight() const { return duration / intervals; }
};

EndpointJacobians endpoint_jacobians(const Model& model, const Control& u, const Vec& x0,
                                     int substeps = kDefaultSubsteps);

// dF* lam with respect to the discrete L2 product on controls and the
// Euclidean product on basepoints.
struct Cotangent {
  Control control;
  Vec base;
};

Cotangent adjoint_apply(const EndpointJacobians& jac, const Vec& lam);

double energy(const Control& u);

// Velocity X(x_j) u_j at the left end of every interval.
Mat path_velocities(const Model& model, const HorizontalPath& path);

// Pointwise least-norm solution of X(x_j) v = velocity_j.
Control minimal_control(const Model& model, const Mat& states, const Mat& velocities,
                        double duration = 1.0, double tol_span = kDefaultTolSpan);
Control minimal_control(const Model& model, const HorizontalPath& path,
                        double tol_span = kDefaultTolSpan);

// u on [0, 1] followed by v on [0, T], squeezed into [0, 1] and regridded
// onto `intervals` cells.
Control concatenate(const Control& u, const Control& v, double T, int intervals);

Control backward(const Control& u);

// Flows u restricted to [0, T] first and then v, as a control on [0, 1].
Control concat_reverse(const Control& u, const Control& v, double T, int intervals);

struct SteerConfig {
  int intervals = 8;
  int substeps = kDefaultSubsteps;
  double tol_endpoint = kDefaultTolEndpoint;
  int max_iter = 60;
  // Maximum chart distance |x - y|; non-positive means model.scale.
  double radius = 0.0;
};

struct SteerResult {
  Control control;
  double T = 0.0;
};

// Control steering x to y, found by damped minimum-norm Gauss-Newton on the
// endpoint residual. Returns the zero control with T = 0 when y == x.
SteerResult steer_local(const Model& model, const Vec& x, const Vec& y,
                        const SteerConfig& config = {});

// CSV: a "# x0_1=...,klass_1=..." metadata line, then the header
// "t,x_1..x_m,u_1..u_l" and one row per interval at its midpoint.
void write_path_csv(std::ostream& os, const Model& model, const HorizontalPath& path,
                    const std::optional<IVec>& klass = std::nullopt,
                    int substeps = kDefaultSubsteps);

}  // namespace horloop
