#include "horloop/paths.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "horloop/error.hpp"

namespace horloop {

namespace {

void check_shapes(const Model& model, const Control& u, const Vec& x0) {
  if (u.rank() != model.rank) {
    throw RankMismatch(model.name + ": control rank " + std::to_string(u.rank()) + " != " +
                       std::to_string(model.rank));
  }
  if (x0.size() != model.dim) {
    throw RankMismatch(model.name + ": basepoint dimension " + std::to_string(x0.size()) +
                       " != " + std::to_string(model.dim));
  }
  if (u.intervals() <= 0) throw InputError("control has no intervals");
}

void check_domain(const Model& model, const Vec& x, double t) {
  if (!x.allFinite() || !model.contains(x)) {
    std::ostringstream msg;
    msg << model.name << ": left the chart domain at t=" << t;
    throw DomainError(msg.str(), t);
  }
}

Vec rk4_step(const Model& model, const Vec& x, const Vec& c, double h) {
  const Vec k1 = model.frame(x) * c;
  const Vec k2 = model.frame(x + 0.5 * h * k1) * c;
  const Vec k3 = model.frame(x + 0.5 * h * k2) * c;
  const Vec k4 = model.frame(x + h * k3) * c;
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// sum_i c_i dX_i/dx
Mat directional_jacobian(const Model& model, const Vec& x, const Vec& c) {
  const Mat D = model.frame_jacobian(x);
  const int m = model.dim;
  Mat out = Mat::Zero(m, m);
  for (int i = 0; i < model.rank; ++i) {
    if (c(i) != 0.0) out.noalias() += c(i) * D.middleCols(i * m, m);
  }
  return out;
}

struct StepDerivative {
  Vec next;
  Mat d_state;    // m x m
  Mat d_control;  // m x l
};

// One RK4 step together with its exact derivatives.
StepDerivative rk4_step_derivative(const Model& model, const Vec& x, const Vec& c, double h) {
  const int m = model.dim;
  const Mat I = Mat::Identity(m, m);

  const Vec x1 = x;
  const Mat X1 = model.frame(x1);
  const Vec k1 = X1 * c;
  const Mat F1 = directional_jacobian(model, x1, c);
  const Mat k1x = F1;
  const Mat k1c = X1;

  const Vec x2 = x + 0.5 * h * k1;
  const Mat X2 = model.frame(x2);
  const Vec k2 = X2 * c;
  const Mat F2 = directional_jacobian(model, x2, c);
  const Mat k2x = F2 * (I + 0.5 * h * k1x);
  const Mat k2c = X2 + 0.5 * h * F2 * k1c;

  const Vec x3 = x + 0.5 * h * k2;
  const Mat X3 = model.frame(x3);
  const Vec k3 = X3 * c;
  const Mat F3 = directional_jacobian(model, x3, c);
  const Mat k3x = F3 * (I + 0.5 * h * k2x);
  const Mat k3c = X3 + 0.5 * h * F3 * k2c;

  const Vec x4 = x + h * k3;
  const Mat X4 = model.frame(x4);
  const Vec k4 = X4 * c;
  const Mat F4 = directional_jacobian(model, x4, c);
  const Mat k4x = F4 * (I + h * k3x);
  const Mat k4c = X4 + h * F4 * k3c;

  StepDerivative out;
  out.next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  out.d_state = I + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
  out.d_control = (h / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

HorizontalPath integrate(const Model& model, const Control& u, const Vec& x0, int substeps) {
  check_shapes(model, u, x0);
  if (substeps <= 0) throw InputError("substeps must be positive");
  check_domain(model, x0, 0.0);
  const int N = u.intervals();
  const double h = u.step() / substeps;
  HorizontalPath path;
  path.control = u;
  path.basepoint = x0;
  path.states.resize(N + 1, model.dim);
  path.states.row(0) = x0.transpose();
  Vec x = x0;
  for (int j = 0; j < N; ++j) {
    const Vec c = u.value(j);
    for (int s = 0; s < substeps; ++s) {
      x = rk4_step(model, x, c, h);
      check_domain(model, x, (j * substeps + s + 1) * h);
    }
    path.states.row(j + 1) = x.transpose();
  }
  return path;
}

EndpointJacobians endpoint_jacobians(const Model& model, const Control& u, const Vec& x0,
                                     int substeps) {
  check_shapes(model, u, x0);
  if (substeps <= 0) throw InputError("substeps must be positive");
  check_domain(model, x0, 0.0);
  const int N = u.intervals();
  const int m = model.dim;
  const int l = model.rank;
  const int steps = N * substeps;
  const double h = u.step() / substeps;

  std::vector<Mat> d_state(steps);
  std::vector<Mat> d_control(steps);
  Vec x = x0;
  for (int j = 0; j < N; ++j) {
    const Vec c = u.value(j);
    for (int s = 0; s < substeps; ++s) {
      StepDerivative step = rk4_step_derivative(model, x, c, h);
      x = std::move(step.next);
      check_domain(model, x, (j * substeps + s + 1) * h);
      d_state[j * substeps + s] = std::move(step.d_state);
      d_control[j * substeps + s] = std::move(step.d_control);
    }
  }

  // Reverse accumulation: `tail` is d(endpoint)/d(state after step k).
  EndpointJacobians out;
  out.endpoint = x;
  out.intervals = N;
  out.rank = l;
  out.duration = u.duration();
  out.jac_control = Mat::Zero(m, N * l);
  Mat tail = Mat::Identity(m, m);
  for (int k = steps - 1; k >= 0; --k) {
    const int j = k / substeps;
    out.jac_control.middleCols(j * l, l).noalias() += tail * d_control[k];
    tail = tail * d_state[k];
  }
  out.jac_flow = tail;
  return out;
}

Cotangent adjoint_apply(const EndpointJacobians& jac, const Vec& lam) {
  if (lam.size() != jac.jac_control.rows()) throw RankMismatch("adjoint_apply: covector size mismatch");
  const Vec flat = jac.jac_control.transpose() * lam / jac.weight();
  return {Control::from_flat(flat, jac.rank, jac.duration), jac.jac_flow.transpose() * lam};
}

double energy(const Control& u) { return 0.5 * u.norm_squared(); }

Mat path_velocities(const Model& model, const HorizontalPath& path) {
  const int N = path.control.intervals();
  Mat vel(N, model.dim);
  for (int j = 0; j < N; ++j) {
    vel.row(j) = (model.frame(path.state(j)) * path.control.value(j)).transpose();
  }
  return vel;
}

Control minimal_control(const Model& model, const Mat& states, const Mat& velocities,
                        double duration, double tol_span) {
  const int N = static_cast<int>(velocities.rows());
  if (states.rows() < N || states.cols() != model.dim || velocities.cols() != model.dim) {
    throw RankMismatch("minimal_control: state/velocity shapes do not match the model");
  }
  ControlMatrix values(N, model.rank);
  int worst = -1;
  double worst_residual = 0.0;
  for (int j = 0; j < N; ++j) {
    const Vec x = states.row(j).transpose();
    const Vec v = velocities.row(j).transpose();
    const Mat X = frame_at(model, x);
    const Vec c = X.completeOrthogonalDecomposition().solve(v);
    const double residual = (X * c - v).norm() / (1.0 + v.norm());
    if (residual > worst_residual) {
      worst_residual = residual;
      worst = j;
    }
    values.row(j) = c.transpose();
  }
  if (worst_residual > tol_span) {
    std::ostringstream msg;
    msg << "velocity not horizontal on interval " << worst << " (residual " << worst_residual << ")";
    throw NonHorizontalVelocity(msg.str(), worst, worst_residual);
  }
  return Control(std::move(values), duration);
}

Control minimal_control(const Model& model, const HorizontalPath& path, double tol_span) {
  return minimal_control(model, path.states, path_velocities(model, path), path.control.duration(),
                         tol_span);
}

Control concatenate(const Control& u, const Control& v, double T, int intervals) {
  if (!(T >= 0.0)) throw InputError("concatenate: T must be nonnegative");
  if (std::abs(u.duration() - 1.0) > 1e-12) throw InputError("concatenate: first factor must live on [0, 1]");
  if (T > 0.0 && (v.rank() != u.rank())) throw RankMismatch("concatenate: rank mismatch");
  if (T > 0.0 && std::abs(v.duration() - T) > 1e-12 * (1.0 + T)) {
    throw InputError("concatenate: second factor must live on [0, T]");
  }
  const double scale = T + 1.0;
  std::vector<Segment> segs = segments_of(u, 0.0, 1.0 / scale, scale);
  if (T > 0.0) {
    std::vector<Segment> tail = segments_of(v, 1.0 / scale, 1.0 / scale, scale);
    segs.insert(segs.end(), tail.begin(), tail.end());
  }
  return resample_segments(segs, 1.0, intervals, u.rank());
}

Control backward(const Control& u) {
  return Control(u.values().colwise().reverse(), u.duration());
}

Control concat_reverse(const Control& u, const Control& v, double T, int intervals) {
  if (T == 0.0) return resample(v, intervals);
  // Use the native cells of u when T falls on its grid, so no averaging
  // happens.
  const double cells = T / u.step();
  const long rounded = std::lround(cells);
  const int n = (rounded > 0 && std::abs(cells - rounded) < 1e-9)
                    ? static_cast<int>(rounded)
                    : std::max(1, static_cast<int>(std::ceil(cells)));
  const Control head = restrict_to(u, T, n);
  return backward(concatenate(backward(v), backward(head), T, intervals));
}

SteerResult steer_local(const Model& model, const Vec& x, const Vec& y, const SteerConfig& config) {
  if (x.size() != model.dim || y.size() != model.dim) throw RankMismatch("steer_local: dimension mismatch");
  const double gap = (y - x).norm();
  const int N = config.intervals;
  if (gap == 0.0) return {Control::zeros(N, model.rank), 0.0};
  const double radius = config.radius > 0.0 ? config.radius : model.scale;
  if (gap > radius) throw SteeringFailure("steer_local: target outside the steering radius");

  auto residual_of = [&](const Control& c) {
    return Vec(integrate(model, c, x, config.substeps).endpoint() - y);
  };

  // Where the frame does not span, u = 0 is a singular point of the endpoint
  // map; start from a small closed wiggle instead, oriented towards y.
  Control u = Control::zeros(N, model.rank);
  if (model.rank < model.dim) {
    const double amp = 0.5 * std::sqrt(gap);
    for (int j = 0; j < N; ++j) {
      const double t = (j + 0.5) / N;
      for (int i = 0; i < model.rank; ++i) {
        const double phase = 2.0 * std::numbers::pi * t * (1 + i / 2);
        u.values()(j, i) = amp * ((i % 2 == 0) ? std::cos(phase) : std::sin(phase));
      }
    }
    Control mirrored = u;
    for (int i = 1; i < model.rank; i += 2) mirrored.values().col(i) *= -1.0;
    if (residual_of(mirrored).norm() < residual_of(u).norm()) u = std::move(mirrored);
  }

  Vec r = residual_of(u);
  for (int it = 0; it < config.max_iter; ++it) {
    if (r.norm() < config.tol_endpoint) return {u, 1.0};
    const EndpointJacobians jac = endpoint_jacobians(model, u, x, config.substeps);
    // Minimum-norm correction; a minimum-norm solution would project the
    // wiggle away and fall back to u = 0.
    const Vec delta = -jac.jac_control.completeOrthogonalDecomposition().solve(r);
    double alpha = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 30; ++bt) {
      Control trial = u;
      trial.flat() += alpha * delta;
      try {
        Vec rt = residual_of(trial);
        if (rt.norm() < (1.0 - 1e-4 * alpha) * r.norm()) {
          u = std::move(trial);
          r = std::move(rt);
          accepted = true;
          break;
        }
      } catch (const DomainError&) {
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
  }
  if (r.norm() < config.tol_endpoint) return {u, 1.0};
  std::ostringstream msg;
  msg << "steer_local: no convergence (residual " << r.norm() << ")";
  throw SteeringFailure(msg.str());
}

void write_path_csv(std::ostream& os, const Model& model, const HorizontalPath& path,
                    const std::optional<IVec>& klass, int substeps) {
  const int m = model.dim;
  const int l = model.rank;
  os << "# ";
  for (int i = 0; i < m; ++i) {
    if (i) os << ',';
    os << "x0_" << (i + 1) << '=' << format_double(path.basepoint(i));
  }
  if (klass) {
    for (int i = 0; i < klass->size(); ++i) os << ",klass_" << (i + 1) << '=' << (*klass)(i);
  }
  os << ",duration=" << format_double(path.control.duration()) << '\n';
  os << 't';
  for (int i = 0; i < m; ++i) os << ",x_" << (i + 1);
  for (int i = 0; i < l; ++i) os << ",u_" << (i + 1);
  os << '\n';
  const int N = path.control.intervals();
  const double h = path.control.step();
  for (int j = 0; j < N; ++j) {
    const Vec c = path.control.value(j);
    Vec mid = path.state(j);
    for (int s = 0; s < substeps; ++s) mid = rk4_step(model, mid, c, 0.5 * h / substeps);
    os << format_double((j + 0.5) * h);
    for (int i = 0; i < m; ++i) os << ',' << format_double(mid(i));
    for (int i = 0; i < l; ++i) os << ',' << format_double(c(i));
    os << '\n';
  }
}

}  // namespace horloop
