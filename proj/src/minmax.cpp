#include <algorithm>
#include <cmath>
#include <sstream>

#include "horloop/error.hpp"
#include "horloop/parallel.hpp"
#include "horloop/rng.hpp"
#include "horloop/solvers.hpp"

namespace horloop {

namespace {

constexpr double kHandover = 1e-3;
constexpr double kLevelGap = 1e-6;
constexpr double kStagnation = 0.95;
constexpr int kPatience = 3;

struct Member {
  Loop loop;
  double energy = 0.0;
  bool climber = false;
};

// Flattened (control, basepoint) vector and its product-metric norm.
Vec flatten(const Loop& loop) {
  const int nu = static_cast<int>(loop.control.flat().size());
  Vec v(nu + loop.basepoint.size());
  v.head(nu) = loop.control.flat();
  v.tail(loop.basepoint.size()) = loop.basepoint;
  return v;
}

double metric_dot(const Vec& a, const Vec& b, int nu, double weight) {
  return weight * a.head(nu).dot(b.head(nu)) + a.tail(a.size() - nu).dot(b.tail(b.size() - nu));
}

Loop unflatten(const Loop& like, const Vec& v) {
  Loop out = like;
  const int nu = static_cast<int>(like.control.flat().size());
  out.control.flat() = v.head(nu);
  out.basepoint = v.tail(v.size() - nu);
  return out;
}

// Armijo descent step; returns the input unchanged when no step is accepted.
Member descend(const Model& model, const Member& m, const SolverConfig& config) {
  const ProjectedGradient g = project_gradient(model, m.loop, config);
  if (g.constant || g.norm == 0.0) return m;
  double alpha = config.step0;
  for (int bt = 0; bt < config.max_backtracks; ++bt) {
    try {
      Loop trial = m.loop;
      trial.control.flat() -= alpha * g.grad_control.flat();
      trial.basepoint -= alpha * g.grad_base;
      trial = restore_constraint(model, trial, config);
      const double e = loop_energy(trial);
      if (e <= m.energy - config.armijo * alpha * g.norm * g.norm) return {std::move(trial), e, m.climber};
    } catch (const RestorationFailure&) {
    } catch (const DomainError&) {
    }
    alpha *= config.backtrack;
  }
  return m;
}

// Eigenvector-following step for the top loop. The negative-curvature
// subspace of the Hessian on the loop space is estimated by block Lanczos
// with finite-difference Hessian-vector products; along those modes the
// step is a one-dimensional Newton step (uphill), elsewhere it is the plain
// projected gradient step.
struct TangentSpace {
  Mat W;
  double w = 1.0;
  int nu = 0;
  Eigen::LDLT<Mat> gram;

  TangentSpace(const ProjectedGradient& g, int controls) : W(g.normals), w(g.weight), nu(controls) {
    Mat G(W.cols(), W.cols());
    for (int i = 0; i < W.cols(); ++i)
      for (int k = 0; k < W.cols(); ++k) G(i, k) = metric_dot(W.col(i), W.col(k), nu, w);
    gram.compute(G);
  }
  double dot(const Vec& a, const Vec& b) const { return metric_dot(a, b, nu, w); }
  Vec project(Vec v) const {
    Vec rhs(W.cols());
    for (int i = 0; i < W.cols(); ++i) rhs(i) = dot(W.col(i), v);
    v -= W * gram.solve(rhs);
    return v;
  }
};

Vec gradient_vector(const ProjectedGradient& g) {
  Vec v(g.grad_control.flat().size() + g.grad_base.size());
  v << g.grad_control.flat(), g.grad_base;
  return v;
}

struct ModeOutcome {
  Member member;
  bool accepted = false;
  double ratio = 1.0;  // new gradient norm / old
  std::vector<Vec> modes;
};

ModeOutcome follow_modes(const Model& model, const Member& m, const ProjectedGradient& g,
                         const Vec& hint, const std::vector<Vec>& previous, std::uint64_t seed,
                         const SolverConfig& config) {
  constexpr int kBlock = 4;
  constexpr int kBasis = 24;
  constexpr double kFd = 1e-5;
  const int nu = static_cast<int>(m.loop.control.flat().size());
  const TangentSpace T(g, nu);
  const Vec base = flatten(m.loop);
  const Vec grad = gradient_vector(g);
  const int tangent_dim = static_cast<int>(base.size()) - static_cast<int>(g.normals.cols());
  ModeOutcome out{m, false, 1.0, {}};
  try {
    auto hvp = [&](const Vec& v) {
      const Loop lp = restore_constraint(model, unflatten(m.loop, base + kFd * v), config);
      const Loop lm = restore_constraint(model, unflatten(m.loop, base - kFd * v), config);
      const Vec d = gradient_vector(project_gradient(model, lp, config)) -
                    gradient_vector(project_gradient(model, lm, config));
      return T.project(d / (2.0 * kFd));
    };
    std::vector<Vec> Q, HQ;
    const int limit = std::min(kBasis, tangent_dim);
    auto add = [&](Vec v) {
      if (static_cast<int>(Q.size()) >= limit) return false;
      v = T.project(v);
      const double n0 = std::sqrt(std::max(0.0, T.dot(v, v)));
      if (!(n0 > 0.0)) return false;
      for (int pass = 0; pass < 2; ++pass)
        for (const Vec& q : Q) v -= T.dot(q, v) * q;
      const double n = std::sqrt(std::max(0.0, T.dot(v, v)));
      if (n < 1e-8 * n0) return false;
      Q.push_back(v / n);
      HQ.push_back(hvp(Q.back()));
      return true;
    };
    SplitMix64 rng(seed);
    add(hint);
    add(grad);
    for (const Vec& p : previous) add(p);
    while (static_cast<int>(Q.size()) < std::min(kBlock, limit)) {
      Vec r(base.size());
      for (int i = 0; i < r.size(); ++i) r(i) = rng.normal();
      if (!add(r)) break;
    }
    std::size_t block_start = 0;
    while (static_cast<int>(Q.size()) < limit) {
      const std::size_t block_end = Q.size();
      bool grew = false;
      for (std::size_t i = block_start; i < block_end; ++i) grew = add(HQ[i]) || grew;
      if (!grew) break;
      block_start = block_end;
    }
    const int k = static_cast<int>(Q.size());
    Mat R(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) R(i, j) = T.dot(Q[i], HQ[j]);
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (R + R.transpose()));
    const double top = es.eigenvalues().cwiseAbs().maxCoeff();
    Vec d = -grad;
    for (int i = 0; i < k; ++i) {
      const double theta = es.eigenvalues()(i);
      if (!(theta < -1e-3 * std::max(1.0, top))) continue;
      Vec v = Vec::Zero(base.size());
      for (int j = 0; j < k; ++j) v += es.eigenvectors()(j, i) * Q[j];
      v /= std::sqrt(T.dot(v, v));
      const double gi = T.dot(v, grad);
      d += gi * v - (gi / theta) * v;
      out.modes.push_back(v);
    }
    double alpha = 1.0;
    for (int bt = 0; bt < 12; ++bt, alpha *= 0.5) {
      try {
        const Loop trial = restore_constraint(model, unflatten(m.loop, base + alpha * d), config);
        const ProjectedGradient gt = project_gradient(model, trial, config);
        if (!gt.constant && gt.norm < g.norm) {
          out.member = {trial, loop_energy(trial), m.climber};
          out.accepted = true;
          out.ratio = gt.norm / g.norm;
          return out;
        }
      } catch (const RestorationFailure&) {
      } catch (const DomainError&) {
      }
    }
  } catch (const NumericalFailure&) {
  }
  return out;
}

// Damped Newton step on the Lagrange system
//   sqrt(w) (u - dF* lam) = 0,  (d_x phi - I)^T lam = 0,  G(u, x) = 0
// in (u, x, lam). Saddle points are fixed points of this iteration just like
// minima; the pseudo-inverse ignores the flat directions coming from
// symmetries and reparametrization. Second derivatives of F enter through
// central differences of the Jacobians.
struct KktState {
  Vec r1, r2, r3;
  EndpointJacobians jac;
};

KktState kkt_residual(const Model& model, const Loop& loop, const Vec& lam, int substeps) {
  KktState s;
  s.jac = endpoint_jacobians(model, loop.control, loop.basepoint, substeps);
  const double w = s.jac.weight();
  const int m = model.dim;
  s.r1 = std::sqrt(w) * (loop.control.flat() - s.jac.jac_control.transpose() * lam / w);
  s.r2 = (s.jac.jac_flow - Mat::Identity(m, m)).transpose() * lam;
  Vec shift = Vec::Zero(m);
  if (model.lattice) shift = *model.lattice * loop.klass.cast<double>();
  s.r3 = s.jac.endpoint - loop.basepoint - shift;
  return s;
}

double kkt_norm(const KktState& s) {
  return std::sqrt(s.r1.squaredNorm() + s.r2.squaredNorm() + s.r3.squaredNorm());
}

Vec stack(const KktState& s) {
  Vec r(s.r1.size() + s.r2.size() + s.r3.size());
  r << s.r1, s.r2, s.r3;
  return r;
}

struct NewtonOutcome {
  Member member;
  bool accepted = false;
};

NewtonOutcome newton(const Model& model, const Member& m, const Vec& lam0, double gnorm,
                     const SolverConfig& config) {
  const int nu = static_cast<int>(m.loop.control.flat().size());
  const int dim = model.dim;
  const int n = nu + 2 * dim;
  const double w = m.loop.control.step();
  const double sw = std::sqrt(w);
  try {
    const KktState s0 = kkt_residual(model, m.loop, lam0, config.substeps);
    Mat J = Mat::Zero(n, n);
    // Columns in scaled variables: sqrt(w) u, x, lam.
    const Vec base = flatten(m.loop);
    for (int k = 0; k < nu + dim; ++k) {
      const double scale = k < nu ? 1.0 / sw : 1.0;
      const double h = 1e-5 * (1.0 + std::abs(base(k)));
      Vec zp = base, zm = base;
      zp(k) += h;
      zm(k) -= h;
      const EndpointJacobians jp = endpoint_jacobians(model, unflatten(m.loop, zp).control,
                                                      unflatten(m.loop, zp).basepoint, config.substeps);
      const EndpointJacobians jm = endpoint_jacobians(model, unflatten(m.loop, zm).control,
                                                      unflatten(m.loop, zm).basepoint, config.substeps);
      const Vec d1 = (jp.jac_control - jm.jac_control).transpose() * lam0 / (2.0 * h);
      const Vec d2 = (jp.jac_flow - jm.jac_flow).transpose() * lam0 / (2.0 * h);
      J.block(0, k, nu, 1) = -(d1 / sw) * scale;
      if (k < nu) J(k, k) += sw * scale;
      J.block(nu, k, dim, 1) = d2 * scale;
    }
    const Mat flow_minus_id = s0.jac.jac_flow - Mat::Identity(dim, dim);
    J.block(nu + dim, 0, dim, nu) = s0.jac.jac_control / sw;
    J.block(nu + dim, nu, dim, dim) = flow_minus_id;
    J.block(0, nu + dim, nu, dim) = -s0.jac.jac_control.transpose() / sw;
    J.block(nu, nu + dim, dim, dim) = flow_minus_id.transpose();

    Eigen::BDCSVD<Mat> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-8);
    Vec step = -svd.solve(stack(s0));
    step.head(nu) /= sw;
    const double r0 = kkt_norm(s0);
    double alpha = 1.0;
    for (int bt = 0; bt < 8; ++bt) {
      Vec z = base + alpha * step.head(nu + dim);
      const Vec lam = lam0 + alpha * step.tail(dim);
      Loop trial = unflatten(m.loop, z);
      const double r = kkt_norm(kkt_residual(model, trial, lam, config.substeps));
      if (r < (1.0 - 1e-4 * alpha) * r0) {
        trial = restore_constraint(model, trial, config);
        const ProjectedGradient g = project_gradient(model, trial, config);
        if (!g.constant && g.norm < gnorm) return {{trial, loop_energy(trial), m.climber}, true};
      }
      alpha *= 0.5;
    }
  } catch (const NumericalFailure&) {
  }
  return {m, false};
}

Loop interpolate(const Model& model, const Loop& a, const Loop& b, const SolverConfig& config) {
  if (a.klass != b.klass) throw MeshFailure("neighbouring loops lie in different classes");
  Loop mid{0.5 * (a.control + b.control), 0.5 * (a.basepoint + b.basepoint), a.klass};
  try {
    return restore_constraint(model, mid, config);
  } catch (const NumericalFailure&) {
  }
  // Close the blended curve by steering its endpoint back to the basepoint,
  // then restore the concatenation.
  try {
    const Vec end = integrate(model, mid.control, mid.basepoint, config.substeps).endpoint();
    SteerConfig sc;
    sc.intervals = std::max(1, mid.control.intervals() / 4);
    sc.substeps = config.substeps;
    sc.radius = model.scale + mid.basepoint.norm() + end.norm();
    const SteerResult s =
        steer_local(model, end, mid.basepoint + (model.lattice ? Vec(*model.lattice * a.klass.cast<double>()) : Vec::Zero(model.dim)), sc);
    Loop joined = mid;
    if (s.T > 0.0) {
      Control tail = s.control;
      tail = Control(tail.values(), s.T);
      joined.control = concatenate(mid.control, tail, s.T, mid.control.intervals());
    }
    return restore_constraint(model, joined, config);
  } catch (const NumericalFailure& e) {
    throw MeshFailure(std::string("cannot insert an interpolating loop: ") + e.what());
  }
}

}  // namespace

MinmaxResult minmax_sweep(const Model& model, const Sweep& sweep0, const MinmaxConfig& config) {
  const SolverConfig& sc = config.solver;
  if (sweep0.loops.size() < 3) throw InputError("minmax_sweep: sweep needs at least three loops");
  const int threads = thread_budget(config.threads);

  std::vector<Member> members(sweep0.loops.size());
  parallel_for(static_cast<int>(members.size()), threads, [&](int i) {
    Loop l = sweep0.loops[i];
    if (loop_residual(model, l, sc.substeps).norm() >= sc.tol_loop) l = restore_constraint(model, l, sc);
    members[i] = {l, loop_energy(l)};
  });

  double mesh = config.mesh_bound;
  if (mesh <= 0.0) {
    for (std::size_t i = 0; i < members.size(); ++i) {
      mesh = std::max(mesh, control_distance(members[i].loop, members[(i + 1) % members.size()].loop));
    }
    mesh *= 1.5;
    if (mesh <= 0.0) mesh = 1e-3 * model.scale;
  }
  const double collapse =
      config.epsilon_contract > 0.0 ? config.epsilon_contract : 1e-6 * model.scale * model.scale;
  const std::size_t max_loops =
      config.max_loops > 0 ? config.max_loops : 8 * sweep0.loops.size();

  MinmaxResult result;
  result.trace.status = SolveStatus::max_iter;
  int slow = 0;
  std::size_t top = 0;
  ProjectedGradient top_grad;
  std::vector<Vec> modes;

  for (int it = 0; it <= sc.max_iter; ++it) {
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < members.size(); ++i) {
      if (members[i].energy > members[argmax].energy) argmax = i;
    }
    const double emax = members[argmax].energy;
    if (emax < collapse) {
      std::ostringstream msg;
      msg << "max energy " << emax << " fell below " << collapse << ": level collapses to zero";
      throw LevelCollapse(msg.str());
    }
    // The climbing loop is kept across iterations and handed over only when
    // another loop is clearly higher; re-electing the argmax every step makes
    // the top hop between near-critical loops.
    top = members.size();
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (members[i].climber) top = i;
    }
    if (top == members.size() || !config.climb ||
        emax > members[top].energy + kHandover * emax) {
      if (top < members.size()) members[top].climber = false;
      top = argmax;
      members[top].climber = true;
      slow = 0;
      modes.clear();
    }
    top_grad = project_gradient(model, members[top].loop, sc);
    result.trace.iterates.push_back(
        {emax, top_grad.norm, loop_residual(model, members[top].loop, sc.substeps).norm()});
    result.trace.tracked.push_back(members[top].loop);
    if (top_grad.norm < sc.tol_grad && emax - members[top].energy <= kLevelGap * emax) {
      result.trace.status = SolveStatus::converged;
      break;
    }
    if (it == sc.max_iter) break;

    // Deformation of the band below the maximum.
    const double floor = (1.0 - config.band_frac) * emax;
    std::vector<std::size_t> band;
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (members[i].energy >= floor) band.push_back(i);
    }
    std::vector<Member> updated(band.size());
    const std::size_t P = members.size();
    parallel_for(static_cast<int>(band.size()), threads, [&](int k) {
      const std::size_t i = band[k];
      if (i != top || !config.climb) {
        updated[k] = descend(model, members[i], sc);
        return;
      }
      updated[k] = members[i];
      // Newton takes over once the gradient steps stagnate, which happens
      // along nearly flat modes.
      if (slow >= kPatience) {
        const NewtonOutcome n = newton(model, members[i], top_grad.multiplier, top_grad.norm, sc);
        if (n.accepted) {
          updated[k] = n.member;
          return;
        }
      }
      const Vec hint = flatten(members[(i + 1) % P].loop) - flatten(members[(i + P - 1) % P].loop);
      const ModeOutcome f = follow_modes(model, members[i], top_grad, hint, modes,
                                         static_cast<std::uint64_t>(it) + 1, sc);
      if (f.accepted) {
        updated[k] = f.member;
        modes = f.modes;
        slow = f.ratio > kStagnation ? slow + 1 : 0;
      } else {
        slow = kPatience;
      }
    });
    for (std::size_t k = 0; k < band.size(); ++k) members[band[k]] = std::move(updated[k]);

    // Re-mesh: insert an interpolant into every gap wider than the mesh
    // bound, then drop low loops whose neighbours are already close.
    std::vector<Member> meshed;
    meshed.reserve(members.size() + 8);
    for (std::size_t i = 0; i < members.size(); ++i) {
      meshed.push_back(members[i]);
      const Member& next = members[(i + 1) % members.size()];
      if (control_distance(members[i].loop, next.loop) > mesh) {
        Loop mid = interpolate(model, members[i].loop, next.loop, sc);
        const double e = loop_energy(mid);
        meshed.push_back({std::move(mid), e, false});
      }
    }
    const double keep_above = floor;
    std::vector<Member> pruned;
    pruned.reserve(meshed.size());
    for (std::size_t i = 0; i < meshed.size(); ++i) {
      const Loop& prev = pruned.empty() ? meshed.back().loop : pruned.back().loop;
      const Loop& next = i + 1 < meshed.size() ? meshed[i + 1].loop : pruned.front().loop;
      const bool low = meshed[i].energy < keep_above;
      const std::size_t remaining = pruned.size() + (meshed.size() - i - 1);
      if (low && remaining >= 3 && control_distance(prev, next) <= 0.75 * mesh) continue;
      pruned.push_back(meshed[i]);
    }
    members = std::move(pruned);
    if (members.size() > max_loops) {
      throw MeshFailure("sweep grew beyond " + std::to_string(max_loops) + " loops");
    }
  }

  top = 0;
  for (std::size_t i = 1; i < members.size(); ++i) {
    if (members[i].energy > members[top].energy) top = i;
  }
  result.level = members[top].energy;
  result.critical = members[top].loop;
  const ProjectedGradient final_grad = project_gradient(model, result.critical, sc);
  result.report = lagrange_residual(model, result.critical.control, result.critical.basepoint,
                                    final_grad.multiplier, sc.certificate, sc.substeps, true);
  for (auto& m : members) result.sweep.loops.push_back(std::move(m.loop));
  return result;
}

}  // namespace horloop
