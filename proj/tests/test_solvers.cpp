#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "horloop/cli.hpp"
#include "horloop/error.hpp"
#include "horloop/solvers.hpp"
#include "support.hpp"

using namespace horloop;
using namespace horloop::test;

namespace {

const double kTwoPiSq = 2.0 * kPi * kPi;

Vec flatten(const ProjectedGradient& g) {
  Vec v(g.grad_control.flat().size() + g.grad_base.size());
  v << g.grad_control.flat(), g.grad_base;
  return v;
}

// Product metric: weighted L2 on the control block, Euclidean on the base.
double metric_dot(const Vec& a, const Vec& b, Eigen::Index nu, double w) {
  return w * a.head(nu).dot(b.head(nu)) + a.tail(a.size() - nu).dot(b.tail(b.size() - nu));
}

Loop flat_geodesic() {
  return {Control::constant(64, Eigen::Vector2d(2 * kPi, 0)), Eigen::Vector2d(0.5, 0.5), Eigen::Vector2i(1, 0)};
}

}  // namespace

TEST_CASE("loop residual") {
  const Loop still{Control::zeros(16, 3), Eigen::Vector3d(0.1, 0.2, 0.3), IVec::Zero(0)};
  CHECK(loop_residual(heisenberg(1), {Control::zeros(16, 2), still.basepoint, IVec::Zero(0)}).isZero());
  CHECK(loop_residual(flat_torus(2), flat_geodesic()).norm() < 1e-12);
  SplitMix64 rng(41);
  const Loop open{random_control(rng, 16, 2), Vec::Zero(3), IVec::Zero(0)};
  CHECK(loop_residual(heisenberg(1), open).norm() > 1e-3);
}

TEST_CASE("projected gradient examples") {
  const ProjectedGradient still =
      project_gradient(flat_torus(2), {Control::zeros(16, 2), Vec::Zero(2), Eigen::Vector2i(0, 0)});
  CHECK(still.constant);
  CHECK(still.norm == 0.0);

  const ProjectedGradient g = project_gradient(flat_torus(2), flat_geodesic());
  CHECK(g.norm < 1e-12);
  CHECK(g.multiplier.isApprox(Eigen::Vector2d(2 * kPi, 0)));
}

TEST_CASE("projected gradient is orthogonal to the constraint normals") {
  SplitMix64 rng(42);
  const std::vector<std::pair<Model, IVec>> cases = {
      {heisenberg(1), IVec::Zero(0)},
      {contact_t3(), IVec(Eigen::Vector3i(0, 0, 1))},
      {flat_torus(2), IVec(Eigen::Vector2i(1, 1))},
      {contact_s3(), IVec::Zero(0)},
  };
  for (const auto& [model, klass] : cases) {
    for (int trial = 0; trial < 5; ++trial) {
      const Loop loop = random_loop_in_class(model, klass, 32, rng, 0.3);
      const ProjectedGradient g = project_gradient(model, loop);
      REQUIRE(g.norm > 0.0);
      const Vec grad = flatten(g);
      const Eigen::Index nu = g.grad_control.flat().size();
      for (int i = 0; i < g.normals.cols(); ++i) {
        const Vec wi = g.normals.col(i);
        const double cosine =
            metric_dot(grad, wi, nu, g.weight) /
            std::sqrt(metric_dot(grad, grad, nu, g.weight) * metric_dot(wi, wi, nu, g.weight));
        CHECK_MESSAGE(std::abs(cosine) < 1e-9, model.name);
      }
    }
  }
}

TEST_CASE("restore_constraint") {
  SUBCASE("closed loop is a fixed point") {
    const Loop loop = flat_geodesic();
    const Loop same = restore_constraint(flat_torus(2), loop);
    CHECK(same.control.values() == loop.control.values());
    CHECK(same.basepoint == loop.basepoint);
  }
  SUBCASE("flat torus, shifted control") {
    Loop loop = flat_geodesic();
    loop.control.values().col(1).array() += 1e-3;
    const Loop r = restore_constraint(flat_torus(2), loop);
    CHECK(loop_residual(flat_torus(2), r).norm() < 1e-10);
    CHECK(control_distance(r, loop) < 2e-3);
    CHECK(r.klass == loop.klass);
  }
  SUBCASE("heisenberg, energy changes to second order") {
    const Model model = heisenberg(1);
    SplitMix64 rng(43);
    const Loop base = random_loop_in_class(model, IVec::Zero(0), 32, rng, 1.0);
    const Control direction = random_control(rng, 32, 2);
    std::vector<double> change;
    for (double eps : {1e-2, 5e-3}) {
      // Perturb tangentially: remove the normal part of the direction first.
      const ProjectedGradient g = project_gradient(model, base);
      Vec d(direction.flat().size() + 3);
      d << direction.flat(), Vec::Zero(3);
      const Eigen::Index nu = direction.flat().size();
      Mat gram(3, 3);
      Vec rhs(3);
      for (int i = 0; i < 3; ++i) {
        rhs(i) = metric_dot(g.normals.col(i), d, nu, g.weight);
        for (int j = 0; j < 3; ++j) gram(i, j) = metric_dot(g.normals.col(i), g.normals.col(j), nu, g.weight);
      }
      d -= g.normals * gram.ldlt().solve(rhs);
      Loop moved = base;
      moved.control.flat() += eps * d.head(nu);
      moved.basepoint += eps * d.tail(3);
      const Loop r = restore_constraint(model, moved);
      CHECK(loop_residual(model, r).norm() < 1e-10);
      change.push_back(std::abs(loop_energy(r) - loop_energy(moved)));
    }
    CHECK(change[0] / change[1] > 3.0);
  }
  SUBCASE("far from the loop space") {
    const Loop far{Control::constant(8, Eigen::Vector2d(100, 0)), Vec::Zero(3), IVec::Zero(0)};
    CHECK_THROWS_AS(restore_constraint(heisenberg(1), far), RestorationFailure);
  }
}

TEST_CASE("minimize_in_class on the flat torus") {
  SplitMix64 rng(44);
  const Model model = flat_torus(2);
  for (const auto& [klass, target] :
       {std::pair{Eigen::Vector2i(1, 0), kTwoPiSq}, std::pair{Eigen::Vector2i(1, 1), 2.0 * kTwoPiSq}}) {
    for (int seed = 0; seed < 3; ++seed) {
      const Loop start = random_loop_in_class(model, klass, 64, rng, 1.0);
      const MinimizeResult r = minimize_in_class(model, start);
      CHECK(r.trace.status == SolveStatus::converged);
      CHECK(loop_energy(r.loop) == doctest::Approx(target).epsilon(0.01));
      CHECK(loop_energy(r.loop) >= target * 0.99);
      CHECK(r.loop.klass == IVec(klass));
      CHECK(r.report.certified);
      // Descent monotonicity.
      for (std::size_t k = 1; k < r.trace.iterates.size(); ++k) {
        CHECK(r.trace.iterates[k].energy <= r.trace.iterates[k - 1].energy);
      }
      // The two criticality formulations agree.
      const double tol = SolverConfig{}.tol_grad;
      CHECK(r.trace.iterates.back().grad_norm < tol);
      CHECK(r.report.lagrange_residual_control < 10 * tol);
      CHECK(r.report.lagrange_residual_base < 10 * tol);
    }
  }
}

TEST_CASE("minimize_in_class on contact T3") {
  const Model model = contact_t3();
  // Near the vertical circle u = (2 pi, 0), plus a wobble.
  Control u = Control::constant(64, Eigen::Vector2d(2 * kPi, 0));
  for (int j = 0; j < 64; ++j) u.values()(j, 1) = 0.3 * std::sin(2 * kPi * (j + 0.5) / 64);
  const Loop seed = restore_constraint(model, {u, Eigen::Vector3d(0.1, 0.2, 0.0), Eigen::Vector3i(0, 0, 1)});
  const MinimizeResult r = minimize_in_class(model, seed);
  CHECK(r.trace.status == SolveStatus::converged);
  CHECK(loop_energy(r.loop) <= loop_energy(seed));
  CHECK(r.report.lagrange_residual_control < 1e-6);
  CHECK(r.report.lagrange_residual_base < 1e-6);
  CHECK(r.report.certified);
  CHECK(r.loop.klass == Eigen::Vector3i(0, 0, 1));
}

TEST_CASE("minmax on the round sphere") {
  const Model model = round_s2();
  const MinmaxResult r = minmax_sweep(model, latitude_sweep(model, 32, 64));
  CHECK(r.trace.status == SolveStatus::converged);
  CHECK(r.level == doctest::Approx(kTwoPiSq).epsilon(0.02));
  CHECK(r.report.certified);
  // The critical loop is a great circle: unit sphere speed 2 pi.
  CHECK(r.report.mean_speed == doctest::Approx(2 * kPi).epsilon(0.02));
}

TEST_CASE("minmax on contact S3") {
  const Model model = contact_s3();
  const MinmaxResult r = minmax_sweep(model, latitude_sweep(model, 32, 64));
  CHECK(r.trace.status == SolveStatus::converged);
  CHECK(r.level > 1e-3);
  CHECK(r.report.certified);
  CHECK(cli::tail_spread(r.trace) < 1e-4);
  const double tol = SolverConfig{}.tol_grad;
  CHECK(r.trace.iterates.back().grad_norm < tol);
  CHECK(r.report.lagrange_residual_control < 10 * tol);
  CHECK(r.report.lagrange_residual_base < 10 * tol);
}

TEST_CASE("minmax on a sweep of constant loops collapses") {
  CHECK_THROWS_AS(minmax_sweep(round_s2(), constant_sweep(round_s2(), 8, 16)), LevelCollapse);
  CHECK_THROWS_AS(minmax_sweep(flat_torus(2), constant_sweep(flat_torus(2), 8, 16)), LevelCollapse);
}

TEST_CASE("latitude sweeps need a supported model") {
  CHECK_THROWS_AS(latitude_sweep(flat_torus(2), 8, 16), UnsupportedOperation);
  const Sweep s = latitude_sweep(round_s2(), 8, 32);
  for (const Loop& loop : s.loops) CHECK(loop_residual(round_s2(), loop).norm() < 1e-10);
}

TEST_CASE("contraction of small sweeps") {
  const Model model = flat_torus(2);
  SUBCASE("constant loops need no slices") {
    const ContractionResult r = contract_small_sweep(model, constant_sweep(model, 6, 16), 1e-4);
    CHECK(r.slice_count == 0);
  }
  SUBCASE("class zero loops of energy 1e-4") {
    SplitMix64 rng(45);
    const Sweep sweep = small_loop_sweep(model, 12, 64, 1e-4, rng);
    ContractConfig config;
    config.slices = 20;
    const ContractionResult r = contract_small_sweep(model, sweep, 1e-4, config);
    for (std::size_t i = 0; i < sweep.loops.size(); ++i) {
      REQUIRE(r.slices[i].size() <= 20);
      for (const Loop& slice : r.slices[i]) CHECK(loop_residual(model, slice).norm() < 1e-10);
      CHECK(r.slices[i].back().control.norm() < 1e-10);
    }
    CHECK(r.max_energy <= 1e-4);
  }
  SUBCASE("a class (1, 0) loop cannot contract") {
    SplitMix64 rng(46);
    Sweep sweep = small_loop_sweep(model, 4, 64, 1e-4, rng);
    sweep.loops.push_back(flat_geodesic());
    CHECK_THROWS_AS(contract_small_sweep(model, sweep, 1e-4), ContractionFailure);
  }
}
