#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "horloop/error.hpp"
#include "horloop/extremals.hpp"
#include "support.hpp"

using namespace horloop;
using namespace horloop::test;

TEST_CASE("hamiltonian examples") {
  CHECK(hamiltonian(contact_t3(), {Eigen::Vector3d(1, 2, 3), Vec::Zero(3)}) == 0.0);
  CHECK(hamiltonian(flat_torus(2), {Vec::Zero(2), Eigen::Vector2d(3, 4)}) == doctest::Approx(12.5));
  const Eigen::Vector3d p(0.7, -1.1, 2.5);
  CHECK(hamiltonian(heisenberg(1), {Vec::Zero(3), p}) == doctest::Approx(0.5 * (0.49 + 1.21)));
  CHECK_THROWS_AS(hamiltonian(round_s2(1.0), {Eigen::Vector2d(2, 0), Eigen::Vector2d(1, 0)}), DomainError);
}

TEST_CASE("extremal flow examples") {
  const ExtremalState rest{Eigen::Vector3d(0.1, 0.2, 0.3), Vec::Zero(3)};
  for (const ExtremalState& s : extremal_flow(contact_t3(), rest, 1.0, 50)) {
    CHECK(s.x == rest.x);
    CHECK(s.lam.isZero());
  }
  const ExtremalState line{Eigen::Vector2d(0.5, 1.0), Eigen::Vector2d(2.0, -1.0)};
  const auto traj = extremal_flow(flat_torus(2), line, 1.0, 10);
  REQUIRE(traj.size() == 11);
  for (int k = 0; k <= 10; ++k) {
    CHECK((traj[k].x - (line.x + 0.1 * k * line.lam)).norm() < 1e-13);
    CHECK(traj[k].lam == line.lam);
  }
}

TEST_CASE("hamiltonian is conserved") {
  SplitMix64 rng(31);
  const std::vector<Model> models = {heisenberg(1), heisenberg(2), contact_t3(), round_s2(), contact_s3()};
  for (int trial = 0; trial < 50; ++trial) {
    const Model& model = models[trial % models.size()];
    ExtremalState s{sample_for(model, rng).x0, random_vec(rng, model.dim)};
    const double H0 = hamiltonian(model, s);
    s.lam /= std::sqrt(2.0 * H0);  // unit speed
    const ExtremalState end = extremal_flow(model, s, 1.0, 1000).back();
    CHECK_MESSAGE(std::abs(hamiltonian(model, end) - 0.5) < 1e-8, model.name);
  }
}

TEST_CASE("projected extremal is driven by its control") {
  SplitMix64 rng(32);
  for (const Model& model : {heisenberg(1), contact_t3(), contact_s3()}) {
    const ExtremalState s{sample_for(model, rng).x0, random_vec(rng, model.dim, 0.5)};
    const int N = 4096;
    const auto traj = extremal_flow(model, s, 1.0, 2 * N);
    Control u = Control::zeros(N, model.rank);
    for (int j = 0; j < N; ++j) u.values().row(j) = extremal_control(model, traj[2 * j + 1]).transpose();
    const Vec x1 = integrate(model, u, s.x, 1).endpoint();
    CHECK_MESSAGE((x1 - traj.back().x).norm() < 1e-7, model.name);
  }
}

TEST_CASE("periodicity residual") {
  const PeriodicityResidual r =
      periodicity_residual(flat_torus(2), {Eigen::Vector2d(0.3, 0.4), Eigen::Vector2d(2 * kPi, 0)}, 1.0);
  CHECK(r.residual.norm() < 1e-12);
  CHECK(r.klass == Eigen::Vector2i(1, 0));
  CHECK(periodicity_residual(contact_t3(), {Eigen::Vector3d(1, 2, 3), Vec::Zero(3)}, 1.0).residual.isZero());
  const PeriodicityResidual g =
      periodicity_residual(contact_t3(), {Eigen::Vector3d(0.1, 0.2, 0.3), Eigen::Vector3d(0.4, -0.7, 0.9)}, 1.0);
  CHECK(g.residual.norm() > 1e-3);
}

namespace {

void check_shot(const ShootResult& r, double energy, double tol_energy, bool certify = true) {
  CHECK(r.periodicity_residual < 1e-8);
  CHECK(r.report.energy == doctest::Approx(energy).epsilon(tol_energy));
  CHECK(0.5 * r.length * r.length == doctest::Approx(energy).epsilon(tol_energy));
  CHECK(r.report.speed_variation / r.report.mean_speed < 1e-6);
  if (!certify) return;
  CHECK(r.report.certified);
  CHECK(r.report.lagrange_residual_control < 1e-6);
  CHECK(r.report.lagrange_residual_base < 1e-6);
}

}  // namespace

TEST_CASE("shoot_closed") {
  const double target = 2 * kPi * kPi;
  SUBCASE("flat torus") {
    const ShootResult r = shoot_closed(flat_torus(2), {Eigen::Vector2d(0.1, 0.2), Eigen::Vector2d(1.0, 0.03)},
                                       2 * kPi * 1.02);
    check_shot(r, target, 1e-6);
    CHECK(r.klass.cwiseAbs() == Eigen::Vector2i(1, 0));
  }
  SUBCASE("round sphere") {
    // H drifts under RK4 at 1000 steps by about 1e-9, which is the floor of
    // the overdetermined residual; finer steps push it below tol_shoot.
    ShootConfig config;
    config.steps = 4000;
    const ShootResult r = shoot_closed(round_s2(), {Eigen::Vector2d(1.02, 0.0), Eigen::Vector2d(0.05, 1.0)},
                                       2 * kPi * 0.98, config);
    // The sampled control of a rotating extremal only certifies to O(h^2).
    check_shot(r, target, 1e-4, false);
    CHECK(r.report.lagrange_residual_control < 1.0);
  }
  SUBCASE("contact T3") {
    const ShootResult r =
        shoot_closed(contact_t3(), {Eigen::Vector3d(0.1, 0.2, 0.0), Eigen::Vector3d(0.05, 0.0, 1.0)}, 2 * kPi);
    check_shot(r, target, 1e-6);
  }
  SUBCASE("degenerate guess") {
    CHECK_THROWS_AS(shoot_closed(flat_torus(2), {Vec::Zero(2), Vec::Zero(2)}, 1.0), DegenerateSolution);
  }
}

TEST_CASE("lagrange residual") {
  const Model torus = flat_torus(2);
  const Control u = Control::constant(64, Eigen::Vector2d(2 * kPi, 0));
  const Vec x0 = Eigen::Vector2d(0.5, 0.5);
  const GeodesicReport rep = lagrange_residual(torus, u, x0, Vec(Eigen::Vector2d(2 * kPi, 0)));
  CHECK(rep.lagrange_residual_control < 1e-9);
  CHECK(rep.lagrange_residual_base < 1e-9);
  CHECK(rep.certified);

  // Without lam the least-squares multiplier is recovered.
  const GeodesicReport ls = lagrange_residual(torus, u, x0);
  CHECK(ls.multiplier.isApprox(Eigen::Vector2d(2 * kPi, 0)));

  const GeodesicReport still = lagrange_residual(torus, Control::zeros(64, 2), Vec::Zero(2), Vec(Vec::Zero(2)));
  CHECK(still.lagrange_residual_control == 0.0);
  CHECK(still.lagrange_residual_base == 0.0);
  CHECK(still.constant);
  CHECK_FALSE(still.certified);

  const Control open = Control::constant(64, Eigen::Vector2d(1.0, 0.3));
  CHECK_THROWS_AS(lagrange_residual(torus, open, Vec::Zero(2)), ConstraintViolation);
}

TEST_CASE("shooting and the lagrange certificate agree") {
  const ShootResult r =
      shoot_closed(contact_t3(), {Eigen::Vector3d(0.1, 0.2, 0.0), Eigen::Vector3d(0.05, 0.0, 1.0)}, 2 * kPi);
  // Independent check with finite-difference Jacobians: u = dF* lam and
  // (J_x - I)^T lam = 0.
  const Model model = contact_t3();
  const Control& u = r.control;
  const Vec& x = r.state.x;
  const Mat fx = central_jacobian([&](const Vec& y) { return integrate(model, u, y).endpoint(); }, x);
  const Mat fu = central_jacobian(
      [&](const Vec& c) { return integrate(model, Control::from_flat(c, model.rank), x).endpoint(); }, Vec(u.flat()));
  const Vec& lam = r.report.multiplier;
  const Control adj = Control::from_flat(u.intervals() * fu.transpose() * lam, model.rank);
  CHECK((adj - u).norm() < 1e-5);
  CHECK(((fx - Mat::Identity(3, 3)).transpose() * lam).norm() < 1e-5);
}
