#include <cmath>
#include <numbers>

#include "horloop/error.hpp"
#include "horloop/solvers.hpp"

namespace horloop {

namespace {

constexpr double kPi = std::numbers::pi;

// Ambient contact frame of S^3 (see contact_s3()).
Vec s3_frame_x(const Eigen::Vector4d& p) { return Eigen::Vector4d(-p(2), p(3), p(0), -p(1)); }
Vec s3_frame_y(const Eigen::Vector4d& p) { return Eigen::Vector4d(-p(3), -p(2), p(1), p(0)); }

// The frame is a multiple of the identity, so a constant control moves along
// a straight chord. Each interval covers the chord between consecutive
// vertices of the inscribed polygon exactly: |u| h = int ds / a(q(s)).
Loop round_s2_latitude(double theta, int intervals) {
  const double r = std::tan(0.5 * theta);
  const double h = 1.0 / intervals;
  ControlMatrix values(intervals, 2);
  for (int j = 0; j < intervals; ++j) {
    const Eigen::Vector2d p0(r * std::cos(2.0 * kPi * j * h), r * std::sin(2.0 * kPi * j * h));
    const Eigen::Vector2d p1(r * std::cos(2.0 * kPi * (j + 1) * h), r * std::sin(2.0 * kPi * (j + 1) * h));
    const double len = (p1 - p0).norm();
    const Eigen::Vector2d dir = (p1 - p0) / len;
    const double b = p0.dot(dir);
    const double c = std::sqrt(1.0 + p0.squaredNorm() - b * b);
    const double time = 2.0 / c * (std::atan((len + b) / c) - std::atan(b / c));
    values.row(j) = (time / h) * dir.transpose();
  }
  return {Control(std::move(values)), Eigen::Vector2d(r, 0.0), IVec::Zero(0)};
}

// Circle of polar angle s about e2 on the great sphere through e1, e2, e3;
// the chart maps that sphere to the unit sphere. Its equator is a Legendrian
// great circle. Off the equator the circle is replaced by its horizontal
// lift: the fibre angle theta solves theta' = -alpha(p'), and the contact
// frame turns by 2 theta relative to the unrotated one.
Loop contact_s3_latitude(double s, int intervals) {
  constexpr int kSamples = 16;
  const double h = 1.0 / intervals;
  const double rate = 2.0 * kPi * std::sin(s) * std::cos(s);  // alpha(p') = rate sin(phi)
  ControlMatrix values = ControlMatrix::Zero(intervals, 2);
  for (int j = 0; j < intervals; ++j) {
    for (int k = 0; k < kSamples; ++k) {
      const double t = (j + (k + 0.5) / kSamples) * h;
      const double phi = 2.0 * kPi * t;
      const Eigen::Vector4d p(std::sin(s) * std::cos(phi), std::cos(s), std::sin(s) * std::sin(phi), 0.0);
      const Eigen::Vector4d vel =
          2.0 * kPi * std::sin(s) * Eigen::Vector4d(-std::sin(phi), 0.0, std::cos(phi), 0.0);
      const double theta = -rate * (1.0 - std::cos(phi)) / (2.0 * kPi);
      const Eigen::Vector2d c(vel.dot(s3_frame_x(p)), vel.dot(s3_frame_y(p)));
      const double ang = 2.0 * theta;
      values(j, 0) += (std::cos(ang) * c(0) - std::sin(ang) * c(1)) / kSamples;
      values(j, 1) += (std::sin(ang) * c(0) + std::cos(ang) * c(1)) / kSamples;
    }
  }
  return {Control(std::move(values)), Eigen::Vector3d(std::sin(s), std::cos(s), 0.0), IVec::Zero(0)};
}

}  // namespace

Loop random_loop_in_class(const Model& model, const IVec& klass, int intervals, SplitMix64& rng,
                          double amplitude, const SolverConfig& config) {
  Vec x0(model.dim);
  for (int i = 0; i < model.dim; ++i) x0(i) = rng.uniform(0.0, model.scale);
  Vec shift = Vec::Zero(model.dim);
  if (model.lattice) {
    if (klass.size() != model.dim) throw RankMismatch("class has the wrong dimension");
    shift = *model.lattice * klass.cast<double>();
  }
  const Vec base = frame_at(model, x0).completeOrthogonalDecomposition().solve(shift);
  Control u = Control::constant(intervals, base);
  for (int j = 0; j < intervals; ++j) {
    for (int i = 0; i < model.rank; ++i) u.values()(j, i) += amplitude * rng.normal();
  }
  const IVec k = model.lattice ? klass : IVec::Zero(0);
  return restore_constraint(model, Loop{u, x0, k}, config);
}

Sweep latitude_sweep(const Model& model, int count, int intervals, double margin,
                     const SolverConfig& config) {
  if (count < 3) throw InputError("latitude_sweep: need at least three loops");
  const bool s2 = model.name == "round_s2";
  const bool s3 = model.name == "contact_s3";
  if (!s2 && !s3) throw UnsupportedOperation("latitude_sweep: only round_s2 and contact_s3");
  Sweep sweep;
  for (int k = 0; k < count; ++k) {
    const double theta = margin + (kPi - 2.0 * margin) * k / (count - 1);
    Loop loop = s2 ? round_s2_latitude(theta, intervals) : contact_s3_latitude(theta, intervals);
    sweep.loops.push_back(restore_constraint(model, loop, config));
  }
  return sweep;
}

Sweep constant_sweep(const Model& model, int count, int intervals) {
  Sweep sweep;
  for (int k = 0; k < count; ++k) {
    Vec x = Vec::Zero(model.dim);
    x(0) = 0.25 * model.scale * std::cos(2.0 * kPi * k / count);
    if (model.dim > 1) x(1) = 0.25 * model.scale * std::sin(2.0 * kPi * k / count);
    const IVec klass = model.lattice ? IVec(IVec::Zero(model.dim)) : IVec(IVec::Zero(0));
    sweep.loops.push_back({Control::zeros(intervals, model.rank), x, klass});
  }
  return sweep;
}

Sweep small_loop_sweep(const Model& model, int count, int intervals, double target_energy,
                       SplitMix64& rng) {
  if (model.rank < 2) throw InputError("small_loop_sweep: need rank >= 2");
  Sweep sweep;
  for (int k = 0; k < count; ++k) {
    // Sampled at midpoints, cos/sin of a nonzero harmonic sum to zero, so the
    // loop closes exactly in a flat chart.
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const int harmonic = 1 + static_cast<int>(rng.uniform(0.0, 3.0));
    ControlMatrix values = ControlMatrix::Zero(intervals, model.rank);
    for (int j = 0; j < intervals; ++j) {
      const double t = 2.0 * kPi * harmonic * (j + 0.5) / intervals + phase;
      values(j, 0) = std::cos(t);
      values(j, 1) = std::sin(t);
    }
    Control u(std::move(values));
    u *= std::sqrt(target_energy / energy(u));
    Vec x0(model.dim);
    for (int i = 0; i < model.dim; ++i) x0(i) = rng.uniform(0.0, model.scale);
    const IVec klass = model.lattice ? IVec(IVec::Zero(model.dim)) : IVec(IVec::Zero(0));
    sweep.loops.push_back({u, x0, klass});
  }
  return sweep;
}

}  // namespace horloop
