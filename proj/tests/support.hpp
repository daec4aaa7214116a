#pragma once

#include <functional>
#include <numbers>
#include <vector>

#include "horloop/models.hpp"
#include "horloop/paths.hpp"
#include "horloop/rng.hpp"

namespace horloop::test {

inline constexpr double kPi = std::numbers::pi;

inline Vec random_vec(SplitMix64& rng, int n, double amplitude = 1.0) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = amplitude * rng.normal();
  return v;
}

inline Control random_control(SplitMix64& rng, int intervals, int rank, double amplitude = 1.0) {
  Control u = Control::zeros(intervals, rank);
  for (int j = 0; j < intervals; ++j) {
    for (int i = 0; i < rank; ++i) u.values()(j, i) = amplitude * rng.normal();
  }
  return u;
}

// A basepoint well inside the chart and a control amplitude that keeps the
// curve there.
struct Sample {
  Vec x0;
  double amplitude;
};

inline Sample sample_for(const Model& model, SplitMix64& rng) {
  const bool sphere = model.name == "round_s2" || model.name == "contact_s3";
  return {random_vec(rng, model.dim, sphere ? 0.3 : 1.0), sphere ? 0.4 : 1.0};
}

inline std::vector<Model> builtin_models() {
  return {heisenberg(1), heisenberg(2), flat_torus(2), contact_t3(), round_s2(), contact_s3()};
}

// Central differences of f, one column per coordinate of x.
inline Mat central_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  const Vec f0 = f(x);
  Mat J(f0.size(), x.size());
  for (int k = 0; k < x.size(); ++k) {
    Vec xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    J.col(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

inline double relative_error(const Mat& a, const Mat& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

}  // namespace horloop::test
