#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "horloop/control.hpp"

namespace horloop {

using IVec = Eigen::VectorXi;

// A sub-Riemannian structure given in one chart by a frame X_1..X_l of
// vector fields on R^m. The distribution is the span of the frame columns.
//
// `frame_jacobian` returns an m x (m*l) matrix whose i-th m x m block is
// dX_i/dx (row = component of X_i, column = coordinate). `lattice`, when
// present, holds the m generators of a deck group as columns; the model is
// then the quotient R^m / lattice. `oracle` is an exact endpoint map from
// the origin when one is known.
struct Model {
  std::string name;
  int dim = 0;
  int rank = 0;
  std::function<Mat(const Vec&)> frame;
  std::function<Mat(const Vec&)> frame_jacobian;
  std::optional<Mat> lattice;
  std::function<Vec(const Control&)> oracle;
  std::function<bool(const Vec&)> in_domain;
  // Characteristic length of the chart, used for scale-aware defaults.
  double scale = 1.0;

  bool contains(const Vec& x) const { return !in_domain || in_domain(x); }
  bool has_lattice() const { return lattice.has_value(); }
};

struct Point {
  Vec coords;
  std::optional<IVec> klass;
};

// Built-in models.
Model heisenberg(int a);
Model flat_torus(int m);
// R^3 / (2 pi Z)^3 with frame dz and sin z dx + cos z dy.
Model contact_t3();
// Unit sphere in the stereographic chart from the north pole, orthonormal
// frame. Points with |x| > chart_radius are outside the domain.
Model round_s2(double chart_radius = 50.0);
// Unit sphere S^3 with the standard contact frame, stereographic chart.
Model contact_s3(double chart_radius = 50.0);

// Same distribution with an extra column X_{l+1} = X_1 + X_2.
Model with_redundant_frame(const Model& base);

// Lookup by name with a numeric parameter list, as used by the CLI.
Model make_model(const std::string& name, const std::vector<double>& params);

Mat frame_at(const Model& model, const Vec& x);
std::vector<Mat> frame_jacobians_at(const Model& model, const Vec& x);

// Block-diagonal bracket matrix diag(J, ..., J), J = [[0, 1], [-1, 0]].
Mat heisenberg_bracket(int a);

// Endpoint from the origin of the rank-2a Heisenberg model, computed in
// closed form for a piecewise-constant control.
Vec heisenberg_endpoint_exact(int a, const Control& u);

// Left translation L(x, y) in the Heisenberg group with the bracket above.
Vec group_translate(int a, const Vec& x, const Vec& y);

// Fundamental-domain representative: coords = x - B k with B^{-1} coords in
// [0, 1)^m and klass = k.
Point reduce_mod_lattice(const Model& model, const Vec& x);

// Centered reduction of a displacement: d - B k with k the nearest integer
// coefficients. Returns d unchanged (and klass zero) without a lattice.
Point reduce_displacement(const Model& model, const Vec& d);

}  // namespace horloop
