#include "horloop/models.hpp"

#include <cmath>
#include <numbers>

#include "horloop/error.hpp"

namespace horloop {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require_dim(const Model& model, const Vec& x) {
  if (x.size() != model.dim) {
    throw RankMismatch(model.name + ": point has dimension " + std::to_string(x.size()) +
                       ", expected " + std::to_string(model.dim));
  }
}

// Chart frame of linear ambient fields K_i p on the unit sphere S^n in
// R^{n+1}, pushed through stereographic projection from (0, ..., 0, 1).
// With a = (1 + |q|^2) / 2 the inverse projection is p = (q / a, 1 - 1 / a)
// and the push-forward of w is a * (w_head + w_last * q).
struct StereographicLinearFrame {
  std::vector<Mat> generators;

  Mat frame(const Vec& q) const {
    const int n = static_cast<int>(q.size());
    const double a = 0.5 * (1.0 + q.squaredNorm());
    Vec p(n + 1);
    p.head(n) = q / a;
    p(n) = 1.0 - 1.0 / a;
    Mat out(n, generators.size());
    for (std::size_t i = 0; i < generators.size(); ++i) {
      const Vec w = generators[i] * p;
      out.col(i) = a * (w.head(n) + w(n) * q);
    }
    return out;
  }

  Mat jacobian(const Vec& q) const {
    const int n = static_cast<int>(q.size());
    const double a = 0.5 * (1.0 + q.squaredNorm());
    Vec p(n + 1);
    p.head(n) = q / a;
    p(n) = 1.0 - 1.0 / a;
    // dp/dq, (n+1) x n
    Mat dp(n + 1, n);
    dp.topRows(n) = Mat::Identity(n, n) / a - q * q.transpose() / (a * a);
    dp.row(n) = q.transpose() / (a * a);
    Mat out(n, n * generators.size());
    for (std::size_t i = 0; i < generators.size(); ++i) {
      const Vec w = generators[i] * p;
      const Mat dw = generators[i] * dp;
      const Vec head = w.head(n) + w(n) * q;
      Mat block = head * q.transpose();
      block += a * (dw.topRows(n) + q * dw.row(n) + w(n) * Mat::Identity(n, n));
      out.block(0, n * i, n, n) = block;
    }
    return out;
  }
};

std::function<bool(const Vec&)> radius_guard(double radius) {
  return [radius](const Vec& x) { return x.allFinite() && x.norm() <= radius; };
}

}  // namespace

Mat heisenberg_bracket(int a) {
  Mat A = Mat::Zero(2 * a, 2 * a);
  for (int k = 0; k < a; ++k) {
    A(2 * k, 2 * k + 1) = 1.0;
    A(2 * k + 1, 2 * k) = -1.0;
  }
  return A;
}

Model heisenberg(int a) {
  if (a <= 0) throw InputError("heisenberg: a must be positive");
  const int m = 2 * a + 1;
  const int l = 2 * a;
  const Mat A = heisenberg_bracket(a);
  Model model;
  model.name = "heisenberg(" + std::to_string(a) + ")";
  model.dim = m;
  model.rank = l;
  // X_i = e_i + (A h)_i dz, so that z' = <u, A h>.
  model.frame = [A, m, l](const Vec& x) {
    Mat X = Mat::Zero(m, l);
    X.topRows(l).setIdentity();
    X.row(l) = (A * x.head(l)).transpose();
    return X;
  };
  model.frame_jacobian = [A, m, l](const Vec&) {
    Mat D = Mat::Zero(m, m * l);
    for (int i = 0; i < l; ++i) D.block(l, i * m, 1, l) = A.row(i);
    return D;
  };
  model.oracle = [a](const Control& u) { return heisenberg_endpoint_exact(a, u); };
  return model;
}

Model flat_torus(int m) {
  if (m <= 0) throw InputError("flat_torus: dimension must be positive");
  Model model;
  model.name = "flat_torus(" + std::to_string(m) + ")";
  model.dim = m;
  model.rank = m;
  model.frame = [m](const Vec&) { return Mat(Mat::Identity(m, m)); };
  model.frame_jacobian = [m](const Vec&) { return Mat(Mat::Zero(m, m * m)); };
  model.lattice = kTwoPi * Mat::Identity(m, m);
  model.scale = kTwoPi;
  return model;
}

Model contact_t3() {
  Model model;
  model.name = "contact_t3";
  model.dim = 3;
  model.rank = 2;
  model.frame = [](const Vec& x) {
    Mat X(3, 2);
    X << 0.0, std::sin(x(2)),
         0.0, std::cos(x(2)),
         1.0, 0.0;
    return X;
  };
  model.frame_jacobian = [](const Vec& x) {
    Mat D = Mat::Zero(3, 6);
    D(0, 5) = std::cos(x(2));
    D(1, 5) = -std::sin(x(2));
    return D;
  };
  model.lattice = kTwoPi * Mat::Identity(3, 3);
  model.scale = kTwoPi;
  return model;
}

Model round_s2(double chart_radius) {
  if (!(chart_radius > 0.0)) throw InputError("round_s2: chart radius must be positive");
  Model model;
  model.name = "round_s2";
  model.dim = 2;
  model.rank = 2;
  // The chart metric is 4 / (1 + |q|^2)^2, so a * I with a = (1 + |q|^2) / 2
  // is orthonormal.
  model.frame = [](const Vec& q) {
    return Mat(0.5 * (1.0 + q.squaredNorm()) * Mat::Identity(2, 2));
  };
  model.frame_jacobian = [](const Vec& q) {
    Mat D = Mat::Zero(2, 4);
    D.block(0, 0, 1, 2) = q.transpose();
    D.block(1, 2, 1, 2) = q.transpose();
    return D;
  };
  model.in_domain = radius_guard(chart_radius);
  return model;
}

Model contact_s3(double chart_radius) {
  if (!(chart_radius > 0.0)) throw InputError("contact_s3: chart radius must be positive");
  // Ambient coordinates (x1, y1, x2, y2); the Hopf field is J p and the
  // contact plane at p is spanned by the orthonormal pair below.
  Mat KX(4, 4), KY(4, 4);
  KX << 0, 0, -1, 0,
        0, 0, 0, 1,
        1, 0, 0, 0,
        0, -1, 0, 0;
  KY << 0, 0, 0, -1,
        0, 0, -1, 0,
        0, 1, 0, 0,
        1, 0, 0, 0;
  StereographicLinearFrame chart{{KX, KY}};
  Model model;
  model.name = "contact_s3";
  model.dim = 3;
  model.rank = 2;
  model.frame = [chart](const Vec& q) { return chart.frame(q); };
  model.frame_jacobian = [chart](const Vec& q) { return chart.jacobian(q); };
  model.in_domain = radius_guard(chart_radius);
  return model;
}

Model with_redundant_frame(const Model& base) {
  if (base.rank < 2) throw InputError("redundant frame needs rank >= 2");
  Model model = base;
  model.name = base.name + "+redundant";
  model.rank = base.rank + 1;
  model.oracle = nullptr;
  const int m = base.dim;
  const int l = base.rank;
  auto frame = base.frame;
  auto jac = base.frame_jacobian;
  model.frame = [frame, m, l](const Vec& x) {
    const Mat X = frame(x);
    Mat out(m, l + 1);
    out.leftCols(l) = X;
    out.col(l) = X.col(0) + X.col(1);
    return out;
  };
  model.frame_jacobian = [jac, m, l](const Vec& x) {
    const Mat D = jac(x);
    Mat out(m, m * (l + 1));
    out.leftCols(m * l) = D;
    out.rightCols(m) = D.leftCols(m) + D.middleCols(m, m);
    return out;
  };
  return model;
}

Model make_model(const std::string& name, const std::vector<double>& params) {
  auto int_param = [&](std::size_t i, int fallback) {
    if (params.size() <= i) return fallback;
    const double v = params[i];
    if (v != std::floor(v) || v <= 0) throw ConfigError(name + ": parameter must be a positive integer");
    return static_cast<int>(v);
  };
  auto real_param = [&](std::size_t i, double fallback) {
    return params.size() > i ? params[i] : fallback;
  };
  if (name == "heisenberg") return heisenberg(int_param(0, 1));
  if (name == "flat_torus") return flat_torus(int_param(0, 2));
  if (name == "contact_t3") return contact_t3();
  if (name == "round_s2") return round_s2(real_param(0, 50.0));
  if (name == "contact_s3") return contact_s3(real_param(0, 50.0));
  throw ConfigError("unknown model '" + name + "'");
}

Mat frame_at(const Model& model, const Vec& x) {
  require_dim(model, x);
  if (!model.contains(x)) throw DomainError(model.name + ": point outside chart domain");
  return model.frame(x);
}

std::vector<Mat> frame_jacobians_at(const Model& model, const Vec& x) {
  require_dim(model, x);
  if (!model.contains(x)) throw DomainError(model.name + ": point outside chart domain");
  const Mat D = model.frame_jacobian(x);
  std::vector<Mat> out;
  out.reserve(model.rank);
  for (int i = 0; i < model.rank; ++i) out.emplace_back(D.middleCols(i * model.dim, model.dim));
  return out;
}

Vec heisenberg_endpoint_exact(int a, const Control& u) {
  if (u.rank() != 2 * a) {
    throw RankMismatch("heisenberg_endpoint_exact: control rank " + std::to_string(u.rank()) +
                       " != " + std::to_string(2 * a));
  }
  const Mat A = heisenberg_bracket(a);
  const double h = u.step();
  Vec horizontal = Vec::Zero(2 * a);
  double vertical = 0.0;
  // On a constant piece c starting at H the vertical increment is
  // h <c, A H>; the quadratic term <c, A c> vanishes.
  for (int j = 0; j < u.intervals(); ++j) {
    const Vec c = u.value(j);
    vertical += h * c.dot(A * horizontal);
    horizontal += h * c;
  }
  Vec out(2 * a + 1);
  out.head(2 * a) = horizontal;
  out(2 * a) = vertical;
  return out;
}

Vec group_translate(int a, const Vec& x, const Vec& y) {
  const int l = 2 * a;
  if (x.size() != l + 1 || y.size() != l + 1) throw RankMismatch("group_translate: dimension mismatch");
  const Mat A = heisenberg_bracket(a);
  Vec out = x + y;
  out(l) += y.head(l).dot(A * x.head(l));
  return out;
}

Point reduce_mod_lattice(const Model& model, const Vec& x) {
  require_dim(model, x);
  if (!model.lattice) throw UnsupportedOperation(model.name + ": model has no lattice");
  const Mat& B = *model.lattice;
  const auto lu = B.partialPivLu();
  Vec coeff = lu.solve(x);
  IVec k(model.dim);
  for (int i = 0; i < model.dim; ++i) {
    k(i) = static_cast<int>(std::floor(coeff(i)));
    coeff(i) -= k(i);
    // Rounding can land exactly on the upper face.
    if (coeff(i) >= 1.0) {
      coeff(i) -= 1.0;
      k(i) += 1;
    }
    if (coeff(i) < 0.0) coeff(i) = 0.0;
  }
  Vec coords = x - B * k.cast<double>();
  // Recompute from clamped coefficients when the direct subtraction left the
  // fundamental domain through rounding.
  const Vec check = lu.solve(coords);
  if ((check.array() < 0.0).any() || (check.array() >= 1.0).any()) coords = B * coeff;
  return {coords, k};
}

Point reduce_displacement(const Model& model, const Vec& d) {
  require_dim(model, d);
  if (!model.lattice) return {d, IVec::Zero(model.dim)};
  const Mat& B = *model.lattice;
  const Vec coeff = B.partialPivLu().solve(d);
  IVec k(model.dim);
  for (int i = 0; i < model.dim; ++i) k(i) = static_cast<int>(std::lround(coeff(i)));
  return {d - B * k.cast<double>(), k};
}

}  // namespace horloop
