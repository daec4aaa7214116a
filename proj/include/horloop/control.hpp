#pragma once

#include <Eigen/Dense>

#include <vector>

namespace horloop {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using ControlMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Piecewise-constant control on N uniform subintervals of [0, duration].
// Row j holds the value on [j*h, (j+1)*h), h = duration / N. The flat
// coefficient index of (interval j, component i) is j * rank + i.
class Control {
 public:
  Control() = default;
  explicit Control(ControlMatrix values, double duration = 1.0);

  static Control zeros(int intervals, int rank, double duration = 1.0);
  static Control constant(int intervals, const Vec& value, double duration = 1.0);
  static Control from_flat(const Vec& flat, int rank, double duration = 1.0);

  int intervals() const { return static_cast<int>(values_.rows()); }
  int rank() const { return static_cast<int>(values_.cols()); }
  double duration() const { return duration_; }
  double step() const { return duration_ / intervals(); }
  bool empty() const { return values_.rows() == 0; }

  const ControlMatrix& values() const { return values_; }
  ControlMatrix& values() { return values_; }
  Vec value(int j) const { return values_.row(j).transpose(); }

  Eigen::Map<const Vec> flat() const { return {values_.data(), values_.size()}; }
  Eigen::Map<Vec> flat() { return {values_.data(), values_.size()}; }

  // <u, v> = h * sum_j <u_j, v_j>, i.e. the L2 product of the step functions.
  double inner(const Control& other) const;
  double norm_squared() const { return inner(*this); }
  double norm() const;

  Control& operator+=(const Control& other);
  Control& operator-=(const Control& other);
  Control& operator*=(double s);

 private:
  ControlMatrix values_;
  double duration_ = 1.0;
};

Control operator+(Control a, const Control& b);
Control operator-(Control a, const Control& b);
Control operator*(double s, Control a);

// A constant piece of a step function on [t0, t1).
struct Segment {
  double t0;
  double t1;
  Vec value;
};

// Averages a step function given by consecutive segments onto a uniform
// grid of `intervals` cells on [0, duration].
Control resample_segments(const std::vector<Segment>& segments, double duration, int intervals,
                          int rank);

std::vector<Segment> segments_of(const Control& u, double offset = 0.0, double time_scale = 1.0,
                                 double value_scale = 1.0);

// Regrid by interval averaging; exact (lossless) when N divides the new count.
Control resample(const Control& u, int intervals);

// u restricted to [0, T] and regridded onto `intervals` cells.
Control restrict_to(const Control& u, double T, int intervals);

}  // namespace horloop
