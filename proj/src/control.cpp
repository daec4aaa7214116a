#include "horloop/control.hpp"

#include <algorithm>
#include <cmath>

#include "horloop/error.hpp"

namespace horloop {

Control::Control(ControlMatrix values, double duration)
    : values_(std::move(values)), duration_(duration) {
  if (!(duration_ >= 0.0) || !std::isfinite(duration_)) {
    throw InputError("control duration must be finite and nonnegative");
  }
  if (!values_.allFinite()) throw InputError("control has non-finite entries");
}

Control Control::zeros(int intervals, int rank, double duration) {
  return Control(ControlMatrix::Zero(intervals, rank), duration);
}

Control Control::constant(int intervals, const Vec& value, double duration) {
  ControlMatrix m(intervals, value.size());
  for (int j = 0; j < intervals; ++j) m.row(j) = value.transpose();
  return Control(std::move(m), duration);
}

Control Control::from_flat(const Vec& flat, int rank, double duration) {
  if (rank <= 0 || flat.size() % rank != 0) throw RankMismatch("flat control size not a multiple of rank");
  ControlMatrix m = Eigen::Map<const ControlMatrix>(flat.data(), flat.size() / rank, rank);
  return Control(std::move(m), duration);
}

double Control::inner(const Control& other) const {
  if (other.intervals() != intervals() || other.rank() != rank()) {
    throw RankMismatch("inner product of controls with different shapes");
  }
  if (intervals() == 0) return 0.0;
  return step() * flat().dot(other.flat());
}

double Control::norm() const { return std::sqrt(std::max(0.0, norm_squared())); }

Control& Control::operator+=(const Control& other) {
  if (other.values_.rows() != values_.rows() || other.values_.cols() != values_.cols()) {
    throw RankMismatch("sum of controls with different shapes");
  }
  values_ += other.values_;
  return *this;
}

Control& Control::operator-=(const Control& other) {
  if (other.values_.rows() != values_.rows() || other.values_.cols() != values_.cols()) {
    throw RankMismatch("difference of controls with different shapes");
  }
  values_ -= other.values_;
  return *this;
}

Control& Control::operator*=(double s) {
  values_ *= s;
  return *this;
}

Control operator+(Control a, const Control& b) { return a += b; }
Control operator-(Control a, const Control& b) { return a -= b; }
Control operator*(double s, Control a) { return a *= s; }

Control resample_segments(const std::vector<Segment>& segments, double duration, int intervals,
                          int rank) {
  if (intervals <= 0) throw InputError("resample needs a positive interval count");
  ControlMatrix out = ControlMatrix::Zero(intervals, rank);
  if (duration <= 0.0) return Control(std::move(out), 0.0);
  const double h = duration / intervals;
  std::size_t s = 0;
  for (int j = 0; j < intervals; ++j) {
    const double a = j * h;
    const double b = (j + 1 == intervals) ? duration : (j + 1) * h;
    while (s < segments.size() && segments[s].t1 <= a) ++s;
    for (std::size_t k = s; k < segments.size() && segments[k].t0 < b; ++k) {
      const double overlap = std::min(b, segments[k].t1) - std::max(a, segments[k].t0);
      if (overlap > 0.0) out.row(j) += overlap * segments[k].value.transpose();
    }
    out.row(j) /= (b - a);
  }
  return Control(std::move(out), duration);
}

std::vector<Segment> segments_of(const Control& u, double offset, double time_scale,
                                 double value_scale) {
  std::vector<Segment> segs;
  segs.reserve(u.intervals());
  const double h = u.step() * time_scale;
  for (int j = 0; j < u.intervals(); ++j) {
    segs.push_back({offset + j * h, offset + (j + 1) * h, value_scale * u.value(j)});
  }
  return segs;
}

Control resample(const Control& u, int intervals) {
  if (intervals == u.intervals()) return u;
  if (intervals % u.intervals() == 0) {
    const int f = intervals / u.intervals();
    ControlMatrix m(intervals, u.rank());
    for (int j = 0; j < intervals; ++j) m.row(j) = u.values().row(j / f);
    return Control(std::move(m), u.duration());
  }
  return resample_segments(segments_of(u), u.duration(), intervals, u.rank());
}

Control restrict_to(const Control& u, double T, int intervals) {
  if (T < 0.0 || T > u.duration() * (1.0 + 1e-12)) {
    throw InputError("restriction time outside the control's interval");
  }
  return resample_segments(segments_of(u), T, intervals, u.rank());
}

}  // namespace horloop
