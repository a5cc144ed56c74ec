#pragma once

#include "tmxl/targets.hpp"

#include <functional>
#include <span>
#include <vector>

namespace tmxl {

// Point of the Riemann sphere in homogeneous coordinates, w = p / q (q = 0 is infinity).
struct Homog {
  Complex p{0.0};
  Complex q{1.0};
};

// Unit-sphere image under inverse stereographic projection; w = infinity goes to (0, 0, 1).
Eigen::Vector3d riemann_point(Homog h);
Homog from_riemann_point(const Eigen::Vector3d& x);

// Element of PSL(2, C) acting by z -> (a z + b) / (c z + d), stored with det = 1.
class Mobius {
 public:
  static constexpr double kMaxCondition = 1e6;

  Mobius() = default;
  // Normalizes to det 1; ChartOverflow when singular or worse conditioned than kMaxCondition.
  Mobius(Complex a, Complex b, Complex c, Complex d);
  static Mobius affine(Complex scale, Complex shift);
  // Coefficients already normalized (read back from a file): kept bit for bit, ConfigViolation
  // unless det = 1 to 1e-9.
  static Mobius normalized(Complex a, Complex b, Complex c, Complex d);

  Complex a() const { return a_; }
  Complex b() const { return b_; }
  Complex c() const { return c_; }
  Complex d() const { return d_; }

  Homog apply(Homog h) const { return {a_ * h.p + b_ * h.q, c_ * h.p + d_ * h.q}; }
  Homog apply(Complex z) const { return apply(Homog{z, 1.0}); }
  Mobius inverse() const;
  // this o inner
  Mobius compose(const Mobius& inner) const;
  double condition() const;

 private:
  Complex a_{1.0}, b_{0.0}, c_{0.0}, d_{1.0};
};

// Unit-sphere area of the stereographic image of m({|z - c| <= rho}).
double disk_image_area(const Mobius& m, Complex c, double rho);

// Harmonic sphere v: S^2 -> M, read on C through stereographic projection. Two log-polar charts, one
// around w = 0 and one around w = infinity (coordinate 1 / w), share the rows near |w| = 1.
// A great sphere v(w) = R [2 Re w f1 + 2 Im w f2 + (|w|^2 - 1) f0] / (1 + |w|^2) is kept in closed form
// as well and evaluated exactly.
struct SphereGrid {
  int cols = 128;        // angular samples
  double extent = 10.0;  // charts reach |log|w|| <= extent
  int overlap_rows = 8;  // rows past the equator held by both charts
};

class SphereMap {
 public:
  using Grid = SphereGrid;
  static constexpr double kOverlapTolerance = 1e-8;

  static SphereMap great_sphere(const Target& target, const Point& f0, const Point& f1, const Point& f2,
                                Grid grid = {});
  // Samples f (projected onto M) on both charts.
  static SphereMap sample(const Target& target, const std::function<Point(Homog)>& f, Grid grid = {});
  // Chart arrays as produced by chart(); checks overlap consistency (ConfigViolation).
  static SphereMap from_charts(const Target& target, Grid grid, std::vector<double> zero_chart, std::vector<double> inf_chart,
                               Point value_at_zero, Point value_at_inf);

  const Target& target() const { return target_; }
  const Grid& grid() const { return grid_; }
  int rows() const { return rows_; }
  bool is_great_sphere() const { return frame_.cols() == 3; }
  // Columns f0, f1, f2 of a great sphere.
  const SmallMatrix& frame() const { return frame_; }
  double radius() const { return radius_; }

  Point eval(Homog h) const;
  Point eval(Complex w) const { return eval(Homog{w, 1.0}); }

  // Dirichlet integrals int |grad v|^2 (twice the energy).
  double total_gradient_sq() const;
  // int over {|z - c| < rho} of |grad (v o m)|^2.
  double disk_gradient_sq(const Mobius& m, Complex c, double rho) const;

  // A point w with v(w) nearest to x: exact for great spheres, nearest chart node otherwise.
  Homog preimage(PointRef x) const;

  // Row-major [row][col] nodes, row k at log|w| = (k - extent / dt) dt in the chart's own coordinate.
  std::span<const double> chart(int which) const { return which == 0 ? zero_chart_ : inf_chart_; }
  Point pole_value(int which) const { return which == 0 ? at_zero_ : at_inf_; }
  double row_step() const;

  // Largest mismatch between the two charts on their shared rows.
  double overlap_mismatch() const;

 private:
  SphereMap(const Target& target, Grid grid);
  void fill(const std::function<Point(Homog)>& f);
  Point chart_eval(int which, double t, double theta) const;
  double chart_region_gradient_sq(const std::function<bool(Homog)>& inside) const;

  Target target_;
  Grid grid_;
  int rows_ = 0;
  int centre_row_ = 0;
  std::vector<double> zero_chart_, inf_chart_;
  Point at_zero_, at_inf_;
  SmallMatrix frame_;
  double radius_ = 0.0;
  double total_ = 0.0;
};

}  // namespace tmxl
