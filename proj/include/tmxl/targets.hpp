#pragma once

#include "tmxl/common.hpp"

#include <string>
#include <variant>
#include <vector>

namespace tmxl {

struct RoundSphere {
  double radius = 1.0;
  int ambient_dim = 3;
};

// S^1(r1) x S^1(r2) in R^4, first circle in (x1,x2), second in (x3,x4).
struct CliffordProduct {
  double r1 = 1.0;
  double r2 = 1.0;
};

struct Ellipsoid {
  std::vector<double> semi_axes;
};

struct TargetTolerances {
  double on_manifold = 1e-8;
  double tangent = 1e-8;
  double newton = 1e-12;
  int newton_max_iter = 50;
};

// Embedded closed hypersurface-or-product M in R^N with nearest-point projection.
class Target {
 public:
  using Shape = std::variant<RoundSphere, CliffordProduct, Ellipsoid>;

  explicit Target(Shape shape, TargetTolerances tol = {});
  static Target round_sphere(double radius, int ambient_dim);
  static Target clifford_product(double r1, double r2);
  static Target ellipsoid(std::vector<double> semi_axes);

  const Shape& shape() const { return shape_; }
  std::string kind_name() const;
  const TargetTolerances& tolerances() const { return tol_; }
  int ambient_dim() const { return ambient_; }
  int dim() const { return ambient_ - codim(); }
  int codim() const;
  double tube_radius() const { return tube_; }

  // Nearest point on M. Throws OutsideTube when x lies at least tube_radius() deep on the
  // focal side of M (inside the sphere or ellipsoid, toward an axis of the circle product).
  // On the convex side the nearest point stays unique at any distance and is accepted.
  Point project(PointRef x) const;
  // Signed depth of x toward the focal set: positive on the concave side, negative outside.
  double focal_depth(PointRef x) const;
  // Distance-like residual of the defining equations (exact distance for sphere and product).
  double manifold_residual(PointRef x) const;
  // Columns are orthonormal normals at u (N x codim); u must be on M.
  SmallMatrix normal_frame(PointRef u) const;
  // Columns are an orthonormal basis of T_uM (N x dim), deterministic in u.
  SmallMatrix tangent_frame(PointRef u) const;

  Point tangent_project(PointRef u, PointRef v) const;
  Point second_fundamental_form(PointRef u, PointRef v, PointRef w) const;
  Point hess_projection(PointRef u, PointRef v, PointRef w) const;
  Point riemann_curvature(PointRef u, PointRef x, PointRef y, PointRef z) const;
  // S_nu(x) = tangential part of the derivative of the normal field along x, weighted by nu.
  Point shape_operator(PointRef u, PointRef nu, PointRef x) const;

  // Unchecked kernels for hot loops; caller guarantees u on M and tangent inputs.
  Point tangent_part(PointRef u, PointRef v) const;
  Point fundamental_form_unchecked(PointRef u, PointRef v, PointRef w) const;
  Point shape_operator_unchecked(PointRef u, PointRef nu, PointRef x) const;
  Point project_unchecked(PointRef x, double* distance) const;

  bool operator==(const Target& other) const;

 private:
  void require_on_manifold(PointRef u) const;
  void require_tangent(PointRef u, PointRef v) const;
  // Derivative of the k-th unit normal field along x (ambient vector).
  Point normal_derivative(PointRef u, int k, PointRef x) const;
  Point normal(PointRef u, int k) const;

  Shape shape_;
  TargetTolerances tol_;
  int ambient_ = 0;
  double tube_ = 0.0;
};

}  // namespace tmxl
