#include "tmxl/targets.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tmxl {

namespace {

template <class... Fs>
struct Overload : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overload(Fs...) -> Overload<Fs...>;

int ambient_of(const Target::Shape& s) {
  return std::visit(Overload{[](const RoundSphere& r) { return r.ambient_dim; },
                             [](const CliffordProduct&) { return 4; },
                             [](const Ellipsoid& e) { return static_cast<int>(e.semi_axes.size()); }},
                    s);
}

void validate(const Target::Shape& s) {
  const int n = ambient_of(s);
  if (n < 2 || n > kMaxAmbient) throw Error(Errc::BadInput, "ambient dimension must be in [2, 8]");
  std::visit(Overload{[](const RoundSphere& r) {
                        if (!(r.radius > 0)) throw Error(Errc::BadInput, "sphere radius must be positive");
                      },
                      [](const CliffordProduct& c) {
                        if (!(c.r1 > 0 && c.r2 > 0)) throw Error(Errc::BadInput, "circle radii must be positive");
                      },
                      [](const Ellipsoid& e) {
                        for (double a : e.semi_axes)
                          if (!(a > 0)) throw Error(Errc::BadInput, "semi-axes must be positive");
                      }},
             s);
}

double tube_of(const Target::Shape& s) {
  return std::visit(
      Overload{[](const RoundSphere& r) { return r.radius / 2; },
               [](const CliffordProduct& c) { return std::min(c.r1, c.r2) / 2; },
               [](const Ellipsoid& e) { return *std::min_element(e.semi_axes.begin(), e.semi_axes.end()) / 2; }},
      s);
}

// Nearest point on the ellipsoid: y_i = a_i^2 x_i / (a_i^2 + t) with t the largest root of
// g(t) = sum a_i^2 x_i^2 / (a_i^2 + t)^2 - 1. g is convex and decreasing, so Newton from a
// point with g >= 0 increases monotonically to the root.
Point ellipsoid_nearest(const std::vector<double>& a, PointRef x, const TargetTolerances& tol) {
  const int n = static_cast<int>(a.size());
  auto g_and_slope = [&](double t, double* slope) {
    double g = -1.0, dg = 0.0;
    for (int i = 0; i < n; ++i) {
      const double a2 = a[i] * a[i], d = a2 + t, q = a2 * x(i) * x(i) / (d * d);
      g += q;
      dg -= 2.0 * q / d;
    }
    *slope = dg;
    return g;
  };
  double amin2 = a[0] * a[0];
  double t = -a[0] * a[0] + a[0] * std::abs(x(0));
  for (int i = 0; i < n; ++i) {
    amin2 = std::min(amin2, a[i] * a[i]);
    t = std::max(t, -a[i] * a[i] + a[i] * std::abs(x(i)));
  }
  t = std::max(t, -amin2 * (1 - 1e-12));
  double slope = 0.0;
  double g = g_and_slope(t, &slope);
  if (g < 0) t = 0.0, g = g_and_slope(t, &slope);  // x on the medial set; fall back to t = 0 when outside
  if (g < 0) throw Error(Errc::NonConvergence, "ellipsoid projection: no admissible starting multiplier");
  bool converged = false;
  for (int it = 0; it < tol.newton_max_iter; ++it) {
    if (slope == 0.0) break;
    const double step = -g / slope;
    t += step;
    g = g_and_slope(t, &slope);
    if (std::abs(step) <= tol.newton * (1.0 + std::abs(t))) {
      // one polishing step at full precision
      if (slope != 0.0) t -= g / slope;
      converged = true;
      break;
    }
  }
  if (!converged) throw Error(Errc::NonConvergence, "ellipsoid projection Newton solve did not converge");
  Point y(n);
  for (int i = 0; i < n; ++i) y(i) = a[i] * a[i] * x(i) / (a[i] * a[i] + t);
  return y;
}

}  // namespace

Target::Target(Shape shape, TargetTolerances tol) : shape_(std::move(shape)), tol_(tol) {
  validate(shape_);
  ambient_ = ambient_of(shape_);
  tube_ = tube_of(shape_);
}

Target Target::round_sphere(double radius, int ambient_dim) { return Target(RoundSphere{radius, ambient_dim}); }
Target Target::clifford_product(double r1, double r2) { return Target(CliffordProduct{r1, r2}); }
Target Target::ellipsoid(std::vector<double> semi_axes) { return Target(Ellipsoid{std::move(semi_axes)}); }

std::string Target::kind_name() const {
  return std::visit(Overload{[](const RoundSphere&) { return std::string("round_sphere"); },
                             [](const CliffordProduct&) { return std::string("clifford_product"); },
                             [](const Ellipsoid&) { return std::string("ellipsoid"); }},
                    shape_);
}

int Target::codim() const { return std::holds_alternative<CliffordProduct>(shape_) ? 2 : 1; }

bool Target::operator==(const Target& o) const {
  if (shape_.index() != o.shape_.index()) return false;
  return std::visit(Overload{[&](const RoundSphere& r) {
                               const auto& q = std::get<RoundSphere>(o.shape_);
                               return r.radius == q.radius && r.ambient_dim == q.ambient_dim;
                             },
                             [&](const CliffordProduct& c) {
                               const auto& q = std::get<CliffordProduct>(o.shape_);
                               return c.r1 == q.r1 && c.r2 == q.r2;
                             },
                             [&](const Ellipsoid& e) { return e.semi_axes == std::get<Ellipsoid>(o.shape_).semi_axes; }},
                    shape_);
}

Point Target::project_unchecked(PointRef x, double* distance) const {
  Point y = std::visit(Overload{[&](const RoundSphere& r) -> Point {
                                  const double nx = x.norm();
                                  if (nx == 0.0) return Point::Constant(ambient_, 0.0);
                                  return (r.radius / nx) * x;
                                },
                                [&](const CliffordProduct& c) -> Point {
                                  const double p1 = x.head(2).norm(), p2 = x.tail(2).norm();
                                  if (p1 == 0.0 || p2 == 0.0) return Point::Constant(4, 0.0);
                                  Point out(4);
                                  out.head(2) = (c.r1 / p1) * x.head(2);
                                  out.tail(2) = (c.r2 / p2) * x.tail(2);
                                  return out;
                                },
                                [&](const Ellipsoid& e) -> Point { return ellipsoid_nearest(e.semi_axes, x, tol_); }},
                       shape_);
  if (distance) *distance = (y - x).norm();
  return y;
}

double Target::focal_depth(PointRef x) const {
  return std::visit(Overload{[&](const RoundSphere& r) { return r.radius - x.norm(); },
                             [&](const CliffordProduct& c) {
                               return std::max(c.r1 - x.head(2).norm(), c.r2 - x.tail(2).norm());
                             },
                             [&](const Ellipsoid& e) {
                               double f = -1.0;
                               for (int i = 0; i < ambient_; ++i) f += x(i) * x(i) / (e.semi_axes[i] * e.semi_axes[i]);
                               if (f >= 0.0) return -manifold_residual(x);
                               double d = 0.0;
                               project_unchecked(x, &d);
                               return d;
                             }},
                    shape_);
}

Point Target::project(PointRef x) const {
  if (x.size() != ambient_) throw Error(Errc::BadInput, "point has wrong ambient dimension");
  const double depth = focal_depth(x);
  if (!(depth < tube_)) {
    std::ostringstream os;
    os << "depth " << depth << " toward the focal set >= tube radius " << tube_;
    throw Error(Errc::OutsideTube, os.str());
  }
  return project_unchecked(x, nullptr);
}

double Target::manifold_residual(PointRef x) const {
  return std::visit(Overload{[&](const RoundSphere& r) { return std::abs(x.norm() - r.radius); },
                             [&](const CliffordProduct& c) {
                               const double d1 = x.head(2).norm() - c.r1, d2 = x.tail(2).norm() - c.r2;
                               return std::sqrt(d1 * d1 + d2 * d2);
                             },
                             [&](const Ellipsoid& e) {
                               // |F|/|grad F| with F = sum x^2/a^2 - 1, a first-order distance
                               double f = -1.0, g2 = 0.0;
                               for (int i = 0; i < ambient_; ++i) {
                                 const double a2 = e.semi_axes[i] * e.semi_axes[i];
                                 f += x(i) * x(i) / a2;
                                 g2 += 4.0 * x(i) * x(i) / (a2 * a2);
                               }
                               if (g2 == 0.0) return std::numeric_limits<double>::infinity();
                               return std::abs(f) / std::sqrt(g2);
                             }},
                    shape_);
}

Point Target::normal(PointRef u, int k) const {
  return std::visit(Overload{[&](const RoundSphere& r) -> Point { return u / r.radius; },
                             [&](const CliffordProduct& c) -> Point {
                               Point n = Point::Zero(4);
                               if (k == 0)
                                 n.head(2) = u.head(2) / c.r1;
                               else
                                 n.tail(2) = u.tail(2) / c.r2;
                               return n;
                             },
                             [&](const Ellipsoid& e) -> Point {
                               Point g(ambient_);
                               for (int i = 0; i < ambient_; ++i) g(i) = u(i) / (e.semi_axes[i] * e.semi_axes[i]);
                               return g / g.norm();
                             }},
                    shape_);
}

Point Target::normal_derivative(PointRef u, int k, PointRef x) const {
  return std::visit(Overload{[&](const RoundSphere& r) -> Point { return x / r.radius; },
                             [&](const CliffordProduct& c) -> Point {
                               Point out = Point::Zero(4);
                               if (k == 0) {
                                 const Eigen::Vector2d n = u.head(2) / c.r1;
                                 out.head(2) = (x.head(2) - n * n.dot(x.head(2))) / c.r1;
                               } else {
                                 const Eigen::Vector2d n = u.tail(2) / c.r2;
                                 out.tail(2) = (x.tail(2) - n * n.dot(x.tail(2))) / c.r2;
                               }
                               return out;
                             },
                             [&](const Ellipsoid& e) -> Point {
                               Point g(ambient_), dg(ambient_);
                               for (int i = 0; i < ambient_; ++i) {
                                 const double a2 = e.semi_axes[i] * e.semi_axes[i];
                                 g(i) = u(i) / a2;
                                 dg(i) = x(i) / a2;
                               }
                               const double gn = g.norm();
                               const Point n = g / gn;
                               return (dg - n * n.dot(dg)) / gn;
                             }},
                    shape_);
}

SmallMatrix Target::normal_frame(PointRef u) const {
  require_on_manifold(u);
  SmallMatrix f(ambient_, codim());
  for (int k = 0; k < codim(); ++k) f.col(k) = normal(u, k);
  return f;
}

SmallMatrix Target::tangent_frame(PointRef u) const {
  const int c = codim();
  SmallMatrix nf(ambient_, c);
  for (int k = 0; k < c; ++k) nf.col(k) = normal(u, k);
  // Householder QR of the normal block; the trailing columns of Q span the tangent space.
  Eigen::HouseholderQR<SmallMatrix> qr(nf);
  SmallMatrix q = qr.householderQ();
  return q.rightCols(ambient_ - c);
}

void Target::require_on_manifold(PointRef u) const {
  if (u.size() != ambient_) throw Error(Errc::BadInput, "point has wrong ambient dimension");
  if (!(manifold_residual(u) <= tol_.on_manifold)) throw Error(Errc::NotOnManifold, "point is not on the target");
}

void Target::require_tangent(PointRef u, PointRef v) const {
  if (v.size() != ambient_) throw Error(Errc::BadInput, "vector has wrong ambient dimension");
  if ((tangent_part(u, v) - v).norm() > tol_.tangent * std::max(1.0, v.norm()))
    throw Error(Errc::NotTangent, "vector is not tangent at u");
}

Point Target::tangent_part(PointRef u, PointRef v) const {
  Point out = v;
  for (int k = 0; k < codim(); ++k) {
    const Point n = normal(u, k);
    out -= n * n.dot(v);
  }
  return out;
}

Point Target::tangent_project(PointRef u, PointRef v) const {
  require_on_manifold(u);
  if (v.size() != ambient_) throw Error(Errc::BadInput, "vector has wrong ambient dimension");
  return tangent_part(u, v);
}

Point Target::fundamental_form_unchecked(PointRef u, PointRef v, PointRef w) const {
  Point out = Point::Zero(ambient_);
  for (int k = 0; k < codim(); ++k) out += normal(u, k) * normal_derivative(u, k, v).dot(w);
  return out;
}

Point Target::second_fundamental_form(PointRef u, PointRef v, PointRef w) const {
  require_on_manifold(u);
  require_tangent(u, v);
  require_tangent(u, w);
  return fundamental_form_unchecked(u, v, w);
}

Point Target::shape_operator_unchecked(PointRef u, PointRef nu, PointRef x) const {
  Point out = Point::Zero(ambient_);
  for (int k = 0; k < codim(); ++k) out += normal(u, k).dot(nu) * normal_derivative(u, k, x);
  return tangent_part(u, out);
}

Point Target::shape_operator(PointRef u, PointRef nu, PointRef x) const {
  require_on_manifold(u);
  require_tangent(u, x);
  return shape_operator_unchecked(u, nu, x);
}

Point Target::hess_projection(PointRef u, PointRef v, PointRef w) const {
  require_on_manifold(u);
  if (v.size() != ambient_ || w.size() != ambient_) throw Error(Errc::BadInput, "vector has wrong ambient dimension");
  const Point vt = tangent_part(u, v), wt = tangent_part(u, w);
  const Point vn = v - vt, wn = w - wt;
  return -fundamental_form_unchecked(u, vt, wt) - shape_operator_unchecked(u, wn, vt) -
         shape_operator_unchecked(u, vn, wt);
}

Point Target::riemann_curvature(PointRef u, PointRef x, PointRef y, PointRef z) const {
  require_on_manifold(u);
  require_tangent(u, x);
  require_tangent(u, y);
  require_tangent(u, z);
  return std::visit(Overload{[&](const RoundSphere& r) -> Point {
                               return (y.dot(z) * x - x.dot(z) * y) / (r.radius * r.radius);
                             },
                             [&](const CliffordProduct&) -> Point { return Point::Zero(4); },
                             [&](const Ellipsoid&) -> Point {
                               return shape_operator_unchecked(u, fundamental_form_unchecked(u, y, z), x) -
                                      shape_operator_unchecked(u, fundamental_form_unchecked(u, x, z), y);
                             }},
                    shape_);
}

}  // namespace tmxl
