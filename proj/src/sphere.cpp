#include "tmxl/sphere.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace tmxl {

Eigen::Vector3d riemann_point(Homog h) {
  const double pp = std::norm(h.p), qq = std::norm(h.q), n = pp + qq;
  const Complex pq = h.p * std::conj(h.q);
  return {2 * pq.real() / n, 2 * pq.imag() / n, (pp - qq) / n};
}

Homog from_riemann_point(const Eigen::Vector3d& x) {
  if (x(2) <= 0) return {Complex(x(0), x(1)), Complex(1 - x(2))};
  return {Complex(1 + x(2)), Complex(x(0), -x(1))};
}

Mobius::Mobius(Complex a, Complex b, Complex c, Complex d) {
  const Complex det = a * d - b * c;
  if (!(std::abs(det) > 0) || !std::isfinite(std::abs(det)))
    throw Error(Errc::ChartOverflow, "Mobius matrix is singular");
  const Complex s = std::sqrt(det);
  a_ = a / s;
  b_ = b / s;
  c_ = c / s;
  d_ = d / s;
  const double cond = condition();
  if (!(cond <= kMaxCondition)) {
    std::ostringstream os;
    os << "Mobius condition number " << cond << " exceeds " << kMaxCondition;
    throw Error(Errc::ChartOverflow, os.str());
  }
}

Mobius Mobius::affine(Complex scale, Complex shift) { return Mobius(scale, shift, 0.0, 1.0); }

Mobius Mobius::normalized(Complex a, Complex b, Complex c, Complex d) {
  if (!(std::abs(a * d - b * c - 1.0) <= 1e-9)) throw Error(Errc::ConfigViolation, "Mobius coefficients are not normalized");
  Mobius m;
  m.a_ = a;
  m.b_ = b;
  m.c_ = c;
  m.d_ = d;
  if (!(m.condition() <= kMaxCondition)) throw Error(Errc::ChartOverflow, "Mobius condition number too large");
  return m;
}

Mobius Mobius::inverse() const { return Mobius(d_, -b_, -c_, a_); }

Mobius Mobius::compose(const Mobius& in) const {
  return Mobius(a_ * in.a_ + b_ * in.c_, a_ * in.b_ + b_ * in.d_, c_ * in.a_ + d_ * in.c_,
                c_ * in.b_ + d_ * in.d_);
}

double Mobius::condition() const {
  // det 1: the singular values multiply to one, so cond = sigma_max^2
  const double f = std::norm(a_) + std::norm(b_) + std::norm(c_) + std::norm(d_);
  return 0.5 * (f + std::sqrt(std::max(0.0, f * f - 4)));
}

double disk_image_area(const Mobius& m, Complex c, double rho) {
  // The disk is {v : v* H v <= 0} in homogeneous coordinates; its image has H' = N* H N with N = m^-1.
  // On the unit sphere the condition reads k + n.X <= 0 with k = (A + C) / 2, n = (Re B, Im B, (A - C) / 2).
  Eigen::Matrix2cd h;
  h << 1.0, -c, -std::conj(c), std::norm(c) - rho * rho;
  Eigen::Matrix2cd inv;
  inv << m.d(), -m.b(), -m.c(), m.a();
  const Eigen::Matrix2cd hp = inv.adjoint() * h * inv;
  const double A = hp(0, 0).real(), C = hp(1, 1).real();
  const Complex B = hp(0, 1);
  const double k = 0.5 * (A + C);
  const double n = std::sqrt(std::norm(B) + 0.25 * (A - C) * (A - C));
  // 1 - k / n, written without cancellation: n^2 - k^2 = -det H' = rho^2
  if (k > 0) return 2 * kPi * rho * rho / (n * (n + k));
  return 2 * kPi * (1 - k / n);
}

SphereMap::SphereMap(const Target& target, Grid grid) : target_(target), grid_(grid) {
  if (grid.cols < 8 || !(grid.extent > 0) || grid.overlap_rows < 1)
    throw Error(Errc::BadInput, "sphere chart grid too small");
  const double dt = row_step();
  centre_row_ = static_cast<int>(std::lround(grid.extent / dt));
  rows_ = centre_row_ + grid.overlap_rows + 1;
}

double SphereMap::row_step() const { return 2 * kPi / grid_.cols; }

void SphereMap::fill(const std::function<Point(Homog)>& f) {
  const int N = target_.ambient_dim(), C = grid_.cols;
  const double dt = row_step();
  for (int which = 0; which < 2; ++which) {
    std::vector<double> nodes(static_cast<std::size_t>(rows_) * C * N);
    for (int k = 0; k < rows_; ++k)
      for (int l = 0; l < C; ++l) {
        const Complex w = std::exp(Complex((k - centre_row_) * dt, l * dt));
        const Homog h = which == 0 ? Homog{w, 1.0} : Homog{1.0, w};
        const Point x = target_.project(f(h));
        std::copy(x.data(), x.data() + N, nodes.data() + (static_cast<std::size_t>(k) * C + l) * N);
      }
    (which == 0 ? zero_chart_ : inf_chart_) = std::move(nodes);
  }
  at_zero_ = target_.project(f(Homog{0.0, 1.0}));
  at_inf_ = target_.project(f(Homog{1.0, 0.0}));
}

SphereMap SphereMap::great_sphere(const Target& target, const Point& f0, const Point& f1, const Point& f2, Grid grid) {
  const auto* sphere = std::get_if<RoundSphere>(&target.shape());
  if (!sphere) throw Error(Errc::BadInput, "great spheres need a round sphere target");
  const int N = target.ambient_dim();
  if (f0.size() != N || f1.size() != N || f2.size() != N) throw Error(Errc::BadInput, "frame dimension mismatch");
  SmallMatrix f(N, 3);
  f.col(0) = f0;
  f.col(1) = f1;
  f.col(2) = f2;
  const SmallMatrix gram = f.transpose() * f;
  if ((gram - SmallMatrix::Identity(3, 3)).cwiseAbs().maxCoeff() > 1e-10)
    throw Error(Errc::BadInput, "great sphere frame is not orthonormal");
  SphereMap v(target, grid);
  v.frame_ = f;
  v.radius_ = sphere->radius;
  v.total_ = 8 * kPi * v.radius_ * v.radius_;
  v.fill([&](Homog h) { return v.eval(h); });
  return v;
}

SphereMap SphereMap::sample(const Target& target, const std::function<Point(Homog)>& f, Grid grid) {
  SphereMap v(target, grid);
  v.fill(f);
  v.total_ = v.chart_region_gradient_sq([](Homog) { return true; });
  return v;
}

SphereMap SphereMap::from_charts(const Target& target, Grid grid, std::vector<double> zero_chart,
                                 std::vector<double> inf_chart, Point value_at_zero, Point value_at_inf) {
  SphereMap v(target, grid);
  const int N = target.ambient_dim();
  const std::size_t expect = static_cast<std::size_t>(v.rows_) * grid.cols * N;
  if (zero_chart.size() != expect || inf_chart.size() != expect || value_at_zero.size() != N ||
      value_at_inf.size() != N)
    throw Error(Errc::BadInput, "sphere chart sizes do not match the grid");
  v.zero_chart_ = std::move(zero_chart);
  v.inf_chart_ = std::move(inf_chart);
  v.at_zero_ = value_at_zero;
  v.at_inf_ = value_at_inf;
  const double mismatch = v.overlap_mismatch();
  if (!(mismatch <= kOverlapTolerance)) {
    std::ostringstream os;
    os << "sphere charts disagree by " << mismatch << " on their overlap";
    throw Error(Errc::ConfigViolation, os.str());
  }
  for (auto* chart : {&v.zero_chart_, &v.inf_chart_})
    for (std::size_t k = 0; k < chart->size(); k += N) {
      Eigen::Map<Eigen::VectorXd> x(chart->data() + k, N);
      const Point p = target.project(x);
      if ((p - x).norm() > 1e-6) throw Error(Errc::NotOnManifold, "sphere chart node off the target");
      x = p;
    }
  v.at_zero_ = target.project(v.at_zero_);
  v.at_inf_ = target.project(v.at_inf_);
  v.total_ = v.chart_region_gradient_sq([](Homog) { return true; });
  return v;
}

Point SphereMap::chart_eval(int which, double t, double theta) const {
  const int N = target_.ambient_dim(), C = grid_.cols;
  const double dt = row_step();
  const double x = t / dt + centre_row_;
  if (x < 0) return which == 0 ? at_zero_ : at_inf_;
  int k = static_cast<int>(std::floor(x));
  k = std::min(k, rows_ - 2);
  const double fr = x - k;
  double y = theta / dt;
  y -= C * std::floor(y / C);
  int l = static_cast<int>(std::floor(y));
  const double fc = y - l;
  l %= C;
  const int l1 = (l + 1) % C;
  const std::vector<double>& nodes = which == 0 ? zero_chart_ : inf_chart_;
  auto at = [&](int r, int c) {
    return Eigen::Map<const Eigen::VectorXd>(nodes.data() + (static_cast<std::size_t>(r) * C + c) * N, N);
  };
  const Point v = (1 - fr) * ((1 - fc) * at(k, l) + fc * at(k, l1)) + fr * ((1 - fc) * at(k + 1, l) + fc * at(k + 1, l1));
  return target_.project(v);
}

Point SphereMap::eval(Homog h) const {
  if (is_great_sphere()) {
    const Eigen::Vector3d x = riemann_point(h);
    return radius_ * (x(0) * frame_.col(1) + x(1) * frame_.col(2) + x(2) * frame_.col(0));
  }
  if (std::abs(h.p) <= std::abs(h.q)) {
    if (h.p == 0.0) return at_zero_;
    const Complex w = h.p / h.q;
    return chart_eval(0, std::log(std::abs(w)), std::arg(w));
  }
  if (h.q == 0.0) return at_inf_;
  const Complex w = h.q / h.p;
  return chart_eval(1, std::log(std::abs(w)), std::arg(w));
}

double SphereMap::chart_region_gradient_sq(const std::function<bool(Homog)>& inside) const {
  const int N = target_.ambient_dim(), C = grid_.cols;
  const double dt = row_step();
  double total = 0;
  for (int which = 0; which < 2; ++which) {
    const std::vector<double>& nodes = which == 0 ? zero_chart_ : inf_chart_;
    auto at = [&](int r, int c) {
      return Eigen::Map<const Eigen::VectorXd>(nodes.data() + (static_cast<std::size_t>(r) * C + c) * N, N);
    };
    for (int k = 0; k < centre_row_; ++k)
      for (int l = 0; l < C; ++l) {
        const Complex w = std::exp(Complex((k + 0.5 - centre_row_) * dt, (l + 0.5) * dt));
        if (!inside(which == 0 ? Homog{w, 1.0} : Homog{1.0, w})) continue;
        const int l1 = (l + 1) % C;
        const double dtt = 0.5 * ((at(k + 1, l) - at(k, l)).squaredNorm() + (at(k + 1, l1) - at(k, l1)).squaredNorm());
        const double dth = 0.5 * ((at(k, l1) - at(k, l)).squaredNorm() + (at(k + 1, l1) - at(k + 1, l)).squaredNorm());
        // conformal coordinates (t, theta) with equal steps: the cell integral is the sum of squares
        total += dtt + dth;
      }
  }
  return total;
}

double SphereMap::total_gradient_sq() const { return total_; }

double SphereMap::disk_gradient_sq(const Mobius& m, Complex c, double rho) const {
  if (is_great_sphere()) return 2 * radius_ * radius_ * disk_image_area(m, c, rho);
  const Mobius inv = m.inverse();
  return chart_region_gradient_sq([&](Homog h) {
    const Homog z = inv.apply(h);
    return std::norm(z.p - c * z.q) < rho * rho * std::norm(z.q);
  });
}

Homog SphereMap::preimage(PointRef x) const {
  if (is_great_sphere()) {
    const Eigen::Vector3d y(x.dot(frame_.col(1)), x.dot(frame_.col(2)), x.dot(frame_.col(0)));
    const double n = y.norm();
    if (!(n > 0)) return {0.0, 1.0};
    return from_riemann_point(y / n);
  }
  const int N = target_.ambient_dim(), C = grid_.cols;
  const double dt = row_step();
  double best = (x - at_zero_).squaredNorm();
  Homog arg{0.0, 1.0};
  if (const double d = (x - at_inf_).squaredNorm(); d < best) best = d, arg = {1.0, 0.0};
  for (int which = 0; which < 2; ++which) {
    const std::vector<double>& nodes = which == 0 ? zero_chart_ : inf_chart_;
    for (int k = 0; k <= centre_row_; ++k)
      for (int l = 0; l < C; ++l) {
        const Eigen::Map<const Eigen::VectorXd> v(nodes.data() + (static_cast<std::size_t>(k) * C + l) * N, N);
        const double d = (x - v).squaredNorm();
        if (d < best) {
          best = d;
          const Complex w = std::exp(Complex((k - centre_row_) * dt, l * dt));
          arg = which == 0 ? Homog{w, 1.0} : Homog{1.0, w};
        }
      }
  }
  return arg;
}

double SphereMap::overlap_mismatch() const {
  const int N = target_.ambient_dim(), C = grid_.cols;
  double worst = 0;
  for (int k = centre_row_ - grid_.overlap_rows; k <= centre_row_ + grid_.overlap_rows; ++k)
    for (int l = 0; l < C; ++l) {
      const int k2 = 2 * centre_row_ - k, l2 = (C - l) % C;
      const Eigen::Map<const Eigen::VectorXd> a(zero_chart_.data() + (static_cast<std::size_t>(k) * C + l) * N, N);
      const Eigen::Map<const Eigen::VectorXd> b(inf_chart_.data() + (static_cast<std::size_t>(k2) * C + l2) * N, N);
      worst = std::max(worst, (a - b).norm());
    }
  return worst;
}

}  // namespace tmxl
