#pragma once

// Independent oracles shared by the unit tests and the acceptance run. Nothing here calls the
// library's numerics; library types appear only as parameter carriers.

#include "tmxl/deform.hpp"
#include "tmxl/fixtures.hpp"
#include "tmxl/moduli.hpp"

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace tmxl::oracle {

// ---- moduli ----------------------------------------------------------------------------------------

// Applies a word such as "S T^5" letter by letter, leftmost first.
inline Complex apply_word(const std::string& word, Complex z) {
  std::istringstream is(word);
  std::string tok;
  while (is >> tok) {
    if (tok == "S") {
      z = -1.0 / z;
    } else if (tok == "T") {
      z += 1.0;
    } else {
      z += static_cast<double>(std::stoll(tok.substr(2)));
    }
  }
  return z;
}

inline int letter_count(const std::string& word) {
  std::istringstream is(word);
  std::string tok;
  int n = 0;
  while (is >> tok) n += (tok == "S" || tok == "T") ? 1 : static_cast<int>(std::llabs(std::stoll(tok.substr(2))));
  return n;
}

struct ReduceResult {
  Complex tau;
  int shortest = -1;
};

// Exhaustive search over words in {S, T, T^-1} of length <= max_len: the orbit point of largest
// Im, normalized into the strip with the unit-circle convention, plus the shortest word reaching it.
inline ReduceResult brute_force_reduce(Complex tau, int max_len) {
  std::vector<Complex> layer{tau};
  std::vector<std::vector<Complex>> layers{layer};
  Complex best = tau;
  for (int len = 1; len <= max_len; ++len) {
    std::vector<Complex> next;
    next.reserve(layer.size() * 3);
    for (Complex z : layer) {
      next.push_back(-1.0 / z);
      next.push_back(z + 1.0);
      next.push_back(z - 1.0);
    }
    for (Complex z : next)
      if (z.imag() > best.imag() * (1 + 1e-13)) best = z;
    layers.push_back(next);
    layer = std::move(next);
  }
  Complex r = best - std::ceil(best.real() - 0.5);
  if (std::abs(std::norm(r) - 1.0) < 1e-12 && r.real() < 0) r = -1.0 / r;
  ReduceResult out{r, -1};
  for (int len = 0; len <= max_len && out.shortest < 0; ++len)
    for (Complex z : layers[len])
      if (std::abs(z - r) < 1e-10) {
        out.shortest = len;
        break;
      }
  return out;
}

// ---- cutoff and sphere areas -------------------------------------------------------------------------

// int_{r^2}^{r} (d eta / d rho)^2 2 pi rho d rho by composite Simpson on the derivative.
inline double radial_cutoff(double r) {
  const int n = 200000;
  const double lo = r * r, hi = r, h = (hi - lo) / n;
  auto f = [&](double rho) {
    const double d = -1.0 / (rho * std::log(r));
    return d * d * 2 * kPi * rho;
  };
  double s = f(lo) + f(hi);
  for (int k = 1; k < n; ++k) s += (k % 2 ? 4 : 2) * f(lo + k * h);
  return s * h / 3;
}

inline Eigen::Vector3d riemann(Complex p, Complex q) {
  const double n = std::norm(p) + std::norm(q);
  const Complex pq = p * std::conj(q);
  return {2 * pq.real() / n, 2 * pq.imag() / n, (std::norm(p) - std::norm(q)) / n};
}
inline Eigen::Vector3d riemann(Complex w) { return riemann(w, 1.0); }

// Spherical area of m(disk) as the integral of the pulled-back area form 4 |m'|^2 / (1 + |m|^2)^2
// by the midpoint rule in polar coordinates about c.
inline double disk_area(const Mobius& m, Complex c, double rho) {
  const int nr = 600, nt = 600;
  double s = 0;
  for (int i = 0; i < nr; ++i) {
    const double r = (i + 0.5) * rho / nr;
    for (int j = 0; j < nt; ++j) {
      const Complex z = c + std::polar(r, 2 * kPi * (j + 0.5) / nt);
      const Complex num = m.a() * z + m.b(), den = m.c() * z + m.d();
      // |m'|^2 / (1 + |m|^2)^2 = |den|^-4 / (1 + |num / den|^2)^2 with det 1
      s += 4 / std::pow(std::norm(den) + std::norm(num), 2) * r;
    }
  }
  return s * (rho / nr) * (2 * kPi / nt);
}

// ---- construct-then-measure gluing bound ---------------------------------------------------------------
// The glued map is re-evaluated from its parameters at arbitrary points, gradients by central
// differences, integrals by the midpoint rule on a lattice `refine` times finer than the map's grid,
// region membership decided at the quadrature points.

inline Complex offset(Complex tau, Complex z, Complex w) {
  const Complex d = z - w;
  double b = d.imag() / tau.imag();
  double a = d.real() - b * tau.real();
  a -= std::floor(a + 0.5);
  b -= std::floor(b + 0.5);
  Complex best = a + b * tau;
  for (int p = -1; p <= 1; ++p)
    for (int q = -1; q <= 1; ++q) {
      const Complex c = Complex(a + p) + (b + q) * tau;
      if (std::abs(c) < std::abs(best)) best = c;
    }
  return best;
}

// Great sphere with value f0 at infinity and f1, f2 spanning the equator.
inline Point sphere(const SmallMatrix& f, Eigen::Vector3d x) { return x(0) * f.col(1) + x(1) * f.col(2) + x(2) * f.col(0); }
inline Point sphere(const SmallMatrix& f, Complex w) { return sphere(f, riemann(w)); }

struct Bubble {
  Complex center;
  double scale, phase, inner, outer, radius;
  SmallMatrix frame;
  double chi(double rho) const {
    if (rho <= inner) return 1;
    if (rho >= outer) return 0;
    return std::log(outer / rho) / std::log(outer / inner);
  }
  Complex w(Complex zeta) const { return std::polar(1.0 / scale, phase) * zeta; }
};

struct Glue {
  Complex tau;
  int na = 0, nb = 0;
  std::function<Point(Complex)> base;      // unit-norm host map
  std::function<Point(Complex)> identify;  // body read on the fundamental strip
  std::vector<Bubble> bubbles;
  double cap_energy = 0;  // degenerate body: sphere energy beyond the ends of the strip

  Point stage(Complex z, std::size_t upto) const {
    Point x = base(z);
    for (std::size_t k = 0; k < upto; ++k) {
      const Bubble& bb = bubbles[k];
      const double c = bb.chi(std::abs(offset(tau, z, bb.center)));
      if (c == 0) continue;
      x += c * (sphere(bb.frame, bb.w(offset(tau, z, bb.center))) - bb.frame.col(0));
      x /= x.norm();
    }
    return x;
  }
  Point map(Complex z) const { return stage(z, bubbles.size()); }
};

inline void attach(Glue& o, const std::vector<BubbleGlue>& glues) {
  for (const BubbleGlue& g : glues) {
    const Point p = o.stage(g.center, o.bubbles.size());
    SmallMatrix f(p.size(), 3);
    f.col(0) = p;
    Point e1 = g.f1 - g.f1.dot(p) * p;
    e1 /= e1.norm();
    Point e2 = g.f2 - g.f2.dot(p) * p - g.f2.dot(e1) * e1;
    e2 /= e2.norm();
    f.col(1) = e1;
    f.col(2) = e2;
    o.bubbles.push_back({g.center, g.scale, g.phase, g.inner, g.outer, g.ball_radius, f});
  }
}

inline Glue glue_of(const GlueSpec& spec) {
  Glue o;
  o.tau = spec.mark.tau();
  o.na = spec.na;
  o.nb = spec.nb;
  const Complex tau = o.tau;
  o.base = [tau, body = spec.body](Complex z) {
    const double b = z.imag() / tau.imag(), a = z.real() - b * tau.real();
    const Point x = body(a, b);
    return Point(x / x.norm());
  };
  o.identify = o.base;
  attach(o, spec.bubbles);
  return o;
}

// Sphere through xi = exp(2 pi i z) and the Mobius map, smoothstep-blended across the seam band
// towards the normalized midpoint of its values at xi = 0 and xi = infinity.
inline Glue glue_of(const CylinderSpec& spec) {
  Glue o;
  o.tau = spec.mark.tau();
  o.na = spec.na;
  o.nb = spec.nb;
  const Complex tau = o.tau;
  const double Y = 0.5 * tau.imag(), seam = spec.seam;
  const SmallMatrix f = spec.frame;
  const Mobius m = spec.map;
  auto on_sphere = [f, m](Complex z) {
    const Complex xi = std::exp(Complex(0, 2 * kPi) * z);
    return sphere(f, riemann(m.a() * xi + m.b(), m.c() * xi + m.d()));
  };
  Point mid = sphere(f, riemann(m.b(), m.d())) + sphere(f, riemann(m.a(), m.c()));
  mid /= mid.norm();
  o.identify = on_sphere;
  o.base = [=](Complex z) {
    double b = z.imag() / tau.imag();
    b -= std::floor(b + 0.5);
    const Complex s = Complex(z.real() - (z.imag() / tau.imag() - b) * tau.real(), b * tau.imag());
    const double x = std::clamp((std::abs(s.imag()) - (Y - seam)) / seam, 0.0, 1.0);
    const double w = x * x * (3 - 2 * x);
    Point p = (1 - w) * on_sphere(s) + w * mid;
    return Point(p / p.norm());
  };
  // |xi| < e^{-pi Im tau} directly; |xi| > e^{pi Im tau} through xi -> 1 / xi
  const double L = kPi * tau.imag();
  o.cap_energy = 2 * disk_area(m, 0.0, std::exp(-L)) + 2 * disk_area(Mobius(m.b(), m.a(), m.d(), m.c()), 0.0, std::exp(-L));
  attach(o, spec.bubbles);
  return o;
}

inline double grad_sq(const std::function<Point(Complex)>& f, Complex z) {
  const double h = 1e-6;
  const Point fx = (f(z + h) - f(z - h)) / (2 * h);
  const Point fy = (f(z + Complex(0, h)) - f(z - Complex(0, h))) / (2 * h);
  return fx.squaredNorm() + fy.squaredNorm();
}

// Defect terms of the glue with the body identified at zero shift (torus) or through the generating
// Mobius map (cylinder); the fundamental cell is taken as the strip |b| <= 1/2.
inline DefectReport continuum_defect(const Glue& o, int refine) {
  const Complex tau = o.tau;
  const int ma = o.na * refine, mb = o.nb * refine;
  const double da = 1.0 / ma, db = 1.0 / mb, dA = da * db * tau.imag();
  const std::size_t n = o.bubbles.size();
  auto dist = [&](Complex z, std::size_t k) { return std::abs(offset(tau, z, o.bubbles[k].center)); };
  auto nested_in = [&](std::size_t l, std::size_t j) {
    return l != j && std::abs(offset(tau, o.bubbles[l].center, o.bubbles[j].center)) + o.bubbles[l].radius <=
                         o.bubbles[j].radius * o.bubbles[j].radius;
  };
  double body_out = 0, body_in = 0, neck = 0;
  std::vector<double> inner(n, 0.0);
  for (int i = 0; i < ma; ++i)
    for (int j = 0; j < mb; ++j) {
      const Complex z = ((i + 0.5) * da) + ((j + 0.5) * db - 0.5) * tau;
      bool in_ball = false, in_neck = false;
      for (std::size_t k = 0; k < n; ++k) {
        const double d = dist(z, k), r = o.bubbles[k].radius;
        if (d < r) in_ball = true;
        if (d < r && d >= r * r) in_neck = true;
      }
      if (in_ball) body_in += grad_sq(o.identify, z);
      else body_out += grad_sq([&](Complex w) { return Point(o.map(w) - o.identify(w)); }, z);
      if (in_neck) neck += grad_sq([&](Complex w) { return o.map(w); }, z);
      for (std::size_t k = 0; k < n; ++k) {
        const double r = o.bubbles[k].radius;
        if (dist(z, k) >= r * r) continue;
        bool excluded = false;
        for (std::size_t l = 0; l < n; ++l)
          if (nested_in(l, k) && dist(z, l) < o.bubbles[l].radius) excluded = true;
        if (excluded) continue;
        const Bubble& bb = o.bubbles[k];
        inner[k] += grad_sq(
            [&](Complex w) { return Point(o.map(w) - sphere(bb.frame, bb.w(offset(tau, w, bb.center)))); }, z);
      }
    }
  // Outside Omega_k the bubble's integral is its total minus the part on Omega_k, taken from the
  // radial profile 8 lambda^2 / (lambda^2 + rho^2)^2 integrated in closed form over disks centred
  // at the bubble centre, which is exact for the inner disk of the bubble itself.
  double bubbles = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const Bubble& bb = o.bubbles[k];
    const double lam = bb.scale, r2 = bb.radius * bb.radius;
    double on_omega = 8 * kPi * r2 * r2 / (lam * lam + r2 * r2);
    for (std::size_t l = 0; l < n; ++l) {
      if (!nested_in(l, k)) continue;
      const Bubble& nb = o.bubbles[l];
      const Complex c = offset(tau, nb.center, bb.center);
      double s = 0;
      const int nr = 400, nt = 400;
      for (int a = 0; a < nr; ++a)
        for (int b = 0; b < nt; ++b) {
          const double rr = (a + 0.5) * nb.radius / nr;
          const double rho = std::abs(c + std::polar(rr, 2 * kPi * (b + 0.5) / nt));
          s += 8 * lam * lam / std::pow(lam * lam + rho * rho, 2) * rr;
        }
      on_omega -= s * (nb.radius / nr) * (2 * kPi / nt);
    }
    bubbles += std::sqrt(inner[k] * dA) + std::sqrt(std::max(0.0, 8 * kPi - on_omega));
  }
  DefectReport r;
  r.body = std::sqrt(body_out * dA + o.cap_energy) + std::sqrt(body_in * dA);
  r.bubbles = bubbles;
  r.neck = std::sqrt(neck * dA);
  r.defect = std::max({3 * r.body, 3 * r.bubbles, 3 * r.neck});
  return r;
}

inline DefectReport continuum_defect(const GlueSpec& spec, int refine) { return continuum_defect(glue_of(spec), refine); }
inline DefectReport continuum_defect(const CylinderSpec& spec, int refine) {
  return continuum_defect(glue_of(spec), refine);
}

// ---- glued scenarios --------------------------------------------------------------------------------

inline Point vec4(double a, double b, double c, double d) {
  Point p(4);
  p << a, b, c, d;
  return p;
}

inline GlueSpec constant_spec(int n) {
  GlueSpec s;
  s.na = s.nb = n;
  s.body = [](double, double) { return vec4(1, 0, 0, 0); };
  BubbleGlue g;
  g.center = Complex(0.4, 0.55);
  g.scale = 0.025;
  g.inner = 0.05;
  g.outer = 0.1;
  g.ball_radius = 0.35;
  g.f1 = vec4(0, 1, 0, 0);
  g.f2 = vec4(0, 0, 1, 0);
  s.bubbles = {g};
  return s;
}

inline GlueSpec clifford_spec(int n) {
  GlueSpec s = constant_spec(n);
  const double c = 1 / std::sqrt(2.0);
  s.body = [c](double a, double b) {
    return vec4(c * std::cos(2 * kPi * a), c * std::sin(2 * kPi * a), c * std::cos(2 * kPi * b),
                c * std::sin(2 * kPi * b));
  };
  s.bubbles[0].ball_radius = 0.2;
  s.bubbles[0].f1 = vec4(0, 1, 0, 0.3);
  s.bubbles[0].f2 = vec4(0, 0, 1, -0.2);
  return s;
}

inline GlueSpec nested_spec(int n) {
  GlueSpec s = constant_spec(n);
  s.bubbles[0].center = Complex(0.5, 0.5);
  s.bubbles[0].scale = 0.04;
  s.bubbles[0].inner = 0.14;
  s.bubbles[0].outer = 0.22;
  s.bubbles[0].ball_radius = 0.48;
  BubbleGlue g;
  g.center = Complex(0.58, 0.5);
  g.scale = 0.012;
  g.inner = 0.02;
  g.outer = 0.04;
  g.ball_radius = 0.13;
  g.f1 = vec4(0, 0, 0, 1);
  g.f2 = vec4(0, 1, 0.3, 0);
  s.bubbles.push_back(g);
  return s;
}

inline GlueSpec two_bubble_spec(int n) {
  GlueSpec s = constant_spec(n);
  s.bubbles[0].center = Complex(0.25, 0.25);
  s.bubbles[0].scale = 0.012;
  s.bubbles[0].inner = 0.08;
  s.bubbles[0].outer = 0.16;
  BubbleGlue g = s.bubbles[0];
  g.center = Complex(0.75, 0.75);
  g.phase = 0.7;
  g.scale = 0.0144;
  g.f2 = vec4(0, 0, 0, 1);
  s.bubbles.push_back(g);
  return s;
}

// Degenerate body on a long cylinder with one bubble glued on its waist.
inline CylinderSpec cylinder_spec(int n) {
  CylinderSpec c;
  c.na = n / 2;
  c.nb = n + n / 4;
  c.frame = SmallMatrix::Zero(4, 3);
  c.frame(0, 0) = c.frame(1, 1) = c.frame(2, 2) = 1;
  c.map = Mobius(1.0, -1.3, 1.0, -0.7);
  BubbleGlue g;
  g.center = Complex(0.5, 0.0);
  g.scale = 0.03;
  g.inner = 0.05;
  g.outer = 0.1;
  g.ball_radius = 0.3;
  g.f1 = vec4(0, 0, 0, 1);
  g.f2 = vec4(0, 1, 0, 0);
  c.bubbles = {g};
  return c;
}

// ---- flow -------------------------------------------------------------------------------------------

// E = c - |s|^2: the flow is radial with q = |s|^2 solving q' = 4 q (1 - q).
inline FlowField quadratic_surrogate(int k, double c) {
  FlowField f;
  f.k = k;
  f.energy = [c](std::span<const double> s) {
    double q = 0;
    for (double x : s) q += x * x;
    return c - q;
  };
  f.gradient = [k](std::span<const double> s) {
    Eigen::VectorXd g(k);
    for (int i = 0; i < k; ++i) g(i) = -2 * s[static_cast<std::size_t>(i)];
    return g;
  };
  return f;
}

inline double logistic_radius(double r0, double x) {
  const double q0 = r0 * r0, e = std::exp(4 * x);
  return std::sqrt(q0 * e / (1 - q0 + q0 * e));
}

}  // namespace tmxl::oracle
