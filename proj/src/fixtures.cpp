#include "tmxl/fixtures.hpp"

#include <algorithm>
#include <cmath>

namespace tmxl {

namespace {

double glue_weight(const BubbleGlue& b, double rho) {
  if (rho <= b.inner) return 1.0;
  if (rho >= b.outer) return 0.0;
  return std::log(b.outer / rho) / std::log(b.outer / b.inner);
}

Mobius glue_map(const BubbleGlue& b) { return Mobius::affine(std::polar(1.0 / b.scale, b.phase), 0.0); }

SphereMap glue_sphere(const Target& target, const BubbleGlue& b, const Point& p) {
  const auto* s = std::get_if<RoundSphere>(&target.shape());
  if (!s) throw Error(Errc::BadInput, "glued bubbles need a round sphere target");
  const Point f0 = p / p.norm();
  Point e1 = b.f1 - b.f1.dot(f0) * f0;
  e1 /= e1.norm();
  Point e2 = b.f2 - b.f2.dot(f0) * f0 - b.f2.dot(e1) * e1;
  e2 /= e2.norm();
  return SphereMap::great_sphere(target, f0, e1, e2);
}

struct Glued {
  std::vector<SphereMap> spheres;
  std::vector<Mobius> maps;
  std::vector<Ball> balls;
};

// Attaches the bubbles one by one: stage(z) is the map glued so far, read at any point.
Glued attach(const Target& target, const LatticeGeometry& g, const std::vector<BubbleGlue>& bubbles,
             const std::function<Point(Complex)>& base, std::vector<double>& nodes) {
  Glued out;
  const int N = target.ambient_dim();
  auto stage = [&](Complex z, std::size_t upto) {
    Point x = base(z);
    for (std::size_t k = 0; k < upto; ++k) {
      const Complex zeta = torus_offset(g, z, bubbles[k].center);
      const double c = glue_weight(bubbles[k], std::abs(zeta));
      if (c == 0.0) continue;
      x = target.project(x + c * (out.spheres[k].eval(out.maps[k].apply(zeta)) - out.spheres[k].pole_value(1)));
    }
    return x;
  };
  for (std::size_t k = 0; k < bubbles.size(); ++k) {
    const Point p = stage(bubbles[k].center, k);
    out.spheres.push_back(glue_sphere(target, bubbles[k], p));
    out.maps.push_back(glue_map(bubbles[k]));
    out.balls.push_back({bubbles[k].center, bubbles[k].ball_radius});
  }
  for (int i = 0; i < g.na; ++i)
    for (int j = 0; j < g.nb; ++j) {
      const Complex z = node_position(g, i, j);
      const std::size_t at = static_cast<std::size_t>(g.index(i, j)) * N;
      Eigen::Map<Eigen::VectorXd> x(nodes.data() + at, N);
      for (std::size_t k = 0; k < bubbles.size(); ++k) {
        const Complex zeta = torus_offset(g, z, bubbles[k].center);
        const double c = glue_weight(bubbles[k], std::abs(zeta));
        if (c == 0.0) continue;
        x = target.project(x + c * (out.spheres[k].eval(out.maps[k].apply(zeta)) - out.spheres[k].pole_value(1)));
      }
    }
  return out;
}

}  // namespace

GluedFixture glue(const GlueSpec& spec) {
  if (!spec.body) throw Error(Errc::BadInput, "glue needs a body map");
  const TorusMap body = TorusMap::sample(spec.target, spec.mark, spec.na, spec.nb, spec.body);
  const LatticeGeometry g = body.geometry();
  std::vector<double> nodes(body.data().begin(), body.data().end());
  auto base = [&](Complex z) {
    const double b = z.imag() / g.tau.imag(), a = z.real() - b * g.tau.real();
    return spec.target.project(spec.body(a, b));
  };
  Glued gl = attach(spec.target, g, spec.bubbles, base, nodes);
  BubbleConfig cfg;
  cfg.balls = gl.balls;
  cfg.maps = gl.maps;
  TorusMap u = MapBuilder::trusted(spec.target, spec.mark, spec.na, spec.nb, std::move(nodes));
  return {std::move(u), BubbleCollection::with_body(body, std::move(gl.spheres)), std::move(cfg)};
}

GluedFixture glue(const CylinderSpec& spec) {
  if (spec.frame.rows() != spec.target.ambient_dim() || spec.frame.cols() != 3)
    throw Error(Errc::BadInput, "cylinder frame needs three columns in the ambient dimension");
  const SphereMap v = SphereMap::great_sphere(spec.target, spec.frame.col(0), spec.frame.col(1), spec.frame.col(2));
  const LatticeGeometry g(spec.mark.tau(), spec.na, spec.nb);
  const double Y = 0.5 * g.tau.imag();
  if (!(spec.seam > 0 && spec.seam < Y)) throw Error(Errc::BadInput, "seam band wider than the strip");
  const Point mid = spec.target.project(v.eval(spec.map.apply(Homog{0.0, 1.0})) + v.eval(spec.map.apply(Homog{1.0, 0.0})));
  // z on the strip |Im z| <= Y
  auto base = [&](Complex z) {
    double b = z.imag() / g.tau.imag();
    b -= std::floor(b + 0.5);
    const Complex s = Complex(z.real() - (z.imag() / g.tau.imag() - b) * g.tau.real(), b * g.tau.imag());
    const double x = std::clamp((std::abs(s.imag()) - (Y - spec.seam)) / spec.seam, 0.0, 1.0);
    const double w = x * x * (3 - 2 * x);
    const Point on = v.eval(spec.map.apply(cylinder_xi(s)));
    if (w == 0.0) return on;
    return spec.target.project((1 - w) * on + w * mid);
  };
  const int N = spec.target.ambient_dim();
  std::vector<double> nodes(static_cast<std::size_t>(spec.na) * spec.nb * N);
  for (int i = 0; i < g.na; ++i)
    for (int j = 0; j < g.nb; ++j) {
      const Point x = base(node_position(g, i, j));
      std::copy(x.data(), x.data() + N, nodes.data() + static_cast<std::size_t>(g.index(i, j)) * N);
    }
  Glued gl = attach(spec.target, g, spec.bubbles, base, nodes);
  std::vector<SphereMap> spheres{v};
  BubbleConfig cfg;
  cfg.maps = {spec.map};
  for (std::size_t k = 0; k < gl.spheres.size(); ++k) {
    spheres.push_back(gl.spheres[k]);
    cfg.maps.push_back(gl.maps[k]);
  }
  cfg.balls = gl.balls;
  TorusMap u = MapBuilder::trusted(spec.target, spec.mark, spec.na, spec.nb, std::move(nodes));
  return {std::move(u), BubbleCollection::degenerate(std::move(spheres)), std::move(cfg)};
}

namespace {

Point unit(int n, int k) {
  Point p = Point::Zero(n);
  p(k) = 1;
  return p;
}

Point clifford_point(double a, double b) {
  const double c = 1 / std::sqrt(2.0);
  Point p(4);
  p << c * std::cos(2 * kPi * a), c * std::sin(2 * kPi * a), c * std::cos(2 * kPi * b), c * std::sin(2 * kPi * b);
  return p;
}

BubbleGlue default_glue(Complex centre) {
  BubbleGlue g;
  g.center = centre;
  g.scale = 0.025;
  g.inner = 0.05;
  g.outer = 0.1;
  g.ball_radius = 0.35;
  g.f1 = unit(4, 1);
  g.f2 = unit(4, 2);
  return g;
}

}  // namespace

TorusMap clifford_fixture(int n) {
  return TorusMap::sample(Target::round_sphere(1, 4), Mark({0, 1}), n, n, clifford_point);
}

TorusMap great_circle_fixture(int n) {
  return TorusMap::sample(Target::round_sphere(1, 4), Mark({0, 1}), n, n, [](double a, double) {
    Point p(4);
    p << std::cos(2 * kPi * a), std::sin(2 * kPi * a), 0, 0;
    return p;
  });
}

Sweepout linear_sweepout(const TorusMap& mid, int count, const Point& base) {
  if (count < 3) throw Error(Errc::BadInput, "a sweepout needs at least three samples");
  if (base.size() != mid.ambient_dim()) throw Error(Errc::BadInput, "base point dimension mismatch");
  const Target& t = mid.target();
  const auto* sphere = std::get_if<RoundSphere>(&t.shape());
  if (!sphere) throw Error(Errc::BadInput, "arc sweepouts need a round sphere target");
  const double R = sphere->radius;
  const Point e = t.project(base);
  const int N = mid.ambient_dim();
  // arc angle from e to every node
  std::vector<double> theta(static_cast<std::size_t>(mid.node_count()));
  for (int n = 0; n < mid.node_count(); ++n) {
    theta[n] = std::acos(std::clamp(e.dot(mid.node(n)) / (R * R), -1.0, 1.0));
    if (kPi - theta[n] < 1e-6) throw Error(Errc::OutsideTube, "a node is antipodal to the base point");
  }
  std::vector<SweepSample> samples;
  for (int k = 0; k < count; ++k) {
    const double s = static_cast<double>(k) / (count - 1), w = 1 - std::abs(2 * s - 1);
    std::vector<double> nodes(mid.data().size());
    for (int n = 0; n < mid.node_count(); ++n) {
      Point x;
      if (w == 1.0) {
        x = mid.node(n);
      } else if (w == 0.0) {
        x = e;
      } else if (theta[n] < 1e-12) {
        x = t.project((1 - w) * e + w * mid.node(n));
      } else {
        x = (std::sin((1 - w) * theta[n]) * e + std::sin(w * theta[n]) * mid.node(n)) / std::sin(theta[n]);
      }
      std::copy(x.data(), x.data() + N, nodes.data() + static_cast<std::size_t>(n) * N);
    }
    samples.push_back({s, MapBuilder::trusted(t, mid.mark(), mid.na(), mid.nb(), std::move(nodes))});
  }
  return Sweepout(std::move(samples));
}

std::vector<std::string> glued_fixture_names() {
  return {"constant_bubble", "clifford_bubble", "nested", "two_bubbles", "cylinder_bubble"};
}

GluedFixture glued_fixture(const std::string& name, int n) {
  GlueSpec s;
  s.na = s.nb = n;
  s.body = [](double, double) { return unit(4, 0); };
  if (name == "constant_bubble") {
    s.bubbles = {default_glue({0.4, 0.55})};
    return glue(s);
  }
  if (name == "clifford_bubble") {
    s.body = clifford_point;
    BubbleGlue g = default_glue({0.4, 0.55});
    g.ball_radius = 0.2;
    g.f1 = unit(4, 1) + 0.3 * unit(4, 3);
    g.f2 = unit(4, 2) - 0.2 * unit(4, 3);
    s.bubbles = {g};
    return glue(s);
  }
  if (name == "nested") {
    BubbleGlue outer = default_glue({0.5, 0.5});
    outer.scale = 0.04;
    outer.inner = 0.14;
    outer.outer = 0.22;
    outer.ball_radius = 0.48;
    BubbleGlue inner = default_glue({0.58, 0.5});
    inner.scale = 0.012;
    inner.inner = 0.02;
    inner.outer = 0.04;
    inner.ball_radius = 0.13;
    inner.f1 = unit(4, 3);
    inner.f2 = unit(4, 1) + 0.3 * unit(4, 2);
    s.bubbles = {outer, inner};
    return glue(s);
  }
  if (name == "two_bubbles") {
    BubbleGlue a = default_glue({0.25, 0.25});
    a.scale = 0.012;
    a.inner = 0.08;
    a.outer = 0.16;
    BubbleGlue b = a;
    b.center = {0.75, 0.75};
    b.phase = 0.7;
    b.scale = 0.0144;
    b.f2 = unit(4, 3);
    s.bubbles = {a, b};
    return glue(s);
  }
  if (name == "cylinder_bubble") {
    CylinderSpec c;
    c.na = n / 2;
    c.nb = n + n / 4;
    c.frame = SmallMatrix::Zero(4, 3);
    c.frame(0, 0) = c.frame(1, 1) = c.frame(2, 2) = 1;
    c.map = Mobius(1.0, -1.3, 1.0, -0.7);
    BubbleGlue g = default_glue({0.5, 0.0});
    g.scale = 0.03;
    g.ball_radius = 0.3;
    g.f1 = unit(4, 3);
    g.f2 = unit(4, 1);
    c.bubbles = {g};
    return glue(c);
  }
  throw Error(Errc::UnknownFixture, "unknown glued fixture " + name);
}

}  // namespace tmxl
