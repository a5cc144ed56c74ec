#include "tmxl/fields.hpp"

#include <cmath>
#include <sstream>

namespace tmxl {

LatticeGeometry::LatticeGeometry(Complex t, int a, int b) : tau(t), na(a), nb(b) {
  if (!(t.imag() > 0)) throw Error(Errc::DegenerateMark, "lattice needs Im tau > 0");
  ha = 1.0 / na;
  hb = 1.0 / nb;
  cell = ha * hb;
  alpha = std::norm(t) / (2 * t.imag());
  beta = -t.real() / (2 * t.imag());
  gamma = 1.0 / (2 * t.imag());
}

namespace {

void check_grid(int na, int nb) {
  if (na < kMinGrid || nb < kMinGrid) throw Error(Errc::BadInput, "grid must be at least 8 x 8");
}

}  // namespace

TorusMap::TorusMap(Target target, Mark mark, int na, int nb, std::vector<double> nodes)
    : target_(std::move(target)), mark_(mark), na_(na), nb_(nb), nodes_(std::move(nodes)) {
  check_grid(na, nb);
  const int N = ambient_dim();
  if (nodes_.size() != static_cast<std::size_t>(na) * nb * N) throw Error(Errc::BadInput, "node array has wrong size");
  for (int n = 0; n < node_count(); ++n) {
    const double r = target_.manifold_residual(node(n));
    if (!(r <= kNodeTolerance)) {
      std::ostringstream os;
      os << "node " << n << " is off the target by " << r;
      throw Error(Errc::NotOnManifold, os.str());
    }
  }
}

TorusMap::TorusMap(Trusted, Target target, Mark mark, int na, int nb, std::vector<double> nodes)
    : target_(std::move(target)), mark_(mark), na_(na), nb_(nb), nodes_(std::move(nodes)) {}

TorusMap TorusMap::sample(const Target& target, Mark mark, int na, int nb,
                          const std::function<Point(double, double)>& f) {
  check_grid(na, nb);
  const int N = target.ambient_dim();
  std::vector<double> nodes(static_cast<std::size_t>(na) * nb * N);
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      const Point p = target.project(f(static_cast<double>(i) / na, static_cast<double>(j) / nb));
      std::copy(p.data(), p.data() + N, nodes.begin() + (static_cast<std::size_t>(i) * nb + j) * N);
    }
  return TorusMap(Trusted{}, target, mark, na, nb, std::move(nodes));
}

TorusMap TorusMap::constant(const Target& target, Mark mark, int na, int nb, PointRef value) {
  const Point p = target.project(value);
  return sample(target, mark, na, nb, [&](double, double) { return p; });
}

TorusMap TorusMap::with_mark(Mark m) const { return TorusMap(Trusted{}, target_, m, na_, nb_, nodes_); }

Point TorusMap::interpolate(double a, double b) const {
  const double x = a * na_, y = b * nb_;
  const double fx = std::floor(x), fy = std::floor(y);
  const double tx = x - fx, ty = y - fy;
  const int i = static_cast<int>(fx), j = static_cast<int>(fy);
  if (tx == 0.0 && ty == 0.0) return node(i, j);
  const Point p = (1 - tx) * (1 - ty) * node(i, j) + tx * (1 - ty) * node(i + 1, j) + (1 - tx) * ty * node(i, j + 1) +
                  tx * ty * node(i + 1, j + 1);
  return target_.project(p);
}

Section::Section(const TorusMap& base, std::vector<double> values, Flavor flavor)
    : na_(base.na()), nb_(base.nb()), dim_(base.ambient_dim()), flavor_(flavor), values_(std::move(values)) {
  if (values_.size() != static_cast<std::size_t>(na_) * nb_ * dim_) throw Error(Errc::BadInput, "section has wrong size");
  if (flavor_ == Flavor::Tangential) {
    const Target& t = base.target();
    for (int n = 0; n < na_ * nb_; ++n) {
      const auto v = value(n);
      if ((t.tangent_part(base.node(n), v) - v).norm() > kNodeTolerance * std::max(1.0, v.norm()))
        throw Error(Errc::NotTangent, "tangential section has a normal component");
    }
  }
}

Section Section::zeros(const TorusMap& base, Flavor flavor) {
  return Section(base, std::vector<double>(static_cast<std::size_t>(base.node_count()) * base.ambient_dim(), 0.0),
                 flavor);
}

Section Section::sample(const TorusMap& base, Flavor flavor, const std::function<Point(int, int)>& f) {
  const int N = base.ambient_dim();
  std::vector<double> v(static_cast<std::size_t>(base.node_count()) * N);
  for (int i = 0; i < base.na(); ++i)
    for (int j = 0; j < base.nb(); ++j) {
      const Point p = f(i, j);
      std::copy(p.data(), p.data() + N, v.begin() + (static_cast<std::size_t>(i) * base.nb() + j) * N);
    }
  return Section(base, std::move(v), flavor);
}

double Section::sup_norm() const {
  double m = 0.0;
  for (int n = 0; n < na_ * nb_; ++n) m = std::max(m, value(n).norm());
  return m;
}

Section Section::scaled(double s) const {
  Section out = *this;
  for (double& x : out.values_) x *= s;
  return out;
}

Section Section::plus(const Section& o, double s) const {
  if (o.values_.size() != values_.size()) throw Error(Errc::BadInput, "sections live on different grids");
  Section out = *this;
  for (std::size_t k = 0; k < values_.size(); ++k) out.values_[k] += s * o.values_[k];
  if (o.flavor_ != flavor_) out.flavor_ = Flavor::Ambient;
  return out;
}

Section Section::tangential_part(const TorusMap& u) const {
  if (!fits(u)) throw Error(Errc::BadInput, "section does not fit the map");
  Section out = *this;
  for (int n = 0; n < na_ * nb_; ++n) out.value(n) = u.target().tangent_part(u.node(n), value(n));
  out.flavor_ = Flavor::Tangential;
  return out;
}

double Section::inner(const Section& o, const LatticeGeometry& g) const {
  if (o.values_.size() != values_.size()) throw Error(Errc::BadInput, "sections live on different grids");
  std::vector<double> terms(static_cast<std::size_t>(na_) * nb_);
  for (int n = 0; n < na_ * nb_; ++n) terms[n] = value(n).dot(o.value(n));
  return exact_sum(terms) * g.cell * g.tau.imag();
}

double star_density(const LatticeGeometry& g, const double* c, const double* ap, const double* am, const double* bp,
                    const double* bm, int dim) {
  double pa = 0, ma = 0, pb = 0, mb = 0, mix = 0;
  for (int k = 0; k < dim; ++k) {
    const double dap = (ap[k] - c[k]) * g.na, dam = (c[k] - am[k]) * g.na;
    const double dbp = (bp[k] - c[k]) * g.nb, dbm = (c[k] - bm[k]) * g.nb;
    pa += dap * dap;
    ma += dam * dam;
    pb += dbp * dbp;
    mb += dbm * dbm;
    mix += 0.25 * (dap + dam) * (dbp + dbm);
  }
  return g.cell * (0.5 * g.alpha * (pa + ma) + 0.5 * g.gamma * (pb + mb) + 2 * g.beta * mix);
}

std::vector<double> dirichlet_density(const LatticeGeometry& g, std::span<const double> values, int dim) {
  std::vector<double> out(static_cast<std::size_t>(g.na) * g.nb);
  auto at = [&](int i, int j) { return values.data() + static_cast<std::size_t>(g.index(i, j)) * dim; };
  parallel_for(static_cast<std::size_t>(g.na), [&](std::size_t b, std::size_t e) {
    for (int i = static_cast<int>(b); i < static_cast<int>(e); ++i)
      for (int j = 0; j < g.nb; ++j)
        out[static_cast<std::size_t>(i) * g.nb + j] =
            star_density(g, at(i, j), at(i + 1, j), at(i - 1, j), at(i, j + 1), at(i, j - 1), dim);
  });
  return out;
}

double dirichlet_energy(const LatticeGeometry& g, std::span<const double> values, int dim) {
  return exact_sum(dirichlet_density(g, values, dim));
}

std::vector<double> energy_density(const TorusMap& u) {
  return dirichlet_density(u.geometry(), u.data(), u.ambient_dim());
}

double energy(const TorusMap& u) { return exact_sum(energy_density(u)); }

double area(const TorusMap& u) {
  const LatticeGeometry g = u.geometry();
  std::vector<double> out(static_cast<std::size_t>(u.node_count()));
  parallel_for(static_cast<std::size_t>(g.na), [&](std::size_t b, std::size_t e) {
    for (int i = static_cast<int>(b); i < static_cast<int>(e); ++i)
      for (int j = 0; j < g.nb; ++j) {
        const auto c = u.node(i, j);
        const Point da[2] = {(u.node(i + 1, j) - c) * g.na, (c - u.node(i - 1, j)) * g.na};
        const Point db[2] = {(u.node(i, j + 1) - c) * g.nb, (c - u.node(i, j - 1)) * g.nb};
        double s = 0;
        for (const Point& x : da)
          for (const Point& y : db) {
            const double q = x.squaredNorm() * y.squaredNorm() - x.dot(y) * x.dot(y);
            s += std::sqrt(std::max(0.0, q));
          }
        out[static_cast<std::size_t>(i) * g.nb + j] = 0.25 * s * g.cell;
      }
  });
  return exact_sum(out);
}

void laplacian_at(const LatticeGeometry& g, std::span<const double> values, int dim, int i, int j, double* out) {
  const double wa = 2 * g.alpha * g.na * g.na, wb = 2 * g.gamma * g.nb * g.nb;
  const double wab = g.beta * g.na * g.nb;  // 4 beta / (4 ha hb)
  auto at = [&](int p, int q) { return values.data() + static_cast<std::size_t>(g.index(p, q)) * dim; };
  const double *c = at(i, j), *ap = at(i + 1, j), *am = at(i - 1, j), *bp = at(i, j + 1), *bm = at(i, j - 1);
  const double *pp = at(i + 1, j + 1), *pm = at(i + 1, j - 1), *mp = at(i - 1, j + 1), *mm = at(i - 1, j - 1);
  for (int k = 0; k < dim; ++k)
    out[k] = wa * (ap[k] - 2 * c[k] + am[k]) + wb * (bp[k] - 2 * c[k] + bm[k]) + wab * (pp[k] - pm[k] - mp[k] + mm[k]);
}

std::vector<double> lattice_laplacian(const LatticeGeometry& g, std::span<const double> values, int dim) {
  std::vector<double> out(values.size());
  parallel_for(static_cast<std::size_t>(g.na), [&](std::size_t b, std::size_t e) {
    for (int i = static_cast<int>(b); i < static_cast<int>(e); ++i)
      for (int j = 0; j < g.nb; ++j)
        laplacian_at(g, values, dim, i, j, out.data() + (static_cast<std::size_t>(i) * g.nb + j) * dim);
  });
  return out;
}

Section tension(const TorusMap& u) {
  const LatticeGeometry g = u.geometry();
  const int N = u.ambient_dim();
  std::vector<double> lu = lattice_laplacian(g, u.data(), N);
  const double inv = 1.0 / g.tau.imag();
  const Target& t = u.target();
  parallel_for(static_cast<std::size_t>(u.node_count()), [&](std::size_t b, std::size_t e) {
    for (std::size_t n = b; n < e; ++n) {
      Eigen::Map<Eigen::VectorXd> v(lu.data() + n * N, N);
      v = inv * t.tangent_part(u.node(static_cast<int>(n)), v);
    }
  });
  Section out = Section::zeros(u, Flavor::Ambient);
  std::copy(lu.begin(), lu.end(), out.data().begin());
  return out.tangential_part(u);
}

TorusMap perturb(const TorusMap& u, std::span<const Section> xs, std::span<const double> s) {
  if (xs.size() != s.size()) throw Error(Errc::BadInput, "one coefficient per section");
  bool all_zero = true;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (!xs[k].fits(u)) throw Error(Errc::BadInput, "section does not fit the map");
    if (s[k] != 0.0) all_zero = false;
  }
  if (all_zero) return u;
  const int N = u.ambient_dim();
  const Target& t = u.target();
  std::vector<double> nodes(u.data().begin(), u.data().end());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (s[k] == 0.0) continue;
    const auto d = xs[k].data();
    for (std::size_t q = 0; q < nodes.size(); ++q) nodes[q] += s[k] * d[q];
  }
  int bad = -1;
  parallel_for(static_cast<std::size_t>(u.node_count()), [&](std::size_t b, std::size_t e) {
    for (std::size_t n = b; n < e; ++n) {
      Eigen::Map<Eigen::VectorXd> p(nodes.data() + n * N, N);
      if (!(t.focal_depth(p) < t.tube_radius())) {
        bad = static_cast<int>(n);
        continue;
      }
      p = t.project_unchecked(p, nullptr);
    }
  });
  if (bad >= 0) {
    std::ostringstream os;
    os << "node " << bad << " left the tubular neighbourhood";
    throw Error(Errc::LeftTube, os.str());
  }
  return MapBuilder::trusted(t, u.mark(), u.na(), u.nb(), std::move(nodes));
}

TorusMap perturb(const TorusMap& u, const Section& x, double s) {
  return perturb(u, std::span<const Section>(&x, 1), std::span<const double>(&s, 1));
}

VariationDerivatives variation_derivatives(const TorusMap& u, const Section& x, const Section& y, double h) {
  const Section pair[2] = {x, y};
  auto f = [&](double s, double t) {
    const double c[2] = {s, t};
    return energy(perturb(u, std::span<const Section>(pair, 2), std::span<const double>(c, 2)));
  };
  const double f0 = f(0, 0);
  auto first = [&](double q) { return (f(q, 0) - f(-q, 0)) / (2 * q); };
  auto second = [&](double q) { return (f(q, 0) - 2 * f0 + f(-q, 0)) / (q * q); };
  auto mixed = [&](double q) { return (f(q, q) - f(q, -q) - f(-q, q) + f(-q, -q)) / (4 * q * q); };
  auto richardson = [&](auto&& d) { return (4 * d(h / 2) - d(h)) / 3; };
  return {richardson(first), richardson(second), richardson(mixed)};
}

TorusMap iota_pullback(const TorusMap& u, Mark target_mark) { return u.with_mark(target_mark); }

TorusMap shifted(const TorusMap& u, double da, double db) {
  const int N = u.ambient_dim();
  const double si = da * u.na(), sj = db * u.nb();
  const bool on_grid = si == std::round(si) && sj == std::round(sj);
  std::vector<double> nodes(u.data().size());
  for (int i = 0; i < u.na(); ++i)
    for (int j = 0; j < u.nb(); ++j) {
      double* o = nodes.data() + (static_cast<std::size_t>(i) * u.nb() + j) * N;
      if (on_grid) {
        const auto src = u.node(i + static_cast<int>(si), j + static_cast<int>(sj));
        std::copy(src.begin(), src.end(), o);
      } else {
        const Point p = u.interpolate(static_cast<double>(i) / u.na() + da, static_cast<double>(j) / u.nb() + db);
        std::copy(p.data(), p.data() + N, o);
      }
    }
  return MapBuilder::trusted(u.target(), u.mark(), u.na(), u.nb(), std::move(nodes));
}

}  // namespace tmxl
