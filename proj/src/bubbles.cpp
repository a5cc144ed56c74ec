#include "tmxl/bubbles.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

namespace tmxl {

// ---- cutoff --------------------------------------------------------------------------------------

CutoffProfile::CutoffProfile(double r) : r_(r), log_r_(std::log(r)) {
  if (!(r > 0 && r < 1)) {
    std::ostringstream os;
    os << "cutoff radius " << r << " outside (0, 1)";
    throw Error(Errc::BadRadius, os.str());
  }
}

double CutoffProfile::operator()(double rho) const {
  if (rho <= r_ * r_) return 0.0;
  if (rho >= r_) return 1.0;
  return 2 - std::log(rho) / log_r_;
}

double CutoffProfile::derivative(double rho) const {
  if (rho <= r_ * r_ || rho >= r_) return 0.0;
  return -1 / (rho * log_r_);
}

double CutoffProfile::gradient_sq() const { return -2 * kPi / log_r_; }

CutoffProfile cutoff_profile(double r) { return CutoffProfile(r); }

double polar_gradient_sq(const std::function<double(double, double)>& f, double rin, double rout, int nr, int ntheta) {
  if (!(rin > 0 && rout > rin) || nr < 2 || ntheta < 3) throw Error(Errc::BadInput, "bad polar grid");
  const double t0 = std::log(rin), dt = (std::log(rout) - t0) / (nr - 1), dth = 2 * kPi / ntheta;
  std::vector<double> v(static_cast<std::size_t>(nr) * ntheta);
  for (int k = 0; k < nr; ++k)
    for (int l = 0; l < ntheta; ++l) v[static_cast<std::size_t>(k) * ntheta + l] = f(std::exp(t0 + k * dt), l * dth);
  auto at = [&](int k, int l) { return v[static_cast<std::size_t>(k) * ntheta + (l % ntheta)]; };
  std::vector<double> cells;
  cells.reserve(v.size());
  for (int k = 0; k + 1 < nr; ++k)
    for (int l = 0; l < ntheta; ++l) {
      const double ft = 0.5 * (std::pow(at(k + 1, l) - at(k, l), 2) + std::pow(at(k + 1, l + 1) - at(k, l + 1), 2)) / (dt * dt);
      const double fth = 0.5 * (std::pow(at(k, l + 1) - at(k, l), 2) + std::pow(at(k + 1, l + 1) - at(k + 1, l), 2)) / (dth * dth);
      cells.push_back((ft + fth) * dt * dth);
    }
  return exact_sum(cells);
}

// ---- collections and configs ---------------------------------------------------------------------

BubbleCollection::BubbleCollection(std::optional<TorusMap> body, std::vector<SphereMap> spheres)
    : body_(std::move(body)), spheres_(std::move(spheres)) {
  const int N = body_ ? body_->ambient_dim() : spheres_.front().target().ambient_dim();
  for (const SphereMap& v : spheres_)
    if (v.target().ambient_dim() != N) throw Error(Errc::BadInput, "spheres and body map into different targets");
}

BubbleCollection BubbleCollection::with_body(TorusMap body, std::vector<SphereMap> spheres) {
  return BubbleCollection(std::move(body), std::move(spheres));
}

BubbleCollection BubbleCollection::degenerate(std::vector<SphereMap> spheres) {
  if (spheres.empty()) throw Error(Errc::BadInput, "a degenerate body needs its sphere");
  return BubbleCollection(std::nullopt, std::move(spheres));
}

const TorusMap& BubbleCollection::body() const {
  if (!body_) throw Error(Errc::BadInput, "collection has a degenerate body");
  return *body_;
}

const Target& BubbleCollection::target() const { return body_ ? body_->target() : spheres_.front().target(); }

int BubbleCollection::bubble_count() const {
  return static_cast<int>(spheres_.size()) - (body_degenerate() ? 1 : 0);
}

Complex torus_offset(const LatticeGeometry& g, Complex z, Complex w) {
  const Complex d = z - w;
  double b = d.imag() / g.tau.imag();
  double a = d.real() - b * g.tau.real();
  a -= std::floor(a + 0.5);
  b -= std::floor(b + 0.5);
  Complex best = Complex(a) + b * g.tau;
  for (int p = -2; p <= 2; ++p)
    for (int q = -2; q <= 2; ++q) {
      const Complex c = Complex(a + p) + (b + q) * g.tau;
      if (std::abs(c) < std::abs(best)) best = c;
    }
  return best;
}

Complex node_position(const LatticeGeometry& g, int i, int j) {
  return g.position(static_cast<double>(i) / g.na, static_cast<double>(j) / g.nb);
}

Complex cylinder_xi(Complex z) { return std::exp(Complex(0, 2 * kPi) * z); }

namespace {

// Node position with b in [-1/2, 1/2): the strip on which a degenerate body is read.
Complex strip_position(const LatticeGeometry& g, int i, int j) {
  double b = static_cast<double>(j) / g.nb;
  if (b >= 0.5) b -= 1;
  return g.position(static_cast<double>(i) / g.na, b);
}

void check_radius(double r) {
  if (!(r > 0 && r < 0.5)) {
    std::ostringstream os;
    os << "ball radius " << r << " outside (0, 1/2)";
    throw Error(Errc::ConfigViolation, os.str());
  }
}

// Star density of (with_u ? u : 0) - f at node (i, j), f read at unwrapped positions around z.
template <class F>
double local_star(const LatticeGeometry& g, const TorusMap& u, int i, int j, Complex z, F&& f, bool with_u) {
  const int N = u.ambient_dim();
  const Complex steps[5] = {0.0, Complex(1.0 / g.na), Complex(-1.0 / g.na), g.tau / double(g.nb), -g.tau / double(g.nb)};
  const int di[5] = {0, 1, -1, 0, 0}, dj[5] = {0, 0, 0, 1, -1};
  double v[5][kMaxAmbient];
  for (int k = 0; k < 5; ++k) {
    const Point fk = f(z + steps[k]);
    for (int c = 0; c < N; ++c) v[k][c] = (with_u ? u.node(i + di[k], j + dj[k])(c) : 0.0) - fk(c);
  }
  return star_density(g, v[0], v[1], v[2], v[3], v[4], N);
}

double sum_of(std::vector<double>& parts) { return exact_sum(parts); }

}  // namespace

void validate_config(const LatticeGeometry& g, const BubbleCollection& coll, const BubbleConfig& cfg) {
  if (static_cast<int>(cfg.balls.size()) != coll.bubble_count()) {
    std::ostringstream os;
    os << cfg.balls.size() << " balls for " << coll.bubble_count() << " bubbles";
    throw Error(Errc::ConfigViolation, os.str());
  }
  if (cfg.maps.size() != coll.spheres().size()) throw Error(Errc::ConfigViolation, "one Mobius map per sphere");
  if (!std::isfinite(cfg.shift_a) || !std::isfinite(cfg.shift_b)) throw Error(Errc::ConfigViolation, "body shift not finite");
  for (const Ball& b : cfg.balls) check_radius(b.radius);
  for (std::size_t i = 0; i < cfg.balls.size(); ++i)
    for (std::size_t j = i + 1; j < cfg.balls.size(); ++j) {
      const Ball &p = cfg.balls[i], &q = cfg.balls[j];
      const double d = torus_distance(g, p.center, q.center);
      if (d >= p.radius + q.radius) continue;
      if (d + p.radius <= q.radius * q.radius || d + q.radius <= p.radius * p.radius) continue;
      std::ostringstream os;
      os << "balls " << i << " and " << j << " meet without nesting inside an inner ball";
      throw Error(Errc::ConfigViolation, os.str());
    }
}

std::vector<std::vector<int>> nested_balls(const LatticeGeometry& g, const BubbleConfig& cfg) {
  std::vector<std::vector<int>> out(cfg.balls.size());
  for (std::size_t j = 0; j < cfg.balls.size(); ++j)
    for (std::size_t l = 0; l < cfg.balls.size(); ++l) {
      if (l == j) continue;
      const double d = torus_distance(g, cfg.balls[l].center, cfg.balls[j].center);
      if (d + cfg.balls[l].radius <= cfg.balls[j].radius * cfg.balls[j].radius) out[j].push_back(static_cast<int>(l));
    }
  return out;
}

// ---- the certifier -------------------------------------------------------------------------------

TorusMap body_on_grid(const TorusMap& u, const BubbleCollection& coll, const BubbleConfig& cfg) {
  const LatticeGeometry g = u.geometry();
  if (coll.body_degenerate()) {
    const SphereMap& v = coll.spheres().front();
    const Mobius& m = cfg.maps.front();
    std::vector<double> nodes(u.data().size());
    const int N = u.ambient_dim();
    for (int i = 0; i < g.na; ++i)
      for (int j = 0; j < g.nb; ++j) {
        const Point x = u.target().project(v.eval(m.apply(cylinder_xi(strip_position(g, i, j)))));
        std::copy(x.data(), x.data() + N, nodes.data() + static_cast<std::size_t>(g.index(i, j)) * N);
      }
    return MapBuilder::trusted(u.target(), u.mark(), u.na(), u.nb(), std::move(nodes));
  }
  const TorusMap& body = coll.body();
  if (body.same_grid(u)) {
    const TorusMap s = shifted(body, cfg.shift_a, cfg.shift_b);
    return MapBuilder::trusted(u.target(), u.mark(), u.na(), u.nb(), std::vector<double>(s.data().begin(), s.data().end()));
  }
  return TorusMap::sample(u.target(), u.mark(), u.na(), u.nb(),
                          [&](double a, double b) { return body.interpolate(a + cfg.shift_a, b + cfg.shift_b); });
}

DefectReport defect_report(const TorusMap& u, const BubbleCollection& coll, const BubbleConfig& cfg) {
  const LatticeGeometry g = u.geometry();
  validate_config(g, coll, cfg);
  if (coll.target().ambient_dim() != u.ambient_dim()) throw Error(Errc::BadInput, "collection maps into another target");
  const int N = u.ambient_dim(), nodes = u.node_count();
  const std::size_t nballs = cfg.balls.size();
  const bool degenerate = coll.body_degenerate();

  DefectReport r;
  if (!degenerate) r.mark = std::abs(u.tau() - coll.body().tau());

  // per-node offsets to every ball centre
  std::vector<Complex> zeta(static_cast<std::size_t>(nodes) * nballs);
  std::vector<char> in_ball(nodes, 0), in_neck(nodes, 0);
  for (int i = 0; i < g.na; ++i)
    for (int j = 0; j < g.nb; ++j) {
      const int n = g.index(i, j);
      const Complex z = node_position(g, i, j);
      for (std::size_t k = 0; k < nballs; ++k) {
        const Complex o = torus_offset(g, z, cfg.balls[k].center);
        zeta[static_cast<std::size_t>(n) * nballs + k] = o;
        const double d = std::abs(o), rk = cfg.balls[k].radius;
        if (d < rk) in_ball[n] = 1;
        if (d < rk && d >= rk * rk) in_neck[n] = 1;
      }
    }

  // body
  std::vector<double> outside, inside;
  if (!degenerate) {
    const TorusMap b = body_on_grid(u, coll, cfg);
    std::vector<double> diff(u.data().begin(), u.data().end());
    for (std::size_t k = 0; k < diff.size(); ++k) diff[k] -= b.data()[k];
    const std::vector<double> dd = dirichlet_density(g, diff, N);
    const std::vector<double> db = nballs ? dirichlet_density(g, b.data(), N) : std::vector<double>(nodes, 0.0);
    for (int n = 0; n < nodes; ++n) (in_ball[n] ? inside : outside).push_back(in_ball[n] ? db[n] : dd[n]);
    for (double& x : outside) x *= 2;
    for (double& x : inside) x *= 2;
  } else {
    const SphereMap& v = coll.spheres().front();
    const Mobius& m = cfg.maps.front();
    auto f = [&](Complex z) { return v.eval(m.apply(cylinder_xi(z))); };
    for (int i = 0; i < g.na; ++i)
      for (int j = 0; j < g.nb; ++j) {
        const Complex z = strip_position(g, i, j);
        const bool ball = in_ball[g.index(i, j)];
        (ball ? inside : outside).push_back(2 * local_star(g, u, i, j, z, f, !ball));
      }
    // the sphere beyond the ends of the strip, |xi| outside [e^{-pi Im tau}, e^{pi Im tau}]
    const double L = kPi * g.tau.imag();
    outside.push_back(v.disk_gradient_sq(m, 0.0, std::exp(-L)));
    outside.push_back(std::max(0.0, v.total_gradient_sq() - v.disk_gradient_sq(m, 0.0, std::exp(L))));
  }
  r.body = std::sqrt(sum_of(outside)) + std::sqrt(sum_of(inside));

  // necks
  if (nballs) {
    const std::vector<double> du = energy_density(u);
    std::vector<double> neck;
    for (int n = 0; n < nodes; ++n)
      if (in_neck[n]) neck.push_back(2 * du[n]);
    r.neck = std::sqrt(sum_of(neck));
  }

  // bubbles
  const auto nested = nested_balls(g, cfg);
  for (std::size_t k = 0; k < nballs; ++k) {
    const SphereMap& v = coll.spheres()[static_cast<std::size_t>(coll.sphere_of_bubble(static_cast<int>(k)))];
    const Mobius& m = cfg.maps[static_cast<std::size_t>(coll.sphere_of_bubble(static_cast<int>(k)))];
    const double r2 = cfg.balls[k].radius * cfg.balls[k].radius;
    std::vector<double> parts;
    for (int i = 0; i < g.na; ++i)
      for (int j = 0; j < g.nb; ++j) {
        const int n = g.index(i, j);
        const Complex o = zeta[static_cast<std::size_t>(n) * nballs + k];
        if (!(std::abs(o) < r2)) continue;
        bool excluded = false;
        for (int l : nested[k])
          if (std::abs(zeta[static_cast<std::size_t>(n) * nballs + l]) < cfg.balls[l].radius) excluded = true;
        if (excluded) continue;
        parts.push_back(2 * local_star(g, u, i, j, o, [&](Complex w) { return v.eval(m.apply(w)); }, true));
      }
    double on_omega = v.disk_gradient_sq(m, 0.0, r2);
    for (int l : nested[k])
      on_omega -= v.disk_gradient_sq(m, torus_offset(g, cfg.balls[l].center, cfg.balls[k].center), cfg.balls[l].radius);
    r.bubbles += std::sqrt(sum_of(parts)) + std::sqrt(std::max(0.0, v.total_gradient_sq() - on_omega));
  }

  r.defect = std::max({r.mark, 3 * r.body, 3 * r.bubbles, 3 * r.neck});
  return r;
}

double bubble_defect(const TorusMap& u, const BubbleCollection& coll, const BubbleConfig& cfg) {
  return defect_report(u, coll, cfg).defect;
}

// ---- config search -------------------------------------------------------------------------------

namespace {

using Grid2 = std::vector<std::complex<double>>;

// In-place 2D DFT of an na x nb row-major array.
void fft2(Grid2& a, int na, int nb, bool inverse) {
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> in, out;
  for (int i = 0; i < na; ++i) {
    in.assign(a.begin() + static_cast<std::ptrdiff_t>(i) * nb, a.begin() + static_cast<std::ptrdiff_t>(i + 1) * nb);
    inverse ? fft.inv(out, in) : fft.fwd(out, in);
    std::copy(out.begin(), out.end(), a.begin() + static_cast<std::ptrdiff_t>(i) * nb);
  }
  in.resize(na);
  for (int j = 0; j < nb; ++j) {
    for (int i = 0; i < na; ++i) in[i] = a[static_cast<std::size_t>(i) * nb + j];
    inverse ? fft.inv(out, in) : fft.fwd(out, in);
    for (int i = 0; i < na; ++i) a[static_cast<std::size_t>(i) * nb + j] = out[i];
  }
}

struct BubbleFit {
  Complex center;
  Mobius map;
  double cost = std::numeric_limits<double>::infinity();
};

// Point of largest spherical derivative of m: the energy centre of a round sphere read through m.
Complex energy_centre(const Mobius& m) {
  return -(std::conj(m.a()) * m.b() + std::conj(m.c()) * m.d()) / (std::norm(m.a()) + std::norm(m.c()));
}

BubbleFit fit_bubble(const TorusMap& u, const SphereMap& v, Complex centre, double lam, double fit_scales,
                     std::span<const Complex> others) {
  const LatticeGeometry g = u.geometry();
  BubbleFit fit;
  fit.center = centre;
  for (int pass = 0; pass < 2; ++pass) {
    const double window = fit_scales * lam;
    std::vector<Complex> z;
    std::vector<Homog> w;
    std::vector<double> wt;
    std::vector<int> idx;
    for (int i = 0; i < g.na; ++i)
      for (int j = 0; j < g.nb; ++j) {
        const Complex pos = node_position(g, i, j);
        const Complex o = torus_offset(g, pos, fit.center);
        if (std::abs(o) > window) continue;
        bool nearer = false;
        for (Complex c : others) nearer = nearer || torus_distance(g, pos, c) < std::abs(o);
        if (nearer) continue;
        z.push_back(o);
        w.push_back(v.preimage(u.node(i, j)));
        wt.push_back(1 / std::pow(1 + std::norm(o) / (lam * lam), 2));
        idx.push_back(g.index(i, j));
      }
    if (z.size() < 4) return fit;
    Mobius m;
    try {
      m = fit_mobius(z, w, wt);
      const Complex c = energy_centre(m);
      m = m.compose(Mobius::affine(1.0, c));
      fit.center += c;
      for (Complex& x : z) x -= c;
    } catch (const Error& e) {
      if (e.code() == Errc::ChartOverflow || e.code() == Errc::NoCandidate) return {centre, Mobius(), std::numeric_limits<double>::infinity()};
      throw;
    }
    double num = 0, den = 0;
    for (std::size_t k = 0; k < z.size(); ++k) {
      num += wt[k] * (u.node(idx[k]) - v.eval(m.apply(z[k]))).squaredNorm();
      den += wt[k];
    }
    fit.map = m;
    fit.cost = num / den;
  }
  return fit;
}

}  // namespace

std::pair<double, double> fit_body_shift(const TorusMap& u, const TorusMap& body) {
  const int na = u.na(), nb = u.nb(), N = u.ambient_dim();
  const TorusMap v = body.same_grid(u) ? body
                                       : TorusMap::sample(u.target(), u.mark(), na, nb,
                                                          [&](double a, double b) { return body.interpolate(a, b); });
  const std::size_t n = static_cast<std::size_t>(na) * nb;
  std::vector<double> corr(n, 0.0);
  Grid2 fu(n), fv(n);
  for (int c = 0; c < N; ++c) {
    for (std::size_t k = 0; k < n; ++k) {
      fu[k] = u.data()[k * N + c];
      fv[k] = v.data()[k * N + c];
    }
    fft2(fu, na, nb, false);
    fft2(fv, na, nb, false);
    for (std::size_t k = 0; k < n; ++k) fu[k] = std::conj(fu[k]) * fv[k];
    fft2(fu, na, nb, true);
    for (std::size_t k = 0; k < n; ++k) corr[k] += fu[k].real();
  }
  const double top = *std::max_element(corr.begin(), corr.end());
  const double tol = 1e-9 * (std::abs(top) + 1);
  // first (p, q) in lexicographic order within the tolerance of the maximum
  for (int p = 0; p < na; ++p)
    for (int q = 0; q < nb; ++q)
      if (corr[static_cast<std::size_t>(p) * nb + q] >= top - tol)
        return {static_cast<double>(p) / na, static_cast<double>(q) / nb};
  return {0.0, 0.0};
}

Mobius fit_mobius(std::span<const Complex> z, std::span<const Homog> w, std::span<const double> weights) {
  if (z.size() != w.size() || z.size() != weights.size()) throw Error(Errc::BadInput, "fit inputs differ in length");
  if (z.size() < 3) throw Error(Errc::NoCandidate, "too few points for a Mobius fit");
  // q (a z + b) - p (c z + d) = 0, one row per pair, solved in the least-squares sense
  Eigen::MatrixXcd rows(static_cast<Eigen::Index>(z.size()), 4);
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double s = std::sqrt(weights[k] / ((std::norm(w[k].p) + std::norm(w[k].q)) * (1 + std::norm(z[k]))));
    const auto r = static_cast<Eigen::Index>(k);
    rows(r, 0) = s * w[k].q * z[k];
    rows(r, 1) = s * w[k].q;
    rows(r, 2) = -s * w[k].p * z[k];
    rows(r, 3) = -s * w[k].p;
  }
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(rows, Eigen::ComputeFullV);
  const Eigen::VectorXcd x = svd.matrixV().col(3);
  return Mobius(x(0), x(1), x(2), x(3));
}

BubbleConfig find_config(const TorusMap& u, const BubbleCollection& coll, const FindOptions& opts) {
  const LatticeGeometry g = u.geometry();
  const int N = u.ambient_dim();
  BubbleConfig cfg;
  cfg.maps.assign(coll.spheres().size(), Mobius());

  std::vector<double> resid;  // residual energy density per node
  if (!coll.body_degenerate()) {
    std::tie(cfg.shift_a, cfg.shift_b) = fit_body_shift(u, coll.body());
    if (coll.bubble_count() == 0) return cfg;
    const TorusMap b = body_on_grid(u, coll, cfg);
    std::vector<double> diff(u.data().begin(), u.data().end());
    for (std::size_t k = 0; k < diff.size(); ++k) diff[k] -= b.data()[k];
    resid = dirichlet_density(g, diff, N);
  } else {
    // the body sphere, fitted on the middle half of the strip and refitted without outliers
    const SphereMap& v = coll.spheres().front();
    const double half = 0.25 * g.tau.imag();
    Mobius m;
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<Complex> z;
      std::vector<Homog> w;
      std::vector<double> wt;
      for (int i = 0; i < g.na; ++i)
        for (int j = 0; j < g.nb; ++j) {
          const Complex pos = strip_position(g, i, j);
          if (std::abs(pos.imag()) > half) continue;
          const Complex xi = cylinder_xi(pos);
          if (pass == 1 && (u.node(i, j) - v.eval(m.apply(xi))).norm() > 0.05) continue;
          z.push_back(xi);
          w.push_back(v.preimage(u.node(i, j)));
          wt.push_back(1.0);
        }
      m = fit_mobius(z, w, wt);
    }
    cfg.maps.front() = m;
    if (coll.bubble_count() == 0) return cfg;
    auto f = [&](Complex z) { return v.eval(m.apply(cylinder_xi(z))); };
    resid.resize(static_cast<std::size_t>(u.node_count()));
    for (int i = 0; i < g.na; ++i)
      for (int j = 0; j < g.nb; ++j) resid[g.index(i, j)] = local_star(g, u, i, j, strip_position(g, i, j), f, true);
  }

  // candidate centres: local maxima of the residual density
  const double top = *std::max_element(resid.begin(), resid.end());
  std::vector<int> peaks;
  for (int i = 0; i < g.na; ++i)
    for (int j = 0; j < g.nb; ++j) {
      const int n = g.index(i, j);
      if (!(resid[n] >= opts.peak_fraction * top) || !(resid[n] > 0)) continue;
      bool is_max = true;
      for (int p = -1; p <= 1 && is_max; ++p)
        for (int q = -1; q <= 1; ++q) {
          if (p == 0 && q == 0) continue;
          const int m = g.index(i + p, j + q);
          if (resid[m] > resid[n] || (resid[m] == resid[n] && m < n)) {
            is_max = false;
            break;
          }
        }
      if (is_max) peaks.push_back(n);
    }
  std::stable_sort(peaks.begin(), peaks.end(), [&](int a, int b) { return resid[a] > resid[b]; });
  const double h = std::max(1.0 / g.na, std::abs(g.tau) / g.nb);
  std::vector<int> kept;
  for (int n : peaks) {
    const Complex z = node_position(g, n / g.nb, n % g.nb);
    bool near = false;
    for (int k : kept) near = near || torus_distance(g, z, node_position(g, k / g.nb, k % g.nb)) < 3 * h;
    if (!near) kept.push_back(n);
    if (static_cast<int>(kept.size()) >= coll.bubble_count() + 2) break;
  }
  if (static_cast<int>(kept.size()) < coll.bubble_count()) {
    std::ostringstream os;
    os << "found " << kept.size() << " concentration candidates for " << coll.bubble_count() << " bubbles";
    throw Error(Errc::NoCandidate, os.str());
  }

  // fit every sphere at every candidate and assign greedily by cost
  std::vector<Complex> centres;
  for (int n : kept) centres.push_back(node_position(g, n / g.nb, n % g.nb));
  const int nb = coll.bubble_count();
  std::vector<std::vector<BubbleFit>> fits(kept.size(), std::vector<BubbleFit>(static_cast<std::size_t>(nb)));
  struct Pair {
    double cost;
    std::size_t c;
    int b;
  };
  std::vector<Pair> pairs;
  for (std::size_t c = 0; c < kept.size(); ++c) {
    std::vector<Complex> others;
    for (std::size_t o = 0; o < kept.size(); ++o)
      if (o != c) others.push_back(centres[o]);
    const double grad_sq = 2 * resid[kept[c]] / g.cell;
    for (int b = 0; b < nb; ++b) {
      const SphereMap& v = coll.spheres()[static_cast<std::size_t>(coll.sphere_of_bubble(b))];
      const double lam = std::sqrt(v.total_gradient_sq() / kPi / grad_sq);  // peak 8 R^2 / lambda^2
      fits[c][static_cast<std::size_t>(b)] = fit_bubble(u, v, centres[c], std::max(lam, h), opts.fit_scales, others);
      pairs.push_back({fits[c][static_cast<std::size_t>(b)].cost, c, b});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.cost < b.cost; });
  std::vector<char> used_c(kept.size(), 0), used_b(static_cast<std::size_t>(nb), 0);
  cfg.balls.assign(static_cast<std::size_t>(nb), Ball{0.0, 0.0});
  int assigned = 0;
  for (const Pair& p : pairs) {
    if (used_c[p.c] || used_b[static_cast<std::size_t>(p.b)] || !std::isfinite(p.cost)) continue;
    used_c[p.c] = used_b[static_cast<std::size_t>(p.b)] = 1;
    const BubbleFit& f = fits[p.c][static_cast<std::size_t>(p.b)];
    cfg.balls[static_cast<std::size_t>(p.b)].center = f.center;
    cfg.maps[static_cast<std::size_t>(coll.sphere_of_bubble(p.b))] = f.map;
    ++assigned;
  }
  if (assigned < nb) throw Error(Errc::NoCandidate, "no Mobius fit for some bubble");

  // radii: exhaustive over small products of the candidate list, coordinate sweeps otherwise
  const std::vector<double>& radii = opts.radii;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_r;
  auto score = [&](const std::vector<double>& r) {
    BubbleConfig c = cfg;
    for (int b = 0; b < nb; ++b) c.balls[static_cast<std::size_t>(b)].radius = r[static_cast<std::size_t>(b)];
    try {
      return bubble_defect(u, coll, c);
    } catch (const Error& e) {
      if (e.code() == Errc::ConfigViolation) return std::numeric_limits<double>::infinity();
      throw;
    }
  };
  const double combos = std::pow(static_cast<double>(radii.size()), nb);
  if (combos <= 256) {
    std::vector<std::size_t> pick(static_cast<std::size_t>(nb), 0);
    for (;;) {
      std::vector<double> r;
      for (std::size_t x : pick) r.push_back(radii[x]);
      const double s = score(r);
      if (s < best) best = s, best_r = r;
      std::size_t d = 0;
      while (d < pick.size() && ++pick[d] == radii.size()) pick[d++] = 0;
      if (d == pick.size()) break;
    }
  } else {
    std::vector<double> r(static_cast<std::size_t>(nb), *std::min_element(radii.begin(), radii.end()));
    for (int sweep = 0; sweep < 2; ++sweep)
      for (int b = 0; b < nb; ++b)
        for (double x : radii) {
          std::vector<double> t = r;
          t[static_cast<std::size_t>(b)] = x;
          const double s = score(t);
          if (s < best) best = s, best_r = t, r = t;
        }
  }
  if (best_r.empty()) throw Error(Errc::NoCandidate, "no admissible radii for the fitted centres");
  for (int b = 0; b < nb; ++b) cfg.balls[static_cast<std::size_t>(b)].radius = best_r[static_cast<std::size_t>(b)];
  return cfg;
}

// ---- unstable fields -----------------------------------------------------------------------------

namespace {

// Band of the closed-form sphere energy A / (1 + g^2 |s|^2) over the unit ball, A = 4 pi R^2.
std::pair<double, double> sphere_band(double A, double g) {
  const double x = g * g;
  const double lo = -2 * A * x;
  // the radial eigenvalue increases up to x |s|^2 = 1
  const double q = std::min(1.0, 1 / x);
  const double hi = 2 * A * x * (3 * x * q - 1) / std::pow(1 + x * q, 3);
  return {lo, hi};
}

double band_c0_of(double A, double g) {
  const auto [lo, hi] = sphere_band(A, g);
  if (!(hi < 0)) return 0.0;
  return std::min(-1 / (2 * lo), -hi / 2);
}

}  // namespace

SphereBasis great_sphere_basis(const SphereMap& v, int k) {
  if (!v.is_great_sphere()) throw Error(Errc::BadInput, "closed-form fields need a great sphere");
  if (k < 0) throw Error(Errc::BadInput, "negative basis size");
  const int N = v.target().ambient_dim();
  if (k > N - 3) {
    std::ostringstream os;
    os << "a great sphere in S^" << N - 1 << " has " << N - 3 << " normal directions, " << k << " requested";
    throw Error(Errc::InsufficientIndex, os.str());
  }
  // normals: standard basis vectors orthogonalized against the frame
  std::vector<Point> normals;
  std::vector<Point> span{v.frame().col(0), v.frame().col(1), v.frame().col(2)};
  for (int e = 0; e < N && static_cast<int>(normals.size()) < k; ++e) {
    Point x = Point::Zero(N);
    x(e) = 1;
    for (const Point& s : span) x -= x.dot(s) * s;
    if (x.norm() < 1e-6) continue;
    x /= x.norm();
    span.push_back(x);
    normals.push_back(x);
  }
  const double R = v.radius(), A = 4 * kPi * R * R;
  // maximize c0 over g = gamma / R; c0 vanishes past g^2 = 1/3
  double lo = 1e-4, hi = 1 / std::sqrt(3.0);
  for (int it = 0; it < 200; ++it) {
    const double a = lo + (hi - lo) * 0.381966, b = hi - (hi - lo) * 0.381966;
    (band_c0_of(A, a) < band_c0_of(A, b) ? lo : hi) = (band_c0_of(A, a) < band_c0_of(A, b) ? a : b);
  }
  const double g = 0.5 * (lo + hi);
  SphereBasis out;
  out.gamma = g * R;
  out.c0 = band_c0_of(A, g);
  for (const Point& n : normals) {
    const Point x = out.gamma * n;
    out.fields.push_back([x](Homog) { return x; });
  }
  return out;
}

namespace {

// Section values of `x` (on body's grid) read at lattice coordinates shifted by (sa, sb) on u's grid.
std::vector<double> carry_section(const TorusMap& body, const Section& x, const TorusMap& u, double sa, double sb) {
  const int N = u.ambient_dim();
  if (sa == 0.0 && sb == 0.0 && body.same_grid(u)) return std::vector<double>(x.data().begin(), x.data().end());
  std::vector<double> out(u.data().size());
  for (int i = 0; i < u.na(); ++i)
    for (int j = 0; j < u.nb(); ++j) {
      const double a = (static_cast<double>(i) / u.na() + sa) * body.na(), b = (static_cast<double>(j) / u.nb() + sb) * body.nb();
      const double fa = std::floor(a), fb = std::floor(b), ta = a - fa, tb = b - fb;
      const int i0 = static_cast<int>(fa), j0 = static_cast<int>(fb);
      auto at = [&](int p, int q) { return x.value(body.geometry_index(p, q)); };
      Point v = (1 - ta) * (1 - tb) * at(i0, j0);
      if (ta != 0.0) v += ta * (1 - tb) * at(i0 + 1, j0);
      if (tb != 0.0) v += (1 - ta) * tb * at(i0, j0 + 1);
      if (ta != 0.0 && tb != 0.0) v += ta * tb * at(i0 + 1, j0 + 1);
      std::copy(v.data(), v.data() + N, out.data() + static_cast<std::size_t>(u.geometry_index(i, j)) * N);
    }
  return out;
}

}  // namespace

std::vector<Section> transplanted_fields(const TorusMap& u, const BubbleCollection& coll, const BubbleConfig& cfg,
                                         const TransplantBases& bases, const TransplantOptions& opts) {
  const LatticeGeometry g = u.geometry();
  validate_config(g, coll, cfg);
  if (!bases.spheres.empty() && bases.spheres.size() != coll.spheres().size())
    throw Error(Errc::BadInput, "one sphere basis per sphere");
  const int N = u.ambient_dim();
  const std::size_t nballs = cfg.balls.size();
  std::vector<CutoffProfile> eta;
  for (const Ball& b : cfg.balls) eta.emplace_back(b.radius);
  // product of the ball cutoffs at every node
  std::vector<double> body_cut(static_cast<std::size_t>(u.node_count()), 1.0);
  std::vector<Complex> zeta(static_cast<std::size_t>(u.node_count()) * nballs);
  for (int i = 0; i < g.na; ++i)
    for (int j = 0; j < g.nb; ++j) {
      const int n = g.index(i, j);
      for (std::size_t k = 0; k < nballs; ++k) {
        const Complex o = torus_offset(g, node_position(g, i, j), cfg.balls[k].center);
        zeta[static_cast<std::size_t>(n) * nballs + k] = o;
        body_cut[n] *= eta[k](std::abs(o));
      }
    }

  std::vector<Section> out;
  if (!coll.body_degenerate()) {
    for (const Section& x : bases.body.sections) {
      std::vector<double> v = carry_section(coll.body(), x, u, cfg.shift_a, cfg.shift_b);
      for (int n = 0; n < u.node_count(); ++n)
        if (body_cut[n] != 1.0)
          for (int c = 0; c < N; ++c) v[static_cast<std::size_t>(n) * N + c] *= body_cut[n];
      out.emplace_back(u, std::move(v), Flavor::Ambient);
    }
  } else if (!bases.spheres.empty()) {
    const Mobius& m = cfg.maps.front();
    const double Y = 0.5 * g.tau.imag(), ramp = opts.end_ramp * Y;
    for (const auto& f : bases.spheres.front().fields) {
      std::vector<double> v(u.data().size(), 0.0);
      for (int i = 0; i < g.na; ++i)
        for (int j = 0; j < g.nb; ++j) {
          const int n = g.index(i, j);
          const Complex z = strip_position(g, i, j);
          const double end = std::clamp((Y - std::abs(z.imag())) / ramp, 0.0, 1.0);
          const double c = end * body_cut[n];
          if (c == 0.0) continue;
          const Point x = c * f(m.apply(cylinder_xi(z)));
          std::copy(x.data(), x.data() + N, v.data() + static_cast<std::size_t>(n) * N);
        }
      out.emplace_back(u, std::move(v), Flavor::Ambient);
    }
  }

  const auto nested = nested_balls(g, cfg);
  for (std::size_t k = 0; k < nballs && !bases.spheres.empty(); ++k) {
    const auto s = static_cast<std::size_t>(coll.sphere_of_bubble(static_cast<int>(k)));
    const Mobius& m = cfg.maps[s];
    for (const auto& f : bases.spheres[s].fields) {
      std::vector<double> v(u.data().size(), 0.0);
      for (int n = 0; n < u.node_count(); ++n) {
        const Complex o = zeta[static_cast<std::size_t>(n) * nballs + k];
        double c = 1 - eta[k](std::abs(o));
        for (int l : nested[k]) c *= eta[static_cast<std::size_t>(l)](std::abs(zeta[static_cast<std::size_t>(n) * nballs + l]));
        if (c == 0.0) continue;
        const Point x = c * f(m.apply(o));
        std::copy(x.data(), x.data() + N, v.data() + static_cast<std::size_t>(n) * N);
      }
      out.emplace_back(u, std::move(v), Flavor::Ambient);
    }
  }
  return out;
}

std::vector<std::vector<double>> ball_sample_set(int k, int count) {
  std::vector<std::vector<double>> out = ball_samples(k);
  static constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};
  if (k < 1 || k > static_cast<int>(std::size(kPrimes))) return out;
  auto halton = [](int index, int base) {
    double f = 1, r = 0;
    for (int i = index; i > 0; i /= base) {
      f /= base;
      r += f * (i % base);
    }
    return r;
  };
  for (int index = 1; static_cast<int>(out.size()) < count; ++index) {
    std::vector<double> s(static_cast<std::size_t>(k));
    double norm2 = 0;
    for (int d = 0; d < k; ++d) {
      s[static_cast<std::size_t>(d)] = 2 * halton(index, kPrimes[d]) - 1;
      norm2 += s[static_cast<std::size_t>(d)] * s[static_cast<std::size_t>(d)];
    }
    if (norm2 <= 1) out.push_back(std::move(s));
  }
  return out;
}

double SurrogatePack::energy(std::span<const double> s) const { return tmxl::energy(perturbed(s)); }

Eigen::VectorXd SurrogatePack::gradient(std::span<const double> s, double h) const {
  Eigen::VectorXd gr(k);
  std::vector<double> c(s.begin(), s.end());
  for (int i = 0; i < k; ++i) {
    const double keep = c[static_cast<std::size_t>(i)];
    c[static_cast<std::size_t>(i)] = keep + h;
    const double ep = energy(c);
    c[static_cast<std::size_t>(i)] = keep - h;
    const double em = energy(c);
    c[static_cast<std::size_t>(i)] = keep;
    gr(i) = (ep - em) / (2 * h);
  }
  return gr;
}

TorusMap SurrogatePack::perturbed(std::span<const double> s) const { return perturb(base, fields, s); }

SurrogatePack transplant(const TorusMap& u, const BubbleCollection& coll, const BubbleConfig& cfg,
                         const TransplantBases& bases, const TransplantOptions& opts) {
  const double d = bubble_defect(u, coll, cfg);
  if (!(d < opts.eps_unstable)) {
    std::ostringstream os;
    os << "bubble defect " << d << " is not below " << opts.eps_unstable;
    throw Error(Errc::DefectTooLarge, os.str());
  }
  SurrogatePack pack{u, transplanted_fields(u, coll, cfg, bases, opts), 0, 1.0, Eigen::VectorXd(), 0.0, 0.0, 0.0};
  pack.k = static_cast<int>(pack.fields.size());
  pack.m = Eigen::VectorXd::Zero(pack.k);
  if (pack.k == 0) {
    pack.E_at_m = energy(u);
    return pack;
  }
  double c0 = std::numeric_limits<double>::infinity();
  if (!bases.body.sections.empty()) c0 = std::min(c0, bases.body.c0);
  for (const SphereBasis& b : bases.spheres)
    if (!b.fields.empty()) c0 = std::min(c0, b.c0);
  pack.c0 = c0;

  // concavity band at the sample points
  pack.worst_lower = std::numeric_limits<double>::infinity();
  pack.worst_upper = -std::numeric_limits<double>::infinity();
  const auto samples = ball_sample_set(pack.k, opts.samples);
  for (const auto& s : samples) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(energy_hessian(u, pack.fields, s, opts.fd_step),
                                                      Eigen::EigenvaluesOnly);
    pack.worst_lower = std::min(pack.worst_lower, es.eigenvalues().minCoeff());
    pack.worst_upper = std::max(pack.worst_upper, es.eigenvalues().maxCoeff());
  }
  if (!(pack.worst_lower >= -1 / c0 && pack.worst_upper <= -c0)) {
    std::ostringstream os;
    os << "surrogate Hessian eigenvalues span [" << pack.worst_lower << ", " << pack.worst_upper << "], outside [" << -1 / c0
       << ", " << -c0 << "]";
    throw Error(Errc::ConcavityFailure, os.str());
  }

  // maximizer by Newton steps on the concave surrogate
  Eigen::VectorXd m = Eigen::VectorXd::Zero(pack.k);
  double Em = energy(u);
  for (int it = 0; it < 50; ++it) {
    const std::vector<double> sv(m.data(), m.data() + m.size());
    const Eigen::VectorXd gr = pack.gradient(sv, 1e-4);
    const Eigen::MatrixXd H = energy_hessian(u, pack.fields, sv, opts.fd_step);
    Eigen::VectorXd step = -H.ldlt().solve(gr);
    double t = 1;
    bool moved = false;
    for (int back = 0; back < 30; ++back, t *= 0.5) {
      const Eigen::VectorXd trial = m + t * step;
      const double Et = pack.energy(std::vector<double>(trial.data(), trial.data() + trial.size()));
      if (Et >= Em) {
        moved = Et > Em;
        m = trial;
        Em = Et;
        break;
      }
    }
    if (!moved || (t * step).norm() < 1e-10) break;
  }
  pack.m = m;
  pack.E_at_m = Em;
  if (!(m.norm() <= c0 / std::sqrt(10.0))) {
    std::ostringstream os;
    os << "surrogate maximizer at |m| = " << m.norm() << ", beyond " << c0 / std::sqrt(10.0);
    throw Error(Errc::ConcavityFailure, os.str());
  }
  // quadratic envelope E(m) - E(s) >= c0 / 2 |s - m|^2
  const double tol = opts.envelope_tol * std::max(1.0, Em);
  for (const auto& s : samples) {
    const Eigen::Map<const Eigen::VectorXd> sv(s.data(), static_cast<Eigen::Index>(s.size()));
    const double gap = Em - pack.energy(s) - 0.5 * c0 * (sv - m).squaredNorm();
    if (gap < -tol) {
      std::ostringstream os;
      os << "surrogate envelope violated by " << -gap;
      throw Error(Errc::ConcavityFailure, os.str());
    }
  }
  return pack;
}

Separation separation_check(const BubbleCollection& coll, const BubbleConfig& cfg, const SurrogatePack& pack,
                            std::span<const double> s, double nu) {
  const TorusMap up = pack.perturbed(s);
  Separation out;
  out.energy_excess = energy(up) - energy(pack.base);
  out.defect = bubble_defect(up, coll, cfg);
  out.low_energy = out.energy_excess <= nu;
  out.separated = out.defect > nu;
  return out;
}

// ---- JSON ----------------------------------------------------------------------------------------

namespace {

Json point_to_json(const Point& p) { return Json(std::vector<double>(p.data(), p.data() + p.size())); }

Point point_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  Point p(static_cast<int>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) p(static_cast<int>(k)) = v[k];
  return p;
}

std::string doubles_to_base64(std::span<const double> v) {
  std::vector<unsigned char> bytes(v.size() * sizeof(double));
  std::memcpy(bytes.data(), v.data(), bytes.size());
  return base64_encode(bytes);
}

std::vector<double> doubles_from_base64(const std::string& s) {
  const auto bytes = base64_decode(s);
  if (bytes.size() % sizeof(double)) throw Error(Errc::BadInput, "chart block is not a whole number of doubles");
  std::vector<double> v(bytes.size() / sizeof(double));
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

Json mobius_to_json(const Mobius& m) {
  return {complex_to_json(m.a()), complex_to_json(m.b()), complex_to_json(m.c()), complex_to_json(m.d())};
}

Mobius mobius_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(Errc::BadInput, "Mobius map needs [a, b, c, d]");
  return Mobius::normalized(complex_from_json(j[0]), complex_from_json(j[1]), complex_from_json(j[2]),
                            complex_from_json(j[3]));
}

}  // namespace

Json sphere_to_json(const SphereMap& v) {
  Json j;
  j["target"] = target_to_json(v.target());
  j["grid"] = {{"cols", v.grid().cols}, {"extent", v.grid().extent}, {"overlap_rows", v.grid().overlap_rows}};
  if (v.is_great_sphere()) {
    j["kind"] = "great_sphere";
    j["frame"] = {point_to_json(v.frame().col(0)), point_to_json(v.frame().col(1)), point_to_json(v.frame().col(2))};
  } else {
    j["kind"] = "charts";
    j["zero_chart"] = doubles_to_base64(v.chart(0));
    j["inf_chart"] = doubles_to_base64(v.chart(1));
    j["value_at_zero"] = point_to_json(v.pole_value(0));
    j["value_at_inf"] = point_to_json(v.pole_value(1));
  }
  return j;
}

SphereMap sphere_from_json(const Json& j) {
  try {
    const Target t = target_from_json(j.at("target"));
    SphereMap::Grid grid;
    grid.cols = j.at("grid").at("cols").get<int>();
    grid.extent = j.at("grid").at("extent").get<double>();
    grid.overlap_rows = j.at("grid").at("overlap_rows").get<int>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "great_sphere") {
      const Json& f = j.at("frame");
      return SphereMap::great_sphere(t, point_from_json(f.at(0)), point_from_json(f.at(1)), point_from_json(f.at(2)), grid);
    }
    if (kind == "charts")
      return SphereMap::from_charts(t, grid, doubles_from_base64(j.at("zero_chart").get<std::string>()),
                                    doubles_from_base64(j.at("inf_chart").get<std::string>()),
                                    point_from_json(j.at("value_at_zero")), point_from_json(j.at("value_at_inf")));
    throw Error(Errc::BadInput, "unknown sphere kind " + kind);
  } catch (const Json::exception& e) {
    throw Error(Errc::BadInput, std::string("malformed sphere: ") + e.what());
  }
}

Json config_to_json(const BubbleConfig& cfg) {
  Json j;
  j["balls"] = Json::array();
  for (const Ball& b : cfg.balls) j["balls"].push_back({{"center", complex_to_json(b.center)}, {"radius", b.radius}});
  j["shift"] = {cfg.shift_a, cfg.shift_b};
  j["maps"] = Json::array();
  for (const Mobius& m : cfg.maps) j["maps"].push_back(mobius_to_json(m));
  return j;
}

BubbleConfig config_from_json(const Json& j) {
  try {
    BubbleConfig cfg;
    for (const Json& b : j.at("balls")) cfg.balls.push_back({complex_from_json(b.at("center")), b.at("radius").get<double>()});
    if (j.contains("shift")) {
      cfg.shift_a = j["shift"].at(0).get<double>();
      cfg.shift_b = j["shift"].at(1).get<double>();
    }
    for (const Json& m : j.at("maps")) cfg.maps.push_back(mobius_from_json(m));
    return cfg;
  } catch (const Json::exception& e) {
    throw Error(Errc::BadInput, std::string("malformed bubble config: ") + e.what());
  }
}

void save_collection(const BubbleCollection& coll, const std::filesystem::path& path) {
  Json j;
  j["version"] = 1;
  j["spheres"] = Json::array();
  for (const SphereMap& v : coll.spheres()) j["spheres"].push_back(sphere_to_json(v));
  if (coll.body_degenerate()) {
    j["body"] = nullptr;
  } else {
    const std::filesystem::path body = path.stem().string() + "_body.json";
    save_map(coll.body(), path.parent_path() / body);
    j["body"] = body.string();
  }
  write_json_file(path, j);
}

BubbleCollection load_collection(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  try {
    std::vector<SphereMap> spheres;
    for (const Json& s : j.at("spheres")) spheres.push_back(sphere_from_json(s));
    if (j.at("body").is_null()) return BubbleCollection::degenerate(std::move(spheres));
    return BubbleCollection::with_body(load_map(path.parent_path() / j["body"].get<std::string>()), std::move(spheres));
  } catch (const Json::exception& e) {
    throw Error(Errc::BadInput, std::string("malformed collection: ") + e.what());
  }
}

}  // namespace tmxl
