#include "tmxl/solver.hpp"

#include "tmxl/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

namespace tmxl {

double explicit_step(const LatticeGeometry& g) {
  const double na2 = static_cast<double>(g.na) * g.na, nb2 = static_cast<double>(g.nb) * g.nb;
  const double bound = (8 * g.alpha * na2 + 8 * g.gamma * nb2 + 4 * std::abs(g.beta) * g.na * g.nb) / g.tau.imag();
  return 1.9 / bound;
}

SolveResult solve_harmonic(const TorusMap& u0, const SolveOptions& opts) {
  const LatticeGeometry g = u0.geometry();
  const double eta0 = explicit_step(g);
  TorusMap u = u0;
  double e = energy(u);
  Section t = tension(u);
  double tn = t.sup_norm();
  TorusMap best = u;
  double best_tn = tn, best_e = e;
  double eta = eta0;
  int it = 0;
  std::vector<double> trace{e};
  while (tn > opts.tension_tol && it < opts.max_iters) {
    std::optional<TorusMap> next;
    double e_next = 0.0;
    for (;;) {
      if (eta < eta0 * 1e-12) throw Error(Errc::StepUnderflow, "descent step underflowed");
      try {
        TorusMap v = perturb(u, t, eta);
        e_next = energy(v);
        const double drop = opts.armijo * eta * t.inner(t, g);
        const double floor = opts.roundoff_floor * std::max(e, 1.0);
        if (e_next <= e - drop || (drop < floor && e_next <= e + floor)) {
          next.emplace(std::move(v));
          break;
        }
      } catch (const Error& err) {
        if (err.code() != Errc::LeftTube) throw;
      }
      eta *= 0.5;
    }
    u = std::move(*next);
    e = e_next;
    t = tension(u);
    tn = t.sup_norm();
    ++it;
    trace.push_back(e);
    eta = std::min(eta0, 2 * eta);
    if (tn < best_tn) {
      best = u;
      best_tn = tn;
      best_e = e;
    }
  }
  if (tn <= opts.tension_tol) return {std::move(u), {it, tn, e, true}, std::move(trace)};
  return {std::move(best), {it, best_tn, best_e, false}, std::move(trace)};
}

double torus_distance(const LatticeGeometry& g, Complex z, Complex w) {
  // lattice coordinates of the difference, reduced to [-1/2, 1/2)
  const Complex d = z - w;
  double b = d.imag() / g.tau.imag();
  double a = d.real() - b * g.tau.real();
  a -= std::floor(a + 0.5);
  b -= std::floor(b + 0.5);
  double best = std::numeric_limits<double>::infinity();
  for (int p = -2; p <= 2; ++p)
    for (int q = -2; q <= 2; ++q) best = std::min(best, std::abs(Complex(a + p) + (b + q) * g.tau));
  return best;
}

std::vector<int> nodes_in_ball(const LatticeGeometry& g, const Ball& ball) {
  std::vector<int> out;
  for (int i = 0; i < g.na; ++i)
    for (int j = 0; j < g.nb; ++j)
      if (torus_distance(g, g.position(static_cast<double>(i) / g.na, static_cast<double>(j) / g.nb), ball.center) <
          ball.radius)
        out.push_back(g.index(i, j));
  return out;
}

namespace {

std::vector<int> union_of_balls(const LatticeGeometry& g, std::span<const Ball> balls, double fraction) {
  std::set<int> nodes;
  for (const Ball& b : balls) {
    const auto in = nodes_in_ball(g, {b.center, b.radius * fraction});
    nodes.insert(in.begin(), in.end());
  }
  return {nodes.begin(), nodes.end()};
}

double local_energy(const LatticeGeometry& g, std::span<const double> values, int N, std::span<const int> nodes) {
  std::vector<double> d;
  d.reserve(nodes.size());
  for (int n : nodes) {
    const int i = n / g.nb, j = n % g.nb;
    auto at = [&](int p, int q) { return values.data() + static_cast<std::size_t>(g.index(p, q)) * N; };
    d.push_back(star_density(g, at(i, j), at(i + 1, j), at(i - 1, j), at(i, j + 1), at(i, j - 1), N));
  }
  return exact_sum(d);
}

}  // namespace

double ball_energy(const TorusMap& u, std::span<const Ball> balls) {
  return local_energy(u.geometry(), u.data(), u.ambient_dim(), union_of_balls(u.geometry(), balls, 1.0));
}

ReplaceResult harmonic_replace(const TorusMap& u, std::span<const Ball> balls, const ReplaceOptions& opts) {
  const LatticeGeometry g = u.geometry();
  for (const Ball& b : balls)
    if (!(b.radius > 0)) throw Error(Errc::BadRadius, "ball radius must be positive");
  for (std::size_t p = 0; p < balls.size(); ++p)
    for (std::size_t q = p + 1; q < balls.size(); ++q)
      if (torus_distance(g, balls[p].center, balls[q].center) < balls[p].radius + balls[q].radius)
        throw Error(Errc::BallsOverlap, "replacement balls must be disjoint");
  if (balls.empty()) return {u, {}};
  const double cap_energy = ball_energy(u, balls);
  if (cap_energy > opts.energy_cap) {
    std::ostringstream os;
    os << "energy on the balls " << cap_energy << " exceeds the cap " << opts.energy_cap;
    throw Error(Errc::EnergyCapExceeded, os.str());
  }

  const int N = u.ambient_dim();
  const Target& target = u.target();
  const std::vector<int> inner = union_of_balls(g, balls, 0.125);
  // densities that depend on inner nodes: the inner set and its four neighbours
  std::set<int> reach_set;
  for (int n : inner) {
    const int i = n / g.nb, j = n % g.nb;
    for (int m : {g.index(i, j), g.index(i + 1, j), g.index(i - 1, j), g.index(i, j + 1), g.index(i, j - 1)})
      reach_set.insert(m);
  }
  const std::vector<int> reach(reach_set.begin(), reach_set.end());

  std::vector<double> nodes(u.data().begin(), u.data().end());
  auto node_tension = [&](const std::vector<double>& v, std::vector<double>& out) {
    double sup = 0.0;
    for (std::size_t k = 0; k < inner.size(); ++k) {
      const int n = inner[k];
      double* o = out.data() + k * N;
      laplacian_at(g, v, N, n / g.nb, n % g.nb, o);
      Eigen::Map<Eigen::VectorXd> w(o, N);
      w = target.tangent_part(Eigen::Map<const Eigen::VectorXd>(v.data() + static_cast<std::size_t>(n) * N, N), w) /
          g.tau.imag();
      sup = std::max(sup, w.cwiseAbs().maxCoeff());
    }
    return sup;
  };
  auto energy_of = [&](const std::vector<double>& v) { return local_energy(g, v, N, reach); };

  const double eta0 = explicit_step(g);
  double eta = eta0;
  std::vector<double> t(inner.size() * N);
  double sup = inner.empty() ? 0.0 : node_tension(nodes, t);
  double e = energy_of(nodes);
  int it = 0;
  while (sup > opts.tension_tol) {
    if (++it > opts.max_iters) throw Error(Errc::NonConvergence, "harmonic replacement did not converge");
    double l2 = 0.0;
    for (double x : t) l2 += x * x;
    l2 *= g.cell * g.tau.imag();
    for (;;) {
      if (eta < eta0 * 1e-12) throw Error(Errc::NonConvergence, "replacement step underflowed");
      std::vector<double> trial = nodes;
      bool inside = true;
      for (std::size_t k = 0; k < inner.size() && inside; ++k) {
        Eigen::Map<Eigen::VectorXd> p(trial.data() + static_cast<std::size_t>(inner[k]) * N, N);
        p += eta * Eigen::Map<const Eigen::VectorXd>(t.data() + k * N, N);
        if (!(target.focal_depth(p) < target.tube_radius())) inside = false;
        else p = target.project_unchecked(p, nullptr);
      }
      if (inside) {
        const double en = energy_of(trial);
        const double drop = 1e-4 * eta * l2, floor = 64 * 2.2e-16 * std::max(e, 1.0);
        if (en <= e - drop || (drop < floor && en <= e)) {
          nodes = std::move(trial);
          e = en;
          break;
        }
        if (drop < floor) {
          sup = 0.0;  // at double resolution; nothing left to gain
          break;
        }
      }
      eta *= 0.5;
    }
    if (sup == 0.0) break;
    eta = std::min(eta0, 2 * eta);
    sup = node_tension(nodes, t);
  }

  TorusMap out = MapBuilder::trusted(target, u.mark(), u.na(), u.nb(), std::move(nodes));
  std::vector<BallDiagnostic> diag;
  const std::vector<double> density = energy_density(out);
  for (const Ball& b : balls) {
    const double eb = ball_energy(out, std::span<const Ball>(&b, 1));
    if (eb >= opts.smallness) continue;
    const double bb = b.center.imag() / g.tau.imag();
    const double aa = b.center.real() - bb * g.tau.real();
    const int n = g.index(static_cast<int>(std::lround(aa * g.na)), static_cast<int>(std::lround(bb * g.nb)));
    BallDiagnostic d;
    d.energy = eb;
    d.gradient_sq_at_center = 2 * density[static_cast<std::size_t>(n)] / (g.cell * g.tau.imag());
    d.bound = eb / opts.smallness / (b.radius * b.radius);
    d.holds = d.gradient_sq_at_center <= d.bound;
    diag.push_back(d);
  }
  return {std::move(out), std::move(diag)};
}

bool is_trivial_endpoint(const TorusMap& u, double threshold) { return energy(u) <= threshold || area(u) <= threshold; }

Sweepout::Sweepout(std::vector<SweepSample> samples, Endpoints policy) : samples_(std::move(samples)) {
  if (samples_.empty()) throw Error(Errc::EmptyInput, "sweepout needs at least one sample");
  for (std::size_t k = 0; k < samples_.size(); ++k) {
    const double t = samples_[k].t;
    if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::BadInput, "sweepout parameter outside [0, 1]");
    if (k > 0 && !(t > samples_[k - 1].t)) throw Error(Errc::BadInput, "sweepout parameters must increase");
    if (!(samples_[k].map.target() == samples_[0].map.target()))
      throw Error(Errc::BadInput, "sweepout samples must share the target");
  }
  if (policy == Endpoints::Enforce) {
    if (samples_.size() < 2) throw Error(Errc::BadInput, "sweepout needs both endpoints");
    if (!is_trivial_endpoint(samples_.front().map) || !is_trivial_endpoint(samples_.back().map))
      throw Error(Errc::BadInput, "sweepout endpoints must be constant or circle maps");
  }
}

std::vector<double> Sweepout::energies() const {
  std::vector<double> out(samples_.size());
  for (std::size_t k = 0; k < samples_.size(); ++k) out[k] = energy(samples_[k].map);
  return out;
}

double Sweepout::max_energy() const {
  const auto e = energies();
  return *std::max_element(e.begin(), e.end());
}

TightenResult tighten(const Sweepout& sw, int rounds, const TightenOptions& opts) {
  if (opts.cover < 1) throw Error(Errc::BadInput, "ball cover needs at least one ball");
  std::vector<SweepSample> samples = sw.samples();
  std::vector<double> e = sw.energies();
  std::vector<double> trace{*std::max_element(e.begin(), e.end())};
  for (int r = 0; r < rounds; ++r) {
    // Kronecker offsets move the cover across the torus from round to round
    const double sa = std::fmod(r * 0.6180339887498949, 1.0), sb = std::fmod(r * 0.4142135623730950, 1.0);
    const double top = trace.back();
    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < samples.size(); ++k)
      if (e[k] >= top - opts.slack) active.push_back(k);
    for (std::size_t k : active) {
      SweepSample& s = samples[k];
      const LatticeGeometry g = s.map.geometry();
      const int m = opts.cover;
      const double spacing =
          std::min({torus_distance(g, 0, g.position(1.0 / m, 0)), torus_distance(g, 0, g.position(0, 1.0 / m)),
                    torus_distance(g, 0, g.position(1.0 / m, 1.0 / m)),
                    torus_distance(g, 0, g.position(1.0 / m, -1.0 / m))});
      for (int p = 0; p < m; ++p)
        for (int q = 0; q < m; ++q) {
          const Ball ball{g.position((p + sa) / m, (q + sb) / m), 0.49 * spacing};
          if (ball_energy(s.map, std::span<const Ball>(&ball, 1)) > opts.replace.energy_cap) continue;
          s.map = harmonic_replace(s.map, std::span<const Ball>(&ball, 1), opts.replace).map;
        }
      e[k] = energy(s.map);
    }
    trace.push_back(*std::max_element(e.begin(), e.end()));
  }
  return {Sweepout(std::move(samples), Sweepout::Endpoints::Skip), std::move(trace)};
}

double width_estimate(std::span<const Sweepout> sweepouts) {
  if (sweepouts.empty()) throw Error(Errc::EmptyInput, "width needs at least one sweepout");
  double w = std::numeric_limits<double>::infinity();
  for (const Sweepout& s : sweepouts) w = std::min(w, s.max_energy());
  return w;
}

void save_sweepout(const Sweepout& sw, const std::filesystem::path& manifest) {
  Json j;
  j["version"] = 1;
  Json list = Json::array();
  const std::string stem = manifest.stem().string();
  for (std::size_t k = 0; k < sw.size(); ++k) {
    char name[64];
    std::snprintf(name, sizeof name, "_%04zu.json", k);
    const std::string file = stem + name;
    save_map(sw.samples()[k].map, manifest.parent_path() / file);
    list.push_back({{"t", sw.samples()[k].t}, {"map", file}});
  }
  j["samples"] = list;
  write_json_file(manifest, j);
}

Sweepout load_sweepout(const std::filesystem::path& manifest, Sweepout::Endpoints policy) {
  const Json j = read_json_file(manifest);
  try {
    std::vector<SweepSample> samples;
    for (const Json& s : j.at("samples"))
      samples.push_back({s.at("t").get<double>(), load_map(manifest.parent_path() / s.at("map").get<std::string>())});
    return Sweepout(std::move(samples), policy);
  } catch (const Json::exception& e) {
    throw Error(Errc::BadInput, manifest.string() + ": " + e.what());
  }
}

}  // namespace tmxl
