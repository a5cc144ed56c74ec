#include "tmxl/deform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace tmxl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::span<const double> view(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

FlowField flow_field(const SurrogatePack& pack, double h) {
  FlowField f;
  f.k = pack.k;
  f.energy = [&pack](std::span<const double> s) { return pack.energy(s); };
  f.gradient = [&pack, h](std::span<const double> s) { return pack.gradient(s, h); };
  return f;
}

FlowTrace ball_flow(const FlowField& f, std::span<const double> s0, double T, const FlowOptions& opts) {
  if (static_cast<int>(s0.size()) != f.k) throw Error(Errc::BadInput, "start point dimension differs from the field");
  if (!(T >= 0) || !std::isfinite(T)) throw Error(Errc::BadInput, "flow time must be finite and non-negative");
  Eigen::VectorXd s = Eigen::Map<const Eigen::VectorXd>(s0.data(), f.k);
  if (!(s.norm() <= 1 + 1e-12)) throw Error(Errc::BadInput, "start point lies outside the closed unit ball");

  auto field = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return -(1 - x.squaredNorm()) * f.gradient(view(x));
  };
  auto rk4 = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& k1, double h) -> Eigen::VectorXd {
    const Eigen::VectorXd k2 = field(x + 0.5 * h * k1);
    const Eigen::VectorXd k3 = field(x + 0.5 * h * k2);
    const Eigen::VectorXd k4 = field(x + h * k3);
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  };

  FlowTrace tr;
  double E = f.energy(view(s));
  tr.times.push_back(0.0);
  tr.states.push_back(s);
  tr.energies.push_back(E);
  double x = 0.0, h = std::min(opts.initial_step, opts.max_step);
  while (x < T) {
    const Eigen::VectorXd v = field(s);
    if (v.norm() <= opts.stationary_tol) {
      tr.times.push_back(T);
      tr.states.push_back(s);
      tr.energies.push_back(E);
      break;
    }
    const double hs = std::min(h, T - x);
    const Eigen::VectorXd full = rk4(s, v, hs);
    const Eigen::VectorXd half = rk4(s, v, 0.5 * hs);
    const Eigen::VectorXd two = rk4(half, field(half), 0.5 * hs);
    const double err = (two - full).norm();
    const double En = err <= opts.tol && two.norm() <= 1 + 1e-12 ? f.energy(view(two)) : kInf;
    if (!(En <= E)) {
      h = err > opts.tol ? hs * std::clamp(0.9 * std::pow(opts.tol / err, 0.2), 0.1, 0.5) : 0.5 * hs;
      if (h < opts.min_step) {
        std::ostringstream os;
        os << "step fell below " << opts.min_step << " at x = " << x;
        throw Error(Errc::StepUnderflow, os.str());
      }
      continue;
    }
    x = hs == T - x ? T : x + hs;
    s = two;
    E = En;
    tr.times.push_back(x);
    tr.states.push_back(s);
    tr.energies.push_back(E);
    const double grow = err > 0 ? std::clamp(0.9 * std::pow(opts.tol / err, 0.2), 1.0, 4.0) : 4.0;
    h = std::min(opts.max_step, hs * grow);
  }
  tr.terminal = s;
  return tr;
}

FlowTrace ball_flow(const SurrogatePack& pack, std::span<const double> s0, double T, const FlowOptions& opts) {
  return ball_flow(flow_field(pack), s0, T, opts);
}

DecreaseResult decrease_time(const FlowField& f, std::span<const double> s0, double target, const FlowOptions& opts,
                             const DecreaseSearch& search) {
  double T = search.T0;
  for (int j = 0; j <= search.max_doublings; ++j, T *= 2) {
    FlowTrace tr = ball_flow(f, s0, T, opts);
    if (tr.energies.back() < target) return {T, std::move(tr)};
  }
  std::ostringstream os;
  os << "energy stayed above " << target << " up to flow time " << T / 2;
  throw Error(Errc::NonConvergence, os.str());
}

BubbleConfig interpolate_config(const LatticeGeometry& g, const BubbleConfig& a, const BubbleConfig& b, double lambda) {
  if (a.balls.size() != b.balls.size() || a.maps.size() != b.maps.size())
    throw Error(Errc::InterpolationGap, "configs differ in their numbers of balls or maps");
  BubbleConfig out;
  for (std::size_t k = 0; k < a.balls.size(); ++k) {
    const Complex d = torus_offset(g, b.balls[k].center, a.balls[k].center);
    out.balls.push_back({a.balls[k].center + lambda * d, a.balls[k].radius + lambda * (b.balls[k].radius - a.balls[k].radius)});
  }
  auto wrapped = [](double d) { return d - std::round(d); };
  out.shift_a = a.shift_a + lambda * wrapped(b.shift_a - a.shift_a);
  out.shift_b = a.shift_b + lambda * wrapped(b.shift_b - a.shift_b);
  for (std::size_t k = 0; k < a.maps.size(); ++k) {
    const Mobius& p = a.maps[k];
    const Mobius& q = b.maps[k];
    // the matrix of q is determined up to sign; take the one nearer to p
    const double dot = (std::conj(p.a()) * q.a() + std::conj(p.b()) * q.b() + std::conj(p.c()) * q.c() +
                        std::conj(p.d()) * q.d()).real();
    const double sg = dot < 0 ? -1.0 : 1.0;
    auto mix = [&](Complex x, Complex y) { return (1 - lambda) * x + lambda * sg * y; };
    try {
      out.maps.emplace_back(mix(p.a(), q.a()), mix(p.b(), q.b()), mix(p.c(), q.c()), mix(p.d(), q.d()));
    } catch (const Error& e) {
      throw Error(Errc::InterpolationGap, std::string("blended Mobius map is degenerate: ") + e.what());
    }
  }
  return out;
}

namespace {

struct Fit {
  std::optional<BubbleConfig> config;
  double defect = kInf;
};

Fit fit_sample(const TorusMap& u, const BubbleCollection& coll, const FindOptions& find) {
  Fit out;
  try {
    BubbleConfig cfg = find_config(u, coll, find);
    out.defect = bubble_defect(u, coll, cfg);
    out.config = std::move(cfg);
  } catch (const Error& e) {
    if (e.code() != Errc::NoCandidate && e.code() != Errc::ConfigViolation && e.code() != Errc::ChartOverflow) throw;
  }
  return out;
}

}  // namespace

DeformPlan select_configs(const Sweepout& sw, const BubbleCollection& coll, double eps, const FindOptions& find) {
  if (!(eps > 0)) throw Error(Errc::BadInput, "eps must be positive");
  const auto& samples = sw.samples();
  const std::size_t n = samples.size();
  DeformPlan plan;
  plan.defects.assign(n, kInf);
  plan.configs.resize(n);
  plan.cutoff.assign(n, 0.0);
  plan.maximizers.resize(n);
  plan.targets.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    Fit f = fit_sample(samples[k].map, coll, find);
    const double d = f.defect;
    plan.defects[k] = d;
    if (!(d < eps)) continue;
    plan.configs[k] = std::move(f.config);
    plan.active.push_back(k);
    if (d < eps / 2) {
      plan.core.push_back(k);
      plan.cutoff[k] = 1.0;
    } else {
      plan.cutoff[k] = (eps - d) / (eps / 2);
    }
  }
  // adjacent active samples: the blended config must certify both neighbours
  for (std::size_t j = 0; j + 1 < plan.active.size(); ++j) {
    const std::size_t k = plan.active[j];
    if (plan.active[j + 1] != k + 1) continue;
    const TorusMap& u = samples[k].map;
    const TorusMap& w = samples[k + 1].map;
    std::ostringstream where;
    where << "between t = " << samples[k].t << " and t = " << samples[k + 1].t;
    const BubbleConfig mid = interpolate_config(u.geometry(), *plan.configs[k], *plan.configs[k + 1], 0.5);
    double du = kInf, dw = kInf;
    try {
      du = bubble_defect(u, coll, mid);
      dw = bubble_defect(w, coll, mid);
    } catch (const Error& e) {
      if (e.code() != Errc::ConfigViolation) throw;
      throw Error(Errc::InterpolationGap, "blended config is inadmissible " + where.str() + ": " + e.what());
    }
    if (!(du < eps && dw < eps)) {
      std::ostringstream os;
      os << "blended config has defects " << du << " and " << dw << " (eps " << eps << ") " << where.str();
      throw Error(Errc::InterpolationGap, os.str());
    }
  }
  return plan;
}

int total_index(const TransplantBases& bases) {
  int k = static_cast<int>(bases.body.sections.size());
  for (const SphereBasis& b : bases.spheres) k += static_cast<int>(b.fields.size());
  return k;
}

namespace {

Eigen::VectorXd circle_point(int k, double radius, double t, double phase) {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(k);
  h(0) = radius * std::cos(2 * kPi * t + phase);
  h(1) = radius * std::sin(2 * kPi * t + phase);
  return h;
}

double min_distance(const Sweepout& sw, const DeformPlan& plan, int k, double phase) {
  double d = kInf;
  for (std::size_t j : plan.active)
    d = std::min(d, (circle_point(k, plan.circle_radius, sw.samples()[j].t, phase) - plan.maximizers[j]).norm());
  return d;
}

}  // namespace

DeformResult deform_sweepout(const Sweepout& sw, const BubbleCollection& coll, const TransplantBases& bases, double eps,
                             int l, const DeformOptions& opts) {
  const int k = total_index(bases);
  if (k <= 1) {
    std::ostringstream os;
    os << "total index " << k << " leaves no room to avoid the maximizers; at least 2 is needed";
    throw Error(Errc::IndexTooLow, os.str());
  }
  if (l < 0) throw Error(Errc::BadInput, "level l must be non-negative");
  DeformPlan plan = select_configs(sw, coll, eps, opts.find);
  DeformReport report;
  report.max_energy_before = sw.max_energy();
  std::vector<SweepSample> out = sw.samples();
  report.defects_after = plan.defects;
  if (plan.active.empty()) {
    report.max_energy_after = report.max_energy_before;
    report.min_defect_after = *std::min_element(plan.defects.begin(), plan.defects.end());
    report.eps_bar_est = opts.separation_C * eps / 10;
    return {Sweepout(std::move(out)), std::move(plan), std::move(report)};
  }

  std::vector<std::optional<SurrogatePack>> packs(out.size());
  for (std::size_t j : plan.active) {
    packs[j] = transplant(out[j].map, coll, *plan.configs[j], bases, opts.transplant);
    plan.maximizers[j] = packs[j]->m;
  }

  // circle of radius 2^-(l+1) in the first two coordinates, phased away from the maximizers
  plan.circle_radius = std::ldexp(1.0, -(l + 1));
  constexpr int kPhases = 720;
  double best = -1;
  for (int p = 0; p < kPhases; ++p) {
    const double phase = 2 * kPi * p / kPhases;
    const double d = min_distance(sw, plan, k, phase);
    if (d > best) best = d, plan.circle_phase = phase;
  }
  if (!(best > 0)) throw Error(Errc::NoCandidate, "every circle phase meets a maximizer");
  plan.kappa = 0.5 * best;
  for (std::size_t j : plan.active) plan.targets[j] = circle_point(k, plan.circle_radius, out[j].t, plan.circle_phase);

  // flow time: the doubling search on every fully cut-in sample, then the largest
  std::vector<std::optional<DecreaseResult>> searched(out.size());
  double T = opts.search.T0;
  for (std::size_t j : plan.core) {
    const SurrogatePack& pack = *packs[j];
    searched[j] = decrease_time(flow_field(pack), view(plan.targets[j]), energy(out[j].map) - pack.c0 / 10, opts.flow,
                                opts.search);
    T = std::max(T, searched[j]->T);
  }
  plan.flow_time = T;

  double separated = kInf;
  for (std::size_t j : plan.active) {
    const SurrogatePack& pack = *packs[j];
    const double c = plan.cutoff[j];
    Eigen::VectorXd end;
    if (searched[j] && searched[j]->T == T) {
      end = searched[j]->trace.terminal;
    } else {
      const Eigen::VectorXd s0 = c * plan.targets[j];
      end = ball_flow(pack, view(s0), c * T, opts.flow).terminal;
    }
    out[j].map = pack.perturbed(view(end));
    report.defects_after[j] = fit_sample(out[j].map, coll, opts.find).defect;
    if (c == 1.0) separated = std::min(separated, report.defects_after[j]);
  }

  Sweepout result(std::move(out));
  report.max_energy_after = result.max_energy();
  report.min_defect_after = *std::min_element(report.defects_after.begin(), report.defects_after.end());
  report.flow_time = T;
  report.kappa = plan.kappa;
  report.eps_bar_est = std::min(opts.separation_C * eps / 10, separated);
  return {std::move(result), std::move(plan), std::move(report)};
}

bool homotopy_check(const Sweepout& a, const Sweepout& b) {
  if (a.size() != b.size()) throw Error(Errc::BadInput, "sweepouts have different sample counts");
  for (std::size_t k = 0; k < a.size(); ++k) {
    const SweepSample& x = a.samples()[k];
    const SweepSample& y = b.samples()[k];
    if (x.t != y.t || !x.map.same_grid(y.map)) throw Error(Errc::BadInput, "sweepouts are sampled on different grids");
  }
  auto equal = [](const TorusMap& u, const TorusMap& v) { return std::ranges::equal(u.data(), v.data()); };
  if (!equal(a.samples().front().map, b.samples().front().map) || !equal(a.samples().back().map, b.samples().back().map))
    return false;

  constexpr int kSteps = 64;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const TorusMap& u = a.samples()[k].map;
    const TorusMap& v = b.samples()[k].map;
    const Target& target = u.target();
    const double tube = target.tube_radius();
    for (int n = 0; n < u.node_count(); ++n) {
      const Point x = u.node(n), y = v.node(n);
      if (x == y) continue;
      const Point d = y - x;
      // grid of the segment plus its point nearest the origin
      const double near = std::clamp(-x.dot(d) / d.squaredNorm(), 0.0, 1.0);
      for (int i = 0; i <= kSteps + 1; ++i) {
        const double lambda = i <= kSteps ? static_cast<double>(i) / kSteps : near;
        const double depth = target.focal_depth(x + lambda * d);
        if (!(depth < tube)) {
          std::ostringstream os;
          os << "segment leaves the tube at t = " << a.samples()[k].t << ", node " << n << " (depth " << depth
             << " >= " << tube << ")";
          throw Error(Errc::TubeEscape, os.str());
        }
      }
    }
  }
  return true;
}

Json deform_report_to_json(const DeformReport& r) {
  Json defects = Json::array();
  for (double d : r.defects_after) defects.push_back(std::isfinite(d) ? Json(d) : Json(nullptr));
  return Json{{"max_energy_before", r.max_energy_before},
              {"max_energy_after", r.max_energy_after},
              {"min_defect_after", std::isfinite(r.min_defect_after) ? Json(r.min_defect_after) : Json(nullptr)},
              {"flow_time", r.flow_time},
              {"eps_bar_est", r.eps_bar_est},
              {"kappa", r.kappa},
              {"defects_after", defects}};
}

}  // namespace tmxl
