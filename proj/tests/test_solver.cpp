#include "support.hpp"
#include "tmxl/solver.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <optional>

using namespace tmxl;
using namespace tmxl::testing;

namespace {

const double kTwoPiSq = 2 * kPi * kPi;

double discrete_clifford_energy(int n) {
  const double d = 2 * std::sin(kPi / n) * n;
  return 0.5 * d * d;
}

// Noise commuting with the half-period symmetries of the Clifford map: a shift by 1/2 in a
// pairs with flipping (x1, x2), a shift in b with flipping (x3, x4). The conformal fields
// e - <e, u> u that carry the index are odd under one of the two, so descent stays in the basin.
Section equivariant_noise(const TorusMap& u, std::mt19937_64& rng, double amplitude) {
  const Section y = smooth_random_section(u, rng, Flavor::Ambient, 3);
  const int h = u.na() / 2, k = u.nb() / 2;
  const Section x = Section::sample(u, Flavor::Ambient, [&](int i, int j) {
    Point s = Point::Zero(4);
    for (int p = 0; p < 2; ++p)
      for (int q = 0; q < 2; ++q) {
        Point v = y.value(u.geometry_index(i + p * h, j + q * k));
        if (p) v.head(2) *= -1;
        if (q) v.tail(2) *= -1;
        s += 0.25 * v;
      }
    return s;
  });
  const Section t = x.tangential_part(u);
  return t.scaled(amplitude / t.sup_norm());
}

TorusMap spiked_constant(int n, int i0, int j0, double angle) {
  const Target s2 = Target::round_sphere(1, 3);
  return TorusMap::sample(s2, Mark({0.1, 1.1}), n, n, [&](double a, double b) {
    const bool spike = std::lround(a * n) == i0 && std::lround(b * n) == j0;
    return spike ? vec({std::sin(angle), 0, std::cos(angle)}) : vec({0, 0, 1});
  });
}

std::optional<Errc> code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

Sweepout linear_sweepout(const TorusMap& mid, int count) {
  const Point p = vec({1, 0, 0, 0});
  std::vector<SweepSample> s;
  for (int k = 0; k < count; ++k) {
    const double t = static_cast<double>(k) / (count - 1), w = 1 - std::abs(2 * t - 1);
    std::vector<double> nodes(mid.data().size());
    for (int n = 0; n < mid.node_count(); ++n) {
      const Point x = ((1 - w) * p + w * Point(mid.node(n))).normalized();
      std::copy(x.data(), x.data() + 4, nodes.begin() + n * 4);
    }
    s.push_back({t, TorusMap(mid.target(), mid.mark(), mid.na(), mid.nb(), std::move(nodes))});
  }
  return Sweepout(std::move(s));
}

}  // namespace

TEST(Solve, HarmonicInputIsAFixedPoint) {
  const TorusMap u = clifford_map(64);
  const SolveResult r = solve_harmonic(u);
  EXPECT_LE(r.report.iterations, 1);
  EXPECT_TRUE(r.report.converged);
  EXPECT_NEAR(r.report.final_energy, energy(u), 1e-12);
}

TEST(Solve, ConstantMapTakesNoSteps) {
  const TorusMap u = TorusMap::constant(Target::clifford_product(1, 1), Mark({0.3, 0.9}), 16, 16, vec({1, 0, 0, 1}));
  const SolveResult r = solve_harmonic(u);
  EXPECT_EQ(r.report.iterations, 0);
  EXPECT_TRUE(r.report.converged);
  EXPECT_EQ(r.report.final_energy, 0.0);
}

TEST(Solve, NoisyCliffordReturnsToHarmonicEnergy) {
  std::mt19937_64 rng(21);
  const TorusMap c = clifford_map(64);
  const TorusMap u0 = perturb(c, equivariant_noise(c, rng, 1e-2), 1.0);
  ASSERT_GT(energy(u0), energy(c) + 1e-4);
  const SolveResult r = solve_harmonic(u0);
  ASSERT_TRUE(r.report.converged);
  EXPECT_LE(r.report.final_tension_norm, 1e-8);
  EXPECT_NEAR(r.report.final_energy, discrete_clifford_energy(64), 1e-8);
  EXPECT_LE(std::abs(r.report.final_energy - kTwoPiSq) / kTwoPiSq, 1e-3);
  for (std::size_t k = 1; k < r.energy_trace.size(); ++k)
    EXPECT_LE(r.energy_trace[k], r.energy_trace[k - 1] * (1 + 64 * 2.2e-16)) << "step " << k;
}

TEST(Solve, IterationBudgetReturnsBestIterate) {
  std::mt19937_64 rng(22);
  const TorusMap c = clifford_map(32);
  const TorusMap u0 = perturb(c, equivariant_noise(c, rng, 1e-2), 1.0);
  SolveOptions o;
  o.max_iters = 5;
  const SolveResult r = solve_harmonic(u0, o);
  EXPECT_FALSE(r.report.converged);
  EXPECT_EQ(r.report.iterations, 5);
  EXPECT_LT(r.report.final_energy, energy(u0));
  EXPECT_EQ(r.report.final_tension_norm, tension(r.map).sup_norm());
}

TEST(Replace, EmptyBallListLeavesMapUnchanged) {
  const TorusMap u = great_circle_map(16);
  const ReplaceResult r = harmonic_replace(u, {});
  EXPECT_EQ(std::memcmp(r.map.data().data(), u.data().data(), u.data().size_bytes()), 0);
}

TEST(Replace, HarmonicMapIsUnchanged) {
  const TorusMap u = clifford_map(64);
  const Ball b{{0.3, 0.4}, 0.4};
  ReplaceOptions o;
  o.energy_cap = 20;
  ASSERT_GT(nodes_in_ball(u.geometry(), {b.center, b.radius / 8}).size(), 20u);
  const ReplaceResult r = harmonic_replace(u, std::span<const Ball>(&b, 1), o);
  for (int n = 0; n < u.node_count(); ++n) EXPECT_LE((r.map.node(n) - u.node(n)).norm(), 1e-10);
}

TEST(Replace, SpikeIsSmoothedLocally) {
  const int n = 32;
  const TorusMap u = spiked_constant(n, 10, 12, 0.2);
  const LatticeGeometry g = u.geometry();
  const Ball b{g.position(10.0 / n, 12.0 / n), 0.4};
  const std::vector<int> inner = nodes_in_ball(g, {b.center, b.radius / 8});
  ASSERT_GE(inner.size(), 5u);
  const ReplaceResult r = harmonic_replace(u, std::span<const Ball>(&b, 1));
  EXPECT_LT(energy(r.map), 0.5 * energy(u));
  for (int k = 0; k < u.node_count(); ++k) {
    if (std::find(inner.begin(), inner.end(), k) != inner.end()) continue;
    EXPECT_EQ(std::memcmp(r.map.node(k).data(), u.node(k).data(), 3 * sizeof(double)), 0);
  }
  ASSERT_EQ(r.diagnostics.size(), 1u);
  EXPECT_LT(r.diagnostics[0].energy, 0.5);
}

TEST(Replace, ContractViolations) {
  const TorusMap u = clifford_map(32);
  const Ball overlap[2] = {{{0.1, 0.1}, 0.2}, {{0.3, 0.1}, 0.2}};
  EXPECT_EQ(code_of([&] { harmonic_replace(u, overlap); }), Errc::BallsOverlap);
  // wrap-around: centres 0.05 and 0.95 are 0.1 apart on the torus
  const Ball wrap[2] = {{{0.05, 0.5}, 0.06}, {{0.95, 0.5}, 0.06}};
  EXPECT_EQ(code_of([&] { harmonic_replace(u, wrap); }), Errc::BallsOverlap);
  const Ball big{{0.5, 0.5}, 0.3};
  EXPECT_EQ(code_of([&] { harmonic_replace(u, std::span<const Ball>(&big, 1)); }), Errc::EnergyCapExceeded);
}

TEST(Sweepout, EndpointsAndOrderingAreEnforced) {
  const TorusMap c = clifford_map(16);
  const TorusMap k = TorusMap::constant(c.target(), c.mark(), 16, 16, vec({1, 0, 0, 0}));
  EXPECT_NO_THROW(Sweepout({{0, k}, {0.5, c}, {1, great_circle_map(16)}}));
  EXPECT_THROW(Sweepout({{0, c}, {1, k}}), Error);
  EXPECT_THROW(Sweepout({{0, k}, {0, k}}), Error);
  EXPECT_THROW(Sweepout({{0, k}, {1.5, k}}), Error);
  EXPECT_NO_THROW(Sweepout({{0.5, c}}, Sweepout::Endpoints::Skip));
  EXPECT_EQ(code_of([] { Sweepout(std::vector<SweepSample>{}); }), Errc::EmptyInput);
}

TEST(Width, ConstantSweepoutsGiveZero) {
  const TorusMap k = TorusMap::constant(Target::round_sphere(1, 3), Mark({0, 1}), 8, 8, vec({0, 0, 1}));
  const Sweepout s({{0, k}, {0.5, k}, {1, k}});
  EXPECT_EQ(width_estimate(std::span<const Sweepout>(&s, 1)), 0.0);
  const TightenResult t = tighten(s, 2);
  EXPECT_EQ(t.round_max_energy, (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(code_of([] { width_estimate({}); }), Errc::EmptyInput);
}

TEST(Width, LinearSweepoutThroughClifford) {
  const TorusMap c = clifford_map(64);
  const Sweepout s = linear_sweepout(c, 9);
  const std::vector<double> e = s.energies();
  EXPECT_EQ(e.front(), 0.0);
  EXPECT_EQ(e[4], energy(c));
  const std::vector<Sweepout> both{s, linear_sweepout(c, 5)};
  const double w = width_estimate(std::span<const Sweepout>(both.data(), 1));
  EXPECT_EQ(w, *std::max_element(e.begin(), e.end()));
  EXPECT_GE(w, kTwoPiSq * (1 - 1e-3));
  // a strictly worse sweepout: same path on a stretched mark
  const Sweepout worse = linear_sweepout(c.with_mark(Mark({0, 2})), 9);
  const std::vector<Sweepout> pair{s, worse};
  EXPECT_GT(worse.max_energy(), w);
  EXPECT_EQ(width_estimate(pair), w);
}

TEST(Tighten, PerturbedCliffordDecreasesTowardHarmonicValue) {
  std::mt19937_64 rng(23);
  const TorusMap c = clifford_map(64);
  const TorusMap u0 = perturb(c, equivariant_noise(c, rng, 2e-2), 1.0);
  const double oracle = solve_harmonic(u0).report.final_energy;
  const Sweepout one({{0.5, u0}}, Sweepout::Endpoints::Skip);
  TightenOptions o;
  o.cover = 2;
  o.replace.energy_cap = 1e3;
  const TightenResult r1 = tighten(one, 1, o), r3 = tighten(one, 3, o);
  ASSERT_EQ(r3.round_max_energy.size(), 4u);
  EXPECT_LT(r3.round_max_energy.back(), r3.round_max_energy.front());
  for (std::size_t k = 1; k < r3.round_max_energy.size(); ++k) {
    EXPECT_LE(r3.round_max_energy[k], r3.round_max_energy[k - 1]);
    EXPECT_GE(r3.round_max_energy[k], oracle - 1e-9);
  }
  EXPECT_EQ(r1.round_max_energy[1], r3.round_max_energy[1]);
}

TEST(Sweepout, ManifestRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "tmxl_test_solver";
  std::filesystem::create_directories(dir);
  const Sweepout s = linear_sweepout(clifford_map(16), 5);
  save_sweepout(s, dir / "sw.json");
  const Sweepout back = load_sweepout(dir / "sw.json");
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    EXPECT_EQ(back.samples()[k].t, s.samples()[k].t);
    EXPECT_EQ(std::memcmp(back.samples()[k].map.data().data(), s.samples()[k].map.data().data(),
                          s.samples()[k].map.data().size_bytes()),
              0);
  }
}
