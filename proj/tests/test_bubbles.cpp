#include "oracles.hpp"
#include "support.hpp"
#include "tmxl/bubbles.hpp"
#include "tmxl/fixtures.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <optional>

using namespace tmxl;
using namespace tmxl::testing;

namespace {

std::optional<Errc> code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

SphereMap equator_sphere() {
  return SphereMap::great_sphere(Target::round_sphere(1, 4), vec({1, 0, 0, 0}), vec({0, 1, 0, 0}),
                                 vec({0, 0, 1, 0}));
}

}  // namespace

// ---- cutoff --------------------------------------------------------------------------------------

TEST(Cutoff, EndpointValuesAreExact) {
  for (double r : {std::exp(-2 * kPi), 0.1, 0.01, 0.5}) {
    const CutoffProfile eta = cutoff_profile(r);
    EXPECT_EQ(eta(r * r), 0.0);
    EXPECT_EQ(eta(r), 1.0);
    EXPECT_EQ(eta(0.5 * r * r), 0.0);
    EXPECT_EQ(eta(std::min(1.0, 2 * r)), 1.0);
  }
}

TEST(Cutoff, RejectsRadiiOutsideTheUnitInterval) {
  for (double r : {0.0, 1.0, -0.3, 1.5, std::nan("")}) EXPECT_EQ(code_of([&] { cutoff_profile(r); }), Errc::BadRadius);
}

TEST(Cutoff, AnalyticEnergyAndMonotonicity) {
  EXPECT_NEAR(cutoff_profile(std::exp(-2 * kPi)).gradient_sq(), 1.0, 1e-15);
  double last = 0;
  for (double r : {0.001, 0.01, 0.1, 0.5}) {
    const double e = cutoff_profile(r).gradient_sq();
    EXPECT_GT(e, last);
    last = e;
  }
}

TEST(Cutoff, DiscreteEnergyMatchesRadialQuadrature) {
  for (double r : {std::exp(-2 * kPi), 0.1, 0.01}) {
    const double want = oracle::radial_cutoff(r);
    EXPECT_NEAR(want, 2 * kPi / std::abs(std::log(r)), 1e-9);
    const CutoffProfile eta = cutoff_profile(r);
    const double discrete = polar_gradient_sq([&](double rho, double) { return eta(rho); }, 0.5 * r * r, 2 * r, 512, 512);
    EXPECT_NEAR(discrete / want, 1.0, 0.02);
  }
}

TEST(Cutoff, PolarQuadratureOfAnAngularMode) {
  // f = rho cos(theta) = x on the annulus: int |grad f|^2 = pi (rout^2 - rin^2)
  const double v = polar_gradient_sq([](double rho, double th) { return rho * std::cos(th); }, 0.2, 1.0, 400, 400);
  EXPECT_NEAR(v, kPi * 0.96, 1e-3);
}

// ---- Mobius maps and spheres ---------------------------------------------------------------------

TEST(Mobius, NormalizesAndComposes) {
  const Mobius m(Complex(2, 1), Complex(0.5, 0), Complex(0.1, -0.2), Complex(1, 1));
  EXPECT_NEAR(std::abs(m.a() * m.d() - m.b() * m.c() - 1.0), 0.0, 1e-14);
  const Complex z(0.3, -0.7);
  const Homog w = m.apply(z);
  const Homog back = m.inverse().apply(w);
  EXPECT_NEAR(std::abs(back.p / back.q - z), 0.0, 1e-13);
  const Mobius k = Mobius::affine(Complex(0, 2), Complex(1, 0));
  const Homog mk = m.compose(k).apply(z), seq = m.apply(k.apply(z));
  EXPECT_NEAR(std::abs(mk.p / mk.q - seq.p / seq.q), 0.0, 1e-13);
  EXPECT_EQ(code_of([] { Mobius(1, 2, 2, 4); }), Errc::ChartOverflow);
  EXPECT_EQ(code_of([] { Mobius::affine(1e-7, 0); }), Errc::ChartOverflow);
  EXPECT_EQ(code_of([] { Mobius::affine(1e-2, 0); }), std::nullopt);
}

TEST(Mobius, DiskImageAreaMatchesPulledBackAreaForm) {
  const Mobius id;
  EXPECT_NEAR(disk_image_area(id, 0, 1.0), 2 * kPi, 1e-13);
  EXPECT_NEAR(disk_image_area(id, 0, 3.0), 4 * kPi * 9 / 10, 1e-12);
  const Mobius m(Complex(1, 0.5), Complex(0.2, 0), Complex(0.3, 0.1), Complex(0.9, -0.4));
  for (auto [c, rho] : {std::pair{Complex(0.1, 0.2), 0.3}, std::pair{Complex(-1, 0.5), 0.05}, std::pair{Complex(2, 2), 1.0}}) {
    const double area = disk_image_area(m, c, rho);
    const double want = oracle::disk_area(m, c, rho);
    EXPECT_NEAR(area, want, 1e-5 * std::max(want, 1e-3));
  }
  // a disk through the pole of m: its image contains infinity
  const Complex pole = -m.d() / m.c();
  const double a = disk_image_area(m, pole, 0.5);
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 4 * kPi);
}

TEST(SphereMap, GreatSphereClosedForm) {
  const SphereMap v = equator_sphere();
  for (Complex w : {Complex(0), Complex(1, 0), Complex(0.3, -2), Complex(100, 5)}) {
    const Eigen::Vector3d x = oracle::riemann(w);
    const Point p = v.eval(w);
    EXPECT_NEAR((p - vec({x(2), x(0), x(1), 0})).norm(), 0.0, 1e-14);
  }
  EXPECT_NEAR((v.eval(Homog{1.0, 0.0}) - vec({1, 0, 0, 0})).norm(), 0.0, 1e-15);
  EXPECT_NEAR(v.total_gradient_sq(), 8 * kPi, 1e-12);
  const Mobius m = Mobius::affine(Complex(0, 1) / 0.05, 0);
  EXPECT_NEAR(v.disk_gradient_sq(m, 0, 0.1), 2 * disk_image_area(m, 0, 0.1), 1e-12);
  EXPECT_NEAR(v.disk_gradient_sq(m, 0, 0.1), 8 * kPi * 4 / 5, 1e-12);
}

TEST(SphereMap, PreimageInvertsTheGreatSphere) {
  const SphereMap v = SphereMap::great_sphere(Target::round_sphere(2, 5), vec({0, 0, 2, 0, 0}) / 2,
                                              vec({0.6, 0.8, 0, 0, 0}), vec({0, 0, 0, 0, 1}));
  for (Complex w : {Complex(0.2, 0.1), Complex(-3, 4), Complex(0.001, 0)}) {
    const Homog h = v.preimage(v.eval(w));
    EXPECT_NEAR(std::abs(h.p / h.q - w), 0.0, 1e-12 * std::max(1.0, std::norm(w)));
  }
  const Homog inf = v.preimage(v.eval(Homog{1.0, 0.0}));
  EXPECT_NEAR(std::abs(inf.q), 0.0, 1e-12);
}

TEST(SphereMap, SampledChartsAgreeWithClosedForm) {
  const SphereMap exact = equator_sphere();
  const SphereMap sampled =
      SphereMap::sample(exact.target(), [&](Homog h) { return exact.eval(h); });
  EXPECT_FALSE(sampled.is_great_sphere());
  EXPECT_LE(sampled.overlap_mismatch(), SphereMap::kOverlapTolerance);
  EXPECT_NEAR(sampled.total_gradient_sq() / (8 * kPi), 1.0, 2e-3);
  const Mobius m(Complex(1, 0.5), Complex(0.2, 0), Complex(0.3, 0.1), Complex(0.9, -0.4));
  const double e = exact.disk_gradient_sq(m, Complex(0.1, 0.2), 0.3);
  EXPECT_NEAR(sampled.disk_gradient_sq(m, Complex(0.1, 0.2), 0.3), e, 1e-2 * e);
  for (Complex w : {Complex(0.2, 0.1), Complex(-3, 4)}) EXPECT_LE((sampled.eval(w) - exact.eval(w)).norm(), 1e-3);
}

TEST(SphereMap, InconsistentChartsAreRejected) {
  const SphereMap v = SphereMap::sample(Target::round_sphere(1, 3), [](Homog h) {
    const Eigen::Vector3d x = riemann_point(h);
    return vec({x(0), x(1), x(2)});
  });
  std::vector<double> zero(v.chart(0).begin(), v.chart(0).end()), inf(v.chart(1).begin(), v.chart(1).end());
  EXPECT_NO_THROW(SphereMap::from_charts(v.target(), v.grid(), zero, inf, v.pole_value(0), v.pole_value(1)));
  const std::size_t shared_row = static_cast<std::size_t>(v.rows() - 1) * v.grid().cols * 3;
  zero[shared_row] += 1e-6;
  EXPECT_EQ(code_of([&] { SphereMap::from_charts(v.target(), v.grid(), zero, inf, v.pole_value(0), v.pole_value(1)); }),
            Errc::ConfigViolation);
}

// ---- configs and the certifier ---------------------------------------------------------------------

TEST(BubbleConfig, NestingRuleAndCounts) {
  const LatticeGeometry g({0, 1}, 32, 32);
  const BubbleCollection coll =
      BubbleCollection::with_body(TorusMap::constant(Target::round_sphere(1, 4), Mark({0, 1}), 32, 32, vec({1, 0, 0, 0})),
                                  {equator_sphere(), equator_sphere()});
  BubbleConfig cfg;
  cfg.maps = {Mobius(), Mobius()};
  cfg.balls = {{Complex(0.5, 0.5), 0.4}, {Complex(0.55, 0.5), 0.1}};  // inside B_{0.16}
  EXPECT_NO_THROW(validate_config(g, coll, cfg));
  EXPECT_EQ(nested_balls(g, cfg)[0], std::vector<int>{1});
  cfg.balls[1].radius = 0.12;  // crosses the inner ball's boundary
  EXPECT_EQ(code_of([&] { validate_config(g, coll, cfg); }), Errc::ConfigViolation);
  cfg.balls = {{Complex(0.1, 0.1), 0.2}, {Complex(0.9, 0.9), 0.2}};  // intersect across the seam
  EXPECT_EQ(code_of([&] { validate_config(g, coll, cfg); }), Errc::ConfigViolation);
  cfg.balls = {{Complex(0.2, 0.2), 0.2}, {Complex(0.7, 0.7), 0.5}};
  EXPECT_EQ(code_of([&] { validate_config(g, coll, cfg); }), Errc::ConfigViolation);
  cfg.balls.pop_back();
  EXPECT_EQ(code_of([&] { validate_config(g, coll, cfg); }), Errc::ConfigViolation);
}

TEST(BubbleDefect, IdenticalBodyIsZero) {
  const TorusMap v0 = clifford_map(32);
  const BubbleCollection coll = BubbleCollection::with_body(v0, {});
  EXPECT_EQ(bubble_defect(v0, coll, BubbleConfig{}), 0.0);
}

TEST(BubbleDefect, MarkTermAlone) {
  const TorusMap u = clifford_map(32);
  const BubbleCollection coll = BubbleCollection::with_body(u.with_mark(Mark({0.0, 1.01})), {});
  const DefectReport r = defect_report(u, coll, BubbleConfig{});
  EXPECT_EQ(r.body, 0.0);
  EXPECT_NEAR(r.defect, 0.01, 1e-15);
}

TEST(BubbleDefect, ShiftedBodyIsRecognized) {
  const TorusMap v0 = clifford_map(32);
  const TorusMap u = shifted(v0, 5.0 / 32, -3.0 / 32);
  const BubbleCollection coll = BubbleCollection::with_body(v0, {});
  BubbleConfig cfg;
  EXPECT_GT(bubble_defect(u, coll, cfg), 1.0);
  cfg.shift_a = 5.0 / 32;
  cfg.shift_b = -3.0 / 32;
  EXPECT_EQ(bubble_defect(u, coll, cfg), 0.0);
}

TEST(BubbleDefect, CertifiedByTheContinuumGluingBound) {
  for (const GlueSpec& spec : {oracle::constant_spec(128), oracle::clifford_spec(128), oracle::nested_spec(192),
                               oracle::two_bubble_spec(128)}) {
    const GluedFixture fx = glue(spec);
    const DefectReport got = defect_report(fx.map, fx.collection, fx.config);
    const DefectReport bound = oracle::continuum_defect(spec, 2);
    EXPECT_LE(got.defect, 1.05 * bound.defect + 1e-3);
    EXPECT_LE(got.body, 1.05 * bound.body + 1e-3);
    EXPECT_LE(got.bubbles, 1.05 * bound.bubbles + 1e-3);
    EXPECT_LE(got.neck, 1.05 * bound.neck + 1e-3);
    // and the certifier is not vacuous: it tracks the bound from below as well
    EXPECT_GE(got.defect, 0.8 * bound.defect);
  }
}

TEST(BubbleDefect, DegenerateBodyCertifiedByTheContinuumBound) {
  const CylinderSpec spec = oracle::cylinder_spec(256);  // the neck annulus needs the finer cells
  const GluedFixture fx = glue(spec);
  const DefectReport got = defect_report(fx.map, fx.collection, fx.config);
  const DefectReport bound = oracle::continuum_defect(spec, 2);
  EXPECT_LE(got.defect, 1.05 * bound.defect + 1e-3);
  EXPECT_LE(got.body, 1.05 * bound.body + 1e-3);
  EXPECT_LE(got.bubbles, 1.05 * bound.bubbles + 1e-3);
  EXPECT_LE(got.neck, 1.05 * bound.neck + 1e-3);
  EXPECT_GE(got.defect, 0.8 * bound.defect);
}

TEST(BubbleDefect, NamedFixturesAreTheOracleScenarios) {
  const std::vector<std::pair<std::string, GluedFixture>> pairs = {
      {"constant_bubble", glue(oracle::constant_spec(64))}, {"clifford_bubble", glue(oracle::clifford_spec(64))},
      {"nested", glue(oracle::nested_spec(64))},           {"two_bubbles", glue(oracle::two_bubble_spec(64))},
      {"cylinder_bubble", glue(oracle::cylinder_spec(64))}};
  for (const auto& [name, want] : pairs) {
    const GluedFixture got = glued_fixture(name, 64);
    const auto a = got.map.data(), b = want.map.data();
    ASSERT_EQ(a.size(), b.size()) << name;
    for (std::size_t k = 0; k < a.size(); ++k) ASSERT_EQ(a[k], b[k]) << name;
  }
}

TEST(BubbleDefect, StableUnderSmallPerturbations) {
  const GluedFixture fx = glue(oracle::constant_spec(96));
  std::mt19937_64 rng(41);
  const Section x = smooth_random_section(fx.map, rng, Flavor::Tangential, 3);
  const double d0 = bubble_defect(fx.map, fx.collection, fx.config);
  const LatticeGeometry g = fx.map.geometry();
  for (double s : {1e-3, 1e-2}) {
    const TorusMap up = perturb(fx.map, x, s);
    std::vector<double> diff(up.data().begin(), up.data().end());
    for (std::size_t k = 0; k < diff.size(); ++k) diff[k] -= fx.map.data()[k];
    // defect = 3 max(...) and the bubble term sums over balls, so it moves by at most
    // 3 sqrt(max(1, n)) times the W^{1,2} seminorm of the change
    const double eta = 3 * std::sqrt(2 * dirichlet_energy(g, diff, fx.map.ambient_dim()));
    EXPECT_LE(std::abs(bubble_defect(up, fx.collection, fx.config) - d0), eta + 1e-6);
  }
}

TEST(BubbleDefect, DegenerateBodyOnTheCylinder) {
  CylinderSpec spec;
  spec.frame = SmallMatrix::Zero(4, 3);
  spec.frame(0, 0) = spec.frame(1, 1) = spec.frame(2, 2) = 1;
  spec.map = Mobius(Complex(1), Complex(-1.3), Complex(1), Complex(-0.7));
  const GluedFixture fx = glue(spec);
  const DefectReport r = defect_report(fx.map, fx.collection, fx.config);
  EXPECT_EQ(r.mark, 0.0);
  EXPECT_EQ(r.neck, 0.0);
  EXPECT_EQ(r.bubbles, 0.0);
  // away from the seam band the map is the sphere itself; the band carries the rest
  EXPECT_GT(r.body, 0.0);
  EXPECT_LT(r.body, 1.5);
  // sliding the sphere along the cylinder is seen by the certifier
  BubbleConfig moved = fx.config;
  moved.maps[0] = fx.config.maps[0].compose(Mobius::affine(2.0, 0));
  EXPECT_GT(bubble_defect(fx.map, fx.collection, moved), r.defect + 0.5);
}

// ---- config search ----------------------------------------------------------------------------------

TEST(FindConfig, IdenticalBodyGivesEmptyConfig) {
  const TorusMap v0 = clifford_map(32);
  const BubbleConfig cfg = find_config(v0, BubbleCollection::with_body(v0, {}));
  EXPECT_TRUE(cfg.balls.empty());
  EXPECT_EQ(cfg.shift_a, 0.0);
  EXPECT_EQ(cfg.shift_b, 0.0);
}

TEST(FindConfig, RecoversGridShiftsExactly) {
  const TorusMap v0 = clifford_map(24, {0.1, 1.2});
  for (auto [p, q] : {std::pair{3, 0}, std::pair{0, 7}, std::pair{11, 19}}) {
    const TorusMap u = shifted(v0, static_cast<double>(p) / 24, static_cast<double>(q) / 24);
    const auto [da, db] = fit_body_shift(u, v0);
    // oracle: exhaustive search over all grid shifts
    double best = std::numeric_limits<double>::infinity();
    int bp = -1, bq = -1;
    for (int i = 0; i < 24; ++i)
      for (int j = 0; j < 24; ++j) {
        const TorusMap w = shifted(v0, static_cast<double>(i) / 24, static_cast<double>(j) / 24);
        double s = 0;
        for (std::size_t k = 0; k < u.data().size(); ++k) s += std::pow(u.data()[k] - w.data()[k], 2);
        if (s < best) best = s, bp = i, bq = j;
      }
    EXPECT_EQ(bp, p);
    EXPECT_EQ(bq, q);
    EXPECT_EQ(da, static_cast<double>(p) / 24);
    EXPECT_EQ(db, static_cast<double>(q) / 24);
  }
}

TEST(FindConfig, RecoversGluedCentresWithinACell) {
  for (const GlueSpec& spec : {oracle::constant_spec(128), oracle::clifford_spec(128), oracle::nested_spec(192),
                               oracle::two_bubble_spec(128)}) {
    const GluedFixture fx = glue(spec);
    const BubbleConfig found = find_config(fx.map, fx.collection);
    ASSERT_EQ(found.balls.size(), fx.config.balls.size());
    const LatticeGeometry g = fx.map.geometry();
    for (std::size_t k = 0; k < found.balls.size(); ++k) {
      const Complex d = torus_offset(g, found.balls[k].center, fx.config.balls[k].center);
      const double b = d.imag() / g.tau.imag(), a = d.real() - b * g.tau.real();
      EXPECT_LE(std::abs(a), 1.0 / g.na + 1e-12);
      EXPECT_LE(std::abs(b), 1.0 / g.nb + 1e-12);
    }
    EXPECT_LE(bubble_defect(fx.map, fx.collection, found), 1.5 * bubble_defect(fx.map, fx.collection, fx.config));
  }
}

TEST(FindConfig, FitsAMobiusMapFromExactPairs) {
  const Mobius m(Complex(1, 0.5), Complex(0.2, 0), Complex(0.3, 0.1), Complex(0.9, -0.4));
  std::vector<Complex> z;
  std::vector<Homog> w;
  std::vector<double> wt;
  for (int k = 0; k < 12; ++k) {
    z.push_back(std::polar(0.2 + 0.05 * k, 0.9 * k));
    w.push_back(m.apply(z.back()));
    wt.push_back(1.0);
  }
  const Mobius f = fit_mobius(z, w, wt);
  for (Complex t : {Complex(0.1, 0.1), Complex(-2, 1)}) {
    const Homog a = f.apply(t), b = m.apply(t);
    EXPECT_NEAR(std::abs(a.p / a.q - b.p / b.q), 0.0, 1e-10);
  }
}

// ---- unstable fields and the surrogate ---------------------------------------------------------------

TEST(SphereBasis, GreatSphereBandMatchesBruteForce) {
  const SphereMap v = equator_sphere();
  for (int k : {1, 2}) {
    if (k == 2) {
      // needs two normal directions: S^4
      const SphereMap w = SphereMap::great_sphere(Target::round_sphere(1, 5), vec({1, 0, 0, 0, 0}),
                                                  vec({0, 1, 0, 0, 0}), vec({0, 0, 1, 0, 0}));
      const SphereBasis b = great_sphere_basis(w, 2);
      EXPECT_EQ(b.fields.size(), 2u);
      EXPECT_NEAR(b.fields[0](Homog{0.3, 1.0}).dot(b.fields[1](Homog{0.3, 1.0})), 0.0, 1e-15);
      continue;
    }
    const SphereBasis b = great_sphere_basis(v, k);
    // oracle: energy 4 pi / (1 + g^2 s^2) differentiated twice by central differences on a fine s grid
    const double g = b.gamma;
    auto e = [&](double s) { return 4 * kPi / (1 + g * g * s * s); };
    double lo = 1e9, hi = -1e9;
    for (int i = 0; i <= 1000; ++i) {
      const double s = i / 1000.0, h = 1e-4;
      const double d2 = (e(s + h) - 2 * e(s) + e(s - h)) / (h * h);
      // tangential eigenvalue for |s| = s in higher dimension: 2 f'(q)
      lo = std::min(lo, d2);
      hi = std::max(hi, d2);
    }
    EXPECT_GT(lo, -1 / (2 * b.c0) - 1e-6);
    EXPECT_LT(hi, -2 * b.c0 + 1e-6);
    EXPECT_NEAR(std::min(-1 / (2 * lo), -hi / 2), b.c0, 2e-3 * b.c0);
    EXPECT_EQ(code_of([&] { great_sphere_basis(v, 2); }), Errc::InsufficientIndex);
  }
}

TEST(Transplant, EmptyBasisGivesTheOrigin) {
  const GluedFixture fx = glue(oracle::two_bubble_spec(64));
  TransplantBases bases;
  bases.spheres.resize(fx.collection.spheres().size());
  const SurrogatePack pack = transplant(fx.map, fx.collection, fx.config, bases);
  EXPECT_EQ(pack.k, 0);
  EXPECT_EQ(pack.m.size(), 0);
  EXPECT_EQ(pack.E_at_m, energy(fx.map));
}

TEST(Transplant, HarmonicBodyWithoutBubblesKeepsItsFields) {
  const TorusMap v0 = great_circle_map(16);
  const BubbleCollection coll = BubbleCollection::with_body(v0, {});
  TransplantBases bases;
  bases.body = unstable_basis(v0, 2);
  const std::vector<Section> f = transplanted_fields(v0, coll, BubbleConfig{}, bases);
  ASSERT_EQ(f.size(), 2u);
  for (int i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < f[i].data().size(); ++k) EXPECT_EQ(f[i].data()[k], bases.body.sections[i].data()[k]);
  const SurrogatePack pack = transplant(v0, coll, BubbleConfig{}, bases);
  EXPECT_EQ(pack.k, 2);
  EXPECT_NEAR(pack.m.norm(), 0.0, 1e-6);
  const std::vector<double> zero(2, 0.0);
  const Eigen::MatrixXd h = energy_hessian(v0, bases.body.sections, zero);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  EXPECT_GT(es.eigenvalues().minCoeff(), -1 / (2 * bases.body.c0));
  EXPECT_LT(es.eigenvalues().maxCoeff(), -2 * bases.body.c0);
  EXPECT_GE(pack.worst_lower, -1 / pack.c0);
  EXPECT_LE(pack.worst_upper, -pack.c0);
}

TEST(Transplant, GluedBubblesPassTheBandAndFailWhenPushed) {
  const GluedFixture fx = glue(oracle::two_bubble_spec(96));
  TransplantBases bases;
  for (const SphereMap& v : fx.collection.spheres()) bases.spheres.push_back(great_sphere_basis(v, 1));
  const SurrogatePack pack = transplant(fx.map, fx.collection, fx.config, bases);
  EXPECT_EQ(pack.k, 2);
  EXPECT_LE(pack.m.norm(), pack.c0 / std::sqrt(10.0));
  EXPECT_GE(pack.worst_lower, -1 / pack.c0);
  EXPECT_LE(pack.worst_upper, -pack.c0);
  // defect dial: slide along the transplanted fields until the defect doubles
  const double d0 = bubble_defect(fx.map, fx.collection, fx.config);
  double lo = 0, hi = 8;
  auto pushed = [&](double t) {
    const std::vector<double> s{t, t};
    return perturb(fx.map, pack.fields, s);
  };
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (bubble_defect(pushed(mid), fx.collection, fx.config) < 2 * d0 ? lo : hi) = mid;
  }
  const TorusMap far = pushed(hi);
  EXPECT_NEAR(bubble_defect(far, fx.collection, fx.config), 2 * d0, 1e-3 * d0);
  TransplantOptions opts;
  opts.eps_unstable = 1e9;
  EXPECT_EQ(code_of([&] { transplant(far, fx.collection, fx.config, bases, opts); }), Errc::ConcavityFailure);
  opts.eps_unstable = 0.5 * d0;
  EXPECT_EQ(code_of([&] { transplant(fx.map, fx.collection, fx.config, bases, opts); }), Errc::DefectTooLarge);
}

TEST(Separation, OriginAndBoundary) {
  const GluedFixture fx = glue(oracle::two_bubble_spec(96));
  TransplantBases bases;
  for (const SphereMap& v : fx.collection.spheres()) bases.spheres.push_back(great_sphere_basis(v, 1));
  const SurrogatePack pack = transplant(fx.map, fx.collection, fx.config, bases);
  const std::vector<double> zero{0, 0};
  const Separation at0 = separation_check(fx.collection, fx.config, pack, zero, 0.1);
  EXPECT_EQ(at0.energy_excess, 0.0);
  EXPECT_EQ(at0.defect, bubble_defect(fx.map, fx.collection, fx.config));
  EXPECT_TRUE(at0.low_energy);
  for (int k = 0; k < 8; ++k) {
    const std::vector<double> s{std::cos(k * kPi / 4), std::sin(k * kPi / 4)};
    const Separation sep = separation_check(fx.collection, fx.config, pack, s, 0.1);
    const double gap = 1 - pack.m.norm();
    EXPECT_GE(pack.E_at_m - (sep.energy_excess + energy(fx.map)),
              0.5 * pack.c0 * gap * gap - 1e-3 * std::max(1.0, pack.E_at_m));
  }
}

// ---- serialization ------------------------------------------------------------------------------------

TEST(BubbleJson, RoundTrips) {
  const GluedFixture fx = glue(oracle::nested_spec(64));
  const BubbleConfig back = config_from_json(config_to_json(fx.config));
  ASSERT_EQ(back.balls.size(), fx.config.balls.size());
  for (std::size_t k = 0; k < back.balls.size(); ++k) {
    EXPECT_EQ(back.balls[k].center, fx.config.balls[k].center);
    EXPECT_EQ(back.balls[k].radius, fx.config.balls[k].radius);
    EXPECT_EQ(back.maps[k].a(), fx.config.maps[k].a());
    EXPECT_EQ(back.maps[k].d(), fx.config.maps[k].d());
  }
  const auto dir = std::filesystem::temp_directory_path() / "tmxl_bubble_json";
  std::filesystem::create_directories(dir);
  save_collection(fx.collection, dir / "coll.json");
  const BubbleCollection coll = load_collection(dir / "coll.json");
  EXPECT_EQ(bubble_defect(fx.map, coll, fx.config), bubble_defect(fx.map, fx.collection, fx.config));
  const SphereMap s = sphere_from_json(sphere_to_json(SphereMap::sample(Target::round_sphere(1, 3), [](Homog h) {
    const Eigen::Vector3d x = riemann_point(h);
    return vec({x(0), x(1), x(2)});
  })));
  EXPECT_FALSE(s.is_great_sphere());
  EXPECT_LE(s.overlap_mismatch(), SphereMap::kOverlapTolerance);
}
