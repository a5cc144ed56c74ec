#pragma once

#include "tmxl/io.hpp"
#include "tmxl/solver.hpp"
#include "tmxl/spectrum.hpp"
#include "tmxl/sphere.hpp"

#include <optional>
#include <vector>

namespace tmxl {

// Logarithmic cutoff: 0 below r^2, 2 - log(rho) / log(r) between r^2 and r, 1 beyond.
class CutoffProfile {
 public:
  explicit CutoffProfile(double r);  // BadRadius unless 0 < r < 1
  double r() const { return r_; }
  double operator()(double rho) const;
  double derivative(double rho) const;
  // int |grad zeta|^2 of zeta = eta(|z|) over the plane: -2 pi / log r.
  double gradient_sq() const;

 private:
  double r_;
  double log_r_;
};

CutoffProfile cutoff_profile(double r);

// Discrete int |grad f|^2 over the annulus rin <= |z| <= rout on a log-polar node grid of nr x ntheta,
// using the conformal coordinates (log rho, theta).
double polar_gradient_sq(const std::function<double(double rho, double theta)>& f, double rin, double rout, int nr,
                         int ntheta);

// Body map with a torus domain (first outcome) or a degenerate body: then spheres[0] is read on the
// cylinder through xi = exp(2 pi i z) and the remaining spheres are bubbles.
class BubbleCollection {
 public:
  static BubbleCollection with_body(TorusMap body, std::vector<SphereMap> spheres);
  static BubbleCollection degenerate(std::vector<SphereMap> spheres);

  bool body_degenerate() const { return !body_; }
  const TorusMap& body() const;
  const std::vector<SphereMap>& spheres() const { return spheres_; }
  const Target& target() const;
  // Number of spheres that need a concentration ball.
  int bubble_count() const;
  // Index into spheres() of bubble b.
  int sphere_of_bubble(int b) const { return body_degenerate() ? b + 1 : b; }

 private:
  BubbleCollection(std::optional<TorusMap> body, std::vector<SphereMap> spheres);
  std::optional<TorusMap> body_;
  std::vector<SphereMap> spheres_;
};

struct BubbleConfig {
  std::vector<Ball> balls;  // one per bubble, centre read modulo the lattice
  double shift_a = 0.0;     // body identification u ~ v0(a + shift_a, b + shift_b)
  double shift_b = 0.0;
  std::vector<Mobius> maps;  // one per sphere; a bubble's map acts on z - centre
};

// Nesting rule and sizes; throws ConfigViolation.
void validate_config(const LatticeGeometry& g, const BubbleCollection& coll, const BubbleConfig& cfg);
// For each ball, the balls lying inside its inner ball B_{r^2}.
std::vector<std::vector<int>> nested_balls(const LatticeGeometry& g, const BubbleConfig& cfg);

// Nearest representative of z - w modulo the lattice.
Complex torus_offset(const LatticeGeometry& g, Complex z, Complex w);
Complex node_position(const LatticeGeometry& g, int i, int j);

// Left-hand sides of the defining inequalities (square roots of gradient integrals).
struct DefectReport {
  double mark = 0.0;  // |tau - tau0|, zero for a degenerate body
  double body = 0.0;
  double bubbles = 0.0;
  double neck = 0.0;
  double defect = 0.0;  // max(mark, 3 body, 3 bubbles, 3 neck)
};

DefectReport defect_report(const TorusMap& u, const BubbleCollection& coll, const BubbleConfig& cfg);
double bubble_defect(const TorusMap& u, const BubbleCollection& coll, const BubbleConfig& cfg);

// Body composed with the configured identification, on u's grid.
TorusMap body_on_grid(const TorusMap& u, const BubbleCollection& coll, const BubbleConfig& cfg);
// Cylinder coordinate of a node position: the fundamental strip |Im z| <= Im(tau) / 2.
Complex cylinder_xi(Complex z);

struct FindOptions {
  std::vector<double> radii{0.08, 0.12, 0.18, 0.25, 0.35, 0.45, 0.49};
  double peak_fraction = 0.05;  // candidate peaks above this fraction of the largest residual peak
  double fit_scales = 3.0;      // Mobius fit uses nodes within this many concentration scales
};

// Heuristic search; the returned config minimizes bubble_defect over the candidates tried.
BubbleConfig find_config(const TorusMap& u, const BubbleCollection& coll, const FindOptions& opts = {});
// Grid shift (p / na, q / nb) maximizing the circular correlation of u with the body.
std::pair<double, double> fit_body_shift(const TorusMap& u, const TorusMap& body);
// Least-squares Mobius map with m(z_k) = w_k.
Mobius fit_mobius(std::span<const Complex> z, std::span<const Homog> w, std::span<const double> weights);

// Unstable fields along a sphere: ambient vectors on v, evaluated in homogeneous coordinates.
struct SphereBasis {
  std::vector<std::function<Point(Homog)>> fields;
  double c0 = 1.0;
  double gamma = 1.0;
};

// Constant unit normals of a great sphere scaled by gamma; c0 and gamma maximize the band
// -1/(2 c0) < D^2 E < -2 c0 of the closed-form energy 4 pi R^2 / (1 + gamma^2 |s|^2 / R^2).
SphereBasis great_sphere_basis(const SphereMap& v, int k);

struct TransplantBases {
  UnstableBasis body;  // sections along the torus body (empty for a degenerate body)
  std::vector<SphereBasis> spheres;
};

struct TransplantOptions {
  double eps_unstable = 8.0;
  int samples = 200;
  double fd_step = 1e-3;
  double envelope_tol = 1e-3;  // relative to max(1, E(m))
  double end_ramp = 0.5;       // cylinder end cutoff width as a fraction of Im(tau) / 2
};

struct SurrogatePack {
  TorusMap base;
  std::vector<Section> fields;
  int k = 0;
  double c0 = 1.0;
  Eigen::VectorXd m;
  double E_at_m = 0.0;
  double worst_upper = 0.0;  // largest sampled Hessian eigenvalue
  double worst_lower = 0.0;  // smallest

  double energy(std::span<const double> s) const;
  Eigen::VectorXd gradient(std::span<const double> s, double h = 1e-4) const;
  TorusMap perturbed(std::span<const double> s) const;
};

// X~ fields on u's grid: cut-off body and bubble fields carried through the config.
std::vector<Section> transplanted_fields(const TorusMap& u, const BubbleCollection& coll, const BubbleConfig& cfg,
                                         const TransplantBases& bases, const TransplantOptions& opts = {});
// Deterministic points of the closed unit k-ball (ball_samples first, then a Halton fill).
std::vector<std::vector<double>> ball_sample_set(int k, int count);

SurrogatePack transplant(const TorusMap& u, const BubbleCollection& coll, const BubbleConfig& cfg,
                         const TransplantBases& bases, const TransplantOptions& opts = {});

struct Separation {
  double energy_excess = 0.0;  // E_u(s) - E(u)
  double defect = 0.0;         // bubble_defect of the perturbed map
  bool low_energy = false;     // energy_excess <= nu
  bool separated = false;      // defect > nu
};
Separation separation_check(const BubbleCollection& coll, const BubbleConfig& cfg, const SurrogatePack& pack,
                            std::span<const double> s, double nu);

Json sphere_to_json(const SphereMap& v);
SphereMap sphere_from_json(const Json& j);
Json config_to_json(const BubbleConfig& cfg);
BubbleConfig config_from_json(const Json& j);
// Body map file (if any) is written beside the collection file.
void save_collection(const BubbleCollection& coll, const std::filesystem::path& path);
BubbleCollection load_collection(const std::filesystem::path& path);

}  // namespace tmxl
