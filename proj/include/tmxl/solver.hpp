#pragma once

#include "tmxl/fields.hpp"

#include <filesystem>
#include <vector>

namespace tmxl {

struct SolveOptions {
  double tension_tol = 1e-8;
  int max_iters = 200000;
  double armijo = 1e-4;
  // relative slack for energy comparisons once the decrease drops below double resolution
  double roundoff_floor = 64 * 2.2e-16;
};

struct SolveReport {
  int iterations = 0;
  double final_tension_norm = 0.0;
  double final_energy = 0.0;
  bool converged = false;
};

struct SolveResult {
  TorusMap map;
  SolveReport report;
  std::vector<double> energy_trace;  // initial energy, then one entry per accepted step
};

// Largest stable explicit step for the lattice Laplacian (Gershgorin bound of L / Im tau).
double explicit_step(const LatticeGeometry& g);

// Projected gradient descent u <- Pi(u + eta tension(u)). Running out of iterations returns the
// best iterate with converged = false.
SolveResult solve_harmonic(const TorusMap& u0, const SolveOptions& opts = {});

struct Ball {
  Complex center;  // point of C, read modulo the lattice {1, tau}
  double radius;
};

double torus_distance(const LatticeGeometry& g, Complex z, Complex w);
// Flat indices of nodes strictly inside the ball.
std::vector<int> nodes_in_ball(const LatticeGeometry& g, const Ball& b);
double ball_energy(const TorusMap& u, std::span<const Ball> balls);

struct ReplaceOptions {
  double energy_cap = 0.3;
  double smallness = 0.5;  // balls below this energy get the gradient-bound diagnostic
  double tension_tol = 1e-10;
  int max_iters = 100000;
};

struct BallDiagnostic {
  double energy = 0.0;
  double gradient_sq_at_center = 0.0;
  double bound = 0.0;  // energy / smallness / r^2
  bool holds = true;
};

struct ReplaceResult {
  TorusMap map;
  std::vector<BallDiagnostic> diagnostics;  // one per ball with energy below `smallness`
};

// Energy minimizer on each concentric ball of radius r/8 with the current boundary values;
// nodes outside are copied bitwise.
ReplaceResult harmonic_replace(const TorusMap& u, std::span<const Ball> balls, const ReplaceOptions& opts = {});

struct SweepSample {
  double t;
  TorusMap map;
};

class Sweepout {
 public:
  enum class Endpoints { Enforce, Skip };
  static constexpr double kEndpointThreshold = 1e-6;

  explicit Sweepout(std::vector<SweepSample> samples, Endpoints policy = Endpoints::Enforce);

  const std::vector<SweepSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  std::vector<double> energies() const;
  double max_energy() const;

 private:
  std::vector<SweepSample> samples_;
};

// Endpoint maps are constant (energy) or circle-valued (area) below the threshold.
bool is_trivial_endpoint(const TorusMap& u, double threshold = Sweepout::kEndpointThreshold);

struct TightenOptions {
  int cover = 4;        // cover x cover ball centres per round, offset along a Kronecker sequence
  double slack = 0.0;   // samples with energy above max - slack are tightened
  ReplaceOptions replace;
};

struct TightenResult {
  Sweepout sweepout;
  std::vector<double> round_max_energy;  // entry 0 is the input
};

TightenResult tighten(const Sweepout& sw, int rounds, const TightenOptions& opts = {});

double width_estimate(std::span<const Sweepout> sweepouts);

// JSON manifest {version, samples:[{t, map}]} with one map file per sample beside it.
void save_sweepout(const Sweepout& sw, const std::filesystem::path& manifest);
Sweepout load_sweepout(const std::filesystem::path& manifest, Sweepout::Endpoints policy = Sweepout::Endpoints::Enforce);

}  // namespace tmxl
