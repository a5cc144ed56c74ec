#pragma once

#include "tmxl/bubbles.hpp"
#include "tmxl/solver.hpp"

#include <string>
#include <vector>

namespace tmxl {

// Bubble glued at `center`: the great sphere through the host value p there, read through
// w = e^{i phase} (z - center) / scale, blended in by chi = 1 below `inner`, log-linear to 0 at `outer`.
struct BubbleGlue {
  Complex center;
  double scale = 0.02;
  double phase = 0.0;
  double inner = 0.05;
  double outer = 0.1;
  double ball_radius = 0.35;  // r_j reported in the config
  Point f1, f2;               // sphere frame hints, orthonormalized against p
};

struct GlueSpec {
  Target target = Target::round_sphere(1.0, 4);
  Mark mark{Complex(0.0, 1.0)};
  int na = 128;
  int nb = 128;
  std::function<Point(double a, double b)> body;  // torus body in lattice coordinates
  std::vector<BubbleGlue> bubbles;                // later bubbles attach to the map glued so far
};

// Degenerate body: great sphere (frame columns f0, f1, f2) read on the strip through xi = exp(2 pi i z)
// and `map`; the seam band of width `seam` (in Im z) blends to the point midway between v(map(0)) and
// v(map(infinity)).
struct CylinderSpec {
  Target target = Target::round_sphere(1.0, 4);
  Mark mark{Complex(0.0, 2.5)};
  int na = 64;
  int nb = 160;
  SmallMatrix frame;
  Mobius map;
  double seam = 0.6;
  std::vector<BubbleGlue> bubbles;
};

struct GluedFixture {
  TorusMap map;
  BubbleCollection collection;
  BubbleConfig config;
};

GluedFixture glue(const GlueSpec& spec);
GluedFixture glue(const CylinderSpec& spec);

TorusMap clifford_fixture(int n = 64);
TorusMap great_circle_fixture(int n = 64);
// Samples t_k = k / (count - 1) of the nodewise great arc from e to mid at fraction w = 1 - |2t - 1|
// (round sphere targets; OutsideTube if a node is antipodal to e). e4 for the two fixtures above.
Sweepout linear_sweepout(const TorusMap& mid, int count, const Point& base);

// Named glued scenarios: constant_bubble, clifford_bubble, nested, two_bubbles, cylinder_bubble.
std::vector<std::string> glued_fixture_names();
GluedFixture glued_fixture(const std::string& name, int n = 128);

}  // namespace tmxl
