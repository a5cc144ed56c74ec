#pragma once

#include "tmxl/common.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tmxl {

inline constexpr double kDegenerateImag = 1e-9;

// Point of the upper half-plane labelling the torus C / (Z + tau Z).
class Mark {
 public:
  explicit Mark(Complex tau);
  Complex tau() const { return tau_; }
  bool operator==(const Mark&) const = default;

 private:
  Complex tau_;
};

// Integer matrix [[a, b], [c, d]] acting by tau -> (a tau + b) / (c tau + d).
struct ModularMatrix {
  std::int64_t a = 1, b = 0, c = 0, d = 1;
  Complex act(Complex tau) const;
  ModularMatrix operator*(const ModularMatrix& o) const;
  std::int64_t det() const { return a * d - b * c; }
  bool operator==(const ModularMatrix&) const = default;
};

struct ReducedMark {
  Complex tau_reduced;
  // Applied generators, leftmost first: "S T^5" means T^5 was applied to S(tau).
  std::string word;
  ModularMatrix matrix;
};

// Closed fundamental domain with the half-open boundary convention:
// -1/2 < Re <= 1/2, |tau| >= 1, and Re >= 0 when |tau| = 1.
bool in_fundamental_domain(Complex tau, double tol = 0.0);

ReducedMark reduce(Mark m, double degenerate_imag = kDegenerateImag);

struct MarkSample {
  double t;
  Mark mark;
};

class MarkPath {
 public:
  explicit MarkPath(std::vector<MarkSample> samples);
  std::span<const MarkSample> samples() const { return samples_; }
  double continuity_modulus() const;

 private:
  std::vector<MarkSample> samples_;
};

struct ConvergenceMode {
  bool degenerating = false;
  Complex limit;  // final reduced mark when converging
};

// Degenerating iff the final Im exceeds h_max and Im rose over the second half of the sequence.
ConvergenceMode classify_mode(std::span<const ReducedMark> path, double h_max = 50.0);

}  // namespace tmxl
