#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

namespace tmxl {

inline constexpr int kMaxAmbient = 8;

// Ambient points and vectors of R^N, N <= kMaxAmbient. Fixed capacity, no heap.
using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxAmbient, 1>;
using PointRef = Eigen::Ref<const Eigen::VectorXd>;
using SmallMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxAmbient, kMaxAmbient>;
using Complex = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;

enum class Errc {
  OutsideTube,
  NonConvergence,
  NotOnManifold,
  NotTangent,
  DegenerateMark,
  LeftTube,
  MaxIters,
  BallsOverlap,
  EnergyCapExceeded,
  EmptyInput,
  NotHarmonic,
  EigFailure,
  InsufficientIndex,
  BadRadius,
  ConfigViolation,
  ChartOverflow,
  NoCandidate,
  ConcavityFailure,
  DefectTooLarge,
  StepUnderflow,
  InterpolationGap,
  IndexTooLow,
  TubeEscape,
  UnknownFixture,
  BadInput,
};

const char* errc_name(Errc code);

// Numerical failures map to CLI exit 3, everything else is a broken contract (exit 2).
bool is_numerical(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Correctly rounded sum (Shewchuk partials, as in Python's math.fsum). The result does not
// depend on the order of the terms, so reductions are independent of thread layout and of
// cyclic relabelling of grid nodes.
double exact_sum(std::span<const double> values);

void set_thread_count(int n);
int thread_count();

namespace detail {
void run_chunks(std::size_t n, void (*body)(void*, std::size_t, std::size_t), void* ctx);
}

// Calls f(begin, end) over contiguous chunks of [0, n). Chunks write disjoint outputs.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  auto thunk = [](void* ctx, std::size_t b, std::size_t e) { (*static_cast<F*>(ctx))(b, e); };
  detail::run_chunks(n, thunk, static_cast<void*>(&f));
}

}  // namespace tmxl
