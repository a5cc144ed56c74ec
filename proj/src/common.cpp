#include "tmxl/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <vector>

namespace tmxl {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::OutsideTube: return "OutsideTube";
    case Errc::NonConvergence: return "NonConvergence";
    case Errc::NotOnManifold: return "NotOnManifold";
    case Errc::NotTangent: return "NotTangent";
    case Errc::DegenerateMark: return "DegenerateMark";
    case Errc::LeftTube: return "LeftTube";
    case Errc::MaxIters: return "MaxIters";
    case Errc::BallsOverlap: return "BallsOverlap";
    case Errc::EnergyCapExceeded: return "EnergyCapExceeded";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::NotHarmonic: return "NotHarmonic";
    case Errc::EigFailure: return "EigFailure";
    case Errc::InsufficientIndex: return "InsufficientIndex";
    case Errc::BadRadius: return "BadRadius";
    case Errc::ConfigViolation: return "ConfigViolation";
    case Errc::ChartOverflow: return "ChartOverflow";
    case Errc::NoCandidate: return "NoCandidate";
    case Errc::ConcavityFailure: return "ConcavityFailure";
    case Errc::DefectTooLarge: return "DefectTooLarge";
    case Errc::StepUnderflow: return "StepUnderflow";
    case Errc::InterpolationGap: return "InterpolationGap";
    case Errc::IndexTooLow: return "IndexTooLow";
    case Errc::TubeEscape: return "TubeEscape";
    case Errc::UnknownFixture: return "UnknownFixture";
    case Errc::BadInput: return "BadInput";
  }
  return "Unknown";
}

bool is_numerical(Errc code) {
  switch (code) {
    case Errc::NonConvergence:
    case Errc::MaxIters:
    case Errc::EigFailure:
    case Errc::ChartOverflow:
    case Errc::NoCandidate:
    case Errc::ConcavityFailure:
    case Errc::StepUnderflow:
    case Errc::InterpolationGap:
    case Errc::TubeEscape:
    case Errc::LeftTube:
    case Errc::OutsideTube:
      return true;
    default:
      return false;
  }
}

Error::Error(Errc code, const std::string& detail)
    : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

double exact_sum(std::span<const double> values) {
  std::vector<double> partials;
  for (double x : values) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  std::size_t n = partials.size();
  if (n == 0) return 0.0;
  double hi = partials[--n], lo = 0.0;
  while (n > 0) {
    const double x = hi, y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  // round-half-even correction when the remaining partials push past a tie
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0, x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

namespace {

int initial_thread_count() {
  if (const char* env = std::getenv("TMXL_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> n{initial_thread_count()};
  return n;
}

}  // namespace

void set_thread_count(int n) { thread_setting().store(std::max(1, n)); }
int thread_count() { return thread_setting().load(); }

namespace detail {

void run_chunks(std::size_t n, void (*body)(void*, std::size_t, std::size_t), void* ctx) {
  constexpr std::size_t kMinChunk = 4096;
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(thread_count()), (n + kMinChunk - 1) / kMinChunk);
  if (workers <= 1) {
    if (n > 0) body(ctx, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back(body, ctx, b, e);
  }
  body(ctx, 0, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace detail
}  // namespace tmxl
