#include "tmxl/moduli.hpp"

#include <cmath>
#include <sstream>

namespace tmxl {

Mark::Mark(Complex tau) : tau_(tau) {
  if (!(tau.imag() > 0.0) || !std::isfinite(tau.real()) || !std::isfinite(tau.imag()))
    throw Error(Errc::BadInput, "mark must lie in the upper half-plane");
}

Complex ModularMatrix::act(Complex tau) const {
  const Complex num = static_cast<double>(a) * tau + static_cast<double>(b);
  const Complex den = static_cast<double>(c) * tau + static_cast<double>(d);
  return num / den;
}

ModularMatrix ModularMatrix::operator*(const ModularMatrix& o) const {
  return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
}

bool in_fundamental_domain(Complex tau, double tol) {
  const double re = tau.real(), r2 = std::norm(tau);
  if (!(tau.imag() > 0)) return false;
  if (re <= -0.5 - tol || re > 0.5 + tol) return false;
  if (r2 < 1.0 - tol) return false;
  if (r2 <= 1.0 + tol && re < -tol) return false;
  return true;
}

namespace {

class WordBuilder {
 public:
  void translate(std::int64_t k) {
    if (k == 0) return;
    if (!tokens_.empty() && tokens_.back().first == 'T') {
      tokens_.back().second += k;
      if (tokens_.back().second == 0) tokens_.pop_back();
    } else {
      tokens_.push_back({'T', k});
    }
  }
  void invert() { tokens_.push_back({'S', 1}); }
  std::string str() const {
    std::ostringstream os;
    bool first = true;
    for (auto [g, k] : tokens_) {
      if (!first) os << ' ';
      first = false;
      if (g == 'S')
        os << 'S';
      else if (k == 1)
        os << 'T';
      else
        os << "T^" << k;
    }
    return os.str();
  }

 private:
  std::vector<std::pair<char, std::int64_t>> tokens_;
};

}  // namespace

ReducedMark reduce(Mark m, double degenerate_imag) {
  const Complex tau = m.tau();
  if (tau.imag() <= degenerate_imag) throw Error(Errc::DegenerateMark, "Im tau below the degeneracy threshold");
  constexpr double kCircleTol = 1e-13;
  ModularMatrix mat;
  WordBuilder word;
  Complex z = tau;
  for (int iter = 0; iter < 100000; ++iter) {
    const double k = std::ceil(z.real() - 0.5);
    if (k != 0.0) {
      const auto ki = static_cast<std::int64_t>(k);
      mat = ModularMatrix{1, -ki, 0, 1} * mat;
      word.translate(-ki);
      z = mat.act(tau);
    }
    const double r2 = std::norm(z);
    const bool inside = r2 < 1.0 - kCircleTol;
    const bool left_arc = std::abs(r2 - 1.0) <= kCircleTol && z.real() < 0.0;
    if (!inside && !left_arc) {
      ReducedMark out{z, word.str(), mat};
      return out;
    }
    mat = ModularMatrix{0, -1, 1, 0} * mat;
    word.invert();
    z = mat.act(tau);
  }
  throw Error(Errc::NonConvergence, "modular reduction did not terminate");
}

MarkPath::MarkPath(std::vector<MarkSample> samples) : samples_(std::move(samples)) {
  if (samples_.empty()) throw Error(Errc::EmptyInput, "mark path needs samples");
  if (samples_.front().t != 0.0 || samples_.back().t != 1.0)
    throw Error(Errc::BadInput, "mark path must start at t=0 and end at t=1");
  for (std::size_t i = 1; i < samples_.size(); ++i)
    if (!(samples_[i].t > samples_[i - 1].t)) throw Error(Errc::BadInput, "mark path times must increase strictly");
}

double MarkPath::continuity_modulus() const {
  double m = 0.0;
  for (std::size_t i = 1; i < samples_.size(); ++i)
    m = std::max(m, std::abs(samples_[i].mark.tau() - samples_[i - 1].mark.tau()));
  return m;
}

ConvergenceMode classify_mode(std::span<const ReducedMark> path, double h_max) {
  if (path.empty()) throw Error(Errc::EmptyInput, "classify_mode needs a nonempty sequence");
  const Complex last = path.back().tau_reduced;
  const Complex mid = path[path.size() / 2].tau_reduced;
  if (last.imag() > h_max && last.imag() > mid.imag()) return {true, last};
  return {false, last};
}

}  // namespace tmxl
