#pragma once

// Shared builders for the unit tests: closed-form maps and smooth random sections.

#include "tmxl/fields.hpp"

#include <cmath>
#include <random>

namespace tmxl::testing {

inline Point vec(std::initializer_list<double> xs) {
  Point p(static_cast<int>(xs.size()));
  int i = 0;
  for (double x : xs) p(i++) = x;
  return p;
}

inline TorusMap clifford_map(int n, Complex tau = {0, 1}) {
  const double c = 1.0 / std::sqrt(2.0);
  return TorusMap::sample(Target::round_sphere(1.0, 4), Mark(tau), n, n, [&](double a, double b) {
    return vec({c * std::cos(2 * kPi * a), c * std::sin(2 * kPi * a), c * std::cos(2 * kPi * b),
                c * std::sin(2 * kPi * b)});
  });
}

inline TorusMap great_circle_map(int n, Complex tau = {0, 1}) {
  return TorusMap::sample(Target::round_sphere(1.0, 4), Mark(tau), n, n, [&](double a, double) {
    return vec({std::cos(2 * kPi * a), std::sin(2 * kPi * a), 0.0, 0.0});
  });
}

// Low-frequency random ambient field, tangentially projected when requested.
inline Section smooth_random_section(const TorusMap& u, std::mt19937_64& rng, Flavor flavor, int modes = 2) {
  const int N = u.ambient_dim();
  std::normal_distribution<double> g;
  struct Term {
    int p, q;
    Point c, s;
  };
  std::vector<Term> terms;
  for (int p = -modes; p <= modes; ++p)
    for (int q = -modes; q <= modes; ++q) {
      Term t{p, q, Point(N), Point(N)};
      for (int k = 0; k < N; ++k) {
        t.c(k) = g(rng) / (1 + p * p + q * q);
        t.s(k) = g(rng) / (1 + p * p + q * q);
      }
      terms.push_back(t);
    }
  Section x = Section::sample(u, Flavor::Ambient, [&](int i, int j) {
    const double a = static_cast<double>(i) / u.na(), b = static_cast<double>(j) / u.nb();
    Point v = Point::Zero(N);
    for (const Term& t : terms) {
      const double ph = 2 * kPi * (t.p * a + t.q * b);
      v += std::cos(ph) * t.c + std::sin(ph) * t.s;
    }
    return v;
  });
  return flavor == Flavor::Tangential ? x.tangential_part(u) : x;
}

}  // namespace tmxl::testing
