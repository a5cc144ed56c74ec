#include "tmxl/spectrum.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace tmxl {

namespace {

struct StencilWeights {
  double center, a, b, diag;  // diag multiplies (+1,+1) and (-1,-1); the anti-diagonal gets -diag
};

StencilWeights stencil(const LatticeGeometry& g) {
  const double wa = 2 * g.alpha * g.na * g.na, wb = 2 * g.gamma * g.nb * g.nb;
  return {-2 * wa - 2 * wb, wa, wb, g.beta * g.na * g.nb};
}

// Inertia of M - shift I. Returns the number of negative pivots, or -1 if the factorization failed.
int negative_count(const Eigen::SparseMatrix<double>& m, double shift) {
  Eigen::SparseMatrix<double> a = m;
  for (int k = 0; k < a.rows(); ++k) a.coeffRef(k, k) -= shift;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
  if (ldlt.info() != Eigen::Success) return -1;
  const Eigen::VectorXd d = ldlt.vectorD();
  return static_cast<int>((d.array() < 0).count());
}

int robust_negative_count(const Eigen::SparseMatrix<double>& m, double shift, double scale) {
  for (int attempt = 0; attempt < 8; ++attempt) {
    const int c = negative_count(m, shift);
    if (c >= 0) return c;
    shift += 1e-12 * scale * (attempt + 1);
  }
  throw Error(Errc::EigFailure, "inertia factorization failed");
}

double largest_magnitude(const Eigen::SparseMatrix<double>& m) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  Eigen::VectorXd x(m.rows());
  for (int k = 0; k < x.size(); ++k) x(k) = g(rng);
  x.normalize();
  double est = 0.0;
  for (int it = 0; it < 300; ++it) {
    Eigen::VectorXd y = m * x;
    const double n = y.norm();
    if (n == 0.0) return 0.0;
    if (it > 20 && std::abs(n - est) <= 1e-6 * n) {
      est = n;
      break;
    }
    est = n;
    x = y / n;
  }
  return est;
}

// Fix the sign of each column so its largest-magnitude entry is positive.
void normalize_signs(Eigen::MatrixXd& v) {
  for (int c = 0; c < v.cols(); ++c) {
    Eigen::Index r;
    v.col(c).cwiseAbs().maxCoeff(&r);
    if (v(r, c) < 0) v.col(c) *= -1;
  }
}

struct DenseOrIterative {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

DenseOrIterative shift_invert_lowest(const Eigen::SparseMatrix<double>& m, int count, double scale,
                                     const SpectrumOptions& opts) {
  const int n = static_cast<int>(m.rows());
  const int b = std::min(n, count + 8);
  auto positive_definite = [&](double sigma) {
    Eigen::SparseMatrix<double> a = m;
    for (int k = 0; k < n; ++k) a.coeffRef(k, k) -= sigma;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
    return ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0).all();
  };
  // bracket the lowest eigenvalue from below, then tighten by bisection
  double lo = -1.0, hi = std::numeric_limits<double>::quiet_NaN();
  while (!positive_definite(lo)) {
    hi = lo;
    lo *= 2;
    if (lo < -1e3 * std::max(scale, 1.0)) throw Error(Errc::EigFailure, "no lower bound for the spectrum");
  }
  if (!std::isnan(hi)) {
    for (int k = 0; k < 12; ++k) {
      const double mid = 0.5 * (lo + hi);
      (positive_definite(mid) ? lo : hi) = mid;
    }
    lo -= (hi - lo) + 1e-3 * std::abs(lo);
  }
  Eigen::SparseMatrix<double> shifted = m;
  for (int k = 0; k < n; ++k) shifted.coeffRef(k, k) -= lo;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(shifted);
  if (llt.info() != Eigen::Success) throw Error(Errc::EigFailure, "shifted operator is not positive definite");

  std::mt19937_64 rng(12345);
  std::normal_distribution<double> g;
  Eigen::MatrixXd x(n, b);
  for (int c = 0; c < b; ++c)
    for (int r = 0; r < n; ++r) x(r, c) = g(rng);
  for (int it = 0; it < opts.max_iters; ++it) {
    Eigen::MatrixXd y = llt.solve(x);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, b);
    const Eigen::MatrixXd mq = m * q;
    Eigen::MatrixXd h = q.transpose() * mq;
    h = 0.5 * (h + h.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    if (es.info() != Eigen::Success) throw Error(Errc::EigFailure, "Rayleigh-Ritz eigensolve failed");
    x = q * es.eigenvectors();
    const Eigen::MatrixXd r = mq * es.eigenvectors() - x * es.eigenvalues().asDiagonal();
    double worst = 0.0;
    for (int c = 0; c < count; ++c) worst = std::max(worst, r.col(c).norm());
    if (worst <= opts.residual_tol * std::max(scale, 1.0)) {
      Eigen::MatrixXd v = x.leftCols(count);
      normalize_signs(v);
      return {es.eigenvalues().head(count), v};
    }
  }
  throw Error(Errc::EigFailure, "subspace iteration did not converge");
}

}  // namespace

double harmonic_residual(const TorusMap& u, const SpectrumOptions& opts) {
  const double r = tension(u).sup_norm();
  if (opts.strict_harmonic && r > opts.harmonic_tol) {
    std::ostringstream os;
    os << "tension " << r << " exceeds " << opts.harmonic_tol;
    throw Error(Errc::NotHarmonic, os.str());
  }
  return r;
}

double index_form(const TorusMap& u, const Section& x, const Section& y) {
  if (!x.fits(u) || !y.fits(u)) throw Error(Errc::BadInput, "section does not fit the map");
  const LatticeGeometry g = u.geometry();
  const int N = u.ambient_dim();
  const std::vector<double> ly = lattice_laplacian(g, y.data(), N);
  const std::vector<double> lu = lattice_laplacian(g, u.data(), N);
  const Target& t = u.target();
  std::vector<double> terms(static_cast<std::size_t>(u.node_count()));
  parallel_for(terms.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t n = b; n < e; ++n) {
      const Eigen::Map<const Eigen::VectorXd> xn(x.data().data() + n * N, N), yn(y.data().data() + n * N, N),
          lyn(ly.data() + n * N, N), lun(lu.data() + n * N, N);
      terms[n] = -xn.dot(lyn) + lun.dot(t.fundamental_form_unchecked(u.node(static_cast<int>(n)), xn, yn));
    }
  });
  return g.cell * exact_sum(terms);
}

Section jacobi_apply(const TorusMap& u, const Section& v) {
  if (!v.fits(u)) throw Error(Errc::BadInput, "section does not fit the map");
  const LatticeGeometry g = u.geometry();
  const int N = u.ambient_dim();
  std::vector<double> out = lattice_laplacian(g, v.data(), N);
  const std::vector<double> lu = lattice_laplacian(g, u.data(), N);
  const Target& t = u.target();
  const double inv = 1.0 / g.tau.imag();
  parallel_for(static_cast<std::size_t>(u.node_count()), [&](std::size_t b, std::size_t e) {
    for (std::size_t n = b; n < e; ++n) {
      const auto p = u.node(static_cast<int>(n));
      const SmallMatrix frame = t.tangent_frame(p);
      const Eigen::Map<const Eigen::VectorXd> vn(v.data().data() + n * N, N), lun(lu.data() + n * N, N);
      Eigen::Map<Eigen::VectorXd> o(out.data() + n * N, N);
      Point w = -t.tangent_part(p, o);
      for (int i = 0; i < frame.cols(); ++i)
        w += lun.dot(t.fundamental_form_unchecked(p, vn, frame.col(i))) * frame.col(i);
      o = inv * w;
    }
  });
  return Section(u, std::move(out), Flavor::Ambient).tangential_part(u);
}

JacobiMatrix jacobi_matrix(const TorusMap& u) {
  const LatticeGeometry g = u.geometry();
  const Target& t = u.target();
  const int m = t.dim();
  const int nodes = u.node_count();
  const std::vector<double> lu = lattice_laplacian(g, u.data(), u.ambient_dim());
  const StencilWeights w = stencil(g);
  const double inv = 1.0 / g.tau.imag();
  std::vector<SmallMatrix> frames(static_cast<std::size_t>(nodes));
  for (int n = 0; n < nodes; ++n) frames[static_cast<std::size_t>(n)] = t.tangent_frame(u.node(n));

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(nodes) * m * m * 9);
  for (int i = 0; i < g.na; ++i)
    for (int j = 0; j < g.nb; ++j) {
      const int k = g.index(i, j);
      const SmallMatrix& tk = frames[static_cast<std::size_t>(k)];
      const std::pair<int, double> nbrs[] = {
          {k, w.center},           {g.index(i + 1, j), w.a},      {g.index(i - 1, j), w.a},
          {g.index(i, j + 1), w.b}, {g.index(i, j - 1), w.b},      {g.index(i + 1, j + 1), w.diag},
          {g.index(i - 1, j - 1), w.diag}, {g.index(i + 1, j - 1), -w.diag}, {g.index(i - 1, j + 1), -w.diag}};
      for (const auto& [k2, weight] : nbrs) {
        if (weight == 0.0) continue;
        const SmallMatrix block = -weight * inv * (tk.transpose() * frames[static_cast<std::size_t>(k2)]);
        for (int a = 0; a < m; ++a)
          for (int c = 0; c < m; ++c) trip.emplace_back(k * m + a, k2 * m + c, block(a, c));
      }
      const Eigen::Map<const Eigen::VectorXd> lun(lu.data() + static_cast<std::size_t>(k) * u.ambient_dim(),
                                                  u.ambient_dim());
      const auto p = u.node(k);
      for (int a = 0; a < m; ++a)
        for (int c = 0; c < m; ++c)
          trip.emplace_back(k * m + a, k * m + c,
                            inv * lun.dot(t.fundamental_form_unchecked(p, tk.col(a), tk.col(c))));
    }
  Eigen::SparseMatrix<double> mat(nodes * m, nodes * m);
  mat.setFromTriplets(trip.begin(), trip.end());
  // symmetrize away roundoff from the curvature blocks
  Eigen::SparseMatrix<double> sym = 0.5 * (mat + Eigen::SparseMatrix<double>(mat.transpose()));
  return {std::move(sym), std::move(frames)};
}

Section section_from_coordinates(const TorusMap& u, const std::vector<SmallMatrix>& frames,
                                 const Eigen::Ref<const Eigen::VectorXd>& xi) {
  const int N = u.ambient_dim(), m = u.target().dim();
  std::vector<double> values(static_cast<std::size_t>(u.node_count()) * N);
  for (int n = 0; n < u.node_count(); ++n) {
    const Point v = frames[static_cast<std::size_t>(n)] * xi.segment(n * m, m);
    std::copy(v.data(), v.data() + N, values.begin() + static_cast<std::ptrdiff_t>(n) * N);
  }
  return Section(u, std::move(values), Flavor::Ambient).tangential_part(u);
}

IndexReport morse_index(const TorusMap& u, const SpectrumOptions& opts) {
  IndexReport rep;
  rep.harmonic_residual = harmonic_residual(u, opts);
  const JacobiMatrix jm = jacobi_matrix(u);
  const int n = static_cast<int>(jm.matrix.rows());
  rep.total = n;
  if (u.node_count() <= opts.dense_max_nodes) {
    rep.dense = true;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(jm.matrix), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw Error(Errc::EigFailure, "dense eigensolve failed");
    const Eigen::VectorXd& ev = es.eigenvalues();
    rep.scale = ev.cwiseAbs().maxCoeff();
    rep.lambda_tol = opts.lambda_tol_rel * rep.scale;
    rep.eigenvalues.assign(ev.data(), ev.data() + ev.size());
    for (double x : rep.eigenvalues) {
      if (x < -rep.lambda_tol) ++rep.index;
      else if (x <= rep.lambda_tol) ++rep.nullity;
    }
    return rep;
  }
  rep.scale = largest_magnitude(jm.matrix);
  rep.lambda_tol = opts.lambda_tol_rel * rep.scale;
  rep.index = robust_negative_count(jm.matrix, -rep.lambda_tol, rep.scale);
  rep.nullity = robust_negative_count(jm.matrix, rep.lambda_tol, rep.scale) - rep.index;
  const int want = std::min(n, std::max(opts.report_count, rep.index + rep.nullity + 4));
  const DenseOrIterative low = shift_invert_lowest(jm.matrix, want, rep.scale, opts);
  rep.eigenvalues.assign(low.values.data(), low.values.data() + low.values.size());
  return rep;
}

Eigenpairs lowest_modes(const TorusMap& u, int count, const SpectrumOptions& opts) {
  Eigenpairs out;
  if (count <= 0) return out;
  const JacobiMatrix jm = jacobi_matrix(u);
  const int n = static_cast<int>(jm.matrix.rows());
  if (count > n) throw Error(Errc::BadInput, "more modes requested than unknowns");
  DenseOrIterative low;
  if (n <= 800) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(jm.matrix)};
    if (es.info() != Eigen::Success) throw Error(Errc::EigFailure, "dense eigensolve failed");
    low.values = es.eigenvalues().head(count);
    low.vectors = es.eigenvectors().leftCols(count);
    normalize_signs(low.vectors);
  } else {
    low = shift_invert_lowest(jm.matrix, count, largest_magnitude(jm.matrix), opts);
  }
  const LatticeGeometry g = u.geometry();
  const double unit = 1.0 / std::sqrt(g.cell * g.tau.imag());
  for (int c = 0; c < count; ++c) {
    out.values.push_back(low.values(c));
    out.sections.push_back(section_from_coordinates(u, jm.frames, unit * low.vectors.col(c)));
  }
  return out;
}

Eigen::MatrixXd energy_hessian(const TorusMap& u, std::span<const Section> basis, std::span<const double> s,
                               double h) {
  const int k = static_cast<int>(basis.size());
  auto f = [&](std::vector<double> c) { return energy(perturb(u, basis, c)); };
  const std::vector<double> s0(s.begin(), s.end());
  auto at = [&](int i, double di, int j, double dj) {
    std::vector<double> c = s0;
    if (i >= 0) c[static_cast<std::size_t>(i)] += di;
    if (j >= 0) c[static_cast<std::size_t>(j)] += dj;
    return f(c);
  };
  const double f0 = f(s0);
  Eigen::MatrixXd hess(k, k);
  for (int i = 0; i < k; ++i) {
    hess(i, i) = (at(i, h, -1, 0) - 2 * f0 + at(i, -h, -1, 0)) / (h * h);
    for (int j = 0; j < i; ++j) {
      const double v = (at(i, h, j, h) - at(i, h, j, -h) - at(i, -h, j, h) + at(i, -h, j, -h)) / (4 * h * h);
      hess(i, j) = hess(j, i) = v;
    }
  }
  return hess;
}

std::vector<std::vector<double>> ball_samples(int k) {
  std::vector<std::vector<double>> out{std::vector<double>(static_cast<std::size_t>(k), 0.0)};
  for (int i = 0; i < k; ++i)
    for (double r : {0.5, 1.0})
      for (double sign : {1.0, -1.0}) {
        std::vector<double> s(static_cast<std::size_t>(k), 0.0);
        s[static_cast<std::size_t>(i)] = sign * r;
        out.push_back(s);
      }
  const double d = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j)
      for (double si : {1.0, -1.0})
        for (double sj : {1.0, -1.0}) {
          std::vector<double> s(static_cast<std::size_t>(k), 0.0);
          s[static_cast<std::size_t>(i)] = si * d;
          s[static_cast<std::size_t>(j)] = sj * d;
          out.push_back(s);
        }
  return out;
}

double band_c0(const TorusMap& u, std::span<const Section> basis) {
  if (basis.empty()) return 1.0;
  double c0 = std::numeric_limits<double>::infinity();
  try {
    for (const auto& s : ball_samples(static_cast<int>(basis.size()))) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(energy_hessian(u, basis, s), Eigen::EigenvaluesOnly);
      const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
      if (!(hi < 0)) return 0.0;
      c0 = std::min({c0, -hi / 2, -1 / (2 * lo)});
    }
  } catch (const Error& e) {
    if (e.code() == Errc::LeftTube) return 0.0;
    throw;
  }
  return c0;
}

UnstableBasis unstable_basis(const TorusMap& u, int k, const SpectrumOptions& opts) {
  if (k < 0) throw Error(Errc::BadInput, "negative basis size");
  if (k == 0) return {};
  const IndexReport rep = morse_index(u, opts);
  if (rep.index < k) {
    std::ostringstream os;
    os << "index " << rep.index << " is below the requested " << k;
    throw Error(Errc::InsufficientIndex, os.str());
  }
  const Eigenpairs modes = lowest_modes(u, k, opts);
  std::vector<Section> base;
  for (int i = 0; i < k; ++i) base.push_back(modes.sections[static_cast<std::size_t>(i)].scaled(1.0 / std::sqrt(-modes.values[static_cast<std::size_t>(i)])));

  auto score = [&](double log_gamma) {
    std::vector<Section> b;
    for (const Section& x : base) b.push_back(x.scaled(std::exp(log_gamma)));
    return band_c0(u, b);
  };
  // coarse scan, then golden-section refinement around the best grid point
  const double lo = std::log(0.125), hi = std::log(2.0);
  const int grid = 12;
  int best = 0;
  double best_val = -1;
  for (int i = 0; i <= grid; ++i) {
    const double v = score(lo + (hi - lo) * i / grid);
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }
  double a = lo + (hi - lo) * std::max(0, best - 1) / grid, b = lo + (hi - lo) * std::min(grid, best + 1) / grid;
  const double phi = 0.5 * (std::sqrt(5.0) - 1);
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = score(x1), f2 = score(x2);
  for (int it = 0; it < 20; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = score(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = score(x1);
    }
  }
  double log_gamma = lo + (hi - lo) * best / grid;
  if (std::max(f1, f2) > best_val) {
    best_val = std::max(f1, f2);
    log_gamma = f1 > f2 ? x1 : x2;
  }
  if (!(best_val > 0)) throw Error(Errc::ConcavityFailure, "no scale keeps the surrogate Hessian in the band");
  UnstableBasis out;
  out.gamma = std::exp(log_gamma);
  for (const Section& x : base) out.sections.push_back(x.scaled(out.gamma));
  out.c0 = std::min(best_val * (1 - 1e-3), 1 - 1e-3);
  return out;
}

}  // namespace tmxl
