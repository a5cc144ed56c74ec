#pragma once

#include "tmxl/fields.hpp"

#include <Eigen/Sparse>

#include <vector>

namespace tmxl {

struct SpectrumOptions {
  double lambda_tol_rel = 1e-6;  // null band half-width relative to max |eigenvalue|
  double harmonic_tol = 1e-6;    // tension sup-norm accepted as harmonic
  bool strict_harmonic = false;  // throw NotHarmonic instead of recording the residual
  int dense_max_nodes = 32 * 32;
  int report_count = 0;  // eigenvalues listed by the iterative path; 0 lists index + nullity + 4
  double residual_tol = 1e-9;  // relative Ritz residual for the iterative path
  int max_iters = 2000;
};

struct IndexReport {
  std::vector<double> eigenvalues;  // ascending; all of them on the dense path, the lowest otherwise
  int index = 0;
  int nullity = 0;
  int total = 0;
  double lambda_tol = 0.0;
  double scale = 0.0;  // max |eigenvalue|
  double harmonic_residual = 0.0;
  bool dense = false;
  int positive() const { return total - index - nullity; }
};

// Tension sup-norm; throws NotHarmonic above the tolerance when strict.
double harmonic_residual(const TorusMap& u, const SpectrumOptions& opts);

// Second variation of the discrete energy along Pi(u + sX + tY):
//   cell * sum( -<X, L Y> + <L u, A(X, Y)> ),
// which is the curvature form of the index in the continuum (Gauss equation).
double index_form(const TorusMap& u, const Section& x, const Section& y);

// The L2-representative of the index form: int <J V, W> = I(V, W).
Section jacobi_apply(const TorusMap& u, const Section& v);

// Jacobi operator in per-node orthonormal tangent coordinates (coordinate k * dim + i at node k).
struct JacobiMatrix {
  Eigen::SparseMatrix<double> matrix;
  std::vector<SmallMatrix> frames;
};
JacobiMatrix jacobi_matrix(const TorusMap& u);

Section section_from_coordinates(const TorusMap& u, const std::vector<SmallMatrix>& frames,
                                 const Eigen::Ref<const Eigen::VectorXd>& xi);

IndexReport morse_index(const TorusMap& u, const SpectrumOptions& opts = {});

// Lowest eigenpairs of the Jacobi operator; sections have unit L2 norm.
struct Eigenpairs {
  std::vector<double> values;
  std::vector<Section> sections;
};
Eigenpairs lowest_modes(const TorusMap& u, int count, const SpectrumOptions& opts = {});

// Hessian in s of E(Pi(u + sum s_i X_i)) by central differences.
Eigen::MatrixXd energy_hessian(const TorusMap& u, std::span<const Section> basis, std::span<const double> s,
                               double h = 1e-3);

struct UnstableBasis {
  std::vector<Section> sections;
  double c0 = 1.0;
  double gamma = 1.0;  // common scale applied after normalizing I(X_i, X_i) = -1
};

// Hessian eigenvalues of the surrogate at the ball sample points lie in (-1/(2 c0), -2 c0).
std::vector<std::vector<double>> ball_samples(int k);
double band_c0(const TorusMap& u, std::span<const Section> basis);

UnstableBasis unstable_basis(const TorusMap& u, int k, const SpectrumOptions& opts = {});

}  // namespace tmxl
