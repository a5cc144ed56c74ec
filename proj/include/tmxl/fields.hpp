#pragma once

#include "tmxl/common.hpp"
#include "tmxl/moduli.hpp"
#include "tmxl/targets.hpp"

#include <functional>
#include <span>
#include <vector>

namespace tmxl {

inline constexpr int kMinGrid = 8;
inline constexpr double kNodeTolerance = 1e-9;

// Coefficients of the flat metric |dz|^2, z = a + b tau, pulled back to the unit square.
// The Dirichlet energy reads cell * sum [alpha |D_a u|^2 + gamma |D_b u|^2 + 2 beta <D_a u, D_b u>].
struct LatticeGeometry {
  LatticeGeometry(Complex tau, int na, int nb);

  Complex tau;
  int na, nb;
  double ha, hb, cell;
  double alpha, beta, gamma;

  Complex position(double a, double b) const { return a + b * tau; }
  int wrap_a(int i) const { return ((i % na) + na) % na; }
  int wrap_b(int j) const { return ((j % nb) + nb) % nb; }
  int index(int i, int j) const { return wrap_a(i) * nb + wrap_b(j); }
};

// Grid map T_tau -> M. Node (i, j) sits at lattice coordinates (i/na, j/nb); storage is
// row-major over i with N doubles per node.
class TorusMap {
 public:
  TorusMap(Target target, Mark mark, int na, int nb, std::vector<double> nodes);

  // Samples f(a, b) (ambient points, projected onto M) on the grid.
  static TorusMap sample(const Target& target, Mark mark, int na, int nb,
                         const std::function<Point(double, double)>& f);
  static TorusMap constant(const Target& target, Mark mark, int na, int nb, PointRef value);

  const Target& target() const { return target_; }
  Mark mark() const { return mark_; }
  Complex tau() const { return mark_.tau(); }
  int na() const { return na_; }
  int nb() const { return nb_; }
  int ambient_dim() const { return target_.ambient_dim(); }
  int node_count() const { return na_ * nb_; }
  LatticeGeometry geometry() const { return LatticeGeometry(tau(), na_, nb_); }

  std::span<const double> data() const { return nodes_; }
  Eigen::Map<const Eigen::VectorXd> node(int flat) const {
    return Eigen::Map<const Eigen::VectorXd>(nodes_.data() + static_cast<std::size_t>(flat) * ambient_dim(),
                                             ambient_dim());
  }
  Eigen::Map<const Eigen::VectorXd> node(int i, int j) const { return node(geometry_index(i, j)); }
  int geometry_index(int i, int j) const { return ((i % na_ + na_) % na_) * nb_ + ((j % nb_ + nb_) % nb_); }

  // Same node array on another lattice (identity in lattice coordinates).
  TorusMap with_mark(Mark m) const;

  // Bilinear interpolation in lattice coordinates followed by projection (periodic).
  Point interpolate(double a, double b) const;

  bool same_grid(const TorusMap& o) const {
    return na_ == o.na_ && nb_ == o.nb_ && ambient_dim() == o.ambient_dim();
  }

 private:
  struct Trusted {};
  TorusMap(Trusted, Target target, Mark mark, int na, int nb, std::vector<double> nodes);
  friend class MapBuilder;

  Target target_;
  Mark mark_;
  int na_, nb_;
  std::vector<double> nodes_;
};

// Internal constructor path for nodes produced by projection (skips re-validation).
class MapBuilder {
 public:
  static TorusMap trusted(Target target, Mark mark, int na, int nb, std::vector<double> nodes) {
    return TorusMap(TorusMap::Trusted{}, std::move(target), mark, na, nb, std::move(nodes));
  }
};

enum class Flavor { Ambient, Tangential };

// Vector field along a TorusMap, stored like the map's nodes.
class Section {
 public:
  Section(const TorusMap& base, std::vector<double> values, Flavor flavor);
  static Section zeros(const TorusMap& base, Flavor flavor);
  static Section sample(const TorusMap& base, Flavor flavor, const std::function<Point(int i, int j)>& f);

  int na() const { return na_; }
  int nb() const { return nb_; }
  int ambient_dim() const { return dim_; }
  Flavor flavor() const { return flavor_; }
  std::span<const double> data() const { return values_; }
  std::span<double> data() { return values_; }
  Eigen::Map<const Eigen::VectorXd> value(int flat) const {
    return Eigen::Map<const Eigen::VectorXd>(values_.data() + static_cast<std::size_t>(flat) * dim_, dim_);
  }
  Eigen::Map<Eigen::VectorXd> value(int flat) {
    return Eigen::Map<Eigen::VectorXd>(values_.data() + static_cast<std::size_t>(flat) * dim_, dim_);
  }
  bool fits(const TorusMap& u) const { return na_ == u.na() && nb_ == u.nb() && dim_ == u.ambient_dim(); }
  double sup_norm() const;
  // Rescaling keeps the flavor.
  Section scaled(double s) const;
  Section plus(const Section& o, double s) const;
  // Ambient copy projected to the tangent spaces of u.
  Section tangential_part(const TorusMap& u) const;
  // L2(T_tau) inner product with area element Im(tau) da db.
  double inner(const Section& o, const LatticeGeometry& g) const;

 private:
  int na_, nb_, dim_;
  Flavor flavor_;
  std::vector<double> values_;
};

// Per-node share of the Dirichlet energy of an R^N-valued grid field; the shares sum to the energy
// and each is a nonnegative average of four one-sided quadrant forms.
std::vector<double> dirichlet_density(const LatticeGeometry& g, std::span<const double> values, int dim);
double dirichlet_energy(const LatticeGeometry& g, std::span<const double> values, int dim);

// Energy density from a five-point star: centre and the +a, -a, +b, -b neighbours.
double star_density(const LatticeGeometry& g, const double* c, const double* ap, const double* am, const double* bp,
                    const double* bm, int dim);

double energy(const TorusMap& u);
std::vector<double> energy_density(const TorusMap& u);
double area(const TorusMap& u);

// Discrete pulled-back Laplacian L (lattice coordinates); grad E = -cell * L u.
std::vector<double> lattice_laplacian(const LatticeGeometry& g, std::span<const double> values, int dim);
void laplacian_at(const LatticeGeometry& g, std::span<const double> values, int dim, int i, int j, double* out);

// Tangential part of L u / Im tau at each node.
Section tension(const TorusMap& u);

TorusMap perturb(const TorusMap& u, const Section& x, double s);
TorusMap perturb(const TorusMap& u, std::span<const Section> xs, std::span<const double> s);

struct VariationDerivatives {
  double first = 0.0;   // dE/ds
  double second = 0.0;  // d2E/ds2
  double mixed = 0.0;   // d2E/ds dt
};

VariationDerivatives variation_derivatives(const TorusMap& u, const Section& x, const Section& y, double h = 1e-4);

// u composed with the affine lattice identification: same node array, new mark.
TorusMap iota_pullback(const TorusMap& u, Mark target_mark);

// u(a + da, b + db) on the same grid (periodic); exact node permutation when the shift is on-grid.
TorusMap shifted(const TorusMap& u, double da, double db);

}  // namespace tmxl
