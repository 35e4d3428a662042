#pragma once

#include "hbubble/grid.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace hbubble {

/// Index of the real harmonic Y_lm in a degree-L coefficient vector.
/// m >= 0 selects the cos(m phi) member, m < 0 the sin(|m| phi) member.
constexpr int sh_index(int l, int m) { return l * l + l + m; }
constexpr int sh_count(int L) { return (L + 1) * (L + 1); }

/// Scalar field on S^2 as real orthonormal spherical-harmonic coefficients.
struct SpectralField {
  int degree = 0;
  std::vector<double> coeffs;

  SpectralField() = default;
  explicit SpectralField(int L) : degree(L), coeffs(sh_count(L), 0.0) {}

  double& operator()(int l, int m) { return coeffs[sh_index(l, m)]; }
  double operator()(int l, int m) const { return coeffs[sh_index(l, m)]; }
  int size() const { return static_cast<int>(coeffs.size()); }

  Eigen::Map<Eigen::VectorXd> vec() { return {coeffs.data(), size()}; }
  Eigen::Map<const Eigen::VectorXd> vec() const { return {coeffs.data(), size()}; }
};

/// Scalar samples at the nodes of a QuadratureGrid of the same degree.
struct GridField {
  int degree = 0;
  std::vector<double> samples;

  GridField() = default;
  explicit GridField(int L) : degree(L), samples((L + 1) * (2 * L + 2), 0.0) {}

  int size() const { return static_cast<int>(samples.size()); }
  Eigen::Map<Eigen::VectorXd> vec() { return {samples.data(), size()}; }
  Eigen::Map<const Eigen::VectorXd> vec() const { return {samples.data(), size()}; }
};

/// u_{e1} = d_theta u and u_{e2} = (1/sin theta) d_phi u at the grid nodes.
struct FrameDerivatives {
  GridField d1;
  GridField d2;
};

/// Analysis/synthesis between degree-L coefficients and a (possibly finer)
/// Gauss-Legendre grid. Immutable after construction.
class SphericalTransform {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  SphericalTransform(int band, std::shared_ptr<const QuadratureGrid> grid)
      : band_(band), grid_(std::move(grid)) {
    if (band_ < 0) throw std::invalid_argument("SphericalTransform: negative band limit");
    if (band_ > grid_->degree)
      throw std::invalid_argument("SphericalTransform: band limit exceeds grid degree");
    build_tables();
  }

  int band() const { return band_; }
  const QuadratureGrid& grid() const { return *grid_; }
  std::shared_ptr<const QuadratureGrid> grid_ptr() const { return grid_; }
  int coeff_count() const { return sh_count(band_); }
  int node_count() const { return grid_->node_count(); }

  /// Normalized associated Legendre values Lambda_lm(theta_ring), l >= m.
  double lambda(int ring, int l, int m) const { return lam_[m](ring, l - m); }

  // Raw kernels. Coefficients are contiguous (coeff_count), samples ring-major.
  void synthesize(const double* c, double* out) const { synth_with(lam_, c, out, false); }
  void synthesize_d1(const double* c, double* out) const { synth_with(dlam_, c, out, false); }
  void synthesize_d2(const double* c, double* out) const { synth_with(mlam_, c, out, true); }

  void analyze(const double* f, double* c) const {
    const auto& g = *grid_;
    Eigen::Map<const RowMatrix> F(f, g.nlat, g.nlon);
    Eigen::MatrixXd B = (F * trig_.transpose()) * g.dphi;  // nlat x (2L+1)
    for (int i = 0; i < g.nlat; ++i) B.row(i) *= g.lat_weights[i];
    for (int m = 0; m <= band_; ++m) {
      const Eigen::VectorXd cc = lam_[m].transpose() * B.col(cos_slot(m));
      for (int l = m; l <= band_; ++l) c[sh_index(l, m)] = cc[l - m];
      if (m > 0) {
        const Eigen::VectorXd cs = lam_[m].transpose() * B.col(sin_slot(m));
        for (int l = m; l <= band_; ++l) c[sh_index(l, -m)] = cs[l - m];
      }
    }
  }

  // Typed wrappers.
  GridField synthesize(const SpectralField& c) const {
    check_band(c);
    GridField f(grid_->degree);
    synthesize(c.coeffs.data(), f.samples.data());
    return f;
  }

  SpectralField analyze(const GridField& f) const {
    if (f.degree != grid_->degree)
      throw std::invalid_argument("analyze: grid field degree does not match the grid");
    SpectralField c(band_);
    analyze(f.samples.data(), c.coeffs.data());
    return c;
  }

  FrameDerivatives gradient(const SpectralField& c) const {
    check_band(c);
    FrameDerivatives d{GridField(grid_->degree), GridField(grid_->degree)};
    synthesize_d1(c.coeffs.data(), d.d1.samples.data());
    synthesize_d2(c.coeffs.data(), d.d2.samples.data());
    return d;
  }

  /// Value and frame derivatives of a coefficient vector at one point.
  static void evaluate_point(int L, const double* c, double theta, double phi, double& value,
                             double& d1, double& d2) {
    const double x = std::cos(theta), s = std::sin(theta);
    value = d1 = d2 = 0.0;
    std::vector<double> lam(L + 1), prev(L + 1);
    for (int m = 0; m <= L; ++m) {
      column(L, m, x, s, lam);
      const double cm = std::cos(m * phi), sm = std::sin(m * phi);
      const double f = m == 0 ? 1.0 : std::numbers::sqrt2;
      for (int l = m; l <= L; ++l) {
        const double lm = lam[l - m];
        const double dl = dtheta(l, m, x, s, lm, l > m ? lam[l - m - 1] : 0.0);
        const double cc = c[sh_index(l, m)];
        const double cs = m > 0 ? c[sh_index(l, -m)] : 0.0;
        value += f * lm * (cc * cm + cs * sm);
        d1 += f * dl * (cc * cm + cs * sm);
        d2 += f * (m * lm / s) * (-cc * sm + cs * cm);
      }
    }
  }

 private:
  static int cos_slot(int m) { return m == 0 ? 0 : 2 * m - 1; }
  static int sin_slot(int m) { return 2 * m; }

  void check_band(const SpectralField& c) const {
    if (c.degree != band_)
      throw std::invalid_argument("spectral field degree does not match the transform");
  }

  // Lambda_lm(x) for l = m..L at one colatitude (x = cos, s = sin).
  static void column(int L, int m, double x, double s, std::vector<double>& out) {
    double pmm = 1.0 / std::sqrt(4.0 * std::numbers::pi);
    for (int k = 1; k <= m; ++k) pmm *= std::sqrt((2.0 * k + 1.0) / (2.0 * k)) * s;
    out[0] = pmm;
    if (m == L) return;
    out[1] = std::sqrt(2.0 * m + 3.0) * x * pmm;
    for (int l = m + 2; l <= L; ++l) {
      const double a = std::sqrt((4.0 * l * l - 1.0) / (static_cast<double>(l) * l - m * m));
      const double b = std::sqrt(((l - 1.0) * (l - 1.0) - m * m) / (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
      out[l - m] = a * (x * out[l - m - 1] - b * out[l - m - 2]);
    }
  }

  // d Lambda_lm / d theta from Lambda_lm and Lambda_{l-1,m}.
  static double dtheta(int l, int m, double x, double s, double lam_lm, double lam_prev) {
    const double k = std::sqrt((2.0 * l + 1.0) * (static_cast<double>(l) * l - m * m) / (2.0 * l - 1.0));
    return (l * x * lam_lm - (l > m ? k * lam_prev : 0.0)) / s;
  }

  void build_tables() {
    const auto& g = *grid_;
    const int L = band_;
    lam_.resize(L + 1);
    dlam_.resize(L + 1);
    mlam_.resize(L + 1);
    std::vector<double> col(L + 1);
    for (int m = 0; m <= L; ++m) {
      lam_[m].resize(g.nlat, L - m + 1);
      dlam_[m].resize(g.nlat, L - m + 1);
      mlam_[m].resize(g.nlat, L - m + 1);
      for (int i = 0; i < g.nlat; ++i) {
        const double x = g.cos_theta[i], s = g.sin_theta[i];
        column(L, m, x, s, col);
        for (int l = m; l <= L; ++l) {
          lam_[m](i, l - m) = col[l - m];
          dlam_[m](i, l - m) = dtheta(l, m, x, s, col[l - m], l > m ? col[l - m - 1] : 0.0);
          mlam_[m](i, l - m) = m * col[l - m] / s;
        }
      }
    }
    trig_.resize(2 * L + 1, g.nlon);
    for (int j = 0; j < g.nlon; ++j) {
      trig_(0, j) = 1.0;
      for (int m = 1; m <= L; ++m) {
        trig_(cos_slot(m), j) = std::numbers::sqrt2 * std::cos(m * g.phi[j]);
        trig_(sin_slot(m), j) = std::numbers::sqrt2 * std::sin(m * g.phi[j]);
      }
    }
  }

  // phi_derivative: the table already holds m/sin(theta); the longitude
  // derivative maps (cos, sin) coefficients to (sin, -cos) slots.
  void synth_with(const std::vector<Eigen::MatrixXd>& tab, const double* c, double* out,
                  bool phi_derivative) const {
    const auto& g = *grid_;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(g.nlat, 2 * band_ + 1);
    Eigen::VectorXd cc, cs;
    for (int m = 0; m <= band_; ++m) {
      cc.resize(band_ - m + 1);
      cs.setZero(band_ - m + 1);
      for (int l = m; l <= band_; ++l) {
        cc[l - m] = c[sh_index(l, m)];
        if (m > 0) cs[l - m] = c[sh_index(l, -m)];
      }
      if (!phi_derivative) {
        A.col(cos_slot(m)) = tab[m] * cc;
        if (m > 0) A.col(sin_slot(m)) = tab[m] * cs;
      } else if (m > 0) {
        A.col(cos_slot(m)) = tab[m] * cs;
        A.col(sin_slot(m)) = -(tab[m] * cc);
      }
    }
    Eigen::Map<RowMatrix> F(out, g.nlat, g.nlon);
    F.noalias() = A * trig_;
  }

  int band_;
  std::shared_ptr<const QuadratureGrid> grid_;
  std::vector<Eigen::MatrixXd> lam_, dlam_, mlam_;
  Eigen::MatrixXd trig_;
};

inline constexpr double kDefaultPadding = 2.0;

/// Native grid plus a padded grid for de-aliased nonlinear products, shared
/// read-only by every map of the same degree.
class SphereDiscretization {
 public:
  SphereDiscretization(int L, double padding = kDefaultPadding)
      : degree_(L),
        padding_(padding),
        grid_(std::make_shared<QuadratureGrid>(build_grid(L))),
        fine_grid_(std::make_shared<QuadratureGrid>(
            detail::make_grid(std::max(L, static_cast<int>(std::ceil(padding * L)))))),
        native_(L, grid_),
        fine_(L, fine_grid_) {
    if (padding < 1.0) throw std::invalid_argument("padding factor must be >= 1");
  }

  int degree() const { return degree_; }
  double padding() const { return padding_; }
  int coeff_count() const { return sh_count(degree_); }
  const QuadratureGrid& grid() const { return *grid_; }
  const QuadratureGrid& fine_grid() const { return *fine_grid_; }
  const SphericalTransform& native() const { return native_; }
  const SphericalTransform& fine() const { return fine_; }

 private:
  int degree_;
  double padding_;
  std::shared_ptr<const QuadratureGrid> grid_, fine_grid_;
  SphericalTransform native_, fine_;
};

inline std::shared_ptr<const SphereDiscretization> make_discretization(int L, double padding = kDefaultPadding) {
  return std::make_shared<const SphereDiscretization>(L, padding);
}

// ---------------------------------------------------------------------------
// Free operations on the native grid.

inline double integrate(const QuadratureGrid& grid, const GridField& f) {
  if (f.degree != grid.degree) throw std::invalid_argument("integrate: degree mismatch");
  return grid.node_weights.dot(f.vec());
}

inline double integrate(const QuadratureGrid& grid, const Eigen::Ref<const Eigen::VectorXd>& f) {
  if (f.size() != grid.node_count()) throw std::invalid_argument("integrate: size mismatch");
  return grid.node_weights.dot(f);
}

/// Multiplies coefficient (l,m) by -l(l+1).
inline SpectralField laplace_beltrami(const SpectralField& c) {
  SpectralField out = c;
  for (int l = 0; l <= c.degree; ++l)
    for (int m = -l; m <= l; ++m) out(l, m) *= -static_cast<double>(l) * (l + 1);
  return out;
}

inline FrameDerivatives surface_gradient(const SphericalTransform& t, const SpectralField& c) {
  return t.gradient(c);
}

inline FrameDerivatives surface_gradient(const SphericalTransform& t, const GridField& f) {
  return t.gradient(t.analyze(f));
}

/// Solves (-Delta + 1) w = f spectrally.
inline SpectralField riesz_represent(const SpectralField& f) {
  SpectralField w = f;
  for (int l = 0; l <= f.degree; ++l)
    for (int m = -l; m <= l; ++m) w(l, m) /= static_cast<double>(l) * (l + 1) + 1.0;
  return w;
}

inline SpectralField riesz_represent(const SphericalTransform& t, const GridField& f) {
  return riesz_represent(t.analyze(f));
}

struct ChartPoint {
  Eigen::Vector3d point;
  double mu;
};

/// Inverse stereographic chart (mu x, mu y, 1 - mu), mu = 2/(1+x^2+y^2).
inline ChartPoint omega_chart(double x, double y) {
  const double mu = 2.0 / (1.0 + x * x + y * y);
  return {Eigen::Vector3d(mu * x, mu * y, 1.0 - mu), mu};
}

}  // namespace hbubble
