#include "hbubble/map.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace hbubble;

namespace {

constexpr double kPi = std::numbers::pi;

SpectralField random_field(int L, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  SpectralField c(L);
  for (double& x : c.coeffs) x = g(rng);
  return c;
}

GridField samples_of(const QuadratureGrid& grid, auto&& f) {
  GridField out(grid.degree);
  for (int n = 0; n < grid.node_count(); ++n) out.samples[n] = f(Eigen::Vector3d(grid.unit_points.col(n)));
  return out;
}

}  // namespace

TEST(Grid, NodeCountsAndArea) {
  const auto g4 = build_grid(4);
  EXPECT_EQ(g4.nlat, 5);
  EXPECT_EQ(g4.nlon, 10);
  EXPECT_NEAR(g4.node_weights.sum(), 4 * kPi, 4 * kPi * 1e-12);
  const auto g16 = build_grid(16);
  EXPECT_EQ(g16.nlat, 17);
  EXPECT_EQ(g16.nlon, 34);
  for (int L : {4, 7, 16, 33, 64}) {
    const auto g = build_grid(L);
    EXPECT_NEAR(g.node_weights.sum(), 4 * kPi, 4 * kPi * 1e-12) << L;
    for (double s : g.sin_theta) EXPECT_GT(s, 0.0);
    for (int n = 0; n < g.node_count(); ++n) EXPECT_NEAR(g.unit_points.col(n).norm(), 1.0, 1e-14);
  }
}

TEST(Grid, DegreeOutOfRange) {
  EXPECT_THROW(build_grid(3), std::invalid_argument);
  EXPECT_THROW(build_grid(257), std::invalid_argument);
  EXPECT_NO_THROW(build_grid(256));
}

TEST(Grid, Deterministic) {
  const auto a = build_grid(12), b = build_grid(12);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.lat_weights, b.lat_weights);
}

TEST(Integrate, Moments) {
  const auto g = build_grid(16);
  EXPECT_NEAR(integrate(g, samples_of(g, [](const Eigen::Vector3d&) { return 1.0; })), 4 * kPi, 1e-12);
  EXPECT_NEAR(integrate(g, samples_of(g, [](const Eigen::Vector3d& s) { return s.z() * s.z(); })),
              4 * kPi / 3, 1e-13);
  EXPECT_NEAR(integrate(g, samples_of(g, [](const Eigen::Vector3d& s) { return s.z(); })), 0.0, 1e-14);
}

TEST(Transform, ConstantAndCoordinate) {
  auto grid = std::make_shared<QuadratureGrid>(build_grid(8));
  SphericalTransform t(8, grid);
  const SpectralField one = t.analyze(samples_of(*grid, [](const Eigen::Vector3d&) { return 1.0; }));
  for (int i = 1; i < one.size(); ++i) EXPECT_NEAR(one.coeffs[i], 0.0, 1e-14);
  EXPECT_NEAR(one(0, 0), std::sqrt(4 * kPi), 1e-13);
  const SpectralField z = t.analyze(samples_of(*grid, [](const Eigen::Vector3d& s) { return s.z(); }));
  for (int l = 0; l <= 8; ++l)
    for (int m = -l; m <= l; ++m)
      if (l != 1) {
        EXPECT_NEAR(z(l, m), 0.0, 1e-14);
      }
  EXPECT_NEAR(z(1, 0), std::sqrt(4 * kPi / 3), 1e-13);
}

TEST(Transform, RoundTripRandom) {
  for (int L : {4, 16, 31}) {
    auto grid = std::make_shared<QuadratureGrid>(build_grid(L));
    SphericalTransform t(L, grid);
    const SpectralField c = random_field(L, 17 + L);
    const SpectralField back = t.analyze(t.synthesize(c));
    double err = 0.0;
    for (int i = 0; i < c.size(); ++i) err = std::max(err, std::abs(back.coeffs[i] - c.coeffs[i]));
    EXPECT_LE(err, 1e-12) << "L=" << L;
  }
}

TEST(Transform, PaddedGridProjectionIsExact) {
  auto fine = std::make_shared<QuadratureGrid>(detail::make_grid(24));
  SphericalTransform t(16, fine);
  const SpectralField c = random_field(16, 5);
  const SpectralField back = t.analyze(t.synthesize(c));
  for (int i = 0; i < c.size(); ++i) EXPECT_NEAR(back.coeffs[i], c.coeffs[i], 1e-12);
}

TEST(Transform, DegreeMismatch) {
  auto grid = std::make_shared<QuadratureGrid>(build_grid(8));
  SphericalTransform t(8, grid);
  EXPECT_THROW(t.synthesize(SpectralField(7)), std::invalid_argument);
  EXPECT_THROW(t.analyze(GridField(9)), std::invalid_argument);
}

TEST(Orthonormality, ProductsOfHarmonics) {
  const int L = 10;
  auto grid = std::make_shared<QuadratureGrid>(build_grid(L));
  SphericalTransform t(L, grid);
  const int n = sh_count(L);
  std::vector<GridField> basis;
  for (int i = 0; i < n; ++i) {
    SpectralField c(L);
    c.coeffs[i] = 1.0;
    basis.push_back(t.synthesize(c));
  }
  double worst = 0.0;
  for (int l = 0; l <= L; ++l)
    for (int m = -l; m <= l; ++m)
      for (int lp = 0; lp + l <= 2 * L - 1 && lp <= L; ++lp)
        for (int mp = -lp; mp <= lp; ++mp) {
          const int a = sh_index(l, m), b = sh_index(lp, mp);
          const double v = grid->node_weights.dot(basis[a].vec().cwiseProduct(basis[b].vec()));
          worst = std::max(worst, std::abs(v - (a == b ? 1.0 : 0.0)));
        }
  EXPECT_LE(worst, 1e-11);
}

TEST(SurfaceGradient, ConstantAndZCoordinate) {
  auto grid = std::make_shared<QuadratureGrid>(build_grid(12));
  SphericalTransform t(12, grid);
  const auto dc = surface_gradient(t, samples_of(*grid, [](const Eigen::Vector3d&) { return 3.0; }));
  EXPECT_LE(dc.d1.vec().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(dc.d2.vec().cwiseAbs().maxCoeff(), 1e-12);
  const auto dz = surface_gradient(t, samples_of(*grid, [](const Eigen::Vector3d& s) { return s.z(); }));
  const Eigen::VectorXd g2 = dz.d1.vec().array().square() + dz.d2.vec().array().square();
  EXPECT_NEAR(integrate(*grid, g2), 8 * kPi / 3, 1e-12);
  // d_theta z = -sin(theta), d_phi z = 0
  for (int i = 0; i < grid->nlat; ++i)
    for (int j = 0; j < grid->nlon; ++j) {
      EXPECT_NEAR(dz.d1.samples[grid->node(i, j)], -grid->sin_theta[i], 1e-12);
      EXPECT_NEAR(dz.d2.samples[grid->node(i, j)], 0.0, 1e-12);
    }
}

TEST(SurfaceGradient, MatchesAnalyticBasisDerivatives) {
  // Y ~ x y z is degree 3; compare with the analytic tangential gradient.
  auto grid = std::make_shared<QuadratureGrid>(build_grid(6));
  SphericalTransform t(6, grid);
  const auto f = samples_of(*grid, [](const Eigen::Vector3d& s) { return s.x() * s.y() * s.z(); });
  const auto d = surface_gradient(t, f);
  double err = 0.0;
  for (int i = 0; i < grid->nlat; ++i)
    for (int j = 0; j < grid->nlon; ++j) {
      const double th = grid->theta[i], ph = grid->phi[j];
      const Eigen::Vector3d s = grid->unit_points.col(grid->node(i, j));
      const Eigen::Vector3d grad(s.y() * s.z(), s.x() * s.z(), s.x() * s.y());
      const Eigen::Vector3d e1(std::cos(th) * std::cos(ph), std::cos(th) * std::sin(ph), -std::sin(th));
      const Eigen::Vector3d e2(-std::sin(ph), std::cos(ph), 0.0);
      err = std::max(err, std::abs(d.d1.samples[grid->node(i, j)] - grad.dot(e1)));
      err = std::max(err, std::abs(d.d2.samples[grid->node(i, j)] - grad.dot(e2)));
    }
  EXPECT_LE(err, 1e-10);
}

TEST(SurfaceGradient, IntegrationByParts) {
  const int L = 14;
  auto grid = std::make_shared<QuadratureGrid>(detail::make_grid(L + 1));
  SphericalTransform t(L, grid);
  const SpectralField f = random_field(L, 3), g = random_field(L, 4);
  const auto df = t.gradient(f), dg = t.gradient(g);
  const Eigen::VectorXd dot = df.d1.vec().cwiseProduct(dg.d1.vec()) + df.d2.vec().cwiseProduct(dg.d2.vec());
  const double lhs = grid->node_weights.dot(dot);
  const double rhs = -f.vec().dot(laplace_beltrami(g).vec());
  EXPECT_NEAR(lhs, rhs, 1e-9 * std::abs(rhs));
  // self pairing on the native grid of the same degree
  auto native = std::make_shared<QuadratureGrid>(build_grid(L));
  SphericalTransform tn(L, native);
  const auto dn = tn.gradient(f);
  const Eigen::VectorXd g2 = dn.d1.vec().array().square() + dn.d2.vec().array().square();
  const double self = -f.vec().dot(laplace_beltrami(f).vec());
  EXPECT_NEAR(integrate(*native, g2), self, 1e-9 * self);
}

TEST(LaplaceBeltrami, Eigenvalues) {
  SpectralField c(4);
  c(0, 0) = 2.0;
  c(1, -1) = 1.5;
  c(3, 2) = 1.0;
  const SpectralField d = laplace_beltrami(c);
  EXPECT_EQ(d(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(d(1, -1), -3.0);
  EXPECT_DOUBLE_EQ(d(3, 2), -12.0);
}

TEST(LaplaceBeltrami, BaseBubbleCoordinates) {
  auto disc = make_discretization(8);
  const MapS2R3 u0 = base_bubble(disc);
  for (int k = 0; k < 3; ++k) {
    const SpectralField lap = laplace_beltrami(u0.component(k));
    const GridField s = disc->native().synthesize(lap);
    for (int n = 0; n < disc->grid().node_count(); ++n)
      EXPECT_NEAR(s.samples[n], 2.0 * disc->grid().unit_points(k, n), 1e-12);
  }
}

TEST(Riesz, Multipliers) {
  SpectralField f(6);
  f(0, 0) = 5.0;
  EXPECT_DOUBLE_EQ(riesz_represent(f)(0, 0), 5.0);
  SpectralField g(6);
  g(1, 0) = 3.0;
  g(1, 1) = -6.0;
  const SpectralField w = riesz_represent(g);
  EXPECT_DOUBLE_EQ(w(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(w(1, 1), -2.0);
}

TEST(Riesz, ResidualAndPairing) {
  const int L = 12;
  auto grid = std::make_shared<QuadratureGrid>(build_grid(L));
  SphericalTransform t(L, grid);
  const SpectralField f = random_field(L, 9);
  const SpectralField w = riesz_represent(t, t.synthesize(f));
  SpectralField back = laplace_beltrami(w);
  double err = 0.0;
  for (int i = 0; i < f.size(); ++i) err = std::max(err, std::abs(-back.coeffs[i] + w.coeffs[i] - f.coeffs[i]));
  EXPECT_LE(err, 1e-12);
  // <w, phi> = int grad w . grad phi + int w phi reproduces int f phi
  const SpectralField phi = random_field(L, 10);
  const double pairing = -w.vec().dot(laplace_beltrami(phi).vec()) + w.vec().dot(phi.vec());
  const double direct = grid->node_weights.dot(t.synthesize(f).vec().cwiseProduct(t.synthesize(phi).vec()));
  EXPECT_NEAR(pairing, direct, 1e-10 * std::abs(direct));
}

TEST(OmegaChart, Values) {
  const auto a = omega_chart(0, 0);
  EXPECT_DOUBLE_EQ(a.mu, 2.0);
  EXPECT_NEAR((a.point - Eigen::Vector3d(0, 0, -1)).norm(), 0.0, 1e-15);
  const auto b = omega_chart(1, 0);
  EXPECT_DOUBLE_EQ(b.mu, 1.0);
  EXPECT_NEAR((b.point - Eigen::Vector3d(1, 0, 0)).norm(), 0.0, 1e-15);
  const auto c = omega_chart(1e8, -3e7);
  EXPECT_NEAR((c.point - Eigen::Vector3d(0, 0, 1)).norm(), 0.0, 1e-7);
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int i = 0; i < 100; ++i) {
    const auto q = omega_chart(u(rng), u(rng));
    EXPECT_NEAR(q.point.norm(), 1.0, 1e-15);
    EXPECT_GT(q.mu, 0.0);
    EXPECT_LE(q.mu, 2.0);
  }
}

TEST(BaseBubble, ValuesAndEquation) {
  auto disc = make_discretization(16);
  const MapS2R3 u0 = base_bubble(disc);
  const auto& g = disc->grid();
  double worst = 0.0;
  for (int n = 0; n < g.node_count(); ++n) {
    const Eigen::Vector3d s = g.unit_points.col(n);
    worst = std::max(worst, (u0.values().col(n) + s).norm());
    EXPECT_NEAR(u0.values().col(n).norm(), 1.0, 1e-13);
    const Eigen::Vector3d J = u0.d1().col(n).cross(u0.d2().col(n));
    EXPECT_LE((J + u0.values().col(n)).norm(), 1e-12);
  }
  EXPECT_LE(worst, 1e-13);
  // a node at the north pole does not exist, but the formula evaluated at theta=0
  double v, d1, d2;
  SphericalTransform::evaluate_point(16, u0.coeffs().data() + 2 * disc->coeff_count(), 1e-9, 0.0, v, d1, d2);
  EXPECT_NEAR(v, -1.0, 1e-12);
  // Delta u0 - 2 J(u0) = 0
  for (int k = 0; k < 3; ++k) {
    const GridField lap = disc->native().synthesize(laplace_beltrami(u0.component(k)));
    for (int n = 0; n < g.node_count(); ++n) {
      const Eigen::Vector3d J = u0.d1().col(n).cross(u0.d2().col(n));
      EXPECT_NEAR(lap.samples[n] - 2.0 * J[k], 0.0, 1e-12);
    }
  }
  EXPECT_LE(u0.sync_error(), 1e-12);
}

TEST(ChartConsistency, DirichletOnLargeDisk) {
  // int_{R^2} |grad (v o omega)|^2 dx dy == int_{S^2} |grad v|^2 (conformal invariance)
  const int L = 6;
  auto grid = std::make_shared<QuadratureGrid>(build_grid(L));
  SphericalTransform t(L, grid);
  SpectralField v = random_field(L, 21);
  for (int l = 4; l <= L; ++l)
    for (int m = -l; m <= l; ++m) v(l, m) = 0.0;
  const double sphere = -v.vec().dot(laplace_beltrami(v).vec());
  auto value = [&](double x, double y) {
    const Eigen::Vector3d p = omega_chart(x, y).point;
    const double th = std::acos(std::clamp(p.z(), -1.0, 1.0));
    const double ph = std::atan2(p.y(), p.x());
    double f, a, b;
    SphericalTransform::evaluate_point(L, v.coeffs.data(), th, ph, f, a, b);
    return f;
  };
  const double R = 400.0;
  const auto [sx, sw] = gauss_legendre(200);
  const int nang = 64;
  double chart = 0.0;
  const double smax = std::atan(R);
  for (std::size_t i = 0; i < sx.size(); ++i) {
    const double s = 0.5 * smax * (sx[i] + 1.0);
    const double r = std::tan(s);
    const double jac = 0.5 * smax * sw[i] / (std::cos(s) * std::cos(s));
    for (int j = 0; j < nang; ++j) {
      const double a = 2 * kPi * j / nang;
      const double x = r * std::cos(a), y = r * std::sin(a);
      const double h = 1e-6 * std::max(1.0, r);
      const double gx = (value(x + h, y) - value(x - h, y)) / (2 * h);
      const double gy = (value(x, y + h) - value(x, y - h)) / (2 * h);
      chart += (gx * gx + gy * gy) * r * jac * (2 * kPi / nang);
    }
  }
  EXPECT_NEAR(chart, sphere, 1e-3 * sphere);
}
