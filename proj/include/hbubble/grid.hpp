#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hbubble {

namespace detail {

// (P_n(z), P_{n-1}(z)) by the three-term recurrence.
inline std::pair<double, double> legendre_pair(int n, double z) {
  double prev = 1.0, cur = z;
  if (n == 0) return {1.0, 0.0};
  for (int k = 2; k <= n; ++k) {
    const double next = ((2.0 * k - 1.0) * z * cur - (k - 1.0) * prev) / k;
    prev = cur;
    cur = next;
  }
  return {cur, prev};
}

}  // namespace detail

/// Gauss-Legendre nodes on [-1,1] in descending order with matching weights.
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be positive");
  std::vector<double> x(n), w(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      const auto [pn, pm] = detail::legendre_pair(n, z);
      const double dp = n * (z * pn - pm) / (z * z - 1.0);
      const double dz = pn / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    const auto [pn, pm] = detail::legendre_pair(n, z);
    const double dp = n * (z * pn - pm) / (z * z - 1.0);
    x[i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

/// Gauss-Legendre (colatitude) x uniform (longitude) product grid on S^2.
///
/// Nodes are stored ring-major: node = ring * nlon + j. The grid of degree L
/// integrates exactly every polynomial of degree <= 2L+1 restricted to S^2.
struct QuadratureGrid {
  int degree = 0;
  int nlat = 0;
  int nlon = 0;
  std::vector<double> theta;
  std::vector<double> cos_theta;
  std::vector<double> sin_theta;
  std::vector<double> lat_weights;  // Gauss-Legendre weights in cos(theta)
  std::vector<double> phi;
  double dphi = 0.0;
  Eigen::Matrix3Xd unit_points;  // sigma(theta_i, phi_j), one column per node
  Eigen::VectorXd node_weights;  // lat_weight * dphi

  int node_count() const { return nlat * nlon; }
  int node(int ring, int j) const { return ring * nlon + j; }
};

namespace detail {

inline QuadratureGrid make_grid(int L) {
  if (L < 1) throw std::invalid_argument("grid degree must be >= 1");
  QuadratureGrid g;
  g.degree = L;
  g.nlat = L + 1;
  g.nlon = 2 * L + 2;
  auto [x, w] = gauss_legendre(g.nlat);
  g.cos_theta = x;
  g.lat_weights = w;
  g.theta.resize(g.nlat);
  g.sin_theta.resize(g.nlat);
  for (int i = 0; i < g.nlat; ++i) {
    g.theta[i] = std::acos(x[i]);
    g.sin_theta[i] = std::sqrt((1.0 - x[i]) * (1.0 + x[i]));
  }
  g.dphi = 2.0 * std::numbers::pi / g.nlon;
  g.phi.resize(g.nlon);
  for (int j = 0; j < g.nlon; ++j) g.phi[j] = j * g.dphi;
  g.unit_points.resize(3, g.node_count());
  g.node_weights.resize(g.node_count());
  for (int i = 0; i < g.nlat; ++i) {
    for (int j = 0; j < g.nlon; ++j) {
      const int n = g.node(i, j);
      g.unit_points(0, n) = g.sin_theta[i] * std::cos(g.phi[j]);
      g.unit_points(1, n) = g.sin_theta[i] * std::sin(g.phi[j]);
      g.unit_points(2, n) = g.cos_theta[i];
      g.node_weights[n] = g.lat_weights[i] * g.dphi;
    }
  }
  return g;
}

}  // namespace detail

inline constexpr int kMinDegree = 4;
inline constexpr int kMaxDegree = 256;

inline QuadratureGrid build_grid(int L) {
  if (L < kMinDegree || L > kMaxDegree) {
    throw std::invalid_argument("build_grid: degree " + std::to_string(L) + " outside [" +
                                std::to_string(kMinDegree) + ", " + std::to_string(kMaxDegree) +
                                "]");
  }
  return detail::make_grid(L);
}

}  // namespace hbubble
