#pragma once

#include "hbubble/functionals.hpp"
#include "hbubble/io.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbubble {

/// (int |grad u|^s)^{1/s} + (int |u|^s)^{1/s}, by the padded-grid quadrature.
inline double w1s_norm(const MapS2R3& u, double s = 3.0) {
  if (!(s > 1.0) || !std::isfinite(s)) throw std::invalid_argument("w1s_norm: s must lie in (1, inf)");
  const MapSamples f = u.fine_samples();
  const Eigen::VectorXd& w = u.discretization()->fine_grid().node_weights;
  double grad = 0.0, val = 0.0;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    const double g2 = f.d1.col(k).squaredNorm() + f.d2.col(k).squaredNorm();
    grad += w[k] * std::pow(g2, 0.5 * s);
    val += w[k] * std::pow(f.value.col(k).norm(), s);
  }
  return std::pow(grad, 1.0 / s) + std::pow(val, 1.0 / s);
}

struct BranchScan {
  double min_gradsq = 0.0;
  int node = -1;
  double theta = 0.0, phi = 0.0;
};

inline BranchScan branch_point_scan(const MapS2R3& u) {
  const QuadratureGrid& g = u.discretization()->grid();
  BranchScan b;
  b.min_gradsq = std::numeric_limits<double>::infinity();
  for (int k = 0; k < g.node_count(); ++k) {
    const double e = u.d1().col(k).squaredNorm() + u.d2().col(k).squaredNorm();
    if (e < b.min_gradsq) {
      b.min_gradsq = e;
      b.node = k;
    }
  }
  b.theta = g.theta[b.node / g.nlon];
  b.phi = g.phi[b.node % g.nlon];
  return b;
}

/// max over nodes of max(|e - g|, 2|f|) / (e + g).
inline double conformality_defect(const MapS2R3& u) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < u.d1().cols(); ++k) {
    const double e = u.d1().col(k).squaredNorm(), g = u.d2().col(k).squaredNorm();
    const double f = u.d1().col(k).dot(u.d2().col(k));
    if (!(e + g > 0.0)) throw std::domain_error("conformality_defect: map has a zero gradient at a node");
    worst = std::max(worst, std::max(std::abs(e - g), 2.0 * std::abs(f)) / (e + g));
  }
  return worst;
}

struct CurvatureSamples {
  GridField values;          // NaN at flagged nodes
  std::vector<int> flagged;  // nodes where |J|^2 is below the branch threshold
};

inline constexpr double kBranchThreshold = 1e-12;

/// H = (Delta u . J) / (2 |J|^2) at the native nodes.
inline CurvatureSamples mean_curvature_extract(const MapS2R3& u) {
  const auto& disc = *u.discretization();
  const Eigen::VectorXd lap = -dirichlet_multipliers(u.degree()).cwiseProduct(u.coeffs());
  const MapSamples ls = sample_coefficients(disc.native(), lap, false);
  const Eigen::Matrix3Xd J = area_form(u);
  CurvatureSamples out;
  out.values = GridField(u.degree());
  for (Eigen::Index k = 0; k < J.cols(); ++k) {
    const double j2 = J.col(k).squaredNorm();
    if (j2 < kBranchThreshold) {
      out.values.samples[k] = std::numeric_limits<double>::quiet_NaN();
      out.flagged.push_back(static_cast<int>(k));
      continue;
    }
    out.values.samples[k] = ls.value.col(k).dot(J.col(k)) / (2.0 * j2);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mesh export

struct Mesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;  // zero-based
};

/// Grid nodes ring by ring, then a north and a south cap vertex (the ring
/// averages nearest each pole), quad strips split into triangles oriented
/// along J.
inline Mesh build_mesh(const MapS2R3& u) {
  const QuadratureGrid& g = u.discretization()->grid();
  Mesh m;
  m.vertices.reserve(g.node_count() + 2);
  for (int k = 0; k < g.node_count(); ++k) m.vertices.emplace_back(u.values().col(k));
  Eigen::Vector3d north = Eigen::Vector3d::Zero(), south = Eigen::Vector3d::Zero();
  for (int j = 0; j < g.nlon; ++j) {
    north += u.values().col(g.node(0, j));
    south += u.values().col(g.node(g.nlat - 1, j));
  }
  const int in = g.node_count(), is = in + 1;
  m.vertices.push_back(north / g.nlon);
  m.vertices.push_back(south / g.nlon);
  // theta grows with the ring index, so (ring, j) -> (ring+1, j) -> (ring, j+1)
  // follows u_theta x u_phi, which is J up to the positive factor sin(theta).
  for (int i = 0; i + 1 < g.nlat; ++i)
    for (int j = 0; j < g.nlon; ++j) {
      const int jn = (j + 1) % g.nlon;
      const int a = g.node(i, j), b = g.node(i + 1, j), c = g.node(i, jn), d = g.node(i + 1, jn);
      m.faces.push_back({a, b, c});
      m.faces.push_back({b, d, c});
    }
  for (int j = 0; j < g.nlon; ++j) {
    const int jn = (j + 1) % g.nlon;
    m.faces.push_back({in, g.node(0, j), g.node(0, jn)});
    m.faces.push_back({g.node(g.nlat - 1, j), is, g.node(g.nlat - 1, jn)});
  }
  return m;
}

/// Signed volume by the divergence theorem over the triangles, taking the
/// face orientation as the normal.
inline double signed_mesh_volume(const Mesh& m) {
  double v = 0.0;
  for (const auto& f : m.faces) v += m.vertices[f[0]].dot(m.vertices[f[1]].cross(m.vertices[f[2]]));
  return v / 6.0;
}

/// Enclosed volume with the sign convention of -V1: for u0 = -sigma, J points
/// outward of the parameter sphere but inward for the image, so the signed
/// volume is -4pi/3 and this returns +4pi/3.
inline double mesh_volume(const Mesh& m) { return -signed_mesh_volume(m); }

inline std::string mesh_obj(const Mesh& m) {
  std::ostringstream os;
  os.precision(17);
  os << "# " << m.vertices.size() << " vertices, " << m.faces.size() << " faces\n";
  for (const auto& v : m.vertices) os << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : m.faces) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  return os.str();
}

inline std::string node_csv(const MapS2R3& u) {
  const QuadratureGrid& g = u.discretization()->grid();
  const CurvatureSamples H = mean_curvature_extract(u);
  std::ostringstream os;
  os.precision(17);
  os << "theta,phi,x,y,z,H_extracted\n";
  for (int i = 0; i < g.nlat; ++i)
    for (int j = 0; j < g.nlon; ++j) {
      const int k = g.node(i, j);
      const Eigen::Vector3d x = u.values().col(k);
      os << g.theta[i] << ',' << g.phi[j] << ',' << x.x() << ',' << x.y() << ',' << x.z() << ','
         << H.values.samples[k] << '\n';
    }
  return os.str();
}

enum class MeshFormat { obj, csv };

inline void export_mesh(const MapS2R3& u, const std::filesystem::path& path, MeshFormat format) {
  atomic_write(path, format == MeshFormat::obj ? mesh_obj(build_mesh(u)) : node_csv(u));
}

// ---------------------------------------------------------------------------

struct BubbleReport {
  double residual_l2 = 0.0;
  double w13_norm = 0.0;  // of eta
  double min_gradsq = 0.0;
  double conformal_defect = 0.0;
  double curvature_error = 0.0;
  double eta_c1 = 0.0;
  double mesh_volume = 0.0;
  double minus_v1 = 0.0;
  int flagged_nodes = 0;
};

/// max over native nodes of |eta| + |eta_e1| + |eta_e2|.
inline double c1_size(const MapS2R3& eta) {
  double m = 0.0;
  for (Eigen::Index k = 0; k < eta.values().cols(); ++k)
    m = std::max(m, eta.values().col(k).norm() + eta.d1().col(k).norm() + eta.d2().col(k).norm());
  return m;
}

/// Report for u = u0 + p + eta. eta may be the zero map.
inline BubbleReport bubble_report(const MapS2R3& u, const MapS2R3& eta, double eps, const CurvatureField& H1) {
  BubbleReport r;
  r.residual_l2 = residual(u, eps, H1).l2;
  r.w13_norm = w1s_norm(eta, 3.0);
  r.min_gradsq = branch_point_scan(u).min_gradsq;
  r.conformal_defect = conformality_defect(u);
  const CurvatureSamples hs = mean_curvature_extract(u);
  r.flagged_nodes = static_cast<int>(hs.flagged.size());
  for (Eigen::Index k = 0; k < u.values().cols(); ++k) {
    const double h = hs.values.samples[k];
    if (std::isnan(h)) continue;
    const double target = 1.0 + eps * H1.eval(u.values().col(k));
    r.curvature_error = std::max(r.curvature_error, std::abs(h - target));
  }
  r.eta_c1 = c1_size(eta);
  r.mesh_volume = mesh_volume(build_mesh(u));
  r.minus_v1 = -volume_v1(u);
  return r;
}

}  // namespace hbubble
