#pragma once

#include "hbubble/field.hpp"
#include "hbubble/map.hpp"
#include "hbubble/melnikov.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>

namespace hbubble {

inline Eigen::Matrix3Xd cross_columns(const Eigen::Matrix3Xd& a, const Eigen::Matrix3Xd& b) {
  Eigen::Matrix3Xd out(3, a.cols());
  for (Eigen::Index n = 0; n < a.cols(); ++n) out.col(n) = a.col(n).cross(b.col(n));
  return out;
}

/// J(u) = u_{e1} x u_{e2} from sampled frame derivatives.
inline Eigen::Matrix3Xd area_form(const MapSamples& s) { return cross_columns(s.d1, s.d2); }

/// J(u) at the native grid nodes.
inline Eigen::Matrix3Xd area_form(const MapS2R3& u) { return area_form(u.native_samples()); }

/// J'(u)v = v_{e1} x u_{e2} + u_{e1} x v_{e2}.
inline Eigen::Matrix3Xd area_form_derivative(const MapSamples& u, const MapSamples& v) {
  Eigen::Matrix3Xd out(3, u.d1.cols());
  for (Eigen::Index n = 0; n < u.d1.cols(); ++n)
    out.col(n) = v.d1.col(n).cross(u.d2.col(n)) + u.d1.col(n).cross(v.d2.col(n));
  return out;
}

/// Integral of |grad u|^2, evaluated spectrally as sum l(l+1) c^2.
inline double dirichlet(const MapS2R3& u) {
  return (dirichlet_multipliers(u.degree()).array() * u.coeffs().array().square()).sum();
}

/// The same integral by quadrature of |u_{e1}|^2 + |u_{e2}|^2 on the padded grid.
inline double dirichlet_quadrature(const MapS2R3& u) {
  const MapSamples s = u.fine_samples();
  const Eigen::VectorXd g = s.d1.colwise().squaredNorm() + s.d2.colwise().squaredNorm();
  return u.discretization()->fine_grid().node_weights.dot(g);
}

/// V1(u) = (1/3) integral of u . J(u).
inline double volume_v1(const MapS2R3& u) {
  const MapSamples s = u.fine_samples();
  const Eigen::Matrix3Xd J = area_form(s);
  const Eigen::VectorXd dens = (s.value.array() * J.array()).colwise().sum().transpose();
  return u.discretization()->fine_grid().node_weights.dot(dens) / 3.0;
}

class QuadratureFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Adaptive bisection over Boost's 21-point Gauss-Kronrod pair. Boost reports
// the K21/G10 gap on the reference interval, so it is rescaled here.
template <class F>
double kronrod_adaptive(const F& f, double a, double b, double tol, int depth, double& err) {
  double local = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 21>::integrate(f, a, b, 0, 0.0, &local);
  local *= 0.5 * std::abs(b - a);
  if (local <= tol * std::max(1.0, std::abs(v)) || depth == 0) {
    err += local;
    return v;
  }
  const double mid = 0.5 * (a + b);
  return kronrod_adaptive(f, a, mid, 0.5 * tol, depth - 1, err) +
         kronrod_adaptive(f, mid, b, 0.5 * tol, depth - 1, err);
}

}  // namespace detail

inline constexpr int kGaugeMaxDepth = 18;

/// q(x) = integral_0^{x_axis} H(x with x_axis replaced by t) dt, so that
/// Q = q e_axis satisfies div Q = H.
inline double gauge_potential(const CurvatureField& H, const Eigen::Vector3d& x, int axis,
                              double tol = 1e-13) {
  if (x[axis] == 0.0) return 0.0;
  Eigen::Vector3d y = x;
  auto f = [&](double t) {
    y[axis] = t;
    return H.eval(y);
  };
  double err = 0.0;
  const double v = detail::kronrod_adaptive(f, 0.0, x[axis], tol, kGaugeMaxDepth, err);
  if (!(err <= 10.0 * tol * std::max(1.0, std::abs(v))))
    throw QuadratureFailure("weighted_volume: 1D gauge quadrature did not converge (x_axis=" +
                            std::to_string(x[axis]) + ", error estimate " + std::to_string(err) + ")");
  return v;
}

/// V_H(u) = integral of Q(u) . J(u) with Q = (gauge along `axis`).
inline double weighted_volume(const MapS2R3& u, const CurvatureField& H, int axis = 2) {
  if (axis < 0 || axis > 2) throw std::invalid_argument("weighted_volume: axis must be 0, 1 or 2");
  const MapSamples s = u.fine_samples();
  const Eigen::Matrix3Xd J = area_form(s);
  const auto& w = u.discretization()->fine_grid().node_weights;
  double total = 0.0;
  for (Eigen::Index n = 0; n < s.value.cols(); ++n) {
    if (J(axis, n) == 0.0) continue;
    total += w[n] * gauge_potential(H, s.value.col(n), axis) * J(axis, n);
  }
  return total;
}

/// -integral of H over B_1(p): what V_H(u0 + p) must equal.
inline double gauss_green_oracle(const Eigen::Vector3d& p, const CurvatureField& H, const GammaOptions& opt = {}) {
  return -gamma(p, H, 1.0, opt);
}

struct EnergyBreakdown {
  double dirichlet_half = 0.0;
  double v1 = 0.0;
  double vh = 0.0;
  double eps = 0.0;
  double total = 0.0;
};

inline EnergyBreakdown energy(const MapS2R3& u, double eps, const CurvatureField& H) {
  EnergyBreakdown e;
  e.eps = eps;
  e.dirichlet_half = 0.5 * dirichlet(u);
  e.v1 = volume_v1(u);
  e.vh = weighted_volume(u, H);
  e.total = e.dirichlet_half + 2.0 * e.v1 + 2.0 * eps * e.vh;
  return e;
}

struct Residual {
  Eigen::Matrix3Xd values;  // native grid
  double l2 = 0.0;
};

/// r(u) = Delta u - 2(1 + eps H(u)) J(u) at the native nodes.
inline Residual residual(const MapS2R3& u, double eps, const CurvatureField& H) {
  const auto& disc = *u.discretization();
  const int n = u.coeff_count();
  Eigen::VectorXd lap = -dirichlet_multipliers(u.degree()).cwiseProduct(u.coeffs());
  const MapSamples lap_s = sample_coefficients(disc.native(), lap, false);
  const Eigen::Matrix3Xd J = area_form(u);
  Residual r;
  r.values.resize(3, J.cols());
  for (Eigen::Index k = 0; k < J.cols(); ++k) {
    const double h = eps == 0.0 ? 1.0 : 1.0 + eps * H.eval(u.values().col(k));
    r.values.col(k) = lap_s.value.col(k) - 2.0 * h * J.col(k);
  }
  r.l2 = std::sqrt(disc.grid().node_weights.dot(r.values.colwise().squaredNorm().transpose()));
  (void)n;
  return r;
}

/// Everything the first and second variations need at a fixed u, sampled on
/// the padded grid.
struct LinearizationPoint {
  const SphereDiscretization* disc = nullptr;
  double eps = 0.0;
  MapSamples u;
  Eigen::Matrix3Xd J;
  Eigen::VectorXd weight;      // 1 + eps H(u)
  Eigen::Matrix3Xd eps_grad;   // eps grad H(u)
};

inline LinearizationPoint linearize(const MapS2R3& u, double eps, const CurvatureField& H) {
  LinearizationPoint lp;
  lp.disc = u.discretization().get();
  lp.eps = eps;
  lp.u = u.fine_samples();
  lp.J = area_form(lp.u);
  const Eigen::Index nodes = lp.J.cols();
  lp.weight.setOnes(nodes);
  lp.eps_grad.setZero(3, nodes);
  if (eps != 0.0) {
    for (Eigen::Index k = 0; k < nodes; ++k) {
      const Eigen::Vector3d x = lp.u.value.col(k);
      lp.weight[k] = 1.0 + eps * H.eval(x);
      lp.eps_grad.col(k) = eps * H.grad(x);
    }
  }
  return lp;
}

/// Weak pairing <E'_eps(u), phi> against every basis function phi.
inline Eigen::VectorXd weak_gradient(const MapS2R3& u, const LinearizationPoint& lp) {
  Eigen::Matrix3Xd f = lp.J;
  for (Eigen::Index k = 0; k < f.cols(); ++k) f.col(k) *= 2.0 * lp.weight[k];
  return dirichlet_multipliers(u.degree()).cwiseProduct(u.coeffs()) + project_vector(lp.disc->fine(), f);
}

struct Gradient {
  Eigen::VectorXd weak;
  MapS2R3 riesz;  // w with <w, phi>_{W^{1,2}} = <E'(u), phi>
};

inline Gradient gradient(const MapS2R3& u, double eps, const CurvatureField& H) {
  const LinearizationPoint lp = linearize(u, eps, H);
  Gradient g;
  g.weak = weak_gradient(u, lp);
  const Eigen::VectorXd d = dirichlet_multipliers(u.degree()).array() + 1.0;
  g.riesz = MapS2R3(u.discretization(), g.weak.cwiseQuotient(d));
  return g;
}

/// Row <E''_eps(u) v, phi> for every basis phi; v given by its coefficients.
inline Eigen::VectorXd second_variation_apply(const LinearizationPoint& lp,
                                              const Eigen::Ref<const Eigen::VectorXd>& v) {
  const MapSamples vs = sample_coefficients(lp.disc->fine(), v);
  Eigen::Matrix3Xd f = area_form_derivative(lp.u, vs);
  for (Eigen::Index k = 0; k < f.cols(); ++k) {
    f.col(k) *= lp.weight[k];
    if (lp.eps != 0.0) f.col(k) += lp.eps_grad.col(k).dot(vs.value.col(k)) * lp.J.col(k);
  }
  f *= 2.0;
  return dirichlet_multipliers(lp.disc->degree()).cwiseProduct(v) + project_vector(lp.disc->fine(), f);
}

inline Eigen::VectorXd second_variation_apply(const MapS2R3& u, const MapS2R3& v, double eps,
                                              const CurvatureField& H) {
  return second_variation_apply(linearize(u, eps, H), v.coeffs());
}

inline constexpr int kMaxDenseDegree = 48;

/// Dense E''_0(u0) in the real harmonic product basis, size 3(L+1)^2.
inline Eigen::MatrixXd assemble_e0_hessian(const std::shared_ptr<const SphereDiscretization>& disc) {
  if (disc->degree() > kMaxDenseDegree)
    throw std::invalid_argument("assemble_e0_hessian: degree exceeds dense assembly budget (48)");
  const MapS2R3 u0 = base_bubble(disc);
  const LinearizationPoint lp = linearize(u0, 0.0, constant_field(0.0));
  const int N = 3 * disc->coeff_count();
  Eigen::MatrixXd A(N, N);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(N);
  for (int j = 0; j < N; ++j) {
    e[j] = 1.0;
    A.col(j) = second_variation_apply(lp, e);
    e[j] = 0.0;
  }
  return A;
}

}  // namespace hbubble
