#pragma once

#include "hbubble/field.hpp"
#include "hbubble/grid.hpp"
#include "hbubble/io.hpp"
#include "hbubble/parallel.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace hbubble {

struct BallQuadrature {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 1.0;
  Eigen::Matrix3Xd nodes;
  Eigen::VectorXd weights;
};

struct QuadratureOrders {
  int n_r = 24, n_mu = 24, n_phi = 48;

  QuadratureOrders doubled() const { return {2 * n_r, 2 * n_mu, 2 * n_phi}; }
  auto operator<=>(const QuadratureOrders&) const = default;
};

namespace detail {

inline BallQuadrature make_ball_rule(const QuadratureOrders& o) {
  if (o.n_r < 2 || o.n_mu < 2 || o.n_phi < 2)
    throw std::invalid_argument("ball_quadrature: orders must be at least 2");
  const auto [xr, wr] = gauss_legendre(o.n_r);
  const auto [xm, wm] = gauss_legendre(o.n_mu);
  BallQuadrature q;
  const Eigen::Index n = static_cast<Eigen::Index>(o.n_r) * o.n_mu * o.n_phi;
  q.nodes.resize(3, n);
  q.weights.resize(n);
  const double dphi = 2.0 * std::numbers::pi / o.n_phi;
  Eigen::Index k = 0;
  for (int i = 0; i < o.n_r; ++i) {
    const double r = 0.5 * (xr[i] + 1.0);
    const double wri = 0.5 * wr[i] * r * r;
    for (int j = 0; j < o.n_mu; ++j) {
      const double mu = xm[j], st = std::sqrt(std::max(0.0, 1.0 - mu * mu));
      for (int l = 0; l < o.n_phi; ++l, ++k) {
        const double ph = dphi * l;
        q.nodes.col(k) = r * Eigen::Vector3d(st * std::cos(ph), st * std::sin(ph), mu);
        q.weights[k] = wri * wm[j] * dphi;
      }
    }
  }
  return q;
}

/// Unit-ball rules are cached per order triple; entries are never removed.
inline const BallQuadrature& unit_ball_rule(const QuadratureOrders& o) {
  static std::mutex mu;
  static std::map<QuadratureOrders, BallQuadrature> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(o);
  if (it == cache.end()) it = cache.emplace(o, make_ball_rule(o)).first;
  return it->second;
}

}  // namespace detail

/// Product rule on B(p, radius): Gauss-Legendre in r (weight r^2) and in
/// cos(theta), trapezoid in phi.
inline BallQuadrature ball_quadrature(const Eigen::Vector3d& p, double radius, int n_r, int n_mu, int n_phi) {
  if (!(radius > 0.0)) throw std::invalid_argument("ball_quadrature: radius must be positive");
  BallQuadrature q = detail::make_ball_rule({n_r, n_mu, n_phi});
  q.center = p;
  q.radius = radius;
  q.nodes = (radius * q.nodes).colwise() + p;
  q.weights *= radius * radius * radius;
  return q;
}

class MelnikovConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GammaOptions {
  QuadratureOrders orders;
  double tol = 1e-9;
  int max_doublings = 3;
};

/// Gamma and its derivatives at one fixed rule.
struct GammaSample {
  double value = 0.0;
  Eigen::Vector3d grad = Eigen::Vector3d::Zero();
  Eigen::Matrix3d hess = Eigen::Matrix3d::Zero();
};

inline double ball_radius(double h0) {
  if (h0 == 0.0) throw std::invalid_argument("gamma: H0 must be nonzero");
  return 1.0 / std::abs(h0);
}

inline double gamma_at(const Eigen::Vector3d& p, const CurvatureField& h1, double h0, const QuadratureOrders& o) {
  const double R = ball_radius(h0);
  const auto& q = detail::unit_ball_rule(o);
  double s = 0.0;
  for (Eigen::Index k = 0; k < q.weights.size(); ++k) s += q.weights[k] * h1.eval(p + R * q.nodes.col(k));
  return s * R * R * R;
}

/// Value, quadrature of grad H1 and of Hess H1 in one pass (analytic fields).
inline GammaSample gamma_sample_at(const Eigen::Vector3d& p, const CurvatureField& h1, double h0,
                                   const QuadratureOrders& o, bool with_hessian = true) {
  const double R = ball_radius(h0);
  const auto& q = detail::unit_ball_rule(o);
  GammaSample g;
  for (Eigen::Index k = 0; k < q.weights.size(); ++k) {
    const Eigen::Vector3d x = p + R * q.nodes.col(k);
    if (with_hessian) {
      const FieldEval e = h1.eval_all(x);
      g.value += q.weights[k] * e.value;
      g.grad += q.weights[k] * e.grad;
      g.hess += q.weights[k] * e.hess;
    } else {
      g.value += q.weights[k] * h1.eval(x);
      g.grad += q.weights[k] * h1.grad(x);
    }
  }
  const double R3 = R * R * R;
  g.value *= R3;
  g.grad *= R3;
  g.hess *= R3;
  return g;
}

struct GammaValue {
  double value = 0.0;
  QuadratureOrders orders;  // finer of the two agreeing levels
  double change = 0.0;      // |difference| between the last two levels
};

inline GammaValue gamma_refined(const Eigen::Vector3d& p, const CurvatureField& h1, double h0,
                                const GammaOptions& opt = {}) {
  QuadratureOrders o = opt.orders;
  double prev = gamma_at(p, h1, h0, o);
  for (int d = 0; d < opt.max_doublings; ++d) {
    o = o.doubled();
    const double cur = gamma_at(p, h1, h0, o);
    const double change = std::abs(cur - prev);
    if (change <= opt.tol * std::max(1.0, std::abs(cur))) return {cur, o, change};
    prev = cur;
  }
  throw MelnikovConvergenceError("gamma: quadrature refinement did not converge at p = (" + num(p.x()) + ", " +
                                 num(p.y()) + ", " + num(p.z()) + ")");
}

/// Gamma(p) = integral of H1 over B(p, 1/|H0|).
inline double gamma(const Eigen::Vector3d& p, const CurvatureField& h1, double h0, const GammaOptions& opt = {}) {
  return gamma_refined(p, h1, h0, opt).value;
}

namespace detail {

inline Eigen::Vector3d gamma_fd_gradient(const Eigen::Vector3d& p, const CurvatureField& h1, double h0,
                                         const GammaOptions& opt) {
  const double h = 1e-4 * std::max(1.0, p.norm());
  Eigen::Vector3d g;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d e = h * Eigen::Vector3d::Unit(k);
    g[k] = (gamma(p + e, h1, h0, opt) - gamma(p - e, h1, h0, opt)) / (2 * h);
  }
  return g;
}

}  // namespace detail

/// grad Gamma = integral of grad H1 over the ball; finite differences of
/// Gamma when H1 has no analytic derivatives.
inline Eigen::Vector3d gamma_gradient(const Eigen::Vector3d& p, const CurvatureField& h1, double h0,
                                      const GammaOptions& opt = {}) {
  if (!h1.analytic()) return detail::gamma_fd_gradient(p, h1, h0, opt);
  QuadratureOrders o = opt.orders;
  Eigen::Vector3d prev = gamma_sample_at(p, h1, h0, o, false).grad;
  for (int d = 0; d < opt.max_doublings; ++d) {
    o = o.doubled();
    const Eigen::Vector3d cur = gamma_sample_at(p, h1, h0, o, false).grad;
    if ((cur - prev).norm() <= opt.tol * std::max(1.0, cur.norm())) return cur;
    prev = cur;
  }
  throw MelnikovConvergenceError("gamma_gradient: quadrature refinement did not converge");
}

inline Eigen::Matrix3d gamma_hessian(const Eigen::Vector3d& p, const CurvatureField& h1, double h0,
                                     const GammaOptions& opt = {}) {
  if (!h1.analytic()) {
    const double h = 1e-3 * std::max(1.0, p.norm());
    Eigen::Matrix3d H;
    for (int k = 0; k < 3; ++k) {
      const Eigen::Vector3d e = h * Eigen::Vector3d::Unit(k);
      H.col(k) = (detail::gamma_fd_gradient(p + e, h1, h0, opt) - detail::gamma_fd_gradient(p - e, h1, h0, opt)) /
                 (2 * h);
    }
    return 0.5 * (H + H.transpose());
  }
  QuadratureOrders o = opt.orders;
  Eigen::Matrix3d prev = gamma_sample_at(p, h1, h0, o).hess;
  for (int d = 0; d < opt.max_doublings; ++d) {
    o = o.doubled();
    const Eigen::Matrix3d cur = gamma_sample_at(p, h1, h0, o).hess;
    if ((cur - prev).norm() <= opt.tol * std::max(1.0, cur.norm())) return 0.5 * (cur + cur.transpose());
    prev = cur;
  }
  throw MelnikovConvergenceError("gamma_hessian: quadrature refinement did not converge");
}

// ---------------------------------------------------------------------------
// Critical points of Gamma.

struct Box {
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(-1.0);
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(1.0);

  bool contains(const Eigen::Vector3d& p, double slack = 0.0) const {
    return ((p.array() >= lo.array() - slack) && (p.array() <= hi.array() + slack)).all();
  }
  bool operator==(const Box& o) const { return lo == o.lo && hi == o.hi; }
  Box scaled(double f) const {
    Box b;
    b.lo = (f * lo).cwiseMin(f * hi);
    b.hi = (f * lo).cwiseMax(f * hi);
    return b;
  }
};

enum class CriticalType { min, max, saddle, degenerate };

inline const char* to_string(CriticalType t) {
  switch (t) {
    case CriticalType::min: return "min";
    case CriticalType::max: return "max";
    case CriticalType::saddle: return "saddle";
    case CriticalType::degenerate: return "degenerate";
  }
  return "?";
}

/// Degenerate when the smallest |eigenvalue| is below rel * sum |eigenvalues|.
inline CriticalType classify(const Eigen::Vector3d& eig, double rel = 1e-6) {
  const double scale = eig.cwiseAbs().sum();
  if (!(scale > 0.0) || eig.cwiseAbs().minCoeff() < rel * scale) return CriticalType::degenerate;
  if ((eig.array() > 0).all()) return CriticalType::min;
  if ((eig.array() < 0).all()) return CriticalType::max;
  return CriticalType::saddle;
}

inline Eigen::Vector3d sym_eigenvalues(const Eigen::Matrix3d& H) {
  return Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(0.5 * (H + H.transpose())).eigenvalues();
}

struct GammaCritical {
  Eigen::Vector3d p;
  double value = 0.0;
  double grad_norm = 0.0;
  Eigen::Vector3d eigenvalues;
  CriticalType type = CriticalType::degenerate;
};

struct MelnikovReport {
  Box box;
  int n = 17;
  double h0 = 1.0;
  std::vector<Eigen::Vector3d> nodes;
  std::vector<double> values;
  std::vector<Eigen::Vector3d> grads;
  std::vector<GammaCritical> critical;
  QuadratureOrders scan_orders, refine_orders;
  bool flat = false;
  int seeds_tried = 0;
  std::vector<std::string> log;
};

struct CriticalSearchOptions {
  int n = 17;
  QuadratureOrders orders;
  std::vector<Eigen::Vector3d> seeds;
  int threads = 1;
  double dedup = 1e-4;
  double grad_tol = 1e-8;
  int max_newton = 60;
  double flat_tol = 1e-12;
};

namespace detail {

inline std::vector<Eigen::Vector3d> box_nodes(const Box& box, int n) {
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(static_cast<std::size_t>(n) * n * n);
  auto coord = [&](int k, int i) { return n == 1 ? 0.5 * (box.lo[k] + box.hi[k]) : box.lo[k] + (box.hi[k] - box.lo[k]) * i / (n - 1); };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) pts.emplace_back(coord(0, i), coord(1, j), coord(2, k));
  return pts;
}

/// Seeds from a scalar scan on an n^3 lattice: strict interior local extrema
/// over the 26-neighbourhood and cell centres where every gradient component changes
/// sign across the cell corners.
inline std::vector<Eigen::Vector3d> lattice_seeds(const std::vector<Eigen::Vector3d>& nodes,
                                                  const std::vector<double>& values,
                                                  const std::vector<Eigen::Vector3d>& grads, int n) {
  auto id = [n](int i, int j, int k) { return (static_cast<std::size_t>(i) * n + j) * n + k; };
  std::vector<Eigen::Vector3d> seeds;
  for (int i = 1; i + 1 < n; ++i)
    for (int j = 1; j + 1 < n; ++j)
      for (int k = 1; k + 1 < n; ++k) {
        const double v = values[id(i, j, k)];
        bool is_max = true, is_min = true;
        for (int a = -1; a <= 1; ++a)
          for (int b = -1; b <= 1; ++b)
            for (int c = -1; c <= 1; ++c) {
              if (!a && !b && !c) continue;
              const double w = values[id(i + a, j + b, k + c)];
              if (w >= v) is_max = false;
              if (w <= v) is_min = false;
            }
        if (is_max || is_min) seeds.push_back(nodes[id(i, j, k)]);
      }
  if (grads.empty()) return seeds;
  for (int i = 0; i + 1 < n; ++i)
    for (int j = 0; j + 1 < n; ++j)
      for (int k = 0; k + 1 < n; ++k) {
        Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = Eigen::Vector3d::Constant(-1e300);
        Eigen::Vector3d centre = Eigen::Vector3d::Zero();
        for (int c = 0; c < 8; ++c) {
          const std::size_t q = id(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
          lo = lo.cwiseMin(grads[q]);
          hi = hi.cwiseMax(grads[q]);
          centre += nodes[q] / 8.0;
        }
        if ((lo.array() <= 0.0).all() && (hi.array() >= 0.0).all()) seeds.push_back(centre);
      }
  return seeds;
}

inline std::vector<Eigen::Vector3d> dedup_points(const std::vector<Eigen::Vector3d>& pts, double dist) {
  std::vector<Eigen::Vector3d> out;
  for (const auto& p : pts) {
    bool dup = false;
    for (const auto& q : out)
      if ((p - q).norm() <= dist) {
        dup = true;
        break;
      }
    if (!dup) out.push_back(p);
  }
  return out;
}

inline bool lex_less(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::tie(a[0], a[1], a[2]) < std::tie(b[0], b[1], b[2]);
}

}  // namespace detail

/// Newton on grad Gamma from one seed; returns false when the seed fails.
inline bool newton_gamma(Eigen::Vector3d& p, const CurvatureField& h1, double h0, const QuadratureOrders& o,
                         const Box& limits, int max_iter, double tol, std::string& why) {
  GammaSample g = gamma_sample_at(p, h1, h0, o);
  for (int it = 0; it < max_iter; ++it) {
    if (g.grad.norm() <= tol) return true;
    const Eigen::Vector3d step = g.hess.fullPivLu().solve(-g.grad);
    if (!step.allFinite()) {
      why = "singular Hessian";
      return false;
    }
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 12; ++ls, t *= 0.5) {
      const Eigen::Vector3d q = p + t * step;
      const GammaSample gq = gamma_sample_at(q, h1, h0, o);
      if (gq.grad.norm() < g.grad.norm()) {
        p = q;
        g = gq;
        moved = true;
        break;
      }
    }
    if (!moved) {
      // no decrease: accept if already at roundoff level
      if (g.grad.norm() <= 100.0 * tol) return true;
      why = "line search stalled at |grad| = " + num(g.grad.norm());
      return false;
    }
    if (!limits.contains(p)) {
      why = "left the search box";
      return false;
    }
  }
  if (g.grad.norm() <= tol) return true;
  why = "no convergence in " + std::to_string(max_iter) + " Newton steps";
  return false;
}

inline MelnikovReport find_gamma_critical(const CurvatureField& h1, double h0, const Box& box,
                                          const CriticalSearchOptions& opt = {}) {
  if (!((box.hi.array() >= box.lo.array()).all())) throw std::invalid_argument("find_gamma_critical: empty box");
  if (opt.n < 2) throw std::invalid_argument("find_gamma_critical: scan needs at least 2 nodes per axis");
  MelnikovReport rep;
  rep.box = box;
  rep.n = opt.n;
  rep.h0 = h0;
  rep.scan_orders = opt.orders;
  rep.refine_orders = opt.orders.doubled();
  rep.nodes = detail::box_nodes(box, opt.n);
  rep.values.assign(rep.nodes.size(), 0.0);
  rep.grads.assign(rep.nodes.size(), Eigen::Vector3d::Zero());
  const bool analytic = h1.analytic();
  parallel_for(rep.nodes.size(), opt.threads, [&](std::size_t i) {
    if (analytic) {
      const GammaSample s = gamma_sample_at(rep.nodes[i], h1, h0, opt.orders, false);
      rep.values[i] = s.value;
      rep.grads[i] = s.grad;
    } else {
      rep.values[i] = gamma_at(rep.nodes[i], h1, h0, opt.orders);
    }
  });
  if (!analytic) {
    // finite differences on the lattice itself
    const int n = opt.n;
    const Eigen::Vector3d h = (box.hi - box.lo) / (n - 1);
    auto id = [n](int i, int j, int k) { return (static_cast<std::size_t>(i) * n + j) * n + k; };
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
          const int ix[3] = {i, j, k};
          Eigen::Vector3d g;
          for (int a = 0; a < 3; ++a) {
            int lo[3] = {i, j, k}, hi[3] = {i, j, k};
            lo[a] = std::max(0, ix[a] - 1);
            hi[a] = std::min(n - 1, ix[a] + 1);
            g[a] = (rep.values[id(hi[0], hi[1], hi[2])] - rep.values[id(lo[0], lo[1], lo[2])]) /
                   ((hi[a] - lo[a]) * h[a]);
          }
          rep.grads[id(i, j, k)] = g;
        }
  }
  double vmax = 0.0, gmax = 0.0;
  for (std::size_t i = 0; i < rep.nodes.size(); ++i) {
    vmax = std::max(vmax, std::abs(rep.values[i]));
    gmax = std::max(gmax, rep.grads[i].norm());
  }
  if (gmax <= opt.flat_tol * std::max(1.0, vmax)) {
    rep.flat = true;
    rep.log.push_back("flat landscape: max |grad Gamma| = " + num(gmax) + " on the scan; no critical points reported");
    return rep;
  }

  std::vector<Eigen::Vector3d> seeds = opt.seeds;
  for (const auto& s : detail::lattice_seeds(rep.nodes, rep.values, rep.grads, opt.n)) seeds.push_back(s);
  seeds = detail::dedup_points(seeds, 1e-12);
  rep.seeds_tried = static_cast<int>(seeds.size());

  const Eigen::Vector3d slack = 0.05 * (box.hi - box.lo).cwiseMax(Eigen::Vector3d::Constant(1e-6));
  Box limits{box.lo - slack, box.hi + slack};
  std::vector<std::optional<GammaCritical>> found(seeds.size());
  std::vector<std::string> why(seeds.size());
  parallel_for(seeds.size(), opt.threads, [&](std::size_t s) {
    Eigen::Vector3d p = seeds[s];
    if (!analytic) {
      why[s] = "Newton refinement needs analytic derivatives";
      return;
    }
    if (!newton_gamma(p, h1, h0, opt.orders, limits, opt.max_newton, 0.01 * opt.grad_tol, why[s])) return;
    // polish at the refined rule
    if (!newton_gamma(p, h1, h0, rep.refine_orders, limits, 10, 0.01 * opt.grad_tol, why[s])) return;
    const GammaSample g = gamma_sample_at(p, h1, h0, rep.refine_orders);
    if (!(g.grad.norm() <= opt.grad_tol)) {
      why[s] = "refined gradient norm " + num(g.grad.norm()) + " above tolerance";
      return;
    }
    if (!box.contains(p, 1e-9)) {
      why[s] = "converged outside the box";
      return;
    }
    GammaCritical c;
    c.p = p;
    c.value = gamma(p, h1, h0, {opt.orders});
    c.grad_norm = g.grad.norm();
    c.eigenvalues = sym_eigenvalues(g.hess);
    c.type = classify(c.eigenvalues);
    found[s] = c;
  });
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    if (!found[s]) {
      rep.log.push_back("seed (" + num(seeds[s].x()) + ", " + num(seeds[s].y()) + ", " + num(seeds[s].z()) +
                        ") skipped: " + why[s]);
      continue;
    }
    bool dup = false;
    for (const auto& c : rep.critical)
      if ((c.p - found[s]->p).norm() <= opt.dedup) dup = true;
    if (!dup) rep.critical.push_back(*found[s]);
  }
  std::sort(rep.critical.begin(), rep.critical.end(),
            [](const GammaCritical& a, const GammaCritical& b) { return detail::lex_less(a.p, b.p); });
  return rep;
}

struct H5Check {
  double gamma1 = 0.0, gamma2 = 0.0;
  bool pass = false;
};

/// Two-sign condition: Gamma(p1) > 0 and Gamma(p2) < 0.
inline H5Check check_h5(const CurvatureField& h1, double h0, const Eigen::Vector3d& p1, const Eigen::Vector3d& p2,
                        const GammaOptions& opt = {}) {
  H5Check r;
  r.gamma1 = gamma(p1, h1, h0, opt);
  r.gamma2 = gamma(p2, h1, h0, opt);
  r.pass = r.gamma1 > 0.0 && r.gamma2 < 0.0;
  return r;
}

inline std::string landscape_csv(const MelnikovReport& rep) {
  std::string out = "px,py,pz,gamma,gx,gy,gz\n";
  for (std::size_t i = 0; i < rep.nodes.size(); ++i) {
    const auto& p = rep.nodes[i];
    const auto& g = rep.grads[i];
    out += num(p.x()) + "," + num(p.y()) + "," + num(p.z()) + "," + num(rep.values[i]) + "," + num(g.x()) + "," +
           num(g.y()) + "," + num(g.z()) + "\n";
  }
  return out;
}

inline void write_landscape_csv(const MelnikovReport& rep, const std::filesystem::path& path) {
  atomic_write(path, landscape_csv(rep));
}

}  // namespace hbubble
