#pragma once

#include "hbubble/diagnostics.hpp"
#include "hbubble/functionals.hpp"
#include "hbubble/melnikov.hpp"
#include "hbubble/parallel.hpp"

#include <Eigen/Dense>
#include <Eigen/LU>

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbubble {

class FrameError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dirichlet-orthonormal, zero-mean basis of the non-translation directions
/// of the bubble manifold at u0, plus the three constant fields.
struct TangentFrame {
  std::shared_ptr<const SphereDiscretization> disc;
  std::array<MapS2R3, 6> tau;
  std::array<MapS2R3, 3> e;
  double gram_residual = 0.0;
  double mean_residual = 0.0;

  /// Coefficient columns: tau_0..tau_5 then e_0..e_2.
  Eigen::MatrixXd basis() const {
    const Eigen::Index N = tau[0].coeffs().size();
    Eigen::MatrixXd B(N, 9);
    for (int i = 0; i < 6; ++i) B.col(i) = tau[i].coeffs();
    for (int k = 0; k < 3; ++k) B.col(6 + k) = e[k].coeffs();
    return B;
  }
};

inline double dirichlet_pairing(const Eigen::VectorXd& d, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (d.array() * a.array() * b.array()).sum();
}

/// Raw fields are the derivatives at u0 = -sigma of target rotations
/// (-(a x sigma)) and of conformal dilations of the domain
/// (-(c - (c.sigma) sigma)). The dilation fields have mean -2c/3, which is
/// removed by adding a translation so that every tau has zero mean; the
/// result still lies in the tangent space. Gram-Schmidt (done twice) in the
/// Dirichlet inner product.
inline TangentFrame tangent_frame(std::shared_ptr<const SphereDiscretization> disc) {
  const auto& s = disc->grid().unit_points;
  const int n = disc->coeff_count();
  const Eigen::VectorXd d = dirichlet_multipliers(disc->degree());
  std::vector<Eigen::VectorXd> raw;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d c = Eigen::Vector3d::Unit(k);
    Eigen::Matrix3Xd f(3, s.cols());
    for (Eigen::Index j = 0; j < s.cols(); ++j) f.col(j) = -c.cross(Eigen::Vector3d(s.col(j)));
    raw.push_back(project_vector(disc->native(), f));
  }
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d c = Eigen::Vector3d::Unit(k);
    Eigen::Matrix3Xd f(3, s.cols());
    for (Eigen::Index j = 0; j < s.cols(); ++j) f.col(j) = -(c - c.dot(s.col(j)) * s.col(j));
    Eigen::VectorXd v = project_vector(disc->native(), f);
    for (int a = 0; a < 3; ++a) v[a * n] = 0.0;
    raw.push_back(std::move(v));
  }
  std::vector<Eigen::VectorXd> q;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    Eigen::VectorXd v = raw[i];
    const double n0 = std::sqrt(dirichlet_pairing(d, v, v));
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& w : q) v -= dirichlet_pairing(d, v, w) * w;
    const double nv = std::sqrt(dirichlet_pairing(d, v, v));
    if (!(nv > 1e-8 * n0)) throw FrameError("tangent_frame: raw field " + std::to_string(i) + " is dependent");
    q.push_back(v / nv);
  }
  TangentFrame fr;
  fr.disc = disc;
  for (int i = 0; i < 6; ++i) fr.tau[i] = MapS2R3(disc, q[i]);
  for (int k = 0; k < 3; ++k) fr.e[k] = MapS2R3::constant(disc, Eigen::Vector3d::Unit(k));
  const double root4pi = std::sqrt(4.0 * std::numbers::pi);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j)
      fr.gram_residual = std::max(fr.gram_residual, std::abs(dirichlet_pairing(d, q[i], q[j]) - (i == j ? 1.0 : 0.0)));
    for (int a = 0; a < 3; ++a) fr.mean_residual = std::max(fr.mean_residual, std::abs(root4pi * q[i][a * n]));
  }
  return fr;
}

/// The bordered linearization
///   [ A    -B^T  M^T ] [eta   ]
///   [ B     0    0   ] [lambda]
///   [ M     0    0   ] [alpha ]
/// with A = E0''(u0), B_i = <grad tau_i, grad .>, M_k = int (.)_k. Assembled and
/// factorized once per discretization; nothing here depends on p.
class BorderedOperator {
 public:
  explicit BorderedOperator(const TangentFrame& frame) {
    const auto& disc = frame.disc;
    const int n = disc->coeff_count();
    N_ = 3 * n;
    C_.setZero(9, N_);
    const Eigen::VectorXd d = dirichlet_multipliers(disc->degree());
    for (int i = 0; i < 6; ++i) C_.row(i) = d.cwiseProduct(frame.tau[i].coeffs()).transpose();
    for (int k = 0; k < 3; ++k) C_(6 + k, k * n) = std::sqrt(4.0 * std::numbers::pi);
    K_.setZero(N_ + 9, N_ + 9);
    K_.topLeftCorner(N_, N_) = assemble_e0_hessian(disc);
    K_.block(0, N_, N_, 6) = -C_.topRows(6).transpose();
    K_.block(0, N_ + 6, N_, 3) = C_.bottomRows(3).transpose();
    K_.bottomLeftCorner(9, N_) = C_;
    lu_.compute(K_);
    rcond_ = lu_.rcond();
    if (!(rcond_ > 0.0) || !std::isfinite(rcond_))
      throw std::runtime_error("assemble_bordered: factorization failed");
  }

  int map_size() const { return N_; }
  int size() const { return N_ + 9; }
  const Eigen::MatrixXd& matrix() const { return K_; }
  /// Rows B (6) then M (3).
  const Eigen::MatrixXd& constraints() const { return C_; }
  double rcond() const { return rcond_; }
  double condition_estimate() const { return 1.0 / rcond_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return lu_.solve(rhs); }

 private:
  int N_ = 0;
  Eigen::MatrixXd K_, C_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  double rcond_ = 0.0;
};

inline std::shared_ptr<const BorderedOperator> assemble_bordered(const TangentFrame& frame) {
  return std::make_shared<const BorderedOperator>(frame);
}

/// Everything that depends only on the degree, shared read-only by all solves.
struct ReductionContext {
  std::shared_ptr<const SphereDiscretization> disc;
  TangentFrame frame;
  std::shared_ptr<const BorderedOperator> op;
  MapS2R3 u0;
  Eigen::VectorXd j0;  // projected 2 J(u0)
};

inline std::shared_ptr<const ReductionContext> make_reduction_context(int L, double padding = kDefaultPadding) {
  auto ctx = std::make_shared<ReductionContext>();
  ctx->disc = make_discretization(L, padding);
  ctx->frame = tangent_frame(ctx->disc);
  ctx->op = assemble_bordered(ctx->frame);
  ctx->u0 = base_bubble(ctx->disc);
  ctx->j0 = project_vector(ctx->disc->fine(), 2.0 * area_form(ctx->u0.fine_samples()));
  return ctx;
}

// ---------------------------------------------------------------------------
// The fixed point for (eta, lambda, alpha)

enum class SolveMode { picard, newton };

inline const char* to_string(SolveMode m) { return m == SolveMode::picard ? "picard" : "newton"; }

struct SolveOptions {
  double tol = 1e-10;
  int max_iter = 60;
  SolveMode mode = SolveMode::picard;
  double eps_ceiling = 0.2;
  double radius = 2.0;  // bound on the W^{1,2} norm of eta
  int growth_window = 5;
  std::optional<Eigen::VectorXd> initial;  // warm start for (eta, lambda, alpha)
};

class ReductionError : public std::runtime_error {
 public:
  ReductionError(const std::string& what, std::vector<double> history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const std::vector<double>& history() const { return history_; }

 private:
  std::vector<double> history_;
};

/// Iteration diverged or left the solver's ball.
class ContractionFailure : public ReductionError {
 public:
  using ReductionError::ReductionError;
};

/// Ran out of iterations without meeting the tolerance.
class NonConvergence : public ReductionError {
 public:
  using ReductionError::ReductionError;
};

struct ReductionState {
  double eps = 0.0;
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  MapS2R3 eta;
  Eigen::Matrix<double, 6, 1> lambda = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Vector3d alpha = Eigen::Vector3d::Zero();
  Eigen::VectorXd unknowns;  // (eta coefficients, lambda, alpha)
  int iterations = 0;
  bool converged = false;
  SolveMode mode = SolveMode::picard;
  std::vector<double> update_norms;
  std::vector<int> krylov_iterations;  // newton mode only
  double eta_w13 = 0.0;
  double constraint_residual = 0.0;    // max |B eta|, |M eta|
  double stationarity_residual = 0.0;  // |F1| at the final iterate
  bool outside_validation = false;

  MapS2R3 map(const ReductionContext& ctx) const { return ctx.u0.translated(p) + eta; }
};

namespace detail {

/// F(x) = (E'(u) - B^T lambda + M^T alpha, B eta, M eta) with u = u0 + p + eta.
inline Eigen::VectorXd reduction_residual(const ReductionContext& ctx, double eps, const Eigen::Vector3d& p,
                                          const CurvatureField& H, const Eigen::VectorXd& x,
                                          LinearizationPoint* lp_out = nullptr) {
  const int N = ctx.op->map_size();
  const MapS2R3 u(ctx.disc, ctx.u0.translated(p).coeffs() + x.head(N));
  LinearizationPoint lp = linearize(u, eps, H);
  const Eigen::MatrixXd& C = ctx.op->constraints();
  Eigen::VectorXd F(N + 9);
  F.head(N) = weak_gradient(u, lp) - C.topRows(6).transpose() * x.segment(N, 6) +
              C.bottomRows(3).transpose() * x.tail(3);
  F.tail(9) = C * x.head(N);
  if (lp_out) *lp_out = std::move(lp);
  return F;
}

/// Restarted-free GMRES with modified Gram-Schmidt; `apply` is the
/// (right-preconditioned) operator.
template <class Apply>
Eigen::VectorXd gmres(const Apply& apply, const Eigen::VectorXd& b, double rtol, int max_it, int& iters) {
  const Eigen::Index n = b.size();
  const double beta = b.norm();
  iters = 0;
  if (beta == 0.0) return Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd V(n, max_it + 1);
  Eigen::MatrixXd Hm = Eigen::MatrixXd::Zero(max_it + 1, max_it);
  Eigen::VectorXd cs(max_it), sn(max_it), g = Eigen::VectorXd::Zero(max_it + 1);
  V.col(0) = b / beta;
  g[0] = beta;
  int k = 0;
  for (; k < max_it; ++k) {
    Eigen::VectorXd w = apply(V.col(k));
    for (int i = 0; i <= k; ++i) {
      Hm(i, k) = w.dot(V.col(i));
      w -= Hm(i, k) * V.col(i);
    }
    Hm(k + 1, k) = w.norm();
    if (Hm(k + 1, k) > 0.0) V.col(k + 1) = w / Hm(k + 1, k);
    for (int i = 0; i < k; ++i) {
      const double t = cs[i] * Hm(i, k) + sn[i] * Hm(i + 1, k);
      Hm(i + 1, k) = -sn[i] * Hm(i, k) + cs[i] * Hm(i + 1, k);
      Hm(i, k) = t;
    }
    const double r = std::hypot(Hm(k, k), Hm(k + 1, k));
    cs[k] = Hm(k, k) / r;
    sn[k] = Hm(k + 1, k) / r;
    Hm(k, k) = r;
    Hm(k + 1, k) = 0.0;
    g[k + 1] = -sn[k] * g[k];
    g[k] = cs[k] * g[k];
    if (std::abs(g[k + 1]) <= rtol * beta || Hm(k + 1, k) == 0.0) {
      ++k;
      break;
    }
  }
  iters = k;
  const Eigen::VectorXd y =
      Hm.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
  return V.leftCols(k) * y;
}

inline double w12_norm(const Eigen::VectorXd& d, const Eigen::VectorXd& c) {
  return std::sqrt(((d.array() + 1.0) * c.array().square()).sum());
}

}  // namespace detail

/// Solves F(eps, p, eta, lambda, alpha) = 0. Picard freezes the bordered
/// operator (x <- x - K^{-1} F(x)); newton solves with the current Jacobian by
/// GMRES preconditioned with K^{-1}.
inline ReductionState solve_eta(const ReductionContext& ctx, double eps, const Eigen::Vector3d& p,
                                const CurvatureField& H, const SolveOptions& opt = {}) {
  if (!std::isfinite(eps)) throw std::invalid_argument("solve_eta: eps must be finite");
  if (!(opt.tol > 0.0) || opt.max_iter < 1) throw std::invalid_argument("solve_eta: bad tolerance or iteration limit");
  const int N = ctx.op->map_size();
  const Eigen::VectorXd d = dirichlet_multipliers(ctx.disc->degree());
  ReductionState st;
  st.eps = eps;
  st.p = p;
  st.mode = opt.mode;
  st.outside_validation = std::abs(eps) > opt.eps_ceiling;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(N + 9);

  if (eps == 0.0) {
    // E_0 is translation invariant and u0 is critical, so x = 0 solves the
    // system exactly; F(0) is roundoff.
    const Eigen::VectorXd F = detail::reduction_residual(ctx, eps, p, H, x);
    st.iterations = 1;
    st.update_norms.push_back(0.0);
    st.converged = true;
    st.stationarity_residual = F.head(N).norm();
  } else {
    if (opt.initial && opt.initial->size() == N + 9) x = *opt.initial;
    int growth = 0;
    for (int it = 1; it <= opt.max_iter; ++it) {
      LinearizationPoint lp;
      const Eigen::VectorXd F = detail::reduction_residual(ctx, eps, p, H, x, opt.mode == SolveMode::newton ? &lp : nullptr);
      Eigen::VectorXd dx;
      if (opt.mode == SolveMode::picard) {
        dx = -ctx.op->solve(F);
      } else {
        const Eigen::MatrixXd& C = ctx.op->constraints();
        auto jac = [&](const Eigen::VectorXd& y) {
          const Eigen::VectorXd z = ctx.op->solve(y);
          Eigen::VectorXd out(N + 9);
          out.head(N) = second_variation_apply(lp, z.head(N)) - C.topRows(6).transpose() * z.segment(N, 6) +
                        C.bottomRows(3).transpose() * z.tail(3);
          out.tail(9) = C * z.head(N);
          return out;
        };
        int kiters = 0;
        const Eigen::VectorXd y = detail::gmres(jac, -F, 1e-13, 60, kiters);
        st.krylov_iterations.push_back(kiters);
        dx = ctx.op->solve(y);
      }
      const double un = dx.norm();
      x += dx;
      st.update_norms.push_back(un);
      st.iterations = it;
      if (!std::isfinite(un))
        throw ContractionFailure("solve_eta: non-finite update at iteration " + std::to_string(it), st.update_norms);
      if (detail::w12_norm(d, x.head(N)) > opt.radius)
        throw ContractionFailure("solve_eta: eta left the ball of radius " + num(opt.radius) + " at iteration " +
                                     std::to_string(it),
                                 st.update_norms);
      if (un <= opt.tol) {
        st.converged = true;
        break;
      }
      if (it > 1 && un > st.update_norms[it - 2]) {
        if (++growth >= opt.growth_window)
          throw ContractionFailure("solve_eta: update norm grew " + std::to_string(growth) +
                                       " times in a row (eps too large for the contraction?)",
                                   st.update_norms);
      } else {
        growth = 0;
      }
    }
    if (!st.converged)
      throw NonConvergence("solve_eta: no convergence in " + std::to_string(opt.max_iter) + " iterations, last update " +
                               num(st.update_norms.back()),
                           st.update_norms);
    const Eigen::VectorXd F = detail::reduction_residual(ctx, eps, p, H, x);
    st.stationarity_residual = F.head(N).norm();
  }
  st.unknowns = x;
  st.eta = MapS2R3(ctx.disc, x.head(N));
  st.lambda = x.segment(N, 6);
  st.alpha = x.tail(3);
  st.constraint_residual = (ctx.op->constraints() * x.head(N)).cwiseAbs().maxCoeff();
  st.eta_w13 = w1s_norm(st.eta, 3.0);
  return st;
}

/// Galerkin residual of Delta eta = 2(1 + eps H(u)) J(u) - 2 J(u0)
///   + sum lambda_i Delta tau_i + alpha, in L^2 over degree-L coefficients.
inline double eta_equation_residual(const ReductionContext& ctx, const ReductionState& st, const CurvatureField& H) {
  const int N = ctx.op->map_size();
  const int n = ctx.disc->coeff_count();
  const Eigen::VectorXd d = dirichlet_multipliers(ctx.disc->degree());
  const MapS2R3 u = st.map(ctx);
  const LinearizationPoint lp = linearize(u, st.eps, H);
  Eigen::Matrix3Xd f = lp.J;
  for (Eigen::Index k = 0; k < f.cols(); ++k) f.col(k) *= 2.0 * lp.weight[k];
  Eigen::VectorXd rhs = project_vector(ctx.disc->fine(), f) - ctx.j0;
  for (int i = 0; i < 6; ++i) rhs -= st.lambda[i] * d.cwiseProduct(ctx.frame.tau[i].coeffs());
  for (int k = 0; k < 3; ++k) rhs[k * n] += st.alpha[k] * std::sqrt(4.0 * std::numbers::pi);
  const Eigen::VectorXd lap = -d.cwiseProduct(st.eta.coeffs());
  (void)N;
  return (lap - rhs).norm();
}

/// Norm of the full weak gradient of E_eps at u0 + p + eta, every basis
/// direction included.
inline double natural_constraint_norm(const ReductionContext& ctx, const ReductionState& st, const CurvatureField& H) {
  const MapS2R3 u = st.map(ctx);
  return weak_gradient(u, linearize(u, st.eps, H)).norm();
}

// ---------------------------------------------------------------------------
// The reduced functional

inline constexpr double kE0 = 4.0 * std::numbers::pi / 3.0;

/// E_eps(u0 + p + eta) - E_0(u0) with the eta-free parts cancelled
/// algebraically instead of by subtracting two numbers near 4pi/3. E_0 is
/// translation invariant and cubic, so
///   E_0(u0 + eta) - E_0(u0) = <D u0, eta> + <D eta, eta>/2
///     + (2/3) int [eta . J(u0 + eta) + u0 . (J(u0 + eta) - J(u0))].
inline double energy_deviation(const ReductionContext& ctx, const ReductionState& st, const CurvatureField& H) {
  const Eigen::VectorXd d = dirichlet_multipliers(ctx.disc->degree());
  const Eigen::VectorXd& ec = st.eta.coeffs();
  double dev = (d.array() * ctx.u0.coeffs().array() * ec.array()).sum() + 0.5 * (d.array() * ec.array().square()).sum();
  const MapSamples a = ctx.u0.fine_samples();
  const MapSamples e = st.eta.fine_samples();
  const Eigen::VectorXd& w = ctx.disc->fine_grid().node_weights;
  double cubic = 0.0;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    const Eigen::Vector3d a1 = a.d1.col(k), a2 = a.d2.col(k), e1 = e.d1.col(k), e2 = e.d2.col(k);
    const Eigen::Vector3d dJ = a1.cross(e2) + e1.cross(a2) + e1.cross(e2);
    const Eigen::Vector3d J = a1.cross(a2) + dJ;
    cubic += w[k] * (e.value.col(k).dot(J) + a.value.col(k).dot(dJ));
  }
  dev += 2.0 / 3.0 * cubic;
  if (st.eps != 0.0) dev += 2.0 * st.eps * weighted_volume(st.map(ctx), H);
  return dev;
}

struct PhiValue {
  double value = 0.0;
  double deviation = 0.0;  // value - 4pi/3, computed without cancellation
  EnergyBreakdown energy;
  ReductionState state;
};

inline PhiValue phi(const ReductionContext& ctx, double eps, const Eigen::Vector3d& p, const CurvatureField& H,
                    const SolveOptions& opt = {}) {
  PhiValue v;
  v.state = solve_eta(ctx, eps, p, H, opt);
  v.energy = energy(v.state.map(ctx), eps, H);
  v.value = v.energy.total;
  v.deviation = energy_deviation(ctx, v.state, H);
  return v;
}

/// Gradient of Phi from the multipliers: d Phi / dp = -4 pi alpha.
inline Eigen::Vector3d multiplier_gradient(const ReductionState& st) { return -4.0 * std::numbers::pi * st.alpha; }

struct ExpansionRow {
  double eps = 0.0;
  double phi = 0.0;
  double gamma = 0.0;
  double remainder = 0.0;
  double ratio = 0.0;  // remainder / eps^2
};

struct ExpansionReport {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  std::vector<ExpansionRow> rows;
  double spread = 0.0;  // max |ratio| / min |ratio|; infinite on a sign change
  bool bounded = false;
};

/// remainder(eps) = Phi_eps(p) - 4pi/3 + 2 eps Gamma(p), with H0 = 1.
inline ExpansionReport expansion_check(const ReductionContext& ctx, const Eigen::Vector3d& p, const CurvatureField& H,
                                       const std::vector<double>& eps_list, const SolveOptions& opt = {},
                                       const GammaOptions& gopt = {}) {
  if (eps_list.empty()) throw std::invalid_argument("expansion_check: empty eps list");
  ExpansionReport rep;
  rep.p = p;
  const double g = gamma(p, H, 1.0, gopt);
  double lo = 1e300, hi = 0.0;
  bool sign_change = false;
  for (double eps : eps_list) {
    if (eps == 0.0) throw std::invalid_argument("expansion_check: eps must be nonzero");
    ExpansionRow r;
    r.eps = eps;
    const PhiValue v = phi(ctx, eps, p, H, opt);
    r.phi = v.value;
    r.gamma = g;
    r.remainder = v.deviation + 2.0 * eps * g;
    r.ratio = r.remainder / (eps * eps);
    if (!rep.rows.empty() && (r.ratio > 0) != (rep.rows.front().ratio > 0)) sign_change = true;
    lo = std::min(lo, std::abs(r.ratio));
    hi = std::max(hi, std::abs(r.ratio));
    rep.rows.push_back(r);
  }
  if (hi == 0.0)
    rep.spread = 1.0;
  else
    rep.spread = sign_change || lo == 0.0 ? std::numeric_limits<double>::infinity() : hi / lo;
  rep.bounded = rep.spread <= 4.0;
  return rep;
}

struct PhiGradient {
  Eigen::Vector3d fd = Eigen::Vector3d::Zero();       // step h
  Eigen::Vector3d fd_half = Eigen::Vector3d::Zero();  // step h/2, the returned value
  Eigen::Vector3d multiplier = Eigen::Vector3d::Zero();
  double h = 0.0;
  double richardson_rel = 0.0;
  bool richardson_ok = false;

  const Eigen::Vector3d& value() const { return fd_half; }
};

/// Central differences of Phi at steps h and h/2. The relative gap between the
/// two is measured against max(|grad|, 1e-3 * |eps|) so it stays meaningful
/// near critical points.
inline PhiGradient phi_gradient(const ReductionContext& ctx, double eps, const Eigen::Vector3d& p,
                                const CurvatureField& H, double h = 0.0, SolveOptions opt = {}) {
  PhiGradient g;
  g.h = h > 0.0 ? h : 1e-4 * std::max(1.0, p.norm());
  const ReductionState centre = solve_eta(ctx, eps, p, H, opt);
  g.multiplier = multiplier_gradient(centre);
  if (eps == 0.0) {
    g.richardson_ok = true;
    auto fd0 = [&](double step) {
      Eigen::Vector3d out;
      for (int k = 0; k < 3; ++k) {
        const Eigen::Vector3d e = step * Eigen::Vector3d::Unit(k);
        out[k] = (phi(ctx, 0.0, p + e, H, opt).value - phi(ctx, 0.0, p - e, H, opt).value) / (2 * step);
      }
      return out;
    };
    g.fd = fd0(g.h);
    g.fd_half = fd0(0.5 * g.h);
    return g;
  }
  opt.initial = centre.unknowns;
  auto fd = [&](double step) {
    Eigen::Vector3d out;
    for (int k = 0; k < 3; ++k) {
      const Eigen::Vector3d e = step * Eigen::Vector3d::Unit(k);
      out[k] = (phi(ctx, eps, p + e, H, opt).value - phi(ctx, eps, p - e, H, opt).value) / (2 * step);
    }
    return out;
  };
  g.fd = fd(g.h);
  g.fd_half = fd(0.5 * g.h);
  const double scale = std::max(g.fd_half.norm(), 1e-3 * std::abs(eps));
  g.richardson_rel = (g.fd - g.fd_half).norm() / scale;
  g.richardson_ok = g.richardson_rel <= 1e-5;
  return g;
}

// ---------------------------------------------------------------------------
// Critical points of Phi

struct PhiCritical {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  double phi = 0.0;
  double deviation = 0.0;  // phi - E0, cancellation free
  double gamma = 0.0;
  double grad_norm = 0.0;
  Eigen::Matrix3d hessian = Eigen::Matrix3d::Zero();
  Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();
  CriticalType type = CriticalType::degenerate;
  ReductionState state;
};

struct PhiSearchOptions {
  int n = 9;
  int threads = 1;
  SolveOptions scan_solve;   // tolerance for the coarse scan
  SolveOptions refine_solve = [] {
    SolveOptions s;
    s.tol = 1e-12;
    return s;
  }();
  double dedup = 1e-4;
  double grad_tol = 1e-10;  // on |grad Phi|
  int max_newton = 30;
  double hess_step = 1e-3;
  double max_step = 1.0;
  double growth_allowance = 1e3;
  double flat_tol = 1e-13;
  // critical points with |Phi - E0| below tail_rel times the largest scan
  // deviation sit in the asymptotically flat far field and are dropped
  double tail_rel = 1e-6;
  bool midpoint_seeds = true;
  std::vector<Eigen::Vector3d> seeds;
};

struct PhiReport {
  Box box;
  int n = 9;
  double eps = 0.0;
  std::vector<Eigen::Vector3d> nodes;
  std::vector<double> values;  // NaN where the scan solve failed
  std::vector<double> deviations;
  std::vector<Eigen::Vector3d> grads;
  std::vector<PhiCritical> critical;
  bool flat = false;
  int seeds_tried = 0;
  int seeds_failed = 0;
  int tail_dropped = 0;
  std::vector<std::string> log;
};

class PhiSearchError : public std::runtime_error {
 public:
  PhiSearchError(const std::string& what, std::vector<std::string> log)
      : std::runtime_error(what), log_(std::move(log)) {}
  const std::vector<std::string>& log() const { return log_; }

 private:
  std::vector<std::string> log_;
};

namespace detail {

/// Interior strict extrema over the 26-neighbourhood and centres of cells
/// where every gradient component changes sign, skipping failed nodes.
inline void phi_scan_seeds(const std::vector<Eigen::Vector3d>& nodes, const std::vector<double>& values,
                           const std::vector<Eigen::Vector3d>& grads, const std::vector<char>& ok, int n,
                           std::vector<Eigen::Vector3d>& extrema, std::vector<Eigen::Vector3d>& cells) {
  auto id = [n](int i, int j, int k) { return (static_cast<std::size_t>(i) * n + j) * n + k; };
  for (int i = 1; i + 1 < n; ++i)
    for (int j = 1; j + 1 < n; ++j)
      for (int k = 1; k + 1 < n; ++k) {
        if (!ok[id(i, j, k)]) continue;
        const double v = values[id(i, j, k)];
        bool is_max = true, is_min = true;
        for (int a = -1; a <= 1; ++a)
          for (int b = -1; b <= 1; ++b)
            for (int c = -1; c <= 1; ++c) {
              if (!a && !b && !c) continue;
              const std::size_t q = id(i + a, j + b, k + c);
              if (!ok[q]) {
                is_max = is_min = false;
                continue;
              }
              if (values[q] >= v) is_max = false;
              if (values[q] <= v) is_min = false;
            }
        if (is_max || is_min) extrema.push_back(nodes[id(i, j, k)]);
      }
  // Cells where every gradient component changes sign, scored by the norm of
  // the corner-averaged gradient. Near-symmetric landscapes switch sign over
  // whole shells of cells, so only cells whose score is a local minimum among
  // neighbouring sign-change cells are kept.
  const int m = n - 1;
  auto cid = [m](int i, int j, int k) { return (static_cast<std::size_t>(i) * m + j) * m + k; };
  std::vector<double> score(static_cast<std::size_t>(m) * m * m, std::numeric_limits<double>::infinity());
  std::vector<Eigen::Vector3d> centres(score.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) {
        Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = Eigen::Vector3d::Constant(-1e300);
        Eigen::Vector3d centre = Eigen::Vector3d::Zero(), mean = Eigen::Vector3d::Zero();
        bool all_ok = true;
        for (int c = 0; c < 8; ++c) {
          const std::size_t q = id(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
          all_ok = all_ok && ok[q];
          if (!ok[q]) continue;
          lo = lo.cwiseMin(grads[q]);
          hi = hi.cwiseMax(grads[q]);
          centre += nodes[q] / 8.0;
          mean += grads[q] / 8.0;
        }
        if (all_ok && (lo.array() <= 0.0).all() && (hi.array() >= 0.0).all()) {
          score[cid(i, j, k)] = mean.norm();
          centres[cid(i, j, k)] = centre;
        }
      }
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) {
        const double sc = score[cid(i, j, k)];
        if (!std::isfinite(sc)) continue;
        bool best = true;
        for (int a = -1; a <= 1 && best; ++a)
          for (int b = -1; b <= 1 && best; ++b)
            for (int c = -1; c <= 1 && best; ++c) {
              const int x = i + a, y = j + b, z = k + c;
              if ((!a && !b && !c) || x < 0 || y < 0 || z < 0 || x >= m || y >= m || z >= m) continue;
              if (score[cid(x, y, z)] < sc) best = false;
            }
        if (best) cells.push_back(centres[cid(i, j, k)]);
      }
}

/// Hessian of Phi by central differences of the multiplier gradient.
inline Eigen::Matrix3d phi_fd_hessian(const ReductionContext& ctx, double eps, const Eigen::Vector3d& p,
                                      const CurvatureField& H, double h, SolveOptions opt,
                                      const ReductionState& centre) {
  opt.initial = centre.unknowns;
  Eigen::Matrix3d Hs;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d e = h * Eigen::Vector3d::Unit(k);
    const Eigen::Vector3d gp = multiplier_gradient(solve_eta(ctx, eps, p + e, H, opt));
    const Eigen::Vector3d gm = multiplier_gradient(solve_eta(ctx, eps, p - e, H, opt));
    Hs.col(k) = (gp - gm) / (2 * h);
  }
  return 0.5 * (Hs + Hs.transpose());
}

struct SeedResult {
  bool ok = false;
  std::string why;
  PhiCritical crit;
};

inline SeedResult newton_phi(const ReductionContext& ctx, double eps, const CurvatureField& H, Eigen::Vector3d p,
                             const Box& limits, const PhiSearchOptions& opt) {
  SeedResult res;
  SolveOptions so = opt.refine_solve;
  ReductionState st = solve_eta(ctx, eps, p, H, so);
  Eigen::Vector3d g = multiplier_gradient(st);
  Eigen::Matrix3d Hs = Eigen::Matrix3d::Zero();
  bool have_hess = false;
  for (int it = 0; it <= opt.max_newton; ++it) {
    if (g.norm() <= opt.grad_tol) break;
    if (it == opt.max_newton) {
      res.why = "no convergence in " + std::to_string(opt.max_newton) + " Newton steps, |grad| = " + num(g.norm());
      return res;
    }
    Hs = phi_fd_hessian(ctx, eps, p, H, opt.hess_step, so, st);
    have_hess = true;
    Eigen::Vector3d step = Hs.fullPivLu().solve(-g);
    if (!step.allFinite()) {
      res.why = "singular Hessian";
      return res;
    }
    if (step.norm() > opt.max_step) step *= opt.max_step / step.norm();
    bool moved = false;
    double t = 1.0;
    for (int ls = 0; ls < 10; ++ls, t *= 0.5) {
      const Eigen::Vector3d q = p + t * step;
      if (!limits.contains(q)) continue;
      SolveOptions warm = so;
      warm.initial = st.unknowns;
      ReductionState sq = solve_eta(ctx, eps, q, H, warm);
      const Eigen::Vector3d gq = multiplier_gradient(sq);
      // Non-monotone acceptance: near-degenerate directions make |grad| rise
      // for a step or two before Newton locks in, so only steps that blow
      // the gradient up are cut back.
      if (gq.norm() < opt.growth_allowance * g.norm()) {
        p = q;
        st = std::move(sq);
        g = gq;
        moved = true;
        break;
      }
    }
    if (!moved) {
      if (g.norm() <= 100.0 * opt.grad_tol) break;
      res.why = "line search stalled at |grad| = " + num(g.norm());
      return res;
    }
  }
  (void)have_hess;
  // classify with a Hessian taken at the converged point
  Hs = phi_fd_hessian(ctx, eps, p, H, opt.hess_step, so, st);
  res.ok = true;
  res.crit.p = p;
  res.crit.grad_norm = g.norm();
  res.crit.hessian = Hs;
  res.crit.eigenvalues = sym_eigenvalues(Hs);
  res.crit.type = classify(res.crit.eigenvalues);
  res.crit.deviation = energy_deviation(ctx, st, H);
  res.crit.phi = kE0 + res.crit.deviation;
  res.crit.gamma = gamma(p, H, 1.0);
  res.crit.state = std::move(st);
  return res;
}

}  // namespace detail

/// Coarse scan of Phi over the box, seeds from the scan (extrema, cells where
/// the gradient changes sign in every component, midpoints between pairs of
/// extrema), Newton on the multiplier gradient, FD Hessian classification.
inline PhiReport find_phi_critical(const ReductionContext& ctx, double eps, const CurvatureField& H, const Box& box,
                                   const PhiSearchOptions& opt = {}) {
  if (!((box.hi.array() >= box.lo.array()).all())) throw std::invalid_argument("find_phi_critical: empty box");
  if (opt.n < 2) throw std::invalid_argument("find_phi_critical: scan needs at least 2 nodes per axis");
  PhiReport rep;
  rep.box = box;
  rep.n = opt.n;
  rep.eps = eps;
  rep.nodes = detail::box_nodes(box, opt.n);
  const std::size_t count = rep.nodes.size();
  rep.values.assign(count, std::numeric_limits<double>::quiet_NaN());
  rep.deviations.assign(count, std::numeric_limits<double>::quiet_NaN());
  rep.grads.assign(count, Eigen::Vector3d::Zero());
  std::vector<std::string> node_err(count);
  parallel_for(count, opt.threads, [&](std::size_t i) {
    try {
      const PhiValue v = phi(ctx, eps, rep.nodes[i], H, opt.scan_solve);
      rep.values[i] = v.value;
      rep.deviations[i] = v.deviation;
      rep.grads[i] = multiplier_gradient(v.state);
    } catch (const std::exception& e) {
      node_err[i] = e.what();
    }
  });
  std::size_t failed_nodes = 0;
  for (std::size_t i = 0; i < count; ++i)
    if (!node_err[i].empty()) {
      ++failed_nodes;
      rep.log.push_back("scan node " + std::to_string(i) + " failed: " + node_err[i]);
    }
  if (failed_nodes == count) throw PhiSearchError("find_phi_critical: every scan node failed", rep.log);

  double gmax = 0.0, vmax = 0.0, dmax = 0.0;
  for (std::size_t i = 0; i < count; ++i)
    if (node_err[i].empty()) {
      gmax = std::max(gmax, rep.grads[i].norm());
      vmax = std::max(vmax, std::abs(rep.values[i]));
      dmax = std::max(dmax, std::abs(rep.deviations[i]));
    }
  if (gmax <= opt.flat_tol * std::max(1.0, vmax)) {
    rep.flat = true;
    rep.log.push_back("flat landscape: max |grad Phi| on the scan is " + num(gmax));
    return rep;
  }

  std::vector<char> ok(count);
  for (std::size_t i = 0; i < count; ++i) ok[i] = node_err[i].empty();
  std::vector<Eigen::Vector3d> extrema, cells;
  detail::phi_scan_seeds(rep.nodes, rep.values, rep.grads, ok, opt.n, extrema, cells);
  std::vector<Eigen::Vector3d> seeds = opt.seeds;
  seeds.insert(seeds.end(), extrema.begin(), extrema.end());
  seeds.insert(seeds.end(), cells.begin(), cells.end());
  if (opt.midpoint_seeds)
    for (std::size_t a = 0; a < extrema.size(); ++a)
      for (std::size_t b = a + 1; b < extrema.size(); ++b) seeds.push_back(0.5 * (extrema[a] + extrema[b]));
  seeds = detail::dedup_points(seeds, 1e-12);
  rep.seeds_tried = static_cast<int>(seeds.size());
  if (seeds.empty()) throw PhiSearchError("find_phi_critical: the scan produced no seeds", rep.log);

  Box limits = box;
  const Eigen::Vector3d slack = 0.05 * (box.hi - box.lo);
  limits.lo -= slack;
  limits.hi += slack;
  std::vector<detail::SeedResult> results(seeds.size());
  parallel_for(seeds.size(), opt.threads, [&](std::size_t i) {
    try {
      results[i] = detail::newton_phi(ctx, eps, H, seeds[i], limits, opt);
    } catch (const std::exception& e) {
      results[i].ok = false;
      results[i].why = e.what();
    }
  });
  std::vector<PhiCritical> found;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!results[i].ok) {
      ++rep.seeds_failed;
      rep.log.push_back("seed (" + num(seeds[i].x()) + ", " + num(seeds[i].y()) + ", " + num(seeds[i].z()) +
                        ") failed: " + results[i].why);
      continue;
    }
    if (!box.contains(results[i].crit.p, 1e-9)) {
      ++rep.seeds_failed;
      rep.log.push_back("seed " + std::to_string(i) + " converged outside the box");
      continue;
    }
    if (std::abs(results[i].crit.deviation) <= opt.tail_rel * dmax) {
      ++rep.tail_dropped;
      const Eigen::Vector3d& q = results[i].crit.p;
      rep.log.push_back("far-field point (" + num(q.x()) + ", " + num(q.y()) + ", " + num(q.z()) +
                        ") dropped, |Phi - E0| = " + num(std::abs(results[i].crit.deviation)));
      continue;
    }
    bool dup = false;
    for (const auto& f : found) dup = dup || (f.p - results[i].crit.p).norm() <= opt.dedup;
    if (!dup) found.push_back(std::move(results[i].crit));
  }
  if (found.empty()) throw PhiSearchError("find_phi_critical: every seed failed", rep.log);
  std::sort(found.begin(), found.end(), [](const PhiCritical& a, const PhiCritical& b) { return detail::lex_less(a.p, b.p); });
  rep.critical = std::move(found);
  return rep;
}

}  // namespace hbubble
