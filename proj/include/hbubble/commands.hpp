#pragma once

#include "hbubble/config.hpp"
#include "hbubble/diagnostics.hpp"
#include "hbubble/functionals.hpp"
#include "hbubble/melnikov.hpp"
#include "hbubble/reduction.hpp"

#include <Eigen/SVD>
#include <boost/version.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

namespace hbubble {

inline constexpr const char* kVersion = "0.1.0";

using json = nlohmann::ordered_json;

struct Log {
  std::ostream* os = &std::cerr;
  bool verbose = false;
  void info(const std::string& s) const {
    if (os) *os << s << "\n";
  }
  void debug(const std::string& s) const {
    if (os && verbose) *os << "  " << s << "\n";
  }
};

struct CommandResult {
  bool ok = false;
  json report;
  std::vector<std::string> outputs;  // relative to the output directory
};

namespace detail {

inline json to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

inline json to_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(x);
  return a;
}

inline void write_out(const RunConfig& c, CommandResult& r, const std::string& name, const std::string& content) {
  atomic_write(std::filesystem::path(c.out) / name, content);
  r.outputs.push_back(name);
}

inline json hypothesis_json(const HypothesisReport& h) {
  return {{"h0", h.h0},
          {"seed", h.seed},
          {"ball_samples", h.ball_samples},
          {"decay_radii", to_json(h.decay_radii)},
          {"h1_decay", to_json(h.h1_decay)},
          {"inner_max", h.inner_max},
          {"h2_grad_bound", h.h2_grad_bound},
          {"h3_posdef", h.h3_posdef},
          {"h4_min_value", h.h4_min_value},
          {"h1_pass", h.h1_pass},
          {"h2_pass", h.h2_pass},
          {"h3_pass", h.h3_pass},
          {"h4_pass", h.h4_pass},
          {"analytic", h.analytic},
          {"h2_note", h.h2_note}};
}

/// The unit-bubble problem for a given H0: maps are scaled by H0, which turns
/// H0 + eps H1(x) into H0 (1 + eps H1~(v)) with H1~ = normalize_h0(H0, H1).
struct Problem {
  double h0;
  CurvatureField h1;     // physical
  CurvatureField field;  // normalized
  Box box;               // normalized coordinates
  Eigen::Vector3d to_physical(const Eigen::Vector3d& v) const { return v / h0; }
};

inline Problem make_problem(const RunConfig& c, double h0) {
  CurvatureField h1 = build_field(c.field);
  CurvatureField f = normalize_h0(h0, h1);
  return Problem{h0, std::move(h1), std::move(f), h0 == 1.0 ? c.box : c.box.scaled(h0)};
}

inline SolveOptions solve_options(const RunConfig& c, double tol) {
  SolveOptions o;
  o.tol = tol;
  o.max_iter = c.max_iter;
  o.mode = c.mode;
  return o;
}

inline GammaOptions gamma_options(const RunConfig& c) {
  GammaOptions g;
  g.tol = c.quad_tol;
  return g;
}

}  // namespace detail

/// Run manifest: what ran, on which config, with which library versions.
inline void write_manifest(const RunConfig& c, const std::string& command, CommandResult& r, double seconds) {
  json m;
  m["tool"] = "hbubble";
  m["version"] = kVersion;
  m["command"] = command;
  m["scenario"] = c.scenario;
  m["config_hash"] = config_hash(c);
  m["config"] = serialize_config(c);
  m["ok"] = r.ok;
  m["seconds"] = seconds;
  m["threads"] = c.threads;
  m["versions"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"boost", BOOST_LIB_VERSION},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                   {"compiler", __VERSION__}};
  m["outputs"] = r.outputs;
  atomic_write(std::filesystem::path(c.out) / "manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// validate

struct CheckItem {
  std::string name;
  double value = 0.0;
  double tol = 0.0;
  bool pass = false;
};

inline std::vector<CheckItem> unperturbed_checks(const RunConfig& c) {
  constexpr double pi = std::numbers::pi;
  std::vector<CheckItem> items;
  auto add = [&](std::string name, double value, double tol) {
    items.push_back({std::move(name), value, tol, std::isfinite(value) && value <= tol});
  };
  auto disc = make_discretization(c.degree, c.padding);
  const MapS2R3 u0 = base_bubble(disc);
  const CurvatureField zero = constant_field(0.0);
  const EnergyBreakdown e = energy(u0, 0.0, zero);
  add("energy_e0", std::abs(e.total - 4 * pi / 3) / (4 * pi / 3), 1e-9);
  add("dirichlet", std::abs(dirichlet(u0) - 8 * pi) / (8 * pi), 1e-10);
  add("volume_v1", std::abs(volume_v1(u0) + 4 * pi / 3) / (4 * pi / 3), 1e-10);
  add("residual_l2", residual(u0, 0.0, zero).l2, 1e-11);

  const Eigen::MatrixXd A = assemble_e0_hessian(disc);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd s = svd.singularValues();
  int small = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) small += s[i] < 1e-8 * s[0];
  add("kernel_dim_minus_9", std::abs(small - 9.0), 0.0);
  const TangentFrame fr = tangent_frame(disc);
  add("frame_gram", fr.gram_residual, 1e-10);
  add("frame_mean", fr.mean_residual, 1e-10);
  if (small == 9) {
    const Eigen::MatrixXd K = svd.matrixV().rightCols(9);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(fr.basis());
    const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(K.rows(), 9);
    const double smin = Eigen::JacobiSVD<Eigen::MatrixXd>(Q.transpose() * K).singularValues().minCoeff();
    add("kernel_angle", std::acos(std::min(1.0, smin)), 1e-6);
  } else {
    add("kernel_angle", std::numeric_limits<double>::infinity(), 1e-6);
  }
  const CurvatureField H = build_field(c.field);
  const GammaOptions go = detail::gamma_options(c);
  for (const Eigen::Vector3d& p : {Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(2, 0, 0), Eigen::Vector3d(0, -3, 1)}) {
    const double ref = gauss_green_oracle(p, H, go);
    const double vh = weighted_volume(u0.translated(p), H);
    add("gauss_green(" + num(p.x()) + "," + num(p.y()) + "," + num(p.z()) + ")",
        std::abs(vh - ref) / std::max(1.0, std::abs(ref)), 1e-6);
  }
  return items;
}

inline CommandResult cmd_validate(const RunConfig& c, const Log& log = {}) {
  CommandResult r;
  const auto items = unperturbed_checks(c);
  r.ok = true;
  json arr = json::array();
  for (const auto& it : items) {
    r.ok = r.ok && it.pass;
    log.info(std::string(it.pass ? "PASS " : "FAIL ") + it.name + " = " + num(it.value) + " (tol " + num(it.tol) + ")");
    arr.push_back({{"name", it.name}, {"value", it.value}, {"tol", it.tol}, {"pass", it.pass}});
  }
  r.report = {{"command", "validate"}, {"degree", c.degree}, {"items", arr}, {"ok", r.ok}};
  detail::write_out(c, r, "validate.json", r.report.dump(2) + "\n");
  return r;
}

// ---------------------------------------------------------------------------
// gamma-scan

inline json gamma_report_json(const MelnikovReport& rep) {
  json crit = json::array();
  for (const auto& cp : rep.critical)
    crit.push_back({{"p", detail::to_json(cp.p)},
                    {"gamma", cp.value},
                    {"grad_norm", cp.grad_norm},
                    {"eigenvalues", detail::to_json(cp.eigenvalues)},
                    {"type", to_string(cp.type)}});
  return {{"h0", rep.h0},
          {"n", rep.n},
          {"box", {{"lo", detail::to_json(rep.box.lo)}, {"hi", detail::to_json(rep.box.hi)}}},
          {"flat", rep.flat},
          {"seeds_tried", rep.seeds_tried},
          {"critical", crit},
          {"log", rep.log}};
}

inline CommandResult cmd_gamma_scan(const RunConfig& c, const Log& log = {}) {
  CommandResult r;
  const CurvatureField H = build_field(c.field);
  CriticalSearchOptions opt;
  opt.n = c.gamma_n;
  opt.threads = c.threads;
  const MelnikovReport rep = find_gamma_critical(H, c.h0, c.box, opt);
  if (rep.flat) log.info("warning: flat Gamma landscape, no critical points reported");
  for (const auto& cp : rep.critical)
    log.info(std::string(to_string(cp.type)) + " at (" + num(cp.p.x()) + ", " + num(cp.p.y()) + ", " +
             num(cp.p.z()) + "), Gamma = " + num(cp.value));
  for (const auto& l : rep.log) log.debug(l);
  detail::write_out(c, r, "landscape.csv", landscape_csv(rep));
  r.report = gamma_report_json(rep);
  r.report["command"] = "gamma-scan";
  r.ok = true;
  r.report["ok"] = true;
  detail::write_out(c, r, "gamma_critical.json", r.report.dump(2) + "\n");
  return r;
}

// ---------------------------------------------------------------------------
// reduce

inline json state_json(const ReductionContext& ctx, const ReductionState& st, const detail::Problem& pr) {
  const MapS2R3 u = st.map(ctx);
  json j;
  j["eps"] = st.eps;
  j["h0"] = pr.h0;
  j["p"] = detail::to_json(pr.to_physical(st.p));
  j["iterations"] = st.iterations;
  j["converged"] = st.converged;
  j["mode"] = to_string(st.mode);
  j["update_norms"] = detail::to_json(st.update_norms);
  j["eta_w13"] = st.eta_w13;
  j["eta_w12"] = w1s_norm(st.eta, 2.0);
  j["eta_c1"] = c1_size(st.eta);
  j["lambda"] = json::array();
  for (int i = 0; i < 6; ++i) j["lambda"].push_back(st.lambda[i]);
  j["alpha"] = detail::to_json(st.alpha);
  j["constraint_residual"] = st.constraint_residual;
  j["stationarity_residual"] = st.stationarity_residual;
  j["eta_equation_residual"] = eta_equation_residual(ctx, st, pr.field);
  j["residual_l2"] = residual(u, st.eps, pr.field).l2;
  j["outside_validation"] = st.outside_validation;
  return j;
}

inline CommandResult cmd_reduce(const RunConfig& c, const Log& log = {}) {
  CommandResult r;
  r.report["command"] = "reduce";
  const detail::Problem pr = detail::make_problem(c, c.h0);
  const auto ctx = make_reduction_context(c.degree, c.padding);
  const Eigen::Vector3d v = c.h0 * c.p;
  const SolveOptions so = detail::solve_options(c, c.solver_tol);
  try {
    const PhiValue pv = phi(*ctx, c.eps, v, pr.field, so);
    json st = state_json(*ctx, pv.state, pr);
    st["phi"] = pv.value;
    st["phi_deviation"] = pv.deviation;
    st["gamma"] = gamma(c.p, pr.h1, c.h0, detail::gamma_options(c));
    r.report["state"] = st;
    const double eq = st["eta_equation_residual"].get<double>();
    const bool eq_ok = eq <= 10.0 * so.tol;
    log.info("eta: W13 " + num(pv.state.eta_w13) + ", iterations " + std::to_string(pv.state.iterations) +
             ", equation residual " + num(eq));
    log.info("Phi - E0 = " + num(pv.deviation) + ", Gamma = " + num(st["gamma"].get<double>()));
    r.ok = pv.state.converged && eq_ok;
    r.report["eta_equation_ok"] = eq_ok;
  } catch (const ReductionError& e) {
    log.info(std::string("reduction failed: ") + e.what());
    r.report["error"] = e.what();
    r.report["history"] = detail::to_json(e.history());
    r.ok = false;
    detail::write_out(c, r, "reduce.json", r.report.dump(2) + "\n");
    return r;
  }
  if (!c.eps_list.empty()) {
    const ExpansionReport ex = expansion_check(*ctx, v, pr.field, c.eps_list, so, detail::gamma_options(c));
    std::string csv = "eps,phi,gamma,remainder,ratio\n";
    json rows = json::array();
    for (const auto& row : ex.rows) {
      csv += num(row.eps) + "," + num(row.phi) + "," + num(row.gamma) + "," + num(row.remainder) + "," +
             num(row.ratio) + "\n";
      rows.push_back({{"eps", row.eps}, {"phi", row.phi}, {"gamma", row.gamma}, {"remainder", row.remainder},
                      {"ratio", row.ratio}});
      log.info("eps " + num(row.eps) + ": remainder/eps^2 = " + num(row.ratio));
    }
    detail::write_out(c, r, "expansion.csv", csv);
    r.report["expansion"] = {{"rows", rows}, {"spread", std::isfinite(ex.spread) ? json(ex.spread) : json("inf")},
                             {"bounded", ex.bounded}};
    r.ok = r.ok && ex.bounded;
  }
  r.report["ok"] = r.ok;
  detail::write_out(c, r, "reduce.json", r.report.dump(2) + "\n");
  return r;
}

// ---------------------------------------------------------------------------
// solve

struct BubbleCheck {
  PhiCritical crit;
  Eigen::Vector3d p_physical;
  double gamma_physical = 0.0;
  BubbleReport report;
  double natural_constraint = 0.0;
  double residual_l2 = 0.0;
  bool pass = false;
};

struct SolveOutcome {
  double h0 = 1.0;
  PhiReport search;
  std::vector<BubbleCheck> bubbles;
  bool ok = false;
  std::string error;
};

inline constexpr double kNaturalTol = 1e-8;
inline constexpr double kMinGradSq = 1.5;

inline PhiSearchOptions search_options(const RunConfig& c) {
  PhiSearchOptions o;
  o.n = c.scan_n;
  o.threads = c.threads;
  o.scan_solve = detail::solve_options(c, c.solver_tol);
  o.refine_solve = detail::solve_options(c, c.refine_tol);
  return o;
}

/// Critical points of Phi at one H0, with the per-bubble diagnostics. Files go
/// to `prefix` inside the output directory.
inline SolveOutcome run_solve(const RunConfig& c, double h0, const ReductionContext& ctx, CommandResult& r,
                              const Log& log, const std::string& prefix = "") {
  SolveOutcome out;
  out.h0 = h0;
  const detail::Problem pr = detail::make_problem(c, h0);
  try {
    out.search = find_phi_critical(ctx, c.eps, pr.field, pr.box, search_options(c));
  } catch (const PhiSearchError& e) {
    out.error = e.what();
    log.info(std::string("search failed: ") + e.what());
    for (const auto& l : e.log()) log.debug(l);
    return out;
  }
  for (const auto& l : out.search.log) log.debug(l);
  if (out.search.flat) {
    out.error = "flat landscape";
    log.info("flat Phi landscape, no critical points");
    return out;
  }
  std::string lines;
  out.ok = !out.search.critical.empty();
  int k = 0;
  for (const auto& cp : out.search.critical) {
    BubbleCheck b;
    b.crit = cp;
    b.p_physical = pr.to_physical(cp.p);
    b.gamma_physical = gamma(b.p_physical, pr.h1, h0, detail::gamma_options(c));
    const MapS2R3 u = cp.state.map(ctx);
    b.report = bubble_report(u, cp.state.eta, c.eps, pr.field);
    b.natural_constraint = natural_constraint_norm(ctx, cp.state, pr.field);
    b.residual_l2 = b.report.residual_l2;
    b.pass = b.natural_constraint <= kNaturalTol && b.report.min_gradsq >= kMinGradSq;
    out.ok = out.ok && b.pass;
    json j;
    j["eps"] = c.eps;
    j["p"] = detail::to_json(b.p_physical);
    j["phi"] = cp.phi;
    j["gamma"] = b.gamma_physical;
    j["eta_w13"] = cp.state.eta_w13;
    j["iterations"] = cp.state.iterations;
    j["type"] = to_string(cp.type);
    j["hessian_eigs"] = detail::to_json(cp.eigenvalues);
    j["residual_l2"] = b.residual_l2;
    j["h0"] = h0;
    j["phi_deviation"] = cp.deviation;
    j["grad_norm"] = cp.grad_norm;
    j["natural_constraint"] = b.natural_constraint;
    lines += j.dump() + "\n";
    const std::string stem = prefix + "bubble_" + std::to_string(k);
    const MapS2R3 phys = h0 == 1.0 ? u : u * (1.0 / h0);
    if (c.mesh == MeshOutput::obj || c.mesh == MeshOutput::both) {
      export_mesh(phys, std::filesystem::path(c.out) / (stem + ".obj"), MeshFormat::obj);
      r.outputs.push_back(stem + ".obj");
    }
    if (c.mesh == MeshOutput::csv || c.mesh == MeshOutput::both) {
      export_mesh(phys, std::filesystem::path(c.out) / (stem + ".csv"), MeshFormat::csv);
      r.outputs.push_back(stem + ".csv");
    }
    const BubbleReport& br = b.report;
    json rj = {{"index", k},
               {"p", detail::to_json(b.p_physical)},
               {"type", to_string(cp.type)},
               {"residual_l2", br.residual_l2},
               {"w13_norm", br.w13_norm},
               {"min_gradsq", br.min_gradsq},
               {"conformal_defect", br.conformal_defect},
               {"curvature_error", br.curvature_error},
               {"eta_c1", br.eta_c1},
               {"mesh_volume", br.mesh_volume},
               {"minus_v1", br.minus_v1},
               {"flagged_nodes", br.flagged_nodes},
               {"natural_constraint", b.natural_constraint},
               {"pass", b.pass}};
    detail::write_out(c, r, stem + ".json", rj.dump(2) + "\n");
    log.info(std::string(to_string(cp.type)) + " at (" + num(b.p_physical.x()) + ", " + num(b.p_physical.y()) +
             ", " + num(b.p_physical.z()) + "), Phi - E0 = " + num(cp.deviation) + ", natural constraint " +
             num(b.natural_constraint) + ", min |grad u|^2 " + num(br.min_gradsq));
    out.bubbles.push_back(std::move(b));
    ++k;
  }
  detail::write_out(c, r, prefix + "critical.jsonl", lines);
  return out;
}

inline json outcome_json(const SolveOutcome& o) {
  json j;
  j["h0"] = o.h0;
  j["ok"] = o.ok;
  j["count"] = o.bubbles.size();
  j["scan"] = {{"n", o.search.n},
               {"seeds_tried", o.search.seeds_tried},
               {"seeds_failed", o.search.seeds_failed},
               {"tail_dropped", o.search.tail_dropped},
               {"flat", o.search.flat}};
  if (!o.error.empty()) j["error"] = o.error;
  return j;
}

inline CommandResult cmd_solve(const RunConfig& c, const Log& log = {}, SolveOutcome* keep = nullptr) {
  CommandResult r;
  const auto ctx = make_reduction_context(c.degree, c.padding);
  SolveOutcome o = run_solve(c, c.h0, *ctx, r, log);
  r.ok = o.ok;
  r.report = outcome_json(o);
  r.report["command"] = "solve";
  if (o.bubbles.empty()) {
    const auto& s = o.search;
    log.info("no critical point found: " + std::to_string(s.nodes.size()) + " scan nodes, " +
             std::to_string(s.seeds_tried) + " seeds, " + std::to_string(s.seeds_failed) + " failed");
  }
  detail::write_out(c, r, "solve.json", r.report.dump(2) + "\n");
  if (keep) *keep = std::move(o);
  return r;
}

// ---------------------------------------------------------------------------
// multiplicity

struct TypeCounts {
  int min = 0, max = 0, saddle = 0, degenerate = 0;
  int positive = 0, negative = 0;  // sign of Phi - E0
};

inline TypeCounts count_types(const SolveOutcome& o) {
  TypeCounts t;
  for (const auto& b : o.bubbles) {
    switch (b.crit.type) {
      case CriticalType::min: ++t.min; break;
      case CriticalType::max: ++t.max; break;
      case CriticalType::saddle: ++t.saddle; break;
      case CriticalType::degenerate: ++t.degenerate; break;
    }
    if (b.crit.deviation > 0) ++t.positive;
    if (b.crit.deviation < 0) ++t.negative;
  }
  return t;
}

/// Expected count per scenario: thm1 at least one bubble, thm2/remark2 one of
/// each Hessian type, thm3/remark3 two with opposite Phi - E0 signs.
inline bool expected_found(const std::string& scenario, const SolveOutcome& o) {
  if (!o.ok) return false;
  const TypeCounts t = count_types(o);
  if (scenario == "thm1") return !o.bubbles.empty();
  if (scenario == "thm2" || scenario == "remark2") return t.min >= 1 && t.max >= 1 && t.saddle >= 1;
  return t.positive >= 1 && t.negative >= 1;
}

inline json counts_json(const TypeCounts& t) {
  return {{"min", t.min}, {"max", t.max}, {"saddle", t.saddle}, {"degenerate", t.degenerate},
          {"phi_above", t.positive}, {"phi_below", t.negative}};
}

struct HypothesisGate {
  bool pass = false;
  json report;
};

/// Hypotheses for one scenario at one H0.
inline HypothesisGate scenario_hypotheses(const RunConfig& c, double h0) {
  HypothesisGate g;
  const CurvatureField H = build_field(c.field);
  const HypothesisReport h = check_hypotheses(H, h0, c.seed);
  g.report["hypotheses"] = detail::hypothesis_json(h);
  const std::string& s = c.scenario;
  g.pass = h.h1_pass && h.h2_pass;
  if (s == "thm2") g.pass = g.pass && h.h3_pass && h.h4_pass;
  if (s == "remark2") {
    // the weaker requirement carried over to Gamma: Gamma(0) > 0 and its Hessian positive definite
    const GammaOptions go = detail::gamma_options(c);
    const double g0 = gamma(Eigen::Vector3d::Zero(), H, h0, go);
    const Eigen::Vector3d eig = sym_eigenvalues(gamma_hessian(Eigen::Vector3d::Zero(), H, h0, go));
    g.report["gamma0"] = g0;
    g.report["gamma0_hessian_eigs"] = detail::to_json(eig);
    g.pass = g.pass && g0 > 0.0 && eig.minCoeff() > 0.0;
  }
  if (s == "thm3" || s == "remark3") {
    const H5Check h5 = check_h5(H, h0, *c.h5_p1, *c.h5_p2, detail::gamma_options(c));
    g.report["h5"] = {{"gamma_p1", h5.gamma1}, {"gamma_p2", h5.gamma2}, {"pass", h5.pass}};
    g.pass = g.pass && h5.pass;
  }
  g.report["pass"] = g.pass;
  return g;
}

inline CommandResult cmd_multiplicity(const RunConfig& c, const Log& log = {}, std::vector<SolveOutcome>* keep = nullptr) {
  CommandResult r;
  const std::string& s = c.scenario;
  if (s == "custom") throw std::invalid_argument("multiplicity: config must name a scenario");
  r.report["command"] = "multiplicity";
  r.report["scenario"] = s;
  const bool sweep = s == "remark2" || s == "remark3";
  const std::vector<double> h0s = sweep ? c.h0_sweep : std::vector<double>{c.h0};
  const auto ctx = make_reduction_context(c.degree, c.padding);
  json runs = json::array();
  std::optional<double> first;
  bool all_ok = true;
  for (double h0 : h0s) {
    const HypothesisGate gate = scenario_hypotheses(c, h0);
    json run = {{"h0", h0}, {"hypotheses", gate.report}};
    log.info("h0 = " + num(h0) + ": hypotheses " + (gate.pass ? "pass" : "fail"));
    if (!gate.pass) {
      run["verdict"] = false;
      runs.push_back(run);
      if (!sweep) {
        all_ok = false;
        break;  // single-h0 scenarios stop at their hypotheses
      }
      continue;
    }
    const std::string prefix = sweep ? "h0_" + num(h0) + "/" : "";
    SolveOutcome o = run_solve(c, h0, *ctx, r, log, prefix);
    const bool found = expected_found(s, o);
    const TypeCounts t = count_types(o);
    run["solve"] = outcome_json(o);
    run["counts"] = counts_json(t);
    run["verdict"] = found;
    log.info("h0 = " + num(h0) + ": " + std::to_string(o.bubbles.size()) + " critical points (min " +
             std::to_string(t.min) + ", max " + std::to_string(t.max) + ", saddle " + std::to_string(t.saddle) +
             "), expected " + (found ? "found" : "not found"));
    if (found && !first) first = h0;
    all_ok = all_ok && found;
    runs.push_back(run);
    if (keep) keep->push_back(std::move(o));
  }
  r.report["runs"] = runs;
  if (sweep) {
    r.ok = first.has_value();
    r.report["smallest_h0"] = first ? json(*first) : json(nullptr);
    log.info(first ? "smallest h0 with the expected bubbles: " + num(*first) : "no h0 in the sweep gave the expected bubbles");
  } else {
    r.ok = all_ok;
  }
  r.report["verdict"] = r.ok;
  r.report["ok"] = r.ok;
  detail::write_out(c, r, "verdict.json", r.report.dump(2) + "\n");
  return r;
}

}  // namespace hbubble
