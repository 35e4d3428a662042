#pragma once

#include "hbubble/field.hpp"
#include "hbubble/io.hpp"
#include "hbubble/melnikov.hpp"
#include "hbubble/reduction.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace hbubble {

// Flat key = value file. '#' starts a comment. The field is given between a
// line "field:" and a line "end", one DSL term per line. Unknown keys,
// duplicates and out-of-range values are errors carrying the line number.

enum class MeshOutput { none, obj, csv, both };

inline const char* to_string(MeshOutput m) {
  switch (m) {
    case MeshOutput::none: return "none";
    case MeshOutput::obj: return "obj";
    case MeshOutput::csv: return "csv";
    case MeshOutput::both: return "both";
  }
  return "?";
}

struct RunConfig {
  std::string scenario = "custom";  // custom | thm1 | thm2 | thm3 | remark2 | remark3
  int degree = 16;
  double padding = kDefaultPadding;
  double h0 = 1.0;
  std::vector<double> h0_sweep;  // remark scenarios only
  double eps = 1e-2;
  std::vector<double> eps_list = {1e-2, 5e-3, 2.5e-3};
  Eigen::Vector3d p = Eigen::Vector3d::Zero();  // reduce
  Box box = Box{}.scaled(4.0);
  int scan_n = 9;    // Phi scan nodes per axis
  int gamma_n = 17;  // Gamma scan nodes per axis
  double solver_tol = 1e-10;
  double refine_tol = 1e-12;
  double quad_tol = 1e-9;
  int max_iter = 60;
  SolveMode mode = SolveMode::picard;
  MeshOutput mesh = MeshOutput::obj;
  // points for the two-sign check (thm3, remark3)
  std::optional<Eigen::Vector3d> h5_p1, h5_p2;
  std::string out = "out";
  int threads = 1;
  unsigned seed = 0;
  std::vector<FieldTerm> field;

  bool operator==(const RunConfig&) const = default;
};

class ConfigError : public ParseError {
 public:
  using ParseError::ParseError;
};

inline const std::set<std::string>& scenario_names() {
  static const std::set<std::string> s = {"custom", "thm1", "thm2", "thm3", "remark2", "remark3"};
  return s;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<double> parse_reals(const std::string& v, int line) {
  std::string t = v;
  std::replace(t.begin(), t.end(), ',', ' ');
  std::istringstream is(t);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) out.push_back(parse_real(tok, line));
  return out;
}

inline int parse_int(const std::string& v, int line) {
  std::size_t pos = 0;
  int r = 0;
  try {
    r = std::stoi(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(line, "expected an integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(line, "expected an integer, got '" + v + "'");
  return r;
}

inline Eigen::Vector3d parse_vec3(const std::string& v, int line) {
  const auto r = parse_reals(v, line);
  if (r.size() != 3) throw ConfigError(line, "expected 3 reals, got " + std::to_string(r.size()));
  return Eigen::Vector3d(r[0], r[1], r[2]);
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + num(v[i]);
  return s;
}

inline std::string vec3(const Eigen::Vector3d& v) { return num(v.x()) + " " + num(v.y()) + " " + num(v.z()); }

inline void require(bool ok, int line, const std::string& msg) {
  if (!ok) throw ConfigError(line, msg);
}

}  // namespace detail

/// Range checks against what the numerical modules accept. `lines` maps keys
/// to the line they came from (0 when the config was built in code).
inline void validate_config(const RunConfig& c, const std::map<std::string, int>& lines = {}) {
  auto at = [&](const std::string& k) {
    auto it = lines.find(k);
    return it == lines.end() ? 0 : it->second;
  };
  using detail::require;
  require(scenario_names().count(c.scenario) == 1, at("scenario"), "unknown scenario '" + c.scenario + "'");
  require(c.degree >= 2 && c.degree <= kMaxDenseDegree, at("degree"),
          "degree must lie in [2, " + std::to_string(kMaxDenseDegree) + "]");
  require(c.padding >= 1.5 && c.padding <= 4.0, at("padding"), "padding must lie in [1.5, 4]");
  require(c.h0 != 0.0 && std::isfinite(c.h0), at("h0"), "h0 must be finite and nonzero");
  for (double h : c.h0_sweep) require(h != 0.0 && std::isfinite(h), at("h0_sweep"), "h0_sweep entries must be nonzero");
  require(std::isfinite(c.eps) && std::abs(c.eps) < 1.0, at("eps"), "|eps| must be below 1");
  for (double e : c.eps_list) require(e != 0.0 && std::abs(e) < 1.0, at("eps_list"), "eps_list entries must lie in (0, 1)");
  require((c.box.hi.array() > c.box.lo.array()).all(), at("box"), "box needs lo < hi on every axis");
  require(c.scan_n >= 3 && c.scan_n <= 64, at("scan_n"), "scan_n must lie in [3, 64]");
  require(c.gamma_n >= 3 && c.gamma_n <= 128, at("gamma_n"), "gamma_n must lie in [3, 128]");
  require(c.solver_tol > 0.0 && c.solver_tol < 1e-2, at("solver_tol"), "solver_tol must lie in (0, 1e-2)");
  require(c.refine_tol > 0.0 && c.refine_tol < 1e-2, at("refine_tol"), "refine_tol must lie in (0, 1e-2)");
  require(c.quad_tol > 0.0 && c.quad_tol < 1e-2, at("quad_tol"), "quad_tol must lie in (0, 1e-2)");
  require(c.max_iter >= 1, at("max_iter"), "max_iter must be positive");
  require(c.threads >= 1 && c.threads <= 256, at("threads"), "threads must lie in [1, 256]");
  require(!c.out.empty(), at("out"), "out must not be empty");
  require(!c.field.empty(), at("field"), "a field block is required");
  const bool two_sign = c.scenario == "thm3" || c.scenario == "remark3";
  require(!two_sign || (c.h5_p1 && c.h5_p2), at("scenario"), c.scenario + " needs h5_p1 and h5_p2");
  const bool sweep = c.scenario == "remark2" || c.scenario == "remark3";
  require(!sweep || !c.h0_sweep.empty(), at("scenario"), c.scenario + " needs h0_sweep");
}

inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::map<std::string, int> seen;
  std::istringstream is(text);
  std::string raw;
  int line = 0;
  bool in_field = false, field_seen = false;
  std::string field_text;
  int field_line = 0;
  while (std::getline(is, raw)) {
    ++line;
    const std::string s = detail::trim(raw.substr(0, raw.find('#')));
    if (in_field) {
      if (detail::lower(s) == "end") {
        c.field = parse_field_dsl(field_text, field_line + 1);
        in_field = false;
      } else {
        field_text += s + "\n";
      }
      continue;
    }
    if (s.empty()) continue;
    if (detail::lower(s) == "field:") {
      if (field_seen) throw ConfigError(line, "second field block");
      field_seen = in_field = true;
      field_line = line;
      seen["field"] = line;
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected key = value");
    const std::string key = detail::lower(detail::trim(s.substr(0, eq)));
    const std::string val = detail::trim(s.substr(eq + 1));
    if (seen.count(key)) throw ConfigError(line, "duplicate key '" + key + "'");
    seen[key] = line;
    if (key == "scenario") c.scenario = detail::lower(val);
    else if (key == "degree") c.degree = detail::parse_int(val, line);
    else if (key == "padding") c.padding = detail::parse_real(val, line);
    else if (key == "h0") c.h0 = detail::parse_real(val, line);
    else if (key == "h0_sweep") c.h0_sweep = detail::parse_reals(val, line);
    else if (key == "eps") c.eps = detail::parse_real(val, line);
    else if (key == "eps_list") c.eps_list = detail::parse_reals(val, line);
    else if (key == "p") c.p = detail::parse_vec3(val, line);
    else if (key == "box") {
      const auto r = detail::parse_reals(val, line);
      if (r.size() != 6) throw ConfigError(line, "box needs 6 reals: lo_x lo_y lo_z hi_x hi_y hi_z");
      c.box.lo = Eigen::Vector3d(r[0], r[1], r[2]);
      c.box.hi = Eigen::Vector3d(r[3], r[4], r[5]);
    } else if (key == "scan_n") c.scan_n = detail::parse_int(val, line);
    else if (key == "gamma_n") c.gamma_n = detail::parse_int(val, line);
    else if (key == "solver_tol") c.solver_tol = detail::parse_real(val, line);
    else if (key == "refine_tol") c.refine_tol = detail::parse_real(val, line);
    else if (key == "quad_tol") c.quad_tol = detail::parse_real(val, line);
    else if (key == "max_iter") c.max_iter = detail::parse_int(val, line);
    else if (key == "mode") {
      const std::string m = detail::lower(val);
      if (m == "picard") c.mode = SolveMode::picard;
      else if (m == "newton") c.mode = SolveMode::newton;
      else throw ConfigError(line, "mode must be picard or newton");
    } else if (key == "mesh") {
      const std::string m = detail::lower(val);
      if (m == "none") c.mesh = MeshOutput::none;
      else if (m == "obj") c.mesh = MeshOutput::obj;
      else if (m == "csv") c.mesh = MeshOutput::csv;
      else if (m == "both") c.mesh = MeshOutput::both;
      else throw ConfigError(line, "mesh must be none, obj, csv or both");
    } else if (key == "h5_p1") c.h5_p1 = detail::parse_vec3(val, line);
    else if (key == "h5_p2") c.h5_p2 = detail::parse_vec3(val, line);
    else if (key == "out") c.out = val;
    else if (key == "threads") c.threads = detail::parse_int(val, line);
    else if (key == "seed") {
      const int v = detail::parse_int(val, line);
      if (v < 0) throw ConfigError(line, "seed must be nonnegative");
      c.seed = static_cast<unsigned>(v);
    } else throw ConfigError(line, "unknown key '" + key + "'");
  }
  if (in_field) throw ConfigError(field_line, "field block is not closed by 'end'");
  validate_config(c, seen);
  return c;
}

/// Canonical text: every key in a fixed order, numbers at full precision.
inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream os;
  os << "scenario = " << c.scenario << "\n"
     << "degree = " << c.degree << "\n"
     << "padding = " << num(c.padding) << "\n"
     << "h0 = " << num(c.h0) << "\n";
  if (!c.h0_sweep.empty()) os << "h0_sweep = " << detail::join(c.h0_sweep) << "\n";
  os << "eps = " << num(c.eps) << "\n"
     << "eps_list = " << detail::join(c.eps_list) << "\n"
     << "p = " << detail::vec3(c.p) << "\n"
     << "box = " << detail::vec3(c.box.lo) << " " << detail::vec3(c.box.hi) << "\n"
     << "scan_n = " << c.scan_n << "\n"
     << "gamma_n = " << c.gamma_n << "\n"
     << "solver_tol = " << num(c.solver_tol) << "\n"
     << "refine_tol = " << num(c.refine_tol) << "\n"
     << "quad_tol = " << num(c.quad_tol) << "\n"
     << "max_iter = " << c.max_iter << "\n"
     << "mode = " << to_string(c.mode) << "\n"
     << "mesh = " << to_string(c.mesh) << "\n";
  if (c.h5_p1) os << "h5_p1 = " << detail::vec3(*c.h5_p1) << "\n";
  if (c.h5_p2) os << "h5_p2 = " << detail::vec3(*c.h5_p2) << "\n";
  os << "out = " << c.out << "\n"
     << "threads = " << c.threads << "\n"
     << "seed = " << c.seed << "\n"
     << "field:\n";
  for (const auto& t : c.field) os << to_dsl(t) << "\n";
  os << "end\n";
  return os.str();
}

inline RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

/// Hash of everything that can change a result; the output directory and the
/// thread count are left out.
inline std::string config_hash(RunConfig c) {
  c.out = "-";
  c.threads = 1;
  return hex64(fnv1a(serialize_config(c)));
}

// ---------------------------------------------------------------------------
// Shipped scenarios. configs/<name>.cfg holds serialize_config of these.

inline RunConfig scenario_config(const std::string& name) {
  RunConfig c;
  c.scenario = name;
  auto gauss = [](double w, Eigen::Vector3d ctr, double s) {
    FieldTerm t;
    t.weight = w;
    t.kind = "gaussian";
    t.a = 1.0;
    t.c = ctr;
    t.s = s;
    return t;
  };
  auto two_sign = [&] {
    c.field = {gauss(1.0, Eigen::Vector3d(3, 0, 0), 1.0), gauss(-1.0, Eigen::Vector3d(-3, 0, 0), 1.0)};
    c.h5_p1 = Eigen::Vector3d(3, 0, 0);
    c.h5_p2 = Eigen::Vector3d(-3, 0, 0);
    c.box = Box{}.scaled(5.0);
  };
  auto well = [&] {
    FieldTerm w;
    w.kind = "radialwell";
    w.a = 1.0;
    w.b = 4.0;
    w.s = 3.0;
    // a broad, weak tilt breaks the rotational symmetry of the well so that
    // its shell of minima collapses to isolated critical points
    c.field = {w, gauss(1.0, Eigen::Vector3d(10, 0, 0), 10.0)};
    c.box = Box{}.scaled(4.5);
  };
  if (name == "thm1") {
    c.field = {gauss(1.0, Eigen::Vector3d::Zero(), 1.0)};
  } else if (name == "thm2") {
    well();
  } else if (name == "thm3") {
    two_sign();
  } else if (name == "remark2") {
    well();
    c.h0_sweep = {1.0, 2.0, 4.0};
  } else if (name == "remark3") {
    two_sign();
    c.h0_sweep = {1.0, 2.0, 4.0};
  } else {
    throw std::invalid_argument("scenario_config: unknown scenario '" + name + "'");
  }
  c.out = "out/" + name;
  validate_config(c);
  return c;
}

}  // namespace hbubble
