#include "hbubble/field.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace hbubble;

namespace {

std::vector<Eigen::Vector3d> random_points(int n, unsigned seed, double box = 5.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-box, box);
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  return pts;
}

std::vector<CurvatureField> shipped_fields() {
  return {gaussian_bump(1.0, Eigen::Vector3d(0.5, -1.0, 2.0), 1.3), radial_well(),
          radial_well(1.0, 1.5, 1.0),
          linear_combination({{1.0, gaussian_bump(1.0, Eigen::Vector3d(3, 0, 0), 1.0)},
                              {-1.0, gaussian_bump(1.0, Eigen::Vector3d(-3, 0, 0), 1.0)}}),
          normalize_h0(2.0, radial_well())};
}

// relative FD error of the gradient, with a floor for points where it is tiny
double grad_error(const CurvatureField& f, const Eigen::Vector3d& p) {
  const double h = 1e-5;
  Eigen::Vector3d fd;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d e = h * Eigen::Vector3d::Unit(k);
    fd[k] = (f.eval(p + e) - f.eval(p - e)) / (2 * h);
  }
  const Eigen::Vector3d g = f.grad(p);
  return (g - fd).norm() / std::max(g.norm(), 1e-3 * std::max(1.0, std::abs(f.eval(p))));
}

double hess_error(const CurvatureField& f, const Eigen::Vector3d& p) {
  const double h = 1e-5;
  Eigen::Matrix3d fd;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d e = h * Eigen::Vector3d::Unit(k);
    fd.col(k) = (f.grad(p + e) - f.grad(p - e)) / (2 * h);
  }
  const Eigen::Matrix3d H = f.hess(p);
  return (H - fd).norm() / std::max(H.norm(), 1e-3 * std::max(1.0, f.grad(p).norm()));
}

}  // namespace

TEST(Gaussian, PeakValues) {
  const Eigen::Vector3d c(1, 2, -1);
  const auto g = gaussian_bump(2.0, c, 0.5);
  EXPECT_DOUBLE_EQ(g.eval(c), 2.0);
  EXPECT_LE(g.grad(c).norm(), 1e-15);
  EXPECT_LE((g.hess(c) + (2 * 2.0 / 0.25) * Eigen::Matrix3d::Identity()).norm(), 1e-12);
  EXPECT_LE(g.eval(c + Eigen::Vector3d(5.0, 0, 0)), 2.0 * std::exp(-100.0));
  EXPECT_EQ(g.decay_hint(), DecayHint::decaying);
  EXPECT_THROW(gaussian_bump(1.0, c, 0.0), std::invalid_argument);
  EXPECT_THROW(gaussian_bump(1.0, c, -1.0), std::invalid_argument);
}

TEST(RadialWell, Basics) {
  const auto w = radial_well();
  EXPECT_DOUBLE_EQ(w.eval(Eigen::Vector3d::Zero()), 1.0);
  EXPECT_LE(w.grad(Eigen::Vector3d::Zero()).norm(), 1e-15);
  const Eigen::Vector3d p(0.3, -0.4, 1.2);
  EXPECT_NEAR(w.eval(p), std::exp(-p.squaredNorm() / 9.0) * (1 + 4 * p.squaredNorm()), 1e-15);
  EXPECT_THROW(radial_well(0.0, 4.0, 3.0), std::invalid_argument);
  EXPECT_THROW(radial_well(1.0, 4.0, 0.0), std::invalid_argument);
  EXPECT_THROW(radial_well(1.0, 0.1, 3.0), std::invalid_argument);
}

TEST(Derivatives, FiniteDifferencesOnShippedFields) {
  for (const auto& f : shipped_fields()) {
    double gmax = 0.0, hmax = 0.0, asym = 0.0;
    for (const auto& p : random_points(100, 42)) {
      gmax = std::max(gmax, grad_error(f, p));
      hmax = std::max(hmax, hess_error(f, p));
      const Eigen::Matrix3d H = f.hess(p);
      asym = std::max(asym, (H - H.transpose()).norm() / std::max(1.0, H.norm()));
    }
    EXPECT_LE(gmax, 1e-6) << f.description();
    EXPECT_LE(hmax, 1e-6) << f.description();
    EXPECT_LE(asym, 1e-14) << f.description();
  }
}

TEST(Combination, LinearityAndZero) {
  const auto g = gaussian_bump(1.0, Eigen::Vector3d(1, 0, 0), 1.0);
  const auto zero = linear_combination({{1.0, g}, {-1.0, g}});
  const auto twice = linear_combination({{2.0, g}});
  for (const auto& p : random_points(20, 3)) {
    EXPECT_EQ(zero.eval(p), 0.0);
    EXPECT_EQ(zero.grad(p).norm(), 0.0);
    EXPECT_DOUBLE_EQ(twice.eval(p), 2.0 * g.eval(p));
    EXPECT_LE((twice.grad(p) - 2.0 * g.grad(p)).norm(), 1e-15);
    EXPECT_LE((twice.hess(p) - 2.0 * g.hess(p)).norm(), 1e-15);
  }
  const Eigen::Vector3d p1(3, 0, 0), p2(-3, 0, 0);
  const auto pair = linear_combination({{1.0, gaussian_bump(1.0, p1, 1.0)}, {-1.0, gaussian_bump(1.0, p2, 1.0)}});
  EXPECT_NEAR(pair.eval(p1), 1.0, 1e-15);
  EXPECT_NEAR(pair.eval(p2), -1.0, 1e-15);
  EXPECT_THROW(linear_combination({}), std::invalid_argument);
  const auto mixed = linear_combination({{1.0, g}, {1.0, constant_field(0.5)}});
  EXPECT_EQ(mixed.decay_hint(), DecayHint::nondecaying);
}

TEST(Normalize, ScalingAndInverse) {
  const auto b = gaussian_bump(1.0, Eigen::Vector3d::Zero(), 1.0);
  const auto n2 = normalize_h0(2.0, b);
  EXPECT_DOUBLE_EQ(n2.eval(Eigen::Vector3d::Zero()), 0.5);
  const auto same = normalize_h0(1.0, b);
  for (const auto& p : random_points(10, 5)) EXPECT_EQ(same.eval(p), b.eval(p));
  const auto back = normalize_h0(0.5, n2);  // H0 -> 1/H0 undoes the change up to a factor
  for (const auto& p : random_points(50, 6)) {
    EXPECT_NEAR(back.eval(p), b.eval(p), 1e-12);
    EXPECT_LE(grad_error(n2, p), 1e-6);
  }
  EXPECT_THROW(normalize_h0(0.0, b), std::invalid_argument);
  const auto neg = normalize_h0(-2.0, b);
  EXPECT_DOUBLE_EQ(neg.eval(Eigen::Vector3d(1, 0, 0)), b.eval(Eigen::Vector3d(-0.5, 0, 0)) / -2.0);
}

TEST(Callable, FiniteDifferenceFallback) {
  const auto f = callable_field([](const Eigen::Vector3d& p) { return std::sin(p.x()) * p.y() + p.z() * p.z(); });
  EXPECT_FALSE(f.analytic());
  const Eigen::Vector3d p(0.4, 1.1, -0.7);
  EXPECT_NEAR(f.grad(p).x(), std::cos(0.4) * 1.1, 1e-7);
  EXPECT_NEAR(f.hess(p)(2, 2), 2.0, 1e-4);
}

TEST(Dsl, ParseTerms) {
  const auto t = parse_field_term("  -2.5 GAUSSIAN a=1 c=3,0,-1 s=0.5 ");
  EXPECT_EQ(t.weight, -2.5);
  EXPECT_EQ(t.kind, "gaussian");
  EXPECT_EQ(t.c, Eigen::Vector3d(3, 0, -1));
  EXPECT_EQ(t.s, 0.5);
  const auto r = parse_field_term("+ radialwell a=1 b=4 s=3");
  EXPECT_EQ(r.weight, 1.0);
  EXPECT_EQ(r.b, 4.0);
  const auto m = parse_field_term("- RadialWell");
  EXPECT_EQ(m.weight, -1.0);
  EXPECT_EQ(m.s, 3.0);
}

TEST(Dsl, RoundTrip) {
  const std::string text =
      "# two-sign pair\n"
      "1 gaussian a=1 c=3,0,0 s=1\n"
      "\n"
      "-1 gaussian a=1 c=-3,0,0 s=1   # negative\n"
      "0.2 radialwell a=1 b=4 s=3\n";
  const auto terms = parse_field_dsl(text);
  ASSERT_EQ(terms.size(), 3u);
  std::string again;
  for (const auto& t : terms) again += to_dsl(t) + "\n";
  EXPECT_EQ(parse_field_dsl(again), terms);
  const auto f = build_field(terms);
  EXPECT_NEAR(f.eval(Eigen::Vector3d(3, 0, 0)), 1.0 + 0.2 * radial_well().eval(Eigen::Vector3d(3, 0, 0)) -
                                                     std::exp(-36.0),
              1e-14);
}

TEST(Dsl, ErrorsCarryLineNumbers) {
  try {
    parse_field_dsl("1 gaussian a=1 c=0,0,0 s=1\n\n2 blob a=1\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(parse_field_term("x gaussian"), ParseError);
  EXPECT_THROW(parse_field_term("1 gaussian c=1,2"), ParseError);
  EXPECT_THROW(parse_field_term("1 gaussian s=0"), ParseError);
  EXPECT_THROW(parse_field_term("1 radialwell b=0.01"), ParseError);
  EXPECT_THROW(parse_field_term("1 gaussian q=2"), ParseError);
  EXPECT_THROW(parse_field_term("gaussian"), ParseError);
}

TEST(Hypotheses, Bump) {
  const auto r = check_hypotheses(gaussian_bump(1.0, Eigen::Vector3d::Zero(), 1.0), 1.0);
  EXPECT_GE(r.ball_samples, 500);
  EXPECT_TRUE(r.h1_pass);
  EXPECT_TRUE(r.h2_pass);
  EXPECT_TRUE(r.h4_pass);
  EXPECT_FALSE(r.h3_pass);
  EXPECT_LT(r.h3_posdef, 0.0);
}

TEST(Hypotheses, RadialWellDefaults) {
  const auto r = check_hypotheses(radial_well(), 1.0);
  EXPECT_TRUE(r.h1_pass);
  EXPECT_TRUE(r.h3_pass);
  EXPECT_TRUE(r.h4_pass);
  EXPECT_EQ(r.decay_radii, (std::vector<double>{5, 10, 20}));
}

TEST(Hypotheses, ZeroField) {
  const auto r = check_hypotheses(constant_field(0.0), 1.0);
  EXPECT_TRUE(r.h1_pass);
  EXPECT_TRUE(r.h2_pass);
  EXPECT_FALSE(r.h3_pass);  // zero Hessian is not positive definite
  EXPECT_FALSE(r.h4_pass);
  EXPECT_EQ(r.h4_min_value, 0.0);
}

TEST(Hypotheses, DeterministicAndNondecaying) {
  const auto f = radial_well(1.0, 1.5, 1.0);
  const auto a = check_hypotheses(f, 2.0, 11), b = check_hypotheses(f, 2.0, 11);
  EXPECT_EQ(a.h3_posdef, b.h3_posdef);
  EXPECT_EQ(a.h2_grad_bound, b.h2_grad_bound);
  EXPECT_EQ(a.seed, 11u);
  EXPECT_DOUBLE_EQ(a.decay_radii.back(), 10.0);
  const auto c = check_hypotheses(constant_field(1.0), 1.0);
  EXPECT_FALSE(c.h1_pass);
}
