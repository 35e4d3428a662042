#include "hbubble/diagnostics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>

using namespace hbubble;

namespace {

constexpr double kPi = std::numbers::pi;

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "hbubble_diag_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

int count_lines(const std::string& text, const std::string& prefix) {
  int n = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    if (text.compare(pos, prefix.size(), prefix) == 0) ++n;
    if (end == std::string::npos) break;
    pos = end + 1;
  }
  return n;
}

}  // namespace

TEST(Norms, ConstantAndBaseBubble) {
  auto disc = make_discretization(12);
  const Eigen::Vector3d c(1.0, -2.0, 0.5);
  for (double s : {2.0, 3.0, 1.5})
    EXPECT_NEAR(w1s_norm(MapS2R3::constant(disc, c), s), c.norm() * std::pow(4 * kPi, 1.0 / s), 1e-12);
  const MapS2R3 u0 = base_bubble(disc);
  EXPECT_NEAR(w1s_norm(u0, 2.0), std::sqrt(8 * kPi) + std::sqrt(4 * kPi), 1e-12);
  EXPECT_NEAR(w1s_norm(u0, 3.0), std::cbrt(std::pow(2.0, 1.5) * 4 * kPi) + std::cbrt(4 * kPi), 1e-12);
  EXPECT_THROW(w1s_norm(u0, 1.0), std::invalid_argument);
  EXPECT_THROW(w1s_norm(u0, INFINITY), std::invalid_argument);
}

TEST(BranchPoints, BaseBubbleAndPerturbation) {
  auto disc = make_discretization(16);
  const MapS2R3 u0 = base_bubble(disc);
  EXPECT_NEAR(branch_point_scan(u0).min_gradsq, 2.0, 1e-12);
  // small smooth perturbation with C^1 size below 0.1
  const auto& s = disc->grid().unit_points;
  Eigen::Matrix3Xd f(3, s.cols());
  for (Eigen::Index k = 0; k < s.cols(); ++k)
    f.col(k) = 0.02 * Eigen::Vector3d(s(0, k) * s(1, k), s(2, k) * s(2, k), s(0, k));
  const MapS2R3 eta = MapS2R3::from_samples(disc, f);
  ASSERT_LE(c1_size(eta), 0.1);
  EXPECT_GE(branch_point_scan(u0 + eta).min_gradsq, 1.5);
}

TEST(BranchPoints, EngineeredZero) {
  // (1 - z) (x, y, 1 - z) vanishes to second order at the north pole
  auto disc = make_discretization(16);
  const auto& s = disc->grid().unit_points;
  Eigen::Matrix3Xd f(3, s.cols());
  for (Eigen::Index k = 0; k < s.cols(); ++k) {
    const double w = 1.0 - s(2, k);
    f.col(k) = Eigen::Vector3d(w * s(0, k), w * s(1, k), w * w);
  }
  const MapS2R3 u = MapS2R3::from_samples(disc, f);
  const BranchScan b = branch_point_scan(u);
  EXPECT_LT(b.min_gradsq, 1e-3);
  EXPECT_LT(b.theta, 0.2);
}

TEST(Conformality, BaseBubbleAndStretch) {
  auto disc = make_discretization(16);
  const MapS2R3 u0 = base_bubble(disc);
  EXPECT_LE(conformality_defect(u0), 1e-12);
  for (double d : {1e-3, 1e-2, 1e-1}) {
    Eigen::Matrix3Xd f = disc->grid().unit_points;
    f.row(0) *= 1.0 + d;
    const double defect = conformality_defect(MapS2R3::from_samples(disc, -f));
    EXPECT_GT(defect, 0.3 * d);
    EXPECT_LT(defect, 3.0 * d);
  }
  EXPECT_THROW(conformality_defect(MapS2R3::zero(disc)), std::domain_error);
}

TEST(Curvature, SpheresOfRadiusR) {
  auto disc = make_discretization(16);
  const MapS2R3 u0 = base_bubble(disc);
  for (double r : {0.5, 1.0, 2.0}) {
    const MapS2R3 u = (u0 * r).translated(Eigen::Vector3d(0.3, -1.0, 2.0));
    const CurvatureSamples H = mean_curvature_extract(u);
    EXPECT_TRUE(H.flagged.empty());
    EXPECT_LE((H.values.vec().array() - 1.0 / r).abs().maxCoeff(), 1e-10) << r;
  }
}

TEST(Curvature, FlagsBranchNodes) {
  auto disc = make_discretization(8);
  const CurvatureSamples H = mean_curvature_extract(MapS2R3::constant(disc, Eigen::Vector3d(1, 2, 3)));
  EXPECT_EQ(static_cast<int>(H.flagged.size()), disc->grid().node_count());
  EXPECT_TRUE(std::isnan(H.values.samples[0]));
}

TEST(Mesh, CountsAndVolume) {
  auto disc = make_discretization(16);
  const MapS2R3 u0 = base_bubble(disc);
  const Mesh m = build_mesh(u0);
  EXPECT_EQ(m.vertices.size(), 17u * 34u + 2u);
  // closed genus-0 surface: V - E + F = 2 with E = 3F/2
  EXPECT_EQ(static_cast<long>(m.vertices.size()) - static_cast<long>(3 * m.faces.size() / 2) +
                static_cast<long>(m.faces.size()),
            2);
  EXPECT_NEAR(mesh_volume(m), 4 * kPi / 3, 0.02 * 4 * kPi / 3);
  // translation does not change the enclosed volume, scaling by r multiplies it by r^3
  EXPECT_NEAR(mesh_volume(build_mesh((u0 * 2.0).translated(Eigen::Vector3d(5, 0, 1)))), 8 * mesh_volume(m), 1e-9);
  // each triangle's normal agrees with J at its first grid vertex
  const Eigen::Matrix3Xd J = area_form(u0);
  int agree = 0, checked = 0;
  for (const auto& f : m.faces) {
    if (f[0] >= disc->grid().node_count()) continue;
    const Eigen::Vector3d nrm = (m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]);
    ++checked;
    if (nrm.dot(J.col(f[0])) > 0) ++agree;
  }
  EXPECT_EQ(agree, checked);
}

TEST(Mesh, FilesOnDisk) {
  auto disc = make_discretization(16);
  const MapS2R3 u0 = base_bubble(disc);
  const auto obj = scratch("u0.obj"), csv = scratch("u0.csv");
  export_mesh(u0, obj, MeshFormat::obj);
  export_mesh(u0, csv, MeshFormat::csv);
  const std::string o = read_file(obj);
  EXPECT_EQ(count_lines(o, "v "), 17 * 34 + 2);
  EXPECT_EQ(count_lines(o, "f "), static_cast<int>(build_mesh(u0).faces.size()));
  const std::string c = read_file(csv);
  EXPECT_EQ(count_lines(c, ""), disc->grid().node_count() + 1);
  EXPECT_EQ(c.substr(0, c.find('\n')), "theta,phi,x,y,z,H_extracted");
  EXPECT_FALSE(std::filesystem::exists(obj.string() + ".tmp"));
}

TEST(Report, BaseBubble) {
  auto disc = make_discretization(16);
  const MapS2R3 u0 = base_bubble(disc);
  const BubbleReport r = bubble_report(u0, MapS2R3::zero(disc), 0.0, constant_field(0.0));
  EXPECT_LE(r.residual_l2, 1e-11);
  EXPECT_LE(r.conformal_defect, 1e-12);
  EXPECT_NEAR(r.min_gradsq, 2.0, 1e-12);
  EXPECT_LE(r.curvature_error, 1e-12);
  EXPECT_EQ(r.w13_norm, 0.0);
  EXPECT_EQ(r.eta_c1, 0.0);
  EXPECT_NEAR(r.minus_v1, 4 * kPi / 3, 1e-12);
  EXPECT_NEAR(r.mesh_volume, r.minus_v1, 0.02 * r.minus_v1);
}
