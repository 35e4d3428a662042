#pragma once

#include "hbubble/sht.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

namespace hbubble {

/// Values and frame derivatives of a vector map at the nodes of some grid.
struct MapSamples {
  Eigen::Matrix3Xd value;
  Eigen::Matrix3Xd d1;
  Eigen::Matrix3Xd d2;
};

inline MapSamples sample_coefficients(const SphericalTransform& t,
                                      const Eigen::Ref<const Eigen::VectorXd>& coeffs,
                                      bool with_derivatives = true) {
  const int n = t.coeff_count();
  const int nodes = t.node_count();
  if (coeffs.size() != 3 * n) throw std::invalid_argument("sample: coefficient size mismatch");
  MapSamples s;
  s.value.resize(3, nodes);
  Eigen::VectorXd buf(nodes);
  for (int k = 0; k < 3; ++k) {
    t.synthesize(coeffs.data() + k * n, buf.data());
    s.value.row(k) = buf.transpose();
  }
  if (with_derivatives) {
    s.d1.resize(3, nodes);
    s.d2.resize(3, nodes);
    for (int k = 0; k < 3; ++k) {
      t.synthesize_d1(coeffs.data() + k * n, buf.data());
      s.d1.row(k) = buf.transpose();
      t.synthesize_d2(coeffs.data() + k * n, buf.data());
      s.d2.row(k) = buf.transpose();
    }
  }
  return s;
}

/// Projects a vector field sampled on t's grid onto degree-L coefficients
/// (component-major layout, the same as MapS2R3::coeffs).
inline Eigen::VectorXd project_vector(const SphericalTransform& t, const Eigen::Matrix3Xd& f) {
  const int n = t.coeff_count();
  Eigen::VectorXd out(3 * n);
  Eigen::VectorXd row(f.cols());
  for (int k = 0; k < 3; ++k) {
    row = f.row(k).transpose();
    t.analyze(row.data(), out.data() + k * n);
  }
  return out;
}

/// A map u: S^2 -> R^3 held as three degree-L spectral components with the
/// native-grid samples kept in sync.
class MapS2R3 {
 public:
  MapS2R3() = default;

  MapS2R3(std::shared_ptr<const SphereDiscretization> disc, Eigen::VectorXd coeffs)
      : disc_(std::move(disc)), coeffs_(std::move(coeffs)) {
    if (!disc_) throw std::invalid_argument("MapS2R3: null discretization");
    if (coeffs_.size() != 3 * disc_->coeff_count())
      throw std::invalid_argument("MapS2R3: coefficient vector has wrong size");
    native_ = sample_coefficients(disc_->native(), coeffs_);
  }

  static MapS2R3 zero(std::shared_ptr<const SphereDiscretization> disc) {
    const int n = disc->coeff_count();
    return MapS2R3(std::move(disc), Eigen::VectorXd::Zero(3 * n));
  }

  static MapS2R3 constant(std::shared_ptr<const SphereDiscretization> disc, const Eigen::Vector3d& c) {
    const int n = disc->coeff_count();
    Eigen::VectorXd v = Eigen::VectorXd::Zero(3 * n);
    for (int k = 0; k < 3; ++k) v[k * n] = c[k] * std::sqrt(4.0 * std::numbers::pi);
    return MapS2R3(std::move(disc), std::move(v));
  }

  /// Map whose native-grid samples are f (projected onto degree L).
  static MapS2R3 from_samples(std::shared_ptr<const SphereDiscretization> disc,
                              const Eigen::Matrix3Xd& f) {
    Eigen::VectorXd c = project_vector(disc->native(), f);
    return MapS2R3(std::move(disc), std::move(c));
  }

  const std::shared_ptr<const SphereDiscretization>& discretization() const { return disc_; }
  int degree() const { return disc_->degree(); }
  int coeff_count() const { return disc_->coeff_count(); }
  const Eigen::VectorXd& coeffs() const { return coeffs_; }

  SpectralField component(int k) const {
    SpectralField f(degree());
    const int n = coeff_count();
    for (int i = 0; i < n; ++i) f.coeffs[i] = coeffs_[k * n + i];
    return f;
  }

  // Native-grid caches.
  const Eigen::Matrix3Xd& values() const { return native_.value; }
  const Eigen::Matrix3Xd& d1() const { return native_.d1; }
  const Eigen::Matrix3Xd& d2() const { return native_.d2; }
  const MapSamples& native_samples() const { return native_; }

  MapSamples fine_samples(bool with_derivatives = true) const {
    return sample_coefficients(disc_->fine(), coeffs_, with_derivatives);
  }

  /// Mean value (1/4pi) integral of u.
  Eigen::Vector3d mean() const {
    const int n = coeff_count();
    Eigen::Vector3d m;
    for (int k = 0; k < 3; ++k) m[k] = coeffs_[k * n] / std::sqrt(4.0 * std::numbers::pi);
    return m;
  }

  MapS2R3 translated(const Eigen::Vector3d& p) const {
    Eigen::VectorXd c = coeffs_;
    const int n = coeff_count();
    for (int k = 0; k < 3; ++k) c[k * n] += p[k] * std::sqrt(4.0 * std::numbers::pi);
    return MapS2R3(disc_, std::move(c));
  }

  MapS2R3 operator+(const MapS2R3& o) const { return MapS2R3(disc_, coeffs_ + o.coeffs_); }
  MapS2R3 operator-(const MapS2R3& o) const { return MapS2R3(disc_, coeffs_ - o.coeffs_); }
  MapS2R3 operator*(double a) const { return MapS2R3(disc_, coeffs_ * a); }

  /// Resynthesis error between cached samples and the coefficients.
  double sync_error() const {
    const MapSamples s = sample_coefficients(disc_->native(), coeffs_, false);
    return (s.value - native_.value).cwiseAbs().maxCoeff();
  }

 private:
  std::shared_ptr<const SphereDiscretization> disc_;
  Eigen::VectorXd coeffs_;
  MapSamples native_;
};

/// Multiplier l(l+1) per coefficient, repeated for the three components.
inline Eigen::VectorXd dirichlet_multipliers(int L) {
  const int n = sh_count(L);
  Eigen::VectorXd d(3 * n);
  for (int l = 0; l <= L; ++l)
    for (int m = -l; m <= l; ++m)
      for (int k = 0; k < 3; ++k) d[k * n + sh_index(l, m)] = static_cast<double>(l) * (l + 1);
  return d;
}

/// Unperturbed bubble u0(sigma) = -sigma.
inline MapS2R3 base_bubble(std::shared_ptr<const SphereDiscretization> disc) {
  const Eigen::Matrix3Xd f = -disc->grid().unit_points;
  return MapS2R3::from_samples(std::move(disc), f);
}

}  // namespace hbubble
