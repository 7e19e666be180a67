#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>

#include "istk/error.hpp"

namespace istk::geom {

using SdfFn = std::function<double(const Eigen::Vector3d&)>;

// Closed-form signed distance fields used as test oracles and to define the
// synthetic shape families. Sphere and box are exact; ellipsoid and smooth
// unions are Lipschitz-bounded approximations with exact sign.

struct SphereSdf {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 1.0;

  double operator()(const Eigen::Vector3d& p) const { return (p - center).norm() - radius; }

  Eigen::Vector3d gradient(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d d = p - center;
    const double n = d.norm();
    return n > 0.0 ? Eigen::Vector3d(d / n) : Eigen::Vector3d(1, 0, 0);
  }
};

struct BoxSdf {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half = Eigen::Vector3d::Ones();

  double operator()(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d q = (p - center).cwiseAbs() - half;
    const double outside = q.cwiseMax(0.0).norm();
    const double inside = std::min(q.maxCoeff(), 0.0);
    return outside + inside;
  }
};

// Scaled-space approximation: f = k0*(k0-1)/k1 with k0 = |p/r|, k1 = |p/r^2|.
// Zero exactly on the surface, sign exact everywhere.
struct EllipsoidSdf {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d axes = Eigen::Vector3d::Ones();

  double operator()(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d d = p - center;
    const double k0 = d.cwiseQuotient(axes).norm();
    if (k0 == 0.0) return -axes.minCoeff();
    const double k1 = d.cwiseQuotient(axes.cwiseProduct(axes)).norm();
    return k0 * (k0 - 1.0) / k1;
  }
};

// Polynomial smooth minimum; Lipschitz constant stays <= 1 for SDF inputs.
inline double smooth_min(double a, double b, double k) {
  const double h = std::max(k - std::abs(a - b), 0.0) / k;
  return std::min(a, b) - h * h * k * 0.25;
}

struct TwoLobeSdf {
  EllipsoidSdf lobe_a, lobe_b;
  double blend = 0.15;

  double operator()(const Eigen::Vector3d& p) const {
    return smooth_min(lobe_a(p), lobe_b(p), blend);
  }
};

inline SdfFn analytic_sphere(const Eigen::Vector3d& center, double radius) {
  if (radius <= 0.0) throw Error(Error::Kind::Parameter, "sphere radius must be positive");
  return SphereSdf{center, radius};
}

inline SdfFn analytic_box(const Eigen::Vector3d& center, const Eigen::Vector3d& half) {
  if ((half.array() <= 0.0).any())
    throw Error(Error::Kind::Parameter, "box half-extents must be positive");
  return BoxSdf{center, half};
}

inline SdfFn analytic_ellipsoid(const Eigen::Vector3d& center, const Eigen::Vector3d& axes) {
  if ((axes.array() <= 0.0).any())
    throw Error(Error::Kind::Parameter, "ellipsoid axes must be positive");
  return EllipsoidSdf{center, axes};
}

inline SdfFn analytic_two_lobe(const Eigen::Vector3d& ca, const Eigen::Vector3d& axes_a,
                               const Eigen::Vector3d& cb, const Eigen::Vector3d& axes_b,
                               double blend) {
  if ((axes_a.array() <= 0.0).any() || (axes_b.array() <= 0.0).any() || blend <= 0.0)
    throw Error(Error::Kind::Parameter, "two-lobe parameters must be positive");
  return TwoLobeSdf{{ca, axes_a}, {cb, axes_b}, blend};
}

}  // namespace istk::geom
