#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <vector>

#include "istk/error.hpp"

namespace istk::tim {

// Coherent point drift: the template points act as Gaussian mixture
// centroids that move toward the data (the initial reconstruction); the
// E-step posteriors score how well each data point is explained by the
// template, which is what the Top-K filter consumes.
enum class CpdVariant { RigidScale, Affine };

struct CpdConfig {
  CpdVariant variant = CpdVariant::Affine;
  double outlier_weight = 0.1;  // w in [0,1)
  int max_iters = 150;
  double tol = 1e-6;            // stop when |sigma2 change| < tol
  bool template_moves = true;   // false: move the data toward the template
};

struct CpdResult {
  Eigen::VectorXd confidence;   // per data point: max_m P(m|n), in [0,1]
  Eigen::VectorXd inlier_mass;  // per data point: sum_m P(m|n)
  Eigen::Matrix3d linear = Eigen::Matrix3d::Identity();  // applied to the moving set
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double scale = 1.0;           // rigid variant only
  double sigma2 = 0.0;
  int iterations = 0;
  bool converged = false;
  bool sigma2_clamped = false;
  std::vector<double> sigma2_history;
};

namespace detail {

// E-step statistics for data X (N x 3) against moved centroids T (M x 3).
struct EStep {
  Eigen::VectorXd pt1;        // N: inlier posterior mass per data point
  Eigen::VectorXd p1;         // M: posterior mass per centroid
  Eigen::MatrixX3d px;        // M x 3: P * X
  Eigen::VectorXd conf;       // N: max_m P(m|n)
  Eigen::VectorXd conf_cent;  // M: max_n P(m|n)
  double np = 0.0;            // total posterior mass
};

inline EStep e_step(const Eigen::MatrixX3d& x, const Eigen::MatrixX3d& t, double sigma2,
                    double w) {
  const Eigen::Index n = x.rows(), m = t.rows();
  EStep e;
  e.pt1.resize(n);
  e.p1 = Eigen::VectorXd::Zero(m);
  e.px = Eigen::MatrixX3d::Zero(m, 3);
  e.conf.resize(n);
  e.conf_cent = Eigen::VectorXd::Zero(m);
  const double c = std::pow(2.0 * M_PI * sigma2, 1.5) * (w / (1.0 - w)) * double(m) / double(n);

  // process data points in blocks; distances via one GEMM per block
  const Eigen::Index block = 256;
  const Eigen::VectorXd t_sq = t.rowwise().squaredNorm();
  for (Eigen::Index b0 = 0; b0 < n; b0 += block) {
    const Eigen::Index bn = std::min(block, n - b0);
    const auto xb = x.middleRows(b0, bn);
    Eigen::MatrixXd d2 = (-2.0 * t * xb.transpose()).colwise() + t_sq;  // m x bn
    d2.rowwise() += xb.rowwise().squaredNorm().transpose();
    Eigen::MatrixXd k = (-d2 / (2.0 * sigma2)).array().exp();
    for (Eigen::Index j = 0; j < bn; ++j) {
      const double den = k.col(j).sum() + c;
      const Eigen::VectorXd p = k.col(j) / den;
      e.pt1[b0 + j] = p.sum();
      e.p1 += p;
      e.px += p * xb.row(j);
      e.conf[b0 + j] = p.maxCoeff();
      e.conf_cent = e.conf_cent.cwiseMax(p);
    }
  }
  e.np = e.pt1.sum();
  return e;
}

}  // namespace detail

// Registers `moving` onto `data` by EM, returning confidences for the data
// points. With the default direction the template is the moving set.
inline CpdResult cpd_register(const Eigen::MatrixX3d& template_pts,
                              const Eigen::MatrixX3d& initial_pts, const CpdConfig& cfg = {}) {
  if (template_pts.rows() == 0 || initial_pts.rows() == 0)
    throw Error(Error::Kind::Contract, "cpd needs non-empty point sets");
  if (cfg.outlier_weight < 0.0 || cfg.outlier_weight >= 1.0)
    throw Error(Error::Kind::Parameter, "outlier weight must lie in [0,1)");

  const Eigen::MatrixX3d& x = cfg.template_moves ? initial_pts : template_pts;  // data
  const Eigen::MatrixX3d& y = cfg.template_moves ? template_pts : initial_pts;  // centroids
  const Eigen::Index n = x.rows(), m = y.rows();

  CpdResult res;
  Eigen::MatrixX3d t = y;
  double sigma2 = 0.0;
  {
    // standard init: mean pairwise squared distance
    const Eigen::Vector3d mx = x.colwise().mean(), my = y.colwise().mean();
    const double xs = (x.rowwise() - mx.transpose()).squaredNorm() / double(n);
    const double ys = (y.rowwise() - my.transpose()).squaredNorm() / double(m);
    sigma2 = (xs + ys + (mx - my).squaredNorm()) / 3.0;
  }
  res.sigma2_history.push_back(sigma2);

  detail::EStep e;
  for (int it = 0; it < cfg.max_iters; ++it) {
    e = detail::e_step(x, t, sigma2, cfg.outlier_weight);
    if (e.np <= 1e-12) break;

    const Eigen::Vector3d mu_x = (x.transpose() * e.pt1) / e.np;
    const Eigen::Vector3d mu_y = (y.transpose() * e.p1) / e.np;
    const Eigen::Matrix3d a =
        e.px.transpose() * y - e.np * (mu_x * mu_y.transpose());  // cross covariance * np

    double new_sigma2 = sigma2;
    if (cfg.variant == CpdVariant::RigidScale) {
      const Eigen::JacobiSVD<Eigen::Matrix3d> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
      Eigen::Matrix3d cdiag = Eigen::Matrix3d::Identity();
      cdiag(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant();
      const Eigen::Matrix3d r = svd.matrixU() * cdiag * svd.matrixV().transpose();
      const double y_sq = (y.rowwise() - mu_y.transpose())
                              .cwiseAbs2()
                              .rowwise()
                              .sum()
                              .dot(e.p1) ;
      const double trace_sc = svd.singularValues().cwiseProduct(cdiag.diagonal()).sum();
      const double s = y_sq > 0.0 ? trace_sc / y_sq : 1.0;
      res.linear = s * r;
      res.scale = s;
      const double x_sq =
          (x.rowwise() - mu_x.transpose()).cwiseAbs2().rowwise().sum().dot(e.pt1);
      new_sigma2 = (x_sq - s * trace_sc) / (e.np * 3.0);
    } else {
      const Eigen::Matrix3d yy =
          (y.rowwise() - mu_y.transpose()).transpose() *
              (e.p1.asDiagonal() * (y.rowwise() - mu_y.transpose()).matrix()) ;
      const Eigen::Matrix3d b = a * yy.inverse();
      res.linear = b;
      const double x_sq =
          (x.rowwise() - mu_x.transpose()).cwiseAbs2().rowwise().sum().dot(e.pt1);
      new_sigma2 = (x_sq - (a * b.transpose()).trace()) / (e.np * 3.0);
    }
    res.translation = mu_x - res.linear * mu_y;
    t = (y * res.linear.transpose()).rowwise() + res.translation.transpose();

    if (new_sigma2 <= 1e-12) {
      new_sigma2 = 1e-12;
      res.sigma2_clamped = true;
    }
    res.iterations = it + 1;
    const double change = std::abs(new_sigma2 - sigma2);
    sigma2 = new_sigma2;
    res.sigma2_history.push_back(sigma2);
    if (change < cfg.tol) {
      res.converged = true;
      break;
    }
  }

  // final posteriors under the converged transform
  e = detail::e_step(x, t, sigma2, cfg.outlier_weight);
  res.sigma2 = sigma2;
  if (cfg.template_moves) {
    res.confidence = e.conf;
    res.inlier_mass = e.pt1;
  } else {
    // inverse direction: the initial points are the centroids, so score them
    // by their best posterior over the data
    res.confidence = e.conf_cent;
    res.inlier_mass = e.p1;
  }
  return res;
}

}  // namespace istk::tim
