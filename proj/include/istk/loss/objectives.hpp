#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <vector>

#include "istk/ad/tape.hpp"
#include "istk/error.hpp"
#include "istk/fields/model.hpp"

namespace istk::loss {

// Loss weights, defaults as used for training. TempShape shares the
// displacement weight and the template-code regularizer shares the instance
// one, exactly as the training objective is printed; the override fields opt
// out of that sharing when set >= 0.
struct LossWeights {
  double w_s = 3e3;
  double w_n = 1e2;
  double w_eik = 5e1;
  double w_phi = 5e2;
  double w_vec = 5.0;
  double w_dis = 1e2;
  double w_alpha = 1e5;
  double w_beta = 1e6;
  double delta = 100.0;  // off-surface sharpness, >> 1
  double w_tempshape_override = -1.0;
  double w_regt_override = -1.0;

  double w_tempshape() const { return w_tempshape_override >= 0 ? w_tempshape_override : w_dis; }
  double w_regt() const { return w_regt_override >= 0 ? w_regt_override : w_alpha; }

  void validate() const {
    const double all[] = {w_s, w_n, w_eik, w_phi, w_vec, w_dis, w_alpha, w_beta};
    for (double w : all)
      if (!(w >= 0.0) || !std::isfinite(w))
        throw Error(Error::Kind::Config, "loss weights must be finite and nonnegative");
    if (!(delta >= 10.0)) throw Error(Error::Kind::Config, "delta must be >= 10");
  }
};

// Named per-term values (unweighted means) plus the weighted total.
struct LossBreakdown {
  double sdf_reg = 0, normal = 0, eikonal = 0, offsurface = 0;
  double tpn = 0, vec = 0, dis = 0, temp_shape = 0;
  double reg_alpha = 0, reg_t = 0, reg_beta = 0;
  double total = 0;

  double weighted_sum(const LossWeights& w) const {
    return w.w_s * sdf_reg + w.w_n * normal + w.w_eik * eikonal + w.w_phi * offsurface +
           w.w_n * tpn + w.w_vec * vec + w.w_dis * dis + w.w_tempshape() * temp_shape +
           w.w_alpha * reg_alpha + w.w_regt() * reg_t + w.w_beta * reg_beta;
  }

  void accumulate(const LossBreakdown& other, double scale = 1.0) {
    sdf_reg += scale * other.sdf_reg;
    normal += scale * other.normal;
    eikonal += scale * other.eikonal;
    offsurface += scale * other.offsurface;
    tpn += scale * other.tpn;
    vec += scale * other.vec;
    dis += scale * other.dis;
    temp_shape += scale * other.temp_shape;
    reg_alpha += scale * other.reg_alpha;
    reg_t += scale * other.reg_t;
    reg_beta += scale * other.reg_beta;
    total += scale * other.total;
  }
};

// Point supervision for one instance and step.
struct InstanceBatch {
  Eigen::MatrixX3d surface_points;
  Eigen::MatrixX3d surface_normals;
  Eigen::MatrixX3d free_points;
  Eigen::VectorXd free_sdf;

  Eigen::Index surface_count() const { return surface_points.rows(); }
  Eigen::Index total_count() const { return surface_points.rows() + free_points.rows(); }

  Eigen::MatrixX3d all_points() const {
    Eigen::MatrixX3d p(total_count(), 3);
    p.topRows(surface_count()) = surface_points;
    p.bottomRows(free_points.rows()) = free_points;
    return p;
  }

  void validate() const {
    if (surface_normals.rows() != surface_points.rows())
      throw Error(Error::Kind::Contract, "surface points must carry normals");
    if (free_sdf.size() != free_points.rows())
      throw Error(Error::Kind::Contract, "free points must carry ground-truth sdf");
  }
};

namespace detail {

inline int one_minus_cosine_mean(ad::Tape& tape, int vectors /*Nx3*/, const Eigen::MatrixX3d& n) {
  const int n_const = tape.constant(n);
  const int dot = tape.rowdot(vectors, n_const);
  // normals are unit length; guard only the predicted-gradient norm
  const int denom = tape.add_scalar(tape.rownorm(vectors), 1e-12);
  const int cos = tape.cdiv(dot, denom);
  return tape.mean_all(tape.add_scalar(tape.scale(cos, -1.0), 1.0));
}

}  // namespace detail

// The four sdf-supervision terms from predicted values and spatial
// gradients. Keeping this on the tape lets the same formulas run against a
// live model or against an analytic oracle wrapped in constants.
struct SdfTermNodes {
  int sdf_reg = -1, normal = -1, eikonal = -1, offsurface = -1;
};

inline SdfTermNodes sdf_loss_nodes(ad::Tape& tape, int s, const std::array<int, 3>& ds,
                                   const InstanceBatch& batch, double delta) {
  batch.validate();
  const Eigen::Index ns = batch.surface_count();
  const Eigen::Index nf = batch.free_points.rows();
  const Eigen::Index n = ns + nf;
  if (tape.value(s).rows() != n)
    throw Error(Error::Kind::Shape, "sdf predictions do not match the batch size");

  Eigen::VectorXd gt(n);
  gt.head(ns).setZero();  // surface samples carry s=0
  gt.tail(nf) = batch.free_sdf;

  SdfTermNodes t;
  t.sdf_reg = tape.mean_all(tape.abs(tape.sub(s, tape.constant(gt))));

  const int grad = tape.concat_cols(ds[0], tape.concat_cols(ds[1], ds[2]));
  t.normal = ns > 0 ? detail::one_minus_cosine_mean(tape, tape.slice_rows(grad, 0, ns),
                                                    batch.surface_normals)
                    : tape.constant(ad::Mat::Zero(1, 1));
  t.eikonal = tape.mean_all(tape.abs(tape.add_scalar(tape.rownorm(grad), -1.0)));

  t.offsurface = nf > 0 ? tape.mean_all(tape.exp(
                              tape.scale(tape.abs(tape.slice_rows(s, ns, nf)), -delta)))
                        : tape.constant(ad::Mat::Zero(1, 1));
  return t;
}

// Laplacian smoothness of a vector field by central differences around the
// batch points: 7-point stencil, differentiable through every stencil
// evaluation. The builder returns the Nx3 field node at given points.
using DvecBuilder = std::function<int(ad::Tape&, const Eigen::MatrixX3d&)>;

inline int vec_smooth_node(ad::Tape& tape, const DvecBuilder& dvec_at,
                           const Eigen::MatrixX3d& points, int dvec_center, double h) {
  if (h <= 0.0) throw Error(Error::Kind::Parameter, "stencil step must be positive");
  const double inv_h2 = 1.0 / (h * h);
  const Eigen::Index n = points.rows();

  // all six shifted evaluations as one stacked batch
  Eigen::MatrixX3d stacked(6 * n, 3);
  for (int axis = 0; axis < 3; ++axis) {
    Eigen::MatrixX3d plus = points, minus = points;
    plus.col(axis).array() += h;
    minus.col(axis).array() -= h;
    stacked.middleRows(2 * axis * n, n) = plus;
    stacked.middleRows((2 * axis + 1) * n, n) = minus;
  }
  const int shifted = dvec_at(tape, stacked);

  int lap = -1;
  for (int axis = 0; axis < 3; ++axis) {
    const int d_plus = tape.slice_rows(shifted, 2 * axis * n, n);
    const int d_minus = tape.slice_rows(shifted, (2 * axis + 1) * n, n);
    const int second =
        tape.scale(tape.sub(tape.add(d_plus, d_minus), tape.scale(dvec_center, 2.0)), inv_h2);
    lap = (axis == 0) ? second : tape.add(lap, second);
  }
  return tape.mean_all(tape.rownorm(lap));
}

inline DvecBuilder deform_dvec_builder(const field::DeformTemplateModel& m,
                                       const nn::LayerNodes& deform_layers, int alpha_leaf) {
  return [&m, deform_layers, alpha_leaf](ad::Tape& tape, const Eigen::MatrixX3d& pts) {
    return field::build_deform_graph(tape, m, deform_layers, pts, alpha_leaf).dvec;
  };
}

// Everything the training objective needs for one instance, as nodes.
struct InstanceLossGraph {
  SdfTermNodes sdf;
  int tpn = -1, vec = -1, dis = -1;
  int reg_alpha = -1, reg_beta = -1;
  LossBreakdown values;  // evaluated unweighted terms
};

struct InstanceLossOptions {
  bool with_deform_regularizers = true;  // vec + dis terms
  bool with_tpn = true;
  double fd_h = 1e-2;
};

inline InstanceLossGraph build_instance_loss(ad::Tape& tape, const field::DeformTemplateModel& m,
                                             const field::ModelLeaves& leaves,
                                             const nn::LayerNodes& deform_layers, int alpha_leaf,
                                             int beta_leaf, const InstanceBatch& batch,
                                             const LossWeights& weights,
                                             const InstanceLossOptions& opt = {}) {
  batch.validate();
  const Eigen::MatrixX3d all = batch.all_points();
  const field::InstanceGraph ig =
      field::build_instance_graph(tape, m, leaves, deform_layers, all, alpha_leaf, true);

  InstanceLossGraph out;
  out.sdf = sdf_loss_nodes(tape, ig.s, ig.ds, batch, weights.delta);

  if (opt.with_tpn) {
    const int tpl_grad =
        tape.concat_cols(ig.tpl_grad[0], tape.concat_cols(ig.tpl_grad[1], ig.tpl_grad[2]));
    out.tpn = detail::one_minus_cosine_mean(
        tape, tape.slice_rows(tpl_grad, 0, batch.surface_count()), batch.surface_normals);
  }
  if (opt.with_deform_regularizers) {
    out.vec = vec_smooth_node(tape, deform_dvec_builder(m, deform_layers, alpha_leaf), all,
                              ig.dvec, opt.fd_h);
    out.dis = tape.mean_all(tape.abs(ig.ddis));
  }
  out.reg_alpha = tape.sum_all(tape.square(alpha_leaf));
  out.reg_beta = tape.sum_all(tape.square(beta_leaf));

  out.values.sdf_reg = tape.value(out.sdf.sdf_reg)(0, 0);
  out.values.normal = tape.value(out.sdf.normal)(0, 0);
  out.values.eikonal = tape.value(out.sdf.eikonal)(0, 0);
  out.values.offsurface = tape.value(out.sdf.offsurface)(0, 0);
  if (out.tpn >= 0) out.values.tpn = tape.value(out.tpn)(0, 0);
  if (out.vec >= 0) out.values.vec = tape.value(out.vec)(0, 0);
  if (out.dis >= 0) out.values.dis = tape.value(out.dis)(0, 0);
  out.values.reg_alpha = tape.value(out.reg_alpha)(0, 0);
  out.values.reg_beta = tape.value(out.reg_beta)(0, 0);
  return out;
}

// Weighted scalar node for one instance (regularizers included).
inline int instance_weighted_total(ad::Tape& tape, const InstanceLossGraph& g,
                                   const LossWeights& w) {
  int total = tape.scale(g.sdf.sdf_reg, w.w_s);
  total = tape.add(total, tape.scale(g.sdf.normal, w.w_n));
  total = tape.add(total, tape.scale(g.sdf.eikonal, w.w_eik));
  total = tape.add(total, tape.scale(g.sdf.offsurface, w.w_phi));
  if (g.tpn >= 0) total = tape.add(total, tape.scale(g.tpn, w.w_n));
  if (g.vec >= 0) total = tape.add(total, tape.scale(g.vec, w.w_vec));
  if (g.dis >= 0) total = tape.add(total, tape.scale(g.dis, w.w_dis));
  total = tape.add(total, tape.scale(g.reg_alpha, w.w_alpha));
  total = tape.add(total, tape.scale(g.reg_beta, w.w_beta));
  return total;
}

// Template-validity terms: deform response at template points under the
// template codes, plus the template-code regularizers.
struct TemplateLossGraph {
  int temp_shape = -1, reg_t = -1, reg_beta_t = -1;
  double temp_shape_value = 0, reg_t_value = 0, reg_beta_t_value = 0;
};

inline TemplateLossGraph build_template_loss(ad::Tape& tape, const field::DeformTemplateModel& m,
                                             const nn::LayerNodes& deform_layers_t, int t_leaf,
                                             int beta_t_leaf, const Eigen::MatrixX3d& pt) {
  TemplateLossGraph out;
  const field::DeformGraph g = field::build_deform_graph(tape, m, deform_layers_t, pt, t_leaf);
  // mean over points of the 4-component L1: (|dvec|_1 + |ddis|)
  out.temp_shape = tape.scale(tape.sum_all(tape.abs(g.y)), 1.0 / double(pt.rows()));
  out.reg_t = tape.sum_all(tape.square(t_leaf));
  out.reg_beta_t = tape.sum_all(tape.square(beta_t_leaf));
  out.temp_shape_value = tape.value(out.temp_shape)(0, 0);
  out.reg_t_value = tape.value(out.reg_t)(0, 0);
  out.reg_beta_t_value = tape.value(out.reg_beta_t)(0, 0);
  return out;
}

inline int template_weighted_total(ad::Tape& tape, const TemplateLossGraph& g,
                                   const LossWeights& w) {
  int total = tape.scale(g.temp_shape, w.w_tempshape());
  total = tape.add(total, tape.scale(g.reg_t, w.w_regt()));
  total = tape.add(total, tape.scale(g.reg_beta_t, w.w_beta));
  return total;
}

// --- standalone operations (evaluation only) -------------------------------

inline LossBreakdown sdf_loss(const field::DeformTemplateModel& m, const Eigen::VectorXd& alpha,
                              const Eigen::VectorXd& beta, const InstanceBatch& batch,
                              const LossWeights& weights) {
  ad::Tape tape;
  const auto leaves = field::ModelLeaves::bind(tape, m, false, false);
  const int a = tape.constant(alpha);
  const int b = tape.leaf(beta, false);
  const auto layers = field::deform_layers_graph(tape, m, leaves, b);
  const auto ig = field::build_instance_graph(tape, m, leaves, layers, batch.all_points(), a, true);
  const auto terms = sdf_loss_nodes(tape, ig.s, ig.ds, batch, weights.delta);
  LossBreakdown out;
  out.sdf_reg = tape.value(terms.sdf_reg)(0, 0);
  out.normal = tape.value(terms.normal)(0, 0);
  out.eikonal = tape.value(terms.eikonal)(0, 0);
  out.offsurface = tape.value(terms.offsurface)(0, 0);
  out.total = weights.w_s * out.sdf_reg + weights.w_n * out.normal + weights.w_eik * out.eikonal +
              weights.w_phi * out.offsurface;
  return out;
}

// Oracle entry: the same term graph evaluated on externally supplied field
// values and spatial gradients (e.g. an exact analytic sdf).
inline LossBreakdown sdf_loss_oracle(const Eigen::VectorXd& values, const Eigen::MatrixX3d& grads,
                                     const InstanceBatch& batch, const LossWeights& weights) {
  ad::Tape tape;
  const int s = tape.constant(values);
  const std::array<int, 3> ds = {tape.constant(grads.col(0)), tape.constant(grads.col(1)),
                                 tape.constant(grads.col(2))};
  const auto terms = sdf_loss_nodes(tape, s, ds, batch, weights.delta);
  LossBreakdown out;
  out.sdf_reg = tape.value(terms.sdf_reg)(0, 0);
  out.normal = tape.value(terms.normal)(0, 0);
  out.eikonal = tape.value(terms.eikonal)(0, 0);
  out.offsurface = tape.value(terms.offsurface)(0, 0);
  out.total = weights.w_s * out.sdf_reg + weights.w_n * out.normal + weights.w_eik * out.eikonal +
              weights.w_phi * out.offsurface;
  return out;
}

inline double template_normal_loss(const field::DeformTemplateModel& m,
                                   const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta,
                                   const Eigen::MatrixX3d& surface_points,
                                   const Eigen::MatrixX3d& surface_normals,
                                   const LossWeights& weights) {
  ad::Tape tape;
  const auto leaves = field::ModelLeaves::bind(tape, m, false, false);
  const int a = tape.constant(alpha);
  const int b = tape.leaf(beta, false);
  const auto layers = field::deform_layers_graph(tape, m, leaves, b);
  const auto ig =
      field::build_instance_graph(tape, m, leaves, layers, surface_points, a, true);
  const int tpl_grad =
      tape.concat_cols(ig.tpl_grad[0], tape.concat_cols(ig.tpl_grad[1], ig.tpl_grad[2]));
  const int one_minus = detail::one_minus_cosine_mean(tape, tpl_grad, surface_normals);
  return weights.w_n * tape.value(one_minus)(0, 0);
}

inline double vec_smooth_loss(const field::DeformTemplateModel& m, const Eigen::VectorXd& alpha,
                              const Eigen::VectorXd& beta, const Eigen::MatrixX3d& points,
                              double h = 1e-2) {
  ad::Tape tape;
  const auto leaves = field::ModelLeaves::bind(tape, m, false, false);
  const int a = tape.constant(alpha);
  const int b = tape.leaf(beta, false);
  const auto layers = field::deform_layers_graph(tape, m, leaves, b);
  const auto center = field::build_deform_graph(tape, m, layers, points, a);
  const int node = vec_smooth_node(tape, deform_dvec_builder(m, layers, a), points, center.dvec, h);
  return tape.value(node)(0, 0);
}

inline double dis_loss(const field::DeformTemplateModel& m, const Eigen::VectorXd& alpha,
                       const Eigen::VectorXd& beta, const Eigen::MatrixX3d& points) {
  const auto d = field::deform(m, points, alpha, beta);
  return d.ddis.cwiseAbs().mean();
}

inline double temp_shape_loss(const field::DeformTemplateModel& m, const Eigen::MatrixX3d& pt) {
  const auto r = field::template_residual(m, pt);
  return (r.dvec.cwiseAbs().rowwise().sum() + r.ddis.cwiseAbs()).mean();
}

// Exact squared-L2 sums over the code tables.
inline void latent_reg(const std::vector<Eigen::VectorXd>& alphas, const Eigen::VectorXd& t,
                       const std::vector<Eigen::VectorXd>& betas, const Eigen::VectorXd& beta_t,
                       double& reg_alpha, double& reg_t, double& reg_beta) {
  reg_alpha = 0.0;
  for (const auto& a : alphas) reg_alpha += a.squaredNorm();
  reg_t = t.squaredNorm();
  reg_beta = beta_t.squaredNorm();
  for (const auto& b : betas) reg_beta += b.squaredNorm();
}

}  // namespace istk::loss
