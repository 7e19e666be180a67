#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "istk/ad/tape.hpp"
#include "istk/error.hpp"
#include "istk/geometry/marching_cubes.hpp"
#include "istk/nn/dense.hpp"
#include "istk/nn/hyper.hpp"
#include "istk/rng.hpp"

namespace istk::field {

// Architecture knobs. The paper-scale model uses 128-d codes and width-256
// nets; the desk preset shrinks these to fit CPU budgets.
struct ModelConfig {
  int latent_dim = 128;
  int hidden = 256;
  int layers = 5;  // fully-connected layers per net
  int hyper_hidden = 256;
  double omega0 = 30.0;

  void validate() const {
    if (latent_dim <= 0 || hidden <= 0 || hyper_hidden <= 0 || layers < 2)
      throw Error(Error::Kind::Config, "invalid model configuration");
  }
};

// Shared implicit template field plus per-instance deformation field whose
// weights come from a hypernetwork. Composition: s = Temp(p + dvec) + ddis.
struct DeformTemplateModel {
  ModelConfig config;
  nn::DenseNetSpec template_spec;  // 3 -> hidden^(layers-1) -> 1, sine
  nn::DenseNetSpec deform_spec;    // 3+latent -> hidden^(layers-1) -> 4, sine
  nn::HyperNetwork hyper;          // one ReLU generator per deform layer

  Eigen::VectorXd template_params;
  std::vector<Eigen::VectorXd> hyper_params;  // per generator
  std::vector<Eigen::VectorXd> alphas;        // instance shape codes
  std::vector<Eigen::VectorXd> betas;         // instance hyper codes
  Eigen::VectorXd t;       // template shape code
  Eigen::VectorXd beta_t;  // template hyper code
  std::string category;

  int instance_count() const { return int(alphas.size()); }

  static DeformTemplateModel make(const ModelConfig& cfg, int n_instances, std::uint64_t seed,
                                  std::string category = {}) {
    cfg.validate();
    DeformTemplateModel m;
    m.config = cfg;
    m.category = std::move(category);

    auto widths = [&](int in, int out) {
      std::vector<int> w;
      w.push_back(in);
      for (int l = 0; l < cfg.layers - 1; ++l) w.push_back(cfg.hidden);
      w.push_back(out);
      return w;
    };
    m.template_spec.widths = widths(3, 1);
    m.template_spec.hidden = nn::Act::Sine;
    m.template_spec.omega0 = cfg.omega0;
    m.deform_spec.widths = widths(3 + cfg.latent_dim, 4);
    m.deform_spec.hidden = nn::Act::Sine;
    m.deform_spec.omega0 = cfg.omega0;
    m.hyper = nn::HyperNetwork::make(m.deform_spec, cfg.latent_dim, cfg.hyper_hidden);

    {
      Rng rng = Rng::stream(seed, "model/template");
      m.template_params = nn::dense_init(m.template_spec, rng);
    }
    {
      Rng rng = Rng::stream(seed, "model/hyper");
      m.hyper_params = nn::hyper_init(m.hyper, rng);
    }
    m.alphas.resize(size_t(n_instances));
    m.betas.resize(size_t(n_instances));
    for (int i = 0; i < n_instances; ++i) {
      Rng ra = Rng::stream(seed, "model/alpha/" + std::to_string(i));
      Rng rb = Rng::stream(seed, "model/beta/" + std::to_string(i));
      m.alphas[size_t(i)] = sample_code(cfg.latent_dim, ra);
      m.betas[size_t(i)] = sample_code(cfg.latent_dim, rb);
    }
    m.t = Eigen::VectorXd::Zero(cfg.latent_dim);
    m.beta_t = Eigen::VectorXd::Zero(cfg.latent_dim);
    return m;
  }

  // Codes start near the latent-space origin, N(0, 0.01^2).
  static Eigen::VectorXd sample_code(int dim, Rng& rng) {
    Eigen::VectorXd c(dim);
    for (int i = 0; i < dim; ++i) c[i] = 0.01 * rng.normal();
    return c;
  }

  void check_code(const Eigen::VectorXd& code) const {
    if (int(code.size()) != config.latent_dim)
      throw Error(Error::Kind::Shape, "latent code dimension mismatch");
  }
};

struct DeformOutput {
  Eigen::MatrixX3d dvec;  // per-point spatial offset into template space
  Eigen::VectorXd ddis;   // per-point scalar sdf correction
};

// Generated deform-net weights for one instance; reuse across evaluations
// with the same beta.
inline Eigen::VectorXd deform_params(const DeformTemplateModel& m, const Eigen::VectorXd& beta) {
  m.check_code(beta);
  return nn::hyper_forward(m.hyper, m.hyper_params, beta);
}

inline Eigen::MatrixXd deform_input(const DeformTemplateModel& m, const Eigen::MatrixX3d& p,
                                    const Eigen::VectorXd& alpha) {
  m.check_code(alpha);
  Eigen::MatrixXd x(p.rows(), 3 + m.config.latent_dim);
  x.leftCols(3) = p;
  x.rightCols(m.config.latent_dim) = alpha.transpose().replicate(p.rows(), 1);
  return x;
}

inline DeformOutput deform(const DeformTemplateModel& m, const Eigen::MatrixX3d& p,
                           const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd params = deform_params(m, beta);
  const Eigen::MatrixXd y = nn::forward(m.deform_spec, params, deform_input(m, p, alpha));
  DeformOutput out;
  out.dvec = y.leftCols(3);
  out.ddis = y.col(3);
  return out;
}

inline Eigen::VectorXd template_sdf(const DeformTemplateModel& m, const Eigen::MatrixX3d& q) {
  return nn::forward(m.template_spec, m.template_params, q).col(0);
}

// s = Temp(p + dvec) + ddis, composing the two fields exactly.
inline Eigen::VectorXd instance_sdf(const DeformTemplateModel& m, const Eigen::MatrixX3d& p,
                                    const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta) {
  const DeformOutput d = deform(m, p, alpha, beta);
  const Eigen::MatrixX3d q = p + d.dvec;
  return template_sdf(m, q) + d.ddis;
}

// Deform response at template points under the template codes (t, beta_t);
// driven to zero by the template-validity constraint.
inline DeformOutput template_residual(const DeformTemplateModel& m, const Eigen::MatrixX3d& pt) {
  return deform(m, pt, m.t, m.beta_t);
}

inline double template_residual_mean(const DeformTemplateModel& m, const Eigen::MatrixX3d& pt) {
  const DeformOutput r = template_residual(m, pt);
  return (r.dvec.rowwise().norm() + r.ddis.cwiseAbs()).mean();
}

// Batched field evaluators for marching cubes.
inline geom::BatchFieldFn template_field(const DeformTemplateModel& m) {
  return [&m](const Eigen::MatrixX3d& pts, Eigen::VectorXd& out) { out = template_sdf(m, pts); };
}

inline geom::BatchFieldFn instance_field(const DeformTemplateModel& m, const Eigen::VectorXd& alpha,
                                         const Eigen::VectorXd& beta) {
  // bind the generated deform params once
  auto params = std::make_shared<Eigen::VectorXd>(deform_params(m, beta));
  Eigen::VectorXd alpha_copy = alpha;
  return [&m, params, alpha_copy](const Eigen::MatrixX3d& pts, Eigen::VectorXd& out) {
    const Eigen::MatrixXd y =
        nn::forward(m.deform_spec, *params, deform_input(m, pts, alpha_copy));
    const Eigen::MatrixX3d q = pts + y.leftCols(3);
    out = template_sdf(m, q) + y.col(3);
  };
}

// --- graph construction ---------------------------------------------------

// Trainable parameters bound into a tape as leaves.
struct ModelLeaves {
  int template_leaf = -1;
  std::vector<int> hyper_leaves;

  static ModelLeaves bind(ad::Tape& tape, const DeformTemplateModel& m, bool train_template,
                          bool train_hyper) {
    ModelLeaves l;
    l.template_leaf = tape.leaf(m.template_params, train_template);
    for (const auto& hp : m.hyper_params) l.hyper_leaves.push_back(tape.leaf(hp, train_hyper));
    return l;
  }
};

// Instance evaluation subgraph. When built with gradients it carries the
// spatial derivative of the predicted sdf and of the template at the
// deformed points, both as graph nodes.
struct InstanceGraph {
  int x = -1;                              // deform input (const points + code)
  int dvec = -1, ddis = -1;                // N x 3, N x 1
  int q = -1;                              // deformed points
  int s = -1;                              // predicted sdf, N x 1
  std::array<int, 3> ds{-1, -1, -1};       // d s / d p_k
  std::array<int, 3> tpl_grad{-1, -1, -1}; // d Temp / d q_j at q
  bool has_grads = false;
};

inline nn::LayerNodes deform_layers_graph(ad::Tape& tape, const DeformTemplateModel& m,
                                          const ModelLeaves& leaves, int beta_leaf) {
  return nn::hyper_forward_graph(tape, m.hyper, leaves.hyper_leaves, beta_leaf);
}

inline InstanceGraph build_instance_graph(ad::Tape& tape, const DeformTemplateModel& m,
                                          const ModelLeaves& leaves,
                                          const nn::LayerNodes& deform_layers,
                                          const Eigen::MatrixX3d& points, int alpha_leaf,
                                          bool with_grads) {
  const Eigen::Index n = points.rows();
  InstanceGraph g;
  g.has_grads = with_grads;

  const int p_const = tape.constant(points);
  const int alpha_row = tape.reshape(alpha_leaf, 1, m.config.latent_dim);
  g.x = tape.concat_cols(p_const, tape.broadcast_row(alpha_row, n));

  std::array<int, 3> deform_seeds{};
  if (with_grads) {
    for (int k = 0; k < 3; ++k) {
      ad::Mat e = ad::Mat::Zero(n, 3 + m.config.latent_dim);
      e.col(k).setOnes();
      deform_seeds[size_t(k)] = tape.constant(e);
    }
  }
  const nn::GraphDual dfm = nn::forward_graph(tape, m.deform_spec, deform_layers, g.x,
                                              with_grads ? &deform_seeds : nullptr);
  g.dvec = tape.slice_cols(dfm.value, 0, 3);
  g.ddis = tape.slice_cols(dfm.value, 3, 1);
  g.q = tape.add(p_const, g.dvec);

  const nn::LayerNodes tpl = nn::bind_params(tape, m.template_spec, leaves.template_leaf);
  std::array<int, 3> tpl_seeds{};
  if (with_grads) {
    for (int k = 0; k < 3; ++k) {
      ad::Mat e = ad::Mat::Zero(n, 3);
      e.col(k).setOnes();
      tpl_seeds[size_t(k)] = tape.constant(e);
    }
  }
  const nn::GraphDual tf =
      nn::forward_graph(tape, m.template_spec, tpl, g.q, with_grads ? &tpl_seeds : nullptr);
  g.s = tape.add(tf.value, g.ddis);

  if (with_grads) {
    g.tpl_grad = tf.jac;
    for (int k = 0; k < 3; ++k) {
      // ds/dp_k = dTemp/dq_k + sum_j dTemp/dq_j * dvec_j/dp_k + ddis/dp_k
      int acc = tape.add(tf.jac[size_t(k)],
                         tape.slice_cols(dfm.jac[size_t(k)], 3, 1));
      for (int j = 0; j < 3; ++j) {
        const int dv_j = tape.slice_cols(dfm.jac[size_t(k)], j, 1);
        acc = tape.add(acc, tape.hadamard(tf.jac[size_t(j)], dv_j));
      }
      g.ds[size_t(k)] = acc;
    }
  }
  return g;
}

// Deform-only subgraph (no template), used by the smoothness stencil and the
// template-validity term.
struct DeformGraph {
  int dvec = -1, ddis = -1, y = -1;
};

inline DeformGraph build_deform_graph(ad::Tape& tape, const DeformTemplateModel& m,
                                      const nn::LayerNodes& deform_layers,
                                      const Eigen::MatrixX3d& points, int alpha_leaf) {
  const int p_const = tape.constant(points);
  const int alpha_row = tape.reshape(alpha_leaf, 1, m.config.latent_dim);
  const int x = tape.concat_cols(p_const, tape.broadcast_row(alpha_row, points.rows()));
  const nn::GraphDual y = nn::forward_graph(tape, m.deform_spec, deform_layers, x);
  DeformGraph g;
  g.y = y.value;
  g.dvec = tape.slice_cols(y.value, 0, 3);
  g.ddis = tape.slice_cols(y.value, 3, 1);
  return g;
}

}  // namespace istk::field
