#include <catch2/catch_amalgamated.hpp>

#include "fd_check.hpp"
#include "istk/geometry/analytic.hpp"
#include "istk/loss/objectives.hpp"

using namespace istk;
using namespace istk::loss;

namespace {

field::ModelConfig toy_config() {
  field::ModelConfig c;
  c.latent_dim = 8;
  c.hidden = 12;
  c.layers = 3;
  c.hyper_hidden = 16;
  return c;
}

// analytic sphere samples with exact values and gradients
InstanceBatch sphere_batch(double radius, int ns, int nf, Rng& rng) {
  InstanceBatch b;
  b.surface_points.resize(ns, 3);
  b.surface_normals.resize(ns, 3);
  b.free_points.resize(nf, 3);
  b.free_sdf.resize(nf);
  for (int i = 0; i < ns; ++i) {
    const Eigen::Vector3d u = rng.unit_ball().normalized();
    b.surface_points.row(i) = radius * u;
    b.surface_normals.row(i) = u;
  }
  for (int i = 0; i < nf; ++i) {
    const Eigen::Vector3d p = rng.unit_ball();
    b.free_points.row(i) = p;
    b.free_sdf[i] = p.norm() - radius;
  }
  return b;
}

void set_constant_deform(field::DeformTemplateModel& m, const Eigen::Vector4d& out_bias) {
  // zero all generator params, then write the deform output-layer bias into
  // the last generator's output bias; the deform net becomes constant
  for (auto& p : m.hyper_params) p.setZero();
  const int last = int(m.hyper_params.size()) - 1;
  const auto& gspec = m.hyper.generators[size_t(last)];
  const auto out_layer = gspec.layer(gspec.layer_count() - 1);
  const auto t = m.hyper.target.layer(last);
  // generated row = [W (in*out col-major), b(out=4)]
  Eigen::VectorXd& p = m.hyper_params[size_t(last)];
  p.segment(out_layer.b_offset + Eigen::Index(t.in) * t.out, 4) = out_bias;
}

}  // namespace

TEST_CASE("sdf loss of the exact sphere oracle: reg, normal, eikonal vanish") {
  Rng rng(1);
  const double r = 0.5;
  InstanceBatch b = sphere_batch(r, 128, 128, rng);
  Eigen::VectorXd values(256);
  Eigen::MatrixX3d grads(256, 3);
  geom::SphereSdf sphere{Eigen::Vector3d::Zero(), r};
  const Eigen::MatrixX3d all = b.all_points();
  for (int i = 0; i < 256; ++i) {
    values[i] = sphere(all.row(i).transpose());
    grads.row(i) = sphere.gradient(all.row(i).transpose());
  }
  LossWeights w;
  const LossBreakdown out = sdf_loss_oracle(values, grads, b, w);
  REQUIRE(out.sdf_reg <= 1e-9);
  REQUIRE(out.normal <= 1e-9);
  REQUIRE(out.eikonal <= 1e-9);
  // off-surface term bounded by the sharpest free sample
  const double d_min = b.free_sdf.cwiseAbs().minCoeff();
  REQUIRE(out.offsurface <= std::exp(-w.delta * d_min) + 1e-12);
  REQUIRE(out.offsurface > 0.0);
}

TEST_CASE("sdf loss: single free point regression and offsurface values") {
  InstanceBatch b;
  b.surface_points.resize(0, 3);
  b.surface_normals.resize(0, 3);
  b.free_points.resize(1, 3);
  b.free_points << 0.2, 0.0, 0.0;
  b.free_sdf.resize(1);
  b.free_sdf << 0.1;
  Eigen::VectorXd values(1);
  values << 0.2;
  Eigen::MatrixX3d grads(1, 3);
  grads << 1, 0, 0;
  LossWeights w;
  const LossBreakdown out = sdf_loss_oracle(values, grads, b, w);
  REQUIRE(out.sdf_reg == Catch::Approx(0.1).epsilon(1e-12));

  // prediction exactly zero -> maximal off-surface penalty
  values << 0.0;
  const LossBreakdown zero = sdf_loss_oracle(values, grads, b, w);
  REQUIRE(zero.offsurface == 1.0);
}

TEST_CASE("sdf loss is permutation invariant within the batch") {
  Rng rng(2);
  auto m = field::DeformTemplateModel::make(toy_config(), 1, 3);
  InstanceBatch b = sphere_batch(0.5, 32, 32, rng);
  LossWeights w;
  const LossBreakdown a = sdf_loss(m, m.alphas[0], m.betas[0], b, w);

  InstanceBatch shuffled = b;
  // reverse point order in both subsets
  shuffled.surface_points = b.surface_points.colwise().reverse().eval();
  shuffled.surface_normals = b.surface_normals.colwise().reverse().eval();
  shuffled.free_points = b.free_points.colwise().reverse().eval();
  shuffled.free_sdf = b.free_sdf.reverse().eval();
  const LossBreakdown c = sdf_loss(m, m.alphas[0], m.betas[0], shuffled, w);
  REQUIRE(std::abs(a.sdf_reg - c.sdf_reg) <= 1e-12);
  REQUIRE(std::abs(a.normal - c.normal) <= 1e-12);
  REQUIRE(std::abs(a.eikonal - c.eikonal) <= 1e-12);
  REQUIRE(std::abs(a.offsurface - c.offsurface) <= 1e-12);
}

TEST_CASE("template normal loss: aligned normals give zero, orthogonal give w_n") {
  auto m = field::DeformTemplateModel::make(toy_config(), 1, 5);
  Rng rng(3);
  Eigen::MatrixX3d pts(16, 3);
  for (int i = 0; i < 16; ++i) pts.row(i) = rng.unit_ball().transpose();
  const Eigen::VectorXd zero_beta = Eigen::VectorXd::Zero(8);

  // model's own template gradients, with deform switched off
  for (auto& p : m.hyper_params) p.setZero();
  const auto dual = nn::forward_with_spatial_grad(m.template_spec, m.template_params, pts);
  Eigen::MatrixX3d grads(16, 3);
  for (int k = 0; k < 3; ++k) grads.col(k) = dual.jac[size_t(k)].col(0);

  LossWeights w;
  Eigen::MatrixX3d aligned = grads.rowwise().normalized();
  REQUIRE(template_normal_loss(m, m.alphas[0], zero_beta, pts, aligned, w) <= 1e-6 * w.w_n);

  // any unit vector orthogonal to the gradient
  Eigen::MatrixX3d ortho(16, 3);
  for (int i = 0; i < 16; ++i) {
    const Eigen::Vector3d g = grads.row(i).transpose();
    Eigen::Vector3d ref =
        std::abs(g.z()) < 0.9 * g.norm() ? Eigen::Vector3d(0, 0, 1) : Eigen::Vector3d(1, 0, 0);
    ortho.row(i) = g.cross(ref).normalized();
  }
  REQUIRE(template_normal_loss(m, m.alphas[0], zero_beta, pts, ortho, w) ==
          Catch::Approx(w.w_n).epsilon(1e-9));
}

TEST_CASE("vec smoothness stencil: affine fields vanish, quadratic gives its laplacian") {
  ad::Tape tape;
  Rng rng(4);
  Eigen::MatrixX3d pts(8, 3);
  for (int i = 0; i < 8; ++i) pts.row(i) = rng.unit_ball().transpose();

  Eigen::Matrix3d A;
  A << 0.3, -0.2, 0.1, 0.5, 0.0, -0.4, 0.2, 0.2, 0.7;
  const Eigen::RowVector3d c(0.1, -0.3, 0.2);
  auto affine = [&](ad::Tape& t, const Eigen::MatrixX3d& p) {
    return t.constant(((p * A.transpose()).rowwise() + c).eval());
  };
  const int center_a = affine(tape, pts);
  const int la = vec_smooth_node(tape, affine, pts, center_a, 1e-2);
  REQUIRE(tape.value(la)(0, 0) <= 1e-8);

  auto quadratic = [&](ad::Tape& t, const Eigen::MatrixX3d& p) {
    Eigen::MatrixX3d v = Eigen::MatrixX3d::Zero(p.rows(), 3);
    v.col(0) = p.col(0).array().square();
    return t.constant(v);
  };
  const int center_q = quadratic(tape, pts);
  const int lq = vec_smooth_node(tape, quadratic, pts, center_q, 1e-2);
  REQUIRE(tape.value(lq)(0, 0) == Catch::Approx(2.0).margin(1e-6));
}

TEST_CASE("vec smoothness is stable under halving the stencil step") {
  auto m = field::DeformTemplateModel::make(toy_config(), 1, 7);
  Rng rng(5);
  Eigen::MatrixX3d pts(32, 3);
  for (int i = 0; i < 32; ++i) pts.row(i) = rng.unit_ball().transpose();
  const double l1 = vec_smooth_loss(m, m.alphas[0], m.betas[0], pts, 1e-2);
  const double l2 = vec_smooth_loss(m, m.alphas[0], m.betas[0], pts, 5e-3);
  REQUIRE(std::abs(l1 - l2) <= 0.05 * std::max(l1, l2));
}

TEST_CASE("dis loss: zero net and constant net") {
  auto m = field::DeformTemplateModel::make(toy_config(), 1, 9);
  Rng rng(6);
  Eigen::MatrixX3d pts(8, 3);
  for (int i = 0; i < 8; ++i) pts.row(i) = rng.unit_ball().transpose();

  for (auto& p : m.hyper_params) p.setZero();
  REQUIRE(dis_loss(m, m.alphas[0], m.betas[0], pts) == 0.0);

  set_constant_deform(m, Eigen::Vector4d(0.0, 0.0, 0.0, -0.25));
  REQUIRE(dis_loss(m, m.alphas[0], m.betas[0], pts) == Catch::Approx(0.25).epsilon(1e-12));

  // reduction agrees with a direct field evaluation
  auto m2 = field::DeformTemplateModel::make(toy_config(), 1, 10);
  const auto d = field::deform(m2, pts, m2.alphas[0], m2.betas[0]);
  REQUIRE(dis_loss(m2, m2.alphas[0], m2.betas[0], pts) ==
          Catch::Approx(d.ddis.cwiseAbs().mean()).epsilon(1e-12));
}

TEST_CASE("temp shape loss: zero residual and the hand example") {
  auto m = field::DeformTemplateModel::make(toy_config(), 1, 11);
  Rng rng(7);
  Eigen::MatrixX3d pts(8, 3);
  for (int i = 0; i < 8; ++i) pts.row(i) = rng.unit_ball().transpose();

  for (auto& p : m.hyper_params) p.setZero();
  REQUIRE(temp_shape_loss(m, pts) == 0.0);

  set_constant_deform(m, Eigen::Vector4d(0.1, 0.0, 0.0, 0.05));
  REQUIRE(temp_shape_loss(m, pts) == Catch::Approx(0.15).epsilon(1e-12));
}

TEST_CASE("latent reg: exact squared sums") {
  double ra, rt, rb;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(128);
  latent_reg({zero}, zero, {zero}, zero, ra, rt, rb);
  REQUIRE(ra == 0.0);
  REQUIRE(rt == 0.0);
  REQUIRE(rb == 0.0);

  latent_reg({Eigen::VectorXd::Ones(128)}, zero, {}, zero, ra, rt, rb);
  REQUIRE(ra == 128.0);

  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(128), e2 = Eigen::VectorXd::Zero(128);
  e1[0] = 1.0;
  e2[1] = 1.0;
  latent_reg({}, zero, {e1}, e2, ra, rt, rb);
  REQUIRE(rb == 2.0);
}

TEST_CASE("loss weights validate their domain") {
  LossWeights w;
  w.delta = 5.0;
  REQUIRE_THROWS_AS(w.validate(), Error);
  w = LossWeights{};
  w.w_vec = -1.0;
  REQUIRE_THROWS_AS(w.validate(), Error);
  REQUIRE(LossWeights{}.w_tempshape() == LossWeights{}.w_dis);
  LossWeights o;
  o.w_tempshape_override = 3.0;
  REQUIRE(o.w_tempshape() == 3.0);
}

TEST_CASE("every loss term's parameter gradients match FD on a toy model") {
  auto m = field::DeformTemplateModel::make(toy_config(), 1, 13);
  Rng rng(8);
  InstanceBatch b = sphere_batch(0.45, 8, 8, rng);
  LossWeights w;

  struct Built {
    ad::Tape tape;
    int tmpl = -1, alpha = -1, beta = -1;
    std::vector<int> hyper;
    int term = -1;
  };
  enum Term { SdfReg, Normal, Eik, Off, Tpn, Vec, Dis };
  auto build = [&](Term which, const Eigen::VectorXd& tmpl,
                   const std::vector<Eigen::VectorXd>& hyper, const Eigen::VectorXd& alpha,
                   const Eigen::VectorXd& beta) {
    auto model = m;
    model.template_params = tmpl;
    model.hyper_params = hyper;
    Built out;
    const auto leaves = field::ModelLeaves::bind(out.tape, model, true, true);
    out.tmpl = leaves.template_leaf;
    out.hyper = leaves.hyper_leaves;
    out.alpha = out.tape.leaf(alpha, true);
    out.beta = out.tape.leaf(beta, true);
    const auto layers = field::deform_layers_graph(out.tape, model, leaves, out.beta);
    const auto il =
        loss::build_instance_loss(out.tape, model, leaves, layers, out.alpha, out.beta, b, w);
    switch (which) {
      case SdfReg: out.term = il.sdf.sdf_reg; break;
      case Normal: out.term = il.sdf.normal; break;
      case Eik: out.term = il.sdf.eikonal; break;
      case Off: out.term = il.sdf.offsurface; break;
      case Tpn: out.term = il.tpn; break;
      case Vec: out.term = il.vec; break;
      case Dis: out.term = il.dis; break;
    }
    return out;
  };

  for (Term term : {SdfReg, Normal, Eik, Off, Tpn, Vec, Dis}) {
    Built g = build(term, m.template_params, m.hyper_params, m.alphas[0], m.betas[0]);
    g.tape.backward(g.term);

    // alpha gradient, all coordinates
    auto loss_alpha = [&](const Eigen::VectorXd& a) {
      Built t = build(term, m.template_params, m.hyper_params, a, m.betas[0]);
      return t.tape.value(t.term)(0, 0);
    };
    const Eigen::VectorXd fd_a = fdcheck::fd_gradient(loss_alpha, m.alphas[0], 1e-5);
    REQUIRE(fdcheck::max_rel_err(Eigen::VectorXd(g.tape.grad(g.alpha).col(0)), fd_a) <= 1e-3);

    // template gradient along a random direction
    Rng dr(17);
    Eigen::VectorXd v(m.template_params.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dr.normal();
    v.normalize();
    auto loss_tmpl = [&](const Eigen::VectorXd& t) {
      Built bl = build(term, t, m.hyper_params, m.alphas[0], m.betas[0]);
      return bl.tape.value(bl.term)(0, 0);
    };
    const double fd_dir = fdcheck::fd_directional(loss_tmpl, m.template_params, v);
    const double an_dir = g.tape.grad(g.tmpl).col(0).dot(v);
    REQUIRE(fdcheck::rel_err(an_dir, fd_dir) <= 1e-3);

    // first generator gradient along a random direction
    Eigen::VectorXd vg(m.hyper_params[0].size());
    for (Eigen::Index i = 0; i < vg.size(); ++i) vg[i] = dr.normal();
    vg.normalize();
    auto loss_g0 = [&](const Eigen::VectorXd& g0) {
      auto hp = m.hyper_params;
      hp[0] = g0;
      Built bl = build(term, m.template_params, hp, m.alphas[0], m.betas[0]);
      return bl.tape.value(bl.term)(0, 0);
    };
    const double fdg = fdcheck::fd_directional(loss_g0, m.hyper_params[0], vg);
    const double ang = g.tape.grad(g.hyper[0]).col(0).dot(vg);
    REQUIRE(fdcheck::rel_err(ang, fdg) <= 1e-3);
  }
}
