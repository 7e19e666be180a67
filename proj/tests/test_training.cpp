#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "istk/geometry/analytic.hpp"
#include "istk/tim/refine.hpp"
#include "istk/train/checkpoint.hpp"
#include "istk/train/embed.hpp"
#include "istk/train/trainer.hpp"

using namespace istk;
using namespace istk::train;
namespace fs = std::filesystem;

namespace {

geom::SampledShape analytic_sphere_shape(double r, const Eigen::Vector3d& center, int ns, int nf,
                                         std::uint64_t seed, const std::string& id) {
  geom::SampledShape s;
  s.id = id;
  Rng rng(seed);
  s.surface_points.resize(ns, 3);
  s.surface_normals.resize(ns, 3);
  s.free_points.resize(nf, 3);
  s.free_sdf.resize(nf);
  for (int i = 0; i < ns; ++i) {
    const Eigen::Vector3d u = rng.unit_ball().normalized();
    s.surface_points.row(i) = center + r * u;
    s.surface_normals.row(i) = u;
  }
  geom::SphereSdf sdf{center, r};
  for (int i = 0; i < nf; ++i) {
    const Eigen::Vector3d p = rng.unit_ball();
    s.free_points.row(i) = p;
    s.free_sdf[i] = sdf(p);
  }
  return s;
}

TrainConfig tiny_config() {
  TrainConfig c = desk_preset();
  c.epochs = 4;
  c.batch_instances = 2;
  c.surface_per_step = 128;
  c.free_per_step = 128;
  c.template_points = 128;
  c.steps_per_epoch = 4;
  c.template_mc_resolution = 16;
  c.final_mc_resolution = 32;
  c.model.latent_dim = 8;
  c.model.hidden = 16;
  c.model.layers = 3;
  c.model.hyper_hidden = 16;
  return c;
}

std::vector<geom::SampledShape> two_spheres() {
  return {analytic_sphere_shape(0.4, Eigen::Vector3d::Zero(), 4000, 1000, 11, "s0"),
          analytic_sphere_shape(0.5, Eigen::Vector3d::Zero(), 4000, 1000, 12, "s1")};
}

bool same_file_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return !sa.empty() && sa == sb;
}

}  // namespace

TEST_CASE("training is deterministic per seed, checkpoint bytes included") {
  auto cfg = tiny_config();
  cfg.seed = 21;
  const auto data = two_spheres();
  auto [ck1, log1] = istk::train::train(data, cfg);
  auto [ck2, log2] = istk::train::train(data, cfg);
  REQUIRE(log1.epochs.size() == log2.epochs.size());
  for (size_t e = 0; e < log1.epochs.size(); ++e) {
    REQUIRE(log1.epochs[e].mean.total == log2.epochs[e].mean.total);
    REQUIRE(log1.epochs[e].template_residual == log2.epochs[e].template_residual);
  }
  const auto dir = fs::temp_directory_path() / "istk_test_training";
  fs::create_directories(dir);
  save_checkpoint(ck1, dir / "a.rsck");
  save_checkpoint(ck2, dir / "b.rsck");
  REQUIRE(same_file_bytes(dir / "a.rsck", dir / "b.rsck"));
}

TEST_CASE("checkpoint round trip restores every array bit-exactly") {
  auto cfg = tiny_config();
  cfg.seed = 23;
  auto [ck, log] = istk::train::train(two_spheres(), cfg);
  const auto path = fs::temp_directory_path() / "istk_test_training" / "rt.rsck";
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  REQUIRE(back.model.template_params == ck.model.template_params);
  REQUIRE(back.model.hyper_params == ck.model.hyper_params);
  REQUIRE(back.model.alphas == ck.model.alphas);
  REQUIRE(back.model.betas == ck.model.betas);
  REQUIRE(back.model.t == ck.model.t);
  REQUIRE(back.model.beta_t == ck.model.beta_t);
  REQUIRE(back.opt.template_state.m == ck.opt.template_state.m);
  REQUIRE(back.opt.template_state.v == ck.opt.template_state.v);
  REQUIRE(back.opt.template_state.step == ck.opt.template_state.step);
  REQUIRE(back.instance_ids == ck.instance_ids);
  REQUIRE(back.epoch == ck.epoch);
}

TEST_CASE("single-instance training completes with a warning flag") {
  auto cfg = tiny_config();
  cfg.seed = 25;
  cfg.batch_instances = 1;
  auto [ck, log] = istk::train::train({analytic_sphere_shape(0.45, Eigen::Vector3d::Zero(), 2000, 500, 5, "solo")},
                         cfg);
  REQUIRE(log.single_instance_warning);
  REQUIRE(log.epochs.size() == 4);
}

TEST_CASE("loss breakdown total equals the weighted sum of terms") {
  auto cfg = tiny_config();
  cfg.seed = 27;
  auto [ck, log] = istk::train::train(two_spheres(), cfg);
  for (const auto& e : log.epochs)
    REQUIRE(std::abs(e.mean.total - e.mean.weighted_sum(cfg.weights)) <= 1e-10);
}

TEST_CASE("training reduces the loss on a short run") {
  auto cfg = tiny_config();
  cfg.epochs = 10;
  cfg.seed = 29;
  auto [ck, log] = istk::train::train(two_spheres(), cfg);
  REQUIRE(log.epochs.back().mean.total < log.epochs.front().mean.total);
}

TEST_CASE("run log csv writes one row per epoch") {
  auto cfg = tiny_config();
  cfg.seed = 31;
  auto [ck, log] = istk::train::train(two_spheres(), cfg);
  const auto path = fs::temp_directory_path() / "istk_test_training" / "log.csv";
  log.save_csv(path);
  std::ifstream is(path);
  std::string line;
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 1 + cfg.epochs);
}

TEST_CASE("template point cache refreshes per period and caches within") {
  auto cfg = tiny_config();
  cfg.seed = 33;
  auto [ck, log] = istk::train::train(two_spheres(), cfg);
  TemplatePointCache cache(64, 16, 5, 7);
  const Eigen::MatrixX3d a = cache.points(ck.model, 0);
  const Eigen::MatrixX3d b = cache.points(ck.model, 4);  // same generation
  REQUIRE(a == b);
  const Eigen::MatrixX3d c = cache.points(ck.model, 5);  // refreshed
  REQUIRE(a != c);
}

TEST_CASE("sample_template_points falls back to ball samples for empty iso-surfaces") {
  field::ModelConfig mc;
  mc.latent_dim = 8;
  mc.hidden = 16;
  mc.layers = 3;
  mc.hyper_hidden = 16;
  auto model = field::DeformTemplateModel::make(mc, 1, 3);
  // constant-positive template: zero weights, positive output bias
  model.template_params.setZero();
  const auto last = model.template_spec.layer(model.template_spec.layer_count() - 1);
  model.template_params[last.b_offset] = 1.0;
  bool fallback = false;
  const Eigen::MatrixX3d pts = sample_template_points(model, 128, 16, 5, &fallback);
  REQUIRE(fallback);
  REQUIRE(pts.rows() == 128);
  for (int i = 0; i < pts.rows(); ++i) REQUIRE(pts.row(i).norm() <= 1.0);
}

TEST_CASE("template points from a sphere-like template sit near the iso-surface") {
  // build a model and overfit the template net directly to a sphere sdf
  field::ModelConfig mc;
  mc.latent_dim = 8;
  mc.hidden = 24;
  mc.layers = 3;
  mc.hyper_hidden = 16;
  auto model = field::DeformTemplateModel::make(mc, 1, 41);
  Rng rng(42);
  nn::AdamConfig adam;
  adam.lr = 1e-3;
  auto state = nn::AdamState::zeros(model.template_params.size());
  geom::SphereSdf sphere{Eigen::Vector3d::Zero(), 0.45};
  for (int it = 0; it < 400; ++it) {
    Eigen::MatrixX3d pts(256, 3);
    Eigen::VectorXd target(256);
    for (int i = 0; i < 256; ++i) {
      const Eigen::Vector3d p = rng.unit_ball();
      pts.row(i) = p;
      target[i] = sphere(p);
    }
    ad::Tape tape;
    const int leaf = tape.leaf(model.template_params, true);
    const auto ln = nn::bind_params(tape, model.template_spec, leaf);
    const auto out = nn::forward_graph(tape, model.template_spec, ln, tape.constant(pts));
    const int loss = tape.mean_all(tape.square(tape.sub(out.value, tape.constant(target))));
    tape.backward(loss);
    nn::adam_step(state, model.template_params, tape.grad(leaf).col(0), adam);
  }
  const int R = 32;
  const Eigen::MatrixX3d pts = sample_template_points(model, 200, R, 9);
  const Eigen::VectorXd vals = field::template_sdf(model, pts);
  REQUIRE(vals.cwiseAbs().maxCoeff() <= 2.0 * (2.0 / R));
}

TEST_CASE("extract_template: resolution doubling stays within the grid error bound") {
  // template net overfit to a true sdf, so the iso-surface is well-behaved
  field::ModelConfig mc;
  mc.latent_dim = 8;
  mc.hidden = 24;
  mc.layers = 3;
  mc.hyper_hidden = 16;
  auto model = field::DeformTemplateModel::make(mc, 1, 43);
  Rng rng(44);
  nn::AdamConfig adam;
  adam.lr = 1e-3;
  auto state = nn::AdamState::zeros(model.template_params.size());
  geom::SphereSdf sphere{Eigen::Vector3d::Zero(), 0.45};
  for (int it = 0; it < 400; ++it) {
    Eigen::MatrixX3d pts(256, 3);
    Eigen::VectorXd target(256);
    for (int i = 0; i < 256; ++i) {
      const Eigen::Vector3d p = rng.unit_ball();
      pts.row(i) = p;
      target[i] = sphere(p);
    }
    ad::Tape tape;
    const int leaf = tape.leaf(model.template_params, true);
    const auto ln = nn::bind_params(tape, model.template_spec, leaf);
    const auto out = nn::forward_graph(tape, model.template_spec, ln, tape.constant(pts));
    const int loss = tape.mean_all(tape.square(tape.sub(out.value, tape.constant(target))));
    tape.backward(loss);
    nn::adam_step(state, model.template_params, tape.grad(leaf).col(0), adam);
  }
  const int R = 24;
  geom::TriMesh coarse = extract_template(model, R);
  geom::TriMesh fine = extract_template(model, 2 * R);
  REQUIRE(!coarse.empty());
  REQUIRE(!fine.empty());
  geom::TriangleBvh bc(coarse), bf(fine);
  double hausdorff = 0.0;
  for (const auto& v : coarse.vertices) hausdorff = std::max(hausdorff, std::sqrt(bf.closest(v)));
  for (const auto& v : fine.vertices) hausdorff = std::max(hausdorff, std::sqrt(bc.closest(v)));
  REQUIRE(hausdorff <= 4.0 / R);
}

TEST_CASE("embedding keeps the base template byte-identical and is deterministic") {
  auto cfg = tiny_config();
  cfg.epochs = 6;
  cfg.seed = 37;
  auto [ck, log] = istk::train::train(two_spheres(), cfg);
  const auto unseen = analytic_sphere_shape(0.45, Eigen::Vector3d::Zero(), 2000, 500, 55, "unseen");

  EmbedConfig ec = EmbedConfig::from_train(cfg);
  ec.epochs = 3;
  ec.steps_per_epoch = 4;
  ec.mc_resolution = 24;
  const Eigen::VectorXd template_before = ck.model.template_params;
  const auto r1 = embed_shape(ck.model, unseen, ec);
  REQUIRE(ck.model.template_params == template_before);
  REQUIRE(r1.adapted.template_params == template_before);
  REQUIRE(r1.log.size() == 3);

  const auto r2 = embed_shape(ck.model, unseen, ec);
  REQUIRE(r1.alpha == r2.alpha);
  REQUIRE(r1.beta == r2.beta);
  REQUIRE(r1.reconstruction.vertices.size() == r2.reconstruction.vertices.size());
  for (size_t i = 0; i < r1.reconstruction.vertices.size(); ++i)
    REQUIRE(r1.reconstruction.vertices[i] == r2.reconstruction.vertices[i]);
}

TEST_CASE("embedding reports divergence instead of returning garbage") {
  auto cfg = tiny_config();
  cfg.seed = 39;
  auto [ck, log] = istk::train::train(two_spheres(), cfg);
  auto unseen = analytic_sphere_shape(0.4, Eigen::Vector3d::Zero(), 500, 200, 7, "diverge");
  EmbedConfig ec = EmbedConfig::from_train(cfg);
  ec.epochs = 2;
  ec.steps_per_epoch = 2;
  ec.divergence_factor = 1e-9;  // trip immediately on the second step
  REQUIRE_THROWS_AS(embed_shape(ck.model, unseen, ec), Error);
}

TEST_CASE("deform field absorbs per-instance translation") {
  // two identical spheres translated along +-x; the offset field between the
  // instances must recover the relative translation
  auto cfg = tiny_config();
  cfg.epochs = 30;
  cfg.steps_per_epoch = 8;
  cfg.surface_per_step = 256;
  cfg.free_per_step = 256;
  cfg.template_points = 256;
  cfg.model.hidden = 24;
  cfg.seed = 41;
  const Eigen::Vector3d d0(-0.15, 0, 0), d1(0.15, 0, 0);
  std::vector<geom::SampledShape> data = {
      analytic_sphere_shape(0.35, d0, 6000, 1500, 61, "left"),
      analytic_sphere_shape(0.35, d1, 6000, 1500, 62, "right")};
  auto [ck, log] = istk::train::train(data, cfg);

  Rng rng(8);
  Eigen::MatrixX3d pts0(200, 3), pts1(200, 3);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d u = rng.unit_ball().normalized();
    pts0.row(i) = (d0 + 0.35 * u).transpose();
    pts1.row(i) = (d1 + 0.35 * u).transpose();
  }
  const auto def0 = field::deform(ck.model, pts0, ck.model.alphas[0], ck.model.betas[0]);
  const auto def1 = field::deform(ck.model, pts1, ck.model.alphas[1], ck.model.betas[1]);
  const Eigen::Vector3d mean0 = def0.dvec.colwise().mean().transpose();
  const Eigen::Vector3d mean1 = def1.dvec.colwise().mean().transpose();
  // relative offset: mapping both instances onto one template implies
  // dvec difference ~ -(d0 - d1)
  REQUIRE((mean0 - mean1 - (d1 - d0)).norm() <= 0.1);
}
