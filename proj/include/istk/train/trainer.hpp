#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "istk/error.hpp"
#include "istk/geometry/marching_cubes.hpp"
#include "istk/geometry/sampling.hpp"
#include "istk/geometry/trimesh.hpp"
#include "istk/loss/objectives.hpp"
#include "istk/train/checkpoint.hpp"

namespace istk::train {

struct TrainConfig {
  int epochs = 200;
  int batch_instances = 16;
  int surface_per_step = 4096;
  int free_per_step = 4096;
  int template_points = 4096;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  loss::LossWeights weights;
  int template_resample_period = 5;  // epochs
  int template_mc_resolution = 64;
  int final_mc_resolution = 128;
  int steps_per_epoch = 0;  // 0: one pass, ceil(n/batch)
  double fd_h = 1e-2;
  field::ModelConfig model;

  int resolved_steps(int n_instances) const {
    if (steps_per_epoch > 0) return steps_per_epoch;
    return std::max(1, (n_instances + batch_instances - 1) / batch_instances);
  }

  void validate() const {
    if (epochs < 1 || batch_instances < 1 || surface_per_step < 1 || free_per_step < 1 ||
        template_points < 1 || lr <= 0.0 || template_resample_period < 1)
      throw Error(Error::Kind::Config, "invalid training configuration");
    weights.validate();
    model.validate();
  }
};

// Paper-scale defaults are the struct defaults. The desk preset shrinks the
// model and sampling so the pipeline runs in minutes on one CPU core.
inline TrainConfig desk_preset() {
  TrainConfig c;
  c.epochs = 50;
  c.batch_instances = 8;
  c.surface_per_step = 512;
  c.free_per_step = 512;
  c.template_points = 512;
  c.steps_per_epoch = 16;
  c.template_mc_resolution = 48;
  c.final_mc_resolution = 96;
  c.model.latent_dim = 32;
  c.model.hidden = 48;
  c.model.hyper_hidden = 48;
  return c;
}

inline TrainConfig paper_preset() { return TrainConfig{}; }

struct EpochLog {
  int epoch = 0;
  loss::LossBreakdown mean;
  double wall_ms = 0;
  double template_residual = 0;
};

struct RunLog {
  std::vector<EpochLog> epochs;
  bool single_instance_warning = false;
  bool template_fallback_used = false;
  double final_sdf_loss = 0.0;

  void save_csv(const std::filesystem::path& path) const {
    atomic_write(path, [&](std::ostream& os) {
      os << "epoch,sdf_reg,normal,eikonal,offsurface,tpn,vec,dis,temp_shape,reg_alpha,reg_t,"
            "reg_beta,total,wall_ms,template_residual\n";
      char buf[512];
      for (const auto& e : epochs) {
        const auto& m = e.mean;
        std::snprintf(buf, sizeof buf,
                      "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,"
                      "%.17g,%.17g,%.17g\n",
                      e.epoch, m.sdf_reg, m.normal, m.eikonal, m.offsurface, m.tpn, m.vec, m.dis,
                      m.temp_shape, m.reg_alpha, m.reg_t, m.reg_beta, m.total, e.wall_ms,
                      e.template_residual);
        os << buf;
      }
    }, /*binary=*/false);
  }
};

// Template-surface points used by the validity constraint. The batch is
// refreshed from the current template iso-surface every resample period and
// cached in between; an empty iso-surface falls back to uniform ball points.
class TemplatePointCache {
public:
  TemplatePointCache(int count, int mc_resolution, int period_epochs, std::uint64_t seed)
      : count_(count), resolution_(mc_resolution), period_(period_epochs), seed_(seed) {}

  const Eigen::MatrixX3d& points(const field::DeformTemplateModel& m, int epoch) {
    const int generation = epoch / period_;
    if (generation != generation_ || cache_.rows() == 0) {
      generation_ = generation;
      refresh(m);
    }
    return cache_;
  }

  bool used_fallback() const { return used_fallback_; }

private:
  void refresh(const field::DeformTemplateModel& m) {
    Rng rng = Rng::stream(seed_, "train/template_points/" + std::to_string(generation_));
    geom::TriMesh mesh = geom::marching_cubes(field::template_field(m), resolution_, 0.0);
    if (mesh.empty()) {
      used_fallback_ = true;
      cache_.resize(count_, 3);
      for (int i = 0; i < count_; ++i) cache_.row(i) = rng.unit_ball().transpose();
      return;
    }
    geom::sample_mesh_surface(mesh, count_, rng, cache_);
  }

  int count_, resolution_, period_;
  std::uint64_t seed_;
  int generation_ = -1;
  bool used_fallback_ = false;
  Eigen::MatrixX3d cache_;
};

// Standalone access with the same refresh rule (epoch 0 of a fresh cache).
inline Eigen::MatrixX3d sample_template_points(const field::DeformTemplateModel& m, int count,
                                               int mc_resolution, std::uint64_t seed = 0,
                                               bool* fallback = nullptr) {
  TemplatePointCache cache(count, mc_resolution, 1, seed);
  const Eigen::MatrixX3d pts = cache.points(m, 0);
  if (fallback) *fallback = cache.used_fallback();
  return pts;
}

inline geom::TriMesh extract_template(const field::DeformTemplateModel& m, int resolution) {
  return geom::marching_cubes(field::template_field(m), resolution, 0.0);
}

namespace detail {

inline loss::InstanceBatch draw_batch(const geom::SampledShape& shape, int n_surface, int n_free,
                                      Rng& rng) {
  loss::InstanceBatch b;
  b.surface_points.resize(n_surface, 3);
  b.surface_normals.resize(n_surface, 3);
  b.free_points.resize(n_free, 3);
  b.free_sdf.resize(n_free);
  const auto ns = std::uint64_t(shape.surface_count());
  const auto nf = std::uint64_t(shape.free_count());
  if (ns == 0 || nf == 0)
    throw Error(Error::Kind::Contract, "instance has no samples: " + shape.id);
  for (int i = 0; i < n_surface; ++i) {
    const auto k = Eigen::Index(rng.uniform_int(ns));
    b.surface_points.row(i) = shape.surface_points.row(k);
    b.surface_normals.row(i) = shape.surface_normals.row(k);
  }
  for (int i = 0; i < n_free; ++i) {
    const auto k = Eigen::Index(rng.uniform_int(nf));
    b.free_points.row(i) = shape.free_points.row(k);
    b.free_sdf[i] = shape.free_sdf[k];
  }
  return b;
}

struct GradBuffers {
  Eigen::VectorXd template_grad;
  std::vector<Eigen::VectorXd> hyper_grads;
  Eigen::VectorXd t_grad, beta_t_grad;
  std::vector<Eigen::VectorXd> alpha_grads, beta_grads;  // batch-slot order
};

}  // namespace detail

// Joint optimization of the template field, hypernetwork, per-instance codes
// and template codes. Deterministic per seed.
inline std::pair<Checkpoint, RunLog> train(const std::vector<geom::SampledShape>& dataset,
                                           const TrainConfig& cfg,
                                           const std::filesystem::path& abort_checkpoint_path = {}) {
  cfg.validate();
  const int n = int(dataset.size());
  if (n < 1) throw Error(Error::Kind::Contract, "training needs at least one instance");

  RunLog log;
  if (n == 1) {
    log.single_instance_warning = true;
    std::fprintf(stderr, "warning: single-instance dataset; the template degenerates to the instance\n");
  }

  Checkpoint ck;
  ck.model = field::DeformTemplateModel::make(cfg.model, n, cfg.seed);
  ck.opt = OptimizerState::zeros(ck.model);
  ck.seed = cfg.seed;
  for (const auto& s : dataset) ck.instance_ids.push_back(s.id);

  nn::AdamConfig adam;
  adam.lr = cfg.lr;

  TemplatePointCache tcache(cfg.template_points, cfg.template_mc_resolution,
                            cfg.template_resample_period, cfg.seed);
  const int steps = cfg.resolved_steps(n);
  const int batch_n = std::min(cfg.batch_instances, n);

  Checkpoint last_good = ck;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto wall0 = std::chrono::steady_clock::now();
    const Eigen::MatrixX3d& pt = tcache.points(ck.model, epoch);
    loss::LossBreakdown epoch_mean;

    for (int step = 0; step < steps; ++step) {
      const std::string tag = std::to_string(epoch) + "/" + std::to_string(step);
      Rng pick = Rng::stream(cfg.seed, "train/pick/" + tag);
      std::vector<std::uint64_t> batch;
      if (batch_n >= n) {
        batch.resize(size_t(n));
        for (int i = 0; i < n; ++i) batch[size_t(i)] = std::uint64_t(i);
      } else {
        batch = pick.sample_without_replacement(std::uint64_t(n), std::uint64_t(batch_n));
      }

      detail::GradBuffers g;
      g.template_grad = Eigen::VectorXd::Zero(ck.model.template_params.size());
      for (const auto& hp : ck.model.hyper_params)
        g.hyper_grads.push_back(Eigen::VectorXd::Zero(hp.size()));
      g.t_grad = Eigen::VectorXd::Zero(ck.model.t.size());
      g.beta_t_grad = Eigen::VectorXd::Zero(ck.model.beta_t.size());

      loss::LossBreakdown step_mean;
      const double inv_b = 1.0 / double(batch.size());

      for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const int inst = int(batch[bi]);
        Rng rng = Rng::stream(cfg.seed, "train/sample/" + tag + "/" + std::to_string(inst));
        const auto b = detail::draw_batch(dataset[size_t(inst)], cfg.surface_per_step,
                                          cfg.free_per_step, rng);

        ad::Tape tape;
        const auto leaves = field::ModelLeaves::bind(tape, ck.model, true, true);
        const int a_leaf = tape.leaf(ck.model.alphas[size_t(inst)], true);
        const int b_leaf = tape.leaf(ck.model.betas[size_t(inst)], true);
        const auto layers = field::deform_layers_graph(tape, ck.model, leaves, b_leaf);
        loss::InstanceLossOptions opt;
        opt.fd_h = cfg.fd_h;
        const auto il = loss::build_instance_loss(tape, ck.model, leaves, layers, a_leaf, b_leaf,
                                                  b, cfg.weights, opt);
        const int total = loss::instance_weighted_total(tape, il, cfg.weights);
        tape.backward(total, inv_b);

        g.template_grad += tape.grad(leaves.template_leaf).col(0);
        for (std::size_t l = 0; l < g.hyper_grads.size(); ++l)
          g.hyper_grads[l] += tape.grad(leaves.hyper_leaves[l]).col(0);
        g.alpha_grads.push_back(tape.grad(a_leaf).col(0) * inv_b);
        g.beta_grads.push_back(tape.grad(b_leaf).col(0) * inv_b);
        step_mean.accumulate(il.values, inv_b);
      }

      // template-validity terms
      {
        ad::Tape tape;
        const auto leaves = field::ModelLeaves::bind(tape, ck.model, false, true);
        const int t_leaf = tape.leaf(ck.model.t, true);
        const int bt_leaf = tape.leaf(ck.model.beta_t, true);
        const auto layers_t = field::deform_layers_graph(tape, ck.model, leaves, bt_leaf);
        const auto tl = loss::build_template_loss(tape, ck.model, layers_t, t_leaf, bt_leaf, pt);
        const int total = loss::template_weighted_total(tape, tl, cfg.weights);
        tape.backward(total, 1.0);
        for (std::size_t l = 0; l < g.hyper_grads.size(); ++l)
          g.hyper_grads[l] += tape.grad(leaves.hyper_leaves[l]).col(0);
        g.t_grad += tape.grad(t_leaf).col(0);
        g.beta_t_grad += tape.grad(bt_leaf).col(0);
        step_mean.temp_shape = tl.temp_shape_value;
        step_mean.reg_t = tl.reg_t_value;
        step_mean.reg_beta += tl.reg_beta_t_value;  // instance part accumulated above
      }

      step_mean.total = step_mean.weighted_sum(cfg.weights);
      if (!std::isfinite(step_mean.total)) {
        if (!abort_checkpoint_path.empty()) save_checkpoint(last_good, abort_checkpoint_path);
        throw Error(Error::Kind::Numeric,
                    "non-finite loss at epoch " + std::to_string(epoch) + "; last good checkpoint: " +
                        abort_checkpoint_path.string());
      }

      nn::adam_step(ck.opt.template_state, ck.model.template_params, g.template_grad, adam);
      for (std::size_t l = 0; l < g.hyper_grads.size(); ++l)
        nn::adam_step(ck.opt.hyper_states[l], ck.model.hyper_params[l], g.hyper_grads[l], adam);
      for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const auto inst = size_t(batch[bi]);
        nn::adam_step(ck.opt.alpha_states[inst], ck.model.alphas[inst], g.alpha_grads[bi], adam);
        nn::adam_step(ck.opt.beta_states[inst], ck.model.betas[inst], g.beta_grads[bi], adam);
      }
      nn::adam_step(ck.opt.t_state, ck.model.t, g.t_grad, adam);
      nn::adam_step(ck.opt.beta_t_state, ck.model.beta_t, g.beta_t_grad, adam);

      epoch_mean.accumulate(step_mean, 1.0 / double(steps));
    }

    EpochLog el;
    el.epoch = epoch;
    el.mean = epoch_mean;
    el.template_residual = field::template_residual_mean(ck.model, pt);
    el.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0)
                     .count();
    log.epochs.push_back(el);
    last_good = ck;
    ck.epoch = epoch + 1;
  }

  log.template_fallback_used = tcache.used_fallback();
  if (!log.epochs.empty()) {
    const auto& m = log.epochs.back().mean;
    log.final_sdf_loss = cfg.weights.w_s * m.sdf_reg + cfg.weights.w_n * m.normal +
                         cfg.weights.w_eik * m.eikonal + cfg.weights.w_phi * m.offsurface;
  }
  return {std::move(ck), std::move(log)};
}

}  // namespace istk::train
