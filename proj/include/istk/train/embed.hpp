#pragma once

#include <string>
#include <vector>

#include "istk/geometry/marching_cubes.hpp"
#include "istk/geometry/sampling.hpp"
#include "istk/loss/objectives.hpp"
#include "istk/train/trainer.hpp"

namespace istk::train {

// Auto-decoder embedding of an unseen shape: the template field is frozen;
// fresh instance codes and a cloned hypernetwork are optimized against the
// sdf loss plus the code regularizers.
struct EmbedConfig {
  int epochs = 30;
  int steps_per_epoch = 24;
  int surface_per_step = 1024;
  int free_per_step = 1024;
  double lr = 1e-4;
  loss::LossWeights weights;
  std::uint64_t seed = 0;
  int mc_resolution = 96;
  double divergence_factor = 1e3;

  static EmbedConfig from_train(const TrainConfig& t) {
    EmbedConfig e;
    e.steps_per_epoch = t.resolved_steps(1);
    e.surface_per_step = t.surface_per_step;
    e.free_per_step = t.free_per_step;
    e.lr = t.lr;
    e.weights = t.weights;
    e.seed = t.seed;
    e.mc_resolution = t.final_mc_resolution;
    return e;
  }
};

struct EmbedEpochLog {
  int epoch = 0;
  double sdf_loss = 0;   // weighted sdf terms
  double reg_alpha = 0, reg_beta = 0;
  double total = 0;
};

struct EmbedResult {
  Eigen::VectorXd alpha, beta;
  field::DeformTemplateModel adapted;  // template identical to the base model
  geom::TriMesh reconstruction;
  std::vector<EmbedEpochLog> log;
  double initial_sdf_loss = 0, final_sdf_loss = 0;

  void save_log_csv(const std::filesystem::path& path) const {
    atomic_write(path, [&](std::ostream& os) {
      os << "epoch,sdf_loss,reg_alpha,reg_beta,total\n";
      char buf[256];
      for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.sdf_loss,
                      e.reg_alpha, e.reg_beta, e.total);
        os << buf;
      }
    }, /*binary=*/false);
  }
};

inline EmbedResult embed_shape(const field::DeformTemplateModel& base,
                               const geom::SampledShape& shape, const EmbedConfig& cfg) {
  EmbedResult res;
  res.adapted = base;  // template params shared byte-for-byte, hyper cloned by copy
  auto& model = res.adapted;

  {
    Rng ra = Rng::stream(cfg.seed, "embed/alpha/" + shape.id);
    Rng rb = Rng::stream(cfg.seed, "embed/beta/" + shape.id);
    res.alpha = field::DeformTemplateModel::sample_code(model.config.latent_dim, ra);
    res.beta = field::DeformTemplateModel::sample_code(model.config.latent_dim, rb);
  }

  nn::AdamConfig adam;
  adam.lr = cfg.lr;
  auto alpha_state = nn::AdamState::zeros(res.alpha.size());
  auto beta_state = nn::AdamState::zeros(res.beta.size());
  std::vector<nn::AdamState> hyper_states;
  for (const auto& hp : model.hyper_params) hyper_states.push_back(nn::AdamState::zeros(hp.size()));

  double initial_total = -1.0;
  loss::InstanceLossOptions opt;
  opt.with_tpn = false;
  opt.with_deform_regularizers = false;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EmbedEpochLog el;
    el.epoch = epoch;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      Rng rng = Rng::stream(cfg.seed, "embed/sample/" + shape.id + "/" + std::to_string(epoch) +
                                          "/" + std::to_string(step));
      const auto batch =
          detail::draw_batch(shape, cfg.surface_per_step, cfg.free_per_step, rng);

      ad::Tape tape;
      const auto leaves = field::ModelLeaves::bind(tape, model, /*train_template=*/false,
                                                   /*train_hyper=*/true);
      const int a_leaf = tape.leaf(res.alpha, true);
      const int b_leaf = tape.leaf(res.beta, true);
      const auto layers = field::deform_layers_graph(tape, model, leaves, b_leaf);
      const auto il =
          loss::build_instance_loss(tape, model, leaves, layers, a_leaf, b_leaf, batch,
                                    cfg.weights, opt);
      const int total_node = loss::instance_weighted_total(tape, il, cfg.weights);
      const double total = tape.value(total_node)(0, 0);
      const double sdf_part = cfg.weights.w_s * il.values.sdf_reg +
                              cfg.weights.w_n * il.values.normal +
                              cfg.weights.w_eik * il.values.eikonal +
                              cfg.weights.w_phi * il.values.offsurface;
      if (initial_total < 0) {
        initial_total = total;
        res.initial_sdf_loss = sdf_part;
      }
      if (!std::isfinite(total) || total > cfg.divergence_factor * initial_total)
        throw Error(Error::Kind::Numeric,
                    "embedding diverged for '" + shape.id + "': step total " +
                        std::to_string(total) + " vs initial " + std::to_string(initial_total));

      tape.backward(total_node, 1.0);
      for (std::size_t l = 0; l < hyper_states.size(); ++l)
        nn::adam_step(hyper_states[l], model.hyper_params[l], tape.grad(leaves.hyper_leaves[l]).col(0),
                      adam);
      Eigen::VectorXd ga = tape.grad(a_leaf).col(0);
      Eigen::VectorXd gb = tape.grad(b_leaf).col(0);
      nn::adam_step(alpha_state, res.alpha, ga, adam);
      nn::adam_step(beta_state, res.beta, gb, adam);

      el.sdf_loss += sdf_part / cfg.steps_per_epoch;
      el.reg_alpha += il.values.reg_alpha / cfg.steps_per_epoch;
      el.reg_beta += il.values.reg_beta / cfg.steps_per_epoch;
      el.total += total / cfg.steps_per_epoch;
    }
    res.log.push_back(el);
  }
  res.final_sdf_loss = res.log.empty() ? 0.0 : res.log.back().sdf_loss;

  res.reconstruction =
      geom::marching_cubes(field::instance_field(model, res.alpha, res.beta), cfg.mc_resolution, 0.0);
  return res;
}

}  // namespace istk::train
