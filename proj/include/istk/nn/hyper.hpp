#pragma once

#include <Eigen/Core>
#include <vector>

#include "istk/ad/tape.hpp"
#include "istk/nn/dense.hpp"
#include "istk/rng.hpp"

namespace istk::nn {

// Hypernetwork: one 3-layer ReLU MLP per target layer, each mapping the
// hyper latent code to that layer's full (W, b) block. The generated blocks
// concatenate into a complete parameter vector for the target spec.
struct HyperNetwork {
  DenseNetSpec target;                  // the net whose params are generated
  std::vector<DenseNetSpec> generators; // one per target layer
  int latent_dim = 0;
  int hidden = 256;

  static HyperNetwork make(const DenseNetSpec& target, int latent_dim, int hidden) {
    target.validate();
    HyperNetwork h;
    h.target = target;
    h.latent_dim = latent_dim;
    h.hidden = hidden;
    for (int l = 0; l < target.layer_count(); ++l) {
      DenseNetSpec g;
      g.widths = {latent_dim, hidden, hidden, int(target.layer(l).count())};
      g.hidden = Act::Relu;
      h.generators.push_back(g);
    }
    return h;
  }

  Eigen::Index generator_param_count() const {
    Eigen::Index n = 0;
    for (const auto& g : generators) n += g.param_count();
    return n;
  }
};

// Generator init: ReLU layers use the standard uniform fan-in scheme; the
// output layer starts at zero weights with bias equal to a fresh sine-net
// initialization of the target layer. A zero latent code therefore yields an
// ordinarily initialized target net, and training moves it from there.
inline std::vector<Eigen::VectorXd> hyper_init(const HyperNetwork& h, Rng& rng) {
  std::vector<Eigen::VectorXd> params;
  const Eigen::VectorXd target_init = dense_init(h.target, rng);
  for (int l = 0; l < int(h.generators.size()); ++l) {
    const auto& gspec = h.generators[size_t(l)];
    Eigen::VectorXd p = dense_init(gspec, rng);
    const auto out_layer = gspec.layer(gspec.layer_count() - 1);
    p.segment(out_layer.w_offset, Eigen::Index(out_layer.in) * out_layer.out).setZero();
    const auto t = h.target.layer(l);
    p.segment(out_layer.b_offset, out_layer.out) = target_init.segment(t.w_offset, t.count());
    params.push_back(std::move(p));
  }
  return params;
}

// Plain evaluation: beta -> full target parameter vector.
inline Eigen::VectorXd hyper_forward(const HyperNetwork& h,
                                     const std::vector<Eigen::VectorXd>& gen_params,
                                     const Eigen::VectorXd& beta) {
  if (int(beta.size()) != h.latent_dim)
    throw Error(Error::Kind::Shape, "hyper latent code has wrong dimension");
  if (gen_params.size() != h.generators.size())
    throw Error(Error::Kind::Config, "one generator parameter vector per target layer required");
  Eigen::VectorXd out(h.target.param_count());
  for (int l = 0; l < int(h.generators.size()); ++l) {
    const auto& gspec = h.generators[size_t(l)];
    if (gen_params[size_t(l)].size() != gspec.param_count())
      throw Error(Error::Kind::Config, "generator parameter count mismatch");
    const Eigen::MatrixXd y = forward(gspec, gen_params[size_t(l)], beta.transpose());
    const auto t = h.target.layer(l);
    out.segment(t.w_offset, t.count()) = y.row(0).transpose();
  }
  return out;
}

// Graph evaluation: produces per-layer (W, b) nodes of the target net,
// differentiable w.r.t. the generator leaves and the beta leaf.
inline LayerNodes hyper_forward_graph(ad::Tape& tape, const HyperNetwork& h,
                                      const std::vector<int>& gen_leaves, int beta_leaf) {
  LayerNodes ln;
  const int beta_row = tape.reshape(beta_leaf, 1, h.latent_dim);
  for (int l = 0; l < int(h.generators.size()); ++l) {
    const auto& gspec = h.generators[size_t(l)];
    const LayerNodes gn = bind_params(tape, gspec, gen_leaves[size_t(l)]);
    const GraphDual y = forward_graph(tape, gspec, gn, beta_row);
    const auto t = h.target.layer(l);
    // generated row holds W (column-major) then b, matching the flat layout
    const int w_row = tape.slice_cols(y.value, 0, Eigen::Index(t.in) * t.out);
    ln.w.push_back(tape.reshape(w_row, t.out, t.in));
    ln.b.push_back(tape.slice_cols(y.value, Eigen::Index(t.in) * t.out, t.out));
  }
  return ln;
}

}  // namespace istk::nn
