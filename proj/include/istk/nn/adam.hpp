#pragma once

#include <Eigen/Core>
#include <cmath>

#include "istk/error.hpp"

namespace istk::nn {

// Standard Adam with bias correction.
struct AdamState {
  Eigen::VectorXd m, v;
  long step = 0;

  static AdamState zeros(Eigen::Index n) {
    AdamState s;
    s.m = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    return s;
  }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                      const AdamConfig& cfg) {
  if (state.m.size() != params.size() || grad.size() != params.size())
    throw Error(Error::Kind::Shape, "adam: state/gradient dimensions do not match parameters");
  state.step += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v.array().matrix() + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  params.array() -=
      cfg.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

}  // namespace istk::nn
