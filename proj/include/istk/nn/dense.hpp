#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <vector>

#include "istk/ad/tape.hpp"
#include "istk/error.hpp"
#include "istk/rng.hpp"

namespace istk::nn {

enum class Act { Sine, Relu, Linear };

// Fully connected net: linear layers with sine(omega0*z) or ReLU on hidden
// layers, linear output. Parameters are stored flat, per layer W (out x in,
// column-major) followed by b (out).
struct DenseNetSpec {
  std::vector<int> widths;  // input, hidden..., output
  Act hidden = Act::Sine;
  double omega0 = 30.0;

  int layer_count() const { return int(widths.size()) - 1; }

  void validate() const {
    if (widths.size() < 3) throw Error(Error::Kind::Config, "net needs at least one hidden layer");
    for (int w : widths)
      if (w <= 0) throw Error(Error::Kind::Config, "net widths must be positive");
    if (omega0 <= 0.0) throw Error(Error::Kind::Config, "omega0 must be positive");
  }

  struct LayerShape {
    int in = 0, out = 0;
    Eigen::Index w_offset = 0, b_offset = 0;
    Eigen::Index count() const { return Eigen::Index(in) * out + out; }
  };

  LayerShape layer(int l) const {
    LayerShape s;
    Eigen::Index off = 0;
    for (int k = 0; k <= l; ++k) {
      s.in = widths[size_t(k)];
      s.out = widths[size_t(k) + 1];
      s.w_offset = off;
      s.b_offset = off + Eigen::Index(s.in) * s.out;
      off = s.b_offset + s.out;
    }
    return s;
  }

  Eigen::Index param_count() const {
    Eigen::Index n = 0;
    for (int l = 0; l < layer_count(); ++l) n += layer(l).count();
    return n;
  }
};

// Sine-net initialization: first layer U(-1/fan_in, 1/fan_in), deeper layers
// U(-sqrt(6/fan_in)/omega0, +sqrt(6/fan_in)/omega0). ReLU nets use the
// customary U(+-1/sqrt(fan_in)). Biases are U(+-1/sqrt(fan_in)) throughout.
inline Eigen::VectorXd dense_init(const DenseNetSpec& spec, Rng& rng) {
  spec.validate();
  Eigen::VectorXd params(spec.param_count());
  for (int l = 0; l < spec.layer_count(); ++l) {
    const auto shape = spec.layer(l);
    double bound;
    if (spec.hidden == Act::Sine)
      bound = (l == 0) ? 1.0 / shape.in : std::sqrt(6.0 / shape.in) / spec.omega0;
    else
      bound = 1.0 / std::sqrt(double(shape.in));
    for (Eigen::Index i = 0; i < Eigen::Index(shape.in) * shape.out; ++i)
      params[shape.w_offset + i] = rng.uniform(-bound, bound);
    const double b_bound = 1.0 / std::sqrt(double(shape.in));
    for (Eigen::Index i = 0; i < shape.out; ++i)
      params[shape.b_offset + i] = rng.uniform(-b_bound, b_bound);
  }
  return params;
}

inline Eigen::VectorXd dense_init(const DenseNetSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return dense_init(spec, rng);
}

// --- plain evaluation -----------------------------------------------------

inline void check_input(const DenseNetSpec& spec, const Eigen::MatrixXd& x) {
  if (x.cols() != spec.widths.front())
    throw Error(Error::Kind::Shape, "input dimension does not match net spec");
}

inline Eigen::MatrixXd forward(const DenseNetSpec& spec, const Eigen::VectorXd& params,
                               const Eigen::MatrixXd& x) {
  check_input(spec, x);
  if (params.size() != spec.param_count())
    throw Error(Error::Kind::Shape, "parameter vector does not match net spec");
  Eigen::MatrixXd h = x;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const auto s = spec.layer(l);
    const auto W = Eigen::Map<const Eigen::MatrixXd>(params.data() + s.w_offset, s.out, s.in);
    const auto b = Eigen::Map<const Eigen::VectorXd>(params.data() + s.b_offset, s.out);
    Eigen::MatrixXd z = (h * W.transpose()).rowwise() + b.transpose();
    if (l + 1 < spec.layer_count()) {
      if (spec.hidden == Act::Sine)
        h = (spec.omega0 * z.array()).sin();
      else if (spec.hidden == Act::Relu)
        h = z.cwiseMax(0.0);
      else
        h = std::move(z);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

// Values plus the spatial jacobian w.r.t. an input slice [pos0, pos0+3):
// jac[k] column-wise holds d(output)/d(input_{pos0+k}). Exact chain rule,
// evaluated by tangent propagation.
struct DualBatch {
  Eigen::MatrixXd value;                 // N x out
  std::array<Eigen::MatrixXd, 3> jac;    // each N x out
};

inline DualBatch forward_with_spatial_grad(const DenseNetSpec& spec, const Eigen::VectorXd& params,
                                           const Eigen::MatrixXd& x, Eigen::Index pos0 = 0) {
  check_input(spec, x);
  if (pos0 < 0 || pos0 + 3 > x.cols())
    throw Error(Error::Kind::Shape, "position slice out of range");
  if (spec.hidden == Act::Relu)
    throw Error(Error::Kind::Contract, "spatial gradients need a smooth activation");
  Eigen::MatrixXd h = x;
  std::array<Eigen::MatrixXd, 3> t;
  for (int k = 0; k < 3; ++k) {
    t[size_t(k)] = Eigen::MatrixXd::Zero(x.rows(), x.cols());
    t[size_t(k)].col(pos0 + k).setOnes();
  }
  for (int l = 0; l < spec.layer_count(); ++l) {
    const auto s = spec.layer(l);
    const auto W = Eigen::Map<const Eigen::MatrixXd>(params.data() + s.w_offset, s.out, s.in);
    const auto b = Eigen::Map<const Eigen::VectorXd>(params.data() + s.b_offset, s.out);
    Eigen::MatrixXd z = (h * W.transpose()).rowwise() + b.transpose();
    for (auto& tk : t) tk = (tk * W.transpose()).eval();
    if (l + 1 < spec.layer_count()) {
      if (spec.hidden == Act::Sine) {
        const Eigen::ArrayXXd c = spec.omega0 * (spec.omega0 * z.array()).cos();
        for (auto& tk : t) tk.array() *= c;
        h = (spec.omega0 * z.array()).sin();
      } else {
        h = std::move(z);
      }
    } else {
      h = std::move(z);
    }
  }
  DualBatch out;
  out.value = std::move(h);
  out.jac = std::move(t);
  return out;
}

// --- graph evaluation -------------------------------------------------------

// Parameter layer views bound into a tape: for each layer, W (out x in) and
// b (1 x out) node ids. Built either from a flat leaf or from hypernet output.
struct LayerNodes {
  std::vector<int> w, b;
};

inline LayerNodes bind_params(ad::Tape& tape, const DenseNetSpec& spec, int flat_leaf) {
  LayerNodes ln;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const auto s = spec.layer(l);
    const int w_block = tape.block(flat_leaf, s.w_offset, 0, Eigen::Index(s.in) * s.out, 1);
    ln.w.push_back(tape.reshape(w_block, s.out, s.in));
    const int b_block = tape.block(flat_leaf, s.b_offset, 0, s.out, 1);
    ln.b.push_back(tape.reshape(b_block, 1, s.out));
  }
  return ln;
}

struct GraphDual {
  int value = -1;
  std::array<int, 3> jac = {-1, -1, -1};
  bool has_jac = false;
};

// Forward through the layers; when `tangents` is non-null its three channels
// are propagated alongside (sine nets only).
inline GraphDual forward_graph(ad::Tape& tape, const DenseNetSpec& spec, const LayerNodes& ln,
                               int x, const std::array<int, 3>* tangents = nullptr) {
  GraphDual out;
  int h = x;
  std::array<int, 3> t{};
  if (tangents) {
    t = *tangents;
    out.has_jac = true;
    if (spec.hidden == Act::Relu)
      throw Error(Error::Kind::Contract, "tangent propagation needs a smooth activation");
  }
  for (int l = 0; l < spec.layer_count(); ++l) {
    int z = tape.add_rowvec(tape.matmul_nt(h, ln.w[size_t(l)]), ln.b[size_t(l)]);
    if (out.has_jac)
      for (auto& tk : t) tk = tape.matmul_nt(tk, ln.w[size_t(l)]);
    if (l + 1 < spec.layer_count()) {
      if (spec.hidden == Act::Sine) {
        const auto [s, c] = tape.sincos_scaled(z, spec.omega0);
        if (out.has_jac)
          for (auto& tk : t) tk = tape.scale(tape.hadamard(c, tk), spec.omega0);
        h = s;
      } else if (spec.hidden == Act::Relu) {
        h = tape.relu(z);
      } else {
        h = z;
      }
    } else {
      h = z;
    }
  }
  out.value = h;
  out.jac = t;
  return out;
}

}  // namespace istk::nn
