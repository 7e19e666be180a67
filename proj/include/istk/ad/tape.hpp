#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "istk/error.hpp"

namespace istk::ad {

using Mat = Eigen::MatrixXd;

// Reverse-mode autodiff over matrix-valued nodes. A graph is built per
// optimization step and discarded after backward(). Spatial derivatives are
// expressed as ordinary nodes (forward tangents built from the same
// primitives), so reverse mode differentiates through them, which yields the
// parameter gradients of losses that contain spatial gradients.
//
// Backward runs in reverse creation order with fixed-order accumulation, so
// results are bit-deterministic.
class Tape {
public:
  int leaf(Mat value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
  }

  int constant(Mat value) { return push(std::move(value), false, nullptr); }

  const Mat& value(int id) const { return nodes_[size_t(id)].value; }

  Mat& grad(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool requires_grad(int id) const { return nodes_[size_t(id)].requires_grad; }

  std::size_t size() const { return nodes_.size(); }

  // --- arithmetic -----------------------------------------------------

  // A * B^T  (A: NxK, B: MxK -> NxM)
  int matmul_nt(int a, int b) {
    check_cols_match(a, b, "matmul_nt");
    Mat y = value(a) * value(b).transpose();
    return push(std::move(y), requires_grad(a) || requires_grad(b), [a, b](Tape& t, const Mat& g, int) {
      if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(b);
      if (t.requires_grad(b)) t.grad(b).noalias() += g.transpose() * t.value(a);
    });
  }

  // X + replicated row vector (b: 1xM)
  int add_rowvec(int x, int b) {
    if (value(b).rows() != 1 || value(b).cols() != value(x).cols())
      throw Error(Error::Kind::Shape, "add_rowvec: bias must be 1 x cols(x)");
    Mat y = value(x).rowwise() + value(b).row(0);
    return push(std::move(y), requires_grad(x) || requires_grad(b), [x, b](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x)) t.grad(x) += g;
      if (t.requires_grad(b)) t.grad(b) += g.colwise().sum();
    });
  }

  int add(int a, int b) {
    check_same_shape(a, b, "add");
    Mat y = value(a) + value(b);
    return push(std::move(y), requires_grad(a) || requires_grad(b), [a, b](Tape& t, const Mat& g, int) {
      if (t.requires_grad(a)) t.grad(a) += g;
      if (t.requires_grad(b)) t.grad(b) += g;
    });
  }

  int sub(int a, int b) {
    check_same_shape(a, b, "sub");
    Mat y = value(a) - value(b);
    return push(std::move(y), requires_grad(a) || requires_grad(b), [a, b](Tape& t, const Mat& g, int) {
      if (t.requires_grad(a)) t.grad(a) += g;
      if (t.requires_grad(b)) t.grad(b) -= g;
    });
  }

  int hadamard(int a, int b) {
    check_same_shape(a, b, "hadamard");
    Mat y = value(a).cwiseProduct(value(b));
    return push(std::move(y), requires_grad(a) || requires_grad(b), [a, b](Tape& t, const Mat& g, int) {
      if (t.requires_grad(a)) t.grad(a) += g.cwiseProduct(t.value(b));
      if (t.requires_grad(b)) t.grad(b) += g.cwiseProduct(t.value(a));
    });
  }

  // elementwise a / b
  int cdiv(int a, int b) {
    check_same_shape(a, b, "cdiv");
    Mat y = value(a).cwiseQuotient(value(b));
    return push(std::move(y), requires_grad(a) || requires_grad(b), [a, b](Tape& t, const Mat& g, int self) {
      if (t.requires_grad(a)) t.grad(a) += g.cwiseQuotient(t.value(b));
      if (t.requires_grad(b))
        t.grad(b) -= g.cwiseProduct(t.value(self)).cwiseQuotient(t.value(b));
    });
  }

  int scale(int x, double c) {
    Mat y = c * value(x);
    return push(std::move(y), requires_grad(x), [x, c](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x)) t.grad(x) += c * g;
    });
  }

  int add_scalar(int x, double c) {
    Mat y = value(x).array() + c;
    return push(std::move(y), requires_grad(x), [x](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x)) t.grad(x) += g;
    });
  }

  // --- elementwise nonlinearities ---------------------------------------

  int sin_scaled(int x, double w) {
    Mat y = (w * value(x).array()).sin();
    return push(std::move(y), requires_grad(x), [x, w](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x))
        t.grad(x).array() += w * (w * t.value(x).array()).cos() * g.array();
    });
  }

  int cos_scaled(int x, double w) {
    Mat y = (w * value(x).array()).cos();
    return push(std::move(y), requires_grad(x), [x, w](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x))
        t.grad(x).array() -= w * (w * t.value(x).array()).sin() * g.array();
    });
  }

  // sin and cos of w*x in one pass; each node's backward reads the sibling's
  // cached value instead of recomputing the transcendental.
  std::pair<int, int> sincos_scaled(int x, double w) {
    const Mat& v = value(x);
    Mat s(v.rows(), v.cols()), c(v.rows(), v.cols());
    const double* in = v.data();
    double* so = s.data();
    double* co = c.data();
    const Eigen::Index n = v.size();
    for (Eigen::Index i = 0; i < n; ++i) {
      ::sincos(w * in[i], &so[i], &co[i]);
    }
    const int sid = int(nodes_.size());
    const int cid = sid + 1;
    push(std::move(s), requires_grad(x), [x, w, cid](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x)) t.grad(x).array() += w * t.value(cid).array() * g.array();
    });
    push(std::move(c), requires_grad(x), [x, w, sid](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x)) t.grad(x).array() -= w * t.value(sid).array() * g.array();
    });
    return {sid, cid};
  }

  int relu(int x) {
    Mat y = value(x).cwiseMax(0.0);
    return push(std::move(y), requires_grad(x), [x](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x))
        t.grad(x).array() += (t.value(x).array() > 0.0).cast<double>() * g.array();
    });
  }

  int abs(int x) {
    Mat y = value(x).cwiseAbs();
    return push(std::move(y), requires_grad(x), [x](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x)) t.grad(x).array() += t.value(x).array().sign() * g.array();
    });
  }

  int square(int x) {
    Mat y = value(x).array().square();
    return push(std::move(y), requires_grad(x), [x](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x)) t.grad(x).array() += 2.0 * t.value(x).array() * g.array();
    });
  }

  int exp(int x) {
    Mat y = value(x).array().exp();
    return push(std::move(y), requires_grad(x), [x](Tape& t, const Mat& g, int self) {
      if (t.requires_grad(x)) t.grad(x).array() += t.value(self).array() * g.array();
    });
  }

  // --- structure ---------------------------------------------------------

  int block(int x, Eigen::Index i0, Eigen::Index j0, Eigen::Index r, Eigen::Index c) {
    Mat y = value(x).block(i0, j0, r, c);
    return push(std::move(y), requires_grad(x), [x, i0, j0, r, c](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x)) t.grad(x).block(i0, j0, r, c) += g;
    });
  }

  int slice_cols(int x, Eigen::Index j0, Eigen::Index c) {
    return block(x, 0, j0, value(x).rows(), c);
  }

  int slice_rows(int x, Eigen::Index i0, Eigen::Index r) {
    return block(x, i0, 0, r, value(x).cols());
  }

  int concat_cols(int a, int b) {
    if (value(a).rows() != value(b).rows())
      throw Error(Error::Kind::Shape, "concat_cols: row mismatch");
    Mat y(value(a).rows(), value(a).cols() + value(b).cols());
    y << value(a), value(b);
    const Eigen::Index ca = value(a).cols();
    return push(std::move(y), requires_grad(a) || requires_grad(b),
                [a, b, ca](Tape& t, const Mat& g, int) {
                  if (t.requires_grad(a)) t.grad(a) += g.leftCols(ca);
                  if (t.requires_grad(b)) t.grad(b) += g.rightCols(g.cols() - ca);
                });
  }

  // column-major reshape
  int reshape(int x, Eigen::Index r, Eigen::Index c) {
    if (value(x).size() != r * c) throw Error(Error::Kind::Shape, "reshape: size mismatch");
    Mat y = value(x).reshaped(r, c);
    return push(std::move(y), requires_grad(x), [x](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x))
        t.grad(x) += g.reshaped(t.value(x).rows(), t.value(x).cols());
    });
  }

  // replicate a 1xK row to NxK
  int broadcast_row(int row, Eigen::Index n) {
    if (value(row).rows() != 1) throw Error(Error::Kind::Shape, "broadcast_row: need 1xK");
    Mat y = value(row).replicate(n, 1);
    return push(std::move(y), requires_grad(row), [row](Tape& t, const Mat& g, int) {
      if (t.requires_grad(row)) t.grad(row) += g.colwise().sum();
    });
  }

  // --- reductions ----------------------------------------------------------

  int sum_all(int x) {
    Mat y(1, 1);
    y(0, 0) = value(x).sum();
    return push(std::move(y), requires_grad(x), [x](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x)) t.grad(x).array() += g(0, 0);
    });
  }

  int mean_all(int x) {
    const double inv = 1.0 / double(value(x).size());
    Mat y(1, 1);
    y(0, 0) = value(x).sum() * inv;
    return push(std::move(y), requires_grad(x), [x, inv](Tape& t, const Mat& g, int) {
      if (t.requires_grad(x)) t.grad(x).array() += g(0, 0) * inv;
    });
  }

  // row-wise L2 norm: NxK -> Nx1 (zero rows get zero gradient)
  int rownorm(int x) {
    Mat y = value(x).rowwise().norm();
    return push(std::move(y), requires_grad(x), [x](Tape& t, const Mat& g, int self) {
      if (!t.requires_grad(x)) return;
      const Mat& v = t.value(x);
      const Mat& n = t.value(self);
      Mat& gx = t.grad(x);
      for (Eigen::Index i = 0; i < v.rows(); ++i)
        if (n(i, 0) > 0.0) gx.row(i) += (g(i, 0) / n(i, 0)) * v.row(i);
    });
  }

  // row-wise dot product: (NxK, NxK) -> Nx1
  int rowdot(int a, int b) {
    check_same_shape(a, b, "rowdot");
    Mat y = (value(a).array() * value(b).array()).rowwise().sum();
    return push(std::move(y), requires_grad(a) || requires_grad(b), [a, b](Tape& t, const Mat& g, int) {
      if (t.requires_grad(a))
        t.grad(a) += (t.value(b).array().colwise() * g.col(0).array()).matrix();
      if (t.requires_grad(b))
        t.grad(b) += (t.value(a).array().colwise() * g.col(0).array()).matrix();
    });
  }

  // --- backward --------------------------------------------------------

  // root must be 1x1; gradients accumulate into every requires-grad leaf.
  void backward(int root, double seed = 1.0) {
    if (value(root).size() != 1)
      throw Error(Error::Kind::Shape, "backward: root must be scalar");
    if (!std::isfinite(value(root)(0, 0)))
      throw Error(Error::Kind::Numeric,
                  "backward: non-finite loss at node " + std::to_string(root));
    grad(root)(0, 0) += seed;
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[size_t(id)];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward_fn(*this, n.grad, id);
    }
  }

private:
  using BackwardFn = std::function<void(Tape&, const Mat&, int)>;

  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool backward = false;
    BackwardFn backward_fn;
  };

  int push(Mat&& value, bool req, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = req;
    n.backward = req && bool(fn);
    if (n.backward) n.backward_fn = std::move(fn);
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  void check_same_shape(int a, int b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw Error(Error::Kind::Shape, std::string(op) + ": shape mismatch");
  }

  void check_cols_match(int a, int b, const char* op) const {
    if (value(a).cols() != value(b).cols())
      throw Error(Error::Kind::Shape, std::string(op) + ": inner dimension mismatch");
  }

  std::vector<Node> nodes_;
};

}  // namespace istk::ad
