#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <vector>

#include "istk/error.hpp"

namespace istk::met {

// Static 3D kd-tree for exact nearest-neighbor queries.
class KdTree3 {
public:
  KdTree3() = default;

  explicit KdTree3(const Eigen::MatrixX3d& pts) { build(pts); }

  void build(const Eigen::MatrixX3d& pts) {
    if (pts.rows() == 0) throw Error(Error::Kind::Contract, "kd-tree needs a non-empty point set");
    pts_ = pts;
    order_.resize(size_t(pts.rows()));
    for (int i = 0; i < int(pts.rows()); ++i) order_[size_t(i)] = i;
    nodes_.clear();
    nodes_.reserve(size_t(2 * pts.rows()));
    build_node(0, int(pts.rows()));
  }

  // Squared distance to the nearest point; ties resolve to the lowest index.
  double nearest(const Eigen::Vector3d& q, int* index_out = nullptr) const {
    double best = std::numeric_limits<double>::infinity();
    int best_idx = -1;
    nearest_rec(0, q, best, best_idx);
    if (index_out) *index_out = best_idx;
    return best;
  }

private:
  struct Node {
    Eigen::Vector3d lo, hi;
    int left = -1, right = -1;
    int begin = 0, end = 0;
  };

  int build_node(int begin, int end) {
    Node node;
    node.lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    for (int i = begin; i < end; ++i) {
      const Eigen::Vector3d p = pts_.row(order_[size_t(i)]).transpose();
      node.lo = node.lo.cwiseMin(p);
      node.hi = node.hi.cwiseMax(p);
    }
    const int idx = int(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= 8) {
      nodes_[size_t(idx)].begin = begin;
      nodes_[size_t(idx)].end = end;
      return idx;
    }
    Eigen::Vector3d ext = node.hi - node.lo;
    int axis = 0;
    ext.maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       const double ca = pts_(a, axis), cb = pts_(b, axis);
                       return ca < cb || (ca == cb && a < b);
                     });
    const int l = build_node(begin, mid);
    const int r = build_node(mid, end);
    nodes_[size_t(idx)].left = l;
    nodes_[size_t(idx)].right = r;
    return idx;
  }

  static double box_dist2(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
                          const Eigen::Vector3d& p) {
    const Eigen::Vector3d d = (lo - p).cwiseMax(0.0).cwiseMax(p - hi);
    return d.squaredNorm();
  }

  void nearest_rec(int ni, const Eigen::Vector3d& q, double& best, int& best_idx) const {
    const Node& n = nodes_[size_t(ni)];
    if (box_dist2(n.lo, n.hi, q) > best) return;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int idx = order_[size_t(i)];
        const double d2 = (pts_.row(idx).transpose() - q).squaredNorm();
        if (d2 < best || (d2 == best && idx < best_idx)) {
          best = d2;
          best_idx = idx;
        }
      }
      return;
    }
    const double dl = box_dist2(nodes_[size_t(n.left)].lo, nodes_[size_t(n.left)].hi, q);
    const double dr = box_dist2(nodes_[size_t(n.right)].lo, nodes_[size_t(n.right)].hi, q);
    if (dl <= dr) {
      nearest_rec(n.left, q, best, best_idx);
      if (dr <= best) nearest_rec(n.right, q, best, best_idx);
    } else {
      nearest_rec(n.right, q, best, best_idx);
      if (dl <= best) nearest_rec(n.left, q, best, best_idx);
    }
  }

  Eigen::MatrixX3d pts_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace istk::met
