#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "istk/geometry/trimesh.hpp"

namespace istk::geom {

// Axis-aligned BVH over triangles: exact closest-point queries and ray casts.
// Median split on the longest centroid axis, small leaves.
class TriangleBvh {
public:
  struct Hit {
    double t = std::numeric_limits<double>::infinity();
    int triangle = -1;
    bool valid() const { return triangle >= 0; }
  };

  TriangleBvh() = default;

  explicit TriangleBvh(const TriMesh& mesh) { build(mesh); }

  void build(const TriMesh& mesh) {
    mesh_ = &mesh;
    const int nt = int(mesh.triangles.size());
    order_.resize(size_t(nt));
    for (int i = 0; i < nt; ++i) order_[size_t(i)] = i;
    nodes_.clear();
    if (nt == 0) return;
    nodes_.reserve(size_t(2 * nt));
    build_node(0, nt);
  }

  bool empty() const { return nodes_.empty(); }

  // Squared distance to the nearest triangle (ties -> lowest triangle index).
  double closest(const Eigen::Vector3d& p, int* tri_out = nullptr) const {
    double best = std::numeric_limits<double>::infinity();
    int best_tri = -1;
    if (!nodes_.empty()) closest_rec(0, p, best, best_tri);
    if (tri_out) *tri_out = best_tri;
    return best;
  }

  // Nearest intersection along origin + t*dir, t > t_min.
  Hit raycast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
              double t_min = 0.0) const {
    Hit hit;
    if (!nodes_.empty()) raycast_rec(0, origin, dir, t_min, hit);
    return hit;
  }

  // All intersections along the ray (unordered); used for parity tests.
  void raycast_all(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                   std::vector<double>& ts) const {
    if (!nodes_.empty()) raycast_all_rec(0, origin, dir, ts);
  }

private:
  struct Node {
    Eigen::Vector3d lo, hi;
    int left = -1, right = -1;  // children; leaf if left < 0
    int begin = 0, end = 0;     // triangle range in order_ for leaves
  };

  int build_node(int begin, int end) {
    Node node;
    node.lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    for (int i = begin; i < end; ++i) {
      const auto& tri = mesh_->triangles[size_t(order_[size_t(i)])];
      for (int k = 0; k < 3; ++k) {
        const auto& v = mesh_->vertices[size_t(tri[size_t(k)])];
        node.lo = node.lo.cwiseMin(v);
        node.hi = node.hi.cwiseMax(v);
      }
    }
    const int idx = int(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= 4) {
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
                       const double ca = centroid_coord(a, axis), cb = centroid_coord(b, axis);
                       return ca < cb || (ca == cb && a < b);
                     });
    const int l = build_node(begin, mid);
    const int r = build_node(mid, end);
    nodes_[size_t(idx)].left = l;
    nodes_[size_t(idx)].right = r;
    return idx;
  }

  double centroid_coord(int tri, int axis) const {
    const auto& t = mesh_->triangles[size_t(tri)];
    return (mesh_->vertices[size_t(t[0])][axis] + mesh_->vertices[size_t(t[1])][axis] +
            mesh_->vertices[size_t(t[2])][axis]) /
           3.0;
  }

  static double box_dist2(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
                          const Eigen::Vector3d& p) {
    const Eigen::Vector3d d = (lo - p).cwiseMax(0.0).cwiseMax(p - hi);
    return d.squaredNorm();
  }

  void closest_rec(int ni, const Eigen::Vector3d& p, double& best, int& best_tri) const {
    const Node& n = nodes_[size_t(ni)];
    if (box_dist2(n.lo, n.hi, p) > best) return;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int tri = order_[size_t(i)];
        const double d2 = point_triangle_dist2(p, tri);
        if (d2 < best || (d2 == best && tri < best_tri)) {
          best = d2;
          best_tri = tri;
        }
      }
      return;
    }
    const double dl = box_dist2(nodes_[size_t(n.left)].lo, nodes_[size_t(n.left)].hi, p);
    const double dr = box_dist2(nodes_[size_t(n.right)].lo, nodes_[size_t(n.right)].hi, p);
    if (dl <= dr) {
      closest_rec(n.left, p, best, best_tri);
      if (dr <= best) closest_rec(n.right, p, best, best_tri);
    } else {
      closest_rec(n.right, p, best, best_tri);
      if (dl <= best) closest_rec(n.left, p, best, best_tri);
    }
  }

  double point_triangle_dist2(const Eigen::Vector3d& p, int tri) const {
    const auto& t = mesh_->triangles[size_t(tri)];
    const Eigen::Vector3d& a = mesh_->vertices[size_t(t[0])];
    const Eigen::Vector3d& b = mesh_->vertices[size_t(t[1])];
    const Eigen::Vector3d& c = mesh_->vertices[size_t(t[2])];
    // Ericson, Real-Time Collision Detection 5.1.5
    const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return (p - a).squaredNorm();
    const Eigen::Vector3d bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return (p - b).squaredNorm();
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
      const double v = d1 / (d1 - d3);
      return (p - (a + v * ab)).squaredNorm();
    }
    const Eigen::Vector3d cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return (p - c).squaredNorm();
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
      const double w = d2 / (d2 - d6);
      return (p - (a + w * ac)).squaredNorm();
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
      const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
      return (p - (b + w * (c - b))).squaredNorm();
    }
    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return (p - (a + ab * v + ac * w)).squaredNorm();
  }

  static bool ray_box(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
                      const Eigen::Vector3d& o, const Eigen::Vector3d& inv_dir, double t_max) {
    double t0 = 0.0, t1 = t_max;
    for (int k = 0; k < 3; ++k) {
      double a = (lo[k] - o[k]) * inv_dir[k];
      double b = (hi[k] - o[k]) * inv_dir[k];
      if (inv_dir[k] < 0.0) std::swap(a, b);
      t0 = std::max(t0, a);
      t1 = std::min(t1, b);
      if (t0 > t1) return false;
    }
    return true;
  }

  // Moller-Trumbore
  bool ray_triangle(const Eigen::Vector3d& o, const Eigen::Vector3d& d, int tri,
                    double& t_out) const {
    const auto& tr = mesh_->triangles[size_t(tri)];
    const Eigen::Vector3d& a = mesh_->vertices[size_t(tr[0])];
    const Eigen::Vector3d e1 = mesh_->vertices[size_t(tr[1])] - a;
    const Eigen::Vector3d e2 = mesh_->vertices[size_t(tr[2])] - a;
    const Eigen::Vector3d pv = d.cross(e2);
    const double det = e1.dot(pv);
    if (det == 0.0) return false;
    const double inv = 1.0 / det;
    const Eigen::Vector3d tv = o - a;
    const double u = tv.dot(pv) * inv;
    if (u < 0.0 || u > 1.0) return false;
    const Eigen::Vector3d qv = tv.cross(e1);
    const double v = d.dot(qv) * inv;
    if (v < 0.0 || u + v > 1.0) return false;
    t_out = e2.dot(qv) * inv;
    return true;
  }

  void raycast_rec(int ni, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double t_min,
                   Hit& hit) const {
    const Node& n = nodes_[size_t(ni)];
    const Eigen::Vector3d inv_dir = d.cwiseInverse();
    if (!ray_box(n.lo, n.hi, o, inv_dir, hit.t)) return;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int tri = order_[size_t(i)];
        double t;
        if (ray_triangle(o, d, tri, t) && t > t_min) {
          if (t < hit.t || (t == hit.t && tri < hit.triangle)) {
            hit.t = t;
            hit.triangle = tri;
          }
        }
      }
      return;
    }
    raycast_rec(n.left, o, d, t_min, hit);
    raycast_rec(n.right, o, d, t_min, hit);
  }

  void raycast_all_rec(int ni, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                       std::vector<double>& ts) const {
    const Node& n = nodes_[size_t(ni)];
    const Eigen::Vector3d inv_dir = d.cwiseInverse();
    if (!ray_box(n.lo, n.hi, o, inv_dir, std::numeric_limits<double>::infinity())) return;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        double t;
        if (ray_triangle(o, d, order_[size_t(i)], t) && t > 0.0) ts.push_back(t);
      }
      return;
    }
    raycast_all_rec(n.left, o, d, ts);
    raycast_all_rec(n.right, o, d, ts);
  }

  const TriMesh* mesh_ = nullptr;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace istk::geom
