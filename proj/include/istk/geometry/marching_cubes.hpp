#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "istk/error.hpp"
#include "istk/geometry/trimesh.hpp"

namespace istk::geom {

namespace mc_detail {
#include "istk/geometry/mc_tables.inc"
}

// Evaluates a scalar field on a batch of points (one row per point).
using BatchFieldFn = std::function<void(const Eigen::MatrixX3d&, Eigen::VectorXd&)>;

inline BatchFieldFn batch_field(const std::function<double(const Eigen::Vector3d&)>& f) {
  return [f](const Eigen::MatrixX3d& pts, Eigen::VectorXd& out) {
    out.resize(pts.rows());
    for (Eigen::Index i = 0; i < pts.rows(); ++i) out[i] = f(pts.row(i).transpose());
  };
}

// Standard marching cubes of the iso-level set on an R^3 node grid spanning
// [-1,1]^3, with linear edge interpolation and welded vertices. Triangles
// wind outward for fields that are negative inside.
inline TriMesh marching_cubes(const BatchFieldFn& field, int resolution, double iso) {
  if (resolution < 8) throw Error(Error::Kind::Parameter, "marching cubes needs resolution >= 8");
  const int R = resolution;
  const double step = 2.0 / (R - 1);
  auto coord = [&](int i) { return -1.0 + step * i; };

  // evaluate all grid nodes, batched by z-slab
  std::vector<double> values(size_t(R) * R * R);
  {
    Eigen::MatrixX3d pts(R * R, 3);
    Eigen::VectorXd out;
    for (int z = 0; z < R; ++z) {
      int row = 0;
      for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x, ++row) pts.row(row) = Eigen::Vector3d(coord(x), coord(y), coord(z));
      field(pts, out);
      for (int i = 0; i < R * R; ++i) {
        if (!std::isfinite(out[i])) {
          const int x = i % R, y = i / R;
          throw Error(Error::Kind::Numeric, "field returned non-finite value at grid node (" +
                                                std::to_string(x) + "," + std::to_string(y) + "," +
                                                std::to_string(z) + ")");
        }
        values[size_t(z) * R * R + size_t(i)] = out[i];
      }
    }
  }
  auto value = [&](int x, int y, int z) -> double {
    return values[(size_t(z) * R + size_t(y)) * R + size_t(x)];
  };

  TriMesh mesh;
  std::unordered_map<std::int64_t, int> edge_vertex;

  // canonical interpolation from grid node (x,y,z) toward +axis
  auto edge_point = [&](int x, int y, int z, int axis) -> int {
    const std::int64_t node = (std::int64_t(z) * R + y) * R + x;
    const std::int64_t key = node * 3 + axis;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double v0 = value(x, y, z);
    const double v1 = value(x + (axis == 0), y + (axis == 1), z + (axis == 2));
    double t = 0.5;
    if (v1 != v0) t = (iso - v0) / (v1 - v0);
    t = std::min(1.0, std::max(0.0, t));
    Eigen::Vector3d p(coord(x), coord(y), coord(z));
    p[axis] += t * step;
    mesh.vertices.push_back(p);
    const int idx = int(mesh.vertices.size()) - 1;
    edge_vertex.emplace(key, idx);
    return idx;
  };

  // cell-local edge -> (corner offset, axis), Bourke numbering
  static const int kEdgeNode[12][4] = {{0, 0, 0, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}, {0, 0, 0, 1},
                                       {0, 0, 1, 0}, {1, 0, 1, 1}, {0, 1, 1, 0}, {0, 0, 1, 1},
                                       {0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {0, 1, 0, 2}};
  static const int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};

  for (int z = 0; z + 1 < R; ++z) {
    for (int y = 0; y + 1 < R; ++y) {
      for (int x = 0; x + 1 < R; ++x) {
        int cube = 0;
        for (int c = 0; c < 8; ++c)
          if (value(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2]) < iso) cube |= 1 << c;
        if (mc_detail::kEdgeTable[cube] == 0) continue;
        int ev[12];
        for (int e = 0; e < 12; ++e) {
          if (mc_detail::kEdgeTable[cube] & (1 << e))
            ev[e] = edge_point(x + kEdgeNode[e][0], y + kEdgeNode[e][1], z + kEdgeNode[e][2],
                               kEdgeNode[e][3]);
        }
        for (int i = 0; mc_detail::kTriTable[cube][i] != -1; i += 3) {
          const int a = ev[mc_detail::kTriTable[cube][i]];
          const int b = ev[mc_detail::kTriTable[cube][i + 1]];
          const int c = ev[mc_detail::kTriTable[cube][i + 2]];
          if (a == b || b == c || a == c) continue;  // degenerate (iso through a node)
          mesh.triangles.push_back({a, c, b});       // outward for negative-inside fields
        }
      }
    }
  }
  return mesh;
}

inline TriMesh marching_cubes(const std::function<double(const Eigen::Vector3d&)>& field,
                              int resolution, double iso) {
  return marching_cubes(batch_field(field), resolution, iso);
}

}  // namespace istk::geom
