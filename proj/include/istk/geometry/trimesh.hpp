#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "istk/error.hpp"
#include "istk/rng.hpp"

namespace istk::geom {

using Vec3 = Eigen::Vector3d;

// Indexed triangle mesh. Normalized meshes live inside the closed unit ball.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> normals;  // optional per-vertex normals; empty if absent

  bool empty() const { return triangles.empty(); }
  bool has_normals() const { return !normals.empty(); }
};

// Maps normalized coordinates back to the original frame: x = scale*x' + translation.
struct MeshTransform {
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();

  Vec3 to_original(const Vec3& p) const { return scale * p + translation; }
  Vec3 to_normalized(const Vec3& p) const { return (p - translation) / scale; }
};

inline Vec3 face_normal(const TriMesh& m, int t) {
  const auto& tri = m.triangles[size_t(t)];
  const Vec3 e1 = m.vertices[size_t(tri[1])] - m.vertices[size_t(tri[0])];
  const Vec3 e2 = m.vertices[size_t(tri[2])] - m.vertices[size_t(tri[0])];
  Vec3 n = e1.cross(e2);
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3(0, 0, 1);
}

inline double face_area(const TriMesh& m, int t) {
  const auto& tri = m.triangles[size_t(t)];
  const Vec3 e1 = m.vertices[size_t(tri[1])] - m.vertices[size_t(tri[0])];
  const Vec3 e2 = m.vertices[size_t(tri[2])] - m.vertices[size_t(tri[0])];
  return 0.5 * e1.cross(e2).norm();
}

inline double surface_area(const TriMesh& m) {
  double a = 0.0;
  for (int t = 0; t < int(m.triangles.size()); ++t) a += face_area(m, t);
  return a;
}

// Signed volume via the divergence theorem; positive for outward windings.
inline double signed_volume(const TriMesh& m) {
  double v = 0.0;
  for (const auto& tri : m.triangles) {
    const Vec3& a = m.vertices[size_t(tri[0])];
    const Vec3& b = m.vertices[size_t(tri[1])];
    const Vec3& c = m.vertices[size_t(tri[2])];
    v += a.dot(b.cross(c));
  }
  return v / 6.0;
}

// V - E + F with undirected edge counting (2 for a genus-0 closed surface).
inline long euler_characteristic(const TriMesh& m) {
  std::map<std::pair<int, int>, int> edges;
  for (const auto& tri : m.triangles) {
    for (int k = 0; k < 3; ++k) {
      int a = tri[size_t(k)], b = tri[size_t((k + 1) % 3)];
      if (a > b) std::swap(a, b);
      edges[{a, b}] += 1;
    }
  }
  return long(m.vertices.size()) - long(edges.size()) + long(m.triangles.size());
}

// Every undirected edge shared by exactly two triangles.
inline bool is_closed(const TriMesh& m) {
  if (m.triangles.empty()) return false;
  std::map<std::pair<int, int>, int> edges;
  for (const auto& tri : m.triangles) {
    for (int k = 0; k < 3; ++k) {
      int a = tri[size_t(k)], b = tri[size_t((k + 1) % 3)];
      if (a > b) std::swap(a, b);
      edges[{a, b}] += 1;
    }
  }
  for (const auto& [e, c] : edges)
    if (c != 2) return false;
  return true;
}

inline void validate_indices(const TriMesh& m) {
  const int n = int(m.vertices.size());
  for (const auto& tri : m.triangles)
    for (int k : tri)
      if (k < 0 || k >= n) throw Error(Error::Kind::Parse, "triangle index out of range");
}

// Centers the vertex bounding box at the origin and scales the farthest
// vertex to 1/1.03, leaving a 3% shell inside the unit ball for exterior
// free-space samples. Returns the transform back to the input frame.
inline std::pair<TriMesh, MeshTransform> normalize_to_unit_sphere(const TriMesh& mesh) {
  if (mesh.vertices.empty()) throw Error(Error::Kind::Degenerate, "empty mesh");
  Vec3 lo = mesh.vertices[0], hi = mesh.vertices[0];
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 center = 0.5 * (lo + hi);
  double rmax = 0.0;
  for (const auto& v : mesh.vertices) rmax = std::max(rmax, (v - center).norm());
  if (rmax <= 0.0) throw Error(Error::Kind::Degenerate, "degenerate mesh: all vertices identical");

  MeshTransform tf;
  tf.scale = 1.03 * rmax;
  tf.translation = center;

  TriMesh out = mesh;
  for (auto& v : out.vertices) v = (v - center) / tf.scale;
  return {std::move(out), tf};
}

inline TriMesh apply_transform(const TriMesh& mesh, const MeshTransform& tf) {
  TriMesh out = mesh;
  for (auto& v : out.vertices) v = tf.to_original(v);
  return out;
}

// Area-weighted surface sampling; returns positions and face normals.
inline void sample_mesh_surface(const TriMesh& m, int count, Rng& rng,
                                Eigen::MatrixX3d& points, Eigen::MatrixX3d* normals = nullptr) {
  if (m.triangles.empty()) throw Error(Error::Kind::EmptySurface, "cannot sample an empty mesh");
  const int nt = int(m.triangles.size());
  std::vector<double> cum(static_cast<size_t>(nt), 0.0);
  double acc = 0.0;
  for (int t = 0; t < nt; ++t) {
    acc += face_area(m, t);
    cum[size_t(t)] = acc;
  }
  if (acc <= 0.0) throw Error(Error::Kind::Degenerate, "zero-area mesh");
  points.resize(count, 3);
  if (normals) normals->resize(count, 3);
  for (int i = 0; i < count; ++i) {
    const double x = rng.uniform01() * acc;
    const int t = int(std::lower_bound(cum.begin(), cum.end(), x) - cum.begin());
    const auto& tri = m.triangles[size_t(std::min(t, nt - 1))];
    double u = rng.uniform01(), v = rng.uniform01();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3 p = m.vertices[size_t(tri[0])] +
                   u * (m.vertices[size_t(tri[1])] - m.vertices[size_t(tri[0])]) +
                   v * (m.vertices[size_t(tri[2])] - m.vertices[size_t(tri[0])]);
    points.row(i) = p;
    if (normals) normals->row(i) = face_normal(m, std::min(t, nt - 1));
  }
}

// --- generators ---------------------------------------------------------

// Sphere by octahedron subdivision: vertex set is exactly symmetric under
// coordinate sign flips, and all vertices lie exactly on the sphere.
inline TriMesh make_octasphere(double radius, int level, const Vec3& center = Vec3::Zero()) {
  if (radius <= 0.0) throw Error(Error::Kind::Parameter, "octasphere radius must be positive");
  TriMesh m;
  m.vertices = {Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0),
                Vec3(0, -1, 0), Vec3(0, 0, 1), Vec3(0, 0, -1)};
  m.triangles = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4},
                 {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 p = (m.vertices[size_t(a)] + m.vertices[size_t(b)]).normalized();
      m.vertices.push_back(p);
      const int idx = int(m.vertices.size()) - 1;
      midpoint[key] = idx;
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(m.triangles.size() * 4);
    for (const auto& t : m.triangles) {
      const int ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.triangles = std::move(next);
  }
  for (auto& v : m.vertices) v = center + radius * v;
  return m;
}

inline TriMesh make_ellipsoid(const Vec3& axes, int level, const Vec3& center = Vec3::Zero()) {
  if ((axes.array() <= 0.0).any())
    throw Error(Error::Kind::Parameter, "ellipsoid axes must be positive");
  TriMesh m = make_octasphere(1.0, level);
  for (auto& v : m.vertices) v = center + axes.cwiseProduct(v);
  return m;
}

inline TriMesh make_box(const Vec3& half, const Vec3& center = Vec3::Zero()) {
  if ((half.array() <= 0.0).any())
    throw Error(Error::Kind::Parameter, "box half-extents must be positive");
  TriMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.push_back(center + Vec3((i & 1) ? half.x() : -half.x(),
                                       (i & 2) ? half.y() : -half.y(),
                                       (i & 4) ? half.z() : -half.z()));
  }
  // outward windings per face
  m.triangles = {{0, 6, 2}, {0, 4, 6},   // x-
                 {1, 7, 5}, {1, 3, 7},   // x+
                 {0, 5, 4}, {0, 1, 5},   // y-
                 {2, 7, 3}, {2, 6, 7},   // y+
                 {0, 3, 1}, {0, 2, 3},   // z-
                 {4, 7, 6}, {4, 5, 7}};  // z+
  return m;
}

}  // namespace istk::geom
