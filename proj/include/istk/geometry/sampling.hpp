#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "istk/binio.hpp"
#include "istk/error.hpp"
#include "istk/geometry/bvh.hpp"
#include "istk/geometry/camera.hpp"
#include "istk/geometry/trimesh.hpp"
#include "istk/rng.hpp"

namespace istk::geom {

// Point supervision for one shape instance: surface points with unit normals
// plus free-space points with signed distances (negative inside).
struct SampledShape {
  std::string id;
  Eigen::MatrixX3d surface_points;
  Eigen::MatrixX3d surface_normals;
  Eigen::MatrixX3d free_points;
  Eigen::VectorXd free_sdf;

  Eigen::Index surface_count() const { return surface_points.rows(); }
  Eigen::Index free_count() const { return free_points.rows(); }
};

// Back-projects `count` finite-depth pixels; normals come from the triangle
// the depth ray hit. Samples without replacement while possible.
inline void sample_surface(const TriMesh& mesh, const std::vector<VirtualCamera>& cameras,
                           const std::vector<DepthMap>& maps, int count, Rng& rng,
                           Eigen::MatrixX3d& points, Eigen::MatrixX3d& normals) {
  struct Pixel {
    int cam, ix, iy;
  };
  std::vector<Pixel> finite;
  for (int c = 0; c < int(cameras.size()); ++c) {
    const auto& dm = maps[size_t(c)];
    for (int iy = 0; iy < int(dm.depth.rows()); ++iy)
      for (int ix = 0; ix < int(dm.depth.cols()); ++ix)
        if (std::isfinite(dm.depth(iy, ix))) finite.push_back({c, ix, iy});
  }
  if (finite.empty()) throw Error(Error::Kind::EmptySurface, "no finite-depth pixels to sample");

  std::vector<std::uint64_t> pick;
  if (std::uint64_t(count) <= finite.size()) {
    pick = rng.sample_without_replacement(finite.size(), std::uint64_t(count));
  } else {
    pick.resize(size_t(count));
    for (auto& i : pick) i = rng.uniform_int(finite.size());
  }
  points.resize(count, 3);
  normals.resize(count, 3);
  for (int i = 0; i < count; ++i) {
    const Pixel& px = finite[size_t(pick[size_t(i)])];
    const auto& cam = cameras[size_t(px.cam)];
    const auto& dm = maps[size_t(px.cam)];
    points.row(i) = cam.pixel_origin(px.ix, px.iy) + dm.depth(px.iy, px.ix) * cam.forward;
    normals.row(i) = face_normal(mesh, dm.triangle(px.iy, px.ix));
  }
}

// Uniform unit-ball points with exact unsigned distance to the mesh. A point
// is outside (positive) iff some camera sees it at a depth at most the
// surface depth at its own projection (ties within 1e-6 count as outside).
// The surface depth is evaluated along the exact projection ray rather than
// the nearest pixel-center ray, which keeps the sign rule free of image
// discretization error; the rendered maps stay the source of surface samples.
inline void sample_free_space(const TriMesh& mesh, const std::vector<VirtualCamera>& cameras,
                              const std::vector<DepthMap>& maps, int count, Rng& rng,
                              Eigen::MatrixX3d& points, Eigen::VectorXd& sdf) {
  (void)maps;
  TriangleBvh bvh(mesh);
  points.resize(count, 3);
  sdf.resize(count);
  for (int i = 0; i < count; ++i) {
    const Eigen::Vector3d p = rng.unit_ball();
    const double dist = std::sqrt(bvh.closest(p));
    bool outside = false;
    for (int c = 0; c < int(cameras.size()) && !outside; ++c) {
      const auto& cam = cameras[size_t(c)];
      const Eigen::Vector3d d = p - cam.position;
      const double depth_p = d.dot(cam.forward);
      const Eigen::Vector3d ray_origin =
          cam.position + d.dot(cam.right) * cam.right + d.dot(cam.up) * cam.up;
      const auto hit = bvh.raycast(ray_origin, cam.forward);
      outside = depth_p <= hit.t + 1e-6;  // miss: hit.t = +inf, point is visible
    }
    points.row(i) = p;
    sdf[i] = outside ? dist : -dist;
  }
}

// Inside/outside by parity of ray crossings along +x; jittered origin breaks
// edge and vertex ties deterministically.
inline bool point_inside_parity(const TriangleBvh& bvh, const Eigen::Vector3d& p,
                                double jitter = 1e-7) {
  std::vector<double> ts;
  const Eigen::Vector3d origin = p + Eigen::Vector3d(0.0, jitter, jitter);
  bvh.raycast_all(origin, Eigen::Vector3d(1, 0, 0), ts);
  return ts.size() % 2 == 1;
}

// --- archive ------------------------------------------------------------
// Layout: magic "RSIT", u32 version=1, u64 id length + UTF-8 id,
// u64 N + N*6 f32 (x,y,z,nx,ny,nz), u64 M + M*4 f32 (x,y,z,sdf).

inline void save_sampled_shape(const SampledShape& s, const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& os) {
    write_bytes(os, "RSIT", 4);
    write_u32le(os, 1);
    write_u64le(os, s.id.size());
    write_bytes(os, s.id.data(), s.id.size());
    write_u64le(os, std::uint64_t(s.surface_count()));
    for (Eigen::Index i = 0; i < s.surface_count(); ++i) {
      for (int k = 0; k < 3; ++k) write_f32le(os, float(s.surface_points(i, k)));
      for (int k = 0; k < 3; ++k) write_f32le(os, float(s.surface_normals(i, k)));
    }
    write_u64le(os, std::uint64_t(s.free_count()));
    for (Eigen::Index i = 0; i < s.free_count(); ++i) {
      for (int k = 0; k < 3; ++k) write_f32le(os, float(s.free_points(i, k)));
      write_f32le(os, float(s.free_sdf[i]));
    }
  });
}

inline SampledShape load_sampled_shape(const std::filesystem::path& path) {
  auto is = open_input(path);
  char magic[4];
  read_bytes(is, magic, 4, "magic");
  if (std::string(magic, 4) != "RSIT")
    throw Error(Error::Kind::Parse, "not a sampled-shape archive: " + path.string());
  const auto version = read_u32le(is, "version");
  if (version != 1)
    throw Error(Error::Kind::Parse, "unsupported archive version " + std::to_string(version));
  SampledShape s;
  const auto id_len = read_u64le(is, "id length");
  s.id.resize(id_len);
  if (id_len) read_bytes(is, s.id.data(), id_len, "id");
  const auto n = read_u64le(is, "surface count");
  s.surface_points.resize(Eigen::Index(n), 3);
  s.surface_normals.resize(Eigen::Index(n), 3);
  for (std::uint64_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) s.surface_points(Eigen::Index(i), k) = read_f32le(is, "surface");
    for (int k = 0; k < 3; ++k) s.surface_normals(Eigen::Index(i), k) = read_f32le(is, "normal");
  }
  const auto m = read_u64le(is, "free count");
  s.free_points.resize(Eigen::Index(m), 3);
  s.free_sdf.resize(Eigen::Index(m));
  for (std::uint64_t i = 0; i < m; ++i) {
    for (int k = 0; k < 3; ++k) s.free_points(Eigen::Index(i), k) = read_f32le(is, "free");
    s.free_sdf[Eigen::Index(i)] = read_f32le(is, "sdf");
  }
  return s;
}

}  // namespace istk::geom
