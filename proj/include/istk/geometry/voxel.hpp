#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "istk/binio.hpp"
#include "istk/error.hpp"
#include "istk/geometry/bvh.hpp"
#include "istk/geometry/trimesh.hpp"

namespace istk::geom {

// Binary occupancy grid. `origin` is the minimum corner of the grid; voxel
// (x,y,z) is centered at origin + spacing .* (x+0.5, y+0.5, z+0.5).
// Occupancy is stored x-fastest.
struct VoxelGrid {
  std::array<std::uint32_t, 3> dims{0, 0, 0};
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  std::vector<std::uint8_t> occupancy;  // 0/1 per voxel
  bool watertight_input = true;         // false: parity applied to an open mesh

  std::size_t voxel_count() const { return std::size_t(dims[0]) * dims[1] * dims[2]; }

  std::size_t index(int x, int y, int z) const {
    return std::size_t(x) + dims[0] * (std::size_t(y) + dims[1] * std::size_t(z));
  }

  bool at(int x, int y, int z) const { return occupancy[index(x, y, z)] != 0; }

  Eigen::Vector3d center(int x, int y, int z) const {
    return origin + spacing.cwiseProduct(Eigen::Vector3d(x + 0.5, y + 0.5, z + 0.5));
  }

  std::size_t occupied_count() const {
    std::size_t n = 0;
    for (auto v : occupancy) n += v;
    return n;
  }

  void validate() const {
    if ((spacing.array() <= 0.0).any())
      throw Error(Error::Kind::Parameter, "voxel spacing must be positive");
    if (occupancy.size() != voxel_count())
      throw Error(Error::Kind::Contract, "occupancy length does not match dims");
  }
};

inline VoxelGrid make_grid(std::array<std::uint32_t, 3> dims, const Eigen::Vector3d& spacing,
                           const Eigen::Vector3d& origin) {
  VoxelGrid g;
  g.dims = dims;
  g.spacing = spacing;
  g.origin = origin;
  g.occupancy.assign(g.voxel_count(), 0);
  g.validate();
  return g;
}

// Unit-cube convenience: n^3 voxels spanning [-1,1]^3.
inline VoxelGrid make_unit_grid(std::uint32_t n) {
  return make_grid({n, n, n}, Eigen::Vector3d::Constant(2.0 / n), Eigen::Vector3d(-1, -1, -1));
}

// A voxel is occupied iff its center is inside the mesh by +x ray-crossing
// parity. Ray origins are jittered by 1e-7 voxel units to dodge edge and
// vertex ties. Open meshes are flagged but still voxelized.
inline VoxelGrid voxelize(const TriMesh& mesh, std::array<std::uint32_t, 3> dims,
                          const Eigen::Vector3d& spacing, const Eigen::Vector3d& origin) {
  VoxelGrid grid = make_grid(dims, spacing, origin);
  grid.watertight_input = is_closed(mesh);
  if (mesh.triangles.empty()) {
    grid.watertight_input = false;
    return grid;
  }
  TriangleBvh bvh(mesh);
  Eigen::Vector3d lo = mesh.vertices[0];
  for (const auto& v : mesh.vertices) lo = lo.cwiseMin(v);
  const double x_start = lo.x() - spacing.x();

  std::vector<double> ts;
  const double jy = 1e-7 * spacing.y(), jz = 1e-7 * spacing.z();
  for (std::uint32_t z = 0; z < dims[2]; ++z) {
    for (std::uint32_t y = 0; y < dims[1]; ++y) {
      const Eigen::Vector3d row0 = grid.center(0, int(y), int(z));
      ts.clear();
      bvh.raycast_all(Eigen::Vector3d(x_start, row0.y() + jy, row0.z() + jz),
                      Eigen::Vector3d(1, 0, 0), ts);
      std::sort(ts.begin(), ts.end());
      std::size_t k = 0;
      for (std::uint32_t x = 0; x < dims[0]; ++x) {
        const double cx = row0.x() + spacing.x() * x - x_start;
        while (k < ts.size() && ts[k] < cx) ++k;
        grid.occupancy[grid.index(int(x), int(y), int(z))] = std::uint8_t(k % 2);
      }
    }
  }
  return grid;
}

// --- file format ----------------------------------------------------------
// "RSVG", u32 version=1, 3x u32 dims, 3x f32 spacing, 3x f32 origin, then
// ceil(XYZ/8) bytes of x-fastest occupancy bits, LSB first within each byte.

inline void save_voxel_grid(const VoxelGrid& g, const std::filesystem::path& path) {
  g.validate();
  atomic_write(path, [&](std::ostream& os) {
    write_bytes(os, "RSVG", 4);
    write_u32le(os, 1);
    for (int k = 0; k < 3; ++k) write_u32le(os, g.dims[size_t(k)]);
    for (int k = 0; k < 3; ++k) write_f32le(os, float(g.spacing[k]));
    for (int k = 0; k < 3; ++k) write_f32le(os, float(g.origin[k]));
    const std::size_t nbytes = (g.voxel_count() + 7) / 8;
    std::vector<std::uint8_t> packed(nbytes, 0);
    for (std::size_t i = 0; i < g.voxel_count(); ++i)
      if (g.occupancy[i]) packed[i / 8] |= std::uint8_t(1u << (i % 8));
    write_bytes(os, packed.data(), packed.size());
  });
}

inline VoxelGrid load_voxel_grid(const std::filesystem::path& path) {
  auto is = open_input(path);
  char magic[4];
  read_bytes(is, magic, 4, "magic");
  if (std::string(magic, 4) != "RSVG")
    throw Error(Error::Kind::Parse, "not a voxel grid file: " + path.string());
  const auto version = read_u32le(is, "version");
  if (version != 1)
    throw Error(Error::Kind::Parse, "unsupported voxel grid version " + std::to_string(version));
  VoxelGrid g;
  for (int k = 0; k < 3; ++k) g.dims[size_t(k)] = read_u32le(is, "dims");
  for (int k = 0; k < 3; ++k) g.spacing[k] = read_f32le(is, "spacing");
  for (int k = 0; k < 3; ++k) g.origin[k] = read_f32le(is, "origin");
  const std::size_t nbytes = (g.voxel_count() + 7) / 8;
  std::vector<std::uint8_t> packed(nbytes);
  read_bytes(is, packed.data(), nbytes, "occupancy");
  g.occupancy.assign(g.voxel_count(), 0);
  for (std::size_t i = 0; i < g.voxel_count(); ++i)
    g.occupancy[i] = (packed[i / 8] >> (i % 8)) & 1u;
  g.validate();
  return g;
}

}  // namespace istk::geom
