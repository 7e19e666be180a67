#pragma once

#include <Eigen/Core>
#include <vector>

#include "istk/error.hpp"
#include "istk/geometry/analytic.hpp"
#include "istk/geometry/bvh.hpp"
#include "istk/geometry/marching_cubes.hpp"
#include "istk/geometry/sampling.hpp"
#include "istk/geometry/trimesh.hpp"
#include "istk/geometry/voxel.hpp"
#include "istk/rng.hpp"

namespace istk::tim {

// Synthetic stand-ins for imperfect segmentations: a spherical bite removed
// from the shape, floating blob outliers, and optional staircase
// requantization of the boundary. Parameters are drawn from the seed and
// reported for reproducibility.
struct CorruptionParams {
  double bite_volume_fraction = 0.10;
  int blob_count = 3;
  double blob_volume_fraction = 0.05;
  bool staircase = false;
  int staircase_resolution = 48;
  int mc_resolution = 96;
  std::uint64_t seed = 0;
};

struct CorruptionReport {
  Eigen::Vector3d bite_center = Eigen::Vector3d::Zero();
  double bite_radius = 0.0;
  std::vector<Eigen::Vector3d> blob_centers;
  double blob_radius = 0.0;
  double measured_bite_fraction = 0.0;
};

namespace detail {

// signed distance of a watertight mesh via closest point + ray parity
struct MeshSdf {
  const geom::TriangleBvh& bvh;
  double operator()(const Eigen::Vector3d& p) const {
    const double d = std::sqrt(bvh.closest(p));
    return geom::point_inside_parity(bvh, p) ? -d : d;
  }
};

}  // namespace detail

inline std::pair<geom::TriMesh, CorruptionReport> corrupt_shape(const geom::TriMesh& mesh,
                                                                const CorruptionParams& params) {
  if (mesh.empty()) throw Error(Error::Kind::Contract, "cannot corrupt an empty mesh");
  geom::TriangleBvh bvh(mesh);
  detail::MeshSdf sdf{bvh};
  Rng rng = Rng::stream(params.seed, "corrupt");
  CorruptionReport report;

  // volume estimates by fixed Monte Carlo over the unit ball
  const int probes = 20000;
  std::vector<Eigen::Vector3d> probe_pts;
  probe_pts.reserve(size_t(probes));
  {
    Rng prng = Rng::stream(params.seed, "corrupt/probes");
    for (int i = 0; i < probes; ++i) probe_pts.push_back(prng.unit_ball());
  }
  std::vector<bool> inside(static_cast<size_t>(probes), false);
  int inside_count = 0;
  for (int i = 0; i < probes; ++i) {
    inside[size_t(i)] = sdf(probe_pts[size_t(i)]) < 0;
    inside_count += inside[size_t(i)];
  }
  if (inside_count == 0) throw Error(Error::Kind::Degenerate, "mesh has no measurable volume");

  // bite centered on a random surface point, radius bisected to the target
  // removed-volume fraction
  Eigen::MatrixX3d surf;
  geom::sample_mesh_surface(mesh, 64, rng, surf);
  report.bite_center = surf.row(int(rng.uniform_int(64))).transpose();
  if (params.bite_volume_fraction > 0.0) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 18; ++it) {
      const double r = 0.5 * (lo + hi);
      int removed = 0;
      for (int i = 0; i < probes; ++i)
        if (inside[size_t(i)] && (probe_pts[size_t(i)] - report.bite_center).norm() < r) ++removed;
      const double frac = double(removed) / double(inside_count);
      if (frac < params.bite_volume_fraction)
        lo = r;
      else
        hi = r;
    }
    report.bite_radius = 0.5 * (lo + hi);
    int removed = 0;
    for (int i = 0; i < probes; ++i)
      if (inside[size_t(i)] && (probe_pts[size_t(i)] - report.bite_center).norm() < report.bite_radius)
        ++removed;
    report.measured_bite_fraction = double(removed) / double(inside_count);
  }

  // blob outliers detached from the surface, sized to the requested volume
  if (params.blob_count > 0 && params.blob_volume_fraction > 0.0) {
    const double ball_volume = 4.0 / 3.0 * M_PI;
    const double shape_volume = ball_volume * double(inside_count) / double(probes);
    report.blob_radius = std::cbrt(params.blob_volume_fraction * shape_volume /
                                   (double(params.blob_count) * 4.0 / 3.0 * M_PI));
    Eigen::MatrixX3d blob_surf;
    geom::sample_mesh_surface(mesh, params.blob_count, rng, blob_surf);
    for (int i = 0; i < params.blob_count; ++i) {
      const Eigen::Vector3d p = blob_surf.row(i).transpose();
      Eigen::Vector3d dir = p.norm() > 1e-9 ? p.normalized() : Eigen::Vector3d(1, 0, 0);
      Eigen::Vector3d c = p + dir * (report.blob_radius + rng.uniform(0.05, 0.12));
      const double max_norm = 1.0 - report.blob_radius - 1e-3;
      if (c.norm() > max_norm) c *= max_norm / c.norm();
      report.blob_centers.push_back(c);
    }
  }

  auto corrupted_field = [&](const Eigen::Vector3d& p) {
    double v = sdf(p);
    if (report.bite_radius > 0.0)
      v = std::max(v, -((p - report.bite_center).norm() - report.bite_radius));
    for (const auto& c : report.blob_centers)
      v = std::min(v, (p - c).norm() - report.blob_radius);
    return v;
  };

  geom::TriMesh out;
  if (params.staircase) {
    // requantize through a coarse occupancy grid to add boundary steps
    const int rs = params.staircase_resolution;
    auto grid = geom::make_unit_grid(std::uint32_t(rs));
    for (std::uint32_t z = 0; z < grid.dims[2]; ++z)
      for (std::uint32_t y = 0; y < grid.dims[1]; ++y)
        for (std::uint32_t x = 0; x < grid.dims[0]; ++x)
          grid.occupancy[grid.index(int(x), int(y), int(z))] =
              corrupted_field(grid.center(int(x), int(y), int(z))) < 0 ? 1 : 0;
    auto occ_field = [&](const Eigen::Vector3d& p) {
      // nearest-voxel occupancy as a field; iso 0 between inside and outside
      const Eigen::Vector3d u = (p - grid.origin).cwiseQuotient(grid.spacing);
      const int x = std::clamp(int(std::floor(u.x())), 0, rs - 1);
      const int y = std::clamp(int(std::floor(u.y())), 0, rs - 1);
      const int z = std::clamp(int(std::floor(u.z())), 0, rs - 1);
      return grid.at(x, y, z) ? -1.0 : 1.0;
    };
    out = geom::marching_cubes(occ_field, params.mc_resolution, 0.0);
  } else {
    out = geom::marching_cubes(corrupted_field, params.mc_resolution, 0.0);
  }
  if (out.empty()) throw Error(Error::Kind::Degenerate, "corruption removed the whole shape");
  return {std::move(out), report};
}

}  // namespace istk::tim
