#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "istk/error.hpp"
#include "istk/geometry/voxel.hpp"
#include "istk/metrics/assignment.hpp"
#include "istk/metrics/kdtree.hpp"
#include "istk/rng.hpp"

namespace istk::met {

// Reporting convention: cd stores the /30000-normalized sum (display applies
// the x100 factor), emd both as the optimal sum and per-point mean.
struct MetricReport {
  double cd = 0.0;
  double emd = 0.0;
  double emd_mean = 0.0;
  double dsc = 0.0;
  double nsd = 0.0;
  double hd95 = 0.0;
  double assd = 0.0;
  int n_points = 0;
  double tau = 0.0;
  bool both_empty = false;
};

inline constexpr double kChamferNormalization = 30000.0;

// Sum of squared nearest-neighbor distances, both directions.
inline double chamfer_raw(const Eigen::MatrixX3d& s1, const Eigen::MatrixX3d& s2) {
  if (s1.rows() == 0 || s2.rows() == 0)
    throw Error(Error::Kind::Contract, "chamfer distance needs non-empty point sets");
  KdTree3 t1(s1), t2(s2);
  double acc = 0.0;
  for (int i = 0; i < s1.rows(); ++i) acc += t2.nearest(s1.row(i).transpose());
  for (int i = 0; i < s2.rows(); ++i) acc += t1.nearest(s2.row(i).transpose());
  return acc;
}

inline double chamfer(const Eigen::MatrixX3d& s1, const Eigen::MatrixX3d& s2) {
  return chamfer_raw(s1, s2) / kChamferNormalization;
}

// Minimum over bijections of the summed squared distances (exact assignment).
inline double emd_sum(const Eigen::MatrixX3d& s1, const Eigen::MatrixX3d& s2) {
  if (s1.rows() != s2.rows() || s1.rows() == 0)
    throw Error(Error::Kind::Contract, "emd needs equal-size non-empty point sets");
  const int n = int(s1.rows());
  Eigen::MatrixXd cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cost(i, j) = (s1.row(i) - s2.row(j)).squaredNorm();
  const auto match = solve_assignment(cost);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += cost(i, match[size_t(i)]);
  return acc;
}

// Seeded uniform subsample (without replacement when count <= rows).
inline Eigen::MatrixX3d resample_points(const Eigen::MatrixX3d& pts, int count, Rng& rng) {
  Eigen::MatrixX3d out(count, 3);
  if (std::uint64_t(count) <= std::uint64_t(pts.rows())) {
    const auto idx = rng.sample_without_replacement(std::uint64_t(pts.rows()), std::uint64_t(count));
    for (int i = 0; i < count; ++i) out.row(i) = pts.row(Eigen::Index(idx[size_t(i)]));
  } else {
    for (int i = 0; i < count; ++i) out.row(i) = pts.row(Eigen::Index(rng.uniform_int(std::uint64_t(pts.rows()))));
  }
  return out;
}

// --- voxel-space metrics --------------------------------------------------

inline void require_same_grid(const geom::VoxelGrid& a, const geom::VoxelGrid& b) {
  if (a.dims != b.dims)
    throw Error(Error::Kind::Contract, "voxel grids have mismatched dimensions");
  if ((a.spacing - b.spacing).cwiseAbs().maxCoeff() > 1e-9)
    throw Error(Error::Kind::Contract, "voxel grids have mismatched spacing");
}

// Dice similarity in percent; two empty grids count as a perfect match.
inline double dsc(const geom::VoxelGrid& a, const geom::VoxelGrid& b, bool* both_empty = nullptr) {
  require_same_grid(a, b);
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.voxel_count(); ++i) {
    na += a.occupancy[i];
    nb += b.occupancy[i];
    inter += (a.occupancy[i] & b.occupancy[i]);
  }
  if (both_empty) *both_empty = (na + nb == 0);
  if (na + nb == 0) return 100.0;
  return 100.0 * 2.0 * double(inter) / double(na + nb);
}

// Surface voxels: occupied with at least one six-connected unoccupied
// neighbor; the grid boundary counts as unoccupied.
inline Eigen::MatrixX3d surface_voxel_centers(const geom::VoxelGrid& g) {
  std::vector<Eigen::Vector3d> centers;
  const int nx = int(g.dims[0]), ny = int(g.dims[1]), nz = int(g.dims[2]);
  auto occ = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return false;
    return g.at(x, y, z);
  };
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!occ(x, y, z)) continue;
        if (!occ(x - 1, y, z) || !occ(x + 1, y, z) || !occ(x, y - 1, z) || !occ(x, y + 1, z) ||
            !occ(x, y, z - 1) || !occ(x, y, z + 1))
          centers.push_back(g.center(x, y, z));
      }
  Eigen::MatrixX3d out(Eigen::Index(centers.size()), 3);
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = centers[size_t(i)];
  return out;
}

// Directed surface distance multisets (A-surface -> B-surface and back),
// each sorted ascending.
inline void surface_distances(const geom::VoxelGrid& a, const geom::VoxelGrid& b,
                              std::vector<double>& d_ab, std::vector<double>& d_ba) {
  require_same_grid(a, b);
  const Eigen::MatrixX3d sa = surface_voxel_centers(a);
  const Eigen::MatrixX3d sb = surface_voxel_centers(b);
  d_ab.clear();
  d_ba.clear();
  if (sa.rows() == 0 && sb.rows() == 0) return;
  if (sa.rows() == 0 || sb.rows() == 0)
    throw Error(Error::Kind::Numeric, "surface distance against an empty grid");
  KdTree3 ta(sa), tb(sb);
  d_ab.reserve(size_t(sa.rows()));
  d_ba.reserve(size_t(sb.rows()));
  for (int i = 0; i < sa.rows(); ++i) d_ab.push_back(std::sqrt(tb.nearest(sa.row(i).transpose())));
  for (int i = 0; i < sb.rows(); ++i) d_ba.push_back(std::sqrt(ta.nearest(sb.row(i).transpose())));
  std::sort(d_ab.begin(), d_ab.end());
  std::sort(d_ba.begin(), d_ba.end());
}

// Linear-interpolation percentile of a sorted sample.
inline double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  if (sorted.size() == 1) return sorted[0];
  const double h = q * double(sorted.size() - 1);
  const std::size_t lo = std::size_t(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - double(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double nsd(const std::vector<double>& d_ab, const std::vector<double>& d_ba, double tau) {
  const std::size_t total = d_ab.size() + d_ba.size();
  if (total == 0) return 100.0;
  std::size_t within = 0;
  for (double d : d_ab) within += (d <= tau);
  for (double d : d_ba) within += (d <= tau);
  return 100.0 * double(within) / double(total);
}

inline double hd95(const std::vector<double>& d_ab, const std::vector<double>& d_ba) {
  return std::max(percentile(d_ab, 0.95), percentile(d_ba, 0.95));
}

inline double assd(const std::vector<double>& d_ab, const std::vector<double>& d_ba) {
  const std::size_t total = d_ab.size() + d_ba.size();
  if (total == 0) return 0.0;
  double acc = 0.0;
  for (double d : d_ab) acc += d;
  for (double d : d_ba) acc += d;
  return acc / double(total);
}

inline double nsd(const geom::VoxelGrid& a, const geom::VoxelGrid& b, double tau) {
  std::vector<double> d_ab, d_ba;
  surface_distances(a, b, d_ab, d_ba);
  return nsd(d_ab, d_ba, tau);
}

inline double hd95(const geom::VoxelGrid& a, const geom::VoxelGrid& b) {
  std::vector<double> d_ab, d_ba;
  surface_distances(a, b, d_ab, d_ba);
  return hd95(d_ab, d_ba);
}

inline double assd(const geom::VoxelGrid& a, const geom::VoxelGrid& b) {
  std::vector<double> d_ab, d_ba;
  surface_distances(a, b, d_ab, d_ba);
  return assd(d_ab, d_ba);
}

}  // namespace istk::met
