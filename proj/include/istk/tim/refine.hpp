#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <numeric>
#include <optional>
#include <variant>

#include <json.hpp>

#include "istk/error.hpp"
#include "istk/geometry/sampling.hpp"
#include "istk/geometry/voxel.hpp"
#include "istk/metrics/metrics.hpp"
#include "istk/tim/cpd.hpp"
#include "istk/train/embed.hpp"

namespace istk::tim {

// Initial reconstruction to refine: a mesh or a binary mask.
struct InitialResult {
  std::variant<geom::TriMesh, geom::VoxelGrid> data;
  std::string provenance;

  static InitialResult from_mesh(geom::TriMesh m, std::string provenance = "mesh") {
    if (m.empty()) throw Error(Error::Kind::Contract, "initial mesh is empty");
    return {std::move(m), std::move(provenance)};
  }
  static InitialResult from_voxels(geom::VoxelGrid g, std::string provenance = "voxels") {
    if (g.occupied_count() == 0) throw Error(Error::Kind::Contract, "initial mask is empty");
    return {std::move(g), std::move(provenance)};
  }
};

// Keep the ceil(K% * N) highest-confidence points; ties resolve to the
// lowest point index. Indices return in ascending order.
inline std::vector<Eigen::Index> select_top_k(const Eigen::VectorXd& confidence,
                                              double k_percent) {
  if (!(k_percent > 0.0) || k_percent > 100.0)
    throw Error(Error::Kind::Parameter, "K percent must lie in (0, 100]");
  const Eigen::Index n = confidence.size();
  if (n == 0) throw Error(Error::Kind::KTooSmall, "no points to filter");
  const Eigen::Index keep = Eigen::Index(std::ceil(k_percent / 100.0 * double(n)));
  std::vector<Eigen::Index> order(static_cast<size_t>(n), 0);
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return confidence[a] > confidence[b] || (confidence[a] == confidence[b] && a < b);
  });
  order.resize(size_t(keep));
  std::sort(order.begin(), order.end());
  return order;
}

struct RefineConfig {
  double k_percent = 25.0;
  CpdConfig cpd;
  int template_surface_count = 3000;
  int surface_count = 4096;
  int free_count = 4096;
  int template_mc_resolution = 64;
  train::EmbedConfig embed;
  std::uint64_t seed = 0;
};

struct RefineReport {
  int cpd_iterations = 0;
  double cpd_sigma2 = 0.0;
  bool cpd_converged = false;
  double k_percent = 0.0;
  Eigen::Index n_filtered = 0;
  double confidence_mean_kept = 0.0;
  double confidence_mean_dropped = 0.0;
  double embed_initial_sdf_loss = 0.0;
  double embed_final_sdf_loss = 0.0;
  std::optional<double> cd_before, cd_after;  // vs ground truth, raw/30000

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["cpd"] = {{"iters", cpd_iterations}, {"sigma2", cpd_sigma2}, {"converged", cpd_converged}};
    j["k_percent"] = k_percent;
    j["n_filtered"] = n_filtered;
    j["confidence_mean_kept"] = confidence_mean_kept;
    j["confidence_mean_dropped"] = confidence_mean_dropped;
    j["embed_initial_sdf_loss"] = embed_initial_sdf_loss;
    j["embed_final_sdf_loss"] = embed_final_sdf_loss;
    if (cd_before) j["cd_before"] = *cd_before;
    if (cd_after) j["cd_after"] = *cd_after;
    return j;
  }
};

namespace detail {

inline geom::TriMesh initial_mesh(const InitialResult& initial, int mc_resolution) {
  if (std::holds_alternative<geom::TriMesh>(initial.data))
    return std::get<geom::TriMesh>(initial.data);
  // mask -> mesh at the 0.5-occupancy level of the trilinearly interpolated field
  const auto& g = std::get<geom::VoxelGrid>(initial.data);
  auto field = [&g](const Eigen::Vector3d& p) {
    const Eigen::Vector3d u =
        (p - g.origin).cwiseQuotient(g.spacing) - Eigen::Vector3d::Constant(0.5);
    const int nx = int(g.dims[0]), ny = int(g.dims[1]), nz = int(g.dims[2]);
    auto occ = [&](int x, int y, int z) {
      if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return 0.0;
      return g.at(x, y, z) ? 1.0 : 0.0;
    };
    const int x0 = int(std::floor(u.x())), y0 = int(std::floor(u.y())), z0 = int(std::floor(u.z()));
    const double fx = u.x() - x0, fy = u.y() - y0, fz = u.z() - z0;
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          acc += occ(x0 + dx, y0 + dy, z0 + dz) * (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) *
                 (dz ? fz : 1 - fz);
    return 0.5 - acc;  // negative inside
  };
  geom::TriMesh mesh = geom::marching_cubes(field, 96, 0.0);
  (void)mc_resolution;
  if (mesh.empty()) throw Error(Error::Kind::Degenerate, "initial mask produced no surface");
  return mesh;
}

}  // namespace detail

// TIM refinement: score the initial surface against the learned template via
// CPD, keep the Top-K% points, and re-embed with the template frozen.
inline std::pair<geom::TriMesh, RefineReport> refine(const field::DeformTemplateModel& model,
                                                     const InitialResult& initial,
                                                     const RefineConfig& cfg,
                                                     const geom::TriMesh* ground_truth = nullptr) {
  RefineReport report;
  report.k_percent = cfg.k_percent;

  // (1) initial surface
  const geom::TriMesh init_mesh = detail::initial_mesh(initial, cfg.embed.mc_resolution);

  // (2) surface + free supervision from the initial result
  Rng rng_surface = Rng::stream(cfg.seed, "refine/surface");
  Eigen::MatrixX3d surface_pts, surface_nrm;
  geom::sample_mesh_surface(init_mesh, cfg.surface_count, rng_surface, surface_pts, &surface_nrm);

  geom::TriangleBvh bvh(init_mesh);
  Rng rng_free = Rng::stream(cfg.seed, "refine/free");
  Eigen::MatrixX3d free_pts(cfg.free_count, 3);
  Eigen::VectorXd free_sdf(cfg.free_count);
  for (int i = 0; i < cfg.free_count; ++i) {
    const Eigen::Vector3d p = rng_free.unit_ball();
    const double d = std::sqrt(bvh.closest(p));
    free_pts.row(i) = p;
    free_sdf[i] = geom::point_inside_parity(bvh, p) ? -d : d;
  }

  // (3) CPD against template surface samples
  geom::TriMesh template_mesh = train::extract_template(model, cfg.template_mc_resolution);
  if (template_mesh.empty())
    throw Error(Error::Kind::Degenerate, "model has no template iso-surface to interact with");
  Rng rng_tpl = Rng::stream(cfg.seed, "refine/template");
  Eigen::MatrixX3d template_pts;
  geom::sample_mesh_surface(template_mesh, cfg.template_surface_count, rng_tpl, template_pts);
  const CpdResult cpd = cpd_register(template_pts, surface_pts, cfg.cpd);
  report.cpd_iterations = cpd.iterations;
  report.cpd_sigma2 = cpd.sigma2;
  report.cpd_converged = cpd.converged;

  // (4) confidence filter
  const auto keep = select_top_k(cpd.confidence, cfg.k_percent);
  report.n_filtered = Eigen::Index(keep.size());
  if (keep.empty()) throw Error(Error::Kind::KTooSmall, "top-k filter kept no points");
  {
    double kept = 0.0, dropped = 0.0;
    std::vector<bool> is_kept(size_t(cpd.confidence.size()), false);
    for (auto i : keep) is_kept[size_t(i)] = true;
    Eigen::Index nd = cpd.confidence.size() - Eigen::Index(keep.size());
    for (Eigen::Index i = 0; i < cpd.confidence.size(); ++i)
      (is_kept[size_t(i)] ? kept : dropped) += cpd.confidence[i];
    report.confidence_mean_kept = kept / double(keep.size());
    report.confidence_mean_dropped = nd > 0 ? dropped / double(nd) : 0.0;
  }

  // (5) pseudo shape from the filtered surface + unfiltered free samples
  geom::SampledShape pseudo;
  pseudo.id = "refine";
  pseudo.surface_points.resize(Eigen::Index(keep.size()), 3);
  pseudo.surface_normals.resize(Eigen::Index(keep.size()), 3);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    pseudo.surface_points.row(Eigen::Index(i)) = surface_pts.row(keep[i]);
    pseudo.surface_normals.row(Eigen::Index(i)) = surface_nrm.row(keep[i]);
  }
  pseudo.free_points = free_pts;
  pseudo.free_sdf = free_sdf;

  // (6) frozen-template embedding
  train::EmbedConfig embed_cfg = cfg.embed;
  embed_cfg.seed = cfg.seed;
  const auto embedded = train::embed_shape(model, pseudo, embed_cfg);
  report.embed_initial_sdf_loss = embedded.initial_sdf_loss;
  report.embed_final_sdf_loss = embedded.final_sdf_loss;

  // (7) optional CD against ground truth
  if (ground_truth) {
    Rng rng_eval = Rng::stream(cfg.seed, "refine/eval");
    Eigen::MatrixX3d gt_s, init_s, ref_s;
    geom::sample_mesh_surface(*ground_truth, 30000, rng_eval, gt_s);
    geom::sample_mesh_surface(init_mesh, 30000, rng_eval, init_s);
    geom::sample_mesh_surface(embedded.reconstruction, 30000, rng_eval, ref_s);
    report.cd_before = met::chamfer(init_s, gt_s);
    report.cd_after = met::chamfer(ref_s, gt_s);
  }
  return {embedded.reconstruction, report};
}

}  // namespace istk::tim
