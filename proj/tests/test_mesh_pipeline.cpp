#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "istk/geometry/analytic.hpp"
#include "istk/geometry/camera.hpp"
#include "istk/geometry/marching_cubes.hpp"
#include "istk/geometry/sampling.hpp"
#include "istk/geometry/voxel.hpp"

using namespace istk;
using namespace istk::geom;

static const double kR = 1.0 / 1.03;  // normalized max radius

TEST_CASE("depth render: sphere seen from +z at distance 2") {
  TriMesh m = make_octasphere(kR, 5);
  // odd resolution puts one pixel center exactly on the view axis
  auto cam = VirtualCamera::looking_at_origin(Eigen::Vector3d(0, 0, 2), 65, 1.0);
  auto maps = render_depths(m, {cam});
  const auto& d = maps[0].depth;
  const double center = d(32, 32);
  REQUIRE(std::isfinite(center));
  REQUIRE(center == Catch::Approx(2.0 - kR).margin(1e-3));  // tessellation chord error
  REQUIRE(std::isinf(d(0, 0)));
  REQUIRE(std::isinf(d(64, 64)));
}

TEST_CASE("depth render: mesh behind the camera gives all-infinite map") {
  TriMesh m = make_octasphere(0.3, 3, Vec3(0, 0, 5));  // beyond the camera plane's far side
  auto cam = VirtualCamera::looking_at_origin(Eigen::Vector3d(0, 0, -2), 32, 1.0);
  // camera at -z looks toward +z; move the mesh behind it instead
  TriMesh behind = make_octasphere(0.3, 3, Vec3(0, 0, -5));
  auto maps = render_depths(behind, {cam});
  REQUIRE(!maps[0].depth.array().isFinite().any());
  (void)m;
}

TEST_CASE("depth render: antipodal cameras see a symmetric shape mirrored") {
  TriMesh m = make_octasphere(kR, 4);
  auto cam_a = VirtualCamera::looking_at_origin(Eigen::Vector3d(0, 0, 2), 32, 1.0);
  auto cam_b = VirtualCamera::looking_at_origin(Eigen::Vector3d(0, 0, -2), 32, 1.0);
  auto maps = render_depths(m, {cam_a, cam_b});
  const auto& da = maps[0].depth;
  const auto& db = maps[1].depth;
  // the mesh is exactly symmetric under p -> -p, so depths agree on mirrored pixels
  double max_diff = 0.0;
  for (int iy = 0; iy < 32; ++iy) {
    for (int ix = 0; ix < 32; ++ix) {
      int jx, jy;
      double du, dv, w;
      // find cam_b pixel of the mirrored pixel center seen by cam_a
      const Eigen::Vector3d pa = cam_a.pixel_origin(ix, iy) - Eigen::Vector3d(0, 0, 2);
      cam_b.project(Eigen::Vector3d(0, 0, -2) + (-pa), jx, jy, w);
      du = da(iy, ix);
      dv = db(jy, jx);
      if (std::isinf(du) || std::isinf(dv)) {
        REQUIRE(std::isinf(du) == std::isinf(dv));
      } else {
        max_diff = std::max(max_diff, std::abs(du - dv));
      }
    }
  }
  REQUIRE(max_diff <= 1e-9);
}

TEST_CASE("surface sampling: sphere points at radius with outward normals") {
  TriMesh m = make_octasphere(kR, 5);
  auto cams = fibonacci_rig(20, 2.0, 64);
  auto maps = render_depths(m, cams);
  Rng rng(5);
  Eigen::MatrixX3d pts, nrm;
  sample_surface(m, cams, maps, 1000, rng, pts, nrm);
  REQUIRE(pts.rows() == 1000);
  TriangleBvh bvh(m);
  for (int i = 0; i < 1000; ++i) {
    // exactly on the mesh; within chord error of the true sphere
    REQUIRE(std::sqrt(bvh.closest(pts.row(i).transpose())) <= 1e-6);
    REQUIRE(pts.row(i).norm() == Catch::Approx(kR).margin(2e-3));
    REQUIRE(nrm.row(i).dot(pts.row(i).normalized()) > 0.999);
    REQUIRE(nrm.row(i).norm() == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("surface sampling: cube normals are axis aligned") {
  TriMesh m = make_box(Vec3(0.4, 0.4, 0.4));
  auto cams = fibonacci_rig(20, 2.0, 64);
  auto maps = render_depths(m, cams);
  Rng rng(6);
  Eigen::MatrixX3d pts, nrm;
  sample_surface(m, cams, maps, 500, rng, pts, nrm);
  for (int i = 0; i < nrm.rows(); ++i) {
    const Eigen::Vector3d n = nrm.row(i).transpose().cwiseAbs();
    REQUIRE(n.maxCoeff() == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(n.sum() == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("surface sampling: empty depth maps raise empty-surface") {
  TriMesh m = make_octasphere(0.3, 2, Vec3(0, 0, -5));
  auto cam = VirtualCamera::looking_at_origin(Eigen::Vector3d(0, 0, -2), 16, 1.0);
  auto maps = render_depths(m, {cam});
  Rng rng(1);
  Eigen::MatrixX3d pts, nrm;
  REQUIRE_THROWS_AS(sample_surface(m, {cam}, maps, 10, rng, pts, nrm), Error);
}

TEST_CASE("free-space sampling: sphere signs and magnitudes") {
  TriMesh m = make_octasphere(kR, 5);
  auto cams = fibonacci_rig(30, 2.0, 128);
  auto maps = render_depths(m, cams);
  Rng rng(9);
  Eigen::MatrixX3d pts;
  Eigen::VectorXd sdf;
  sample_free_space(m, cams, maps, 2000, rng, pts, sdf);
  auto sphere = analytic_sphere(Vec3::Zero(), kR);
  int sign_ok = 0;
  for (int i = 0; i < pts.rows(); ++i) {
    const double analytic = sphere(pts.row(i).transpose());
    REQUIRE(std::abs(std::abs(sdf[i]) - std::abs(analytic)) <= 2e-3);
    if (sdf[i] * analytic > 0 || std::abs(analytic) < 1e-3) ++sign_ok;
  }
  REQUIRE(double(sign_ok) / double(pts.rows()) >= 0.995);
}

TEST_CASE("free-space sign rule agrees with ray parity on a two-lobe shape") {
  auto field = analytic_two_lobe(Vec3(-0.25, 0, 0), Vec3(0.45, 0.3, 0.3), Vec3(0.3, 0.05, 0),
                                 Vec3(0.35, 0.28, 0.3), 0.15);
  TriMesh m = marching_cubes(field, 64, 0.0);
  REQUIRE(is_closed(m));
  auto cams = fibonacci_rig(60, 2.0, 128);
  auto maps = render_depths(m, cams);
  Rng rng(12);
  Eigen::MatrixX3d pts;
  Eigen::VectorXd sdf;
  sample_free_space(m, cams, maps, 2000, rng, pts, sdf);
  TriangleBvh bvh(m);
  int agree = 0;
  for (int i = 0; i < pts.rows(); ++i) {
    const bool inside = point_inside_parity(bvh, pts.row(i).transpose());
    if (inside == (sdf[i] < 0)) ++agree;
  }
  REQUIRE(double(agree) / double(pts.rows()) >= 0.995);
}

TEST_CASE("marching cubes: sphere vertices near the analytic radius") {
  auto sphere = analytic_sphere(Vec3::Zero(), 0.5);
  TriMesh m = marching_cubes(sphere, 64, 0.0);
  REQUIRE(!m.empty());
  for (const auto& v : m.vertices) REQUIRE(std::abs(v.norm() - 0.5) <= 2.0 / 64);
  REQUIRE(is_closed(m));
  REQUIRE(signed_volume(m) > 0.0);
}

TEST_CASE("marching cubes: constant field yields an empty mesh") {
  TriMesh m = marching_cubes([](const Eigen::Vector3d&) { return 1.0; }, 16, 0.0);
  REQUIRE(m.empty());
}

TEST_CASE("marching cubes: box volume within 5% at R=96") {
  auto box = analytic_box(Vec3::Zero(), Vec3(0.35, 0.25, 0.3));
  TriMesh m = marching_cubes(box, 96, 0.0);
  const double truth = 8 * 0.35 * 0.25 * 0.3;
  REQUIRE(signed_volume(m) == Catch::Approx(truth).epsilon(0.05));
}

TEST_CASE("marching cubes: non-finite field names the grid node") {
  auto bad = [](const Eigen::Vector3d& p) {
    return p.x() > 0.5 ? std::numeric_limits<double>::quiet_NaN() : 1.0;
  };
  try {
    marching_cubes(bad, 16, 0.0);
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == Error::Kind::Numeric);
    REQUIRE(std::string(e.what()).find("grid node") != std::string::npos);
  }
}

TEST_CASE("voxelize: sphere occupancy matches its volume within 3%") {
  TriMesh m = make_octasphere(0.5, 5);
  VoxelGrid g = voxelize(m, {64, 64, 64}, Vec3::Constant(2.0 / 64), Vec3(-1, -1, -1));
  REQUIRE(g.watertight_input);
  const double vol = double(g.occupied_count()) * std::pow(2.0 / 64, 3);
  REQUIRE(vol == Catch::Approx(4.0 / 3.0 * M_PI * std::pow(0.5, 3)).epsilon(0.03));
}

TEST_CASE("voxelize: empty mesh gives empty grid") {
  TriMesh m;
  VoxelGrid g = voxelize(m, {8, 8, 8}, Vec3::Constant(0.25), Vec3(-1, -1, -1));
  REQUIRE(g.occupied_count() == 0);
  REQUIRE(!g.watertight_input);
}

TEST_CASE("voxelize: open mesh is flagged") {
  TriMesh m = make_box(Vec3(0.4, 0.4, 0.4));
  m.triangles.pop_back();
  VoxelGrid g = voxelize(m, {16, 16, 16}, Vec3::Constant(0.125), Vec3(-1, -1, -1));
  REQUIRE(!g.watertight_input);
}

TEST_CASE("voxelize(marching_cubes(sphere sdf)) matches voxelize(sphere mesh)") {
  auto sphere = analytic_sphere(Vec3::Zero(), 0.5);
  TriMesh mc = marching_cubes(sphere, 64, 0.0);
  TriMesh tess = make_octasphere(0.5, 5);
  VoxelGrid a = voxelize(mc, {64, 64, 64}, Vec3::Constant(2.0 / 64), Vec3(-1, -1, -1));
  VoxelGrid b = voxelize(tess, {64, 64, 64}, Vec3::Constant(2.0 / 64), Vec3(-1, -1, -1));
  std::size_t inter = 0;
  for (std::size_t i = 0; i < a.voxel_count(); ++i) inter += (a.occupancy[i] & b.occupancy[i]);
  const double dsc = 2.0 * double(inter) / double(a.occupied_count() + b.occupied_count());
  REQUIRE(dsc >= 0.97);
}

TEST_CASE("sampled shape archive round trip is exact") {
  SampledShape s;
  s.id = "shape_007";
  Rng rng(4);
  s.surface_points.resize(64, 3);
  s.surface_normals.resize(64, 3);
  s.free_points.resize(32, 3);
  s.free_sdf.resize(32);
  for (int i = 0; i < 64; ++i) {
    s.surface_points.row(i) = rng.unit_ball();
    s.surface_normals.row(i) = rng.unit_ball().normalized();
  }
  for (int i = 0; i < 32; ++i) {
    s.free_points.row(i) = rng.unit_ball();
    s.free_sdf[i] = float(rng.uniform(-1, 1));
  }
  // f32 storage: make the in-memory values exactly representable first
  s.surface_points = s.surface_points.cast<float>().cast<double>();
  s.surface_normals = s.surface_normals.cast<float>().cast<double>();
  s.free_points = s.free_points.cast<float>().cast<double>();

  auto path = std::filesystem::temp_directory_path() / "istk_test_shape.rsit";
  save_sampled_shape(s, path);
  SampledShape back = load_sampled_shape(path);
  REQUIRE(back.id == s.id);
  REQUIRE(back.surface_points == s.surface_points);
  REQUIRE(back.surface_normals == s.surface_normals);
  REQUIRE(back.free_points == s.free_points);
  REQUIRE(back.free_sdf == s.free_sdf);
}

TEST_CASE("voxel grid file round trip is exact and bit-packed") {
  VoxelGrid g = make_unit_grid(8);
  Rng rng(2);
  for (auto& v : g.occupancy) v = std::uint8_t(rng.uniform01() < 0.3);
  auto path = std::filesystem::temp_directory_path() / "istk_test_grid.rsvg";
  save_voxel_grid(g, path);
  // header: 4 magic + 4 version + 12 dims + 12 spacing + 12 origin + 512/8 bits
  REQUIRE(std::filesystem::file_size(path) == 4 + 4 + 12 + 12 + 12 + 64);
  VoxelGrid back = load_voxel_grid(path);
  REQUIRE(back.dims == g.dims);
  REQUIRE(back.occupancy == g.occupancy);
  REQUIRE((back.spacing - g.spacing).norm() <= 1e-7);
}
