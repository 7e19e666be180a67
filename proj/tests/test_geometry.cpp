#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "istk/geometry/analytic.hpp"
#include "istk/geometry/mesh_io.hpp"
#include "istk/geometry/trimesh.hpp"

using namespace istk;
using namespace istk::geom;
namespace fs = std::filesystem;

static fs::path temp_dir() {
  auto d = fs::temp_directory_path() / "istk_test_geometry";
  fs::create_directories(d);
  return d;
}

TEST_CASE("obj load: unit tetrahedron") {
  std::istringstream ss(
      "# tetra\n"
      "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"
      "f 1 2 3\nf 1 2 4\nf 1 3 4\nf 2 3 4\n");
  TriMesh m = load_obj(ss);
  REQUIRE(m.vertices.size() == 4);
  REQUIRE(m.triangles.size() == 4);
}

TEST_CASE("obj round trip preserves vertices") {
  TriMesh m = make_octasphere(0.7312345678, 3, Vec3(0.1, -0.2, 0.05));
  const auto path = temp_dir() / "sphere.obj";
  save_mesh(m, path);
  TriMesh back = load_mesh(path);
  REQUIRE(back.vertices.size() == m.vertices.size());
  REQUIRE(back.triangles == m.triangles);
  double max_rel = 0.0;
  for (size_t i = 0; i < m.vertices.size(); ++i) {
    const double err = (back.vertices[i] - m.vertices[i]).norm();
    max_rel = std::max(max_rel, err / std::max(1.0, m.vertices[i].norm()));
  }
  REQUIRE(max_rel <= 1e-6);
}

TEST_CASE("stl round trip preserves vertices") {
  TriMesh m = make_box(Vec3(0.3, 0.2, 0.45));
  const auto path = temp_dir() / "box.stl";
  save_mesh(m, path);
  TriMesh back = load_mesh(path);
  REQUIRE(back.triangles.size() == m.triangles.size());
  // vertices welded back; compare per-triangle corner positions
  for (size_t t = 0; t < m.triangles.size(); ++t) {
    for (int k = 0; k < 3; ++k) {
      const Vec3 a = m.vertices[size_t(m.triangles[t][size_t(k)])];
      const Vec3 b = back.vertices[size_t(back.triangles[t][size_t(k)])];
      REQUIRE((a - b).norm() <= 1e-6 * std::max(1.0, a.norm()));
    }
  }
}

TEST_CASE("obj quad face is an unsupported-topology error") {
  std::istringstream ss("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  try {
    load_obj(ss);
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == Error::Kind::UnsupportedTopology);
  }
}

TEST_CASE("obj malformed record carries the line number") {
  std::istringstream ss("v 0 0 0\nv nope 0 0\n");
  try {
    load_obj(ss);
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == Error::Kind::Parse);
    REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("load_mesh on a missing path is an io error") {
  try {
    load_mesh(temp_dir() / "does_not_exist.obj");
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == Error::Kind::Io);
  }
}

TEST_CASE("normalize: sphere of radius 5 at (10,0,0)") {
  TriMesh m = make_octasphere(5.0, 3, Vec3(10, 0, 0));
  auto [n, tf] = normalize_to_unit_sphere(m);
  REQUIRE(tf.scale == Catch::Approx(5.0 * 1.03).epsilon(1e-12));
  REQUIRE((tf.translation - Vec3(10, 0, 0)).norm() <= 1e-12);
  double rmax = 0.0;
  for (const auto& v : n.vertices) rmax = std::max(rmax, v.norm());
  REQUIRE(rmax == Catch::Approx(1.0 / 1.03).epsilon(1e-12));
}

TEST_CASE("normalize: already-normalized mesh maps to near identity") {
  TriMesh m = make_octasphere(1.0 / 1.03, 3);
  auto [n, tf] = normalize_to_unit_sphere(m);
  (void)n;
  REQUIRE(std::abs(tf.scale - 1.0) <= 1e-9);
  REQUIRE(tf.translation.norm() <= 1e-9);
}

TEST_CASE("normalize: degenerate mesh rejected") {
  TriMesh m;
  m.vertices = {Vec3(1, 1, 1), Vec3(1, 1, 1), Vec3(1, 1, 1)};
  m.triangles = {{0, 1, 2}};
  try {
    normalize_to_unit_sphere(m);
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == Error::Kind::Degenerate);
  }
}

TEST_CASE("normalize then denormalize is the identity") {
  Rng rng(7);
  TriMesh m = make_ellipsoid(Vec3(2.0, 1.0, 3.5), 2, Vec3(4, -2, 9));
  auto [n, tf] = normalize_to_unit_sphere(m);
  TriMesh back = apply_transform(n, tf);
  for (size_t i = 0; i < m.vertices.size(); ++i)
    REQUIRE((back.vertices[i] - m.vertices[i]).norm() <= 1e-9 * std::max(1.0, m.vertices[i].norm()));
}

TEST_CASE("analytic sdf examples") {
  auto sphere = analytic_sphere(Vec3::Zero(), 1.0 / 1.03);
  REQUIRE(sphere(Vec3(0, 0, 0)) == Catch::Approx(-1.0 / 1.03).epsilon(1e-12));
  const Vec3 on(1.0 / 1.03, 0, 0);
  REQUIRE(std::abs(sphere(on)) <= 1e-15);

  auto box = analytic_box(Vec3::Zero(), Vec3(0.3, 0.3, 0.3));
  REQUIRE(box(Vec3(0.5, 0, 0)) == Catch::Approx(0.2).epsilon(1e-12));
  REQUIRE(box(Vec3(0, 0, 0)) == Catch::Approx(-0.3).epsilon(1e-12));

  REQUIRE_THROWS_AS(analytic_sphere(Vec3::Zero(), -1.0), Error);
  REQUIRE_THROWS_AS(analytic_ellipsoid(Vec3::Zero(), Vec3(0.1, -0.2, 0.3)), Error);
}

TEST_CASE("ellipsoid sdf: zero on surface, sign exact") {
  auto ell = analytic_ellipsoid(Vec3::Zero(), Vec3(0.5, 0.3, 0.4));
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Vec3 u = rng.unit_ball().normalized();
    const Vec3 on = u.cwiseProduct(Vec3(0.5, 0.3, 0.4));
    REQUIRE(std::abs(ell(on)) <= 1e-12);
    REQUIRE(ell(1.2 * on) > 0.0);
    REQUIRE(ell(0.8 * on) < 0.0);
  }
}

TEST_CASE("octasphere: watertight, on-sphere, genus zero") {
  TriMesh m = make_octasphere(0.45, 4);
  REQUIRE(is_closed(m));
  REQUIRE(euler_characteristic(m) == 2);
  for (const auto& v : m.vertices) REQUIRE(v.norm() == Catch::Approx(0.45).epsilon(1e-12));
  REQUIRE(signed_volume(m) > 0.0);
  REQUIRE(signed_volume(m) <= 4.0 / 3.0 * M_PI * std::pow(0.45, 3));
}

TEST_CASE("box mesh: closed with outward normals") {
  TriMesh m = make_box(Vec3(0.3, 0.2, 0.1));
  REQUIRE(is_closed(m));
  REQUIRE(euler_characteristic(m) == 2);
  REQUIRE(signed_volume(m) == Catch::Approx(8 * 0.3 * 0.2 * 0.1).epsilon(1e-12));
  for (int t = 0; t < 12; ++t) {
    const Vec3 n = face_normal(m, t);
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < 3; ++k) c += m.vertices[size_t(m.triangles[size_t(t)][size_t(k)])];
    REQUIRE(n.dot(c / 3.0) > 0.0);
  }
}

TEST_CASE("area-weighted surface sampling stays on the analytic surface") {
  TriMesh m = make_octasphere(0.5, 5);
  Rng rng(11);
  Eigen::MatrixX3d pts, nrm;
  sample_mesh_surface(m, 500, rng, pts, &nrm);
  auto sphere = analytic_sphere(Vec3::Zero(), 0.5);
  for (int i = 0; i < pts.rows(); ++i) {
    REQUIRE(std::abs(sphere(pts.row(i).transpose())) <= 1e-3);
    const Vec3 n = nrm.row(i).transpose();
    const Vec3 radial = pts.row(i).transpose().normalized();
    REQUIRE(n.dot(radial) > 0.99);
  }
}
