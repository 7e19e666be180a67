#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <vector>

#include "istk/error.hpp"
#include "istk/geometry/bvh.hpp"
#include "istk/geometry/trimesh.hpp"

namespace istk::geom {

// Orthographic virtual camera looking at the origin. The footprint is a
// square of half-extent `half_extent` in the camera plane, which covers the
// unit ball for half_extent >= 1.
struct VirtualCamera {
  Eigen::Vector3d position;
  Eigen::Vector3d forward, right, up;
  int width = 256, height = 256;
  double half_extent = 1.0;

  static VirtualCamera looking_at_origin(const Eigen::Vector3d& position, int res,
                                         double half_extent) {
    if (position.norm() < 1.5)
      throw Error(Error::Kind::Parameter, "camera must sit at radius >= 1.5");
    VirtualCamera cam;
    cam.position = position;
    cam.forward = (-position).normalized();
    const Eigen::Vector3d up0 =
        std::abs(cam.forward.z()) < 0.99 ? Eigen::Vector3d(0, 0, 1) : Eigen::Vector3d(1, 0, 0);
    cam.right = cam.forward.cross(up0).normalized();
    cam.up = cam.right.cross(cam.forward);
    cam.width = cam.height = res;
    cam.half_extent = half_extent;
    return cam;
  }

  // Center of pixel (ix, iy) in the camera plane through `position`.
  Eigen::Vector3d pixel_origin(int ix, int iy) const {
    const double u = ((ix + 0.5) / width * 2.0 - 1.0) * half_extent;
    const double v = ((iy + 0.5) / height * 2.0 - 1.0) * half_extent;
    return position + u * right + v * up;
  }

  // Projects a world point to (pixel ix, pixel iy, depth along forward).
  void project(const Eigen::Vector3d& p, int& ix, int& iy, double& depth) const {
    const Eigen::Vector3d d = p - position;
    const double u = d.dot(right) / half_extent;  // [-1,1] inside the footprint
    const double v = d.dot(up) / half_extent;
    depth = d.dot(forward);
    ix = std::min(width - 1, std::max(0, int(std::floor((u + 1.0) * 0.5 * width))));
    iy = std::min(height - 1, std::max(0, int(std::floor((v + 1.0) * 0.5 * height))));
  }
};

// Fibonacci-sphere rig of `count` orthographic cameras at the given radius.
inline std::vector<VirtualCamera> fibonacci_rig(int count, double radius = 2.0, int res = 256,
                                                double half_extent = 1.0) {
  if (count < 1) throw Error(Error::Kind::Parameter, "camera count must be >= 1");
  std::vector<VirtualCamera> cams;
  cams.reserve(size_t(count));
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double a = golden * i;
    const Eigen::Vector3d dir(r * std::cos(a), r * std::sin(a), z);
    cams.push_back(VirtualCamera::looking_at_origin(radius * dir, res, half_extent));
  }
  return cams;
}

struct DepthMap {
  Eigen::MatrixXd depth;    // height x width, +inf where the ray misses
  Eigen::MatrixXi triangle; // hit triangle index, -1 where the ray misses
};

// Per-pixel distance along the view ray to the nearest triangle.
inline std::vector<DepthMap> render_depths(const TriMesh& mesh,
                                           const std::vector<VirtualCamera>& cameras) {
  TriangleBvh bvh(mesh);
  std::vector<DepthMap> maps;
  maps.reserve(cameras.size());
  const double inf = std::numeric_limits<double>::infinity();
  for (const auto& cam : cameras) {
    DepthMap dm;
    dm.depth = Eigen::MatrixXd::Constant(cam.height, cam.width, inf);
    dm.triangle = Eigen::MatrixXi::Constant(cam.height, cam.width, -1);
    if (!bvh.empty()) {
      for (int iy = 0; iy < cam.height; ++iy) {
        for (int ix = 0; ix < cam.width; ++ix) {
          const auto hit = bvh.raycast(cam.pixel_origin(ix, iy), cam.forward);
          if (hit.valid()) {
            dm.depth(iy, ix) = hit.t;
            dm.triangle(iy, ix) = hit.triangle;
          }
        }
      }
    }
    maps.push_back(std::move(dm));
  }
  return maps;
}

}  // namespace istk::geom
