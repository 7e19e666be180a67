#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "istk/binio.hpp"
#include "istk/error.hpp"
#include "istk/geometry/trimesh.hpp"

namespace istk::geom {

// ASCII OBJ: v / vn / f records, 1-based indices, triangles only.
// Binary STL: 80-byte header, little-endian; vertices welded on load.

namespace detail {

inline double parse_double(const std::string& tok, int line, const char* what) {
  try {
    size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw Error(Error::Kind::Parse,
                "OBJ line " + std::to_string(line) + ": bad " + what + " value '" + tok + "'");
  }
}

// "i", "i/j", "i//k", "i/j/k" -> (vertex index, normal index or 0)
inline std::pair<int, int> parse_face_ref(const std::string& tok, int line) {
  int v = 0, n = 0;
  const size_t s1 = tok.find('/');
  const std::string vs = tok.substr(0, s1);
  std::string ns;
  if (s1 != std::string::npos) {
    const size_t s2 = tok.find('/', s1 + 1);
    if (s2 != std::string::npos) ns = tok.substr(s2 + 1);
  }
  auto to_int = [&](const std::string& t) {
    int out = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc() || p != t.data() + t.size())
      throw Error(Error::Kind::Parse,
                  "OBJ line " + std::to_string(line) + ": bad face index '" + tok + "'");
    return out;
  };
  v = to_int(vs);
  if (!ns.empty()) n = to_int(ns);
  if (v <= 0 || n < 0)
    throw Error(Error::Kind::Parse,
                "OBJ line " + std::to_string(line) + ": indices must be positive 1-based");
  return {v, n};
}

}  // namespace detail

inline TriMesh load_obj(std::istream& is) {
  TriMesh m;
  std::vector<Vec3> vn;
  std::vector<int> vertex_normal_ref;  // per-vertex normal index (0 = none)
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      std::string xs, ys, zs;
      if (!(ss >> xs >> ys >> zs))
        throw Error(Error::Kind::Parse, "OBJ line " + std::to_string(lineno) + ": short v record");
      m.vertices.emplace_back(detail::parse_double(xs, lineno, "vertex"),
                              detail::parse_double(ys, lineno, "vertex"),
                              detail::parse_double(zs, lineno, "vertex"));
      vertex_normal_ref.push_back(0);
    } else if (tag == "vn") {
      std::string xs, ys, zs;
      if (!(ss >> xs >> ys >> zs))
        throw Error(Error::Kind::Parse, "OBJ line " + std::to_string(lineno) + ": short vn record");
      vn.emplace_back(detail::parse_double(xs, lineno, "normal"),
                      detail::parse_double(ys, lineno, "normal"),
                      detail::parse_double(zs, lineno, "normal"));
    } else if (tag == "f") {
      std::vector<std::pair<int, int>> refs;
      std::string tok;
      while (ss >> tok) refs.push_back(detail::parse_face_ref(tok, lineno));
      if (refs.size() != 3)
        throw Error(Error::Kind::UnsupportedTopology,
                    "OBJ line " + std::to_string(lineno) + ": face with " +
                        std::to_string(refs.size()) + " vertices (triangles only)");
      std::array<int, 3> tri{};
      for (int k = 0; k < 3; ++k) {
        const auto [v, n] = refs[size_t(k)];
        if (v > int(m.vertices.size()))
          throw Error(Error::Kind::Parse,
                      "OBJ line " + std::to_string(lineno) + ": vertex index out of range");
        tri[size_t(k)] = v - 1;
        if (n > 0) {
          if (n > int(vn.size()))
            throw Error(Error::Kind::Parse,
                        "OBJ line " + std::to_string(lineno) + ": normal index out of range");
          vertex_normal_ref[size_t(v - 1)] = n;
        }
      }
      m.triangles.push_back(tri);
    }
    // other records (o, g, s, usemtl, vt, ...) ignored
  }
  bool any_normal = false;
  for (int r : vertex_normal_ref) any_normal |= (r != 0);
  if (any_normal) {
    m.normals.assign(m.vertices.size(), Vec3(0, 0, 1));
    for (size_t i = 0; i < m.vertices.size(); ++i)
      if (vertex_normal_ref[i] > 0) m.normals[i] = vn[size_t(vertex_normal_ref[i] - 1)];
  }
  validate_indices(m);
  return m;
}

inline void save_obj(std::ostream& os, const TriMesh& m) {
  char buf[128];
  for (const auto& v : m.vertices) {
    std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    os << buf;
  }
  for (const auto& n : m.normals) {
    std::snprintf(buf, sizeof buf, "vn %.9g %.9g %.9g\n", n.x(), n.y(), n.z());
    os << buf;
  }
  const bool with_n = m.has_normals();
  for (const auto& t : m.triangles) {
    if (with_n)
      std::snprintf(buf, sizeof buf, "f %d//%d %d//%d %d//%d\n", t[0] + 1, t[0] + 1, t[1] + 1,
                    t[1] + 1, t[2] + 1, t[2] + 1);
    else
      std::snprintf(buf, sizeof buf, "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
    os << buf;
  }
}

inline TriMesh load_stl(std::istream& is) {
  char header[80];
  read_bytes(is, header, 80, "STL header");
  const std::uint32_t nt = read_u32le(is, "STL triangle count");
  TriMesh m;
  std::map<std::array<float, 3>, int> weld;
  auto add_vertex = [&](const std::array<float, 3>& p) {
    auto it = weld.find(p);
    if (it != weld.end()) return it->second;
    m.vertices.emplace_back(p[0], p[1], p[2]);
    const int idx = int(m.vertices.size()) - 1;
    weld[p] = idx;
    return idx;
  };
  for (std::uint32_t t = 0; t < nt; ++t) {
    float n[3], v[3][3];
    for (float& c : n) c = read_f32le(is, "STL normal");
    for (auto& vert : v)
      for (float& c : vert) c = read_f32le(is, "STL vertex");
    read_u16le(is, "STL attribute");
    std::array<int, 3> tri{};
    for (int k = 0; k < 3; ++k) tri[size_t(k)] = add_vertex({v[k][0], v[k][1], v[k][2]});
    m.triangles.push_back(tri);
  }
  return m;
}

inline void save_stl(std::ostream& os, const TriMesh& m) {
  char header[80] = "binary stl";
  write_bytes(os, header, 80);
  write_u32le(os, std::uint32_t(m.triangles.size()));
  for (int t = 0; t < int(m.triangles.size()); ++t) {
    const Vec3 n = face_normal(m, t);
    write_f32le(os, float(n.x()));
    write_f32le(os, float(n.y()));
    write_f32le(os, float(n.z()));
    for (int k = 0; k < 3; ++k) {
      const Vec3& v = m.vertices[size_t(m.triangles[size_t(t)][size_t(k)])];
      write_f32le(os, float(v.x()));
      write_f32le(os, float(v.y()));
      write_f32le(os, float(v.z()));
    }
    write_u16le(os, 0);
  }
}

inline TriMesh load_mesh(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw Error(Error::Kind::Io, "mesh file not found: " + path.string());
  const std::string ext = path.extension().string();
  auto is = open_input(path);
  if (ext == ".obj") return load_obj(is);
  if (ext == ".stl") return load_stl(is);
  throw Error(Error::Kind::Io, "unsupported mesh format: " + path.string());
}

inline void save_mesh(const TriMesh& m, const std::filesystem::path& path) {
  validate_indices(m);
  const std::string ext = path.extension().string();
  if (ext == ".obj")
    atomic_write(path, [&](std::ostream& os) { save_obj(os, m); }, /*binary=*/false);
  else if (ext == ".stl")
    atomic_write(path, [&](std::ostream& os) { save_stl(os, m); });
  else
    throw Error(Error::Kind::Io, "unsupported mesh format: " + path.string());
}

}  // namespace istk::geom
