#pragma once

#include "cranio/mesh/trimesh.hpp"

#include <cmath>
#include <numbers>
#include <unordered_map>

namespace cranio::mesh {

/// Subdivided icosahedron projected onto a sphere. Level 0 has 12 vertices,
/// each level quadruples the triangle count (level 3: 642 vertices, 1280
/// triangles). The vertex set is mirror-symmetric in x, y and z.
inline TriMesh icosphere(int subdivisions, double radius = 1.0) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {
      {-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0}, {0, -1, phi}, {0, 1, phi},
      {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1},  {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1},
  };
  for (auto& p : v) p.normalize();
  std::vector<Triangle> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1},
  };
  for (int s = 0; s < subdivisions; ++s) {
    std::unordered_map<std::uint64_t, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto k = edge_key(a, b);
      if (auto it = mid.find(k); it != mid.end()) return it->second;
      const int idx = static_cast<int>(v.size());
      v.push_back((v[a] + v[b]).normalized());
      mid.emplace(k, idx);
      return idx;
    };
    std::vector<Triangle> next;
    next.reserve(f.size() * 4);
    for (const auto& t : f) {
      const int a = midpoint(t[0], t[1]);
      const int b = midpoint(t[1], t[2]);
      const int c = midpoint(t[2], t[0]);
      next.push_back({t[0], a, c});
      next.push_back({t[1], b, a});
      next.push_back({t[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  for (auto& p : v) p *= radius;
  return TriMesh(std::move(v), std::move(f));
}

/// Latitude/longitude sphere; used as a differently tessellated target in
/// registration tests.
inline TriMesh uv_sphere(int rings, int segments, double radius = 1.0) {
  std::vector<Vec3> v;
  std::vector<Triangle> f;
  v.emplace_back(0, 0, radius);
  for (int r = 1; r < rings; ++r) {
    const double th = std::numbers::pi * r / rings;
    for (int s = 0; s < segments; ++s) {
      const double ph = 2.0 * std::numbers::pi * s / segments;
      v.emplace_back(radius * std::sin(th) * std::cos(ph), radius * std::sin(th) * std::sin(ph),
                     radius * std::cos(th));
    }
  }
  v.emplace_back(0, 0, -radius);
  const int south = static_cast<int>(v.size()) - 1;
  auto ring = [&](int r, int s) { return 1 + (r - 1) * segments + (s % segments); };
  for (int s = 0; s < segments; ++s) f.push_back({0, ring(1, s), ring(1, s + 1)});
  for (int r = 1; r < rings - 1; ++r)
    for (int s = 0; s < segments; ++s) {
      f.push_back({ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)});
      f.push_back({ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)});
    }
  for (int s = 0; s < segments; ++s) f.push_back({south, ring(rings - 1, s + 1), ring(rings - 1, s)});
  return TriMesh(std::move(v), std::move(f));
}

inline TriMesh scaled(const TriMesh& m, const Vec3& s) {
  std::vector<Vec3> v = m.vertices();
  for (auto& p : v) p = p.cwiseProduct(s);
  return m.with_vertices(std::move(v));
}

inline TriMesh translated(const TriMesh& m, const Vec3& t) {
  std::vector<Vec3> v = m.vertices();
  for (auto& p : v) p += t;
  return m.with_vertices(std::move(v));
}

inline TriMesh transformed(const TriMesh& m, const Eigen::Matrix3d& r, const Vec3& t) {
  std::vector<Vec3> v = m.vertices();
  for (auto& p : v) p = r * p + t;
  return m.with_vertices(std::move(v));
}

}  // namespace cranio::mesh
