#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cranio::mesh {

using Vec3 = Eigen::Vector3d;
using Triangle = std::array<int, 3>;

/// Region tag carried by every vertex of a head or skull surface.
enum class Region : std::uint8_t {
  Frontal,
  Parietal,
  Occipital,
  CoronalSuture,
  LambdoidSuture,
  BaseRing,
  Notch,
  Free,
};

inline constexpr std::string_view region_name(Region r) {
  switch (r) {
    case Region::Frontal: return "FRONTAL";
    case Region::Parietal: return "PARIETAL";
    case Region::Occipital: return "OCCIPITAL";
    case Region::CoronalSuture: return "CORONAL_SUTURE";
    case Region::LambdoidSuture: return "LAMBDOID_SUTURE";
    case Region::BaseRing: return "BASE_RING";
    case Region::Notch: return "NOTCH";
    case Region::Free: return "FREE";
  }
  return "?";
}

inline constexpr bool is_suture(Region r) {
  return r == Region::CoronalSuture || r == Region::LambdoidSuture;
}

class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyMeshError : public MeshError {
 public:
  EmptyMeshError() : MeshError("operation produced an empty mesh") {}
};

inline std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

inline std::pair<int, int> edge_from_key(std::uint64_t k) {
  return {static_cast<int>(k >> 32), static_cast<int>(k & 0xffffffffu)};
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

/// Indexed triangle surface in millimetres with per-vertex region labels.
///
/// Construction validates index ranges, rejects zero-area triangles and
/// edges shared by more than two triangles. Instances are immutable; the
/// `with_*` members return modified copies.
class TriMesh {
 public:
  TriMesh() = default;

  TriMesh(std::vector<Vec3> vertices, std::vector<Triangle> triangles,
          std::vector<Region> labels = {})
      : vertices_(std::move(vertices)),
        triangles_(std::move(triangles)),
        labels_(std::move(labels)) {
    if (labels_.empty()) labels_.assign(vertices_.size(), Region::Free);
    validate();
  }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const std::vector<Region>& labels() const { return labels_; }

  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t triangle_count() const { return triangles_.size(); }
  bool empty() const { return triangles_.empty(); }

  const Vec3& vertex(std::size_t i) const { return vertices_[i]; }
  Region label(std::size_t i) const { return labels_[i]; }

  TriMesh with_vertices(std::vector<Vec3> v) const {
    if (v.size() != vertices_.size())
      throw MeshError("with_vertices: vertex count mismatch");
    return TriMesh(std::move(v), triangles_, labels_);
  }

  TriMesh with_labels(std::vector<Region> l) const {
    if (l.size() != vertices_.size())
      throw MeshError("with_labels: label count mismatch");
    return TriMesh(vertices_, triangles_, std::move(l));
  }

  std::size_t count(Region r) const {
    std::size_t n = 0;
    for (auto l : labels_) n += (l == r);
    return n;
  }

  std::array<Vec3, 2> bounds() const {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const auto& p : vertices_) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    return {lo, hi};
  }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& p : vertices_) c += p;
    return vertices_.empty() ? c : Vec3(c / static_cast<double>(vertices_.size()));
  }

  Vec3 face_normal(std::size_t t) const {
    const auto& f = triangles_[t];
    return (vertices_[f[1]] - vertices_[f[0]]).cross(vertices_[f[2]] - vertices_[f[0]]);
  }

  /// Area-weighted vertex normals, unit length.
  std::vector<Vec3> vertex_normals() const {
    std::vector<Vec3> n(vertices_.size(), Vec3::Zero());
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const Vec3 fn = face_normal(t);
      for (int k : triangles_[t]) n[k] += fn;
    }
    for (auto& v : n) {
      const double len = v.norm();
      if (len > 0) v /= len;
    }
    return n;
  }

  /// Unique undirected edges.
  std::vector<std::pair<int, int>> edges() const {
    std::vector<std::pair<int, int>> out;
    std::unordered_map<std::uint64_t, int> seen;
    seen.reserve(triangles_.size() * 3);
    for (const auto& f : triangles_)
      for (int e = 0; e < 3; ++e) {
        const int a = f[e], b = f[(e + 1) % 3];
        if (seen.emplace(edge_key(a, b), 0).second) out.emplace_back(std::min(a, b), std::max(a, b));
      }
    return out;
  }

  /// Edge key -> incident triangle indices (one or two).
  std::unordered_map<std::uint64_t, std::vector<int>> edge_triangles() const {
    std::unordered_map<std::uint64_t, std::vector<int>> m;
    m.reserve(triangles_.size() * 3);
    for (std::size_t t = 0; t < triangles_.size(); ++t)
      for (int e = 0; e < 3; ++e)
        m[edge_key(triangles_[t][e], triangles_[t][(e + 1) % 3])].push_back(static_cast<int>(t));
    return m;
  }

  std::vector<std::pair<int, int>> boundary_edges() const {
    std::vector<std::pair<int, int>> out;
    for (const auto& [k, tris] : edge_triangles())
      if (tris.size() == 1) out.push_back(edge_from_key(k));
    return out;
  }

  std::vector<std::vector<int>> vertex_neighbors() const {
    std::vector<std::vector<int>> nb(vertices_.size());
    for (auto [a, b] : edges()) {
      nb[a].push_back(b);
      nb[b].push_back(a);
    }
    return nb;
  }

  double mean_edge_length() const {
    const auto es = edges();
    double s = 0;
    for (auto [a, b] : es) s += (vertices_[a] - vertices_[b]).norm();
    return es.empty() ? 0.0 : s / static_cast<double>(es.size());
  }

  double area() const {
    double s = 0;
    for (const auto& f : triangles_) s += triangle_area(vertices_[f[0]], vertices_[f[1]], vertices_[f[2]]);
    return s;
  }

  /// Drops vertices not referenced by any triangle. `kept` receives the
  /// original index of every surviving vertex when non-null.
  TriMesh compacted(std::vector<int>* kept = nullptr) const {
    std::vector<int> remap(vertices_.size(), -1);
    for (const auto& f : triangles_)
      for (int k : f) remap[k] = 0;
    std::vector<Vec3> v;
    std::vector<Region> l;
    std::vector<int> origin;
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
      if (remap[i] < 0) continue;
      remap[i] = static_cast<int>(v.size());
      v.push_back(vertices_[i]);
      l.push_back(labels_[i]);
      origin.push_back(static_cast<int>(i));
    }
    std::vector<Triangle> t = triangles_;
    for (auto& f : t)
      for (int& k : f) k = remap[k];
    if (kept) *kept = std::move(origin);
    return TriMesh(std::move(v), std::move(t), std::move(l));
  }

 private:
  void validate() const {
    if (labels_.size() != vertices_.size())
      throw MeshError("label array length " + std::to_string(labels_.size()) +
                      " != vertex count " + std::to_string(vertices_.size()));
    const int n = static_cast<int>(vertices_.size());
    std::unordered_map<std::uint64_t, int> uses;
    uses.reserve(triangles_.size() * 3);
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& f = triangles_[t];
      for (int k : f)
        if (k < 0 || k >= n)
          throw MeshError("triangle " + std::to_string(t) + " references vertex " +
                          std::to_string(k) + " outside [0," + std::to_string(n) + ")");
      if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2] ||
          face_normal(t).squaredNorm() <= 0.0)
        throw MeshError("triangle " + std::to_string(t) + " is degenerate");
      for (int e = 0; e < 3; ++e)
        if (++uses[edge_key(f[e], f[(e + 1) % 3])] > 2)
          throw MeshError("edge (" + std::to_string(f[e]) + "," + std::to_string(f[(e + 1) % 3]) +
                          ") shared by more than two triangles");
    }
  }

  std::vector<Vec3> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<Region> labels_;
};

}  // namespace cranio::mesh
