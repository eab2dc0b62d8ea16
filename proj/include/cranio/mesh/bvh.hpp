#pragma once

#include "cranio/mesh/trimesh.hpp"

#include <algorithm>
#include <numeric>

namespace cranio::mesh {

/// Closest point to `p` on triangle (a, b, c) (Ericson, Real-Time Collision
/// Detection, 5.1.5).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

struct ClosestHit {
  Vec3 point = Vec3::Zero();
  double distance = std::numeric_limits<double>::infinity();
  int triangle = -1;
};

/// Axis-aligned bounding-box tree over the triangles of a mesh for
/// nearest-surface-point queries. Holds a copy of the geometry it indexes.
class TriangleBvh {
 public:
  explicit TriangleBvh(const TriMesh& m) : vertices_(m.vertices()), triangles_(m.triangles()) {
    order_.resize(triangles_.size());
    std::iota(order_.begin(), order_.end(), 0);
    centers_.resize(triangles_.size());
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& f = triangles_[t];
      centers_[t] = (vertices_[f[0]] + vertices_[f[1]] + vertices_[f[2]]) / 3.0;
    }
    if (!triangles_.empty()) build(0, static_cast<int>(triangles_.size()));
  }

  ClosestHit closest(const Vec3& p) const {
    ClosestHit best;
    double best2 = std::numeric_limits<double>::infinity();
    if (nodes_.empty()) return best;
    int stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& n = nodes_[stack[--top]];
      if (box_distance2(n, p) >= best2) continue;
      if (n.count > 0) {
        for (int i = n.first; i < n.first + n.count; ++i) {
          const auto& f = triangles_[order_[i]];
          const Vec3 q = closest_point_on_triangle(p, vertices_[f[0]], vertices_[f[1]], vertices_[f[2]]);
          const double d2 = (q - p).squaredNorm();
          if (d2 < best2) {
            best2 = d2;
            best.point = q;
            best.triangle = order_[i];
          }
        }
        continue;
      }
      const double dl = box_distance2(nodes_[n.left], p);
      const double dr = box_distance2(nodes_[n.right], p);
      if (dl < dr) {
        stack[top++] = n.right;
        stack[top++] = n.left;
      } else {
        stack[top++] = n.left;
        stack[top++] = n.right;
      }
    }
    best.distance = std::sqrt(best2);
    return best;
  }

  Vec3 triangle_normal(int t) const {
    const auto& f = triangles_[t];
    return (vertices_[f[1]] - vertices_[f[0]]).cross(vertices_[f[2]] - vertices_[f[0]]).normalized();
  }

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1, first = 0, count = 0;
  };

  static double box_distance2(const Node& n, const Vec3& p) {
    const Vec3 d = (n.lo - p).cwiseMax(p - n.hi).cwiseMax(Vec3::Zero());
    return d.squaredNorm();
  }

  int build(int first, int last) {
    const int idx = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    Vec3 clo = lo, chi = hi;
    for (int i = first; i < last; ++i) {
      for (int k : triangles_[order_[i]]) {
        lo = lo.cwiseMin(vertices_[k]);
        hi = hi.cwiseMax(vertices_[k]);
      }
      clo = clo.cwiseMin(centers_[order_[i]]);
      chi = chi.cwiseMax(centers_[order_[i]]);
    }
    nodes_[idx].lo = lo;
    nodes_[idx].hi = hi;
    if (last - first <= 4) {
      nodes_[idx].first = first;
      nodes_[idx].count = last - first;
      return idx;
    }
    int axis = 0;
    (chi - clo).maxCoeff(&axis);
    const int mid = (first + last) / 2;
    std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + last,
                     [&](int a, int b) { return centers_[a][axis] < centers_[b][axis]; });
    const int l = build(first, mid);
    const int r = build(mid, last);
    nodes_[idx].left = l;
    nodes_[idx].right = r;
    return idx;
  }

  std::vector<Vec3> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<int> order_;
  std::vector<Vec3> centers_;
  std::vector<Node> nodes_;
};

}  // namespace cranio::mesh
