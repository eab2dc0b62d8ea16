#pragma once

// Geometric operations on aligned head/skull surfaces.
//
// Alignment convention used throughout: +x lateral (left to right), +y runs
// anterior to posterior (forehead at min y, occiput at max y), +z vertical.

#include "cranio/mesh/bvh.hpp"
#include "cranio/mesh/trimesh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <unordered_map>

namespace cranio::mesh {

struct PlaneSpec {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();

  PlaneSpec() = default;
  PlaneSpec(Vec3 p, Vec3 n) : point(std::move(p)), normal(std::move(n)) {
    if (std::abs(normal.norm() - 1.0) > 1e-9) throw MeshError("plane normal must be unit length");
  }

  double signed_distance(const Vec3& p) const { return normal.dot(p - point); }
};

/// Keeps the part of `m` on the positive side of `plane`. Triangles crossing
/// the plane are split; every vertex created on (or snapped onto) the plane
/// is labelled BaseRing. Vertices closer than `snap` to the plane are moved
/// onto it, which avoids sliver triangles along the cut.
inline TriMesh cut_with_plane(const TriMesh& m, const PlaneSpec& plane, double snap = 0.0) {
  const std::size_t nv = m.vertex_count();
  std::vector<Vec3> v = m.vertices();
  std::vector<Region> labels = m.labels();
  std::vector<double> d(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    d[i] = plane.signed_distance(v[i]);
    if (std::abs(d[i]) <= snap) {
      if (d[i] != 0.0) v[i] -= d[i] * plane.normal;
      d[i] = 0.0;
    }
    if (d[i] == 0.0) labels[i] = Region::BaseRing;
  }

  std::unordered_map<std::uint64_t, int> split;
  auto crossing = [&](int a, int b) {
    const auto k = edge_key(a, b);
    if (auto it = split.find(k); it != split.end()) return it->second;
    const double t = d[a] / (d[a] - d[b]);
    Vec3 p = v[a] + t * (v[b] - v[a]);
    p -= plane.signed_distance(p) * plane.normal;
    const int idx = static_cast<int>(v.size());
    v.push_back(p);
    labels.push_back(Region::BaseRing);
    split.emplace(k, idx);
    return idx;
  };

  std::vector<Triangle> out;
  out.reserve(m.triangle_count());
  for (const auto& f : m.triangles()) {
    int pos = 0, neg = 0;
    for (int k : f) {
      pos += d[k] > 0;
      neg += d[k] < 0;
    }
    if (neg == 0) {
      if (pos > 0) out.push_back(f);
      continue;
    }
    if (pos == 0) continue;
    // Rotate so that f[0] is the first vertex after a sign change; emit the
    // positive-side polygon in the original winding.
    std::vector<int> poly;
    for (int e = 0; e < 3; ++e) {
      const int a = f[e], b = f[(e + 1) % 3];
      if (d[a] >= 0) poly.push_back(a);
      if ((d[a] > 0 && d[b] < 0) || (d[a] < 0 && d[b] > 0)) poly.push_back(crossing(a, b));
    }
    // quads are split along the shorter diagonal so that mirror-symmetric
    // input gives a mirror-symmetric cut
    if (poly.size() == 4 && (v[poly[1]] - v[poly[3]]).squaredNorm() < (v[poly[0]] - v[poly[2]]).squaredNorm())
      std::rotate(poly.begin(), poly.begin() + 1, poly.end());
    for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
      Triangle t{poly[0], poly[k], poly[k + 1]};
      if ((v[t[1]] - v[t[0]]).cross(v[t[2]] - v[t[0]]).squaredNorm() > 1e-24) out.push_back(t);
    }
  }
  if (out.empty()) throw EmptyMeshError();
  return TriMesh(std::move(v), std::move(out), std::move(labels)).compacted();
}

/// Moves every vertex by `distance` along its area-weighted normal
/// (negative = inward). `flipped` receives the number of triangles whose
/// normal reversed, a sign of local self-intersection.
inline TriMesh offset_surface(const TriMesh& m, double distance, std::size_t* flipped = nullptr) {
  if (distance == 0.0) {
    if (flipped) *flipped = 0;
    return m;
  }
  const auto n = m.vertex_normals();
  std::vector<Vec3> v = m.vertices();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += distance * n[i];
  std::size_t flips = 0;
  for (std::size_t t = 0; t < m.triangle_count(); ++t) {
    const auto& f = m.triangles()[t];
    const Vec3 after = (v[f[1]] - v[f[0]]).cross(v[f[2]] - v[f[0]]);
    if (after.dot(m.face_normal(t)) <= 0.0) ++flips;
  }
  if (flipped) *flipped = flips;
  return m.with_vertices(std::move(v));
}

/// Unsigned distance from each source vertex to the nearest point on any
/// target triangle.
inline std::vector<double> surface_distance(const TriMesh& source, const TriMesh& target) {
  if (source.vertex_count() == 0 || target.empty()) throw EmptyMeshError();
  const TriangleBvh bvh(target);
  std::vector<double> out(source.vertex_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = bvh.closest(source.vertex(i)).distance;
  return out;
}

/// Indices of source vertices kept after discarding the lowest
/// `fraction` of them by height (z).
inline std::vector<int> upper_vertices(const TriMesh& m, double fraction) {
  std::vector<int> idx(m.vertex_count());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return m.vertex(a).z() < m.vertex(b).z(); });
  const auto drop = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
  idx.erase(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(drop));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline double mean_surface_distance(const TriMesh& source, const TriMesh& target,
                                    double exclude_lower_fraction = 0.0) {
  const auto d = surface_distance(source, target);
  const auto keep = upper_vertices(source, exclude_lower_fraction);
  double s = 0;
  for (int i : keep) s += d[i];
  return keep.empty() ? 0.0 : s / static_cast<double>(keep.size());
}

/// Transverse suture planes of a labelled skull.
struct SuturePlanes {
  double coronal_y = 0;
  double lambdoid_y = 0;
  double half_width = 0;
};

inline SuturePlanes suture_planes(const TriMesh& m, double coronal_frac, double lambdoid_frac,
                                  double suture_width) {
  const auto [lo, hi] = m.bounds();
  const double len = hi.y() - lo.y();
  return {lo.y() + coronal_frac * len, lo.y() + lambdoid_frac * len, 0.5 * suture_width};
}

/// Assigns bone plates and suture bands from two transverse planes placed at
/// fractions of the anterior-posterior extent. BaseRing labels are kept.
inline TriMesh label_regions(const TriMesh& m, double coronal_frac, double lambdoid_frac,
                             double suture_width) {
  if (!(coronal_frac > 0 && coronal_frac < lambdoid_frac && lambdoid_frac < 1))
    throw MeshError("suture fractions must satisfy 0 < coronal < lambdoid < 1");
  if (suture_width < 0) throw MeshError("suture width must be non-negative");
  const auto s = suture_planes(m, coronal_frac, lambdoid_frac, suture_width);
  if (s.half_width > 0 && s.coronal_y + s.half_width >= s.lambdoid_y - s.half_width)
    throw MeshError("coronal and lambdoid suture bands overlap");
  std::vector<Region> labels = m.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == Region::BaseRing) continue;
    const double y = m.vertex(i).y();
    if (s.half_width > 0 && std::abs(y - s.coronal_y) <= s.half_width)
      labels[i] = Region::CoronalSuture;
    else if (s.half_width > 0 && std::abs(y - s.lambdoid_y) <= s.half_width)
      labels[i] = Region::LambdoidSuture;
    else if (y <= s.coronal_y)
      labels[i] = Region::Frontal;
    else if (y < s.lambdoid_y)
      labels[i] = Region::Parietal;
    else
      labels[i] = Region::Occipital;
  }
  return m.with_labels(std::move(labels));
}

struct OsteotomySpec {
  double A = 0.24;
  double AP = 0.55;
  double LAT = 0.17;
  double notch_diameter = 5.0;

  void validate() const {
    if (!(A > 0 && A < AP && AP < 1)) throw MeshError("osteotomy requires 0 < A < AP < 1");
    if (!(LAT > 0 && LAT < 1)) throw MeshError("osteotomy requires 0 < LAT < 1");
    if (!(notch_diameter > 0)) throw MeshError("notch diameter must be positive");
  }
};

/// Vertex sets of the four spring notches, indices into the cut mesh.
/// Each distractor spans the gap: front = {front_left, front_right} at
/// distance A, back = {back_left, back_right} at distance AP.
struct NotchSets {
  std::vector<int> front_left, front_right, back_left, back_right;

  std::array<const std::vector<int>*, 4> all() const {
    return {&front_left, &front_right, &back_left, &back_right};
  }
};

struct OsteotomyResult {
  TriMesh mesh;
  NotchSets notches;
  std::vector<int> original_index;  // cut-mesh vertex -> input vertex
  std::vector<int> removed;         // input vertices absent from the cut mesh
  Vec3 reference = Vec3::Zero();    // centre of the coronal suture on the vertex
  std::array<Vec3, 4> notch_centers{};
};

namespace detail {

/// y position of a suture from its band labels, falling back to the midpoint
/// between the two adjacent plates when the band is empty.
inline std::optional<double> suture_y(const TriMesh& m, Region band, Region before, Region after) {
  double s = 0;
  int n = 0;
  double max_before = -std::numeric_limits<double>::infinity();
  double min_after = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m.vertex_count(); ++i) {
    const double y = m.vertex(i).y();
    if (m.label(i) == band) {
      s += y;
      ++n;
    } else if (m.label(i) == before) {
      max_before = std::max(max_before, y);
    } else if (m.label(i) == after) {
      min_after = std::min(min_after, y);
    }
  }
  if (n > 0) return s / n;
  if (std::isfinite(max_before) && std::isfinite(min_after)) return 0.5 * (max_before + min_after);
  return std::nullopt;
}

}  // namespace detail

/// Cuts the parietal strip between the coronal and lambdoid sutures and
/// places four spring notches on its long edges. Distances A and AP are
/// measured posteriorly from the coronal reference point as fractions of the
/// skull's anterior-posterior length; LAT is the strip width as a fraction of
/// the skull width.
inline OsteotomyResult apply_osteotomy(const TriMesh& m, const OsteotomySpec& spec) {
  spec.validate();
  const auto coronal = detail::suture_y(m, Region::CoronalSuture, Region::Frontal, Region::Parietal);
  const auto lambdoid = detail::suture_y(m, Region::LambdoidSuture, Region::Parietal, Region::Occipital);
  if (!coronal || !lambdoid) throw MeshError("osteotomy requires a labelled skull");

  const auto [lo, hi] = m.bounds();
  const double length = hi.y() - lo.y();
  const double width = hi.x() - lo.x();
  const double x_mid = 0.5 * (lo.x() + hi.x());
  const double z_mid = 0.5 * (lo.z() + hi.z());
  const double half = 0.5 * spec.LAT * width;
  const double radius = 0.5 * spec.notch_diameter;
  const double y_front = *coronal + spec.A * length;
  const double y_back = *coronal + spec.AP * length;

  double parietal_lo = std::numeric_limits<double>::infinity();
  double parietal_hi = -parietal_lo;
  double parietal_lateral = 0;
  for (std::size_t i = 0; i < m.vertex_count(); ++i) {
    if (m.label(i) != Region::Parietal) continue;
    const auto& p = m.vertex(i);
    parietal_lo = std::min(parietal_lo, p.y());
    parietal_hi = std::max(parietal_hi, p.y());
    if (p.z() > z_mid) parietal_lateral = std::max(parietal_lateral, std::abs(p.x() - x_mid));
  }
  std::string violations;
  if (y_front - radius < parietal_lo)
    violations += " anterior notch y=" + std::to_string(y_front - radius) + " < parietal start " +
                  std::to_string(parietal_lo) + ";";
  if (y_back + radius > parietal_hi)
    violations += " posterior notch y=" + std::to_string(y_back + radius) + " > parietal end " +
                  std::to_string(parietal_hi) + ";";
  if (half + radius > parietal_lateral)
    violations += " half-width " + std::to_string(half + radius) + " > parietal lateral extent " +
                  std::to_string(parietal_lateral) + ";";
  if (!violations.empty()) throw MeshError("osteotomy rectangle leaves the parietal region:" + violations);

  std::vector<char> cut(m.vertex_count(), 0);
  for (std::size_t i = 0; i < m.vertex_count(); ++i) {
    const auto& p = m.vertex(i);
    cut[i] = m.label(i) == Region::Parietal && p.z() > z_mid && std::abs(p.x() - x_mid) < half;
  }
  std::vector<Triangle> tris;
  for (const auto& f : m.triangles())
    if (!cut[f[0]] && !cut[f[1]] && !cut[f[2]]) tris.push_back(f);
  if (tris.empty()) throw EmptyMeshError();

  OsteotomyResult r;
  r.mesh = TriMesh(m.vertices(), std::move(tris), m.labels()).compacted(&r.original_index);
  std::vector<int> new_index(m.vertex_count(), -1);
  for (std::size_t k = 0; k < r.original_index.size(); ++k) new_index[r.original_index[k]] = static_cast<int>(k);
  for (std::size_t i = 0; i < m.vertex_count(); ++i)
    if (new_index[i] < 0) r.removed.push_back(static_cast<int>(i));

  // Rim: surviving vertices adjacent to a cut vertex.
  std::vector<char> rim(m.vertex_count(), 0);
  for (auto [a, b] : m.edges()) {
    if (cut[a] && new_index[b] >= 0) rim[b] = 1;
    if (cut[b] && new_index[a] >= 0) rim[a] = 1;
  }

  auto surface_z = [&](double x, double y) {
    double best = std::numeric_limits<double>::infinity(), z = hi.z();
    for (std::size_t i = 0; i < m.vertex_count(); ++i) {
      const auto& p = m.vertex(i);
      if (p.z() <= z_mid) continue;
      const double d = std::hypot(p.x() - x, p.y() - y);
      if (d < best) {
        best = d;
        z = p.z();
      }
    }
    return z;
  };

  r.reference = Vec3(x_mid, *coronal, surface_z(x_mid, *coronal));
  const std::array<Vec3, 4> centers = {
      Vec3(x_mid - half, y_front, 0), Vec3(x_mid + half, y_front, 0),
      Vec3(x_mid - half, y_back, 0), Vec3(x_mid + half, y_back, 0)};
  std::array<std::vector<int>*, 4> sets = {&r.notches.front_left, &r.notches.front_right,
                                           &r.notches.back_left, &r.notches.back_right};
  std::vector<Region> labels = r.mesh.labels();
  for (int s = 0; s < 4; ++s) {
    const Vec3& c = centers[s];
    r.notch_centers[s] = Vec3(c.x(), c.y(), surface_z(c.x(), c.y()));
    const bool left = s % 2 == 0;
    std::vector<std::pair<double, int>> cand;
    for (std::size_t i = 0; i < m.vertex_count(); ++i) {
      if (!rim[i]) continue;
      const auto& p = m.vertex(i);
      if ((p.x() < x_mid) != left) continue;
      cand.emplace_back(std::hypot(p.x() - c.x(), p.y() - c.y()), static_cast<int>(i));
    }
    std::sort(cand.begin(), cand.end());
    for (std::size_t k = 0; k < cand.size(); ++k)
      if (cand[k].first <= radius || k < 2) sets[s]->push_back(new_index[cand[k].second]);
    if (sets[s]->empty()) throw MeshError("notch " + std::to_string(s) + " has no attachment vertices");
    for (int i : *sets[s]) labels[i] = Region::Notch;
  }
  r.mesh = r.mesh.with_labels(std::move(labels));
  return r;
}

/// 100 * lateral extent / anterior-posterior extent of an aligned mesh.
inline double compute_cephalic_index(const TriMesh& m) {
  const auto [lo, hi] = m.bounds();
  const double ap = hi.y() - lo.y();
  if (!(ap > 0)) throw MeshError("cephalic index undefined for zero anterior-posterior extent");
  return 100.0 * (hi.x() - lo.x()) / ap;
}

/// Volume enclosed by the surface and, for an open dome, the fan closing its
/// boundary at the boundary centroid.
inline double enclosed_volume(const TriMesh& m) {
  Vec3 ref = Vec3::Zero();
  const auto border = m.boundary_edges();
  if (!border.empty()) {
    for (auto [a, b] : border) ref += m.vertex(a) + m.vertex(b);
    ref /= 2.0 * static_cast<double>(border.size());
  }
  double vol = 0;
  for (const auto& f : m.triangles())
    vol += (m.vertex(f[0]) - ref).dot((m.vertex(f[1]) - ref).cross(m.vertex(f[2]) - ref)) / 6.0;
  return std::abs(vol);
}

/// Uniform scaling about the centroid so the enclosed volume matches
/// `target_volume`; removes a growth factor before comparing shapes.
inline TriMesh scale_to_volume(const TriMesh& m, double target_volume) {
  const double vol = enclosed_volume(m);
  if (!(vol > 0 && target_volume > 0)) throw MeshError("scale_to_volume needs positive volumes");
  const double s = std::cbrt(target_volume / vol);
  const Vec3 c = m.centroid();
  std::vector<Vec3> v = m.vertices();
  for (auto& p : v) p = c + s * (p - c);
  return m.with_vertices(std::move(v));
}

}  // namespace cranio::mesh
