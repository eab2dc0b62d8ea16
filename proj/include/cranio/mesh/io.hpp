#pragma once

// STL is the exchange format for surfaces. Units are millimetres by
// convention; STL carries no unit metadata. Binary STL is always written;
// ASCII STL is accepted on load. OFF is used where the vertex order must
// survive a round trip (template topology).

#include "cranio/mesh/trimesh.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_map>

namespace cranio::mesh {

static_assert(std::endian::native == std::endian::little, "STL I/O assumes a little-endian host");

class ParseError : public MeshError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : MeshError(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

namespace detail {

/// Welds per-facet corners into shared vertices (tolerance in mm).
class VertexWelder {
 public:
  explicit VertexWelder(double tol) : tol_(tol) {}

  int add(const Vec3& p) {
    const auto c = cell(p);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = grid_.find(hash({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == grid_.end()) continue;
          for (int idx : it->second)
            if ((vertices_[idx] - p).norm() <= tol_) return idx;
        }
    const int idx = static_cast<int>(vertices_.size());
    vertices_.push_back(p);
    grid_[hash(c)].push_back(idx);
    return idx;
  }

  std::vector<Vec3> take() { return std::move(vertices_); }

 private:
  std::array<long long, 3> cell(const Vec3& p) const {
    return {static_cast<long long>(std::floor(p.x() / tol_)),
            static_cast<long long>(std::floor(p.y() / tol_)),
            static_cast<long long>(std::floor(p.z() / tol_))};
  }
  static std::uint64_t hash(const std::array<long long, 3>& c) {
    std::uint64_t h = 1469598103934665603ull;
    for (long long x : c) h = (h ^ static_cast<std::uint64_t>(x)) * 1099511628211ull;
    return h;
  }

  double tol_;
  std::vector<Vec3> vertices_;
  std::unordered_map<std::uint64_t, std::vector<int>> grid_;
};

inline TriMesh assemble(const std::vector<std::array<Vec3, 3>>& facets, double weld_tol) {
  VertexWelder w(weld_tol);
  std::vector<Triangle> tris;
  tris.reserve(facets.size());
  for (const auto& f : facets) {
    Triangle t{w.add(f[0]), w.add(f[1]), w.add(f[2])};
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    tris.push_back(t);
  }
  auto v = w.take();
  std::vector<Triangle> kept;
  kept.reserve(tris.size());
  for (const auto& t : tris)
    if ((v[t[1]] - v[t[0]]).cross(v[t[2]] - v[t[0]]).squaredNorm() > 0.0) kept.push_back(t);
  return TriMesh(std::move(v), std::move(kept));
}

inline bool looks_ascii(const std::string& bytes) {
  std::size_t i = 0;
  while (i < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[i]))) ++i;
  return bytes.compare(i, 5, "solid") == 0 && bytes.find("facet") != std::string::npos;
}

inline TriMesh parse_ascii(const std::string& bytes, double weld_tol) {
  std::istringstream in(bytes);
  std::string tok;
  std::vector<std::array<Vec3, 3>> facets;
  std::array<Vec3, 3> cur;
  int corner = 0;
  while (in >> tok) {
    if (tok == "vertex") {
      const auto pos = static_cast<std::size_t>(in.tellg());
      double x, y, z;
      if (!(in >> x >> y >> z)) throw ParseError("malformed ASCII STL vertex", pos);
      if (corner >= 3) throw ParseError("facet with more than three vertices", pos);
      cur[corner++] = Vec3(x, y, z);
    } else if (tok == "endfacet") {
      const auto pos = static_cast<std::size_t>(in.tellg());
      if (corner != 3) throw ParseError("facet with " + std::to_string(corner) + " vertices", pos);
      facets.push_back(cur);
      corner = 0;
    }
  }
  return assemble(facets, weld_tol);
}

inline TriMesh parse_binary(const std::string& bytes, double weld_tol) {
  if (bytes.size() < 84) throw ParseError("truncated binary STL header", bytes.size());
  std::uint32_t n = 0;
  std::memcpy(&n, bytes.data() + 80, 4);
  std::vector<std::array<Vec3, 3>> facets;
  facets.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t off = 84 + static_cast<std::size_t>(i) * 50;
    if (off + 50 > bytes.size())
      throw ParseError("binary STL declares " + std::to_string(n) + " triangles but record " +
                           std::to_string(i) + " is incomplete",
                       off);
    float rec[12];
    std::memcpy(rec, bytes.data() + off, sizeof(rec));
    std::array<Vec3, 3> f;
    for (int c = 0; c < 3; ++c) f[c] = Vec3(rec[3 + 3 * c], rec[4 + 3 * c], rec[5 + 3 * c]);
    facets.push_back(f);
  }
  if (bytes.size() != 84 + static_cast<std::size_t>(n) * 50)
    throw ParseError("trailing bytes after " + std::to_string(n) + " STL records",
                     84 + static_cast<std::size_t>(n) * 50);
  return assemble(facets, weld_tol);
}

}  // namespace detail

inline TriMesh parse_stl(const std::string& bytes, double weld_tol = 1e-6) {
  if (detail::looks_ascii(bytes) &&
      !(bytes.size() >= 84 && [&] {
        std::uint32_t n = 0;
        std::memcpy(&n, bytes.data() + 80, 4);
        return bytes.size() == 84 + static_cast<std::size_t>(n) * 50;
      }()))
    return detail::parse_ascii(bytes, weld_tol);
  return detail::parse_binary(bytes, weld_tol);
}

inline TriMesh load_stl(const std::filesystem::path& path, double weld_tol = 1e-6) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MeshError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_stl(bytes, weld_tol);
}

inline std::string stl_bytes(const TriMesh& m) {
  std::string out(84 + m.triangle_count() * 50, '\0');
  const char header[] = "binary STL, units mm";
  std::memcpy(out.data(), header, sizeof(header) - 1);
  const auto n = static_cast<std::uint32_t>(m.triangle_count());
  std::memcpy(out.data() + 80, &n, 4);
  for (std::size_t t = 0; t < m.triangle_count(); ++t) {
    float rec[12];
    const Vec3 nrm = m.face_normal(t).normalized();
    for (int k = 0; k < 3; ++k) rec[k] = static_cast<float>(nrm[k]);
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) rec[3 + 3 * c + k] = static_cast<float>(m.vertex(m.triangles()[t][c])[k]);
    std::memcpy(out.data() + 84 + t * 50, rec, sizeof(rec));
  }
  return out;
}

inline void save_stl(const TriMesh& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MeshError("cannot write " + path.string());
  const auto bytes = stl_bytes(m);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void save_off(const TriMesh& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw MeshError("cannot write " + path.string());
  out.precision(17);
  out << "OFF\n" << m.vertex_count() << ' ' << m.triangle_count() << " 0\n";
  for (const auto& p : m.vertices()) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  for (const auto& t : m.triangles()) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

inline TriMesh load_off(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string magic;
  if (!(in >> magic) || magic != "OFF") throw MeshError(path.string() + ": not an OFF file");
  std::size_t nv = 0, nf = 0, ne = 0;
  if (!(in >> nv >> nf >> ne)) throw MeshError(path.string() + ": bad OFF counts");
  std::vector<Vec3> v(nv);
  for (auto& p : v)
    if (!(in >> p.x() >> p.y() >> p.z())) throw MeshError(path.string() + ": truncated vertices");
  std::vector<Triangle> t(nf);
  for (auto& f : t) {
    int k = 0;
    if (!(in >> k >> f[0] >> f[1] >> f[2]) || k != 3)
      throw MeshError(path.string() + ": only triangular OFF faces are supported");
  }
  return TriMesh(std::move(v), std::move(t));
}

}  // namespace cranio::mesh
