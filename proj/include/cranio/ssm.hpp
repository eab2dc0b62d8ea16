#pragma once

// Point-distribution shape model: mean shape plus principal modes of the
// corresponded vertex coordinates.  M = mean + Phi * b.

#include "cranio/mesh/trimesh.hpp"
#include "cranio/util/binio.hpp"

#include <Eigen/Eigenvalues>

#include <optional>
#include <vector>

namespace cranio::ssm {

using mesh::TriMesh;
using ShapeVector = Eigen::VectorXd;

class SsmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// [x1, y1, z1, ..., xV, yV, zV] in template vertex order.
inline ShapeVector vectorize(const TriMesh& m) {
  ShapeVector v(3 * static_cast<Eigen::Index>(m.vertex_count()));
  for (std::size_t i = 0; i < m.vertex_count(); ++i) v.segment<3>(3 * static_cast<Eigen::Index>(i)) = m.vertex(i);
  return v;
}

inline TriMesh devectorize(const ShapeVector& v, const TriMesh& topology) {
  if (v.size() != 3 * static_cast<Eigen::Index>(topology.vertex_count()))
    throw SsmError("shape vector length " + std::to_string(v.size()) + " does not match template with " +
                   std::to_string(topology.vertex_count()) + " vertices");
  std::vector<mesh::Vec3> pts(topology.vertex_count());
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = v.segment<3>(3 * static_cast<Eigen::Index>(i));
  return topology.with_vertices(std::move(pts));
}

struct ShapeModel {
  ShapeVector mean;
  Eigen::MatrixXd modes;        // 3V x k, orthonormal columns
  Eigen::VectorXd eigenvalues;  // all N-1 sample-covariance eigenvalues, descending
  Eigen::VectorXd explained;    // eigenvalues / their sum
  std::size_t sample_count = 0;

  int k() const { return static_cast<int>(modes.cols()); }
  std::size_t vertex_count() const { return static_cast<std::size_t>(mean.size() / 3); }

  Eigen::VectorXd project(const ShapeVector& shape) const {
    if (shape.size() != mean.size())
      throw SsmError("shape length " + std::to_string(shape.size()) + " != model length " +
                     std::to_string(mean.size()));
    return modes.transpose() * (shape - mean);
  }

  ShapeVector reconstruct(const Eigen::VectorXd& b) const {
    if (b.size() != modes.cols())
      throw SsmError("coefficient count " + std::to_string(b.size()) + " != k=" + std::to_string(modes.cols()));
    return mean + modes * b;
  }

  /// Keeps the leading k modes.
  ShapeModel truncated(int k) const {
    if (k < 0 || k > this->k()) throw SsmError("cannot truncate to " + std::to_string(k) + " modes");
    ShapeModel m = *this;
    m.modes = modes.leftCols(k);
    return m;
  }
};

/// Cumulative explained-variance fractions; the last entry is exactly 1 for
/// any model with nonzero variance.
inline std::vector<double> explained_cdf(const ShapeModel& m) {
  std::vector<double> cum(static_cast<std::size_t>(m.eigenvalues.size()));
  double s = 0;
  for (std::size_t i = 0; i < cum.size(); ++i) cum[i] = s += m.eigenvalues[static_cast<Eigen::Index>(i)];
  for (auto& c : cum) c = s > 0 ? c / s : 0.0;
  return cum;
}

/// Smallest k whose cumulative explained fraction reaches the threshold.
inline int select_modes(const ShapeModel& m, double threshold) {
  if (!(threshold > 0 && threshold <= 1)) throw SsmError("threshold must be in (0, 1]");
  const auto cdf = explained_cdf(m);
  for (std::size_t i = 0; i < cdf.size(); ++i)
    if (cdf[i] >= threshold) return static_cast<int>(i + 1);
  return 0;  // zero-variance model
}

struct BuildOptions {
  std::optional<double> threshold;  // keep the minimal k reaching this fraction
  std::optional<int> modes;         // or a fixed count (takes precedence)
};

/// PCA through the N x N Gram matrix D^T D / (N - 1) of the deviation
/// matrix D; eigenvectors v map back to modes D v / |D v|. Each mode is
/// flipped so its largest-magnitude component is positive.
inline ShapeModel build_ssm(const Eigen::MatrixXd& shapes, const BuildOptions& opts = {}) {
  const Eigen::Index n = shapes.cols();
  if (n < 2) throw SsmError("a shape model needs at least two shapes");
  if (shapes.rows() == 0 || shapes.rows() % 3 != 0) throw SsmError("shape vectors must have length 3V > 0");

  ShapeModel m;
  m.sample_count = static_cast<std::size_t>(n);
  m.mean = shapes.rowwise().mean();
  const Eigen::MatrixXd dev = shapes.colwise() - m.mean;
  Eigen::MatrixXd gram(n, n);
  gram.triangularView<Eigen::Lower>() = dev.transpose() * dev;
  gram = gram.selfadjointView<Eigen::Lower>();
  gram /= static_cast<double>(n - 1);

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw SsmError("eigendecomposition failed");
  // Ascending order from the solver; the smallest eigenvalue belongs to the
  // constant vector removed by centring.
  const Eigen::Index r = n - 1;
  m.eigenvalues.resize(r);
  for (Eigen::Index i = 0; i < r; ++i) m.eigenvalues[i] = std::max(eig.eigenvalues()[n - 1 - i], 0.0);
  const double total = m.eigenvalues.sum();
  const double floor = 1e-12 * (m.eigenvalues.size() ? m.eigenvalues[0] : 0.0);
  int nonzero = 0;
  while (nonzero < r && m.eigenvalues[nonzero] > floor) ++nonzero;
  if (total <= 0) {
    m.eigenvalues.setZero();
    m.explained = Eigen::VectorXd::Zero(r);
    m.modes.resize(shapes.rows(), 0);
    return m;
  }
  m.explained = m.eigenvalues / total;

  int k = nonzero;
  if (opts.modes) {
    if (*opts.modes < 0 || *opts.modes > nonzero)
      throw SsmError("requested " + std::to_string(*opts.modes) + " modes but only " + std::to_string(nonzero) +
                     " have nonzero variance");
    k = *opts.modes;
  } else if (opts.threshold) {
    k = std::min(select_modes(m, *opts.threshold), nonzero);
  }

  m.modes.resize(shapes.rows(), k);
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd phi = dev * eig.eigenvectors().col(n - 1 - j);
    phi.normalize();
    Eigen::Index arg = 0;
    phi.cwiseAbs().maxCoeff(&arg);
    if (phi[arg] < 0) phi = -phi;
    m.modes.col(j) = phi;
  }
  return m;
}

inline ShapeModel build_ssm(const std::vector<ShapeVector>& shapes, const BuildOptions& opts = {}) {
  if (shapes.empty()) throw SsmError("no shapes");
  Eigen::MatrixXd s(shapes.front().size(), static_cast<Eigen::Index>(shapes.size()));
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].size() != s.rows()) throw SsmError("shape " + std::to_string(i) + " has a different length");
    s.col(static_cast<Eigen::Index>(i)) = shapes[i];
  }
  return build_ssm(s, opts);
}

inline constexpr std::uint32_t kSsmVersion = 1;

inline std::string ssm_bytes(const ShapeModel& m) {
  util::BinaryWriter w;
  w.magic("CSSM");
  w.u32(kSsmVersion);
  w.u64(m.vertex_count());
  w.u64(m.sample_count);
  w.u64(static_cast<std::uint64_t>(m.k()));
  w.u64(static_cast<std::uint64_t>(m.eigenvalues.size()));
  w.f64s(m.mean.data(), static_cast<std::size_t>(m.mean.size()));
  w.f64s(m.eigenvalues.data(), static_cast<std::size_t>(m.eigenvalues.size()));
  w.f64s(m.explained.data(), static_cast<std::size_t>(m.explained.size()));
  w.f64s(m.modes.data(), static_cast<std::size_t>(m.modes.size()));
  return w.bytes();
}

inline void save_ssm(const ShapeModel& m, const std::filesystem::path& path) {
  util::BinaryWriter w;
  w.magic(ssm_bytes(m));
  w.save(path);
}

inline ShapeModel load_ssm(const std::filesystem::path& path) {
  auto r = util::BinaryReader::from_file(path);
  r.expect_magic("CSSM");
  if (const auto v = r.u32(); v != kSsmVersion) throw util::FormatError("unsupported CSSM version " + std::to_string(v));
  ShapeModel m;
  const auto V = static_cast<Eigen::Index>(r.u64());
  m.sample_count = r.u64();
  const auto k = static_cast<Eigen::Index>(r.u64());
  const auto ne = static_cast<Eigen::Index>(r.u64());
  m.mean.resize(3 * V);
  m.eigenvalues.resize(ne);
  m.explained.resize(ne);
  m.modes.resize(3 * V, k);
  r.f64s(m.mean.data(), static_cast<std::size_t>(m.mean.size()));
  r.f64s(m.eigenvalues.data(), static_cast<std::size_t>(ne));
  r.f64s(m.explained.data(), static_cast<std::size_t>(ne));
  r.f64s(m.modes.data(), static_cast<std::size_t>(m.modes.size()));
  if (!r.at_end()) throw util::FormatError(path.string() + ": trailing bytes in CSSM container");
  return m;
}

}  // namespace cranio::ssm
