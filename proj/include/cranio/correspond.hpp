#pragma once

// Template-to-target registration: rigid ICP, then non-rigid ICP with one
// affine transform per template vertex (optimal-step NICP, Amberg et al.).

#include "cranio/mesh/ops.hpp"
#include "cranio/mesh/primitives.hpp"

#include <Eigen/Geometry>
#include <Eigen/SparseCholesky>

#include <numbers>
#include <vector>

namespace cranio::correspond {

using mesh::TriMesh;
using mesh::Vec3;

class RegistrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  TriMesh apply(const TriMesh& m) const { return mesh::transformed(m, rotation, translation); }
};

struct RigidResult {
  RigidTransform transform;
  bool converged = false;
  int iterations = 0;
  std::vector<double> rms;  // closest-point RMS before each update, then final
};

/// Point-to-surface ICP, starting from centroid alignment.
inline RigidResult rigid_align(const TriMesh& templ, const TriMesh& target, int max_iters = 1000,
                               double tol = 1e-9) {
  if (templ.vertex_count() == 0 || target.empty()) throw mesh::EmptyMeshError();
  const mesh::TriangleBvh bvh(target);
  const auto n = static_cast<Eigen::Index>(templ.vertex_count());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) src.col(i) = templ.vertex(static_cast<std::size_t>(i));

  RigidResult res;
  res.transform.translation = target.centroid() - templ.centroid();
  auto match = [&] {
    double s = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto hit = bvh.closest(res.transform.apply(src.col(i)));
      dst.col(i) = hit.point;
      s += hit.distance * hit.distance;
    }
    return std::sqrt(s / static_cast<double>(n));
  };
  res.rms.push_back(match());
  for (res.iterations = 0; res.iterations < max_iters;) {
    const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
    res.transform.rotation = T.topLeftCorner<3, 3>();
    res.transform.translation = T.topRightCorner<3, 1>();
    ++res.iterations;
    res.rms.push_back(match());
    const double prev = res.rms[res.rms.size() - 2];
    if (std::abs(prev - res.rms.back()) < tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

struct NricpSchedule {
  std::vector<double> stiffness_steps{50, 20, 5, 2};
  int max_inner_iters = 10;
  double convergence_tol = 1e-3;  // mm, largest vertex movement between inner iterations
  double gamma = 1.0;             // weight of the translation part in the stiffness term
  double max_normal_angle_deg = 60.0;
  double max_distance = 10.0;     // mm

  void validate() const {
    if (stiffness_steps.empty()) throw RegistrationError("empty stiffness schedule");
    for (std::size_t i = 0; i < stiffness_steps.size(); ++i) {
      if (!(stiffness_steps[i] > 0)) throw RegistrationError("stiffness steps must be positive");
      if (i > 0 && !(stiffness_steps[i] < stiffness_steps[i - 1]))
        throw RegistrationError("stiffness steps must be strictly descending");
    }
    if (max_inner_iters < 1 || !(convergence_tol > 0)) throw RegistrationError("invalid inner iteration settings");
  }
};

struct NricpResult {
  TriMesh mesh;
  std::vector<Eigen::Matrix<double, 4, 3>> transforms;  // per vertex, acting on [x y z 1]
  std::vector<double> step_mean_distance;                // after each stiffness step
  int iterations = 0;
};

namespace detail {

inline int component_count(const TriMesh& m) {
  const auto nbrs = m.vertex_neighbors();
  std::vector<int> comp(m.vertex_count(), -1);
  int c = 0;
  for (std::size_t s = 0; s < comp.size(); ++s) {
    if (comp[s] >= 0) continue;
    std::vector<int> stack{static_cast<int>(s)};
    comp[s] = c;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int u : nbrs[v])
        if (comp[u] < 0) {
          comp[u] = c;
          stack.push_back(u);
        }
    }
    ++c;
  }
  return c;
}

}  // namespace detail

/// Deforms `templ` onto `target` (already rigidly aligned). Minimises
///   alpha^2 * sum_edges |G (X_i - X_j)|^2 + sum_i w_i |X_i^T v_i - u_i|^2
/// over per-vertex 4x3 affine transforms X_i, where u_i is the closest
/// compatible target point and G = diag(1, 1, 1, gamma). Matches whose
/// normals disagree by more than the angle limit, or that are further than
/// the distance limit, get w_i = 0.
inline NricpResult nricp_fit(const TriMesh& templ, const TriMesh& target, const NricpSchedule& schedule = {}) {
  schedule.validate();
  if (templ.vertex_count() == 0 || target.empty()) throw mesh::EmptyMeshError();
  if (detail::component_count(templ) != 1)
    throw RegistrationError("template is disconnected: the stiffness system would be singular");

  const mesh::TriangleBvh bvh(target);
  const auto n = static_cast<Eigen::Index>(templ.vertex_count());
  const auto edges = templ.edges();
  const double cos_limit = std::cos(schedule.max_normal_angle_deg * std::numbers::pi / 180.0);

  // Stiffness block: (M kron G)^T (M kron G), constant up to alpha^2.
  std::vector<Eigen::Triplet<double>> st;
  st.reserve(edges.size() * 16);
  const double g2[4] = {1, 1, 1, schedule.gamma * schedule.gamma};
  for (auto [a, b] : edges)
    for (int k = 0; k < 4; ++k) {
      st.emplace_back(4 * a + k, 4 * a + k, g2[k]);
      st.emplace_back(4 * b + k, 4 * b + k, g2[k]);
      st.emplace_back(4 * a + k, 4 * b + k, -g2[k]);
      st.emplace_back(4 * b + k, 4 * a + k, -g2[k]);
    }
  Eigen::SparseMatrix<double> S(4 * n, 4 * n);
  S.setFromTriplets(st.begin(), st.end());

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(4 * n, 3);
  for (Eigen::Index i = 0; i < n; ++i) X.block<3, 3>(4 * i, 0).setIdentity();

  auto deformed = [&](const Eigen::MatrixXd& Xc) {
    std::vector<Vec3> v(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::RowVector4d h;
      h << templ.vertex(static_cast<std::size_t>(i)).transpose(), 1.0;
      v[static_cast<std::size_t>(i)] = (h * Xc.block<4, 3>(4 * i, 0)).transpose();
    }
    return v;
  };

  NricpResult res;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  bool analysed = false;
  for (double alpha : schedule.stiffness_steps) {
    for (int it = 0; it < schedule.max_inner_iters; ++it) {
      const auto cur = templ.with_vertices(deformed(X));
      const auto normals = cur.vertex_normals();
      std::vector<Eigen::Triplet<double>> trip;
      Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(4 * n, 3);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        const auto hit = bvh.closest(cur.vertex(iu));
        const Vec3 tn = bvh.triangle_normal(hit.triangle);
        // Rejected matches keep their (zero) block so the sparsity pattern is fixed.
        const double w = hit.distance > schedule.max_distance || normals[iu].dot(tn) < cos_limit ? 0.0 : 1.0;
        Eigen::Vector4d h;
        h << templ.vertex(iu), 1.0;
        const Eigen::Matrix4d hh = w * h * h.transpose();
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c) trip.emplace_back(4 * i + r, 4 * i + c, hh(r, c));
        rhs.block<4, 3>(4 * i, 0) += w * h * hit.point.transpose();
      }
      Eigen::SparseMatrix<double> A(4 * n, 4 * n);
      A.setFromTriplets(trip.begin(), trip.end());
      A += alpha * alpha * S;
      if (!analysed) {
        solver.analyzePattern(A);
        analysed = true;
      }
      solver.factorize(A);
      if (solver.info() != Eigen::Success) throw RegistrationError("NRICP system is singular");
      const Eigen::MatrixXd Xn = solver.solve(rhs);
      const auto before = deformed(X);
      const auto after = deformed(Xn);
      double moved = 0;
      for (std::size_t i = 0; i < before.size(); ++i) moved = std::max(moved, (after[i] - before[i]).norm());
      X = Xn;
      ++res.iterations;
      if (moved < schedule.convergence_tol) break;
    }
    res.step_mean_distance.push_back(mesh::mean_surface_distance(templ.with_vertices(deformed(X)), target));
  }
  res.mesh = templ.with_vertices(deformed(X));
  res.transforms.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) res.transforms[static_cast<std::size_t>(i)] = X.block<4, 3>(4 * i, 0);
  return res;
}

struct CorrespondenceError {
  double mean = 0;
  double max = 0;
  std::vector<double> bin_edges;  // bins + 1 edges, mm
  std::vector<std::size_t> counts;
};

inline CorrespondenceError correspondence_error(const TriMesh& fitted, const TriMesh& target, int bins = 10) {
  if (bins < 1) throw RegistrationError("histogram needs at least one bin");
  const auto d = mesh::surface_distance(fitted, target);
  CorrespondenceError e;
  for (double v : d) {
    e.mean += v;
    e.max = std::max(e.max, v);
  }
  e.mean /= static_cast<double>(d.size());
  const double width = e.max > 0 ? e.max / bins : 1.0;
  for (int b = 0; b <= bins; ++b) e.bin_edges.push_back(b * width);
  e.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double v : d) ++e.counts[std::min(static_cast<std::size_t>(v / width), static_cast<std::size_t>(bins - 1))];
  return e;
}

}  // namespace cranio::correspond
