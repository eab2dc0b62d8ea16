#pragma once

// Quasi-static elastic network standing in for a shell FEM of the skull.
//
// Every mesh edge is a linear spring with stiffness
//   scale * t_skull / rest_length
// softened by `suture_stiffness_ratio` when it belongs to a suture. Each
// interior edge also gets a hinge spring between the two opposite vertices
// of its triangles, giving the network bending resistance. Base ring nodes
// are fixed. Two distractor springs push notch centroids apart across the
// osteotomy gap.

#include "cranio/mesh/ops.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace cranio::biomech {

using mesh::Region;
using mesh::TriMesh;
using mesh::Vec3;

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SpringModel {
  double stiffness = 0.3;     // N/mm
  double free_length = 60.0;  // mm
  std::string id = "S";

  void validate() const {
    if (!(stiffness > 0 && free_length > 0))
      throw SimulationError("spring '" + id + "' needs positive stiffness and free length");
  }
};

/// Hookean distractor: pushes outward with k * (L0 - d) while compressed,
/// zero once fully open.
inline double spring_force(const SpringModel& s, double opening) {
  if (opening < 0) throw SimulationError("spring opening must be non-negative");
  return s.stiffness * std::max(s.free_length - opening, 0.0);
}

struct MaterialConfig {
  double bone_edge_stiffness_scale = 3000.0;  // N/mm per unit thickness-over-length
  double suture_stiffness_ratio = 0.1;
  double bending_ratio = 5.0;  // hinge springs relative to edge springs
  double t_skull = 2.02;       // mm

  void validate() const {
    if (!(bone_edge_stiffness_scale > 0 && t_skull > 0 && bending_ratio >= 0))
      throw SimulationError("material parameters must be positive");
    if (!(suture_stiffness_ratio > 0 && suture_stiffness_ratio <= 1))
      throw SimulationError("suture_stiffness_ratio must be in (0, 1]");
  }
};

enum class ElementKind : std::uint8_t { Edge, Hinge };

struct Element {
  int a = 0, b = 0;
  double stiffness = 0;
  double rest_length = 0;
  ElementKind kind = ElementKind::Edge;
  bool suture = false;
};

struct Distractor {
  std::vector<int> side_a, side_b;
};

struct ElasticSystem {
  std::vector<Vec3> rest;
  std::vector<Element> elements;
  std::vector<char> fixed;
  std::array<Distractor, 2> distractors;  // front, back

  std::size_t fixed_count() const { return static_cast<std::size_t>(std::count(fixed.begin(), fixed.end(), 1)); }
};

namespace detail {

inline bool is_plate(Region r) {
  return r == Region::Frontal || r == Region::Parietal || r == Region::Occipital;
}

/// Plate of a vertex for suture detection; notch vertices sit on parietal bone.
inline Region plate_of(Region r) { return r == Region::Notch ? Region::Parietal : r; }

inline bool crosses_suture(Region a, Region b) {
  if (mesh::is_suture(a) || mesh::is_suture(b)) return true;
  a = plate_of(a);
  b = plate_of(b);
  return is_plate(a) && is_plate(b) && a != b;
}

}  // namespace detail

inline double bone_stiffness(const MaterialConfig& m, double rest_length) {
  return m.bone_edge_stiffness_scale * m.t_skull / rest_length;
}

/// Builds the elastic network of a labelled, osteotomised skull. Elements
/// touching a suture band, or bridging two different bone plates, are
/// suture elements.
inline ElasticSystem build_system(const TriMesh& skull, const MaterialConfig& materials,
                                  const mesh::NotchSets& notches) {
  materials.validate();
  ElasticSystem sys;
  sys.rest = skull.vertices();
  sys.fixed.assign(skull.vertex_count(), 0);
  for (std::size_t i = 0; i < skull.vertex_count(); ++i) sys.fixed[i] = skull.label(i) == Region::BaseRing;
  if (sys.fixed_count() == 0) throw SimulationError("no fixed nodes: the system would be unconstrained");

  auto add = [&](int a, int b, ElementKind kind, double ratio) {
    Element e;
    e.a = a;
    e.b = b;
    e.kind = kind;
    e.rest_length = (sys.rest[a] - sys.rest[b]).norm();
    e.suture = detail::crosses_suture(skull.label(a), skull.label(b));
    e.stiffness = ratio * bone_stiffness(materials, e.rest_length) *
                  (e.suture ? materials.suture_stiffness_ratio : 1.0);
    if (e.rest_length > 0 && e.stiffness > 0) sys.elements.push_back(e);
  };
  for (const auto& [key, tris] : skull.edge_triangles()) {
    const auto [a, b] = mesh::edge_from_key(key);
    add(a, b, ElementKind::Edge, 1.0);
    if (tris.size() == 2 && materials.bending_ratio > 0) {
      auto opposite = [&](int t) {
        for (int k : skull.triangles()[t])
          if (k != a && k != b) return k;
        return -1;
      };
      add(opposite(tris[0]), opposite(tris[1]), ElementKind::Hinge, materials.bending_ratio);
    }
  }
  // Deterministic element order regardless of hash-map iteration.
  std::sort(sys.elements.begin(), sys.elements.end(), [](const Element& x, const Element& y) {
    return std::tie(x.kind, x.a, x.b) < std::tie(y.kind, y.a, y.b);
  });
  sys.distractors[0] = {notches.front_left, notches.front_right};
  sys.distractors[1] = {notches.back_left, notches.back_right};
  for (const auto& d : sys.distractors)
    if (d.side_a.empty() || d.side_b.empty()) throw SimulationError("distractor with an empty notch set");
  return sys;
}

struct SolverSettings {
  double tol = 1e-6;           // N, per-node force residual
  int max_iters = 200;
  double max_step = 1.0;       // mm per iteration
  int refresh_every = 25;      // iterations between refactorisations
};

struct EquilibriumResult {
  std::vector<Vec3> positions;
  bool converged = false;
  double residual = 0;  // max per-node force norm over free nodes, N
  int iterations = 0;
  std::vector<double> energy_trace;
  std::array<double, 2> initial_opening{};
  std::array<double, 2> final_opening{};

  double gap_opening() const {
    return 0.5 * ((final_opening[0] - initial_opening[0]) + (final_opening[1] - initial_opening[1]));
  }
};

namespace detail {

inline Vec3 centroid(const std::vector<Vec3>& x, const std::vector<int>& ids) {
  Vec3 c = Vec3::Zero();
  for (int i : ids) c += x[i];
  return c / static_cast<double>(ids.size());
}

inline Vec3 spring_axis(const ElasticSystem& sys, int s) {
  const auto& d = sys.distractors[s];
  const Vec3 r = centroid(sys.rest, d.side_b) - centroid(sys.rest, d.side_a);
  if (!(r.norm() > 0)) throw SimulationError("distractor attachments coincide");
  return r.normalized();
}

class EnergyModel {
 public:
  EnergyModel(const ElasticSystem& sys, const std::array<SpringModel, 2>& springs)
      : sys_(sys), springs_(springs) {
    dir_.reserve(sys.elements.size());
    for (const auto& el : sys.elements) dir_.push_back((sys.rest[el.a] - sys.rest[el.b]).normalized());
    for (int s = 0; s < 2; ++s) axis_[s] = spring_axis(sys, s);
  }

  /// Opening of distractor s measured along its rest axis.
  double opening(const std::vector<Vec3>& x, int s) const {
    const auto& d = sys_.distractors[s];
    return axis_[s].dot(centroid(x, d.side_b) - centroid(x, d.side_a));
  }

  double elastic_energy(const std::vector<Vec3>& x) const {
    double e = 0;
    for (std::size_t k = 0; k < dir_.size(); ++k) {
      const auto& el = sys_.elements[k];
      const double s = strain(x, k);
      e += 0.5 * el.stiffness * s * s;
    }
    return e;
  }

  double spring_energy(const std::vector<Vec3>& x) const {
    double e = 0;
    for (int s = 0; s < 2; ++s) {
      const double c = springs_[s].free_length - opening(x, s);
      if (c > 0) e += 0.5 * springs_[s].stiffness * c * c;
    }
    return e;
  }

  double energy(const std::vector<Vec3>& x) const { return elastic_energy(x) + spring_energy(x); }

  /// Gradient of the energy (negative net force) per node.
  std::vector<Vec3> gradient(const std::vector<Vec3>& x) const {
    std::vector<Vec3> g(x.size(), Vec3::Zero());
    for (std::size_t k = 0; k < dir_.size(); ++k) {
      const auto& el = sys_.elements[k];
      const Vec3 f = el.stiffness * strain(x, k) * dir_[k];
      g[el.a] += f;
      g[el.b] -= f;
    }
    for (int s = 0; s < 2; ++s) {
      const auto& d = sys_.distractors[s];
      const double c = springs_[s].free_length - opening(x, s);
      if (c <= 0) continue;
      const Vec3 dr = -springs_[s].stiffness * c * axis_[s];
      for (int j : d.side_b) g[j] += dr / static_cast<double>(d.side_b.size());
      for (int i : d.side_a) g[i] -= dr / static_cast<double>(d.side_a.size());
    }
    return g;
  }

  /// Edge stiffness plus the positive semi-definite part of the distractor
  /// Hessian, restricted to free degrees of freedom.
  Eigen::SparseMatrix<double> stiffness(const std::vector<Vec3>& x, const std::vector<int>& dof) const {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(dir_.size() * 36);
    auto block = [&](int i, int j, const Eigen::Matrix3d& k) {
      if (dof[i] < 0 || dof[j] < 0) return;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) trip.emplace_back(3 * dof[i] + r, 3 * dof[j] + c, k(r, c));
    };
    for (std::size_t e = 0; e < dir_.size(); ++e) {
      const auto& el = sys_.elements[e];
      const Eigen::Matrix3d k = el.stiffness * dir_[e] * dir_[e].transpose();
      block(el.a, el.a, k);
      block(el.b, el.b, k);
      block(el.a, el.b, -k);
      block(el.b, el.a, -k);
    }
    for (int s = 0; s < 2; ++s) {
      const auto& d = sys_.distractors[s];
      if (springs_[s].free_length - opening(x, s) <= 0) continue;
      const Eigen::Matrix3d k = springs_[s].stiffness * axis_[s] * axis_[s].transpose();
      std::vector<std::pair<int, double>> w;
      for (int j : d.side_b) w.emplace_back(j, 1.0 / static_cast<double>(d.side_b.size()));
      for (int i : d.side_a) w.emplace_back(i, -1.0 / static_cast<double>(d.side_a.size()));
      for (auto [i, wi] : w)
        for (auto [j, wj] : w) block(i, j, wi * wj * k);
    }
    const int n = 3 * static_cast<int>(std::count_if(dof.begin(), dof.end(), [](int v) { return v >= 0; }));
    Eigen::SparseMatrix<double> K(n, n);
    K.setFromTriplets(trip.begin(), trip.end());
    return K;
  }

 private:
  /// Small-strain elongation of element k along its rest direction.
  double strain(const std::vector<Vec3>& x, std::size_t k) const {
    const auto& el = sys_.elements[k];
    return dir_[k].dot((x[el.a] - sys_.rest[el.a]) - (x[el.b] - sys_.rest[el.b]));
  }

  const ElasticSystem& sys_;
  const std::array<SpringModel, 2>& springs_;
  std::vector<Vec3> dir_;
  std::array<Vec3, 2> axis_;
};

}  // namespace detail

/// Minimises edge strain energy plus distractor potential by damped Newton
/// descent with a backtracking (Armijo) line search. Edge strains and spring
/// openings are linearised about the rest shape (small deformation), so the
/// stiffness only changes when a spring reaches its free length and the
/// factorisation is reused between those events. No node moves further
/// than `max_step` per iteration and fixed nodes never move.
inline EquilibriumResult solve_equilibrium(const ElasticSystem& sys, const std::array<SpringModel, 2>& springs,
                                           const SolverSettings& settings = {}) {
  for (const auto& s : springs)
    if (!(s.stiffness >= 0 && s.free_length > 0)) throw SimulationError("invalid distractor spring");
  const detail::EnergyModel model(sys, springs);
  std::vector<int> dof(sys.rest.size(), -1);
  std::vector<int> free_nodes;
  for (std::size_t i = 0; i < sys.rest.size(); ++i)
    if (!sys.fixed[i]) {
      dof[i] = static_cast<int>(free_nodes.size());
      free_nodes.push_back(static_cast<int>(i));
    }
  const int n = 3 * static_cast<int>(free_nodes.size());

  EquilibriumResult res;
  std::vector<Vec3> x = sys.rest;
  for (int s = 0; s < 2; ++s) res.initial_opening[s] = model.opening(x, s);

  auto residual = [&](const std::vector<Vec3>& g) {
    double r = 0;
    for (int i : free_nodes) r = std::max(r, g[i].norm());
    return r;
  };

  double e = model.energy(x);
  std::vector<Vec3> g = model.gradient(x);
  res.energy_trace.push_back(e);
  res.residual = residual(g);

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool analyzed = false;
  auto factorize = [&] {
    Eigen::SparseMatrix<double> K = model.stiffness(x, dof);
    double diag = 0;
    for (int k = 0; k < n; ++k) diag = std::max(diag, K.coeff(k, k));
    for (int k = 0; k < n; ++k) K.coeffRef(k, k) += 1e-10 * diag;
    if (!analyzed) {
      ldlt.analyzePattern(K);
      analyzed = true;
    }
    ldlt.factorize(K);
    if (ldlt.info() != Eigen::Success) throw SimulationError("stiffness factorisation failed");
  };

  bool fresh = false;
  int since_refresh = 0;
  while (res.residual >= settings.tol && res.iterations < settings.max_iters) {
    if (!analyzed || since_refresh >= settings.refresh_every) {
      factorize();
      fresh = true;
      since_refresh = 0;
    }
    Eigen::VectorXd rhs(n);
    for (std::size_t f = 0; f < free_nodes.size(); ++f)
      rhs.segment<3>(3 * static_cast<Eigen::Index>(f)) = -g[free_nodes[f]];
    Eigen::VectorXd p = ldlt.solve(rhs);
    double slope = -p.dot(rhs);
    if (!(slope < 0) || !p.allFinite()) {
      p = rhs;
      slope = -rhs.squaredNorm();
    }
    double longest = 0;
    for (std::size_t f = 0; f < free_nodes.size(); ++f)
      longest = std::max(longest, p.segment<3>(3 * static_cast<Eigen::Index>(f)).norm());
    double alpha = longest > settings.max_step ? settings.max_step / longest : 1.0;

    std::vector<Vec3> trial = x;
    double e_trial = e;
    bool accepted = false;
    for (int k = 0; k < 40; ++k) {
      for (std::size_t f = 0; f < free_nodes.size(); ++f)
        trial[free_nodes[f]] = x[free_nodes[f]] + alpha * p.segment<3>(3 * static_cast<Eigen::Index>(f));
      e_trial = model.energy(trial);
      if (e_trial <= e + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (fresh) break;
      since_refresh = settings.refresh_every;
      continue;
    }
    fresh = false;
    ++since_refresh;
    x = std::move(trial);
    e = e_trial;
    g = model.gradient(x);
    res.energy_trace.push_back(e);
    res.residual = residual(g);
    ++res.iterations;
  }
  res.converged = res.residual < settings.tol;
  for (int s = 0; s < 2; ++s) res.final_opening[s] = model.opening(x, s);
  res.positions = std::move(x);
  return res;
}

}  // namespace cranio::biomech
