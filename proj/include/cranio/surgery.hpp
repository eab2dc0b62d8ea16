#pragma once

// One virtual operation: osteotomy, distraction, gap closure, soft tissue.

#include "cranio/biomech.hpp"
#include "cranio/cohort.hpp"
#include "cranio/doe.hpp"

#include <Eigen/SparseCholesky>

namespace cranio::surgery {

using mesh::TriMesh;
using mesh::Vec3;

/// Closes the osteotomy gap of a deformed skull by reinserting the removed
/// template vertices. Their displacement is the harmonic (graph Laplacian)
/// interpolation of the displacements along the gap rim, so the strip spans
/// the opened gap smoothly and the result has the template's triangulation.
/// Vertices outside the gap keep their deformed positions exactly.
inline TriMesh bridge_gap(const TriMesh& preop_skull, const mesh::OsteotomyResult& cut,
                          const std::vector<Vec3>& deformed) {
  if (deformed.size() != cut.original_index.size())
    throw mesh::MeshError("deformed node count does not match the osteotomised mesh");
  const std::size_t nv = preop_skull.vertex_count();
  std::vector<Vec3> disp(nv, Vec3::Zero());
  std::vector<int> gap_index(nv, -1);
  for (std::size_t k = 0; k < cut.removed.size(); ++k) gap_index[cut.removed[k]] = static_cast<int>(k);
  for (std::size_t k = 0; k < cut.original_index.size(); ++k) {
    const int i = cut.original_index[k];
    disp[i] = deformed[k] - preop_skull.vertex(i);
  }

  std::vector<Vec3> v = preop_skull.vertices();
  for (std::size_t k = 0; k < cut.original_index.size(); ++k) v[cut.original_index[k]] = deformed[k];
  if (cut.removed.empty()) return preop_skull.with_vertices(std::move(v));

  const auto nbrs = preop_skull.vertex_neighbors();
  const auto m = static_cast<Eigen::Index>(cut.removed.size());
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, 3);
  std::vector<char> anchored(cut.removed.size(), 0);
  for (std::size_t k = 0; k < cut.removed.size(); ++k) {
    const int i = cut.removed[k];
    const auto row = static_cast<Eigen::Index>(k);
    trip.emplace_back(row, row, static_cast<double>(nbrs[i].size()));
    for (int j : nbrs[i]) {
      if (gap_index[j] >= 0) {
        trip.emplace_back(row, gap_index[j], -1.0);
      } else {
        rhs.row(row) += disp[j].transpose();
        anchored[k] = 1;
      }
    }
  }
  // Every connected piece of the gap needs at least one rim anchor.
  std::vector<char> reached(anchored);
  std::vector<int> stack;
  for (std::size_t k = 0; k < reached.size(); ++k)
    if (reached[k]) stack.push_back(static_cast<int>(k));
  while (!stack.empty()) {
    const int k = stack.back();
    stack.pop_back();
    for (int j : nbrs[cut.removed[k]])
      if (gap_index[j] >= 0 && !reached[gap_index[j]]) {
        reached[gap_index[j]] = 1;
        stack.push_back(gap_index[j]);
      }
  }
  if (std::find(reached.begin(), reached.end(), 0) != reached.end())
    throw mesh::MeshError("gap boundary not found: removed region has no rim");

  Eigen::SparseMatrix<double> L(m, m);
  L.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(L);
  if (solver.info() != Eigen::Success) throw mesh::MeshError("gap interpolation failed");
  const Eigen::MatrixXd d = solver.solve(rhs);
  for (std::size_t k = 0; k < cut.removed.size(); ++k) {
    const int i = cut.removed[k];
    v[i] = preop_skull.vertex(i) + d.row(static_cast<Eigen::Index>(k)).transpose();
  }
  return preop_skull.with_vertices(std::move(v));
}

struct SimulationSettings {
  biomech::SolverSettings solver;
  double notch_diameter = 5.0;
  double t_skin = 3.42;
};

struct SimulationResult {
  TriMesh skull;  // bridged post-operative skull, template topology
  TriMesh head;   // skull offset outward by the soft tissue
  bool converged = false;
  double residual = 0;
  double gap_opening = 0;
  double energy = 0;
  int iterations = 0;
};

inline SimulationResult simulate_surgery(const TriMesh& preop_skull, const doe::SurgicalConfig& config,
                                         const biomech::MaterialConfig& materials,
                                         const SimulationSettings& settings = {}) {
  const auto cut = mesh::apply_osteotomy(preop_skull, config.osteotomy(settings.notch_diameter));
  const auto system = biomech::build_system(cut.mesh, materials, cut.notches);
  const auto eq = biomech::solve_equilibrium(system, {config.front_spring, config.back_spring}, settings.solver);
  SimulationResult r;
  r.skull = bridge_gap(preop_skull, cut, eq.positions);
  r.head = mesh::offset_surface(r.skull, settings.t_skin);
  r.converged = eq.converged;
  r.residual = eq.residual;
  r.gap_opening = eq.gap_opening();
  r.energy = eq.energy_trace.back();
  r.iterations = eq.iterations;
  return r;
}

/// Bone stiffens as the infant grows; the edge stiffness scale is taken
/// proportional to age, normalised at 180 days.
inline biomech::MaterialConfig materials_for_age(biomech::MaterialConfig base, int age_days,
                                                 double reference_age = 180.0) {
  base.bone_edge_stiffness_scale *= static_cast<double>(age_days) / reference_age;
  return base;
}

}  // namespace cranio::surgery
