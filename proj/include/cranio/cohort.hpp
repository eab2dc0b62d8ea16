#pragma once

// Synthetic scaphocephalic heads. Every patient is a smooth deformation of
// one shared dome tessellation (an icosphere cut below its equator), so
// vertex i means the same anatomical location on every head.

#include "cranio/mesh/ops.hpp"
#include "cranio/mesh/primitives.hpp"
#include "cranio/util/csv.hpp"
#include "cranio/util/hash.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

namespace cranio::cohort {

using mesh::TriMesh;
using mesh::Vec3;

class CohortError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kMinAgeDays = 120;
inline constexpr int kMaxAgeDays = 240;
inline constexpr double kHeadRadius = 60.0;  // mm
inline constexpr double kBaseHeight = -0.3;  // cut plane, in unit-sphere z

/// Low-order smooth perturbation basis on the unit sphere, evaluated at a
/// template direction u. Each function is divided by its RMS over the sphere,
/// so an amplitude of 1 mm is a 1 mm RMS radial change.
inline constexpr std::size_t kBumpCount = 14;

inline std::array<double, kBumpCount> bump_basis(const Vec3& u) {
  static constexpr std::array<double, kBumpCount> rms = {0.57735,  0.258199, 0.298142, 0.516398, 0.57735,
                                                         0.258199, 0.151186, 0.258199, 0.169031, 0.169031,
                                                         0.136277, 0.377964, 0.169031, 0.0975899};
  const double x = u.x(), y = u.y(), z = u.z();
  std::array<double, kBumpCount> f = {y,
                                      y * z,
                                      z * z - 1.0 / 3.0,
                                      y * y - x * x,
                                      x,
                                      x * y,
                                      y * (y * y - 0.6),
                                      x * z,
                                      y * x * x,
                                      z * y * y,
                                      x * (y * y - 0.3),
                                      z * z * z,
                                      y * z * z,
                                      x * y * z};
  for (std::size_t j = 0; j < kBumpCount; ++j) f[j] /= rms[j];
  return f;
}

struct PatientParams {
  int age_days = 180;
  double ap_elongation = 1.35;
  double lateral_narrowing = 0.96;
  double height_factor = 0.95;
  std::vector<double> bump_amplitudes;  // at most kBumpCount, mm
  std::uint64_t seed = 0;

  void validate() const {
    if (age_days < kMinAgeDays || age_days > kMaxAgeDays)
      throw CohortError("age_days " + std::to_string(age_days) + " outside [120, 240]");
    if (!(ap_elongation >= 1.0)) throw CohortError("ap_elongation must be >= 1");
    if (!(lateral_narrowing <= 1.0 && lateral_narrowing > 0)) throw CohortError("lateral_narrowing must be in (0, 1]");
    if (!(height_factor > 0)) throw CohortError("height_factor must be positive");
    if (bump_amplitudes.size() > kBumpCount) throw CohortError("too many bump amplitudes");
  }
};

struct PopulationParams {
  double t_skull = 2.02;       // mm
  double t_skin = 3.42;        // mm
  double suture_width = 2.0;   // mm
  double coronal_frac = 0.25;  // suture plane positions along the AP extent
  double lambdoid_frac = 0.90;

  void validate() const {
    // t_skin = 0 is allowed and means the skull is the head surface itself
    if (!(t_skull > 0 && t_skin >= 0 && suture_width > 0))
      throw CohortError("t_skull and suture_width must be positive, t_skin non-negative");
  }
};

/// Parameter distributions for cohort sampling.
struct DistributionConfig {
  std::array<double, 2> ap_elongation{1.30, 1.40};
  std::array<double, 2> lateral_narrowing{0.94, 0.99};
  std::array<double, 2> height_factor{0.90, 1.00};
  std::array<double, kBumpCount> bump_sd{1.5,   1.35,  1.215, 1.094, 0.984, 0.886, 0.797,
                                         0.717, 0.646, 0.581, 0.523, 0.471, 0.424, 0.381};  // mm RMS
  double bump_truncation = 2.5;  // in standard deviations
};

/// Unit-radius dome shared by all patients: the icosphere cut at
/// z = kBaseHeight with the base ring snapped onto the plane and the sphere.
inline TriMesh template_dome(int resolution) {
  const TriMesh sphere = mesh::icosphere(resolution);
  const double snap = 0.25 * sphere.mean_edge_length();
  TriMesh dome = mesh::cut_with_plane(sphere, mesh::PlaneSpec(Vec3(0, 0, kBaseHeight), Vec3::UnitZ()), snap);
  std::vector<Vec3> v = dome.vertices();
  const double ring = std::sqrt(1.0 - kBaseHeight * kBaseHeight);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (dome.label(i) == mesh::Region::BaseRing) {
      const double r = std::hypot(v[i].x(), v[i].y());
      v[i].x() *= ring / r;
      v[i].y() *= ring / r;
      v[i].z() = kBaseHeight;
    } else {
      v[i].normalize();
    }
  }
  return dome.with_vertices(std::move(v));
}

inline TriMesh generate_patient(const PatientParams& p, int resolution = 4, double radius = kHeadRadius) {
  p.validate();
  if (resolution < 0 || resolution > 7) throw CohortError("resolution out of range");
  const TriMesh dome = template_dome(resolution);
  if (dome.vertex_count() < 1000 || dome.vertex_count() > 5000)
    throw CohortError("resolution " + std::to_string(resolution) + " yields " +
                      std::to_string(dome.vertex_count()) + " vertices, outside [1000, 5000]");
  std::vector<Vec3> v = dome.vertices();
  for (auto& u : v) {
    const double taper = (u.z() - kBaseHeight) / (1.0 - kBaseHeight);
    double bump = 0;
    if (!p.bump_amplitudes.empty()) {
      const auto basis = bump_basis(u.normalized());
      for (std::size_t j = 0; j < p.bump_amplitudes.size(); ++j) bump += p.bump_amplitudes[j] * basis[j];
    }
    const Vec3 base(radius * p.lateral_narrowing * u.x(), radius * p.ap_elongation * u.y(),
                    radius * p.height_factor * u.z());
    u = base * (1.0 + taper * bump / radius);
  }
  return dome.with_vertices(std::move(v));
}

inline PatientParams sample_patient(std::uint64_t seed, const DistributionConfig& dist) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](const std::array<double, 2>& r) {
    return std::uniform_real_distribution<double>(r[0], r[1])(rng);
  };
  PatientParams p;
  p.seed = seed;
  p.age_days = std::uniform_int_distribution<int>(kMinAgeDays, kMaxAgeDays)(rng);
  p.ap_elongation = uniform(dist.ap_elongation);
  p.lateral_narrowing = uniform(dist.lateral_narrowing);
  p.height_factor = uniform(dist.height_factor);
  std::normal_distribution<double> normal;
  for (double sd : dist.bump_sd) {
    double z = normal(rng);
    while (std::abs(z) > dist.bump_truncation) z = normal(rng);
    p.bump_amplitudes.push_back(sd * z);
  }
  return p;
}

struct Patient {
  int id = 0;
  PatientParams params;
  TriMesh head;
};

inline std::vector<Patient> generate_cohort(int n, std::uint64_t master_seed,
                                            const DistributionConfig& dist = {}, int resolution = 4) {
  if (n < 2) throw CohortError("cohort needs at least two patients");
  std::vector<Patient> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Patient pt;
    pt.id = i;
    pt.params = sample_patient(util::derive_seed(master_seed, static_cast<std::uint64_t>(i)), dist);
    pt.head = generate_patient(pt.params, resolution);
    out.push_back(std::move(pt));
  }
  return out;
}

/// Inward offset by the soft-tissue thickness followed by bone/suture
/// labelling: the synthetic skull of a head surface.
inline TriMesh head_to_skull(const TriMesh& head, const PopulationParams& pop) {
  pop.validate();
  const TriMesh inner = mesh::offset_surface(head, -pop.t_skin);
  return mesh::label_regions(inner, pop.coronal_frac, pop.lambdoid_frac, pop.suture_width);
}

inline std::vector<std::string> manifest_header() {
  std::vector<std::string> h = {"id", "age_days", "ap_elongation", "lateral_narrowing", "height_factor"};
  for (std::size_t j = 0; j < kBumpCount; ++j) h.push_back("bump_" + std::to_string(j + 1));
  h.push_back("seed");
  h.push_back("mesh_path");
  return h;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<Patient>& cohort,
                           const std::vector<std::string>& mesh_paths) {
  std::ofstream out(path);
  if (!out) throw CohortError("cannot write " + path.string());
  const auto h = manifest_header();
  for (std::size_t i = 0; i < h.size(); ++i) out << (i ? "," : "") << h[i];
  out << '\n';
  for (std::size_t k = 0; k < cohort.size(); ++k) {
    const auto& p = cohort[k].params;
    out << util::csv_row(cohort[k].id, p.age_days, p.ap_elongation, p.lateral_narrowing, p.height_factor);
    for (std::size_t j = 0; j < kBumpCount; ++j)
      out << ',' << util::format_double(j < p.bump_amplitudes.size() ? p.bump_amplitudes[j] : 0.0);
    out << ',' << p.seed << ',' << mesh_paths.at(k) << '\n';
  }
}

struct ManifestRow {
  int id = 0;
  PatientParams params;
  std::string mesh_path;
};

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  const auto t = util::read_csv(path);
  std::vector<ManifestRow> out;
  for (const auto& r : t.rows) {
    ManifestRow m;
    m.id = static_cast<int>(util::to_double(r[t.column("id")]));
    m.params.age_days = static_cast<int>(util::to_double(r[t.column("age_days")]));
    m.params.ap_elongation = util::to_double(r[t.column("ap_elongation")]);
    m.params.lateral_narrowing = util::to_double(r[t.column("lateral_narrowing")]);
    m.params.height_factor = util::to_double(r[t.column("height_factor")]);
    for (std::size_t j = 0; j < kBumpCount; ++j)
      m.params.bump_amplitudes.push_back(util::to_double(r[t.column("bump_" + std::to_string(j + 1))]));
    m.params.seed = std::stoull(r[t.column("seed")]);
    m.mesh_path = r[t.column("mesh_path")];
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace cranio::cohort
