#pragma once

// On-disk artifacts of a pipeline run: packed shape sets and the run
// manifest that records what every stage produced.

#include "cranio/mesh/trimesh.hpp"
#include "cranio/pipeline/toml.hpp"
#include "cranio/util/binio.hpp"
#include "cranio/util/hash.hpp"

#include <json.hpp>

#include <chrono>
#include <ctime>

namespace cranio::pipeline {

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& msg) : std::runtime_error(msg), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Required upstream output is absent.
class MissingArtifactError : public StageError {
 public:
  MissingArtifactError(std::string stage, const std::string& artifact, const std::string& producer)
      : StageError(std::move(stage), "missing artifact '" + artifact + "': run stage '" + producer + "' first"),
        producer_(producer) {}
  const std::string& producer() const { return producer_; }

 private:
  std::string producer_;
};

/// Vertex arrays in template order, keyed by (patient, config); config -1
/// marks a pre-operative shape.
struct ShapeEntry {
  int patient_id = 0;
  int config_id = -1;
  std::vector<mesh::Vec3> vertices;
};

struct ShapePack {
  std::size_t vertex_count = 0;
  std::vector<ShapeEntry> entries;

  const ShapeEntry& find(int patient, int config) const {
    for (const auto& e : entries)
      if (e.patient_id == patient && e.config_id == config) return e;
    throw StageError("", "shape (" + std::to_string(patient) + ", " + std::to_string(config) + ") not in pack");
  }
};

inline constexpr std::uint32_t kShapePackVersion = 1;

inline void save_shape_pack(const ShapePack& p, const std::filesystem::path& path) {
  util::BinaryWriter w;
  w.magic("CSHP");
  w.u32(kShapePackVersion);
  w.u64(p.vertex_count);
  w.u64(p.entries.size());
  for (const auto& e : p.entries) {
    if (e.vertices.size() != p.vertex_count) throw util::FormatError("shape with wrong vertex count");
    w.pod(static_cast<std::int64_t>(e.patient_id));
    w.pod(static_cast<std::int64_t>(e.config_id));
    for (const auto& v : e.vertices) w.f64s(v.data(), 3);
  }
  w.save(path);
}

inline ShapePack load_shape_pack(const std::filesystem::path& path) {
  auto r = util::BinaryReader::from_file(path);
  r.expect_magic("CSHP");
  if (const auto v = r.u32(); v != kShapePackVersion)
    throw util::FormatError("unsupported CSHP version " + std::to_string(v));
  ShapePack p;
  p.vertex_count = r.u64();
  p.entries.resize(r.u64());
  for (auto& e : p.entries) {
    e.patient_id = static_cast<int>(r.pod<std::int64_t>());
    e.config_id = static_cast<int>(r.pod<std::int64_t>());
    e.vertices.resize(p.vertex_count);
    for (auto& v : e.vertices) r.f64s(v.data(), 3);
  }
  if (!r.at_end()) throw util::FormatError(path.string() + ": trailing bytes in CSHP container");
  return p;
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// run_manifest.json in the work directory. Stages append their artifacts
/// (path relative to the work dir plus SHA-256) and counts.
class RunManifest {
 public:
  static constexpr const char* kFile = "run_manifest.json";

  RunManifest(std::filesystem::path work_dir, const std::string& config_hash) : dir_(std::move(work_dir)) {
    const auto path = dir_ / kFile;
    if (std::filesystem::exists(path)) {
      std::ifstream in(path);
      try {
        j_ = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception&) {
        j_ = nlohmann::json::object();
      }
    }
    // a different configuration invalidates everything recorded before
    if (!j_.is_object() || j_.value("config_hash", "") != config_hash) {
      j_ = nlohmann::json::object();
      j_["config_hash"] = config_hash;
      j_["run_id"] = config_hash.substr(0, 12);
      j_["stages"] = nlohmann::json::object();
    }
  }

  const nlohmann::json& json() const { return j_; }
  const std::filesystem::path& dir() const { return dir_; }

  void begin(const std::string& stage) {
    auto& s = j_["stages"][stage];
    s = nlohmann::json::object();
    s["started"] = utc_now();
    s["complete"] = false;
  }

  void artifact(const std::string& stage, const std::string& name, const std::filesystem::path& rel) {
    j_["stages"][stage]["artifacts"][name] = {{"path", rel.generic_string()},
                                              {"sha256", util::sha256_file(dir_ / rel)}};
  }

  void count(const std::string& stage, const std::string& name, std::int64_t v) {
    j_["stages"][stage]["counts"][name] = v;
  }
  void note(const std::string& stage, const std::string& name, nlohmann::json v) {
    j_["stages"][stage]["info"][name] = std::move(v);
  }

  void finish(const std::string& stage) {
    j_["stages"][stage]["finished"] = utc_now();
    j_["stages"][stage]["complete"] = true;
    save();
  }

  bool complete(const std::string& stage) const {
    return j_["stages"].contains(stage) && j_["stages"][stage].value("complete", false);
  }

  /// Path of an artifact produced by `producer`, checked to exist and to be
  /// unchanged since it was recorded.
  std::filesystem::path require(const std::string& stage, const std::string& producer, const std::string& name) const {
    if (!complete(producer)) throw MissingArtifactError(stage, name, producer);
    const auto& a = j_["stages"][producer]["artifacts"];
    if (!a.contains(name)) throw MissingArtifactError(stage, name, producer);
    const auto path = dir_ / a[name]["path"].get<std::string>();
    if (!std::filesystem::exists(path)) throw MissingArtifactError(stage, name, producer);
    if (util::sha256_file(path) != a[name]["sha256"].get<std::string>())
      throw StageError(stage, "artifact '" + name + "' changed since stage '" + producer + "' wrote it; rerun it");
    return path;
  }

  std::string artifact_hash(const std::string& producer, const std::string& name) const {
    return j_["stages"][producer]["artifacts"][name]["sha256"].get<std::string>();
  }

  void save() const {
    std::filesystem::create_directories(dir_);
    std::ofstream out(dir_ / kFile);
    out << j_.dump(2) << '\n';
  }

 private:
  std::filesystem::path dir_;
  nlohmann::json j_;
};

}  // namespace cranio::pipeline
