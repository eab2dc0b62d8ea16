#pragma once

#include "cranio/cohort.hpp"
#include "cranio/doe.hpp"
#include "cranio/surgery.hpp"
#include "cranio/surrogate/spec.hpp"
#include "cranio/pipeline/toml.hpp"
#include "cranio/util/hash.hpp"

#include <json.hpp>

#include <set>
#include <thread>

namespace cranio::pipeline {

struct SsmSettings {
  double input_threshold = 0.94;
  double output_threshold = 0.90;
  int input_modes = 11;   // 0 = use the threshold-selected count
  int output_modes = 11;
};

struct MlSettings {
  double test_fraction = 0.33;
  int folds = 5;
  surrogate::RegressorSpec spec{surrogate::Kind::Svr,
                                {{"kernel", std::string("rbf")}, {"C", 1.85}, {"epsilon", 0.0},
                                 {"gamma", std::string("auto")}, {"degree", 1.0}}};
  int tuner_budget = 30;
  int tuner_init = 10;
};

struct ServeSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
};

struct PipelineConfig {
  std::uint64_t seed = 2024;
  std::filesystem::path work_dir = "run";
  int workers = 0;  // 0 = hardware concurrency

  int patients = 30;
  int resolution = 4;
  cohort::DistributionConfig distribution;
  cohort::PopulationParams population;

  int configs_base = 80;
  int configs_spread = 5;
  doe::ParamSpace space;

  biomech::MaterialConfig materials;
  double reference_age = 180.0;
  surgery::SimulationSettings simulation;

  SsmSettings ssm;
  MlSettings ml;
  ServeSettings serve;

  void validate() const {
    if (patients < 2) throw ConfigError("cohort.patients must be >= 2");
    if (configs_base < 1 || configs_spread < 0 || configs_spread >= configs_base)
      throw ConfigError("doe.configs_per_patient must be >= 1 with spread < base");
    auto thr = [](const char* name, double v) {
      if (!(v > 0 && v <= 1)) throw ConfigError(std::string("ssm.") + name + " must be in (0, 1]");
    };
    thr("input_threshold", ssm.input_threshold);
    thr("output_threshold", ssm.output_threshold);
    if (ssm.input_modes < 0 || ssm.output_modes < 0) throw ConfigError("ssm mode counts must be >= 0");
    if (!(ml.test_fraction > 0 && ml.test_fraction < 1)) throw ConfigError("ml.test_fraction must be in (0, 1)");
    if (ml.folds < 2) throw ConfigError("ml.folds must be >= 2");
    if (ml.tuner_budget < ml.tuner_init || ml.tuner_init < 1)
      throw ConfigError("ml.tuner_budget must be >= ml.tuner_init >= 1");
    if (!(reference_age > 0)) throw ConfigError("materials.reference_age must be positive");
    if (serve.port < 0 || serve.port > 65535) throw ConfigError("serve.port out of range");
    try {
      population.validate();
      space.validate();
      materials.validate();
      ml.spec.validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    const auto parent = std::filesystem::absolute(work_dir).parent_path();
    if (!std::filesystem::is_directory(parent))
      throw ConfigError("work_dir parent " + parent.string() + " does not exist");
  }

  int worker_count() const {
    return workers > 0 ? workers : std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }

  /// Canonical JSON of every setting that affects results (not paths,
  /// workers or serving); its SHA-256 is the config hash.
  nlohmann::json to_json() const {
    using nlohmann::json;
    json j;
    j["seed"] = seed;
    j["cohort"] = {{"patients", patients},
                   {"resolution", resolution},
                   {"ap_elongation", distribution.ap_elongation},
                   {"lateral_narrowing", distribution.lateral_narrowing},
                   {"height_factor", distribution.height_factor},
                   {"bump_sd", distribution.bump_sd},
                   {"bump_truncation", distribution.bump_truncation}};
    j["population"] = {{"t_skull", population.t_skull},
                       {"t_skin", population.t_skin},
                       {"suture_width", population.suture_width},
                       {"coronal_frac", population.coronal_frac},
                       {"lambdoid_frac", population.lambdoid_frac}};
    json springs = json::array();
    for (const auto& s : space.spring_catalog)
      springs.push_back({{"id", s.id}, {"stiffness", s.stiffness}, {"free_length", s.free_length}});
    j["doe"] = {{"configs_base", configs_base},
                {"configs_spread", configs_spread},
                {"A", {space.A.lo, space.A.hi}},
                {"AP", {space.AP.lo, space.AP.hi}},
                {"LAT", {space.LAT.lo, space.LAT.hi}},
                {"candidates", space.candidates},
                {"springs", springs}};
    j["materials"] = {{"bone_edge_stiffness_scale", materials.bone_edge_stiffness_scale},
                      {"suture_stiffness_ratio", materials.suture_stiffness_ratio},
                      {"bending_ratio", materials.bending_ratio},
                      {"reference_age", reference_age}};
    j["simulation"] = {{"tol", simulation.solver.tol},
                       {"max_iters", simulation.solver.max_iters},
                       {"max_step", simulation.solver.max_step},
                       {"notch_diameter", simulation.notch_diameter}};
    j["ssm"] = {{"input_threshold", ssm.input_threshold},
                {"output_threshold", ssm.output_threshold},
                {"input_modes", ssm.input_modes},
                {"output_modes", ssm.output_modes}};
    j["ml"] = {{"test_fraction", ml.test_fraction},
               {"folds", ml.folds},
               {"spec", ml.spec.to_json()},
               {"tuner_budget", ml.tuner_budget},
               {"tuner_init", ml.tuner_init}};
    return j;
  }

  std::string hash() const { return util::sha256_hex(to_json().dump()); }
};

namespace detail {

/// Reads typed values out of one table and remembers which keys were used.
class TableReader {
 public:
  TableReader(const TomlDocument& doc, std::string name) : name_(std::move(name)) {
    if (const auto it = doc.find(name_); it != doc.end()) table_ = &it->second;
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    const TomlValue* v = find(key);
    if (!v) return;
    if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, std::filesystem::path>) {
      if (!v->is_string()) fail(key, "a string");
      out = std::get<std::string>(v->v);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v->is_bool()) fail(key, "true or false");
      out = std::get<bool>(v->v);
    } else if constexpr (std::is_integral_v<T>) {
      if (!v->is_number()) fail(key, "an integer");
      const double d = std::get<double>(v->v);
      if (d != std::round(d) || (std::is_unsigned_v<T> && d < 0)) fail(key, "an integer");
      out = static_cast<T>(d);
    } else {
      if (!v->is_number()) fail(key, "a number");
      out = std::get<double>(v->v);
    }
  }

  std::vector<double> numbers(const std::string& key) {
    const TomlValue* v = find(key);
    if (!v) return {};
    if (!v->is_array()) fail(key, "an array of numbers");
    std::vector<double> out;
    for (const auto& e : std::get<std::vector<TomlValue>>(v->v)) {
      if (!e.is_number()) fail(key, "an array of numbers");
      out.push_back(std::get<double>(e.v));
    }
    return out;
  }
  std::vector<std::string> strings(const std::string& key) {
    const TomlValue* v = find(key);
    if (!v) return {};
    if (!v->is_array()) fail(key, "an array of strings");
    std::vector<std::string> out;
    for (const auto& e : std::get<std::vector<TomlValue>>(v->v)) {
      if (!e.is_string()) fail(key, "an array of strings");
      out.push_back(std::get<std::string>(e.v));
    }
    return out;
  }
  template <std::size_t N>
  void pair(const std::string& key, std::array<double, N>& out) {
    const auto v = numbers(key);
    if (v.empty() && !find(key)) return;
    if (v.size() != N) fail(key, "an array of " + std::to_string(N) + " numbers");
    std::copy(v.begin(), v.end(), out.begin());
  }
  void range(const std::string& key, doe::Range& r) {
    std::array<double, 2> a{r.lo, r.hi};
    pair(key, a);
    r = {a[0], a[1]};
  }

  const TomlTable* table() const { return table_; }
  void mark_all() {
    if (table_)
      for (const auto& [k, v] : *table_) used_.insert(k);
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_)
      if (!used_.count(k)) throw ConfigError("unknown key '" + k + "' in [" + name_ + "]");
  }

 private:
  const TomlValue* find(const std::string& key) {
    used_.insert(key);
    if (!table_) return nullptr;
    const auto it = table_->find(key);
    return it == table_->end() ? nullptr : &it->second;
  }
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("[" + name_ + "] " + key + " must be " + what);
  }

  std::string name_;
  const TomlTable* table_ = nullptr;
  std::set<std::string> used_;
};

}  // namespace detail

inline PipelineConfig config_from_toml(const TomlDocument& doc, const std::filesystem::path& base_dir = ".") {
  static const std::set<std::string> known{"",          "run", "cohort", "population", "doe", "springs", "materials",
                                           "simulation", "ssm", "ml",     "ml.params",  "serve"};
  for (const auto& [name, t] : doc)
    if (!known.count(name)) throw ConfigError("unknown table [" + name + "]");
  if (const auto it = doc.find(""); it != doc.end() && !it->second.empty())
    throw ConfigError("keys outside a table: '" + it->second.begin()->first + "'");

  PipelineConfig c;
  {
    detail::TableReader r(doc, "run");
    r.get("seed", c.seed);
    std::string wd = c.work_dir.string();
    r.get("work_dir", wd);
    c.work_dir = std::filesystem::path(wd).is_absolute() ? std::filesystem::path(wd) : base_dir / wd;
    r.get("workers", c.workers);
    r.finish();
  }
  {
    detail::TableReader r(doc, "cohort");
    r.get("patients", c.patients);
    r.get("resolution", c.resolution);
    r.pair("ap_elongation", c.distribution.ap_elongation);
    r.pair("lateral_narrowing", c.distribution.lateral_narrowing);
    r.pair("height_factor", c.distribution.height_factor);
    r.pair("bump_sd", c.distribution.bump_sd);
    r.get("bump_truncation", c.distribution.bump_truncation);
    r.finish();
  }
  {
    detail::TableReader r(doc, "population");
    r.get("t_skull", c.population.t_skull);
    r.get("t_skin", c.population.t_skin);
    r.get("suture_width", c.population.suture_width);
    r.get("coronal_frac", c.population.coronal_frac);
    r.get("lambdoid_frac", c.population.lambdoid_frac);
    r.finish();
  }
  {
    detail::TableReader r(doc, "doe");
    r.get("configs_per_patient", c.configs_base);
    r.get("configs_spread", c.configs_spread);
    r.range("A", c.space.A);
    r.range("AP", c.space.AP);
    r.range("LAT", c.space.LAT);
    r.get("candidates", c.space.candidates);
    r.finish();
  }
  {
    detail::TableReader r(doc, "springs");
    const auto ids = r.strings("ids");
    const auto k = r.numbers("stiffness");
    const auto L0 = r.numbers("free_length");
    if (r.table()) {
      if (ids.empty() || ids.size() != k.size() || ids.size() != L0.size())
        throw ConfigError("[springs] ids, stiffness and free_length must be arrays of equal, nonzero length");
      c.space.spring_catalog.clear();
      for (std::size_t i = 0; i < ids.size(); ++i) c.space.spring_catalog.push_back({k[i], L0[i], ids[i]});
    }
    r.finish();
  }
  {
    detail::TableReader r(doc, "materials");
    r.get("bone_edge_stiffness_scale", c.materials.bone_edge_stiffness_scale);
    r.get("suture_stiffness_ratio", c.materials.suture_stiffness_ratio);
    r.get("bending_ratio", c.materials.bending_ratio);
    r.get("reference_age", c.reference_age);
    r.finish();
    c.materials.t_skull = c.population.t_skull;
  }
  {
    detail::TableReader r(doc, "simulation");
    r.get("tol", c.simulation.solver.tol);
    r.get("max_iters", c.simulation.solver.max_iters);
    r.get("max_step", c.simulation.solver.max_step);
    r.get("notch_diameter", c.simulation.notch_diameter);
    r.finish();
    c.simulation.t_skin = c.population.t_skin;
  }
  {
    detail::TableReader r(doc, "ssm");
    r.get("input_threshold", c.ssm.input_threshold);
    r.get("output_threshold", c.ssm.output_threshold);
    r.get("input_modes", c.ssm.input_modes);
    r.get("output_modes", c.ssm.output_modes);
    r.finish();
  }
  {
    detail::TableReader r(doc, "ml");
    r.get("test_fraction", c.ml.test_fraction);
    r.get("folds", c.ml.folds);
    r.get("tuner_budget", c.ml.tuner_budget);
    r.get("tuner_init", c.ml.tuner_init);
    std::string model = surrogate::kind_name(c.ml.spec.kind);
    r.get("model", model);
    r.finish();
    detail::TableReader p(doc, "ml.params");
    if (p.table() || surrogate::parse_kind(model) != c.ml.spec.kind) {
      c.ml.spec = {surrogate::parse_kind(model), {}};
      if (p.table())
        for (const auto& [k, v] : *p.table()) {
          if (v.is_number()) c.ml.spec.params[k] = std::get<double>(v.v);
          else if (v.is_string()) c.ml.spec.params[k] = std::get<std::string>(v.v);
          else if (v.is_bool()) c.ml.spec.params[k] = std::get<bool>(v.v) ? 1.0 : 0.0;
          else throw ConfigError("[ml.params] " + k + " must be a number, string or boolean");
        }
    }
  }
  {
    detail::TableReader r(doc, "serve");
    r.get("host", c.serve.host);
    r.get("port", c.serve.port);
    r.finish();
  }
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  auto c = config_from_toml(load_toml(path), std::filesystem::absolute(path).parent_path());
  return c;
}

}  // namespace cranio::pipeline
