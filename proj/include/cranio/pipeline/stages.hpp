#pragma once

// The pipeline stages. Each reads its inputs through the run manifest,
// writes artifacts into the work directory and records them.

#include "cranio/mesh/io.hpp"
#include "cranio/pipeline/artifacts.hpp"
#include "cranio/pipeline/config.hpp"
#include "cranio/ssm.hpp"
#include "cranio/surrogate/tune.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <thread>

namespace cranio::pipeline {

inline constexpr const char* kStageCohort = "synth-cohort";
inline constexpr const char* kStageSimulate = "simulate";
inline constexpr const char* kStageSsm = "build-ssm";
inline constexpr const char* kStageAssemble = "assemble";
inline constexpr const char* kStageTune = "tune";
inline constexpr const char* kStageTrain = "train";
inline constexpr const char* kStageEvaluate = "evaluate";

/// Child seeds of the run seed, one per consumer.
namespace seeds {
inline std::uint64_t cohort(std::uint64_t s) { return util::derive_seed(s, 1); }
inline std::uint64_t plan(std::uint64_t s, int patient) {
  return util::derive_seed(util::derive_seed(s, 2), static_cast<std::uint64_t>(patient));
}
inline std::uint64_t plan_size(std::uint64_t s, int patient) {
  return util::derive_seed(util::derive_seed(s, 3), static_cast<std::uint64_t>(patient));
}
inline std::uint64_t split(std::uint64_t s) { return util::derive_seed(s, 4); }
inline std::uint64_t model(std::uint64_t s) { return util::derive_seed(s, 5); }
inline std::uint64_t tune(std::uint64_t s) { return util::derive_seed(s, 6); }
inline std::uint64_t cv(std::uint64_t s) { return util::derive_seed(s, 7); }
}  // namespace seeds

/// Fixed feature layout of the dataset and of prediction requests.
inline std::vector<std::string> feature_columns(int k_in) {
  std::vector<std::string> c{"age_days", "A", "AP", "LAT", "front_k", "front_L0", "back_k", "back_L0"};
  for (int i = 1; i <= k_in; ++i) c.push_back("b_in_" + std::to_string(i));
  return c;
}
inline std::vector<std::string> target_columns(int k_out) {
  std::vector<std::string> c;
  for (int i = 1; i <= k_out; ++i) c.push_back("b_out_" + std::to_string(i));
  return c;
}
inline constexpr int kSurgicalColumns = 8;

struct SimRecord {
  int patient_id = 0;
  int config_id = 0;
  bool converged = false;
  double residual = 0;
  double gap_opening = 0;
  int iterations = 0;
  double energy = 0;
  double ci_pre = 0;
  double ci_post = 0;
  std::string error;
};

inline void write_sims(const std::filesystem::path& path, const std::vector<SimRecord>& sims) {
  std::ofstream out(path);
  if (!out) throw StageError(kStageSimulate, "cannot write " + path.string());
  out << "patient_id,config_id,converged,residual,gap_opening,iterations,energy,ci_pre,ci_post,error\n";
  for (const auto& s : sims)
    out << util::csv_row(s.patient_id, s.config_id, static_cast<int>(s.converged), s.residual, s.gap_opening,
                         s.iterations, s.energy, s.ci_pre, s.ci_post, s.error)
        << '\n';
}

inline std::vector<SimRecord> read_sims(const std::filesystem::path& path) {
  const auto t = util::read_csv(path);
  std::vector<SimRecord> out;
  for (const auto& r : t.rows) {
    auto num = [&](const char* c) { return util::to_double(r[t.column(c)]); };
    SimRecord s;
    s.patient_id = static_cast<int>(num("patient_id"));
    s.config_id = static_cast<int>(num("config_id"));
    s.converged = num("converged") != 0;
    s.residual = num("residual");
    s.gap_opening = num("gap_opening");
    s.iterations = static_cast<int>(num("iterations"));
    s.energy = num("energy");
    s.ci_pre = num("ci_pre");
    s.ci_post = num("ci_post");
    s.error = r[t.column("error")];
    out.push_back(std::move(s));
  }
  return out;
}

struct CohortRecord {
  int patient_id = 0;
  int age_days = 0;
};

/// One row per converged simulation, in plan order: age, surgical and spring
/// parameters, pre-op coefficients from ssm_in and post-op coefficients from
/// ssm_out.
inline surrogate::Dataset assemble_dataset(const std::vector<CohortRecord>& cohort,
                                           const std::vector<doe::PlanRow>& plan,
                                           const std::vector<SimRecord>& sims, const ShapePack& preop,
                                           const ShapePack& postop, const ssm::ShapeModel& ssm_in,
                                           const ssm::ShapeModel& ssm_out) {
  std::map<int, int> age;
  for (const auto& c : cohort) age[c.patient_id] = c.age_days;
  std::map<std::pair<int, int>, const doe::PlanRow*> by_key;
  for (const auto& p : plan) by_key[{p.patient_id, p.config_id}] = &p;
  std::map<std::pair<int, int>, const ShapeEntry*> post;
  for (const auto& e : postop.entries) post[{e.patient_id, e.config_id}] = &e;
  std::map<int, Eigen::VectorXd> b_in;
  for (const auto& e : preop.entries) {
    ssm::ShapeVector v(3 * static_cast<Eigen::Index>(e.vertices.size()));
    for (std::size_t i = 0; i < e.vertices.size(); ++i) v.segment<3>(3 * static_cast<Eigen::Index>(i)) = e.vertices[i];
    b_in[e.patient_id] = ssm_in.project(v);
  }

  std::vector<const SimRecord*> rows;
  for (const auto& s : sims) {
    const std::string id = "(patient " + std::to_string(s.patient_id) + ", config " + std::to_string(s.config_id) + ")";
    if (!by_key.count({s.patient_id, s.config_id})) throw StageError(kStageAssemble, "unmatched sim result " + id);
    if (!age.count(s.patient_id) || !b_in.count(s.patient_id))
      throw StageError(kStageAssemble, "sim result " + id + " refers to an unknown patient");
    if (!s.converged) continue;
    if (!post.count({s.patient_id, s.config_id}))
      throw StageError(kStageAssemble, "no post-operative shape for converged sim " + id);
    rows.push_back(&s);
  }
  std::sort(rows.begin(), rows.end(), [](const SimRecord* a, const SimRecord* b) {
    return std::pair(a->patient_id, a->config_id) < std::pair(b->patient_id, b->config_id);
  });

  const int k_in = ssm_in.k(), k_out = ssm_out.k();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), kSurgicalColumns + k_in);
  Eigen::MatrixXd Y(static_cast<Eigen::Index>(rows.size()), k_out);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& s = *rows[r];
    const auto& c = by_key[{s.patient_id, s.config_id}]->config;
    const auto ri = static_cast<Eigen::Index>(r);
    X.row(ri).head(kSurgicalColumns) << age[s.patient_id], c.A, c.AP, c.LAT, c.front_spring.stiffness,
        c.front_spring.free_length, c.back_spring.stiffness, c.back_spring.free_length;
    X.row(ri).tail(k_in) = b_in[s.patient_id].transpose();
    const auto& e = *post[{s.patient_id, s.config_id}];
    ssm::ShapeVector v(3 * static_cast<Eigen::Index>(e.vertices.size()));
    for (std::size_t i = 0; i < e.vertices.size(); ++i) v.segment<3>(3 * static_cast<Eigen::Index>(i)) = e.vertices[i];
    Y.row(ri) = ssm_out.project(v).transpose();
  }
  auto d = surrogate::make_dataset(std::move(X), std::move(Y), feature_columns(k_in), target_columns(k_out));
  return d;
}

/// Stage runner: configuration, manifest and a log stream.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg, std::ostream& log = std::cerr)
      : cfg_(std::move(cfg)), log_(log), manifest_((cfg_.validate(), cfg_.work_dir), cfg_.hash()) {}

  const PipelineConfig& config() const { return cfg_; }
  const RunManifest& manifest() const { return manifest_; }
  std::filesystem::path path(const std::string& rel) const { return cfg_.work_dir / rel; }

  mesh::TriMesh head_topology() const { return cohort::template_dome(cfg_.resolution); }

  void synth_cohort() {
    const std::string st = kStageCohort;
    std::filesystem::create_directories(cfg_.work_dir);
    manifest_.begin(st);
    const auto patients = cohort::generate_cohort(cfg_.patients, seeds::cohort(cfg_.seed), cfg_.distribution,
                                                  cfg_.resolution);
    ShapePack pack;
    pack.vertex_count = patients.front().head.vertex_count();
    std::vector<std::string> refs;
    for (const auto& p : patients) {
      pack.entries.push_back({p.id, -1, p.head.vertices()});
      refs.push_back("preop_heads.cshp#" + std::to_string(p.id));
    }
    cohort::write_manifest(path("cohort.csv"), patients, refs);
    save_shape_pack(pack, path("preop_heads.cshp"));
    mesh::save_off(head_topology(), path("template.off"));
    manifest_.artifact(st, "cohort", "cohort.csv");
    manifest_.artifact(st, "preop_heads", "preop_heads.cshp");
    manifest_.artifact(st, "template", "template.off");
    manifest_.count(st, "patients", static_cast<std::int64_t>(patients.size()));
    manifest_.count(st, "vertices", static_cast<std::int64_t>(pack.vertex_count));
    manifest_.finish(st);
    log_ << "synth-cohort: " << patients.size() << " patients, " << pack.vertex_count << " vertices each\n";
  }

  void simulate() {
    const std::string st = kStageSimulate;
    const auto cohort_rows = cohort::read_manifest(manifest_.require(st, kStageCohort, "cohort"));
    const auto preop = load_shape_pack(manifest_.require(st, kStageCohort, "preop_heads"));
    manifest_.begin(st);

    std::vector<doe::PlanRow> plan;
    for (const auto& p : cohort_rows) {
      const int n = doe::configs_per_patient(seeds::plan_size(cfg_.seed, p.id), cfg_.configs_base,
                                             cfg_.configs_spread);
      const auto seed = seeds::plan(cfg_.seed, p.id);
      const auto pl = doe::sample_plan(cfg_.space, n, seed);
      for (std::size_t c = 0; c < pl.configs.size(); ++c)
        plan.push_back({p.id, static_cast<int>(c), pl.configs[c], seed});
    }
    doe::write_plan(path("plan.csv"), plan);

    const auto topo = head_topology();
    std::map<int, mesh::TriMesh> skulls, heads;
    std::map<int, int> ages;
    for (const auto& p : cohort_rows) {
      heads.emplace(p.id, topo.with_vertices(preop.find(p.id, -1).vertices));
      skulls.emplace(p.id, cohort::head_to_skull(heads.at(p.id), cfg_.population));
      ages[p.id] = p.params.age_days;
    }

    std::vector<SimRecord> sims(plan.size());
    std::vector<std::vector<mesh::Vec3>> post(plan.size());
    std::atomic<std::size_t> next{0}, done{0};
    std::mutex log_mutex;
    const auto t0 = std::chrono::steady_clock::now();
    auto work = [&] {
      for (std::size_t i; (i = next++) < plan.size();) {
        const auto& row = plan[i];
        auto& rec = sims[i];
        rec.patient_id = row.patient_id;
        rec.config_id = row.config_id;
        rec.ci_pre = mesh::compute_cephalic_index(heads.at(row.patient_id));
        try {
          const auto mat = surgery::materials_for_age(cfg_.materials, ages.at(row.patient_id), cfg_.reference_age);
          const auto r = surgery::simulate_surgery(skulls.at(row.patient_id), row.config, mat, cfg_.simulation);
          rec.converged = r.converged;
          rec.residual = r.residual;
          rec.gap_opening = r.gap_opening;
          rec.iterations = r.iterations;
          rec.energy = r.energy;
          rec.ci_post = mesh::compute_cephalic_index(r.head);
          if (r.converged) post[i] = r.head.vertices();
        } catch (const std::exception& e) {
          rec.converged = false;
          rec.error = e.what();
          for (auto& ch : rec.error)
            if (ch == ',' || ch == '\n') ch = ';';
        }
        const auto d = ++done;
        if (d % 250 == 0 || d == plan.size()) {
          std::lock_guard lock(log_mutex);
          log_ << "simulate: " << d << "/" << plan.size() << " ("
               << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s)\n";
        }
      }
    };
    std::vector<std::thread> pool;
    const int nw = std::min<int>(cfg_.worker_count(), static_cast<int>(plan.size()));
    for (int w = 1; w < nw; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    ShapePack pack;
    pack.vertex_count = preop.vertex_count;
    int converged = 0;
    for (std::size_t i = 0; i < plan.size(); ++i)
      if (sims[i].converged) {
        ++converged;
        pack.entries.push_back({plan[i].patient_id, plan[i].config_id, std::move(post[i])});
      }
    write_sims(path("sims.csv"), sims);
    save_shape_pack(pack, path("postop_heads.cshp"));
    manifest_.artifact(st, "plan", "plan.csv");
    manifest_.artifact(st, "sims", "sims.csv");
    manifest_.artifact(st, "postop_heads", "postop_heads.cshp");
    manifest_.count(st, "patients", static_cast<std::int64_t>(cohort_rows.size()));
    manifest_.count(st, "configs", static_cast<std::int64_t>(plan.size()));
    manifest_.count(st, "converged", converged);
    manifest_.count(st, "failed", static_cast<std::int64_t>(plan.size()) - converged);
    manifest_.finish(st);
    log_ << "simulate: " << converged << "/" << plan.size() << " converged\n";
  }

  void build_ssm() {
    const std::string st = kStageSsm;
    const auto preop = load_shape_pack(manifest_.require(st, kStageCohort, "preop_heads"));
    const auto postop = load_shape_pack(manifest_.require(st, kStageSimulate, "postop_heads"));
    if (postop.entries.size() < 2) throw StageError(st, "fewer than two converged simulations");
    manifest_.begin(st);
    auto build = [&](const ShapePack& p, double threshold, int modes, const char* name) {
      Eigen::MatrixXd S(3 * static_cast<Eigen::Index>(p.vertex_count), static_cast<Eigen::Index>(p.entries.size()));
      for (std::size_t c = 0; c < p.entries.size(); ++c)
        for (std::size_t i = 0; i < p.vertex_count; ++i)
          S.col(static_cast<Eigen::Index>(c)).segment<3>(3 * static_cast<Eigen::Index>(i)) = p.entries[c].vertices[i];
      ssm::BuildOptions o;
      if (modes > 0) o.modes = modes;
      else o.threshold = threshold;
      const auto m = ssm::build_ssm(S, o);
      const auto cdf = ssm::explained_cdf(m);
      const int k_sel = ssm::select_modes(m, threshold);
      manifest_.note(st, std::string(name) + "_k_selected", k_sel);
      manifest_.note(st, std::string(name) + "_k_used", m.k());
      manifest_.note(st, std::string(name) + "_explained_at_k", m.k() > 0 ? cdf[static_cast<std::size_t>(m.k() - 1)] : 0.0);
      log_ << "build-ssm: " << name << " " << p.entries.size() << " shapes, threshold " << threshold
           << " selects k=" << k_sel << ", using k=" << m.k() << " (" << (m.k() > 0 ? cdf[static_cast<std::size_t>(m.k() - 1)] : 0.0)
           << " explained)\n";
      return m;
    };
    ssm::save_ssm(build(preop, cfg_.ssm.input_threshold, cfg_.ssm.input_modes, "ssm_in"), path("ssm_in.cssm"));
    ssm::save_ssm(build(postop, cfg_.ssm.output_threshold, cfg_.ssm.output_modes, "ssm_out"), path("ssm_out.cssm"));
    manifest_.artifact(st, "ssm_in", "ssm_in.cssm");
    manifest_.artifact(st, "ssm_out", "ssm_out.cssm");
    manifest_.finish(st);
  }

  surrogate::Dataset assemble() {
    const std::string st = kStageAssemble;
    const auto cohort_rows = cohort::read_manifest(manifest_.require(st, kStageCohort, "cohort"));
    const auto preop = load_shape_pack(manifest_.require(st, kStageCohort, "preop_heads"));
    const auto plan = doe::read_plan(manifest_.require(st, kStageSimulate, "plan"));
    const auto sims = read_sims(manifest_.require(st, kStageSimulate, "sims"));
    const auto postop = load_shape_pack(manifest_.require(st, kStageSimulate, "postop_heads"));
    const auto ssm_in = ssm::load_ssm(manifest_.require(st, kStageSsm, "ssm_in"));
    const auto ssm_out = ssm::load_ssm(manifest_.require(st, kStageSsm, "ssm_out"));
    manifest_.begin(st);
    std::vector<CohortRecord> cr;
    for (const auto& c : cohort_rows) cr.push_back({c.id, c.params.age_days});
    auto d = assemble_dataset(cr, plan, sims, preop, postop, ssm_in, ssm_out);
    const auto converged = std::count_if(sims.begin(), sims.end(), [](const SimRecord& s) { return s.converged; });
    if (d.rows() != converged)
      throw StageError(st, "dataset has " + std::to_string(d.rows()) + " rows but " + std::to_string(converged) +
                               " simulations converged");
    surrogate::write_dataset_csv(d, path("dataset.csv"));
    manifest_.artifact(st, "dataset", "dataset.csv");
    manifest_.count(st, "rows", d.rows());
    manifest_.count(st, "columns", d.features() + d.targets());
    manifest_.count(st, "k_in", d.features() - kSurgicalColumns);
    manifest_.count(st, "k_out", d.targets());
    manifest_.finish(st);
    log_ << "assemble: " << d.rows() << " rows x " << d.features() + d.targets() << " columns\n";
    return d;
  }

  surrogate::Split load_split(const std::string& st) const {
    const auto d = surrogate::read_dataset_csv(manifest_.require(st, kStageAssemble, "dataset"));
    return surrogate::split(d, cfg_.ml.test_fraction, seeds::split(cfg_.seed));
  }

  surrogate::TuneResult tune(std::optional<surrogate::Kind> kind = {}) {
    const std::string st = kStageTune;
    const auto sp = load_split(st);
    manifest_.begin(st);
    surrogate::TuneSettings ts;
    ts.bo.budget = cfg_.ml.tuner_budget;
    ts.bo.n_init = cfg_.ml.tuner_init;
    ts.folds = cfg_.ml.folds;
    const auto space = surrogate::default_space(kind.value_or(cfg_.ml.spec.kind));
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = surrogate::tune(space, sp.train, ts, seeds::tune(cfg_.seed));
    nlohmann::json j;
    j["best"] = res.best.to_json();
    j["best_cv_r2"] = res.best_score;
    j["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto& tr = j["trace"] = nlohmann::json::array();
    for (const auto& e : res.trace)
      tr.push_back({{"spec", e.spec.to_json()},
                    {"cv_r2", std::isfinite(e.score) ? nlohmann::json(e.score) : nlohmann::json(nullptr)},
                    {"best_so_far", e.best_so_far},
                    {"initial", e.initial}});
    std::ofstream(path("tune.json")) << j.dump(2) << '\n';
    manifest_.artifact(st, "tune", "tune.json");
    manifest_.count(st, "evaluations", static_cast<std::int64_t>(res.trace.size()));
    manifest_.finish(st);
    log_ << "tune: best " << res.best.to_json().dump() << " cv r2 " << res.best_score << "\n";
    return res;
  }

  /// Uses the tuned spec when the tune stage has run, else the configured one.
  surrogate::SurrogateModel train() {
    const std::string st = kStageTrain;
    const auto sp = load_split(st);
    const auto ssm_in_hash = manifest_.artifact_hash(kStageSsm, "ssm_in");
    const auto ssm_out_hash = manifest_.artifact_hash(kStageSsm, "ssm_out");
    auto spec = cfg_.ml.spec;
    std::string source = "config";
    if (manifest_.complete(kStageTune)) {
      std::ifstream in(manifest_.require(st, kStageTune, "tune"));
      spec = surrogate::RegressorSpec::from_json(nlohmann::json::parse(in).at("best"));
      source = "tune";
    }
    manifest_.begin(st);
    const auto cv = surrogate::kfold_cv(spec, sp.train, cfg_.ml.folds, seeds::cv(cfg_.seed));
    auto model = surrogate::fit(spec, sp.train, seeds::model(cfg_.seed));
    model.meta["spec_source"] = source;
    model.meta["ssm_in_sha256"] = ssm_in_hash;
    model.meta["ssm_out_sha256"] = ssm_out_hash;
    model.meta["dataset_sha256"] = manifest_.artifact_hash(kStageAssemble, "dataset");
    model.meta["test_fraction"] = cfg_.ml.test_fraction;
    model.meta["split_seed"] = seeds::split(cfg_.seed);
    model.meta["cv"] = {{"folds", cfg_.ml.folds}, {"mean_r2", cv.mean_r2}, {"sd_r2", cv.sd_r2},
                        {"mean_mse", cv.mean_mse}, {"mean_mae", cv.mean_mae}};
    surrogate::save_model(model, path("model.csur"));
    manifest_.artifact(st, "model", "model.csur");
    manifest_.count(st, "train_rows", sp.train.rows());
    manifest_.note(st, "spec", spec.to_json());
    manifest_.finish(st);
    log_ << "train: " << spec.to_json().dump() << " (" << source << "), cv r2 " << cv.mean_r2 << " +- " << cv.sd_r2
         << "\n";
    return model;
  }

  nlohmann::json evaluate() {
    const std::string st = kStageEvaluate;
    const auto sp = load_split(st);
    auto model = surrogate::load_model(manifest_.require(st, kStageTrain, "model"));
    manifest_.begin(st);
    const auto m = surrogate::evaluate(model, sp.test);
    const auto raw = surrogate::evaluate(sp.test.Y, model.predict(sp.test.X), false);
    const auto linear = surrogate::fit({surrogate::Kind::Linear, {}}, sp.train, seeds::model(cfg_.seed));
    const auto lm = surrogate::evaluate(linear, sp.test, false);
    const auto t0 = std::chrono::steady_clock::now();
    model.predict_row(sp.test.X.row(0));
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json j;
    j["spec"] = model.spec.to_json();
    j["test_rows"] = sp.test.rows();
    j["test"] = {{"r2", m.r2}, {"mse", m.mse}, {"mae", m.mae}, {"units", "standardised targets"}};
    j["test_raw_units"] = {{"mse", raw.mse}, {"mae", raw.mae}};
    j["r2_per_target"] = m.r2_per_target;
    j["cv"] = model.meta.value("cv", nlohmann::json::object());
    j["linear_baseline"] = {{"r2", lm.r2}, {"mse", lm.mse}, {"mae", lm.mae}};
    j["single_row_ms"] = ms;
    std::ofstream(path("evaluation.json")) << j.dump(2) << '\n';
    manifest_.artifact(st, "evaluation", "evaluation.json");
    manifest_.finish(st);
    log_ << "evaluate: test r2 " << m.r2 << " mse " << m.mse << " mae " << m.mae << " (linear r2 " << lm.r2 << ")\n";
    return j;
  }

 private:
  PipelineConfig cfg_;
  std::ostream& log_;
  RunManifest manifest_;
};

}  // namespace cranio::pipeline
