#pragma once

// Single-query prediction over the trained artifacts: request validation,
// feature layout, coefficient prediction and mesh reconstruction.

#include "cranio/mesh/io.hpp"
#include "cranio/pipeline/stages.hpp"

namespace cranio::pipeline {

/// Rejected request; status is the HTTP code (400 schema/range, 422 dimension).
class RequestError : public std::runtime_error {
 public:
  RequestError(int status, const std::string& msg, nlohmann::json detail = nlohmann::json::object())
      : std::runtime_error(msg), status_(status), detail_(std::move(detail)) {}
  int status() const { return status_; }
  const nlohmann::json& detail() const { return detail_; }

 private:
  int status_;
  nlohmann::json detail_;
};

/// The model was trained against different SSM files than the ones present.
class HashMismatchError : public std::runtime_error {
 public:
  HashMismatchError(const std::string& msg, nlohmann::json diff) : std::runtime_error(msg), diff_(std::move(diff)) {}
  const nlohmann::json& diff() const { return diff_; }

 private:
  nlohmann::json diff_;
};

struct PredictRequest {
  double age_days = 180;
  double A = 0, AP = 0, LAT = 0;
  doe::SpringModel front_spring, back_spring;
  Eigen::VectorXd b_in;
};

struct Prediction {
  Eigen::VectorXd b_out;
  double ci_pred = 0;
  double ci_pre = 0;
  mesh::TriMesh mesh;
};

namespace detail {

inline double number_field(const nlohmann::json& j, const std::string& key, const std::string& where = "") {
  const std::string name = where.empty() ? key : where + "." + key;
  if (!j.contains(key)) throw RequestError(400, "missing field '" + name + "'", {{"field", name}});
  const auto& v = j.at(key);
  if (!v.is_number()) throw RequestError(400, "field '" + name + "' must be a number", {{"field", name}});
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw RequestError(400, "field '" + name + "' must be finite", {{"field", name}});
  return d;
}

inline void check_range(const char* name, double v, doe::Range r) {
  if (r.contains(v)) return;
  const std::string bound = util::format_double(v < r.lo ? r.lo : r.hi);
  throw RequestError(400,
                     std::string(name) + " = " + util::format_double(v) + " is " + (v < r.lo ? "below" : "above") +
                         " the bound " + bound + " (allowed range [" + util::format_double(r.lo) + ", " +
                         util::format_double(r.hi) + "])",
                     {{"field", name}, {"bound", v < r.lo ? r.lo : r.hi},
                      {"range", {r.lo, r.hi}}});
}

inline doe::SpringModel spring_field(const nlohmann::json& j, const std::string& key) {
  if (!j.contains(key) || !j.at(key).is_object())
    throw RequestError(400, "field '" + key + "' must be an object {k, L0}", {{"field", key}});
  const auto& s = j.at(key);
  doe::SpringModel m;
  m.stiffness = number_field(s, "k", key);
  m.free_length = number_field(s, "L0", key);
  if (!(m.stiffness > 0)) throw RequestError(400, key + ".k must be positive", {{"field", key + ".k"}});
  if (!(m.free_length > 0)) throw RequestError(400, key + ".L0 must be positive", {{"field", key + ".L0"}});
  return m;
}

}  // namespace detail

inline PredictRequest parse_request(const nlohmann::json& j, Eigen::Index k_in) {
  if (!j.is_object()) throw RequestError(400, "request body must be a JSON object");
  PredictRequest r;
  r.age_days = detail::number_field(j, "age_days");
  if (!(r.age_days > 0)) throw RequestError(400, "age_days must be positive", {{"field", "age_days"}});
  r.A = detail::number_field(j, "A");
  r.AP = detail::number_field(j, "AP");
  r.LAT = detail::number_field(j, "LAT");
  detail::check_range("A", r.A, doe::kBoundA);
  detail::check_range("AP", r.AP, doe::kBoundAP);
  detail::check_range("LAT", r.LAT, doe::kBoundLAT);
  if (!(r.A < r.AP)) throw RequestError(400, "A must lie anterior of AP (A < AP)", {{"field", "A"}});
  r.front_spring = detail::spring_field(j, "front_spring");
  r.back_spring = detail::spring_field(j, "back_spring");
  if (!j.contains("b_in") || !j.at("b_in").is_array())
    throw RequestError(400, "field 'b_in' must be an array of numbers", {{"field", "b_in"}});
  const auto& b = j.at("b_in");
  for (const auto& e : b)
    if (!e.is_number() || !std::isfinite(e.get<double>()))
      throw RequestError(400, "field 'b_in' must contain finite numbers only", {{"field", "b_in"}});
  if (static_cast<Eigen::Index>(b.size()) != k_in)
    throw RequestError(422, "b_in has " + std::to_string(b.size()) + " coefficients, model expects " +
                                std::to_string(k_in),
                       {{"field", "b_in"}, {"expected", k_in}, {"got", b.size()}});
  r.b_in.resize(k_in);
  for (Eigen::Index i = 0; i < k_in; ++i) r.b_in[i] = b[static_cast<std::size_t>(i)].get<double>();
  return r;
}

inline nlohmann::json request_json(const PredictRequest& r) {
  std::vector<double> b(r.b_in.data(), r.b_in.data() + r.b_in.size());
  return {{"age_days", r.age_days},
          {"A", r.A},
          {"AP", r.AP},
          {"LAT", r.LAT},
          {"front_spring", {{"k", r.front_spring.stiffness}, {"L0", r.front_spring.free_length}}},
          {"back_spring", {{"k", r.back_spring.stiffness}, {"L0", r.back_spring.free_length}}},
          {"b_in", b}};
}

/// Everything a prediction needs, loaded once and shared read-only.
struct Artifacts {
  surrogate::SurrogateModel model;
  ssm::ShapeModel ssm_in, ssm_out;
  mesh::TriMesh topology;
  std::string model_sha256, ssm_in_sha256, ssm_out_sha256;
  std::vector<doe::SpringModel> spring_catalog = doe::default_spring_catalog();
  nlohmann::json evaluation;  // evaluation.json when present

  Eigen::Index k_in() const { return ssm_in.k(); }
  Eigen::Index k_out() const { return ssm_out.k(); }

  Eigen::RowVectorXd features(const PredictRequest& r) const {
    Eigen::RowVectorXd x(kSurgicalColumns + r.b_in.size());
    x.head(kSurgicalColumns) << r.age_days, r.A, r.AP, r.LAT, r.front_spring.stiffness, r.front_spring.free_length,
        r.back_spring.stiffness, r.back_spring.free_length;
    x.tail(r.b_in.size()) = r.b_in.transpose();
    return x;
  }

  Eigen::VectorXd predict_coefficients(const PredictRequest& r) const {
    return model.predict_row(features(r)).transpose();
  }

  mesh::TriMesh reconstruct_out(const Eigen::VectorXd& b_out) const {
    return ssm::devectorize(ssm_out.reconstruct(b_out), topology);
  }
  mesh::TriMesh reconstruct_in(const Eigen::VectorXd& b_in) const {
    return ssm::devectorize(ssm_in.reconstruct(b_in), topology);
  }

  Prediction predict(const PredictRequest& r) const {
    Prediction p;
    p.b_out = predict_coefficients(r);
    p.mesh = reconstruct_out(p.b_out);
    p.ci_pred = mesh::compute_cephalic_index(p.mesh);
    p.ci_pre = mesh::compute_cephalic_index(reconstruct_in(r.b_in));
    return p;
  }
};

/// Loads model, both SSMs and the template from a work directory and refuses
/// when the model records different SSM hashes.
inline std::shared_ptr<const Artifacts> load_artifacts(const std::filesystem::path& work_dir) {
  auto need = [&](const char* name, const char* producer) {
    const auto p = work_dir / name;
    if (!std::filesystem::exists(p)) throw MissingArtifactError("predict", name, producer);
    return p;
  };
  const auto model_path = need("model.csur", kStageTrain);
  const auto in_path = need("ssm_in.cssm", kStageSsm);
  const auto out_path = need("ssm_out.cssm", kStageSsm);
  const auto tmpl_path = need("template.off", kStageCohort);

  auto a = std::make_shared<Artifacts>();
  a->model = surrogate::load_model(model_path);
  a->model_sha256 = util::sha256_file(model_path);
  a->ssm_in_sha256 = util::sha256_file(in_path);
  a->ssm_out_sha256 = util::sha256_file(out_path);

  nlohmann::json diff = nlohmann::json::object();
  auto check = [&](const char* key, const std::string& actual) {
    const std::string expected = a->model.meta.value(key, "");
    if (expected != actual) diff[key] = {{"model", expected}, {"file", actual}};
  };
  check("ssm_in_sha256", a->ssm_in_sha256);
  check("ssm_out_sha256", a->ssm_out_sha256);
  if (!diff.empty()) throw HashMismatchError("model was trained against different SSM artifacts", diff);

  a->ssm_in = ssm::load_ssm(in_path);
  a->ssm_out = ssm::load_ssm(out_path);
  a->topology = mesh::load_off(tmpl_path);
  if (a->topology.vertex_count() != a->ssm_in.vertex_count() ||
      a->topology.vertex_count() != a->ssm_out.vertex_count())
    throw StageError("predict", "template vertex count does not match the shape models");
  if (a->model.k_in() != kSurgicalColumns + a->k_in() || a->model.k_out() != a->k_out())
    throw StageError("predict", "model dimensions do not match the shape models");
  if (const auto ev = work_dir / "evaluation.json"; std::filesystem::exists(ev)) {
    std::ifstream in(ev);
    a->evaluation = nlohmann::json::parse(in, nullptr, false);
    if (a->evaluation.is_discarded()) a->evaluation = nullptr;
  }
  return a;
}

inline nlohmann::json prediction_json(const Prediction& p) {
  return {{"b_out", std::vector<double>(p.b_out.data(), p.b_out.data() + p.b_out.size())},
          {"ci_pred", p.ci_pred},
          {"ci_pre", p.ci_pre}};
}

}  // namespace cranio::pipeline
