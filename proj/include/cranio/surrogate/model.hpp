#pragma once

#include "cranio/surrogate/regressors.hpp"
#include "cranio/surrogate/scaler.hpp"

namespace cranio::surrogate {

class DimensionError : public SurrogateError {
 public:
  using SurrogateError::SurrogateError;
};

/// Scalers plus one fitted regressor per target. Targets are standardised
/// before fitting and mapped back on prediction.
struct SurrogateModel {
  RegressorSpec spec;
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;
  ScalerParams x_scaler;
  ScalerParams y_scaler;
  std::vector<std::shared_ptr<const Regressor>> regressors;
  nlohmann::json meta = nlohmann::json::object();  // seed, gamma, metrics, artifact hashes

  Eigen::Index k_in() const { return static_cast<Eigen::Index>(feature_names.size()); }
  Eigen::Index k_out() const { return static_cast<Eigen::Index>(target_names.size()); }

  /// Predictions in standardised target units.
  Eigen::MatrixXd predict_standardized(const Eigen::MatrixXd& X) const {
    if (X.cols() != k_in())
      throw DimensionError("model expects " + std::to_string(k_in()) + " features, got " + std::to_string(X.cols()));
    const Eigen::MatrixXd Z = x_scaler.apply(X);
    Eigen::MatrixXd out(X.rows(), k_out());
    for (Eigen::Index t = 0; t < k_out(); ++t) out.col(t) = regressors[static_cast<std::size_t>(t)]->predict(Z);
    return out;
  }

  Eigen::MatrixXd predict(const Eigen::MatrixXd& X) const { return y_scaler.inverse(predict_standardized(X)); }

  Eigen::RowVectorXd predict_row(const Eigen::RowVectorXd& x) const { return predict(Eigen::MatrixXd(x)).row(0); }
};

inline SurrogateModel fit(const RegressorSpec& spec, const Dataset& train, std::uint64_t seed) {
  spec.validate();
  train.validate();
  SurrogateModel m;
  m.spec = spec;
  m.feature_names = train.feature_names;
  m.target_names = train.target_names;
  m.x_scaler = fit_scaler(train);
  m.y_scaler = fit_columns(train.Y, train.target_names, true);
  FitInfo info;
  auto regs = fit_regressors(spec, m.x_scaler.apply(train.X), m.y_scaler.apply(train.Y), seed, &info);
  for (auto& r : regs) m.regressors.emplace_back(std::move(r));
  m.meta["seed"] = seed;
  m.meta["n_train"] = train.rows();
  if (spec.kind == Kind::Svr) {
    m.meta["gamma_value"] = info.gamma;
    m.meta["gamma_convention"] = "auto = 1/n_features; scale = 1/(n_features * var(X_scaled))";
    m.meta["svr_iterations"] = info.svr_iterations;
    m.meta["svr_unconverged_targets"] = info.unconverged;
  }
  return m;
}

/// Metrics in standardised target units (each target divided by its
/// training sd), so targets with different spreads weigh equally in mse/mae.
inline Metrics evaluate(const SurrogateModel& m, const Dataset& test, bool warn = true) {
  if (test.features() != m.k_in() || test.targets() != m.k_out())
    throw DimensionError("test set has " + std::to_string(test.features()) + "/" + std::to_string(test.targets()) +
                         " columns, model " + std::to_string(m.k_in()) + "/" + std::to_string(m.k_out()));
  return evaluate(m.y_scaler.apply(test.Y), m.predict_standardized(test.X), warn);
}

inline constexpr std::uint32_t kSurrogateVersion = 1;

inline std::string model_bytes(const SurrogateModel& m) {
  util::BinaryWriter w;
  w.magic("CSUR");
  w.u32(kSurrogateVersion);
  nlohmann::json header;
  header["spec"] = m.spec.to_json();
  header["features"] = m.feature_names;
  header["targets"] = m.target_names;
  header["meta"] = m.meta;
  w.str(header.dump());
  w.vec(m.x_scaler.mean.transpose());
  w.vec(m.x_scaler.sd.transpose());
  w.vec(m.y_scaler.mean.transpose());
  w.vec(m.y_scaler.sd.transpose());
  w.u64(m.regressors.size());
  for (const auto& r : m.regressors) r->write(w);
  return w.bytes();
}

inline void save_model(const SurrogateModel& m, const std::filesystem::path& path) {
  util::BinaryWriter w;
  w.magic(model_bytes(m));
  w.save(path);
}

inline SurrogateModel read_model(util::BinaryReader& r) {
  r.expect_magic("CSUR");
  if (const auto v = r.u32(); v != kSurrogateVersion)
    throw util::FormatError("unsupported CSUR version " + std::to_string(v));
  SurrogateModel m;
  const auto header = nlohmann::json::parse(r.str());
  m.spec = RegressorSpec::from_json(header.at("spec"));
  m.feature_names = header.at("features").get<std::vector<std::string>>();
  m.target_names = header.at("targets").get<std::vector<std::string>>();
  m.meta = header.value("meta", nlohmann::json::object());
  m.x_scaler.mean = r.vec().transpose();
  m.x_scaler.sd = r.vec().transpose();
  m.x_scaler.names = m.feature_names;
  m.y_scaler.mean = r.vec().transpose();
  m.y_scaler.sd = r.vec().transpose();
  m.y_scaler.names = m.target_names;
  if (m.x_scaler.size() != m.k_in() || m.y_scaler.size() != m.k_out())
    throw util::FormatError("scaler size does not match column names");
  const auto n = r.u64();
  if (n != m.target_names.size()) throw util::FormatError("regressor count differs from target count");
  for (std::uint64_t i = 0; i < n; ++i) m.regressors.emplace_back(read_regressor(m.spec.kind, r));
  if (!r.at_end()) throw util::FormatError("trailing bytes in CSUR container");
  return m;
}

inline SurrogateModel load_model(const std::filesystem::path& path) {
  auto r = util::BinaryReader::from_file(path);
  return read_model(r);
}

}  // namespace cranio::surrogate
