#pragma once

#include "cranio/surrogate/dataset.hpp"

#include <iostream>
#include <limits>
#include <optional>

namespace cranio::surrogate {

/// Per-column standardisation, sd with n - 1 in the denominator.
struct ScalerParams {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd sd;
  std::vector<std::string> names;

  Eigen::Index size() const { return mean.size(); }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
    if (X.cols() != mean.size())
      throw SurrogateError("scaler expects " + std::to_string(mean.size()) + " columns, got " +
                           std::to_string(X.cols()));
    return (X.rowwise() - mean).array().rowwise() / sd.array();
  }

  Eigen::MatrixXd inverse(const Eigen::MatrixXd& Z) const {
    if (Z.cols() != mean.size())
      throw SurrogateError("scaler expects " + std::to_string(mean.size()) + " columns, got " +
                           std::to_string(Z.cols()));
    return (Z.array().rowwise() * sd.array()).matrix().rowwise() + mean;
  }

  /// Same scaler with its columns listed in a new order.
  ScalerParams permuted(const std::vector<int>& order) const {
    ScalerParams p;
    p.mean.resize(static_cast<Eigen::Index>(order.size()));
    p.sd.resize(p.mean.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      p.mean[static_cast<Eigen::Index>(i)] = mean[order[i]];
      p.sd[static_cast<Eigen::Index>(i)] = sd[order[i]];
      p.names.push_back(names[static_cast<std::size_t>(order[i])]);
    }
    return p;
  }
};

/// Constant columns are rejected unless `allow_constant`, in which case
/// they get sd = 1 (used for targets, where a constant output is legal).
inline ScalerParams fit_columns(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                                bool allow_constant = false) {
  if (X.rows() < 2) throw SurrogateError("a scaler needs at least two rows");
  if (static_cast<std::size_t>(X.cols()) != names.size()) throw SurrogateError("scaler column names mismatch");
  ScalerParams p;
  p.names = names;
  p.mean = X.colwise().mean();
  p.sd.resize(X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    const double var = (X.col(c).array() - p.mean[c]).square().sum() / static_cast<double>(X.rows() - 1);
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(p.mean[c])))) {
      if (!allow_constant)
        throw SurrogateError("column '" + names[static_cast<std::size_t>(c)] + "' has zero variance");
      p.sd[c] = 1.0;
    } else {
      p.sd[c] = sd;
    }
  }
  return p;
}

/// Feature scaler from a training set; records the access.
inline ScalerParams fit_scaler(const Dataset& train) {
  train.touch("fit_scaler");
  return fit_columns(train.X, train.feature_names);
}

inline Eigen::MatrixXd apply_scaler(const ScalerParams& p, const Eigen::MatrixXd& X) { return p.apply(X); }

struct Metrics {
  double r2 = 0;   // uniform mean over targets with nonzero variance
  double mse = 0;  // mean over all entries
  double mae = 0;
  std::vector<double> r2_per_target;  // NaN for excluded targets
  std::vector<int> excluded_targets;
};

/// R2 per target is 1 - SS_res / SS_tot; targets with zero variance in Y
/// are excluded from the average (and reported).
inline Metrics evaluate(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& Yhat, bool warn = true) {
  if (Y.rows() != Yhat.rows() || Y.cols() != Yhat.cols()) throw SurrogateError("prediction shape mismatch");
  if (Y.size() == 0) throw SurrogateError("no rows to evaluate");
  Metrics m;
  const Eigen::ArrayXXd diff = (Y - Yhat).array();
  m.mse = diff.square().mean();
  m.mae = diff.abs().mean();
  double sum = 0;
  int used = 0;
  for (Eigen::Index t = 0; t < Y.cols(); ++t) {
    const double mu = Y.col(t).mean();
    const double ss_tot = (Y.col(t).array() - mu).square().sum();
    const double ss_res = diff.col(t).square().sum();
    if (!(ss_tot > 1e-24 * std::max(1.0, mu * mu) * static_cast<double>(Y.rows()))) {
      m.r2_per_target.push_back(std::numeric_limits<double>::quiet_NaN());
      m.excluded_targets.push_back(static_cast<int>(t));
      if (warn) std::cerr << "warning: target " << t << " has zero variance; excluded from r2\n";
      continue;
    }
    const double r2 = 1.0 - ss_res / ss_tot;
    m.r2_per_target.push_back(r2);
    sum += r2;
    ++used;
  }
  m.r2 = used ? sum / used : std::numeric_limits<double>::quiet_NaN();
  return m;
}

}  // namespace cranio::surrogate
