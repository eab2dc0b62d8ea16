#pragma once

#include "cranio/surrogate/model.hpp"

namespace cranio::surrogate {

struct CvResult {
  std::vector<Metrics> folds;
  std::vector<std::vector<int>> fold_rows;  // positions in the dataset passed in
  double mean_r2 = 0, sd_r2 = 0;
  double mean_mse = 0, mean_mae = 0;
};

/// Every fold fits its own scalers on its training part only.
inline CvResult kfold_cv(const RegressorSpec& spec, const Dataset& train, int k, std::uint64_t seed) {
  spec.validate();
  CvResult cv;
  cv.fold_rows = kfold_indices(static_cast<int>(train.rows()), k, seed);
  std::vector<char> in_fold(static_cast<std::size_t>(train.rows()));
  for (int f = 0; f < k; ++f) {
    std::fill(in_fold.begin(), in_fold.end(), 0);
    for (int r : cv.fold_rows[static_cast<std::size_t>(f)]) in_fold[static_cast<std::size_t>(r)] = 1;
    std::vector<int> rest;
    for (int r = 0; r < static_cast<int>(train.rows()); ++r)
      if (!in_fold[static_cast<std::size_t>(r)]) rest.push_back(r);
    const auto model = fit(spec, train.subset(rest), seed);
    cv.folds.push_back(evaluate(model, train.subset(cv.fold_rows[static_cast<std::size_t>(f)]), false));
  }
  for (const auto& m : cv.folds) {
    cv.mean_r2 += m.r2 / k;
    cv.mean_mse += m.mse / k;
    cv.mean_mae += m.mae / k;
  }
  for (const auto& m : cv.folds) cv.sd_r2 += (m.r2 - cv.mean_r2) * (m.r2 - cv.mean_r2);
  cv.sd_r2 = std::sqrt(cv.sd_r2 / (k - 1));
  return cv;
}

}  // namespace cranio::surrogate
