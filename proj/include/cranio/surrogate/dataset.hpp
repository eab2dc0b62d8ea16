#pragma once

#include "cranio/util/csv.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace cranio::surrogate {

class SurrogateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Called whenever a fitting routine reads rows of a dataset. Tests install
/// one to prove that held-out rows never reach scalers or the tuner.
using AccessObserver = std::function<void(std::string_view who, const std::vector<int>& row_ids)>;

struct Dataset {
  Eigen::MatrixXd X;  // n x features
  Eigen::MatrixXd Y;  // n x targets
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;
  std::vector<int> row_ids;  // stable identity of each row in the source table
  std::shared_ptr<const AccessObserver> observer;

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index features() const { return X.cols(); }
  Eigen::Index targets() const { return Y.cols(); }

  void touch(std::string_view who) const {
    if (observer && *observer) (*observer)(who, row_ids);
  }

  void validate() const {
    if (X.rows() != Y.rows()) throw SurrogateError("feature and target row counts differ");
    if (static_cast<std::size_t>(X.cols()) != feature_names.size() ||
        static_cast<std::size_t>(Y.cols()) != target_names.size())
      throw SurrogateError("column names do not match matrix widths");
    if (row_ids.size() != static_cast<std::size_t>(X.rows())) throw SurrogateError("row id count mismatch");
    if (!X.allFinite() || !Y.allFinite()) throw SurrogateError("dataset contains missing or non-finite values");
  }

  /// Rows at the given positions, in that order; keeps ids and observer.
  Dataset subset(const std::vector<int>& pos) const {
    Dataset d;
    d.X.resize(static_cast<Eigen::Index>(pos.size()), X.cols());
    d.Y.resize(static_cast<Eigen::Index>(pos.size()), Y.cols());
    for (std::size_t i = 0; i < pos.size(); ++i) {
      d.X.row(static_cast<Eigen::Index>(i)) = X.row(pos[i]);
      d.Y.row(static_cast<Eigen::Index>(i)) = Y.row(pos[i]);
      d.row_ids.push_back(row_ids[static_cast<std::size_t>(pos[i])]);
    }
    d.feature_names = feature_names;
    d.target_names = target_names;
    d.observer = observer;
    return d;
  }
};

inline Dataset make_dataset(Eigen::MatrixXd X, Eigen::MatrixXd Y, std::vector<std::string> feature_names,
                            std::vector<std::string> target_names) {
  Dataset d{std::move(X), std::move(Y), std::move(feature_names), std::move(target_names), {}, nullptr};
  d.row_ids.resize(static_cast<std::size_t>(d.X.rows()));
  std::iota(d.row_ids.begin(), d.row_ids.end(), 0);
  d.validate();
  return d;
}

/// Writes features then targets; the header is the column order.
inline void write_dataset_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw SurrogateError("cannot write " + path.string());
  bool first = true;
  for (const auto& n : d.feature_names) out << (first ? (first = false, "") : ",") << n;
  for (const auto& n : d.target_names) out << ',' << n;
  out << '\n';
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    for (Eigen::Index c = 0; c < d.features(); ++c) out << (c ? "," : "") << util::format_double(d.X(r, c));
    for (Eigen::Index c = 0; c < d.targets(); ++c) out << ',' << util::format_double(d.Y(r, c));
    out << '\n';
  }
}

/// Columns whose name starts with `target_prefix` are targets.
inline Dataset read_dataset_csv(const std::filesystem::path& path, std::string_view target_prefix = "b_out_") {
  const auto t = util::read_csv(path);
  std::vector<std::size_t> fcols, tcols;
  Dataset d;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (t.header[c].rfind(target_prefix, 0) == 0) {
      tcols.push_back(c);
      d.target_names.push_back(t.header[c]);
    } else {
      fcols.push_back(c);
      d.feature_names.push_back(t.header[c]);
    }
  }
  if (tcols.empty()) throw SurrogateError(path.string() + ": no target columns with prefix " + std::string(target_prefix));
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  d.X.resize(n, static_cast<Eigen::Index>(fcols.size()));
  d.Y.resize(n, static_cast<Eigen::Index>(tcols.size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = t.rows[static_cast<std::size_t>(r)];
    for (std::size_t c = 0; c < fcols.size(); ++c) d.X(r, static_cast<Eigen::Index>(c)) = util::to_double(row[fcols[c]]);
    for (std::size_t c = 0; c < tcols.size(); ++c) d.Y(r, static_cast<Eigen::Index>(c)) = util::to_double(row[tcols[c]]);
  }
  d.row_ids.resize(static_cast<std::size_t>(n));
  std::iota(d.row_ids.begin(), d.row_ids.end(), 0);
  d.validate();
  return d;
}

struct Split {
  Dataset train, test;
  std::vector<int> train_pos, test_pos;
};

/// Seeded shuffle; the test part has ceil(fraction * n) rows.
inline Split split(const Dataset& d, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw SurrogateError("test fraction must be in (0, 1)");
  const auto n = static_cast<int>(d.rows());
  const int n_test = static_cast<int>(std::ceil(test_fraction * n));
  if (n_test < 1 || n - n_test < 1)
    throw SurrogateError("too few rows (" + std::to_string(n) + ") for a " + util::format_double(test_fraction) +
                         " split");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  Split s;
  s.test_pos.assign(idx.begin(), idx.begin() + n_test);
  s.train_pos.assign(idx.begin() + n_test, idx.end());
  std::sort(s.test_pos.begin(), s.test_pos.end());
  std::sort(s.train_pos.begin(), s.train_pos.end());
  s.train = d.subset(s.train_pos);
  s.test = d.subset(s.test_pos);
  return s;
}

/// Shuffled k-fold partition; sizes differ by at most one, with the larger
/// folds last.
inline std::vector<std::vector<int>> kfold_indices(int n, int k, std::uint64_t seed) {
  if (k < 2) throw SurrogateError("k-fold needs k >= 2");
  if (n < k) throw SurrogateError("fewer rows (" + std::to_string(n) + ") than folds (" + std::to_string(k) + ")");
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  int pos = 0;
  for (int f = 0; f < k; ++f) {
    const int size = n / k + (f >= k - n % k ? 1 : 0);
    folds[static_cast<std::size_t>(f)].assign(idx.begin() + pos, idx.begin() + pos + size);
    std::sort(folds[static_cast<std::size_t>(f)].begin(), folds[static_cast<std::size_t>(f)].end());
    pos += size;
  }
  return folds;
}

}  // namespace cranio::surrogate
