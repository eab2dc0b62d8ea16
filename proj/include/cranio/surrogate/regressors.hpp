#pragma once

// Single-target regressors and the multi-target fitting entry point.
// Inputs are already standardised; each target is fitted independently,
// but expensive preparation (column sort orders, the SVR kernel matrix) is
// computed once per feature matrix and shared across targets.

#include "cranio/surrogate/spec.hpp"
#include "cranio/surrogate/svr.hpp"
#include "cranio/surrogate/tree.hpp"
#include "cranio/util/hash.hpp"

#include <Eigen/QR>

#include <memory>

namespace cranio::surrogate {

class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual double predict_row(const Eigen::RowVectorXd& x) const = 0;
  virtual void write(util::BinaryWriter& w) const = 0;

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd out(X.rows());
    Eigen::RowVectorXd row;
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      row = X.row(r);
      out[r] = predict_row(row);
    }
    return out;
  }
};

using RegressorPtr = std::unique_ptr<Regressor>;

class LinearRegressor : public Regressor {
 public:
  Eigen::VectorXd w;
  double b = 0;

  static LinearRegressor fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    Eigen::MatrixXd A(X.rows(), X.cols() + 1);
    A.leftCols(X.cols()) = X;
    A.col(X.cols()).setOnes();
    const Eigen::VectorXd sol = A.colPivHouseholderQr().solve(y);
    LinearRegressor r;
    r.w = sol.head(X.cols());
    r.b = sol[X.cols()];
    return r;
  }
  double predict_row(const Eigen::RowVectorXd& x) const override { return x.dot(w) + b; }
  void write(util::BinaryWriter& out) const override {
    out.vec(w);
    out.f64(b);
  }
  static LinearRegressor read(util::BinaryReader& in) {
    LinearRegressor r;
    r.w = in.vec();
    r.b = in.f64();
    return r;
  }
};

class TreeRegressor : public Regressor {
 public:
  RegressionTree tree;
  double predict_row(const Eigen::RowVectorXd& x) const override { return tree.predict(x); }
  void write(util::BinaryWriter& out) const override { tree.write(out); }
};

class ForestRegressor : public Regressor {
 public:
  std::vector<RegressionTree> trees;
  double predict_row(const Eigen::RowVectorXd& x) const override {
    double s = 0;
    for (const auto& t : trees) s += t.predict(x);
    return s / static_cast<double>(trees.size());
  }
  void write(util::BinaryWriter& out) const override {
    out.u64(trees.size());
    for (const auto& t : trees) t.write(out);
  }
  static ForestRegressor read(util::BinaryReader& in) {
    ForestRegressor f;
    f.trees.resize(in.u64());
    for (auto& t : f.trees) t = RegressionTree::read(in);
    if (f.trees.empty()) throw util::FormatError("forest without trees");
    return f;
  }
};

class BoostRegressor : public Regressor {
 public:
  double init = 0;
  double learning_rate = 0.1;
  std::vector<RegressionTree> trees;
  double predict_row(const Eigen::RowVectorXd& x) const override {
    double s = init;
    for (const auto& t : trees) s += learning_rate * t.predict(x);
    return s;
  }
  void write(util::BinaryWriter& out) const override {
    out.f64(init);
    out.f64(learning_rate);
    out.u64(trees.size());
    for (const auto& t : trees) t.write(out);
  }
  static BoostRegressor read(util::BinaryReader& in) {
    BoostRegressor b;
    b.init = in.f64();
    b.learning_rate = in.f64();
    b.trees.resize(in.u64());
    for (auto& t : b.trees) t = RegressionTree::read(in);
    return b;
  }
};

class SvrRegressor : public Regressor {
 public:
  SvrModel model;
  int iterations = 0;
  bool converged = true;
  double predict_row(const Eigen::RowVectorXd& x) const override { return model.predict(x); }
  void write(util::BinaryWriter& out) const override {
    out.u32(static_cast<std::uint32_t>(model.kernel.type));
    out.f64(model.kernel.gamma);
    out.pod(static_cast<std::int32_t>(model.kernel.degree));
    out.f64(model.kernel.coef0);
    out.f64(model.rho);
    out.mat(model.support);
    out.vec(model.coef);
  }
  static SvrRegressor read(util::BinaryReader& in) {
    SvrRegressor r;
    const auto t = in.u32();
    if (t > 3) throw util::FormatError("unknown kernel id " + std::to_string(t));
    r.model.kernel.type = static_cast<KernelType>(t);
    r.model.kernel.gamma = in.f64();
    r.model.kernel.degree = in.pod<std::int32_t>();
    r.model.kernel.coef0 = in.f64();
    r.model.rho = in.f64();
    r.model.support = in.mat();
    r.model.coef = in.vec();
    if (r.model.coef.size() != r.model.support.rows()) throw util::FormatError("SVR coefficient count mismatch");
    r.model.finalize();
    return r;
  }
};

namespace detail {

inline TreeParams tree_params(const RegressorSpec& s, int default_depth) {
  TreeParams p;
  p.max_depth = s.integer("max_depth", default_depth);
  p.min_samples_split = s.integer("min_samples_split", 2);
  p.min_samples_leaf = s.integer("min_samples_leaf", 1);
  p.max_features = s.has("max_features") ? s.num("max_features", 1.0) : 1.0;
  return p;
}

/// Quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline BoostRegressor fit_boost(const RegressorSpec& s, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                const SortedColumns& sorted, std::uint64_t seed) {
  const std::string loss = s.str("loss", "squared_error");
  const double alpha = s.num("alpha", 0.9);
  const int n_est = s.integer("n_estimators", 100);
  const TreeParams tp = tree_params(s, 3);
  const auto n = static_cast<std::size_t>(y.size());
  std::vector<double> yv(y.data(), y.data() + y.size());

  BoostRegressor b;
  b.learning_rate = s.num("learning_rate", 0.1);
  if (loss == "squared_error") b.init = y.mean();
  else if (loss == "quantile") b.init = quantile(yv, alpha);
  else b.init = quantile(yv, 0.5);

  Eigen::VectorXd F = Eigen::VectorXd::Constant(y.size(), b.init), r(y.size());
  const std::vector<double> ones(n, 1.0);
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> leaf_diffs;
  for (int m = 0; m < n_est; ++m) {
    const Eigen::VectorXd diff = y - F;
    double delta = 0;
    if (loss == "squared_error") {
      r = diff;
    } else if (loss == "absolute_error") {
      r = diff.unaryExpr([](double d) { return d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0; });
    } else if (loss == "huber") {
      std::vector<double> ad(n);
      for (std::size_t i = 0; i < n; ++i) ad[i] = std::abs(diff[static_cast<Eigen::Index>(i)]);
      delta = quantile(ad, alpha);
      r = diff.unaryExpr([delta](double d) { return std::abs(d) <= delta ? d : (d > 0 ? delta : -delta); });
    } else {
      r = diff.unaryExpr([alpha](double d) { return d > 0 ? alpha : alpha - 1.0; });
    }
    RegressionTree t = grow_tree(X, r, ones, sorted, tp, rng);
    if (loss != "squared_error") {
      // line search per leaf on the original loss
      leaf_diffs.assign(t.nodes.size(), {});
      std::vector<int> leaf_of(n);
      for (std::size_t i = 0; i < n; ++i) {
        leaf_of[i] = t.leaf(X.row(static_cast<Eigen::Index>(i)));
        leaf_diffs[static_cast<std::size_t>(leaf_of[i])].push_back(diff[static_cast<Eigen::Index>(i)]);
      }
      for (std::size_t k = 0; k < t.nodes.size(); ++k) {
        if (t.nodes[k].feature >= 0 || leaf_diffs[k].empty()) continue;
        auto& d = leaf_diffs[k];
        if (loss == "absolute_error") {
          t.nodes[k].value = quantile(d, 0.5);
        } else if (loss == "quantile") {
          t.nodes[k].value = quantile(d, alpha);
        } else {
          const double med = quantile(d, 0.5);
          double corr = 0;
          for (double v : d) {
            const double e = v - med;
            corr += (e > 0 ? 1.0 : e < 0 ? -1.0 : 0.0) * std::min(delta, std::abs(e));
          }
          t.nodes[k].value = med + corr / static_cast<double>(d.size());
        }
      }
    }
    for (Eigen::Index i = 0; i < y.size(); ++i) F[i] += b.learning_rate * t.predict(X.row(i));
    b.trees.push_back(std::move(t));
  }
  return b;
}

}  // namespace detail

/// Fitted settings that depend on the training data (SVR gamma).
struct FitInfo {
  double gamma = 0;
  std::vector<int> svr_iterations;
  int unconverged = 0;
};

/// One regressor per column of Y.
inline std::vector<RegressorPtr> fit_regressors(const RegressorSpec& spec, const Eigen::MatrixXd& X,
                                                const Eigen::MatrixXd& Y, std::uint64_t seed,
                                                FitInfo* info = nullptr) {
  spec.validate();
  if (X.rows() != Y.rows()) throw SurrogateError("X and Y row counts differ");
  if (X.rows() < 2) throw SurrogateError("need at least two training rows");
  std::vector<RegressorPtr> out;
  const auto n = static_cast<std::size_t>(X.rows());
  switch (spec.kind) {
    case Kind::Linear:
      for (Eigen::Index t = 0; t < Y.cols(); ++t)
        out.push_back(std::make_unique<LinearRegressor>(LinearRegressor::fit(X, Y.col(t))));
      break;
    case Kind::Tree: {
      const SortedColumns sorted(X);
      const auto tp = detail::tree_params(spec, 0);
      const std::vector<double> ones(n, 1.0);
      for (Eigen::Index t = 0; t < Y.cols(); ++t) {
        std::mt19937_64 rng(util::derive_seed(util::derive_seed(seed, 1), static_cast<std::uint64_t>(t)));
        auto r = std::make_unique<TreeRegressor>();
        r->tree = grow_tree(X, Y.col(t), ones, sorted, tp, rng);
        out.push_back(std::move(r));
      }
      break;
    }
    case Kind::Forest: {
      const SortedColumns sorted(X);
      const auto tp = detail::tree_params(spec, 0);
      const int n_est = spec.integer("n_estimators", 100);
      const bool bootstrap = spec.integer("bootstrap", 1) == 1;
      // bootstrap draws depend on the tree index only, as in a cloned
      // estimator per target
      std::vector<std::vector<double>> weights(static_cast<std::size_t>(n_est), std::vector<double>(n, 1.0));
      if (bootstrap)
        for (int e = 0; e < n_est; ++e) {
          std::mt19937_64 rng(util::derive_seed(util::derive_seed(seed, 2), static_cast<std::uint64_t>(e)));
          std::uniform_int_distribution<std::size_t> pick(0, n - 1);
          auto& w = weights[static_cast<std::size_t>(e)];
          std::fill(w.begin(), w.end(), 0.0);
          for (std::size_t k = 0; k < n; ++k) w[pick(rng)] += 1.0;
        }
      for (Eigen::Index t = 0; t < Y.cols(); ++t) {
        auto r = std::make_unique<ForestRegressor>();
        const Eigen::VectorXd y = Y.col(t);
        for (int e = 0; e < n_est; ++e) {
          std::mt19937_64 rng(util::derive_seed(util::derive_seed(seed, 3), static_cast<std::uint64_t>(e)));
          r->trees.push_back(grow_tree(X, y, weights[static_cast<std::size_t>(e)], sorted, tp, rng));
        }
        out.push_back(std::move(r));
      }
      break;
    }
    case Kind::GBoost: {
      const SortedColumns sorted(X);
      for (Eigen::Index t = 0; t < Y.cols(); ++t)
        out.push_back(std::make_unique<BoostRegressor>(
            detail::fit_boost(spec, X, Y.col(t), sorted, util::derive_seed(util::derive_seed(seed, 4), static_cast<std::uint64_t>(t)))));
      break;
    }
    case Kind::Svr: {
      Kernel k;
      k.type = parse_kernel(spec.str("kernel", "rbf"));
      if (spec.has("gamma") && std::holds_alternative<double>(spec.params.at("gamma")))
        k.gamma = spec.num("gamma", 1.0);
      else
        k.gamma = resolve_gamma(spec.str("gamma", "scale"), X);
      k.degree = spec.integer("degree", 3);
      k.coef0 = spec.num("coef0", 0.0);
      SvrSettings ss;
      ss.C = spec.num("C", 1.0);
      ss.epsilon = spec.num("epsilon", 0.1);
      ss.tol = spec.num("tol", 1e-3);
      ss.max_passes = spec.num("max_passes", 10);
      const Eigen::MatrixXd K = k.matrix(X, X);
      if (info) info->gamma = k.gamma;
      for (Eigen::Index t = 0; t < Y.cols(); ++t) {
        const auto fit = solve_svr(K, Y.col(t), ss);
        auto r = std::make_unique<SvrRegressor>();
        r->model = SvrModel::from_fit(k, X, fit);
        r->iterations = fit.iterations;
        r->converged = fit.converged;
        if (info) {
          info->svr_iterations.push_back(fit.iterations);
          info->unconverged += fit.converged ? 0 : 1;
        }
        out.push_back(std::move(r));
      }
      break;
    }
  }
  return out;
}

inline RegressorPtr read_regressor(Kind kind, util::BinaryReader& in) {
  switch (kind) {
    case Kind::Linear: return std::make_unique<LinearRegressor>(LinearRegressor::read(in));
    case Kind::Tree: {
      auto r = std::make_unique<TreeRegressor>();
      r->tree = RegressionTree::read(in);
      return r;
    }
    case Kind::Forest: return std::make_unique<ForestRegressor>(ForestRegressor::read(in));
    case Kind::GBoost: return std::make_unique<BoostRegressor>(BoostRegressor::read(in));
    case Kind::Svr: return std::make_unique<SvrRegressor>(SvrRegressor::read(in));
  }
  throw util::FormatError("unknown regressor kind");
}

}  // namespace cranio::surrogate
