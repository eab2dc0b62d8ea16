#pragma once

// Sequential model-based hyperparameter search: random initial design, then
// expected improvement under a Gaussian-process response surface.

#include "cranio/surrogate/cv.hpp"

#include <boost/math/distributions/normal.hpp>

#include <Eigen/Cholesky>

#include <numbers>
#include <optional>

namespace cranio::surrogate {

struct Dimension {
  enum class Type { Real, Integer, Categorical };
  std::string name;
  Type type = Type::Real;
  double lo = 0, hi = 1;
  std::vector<std::string> choices;

  static Dimension real(std::string n, double lo, double hi) { return {std::move(n), Type::Real, lo, hi, {}}; }
  static Dimension integer(std::string n, int lo, int hi) { return {std::move(n), Type::Integer, double(lo), double(hi), {}}; }
  static Dimension categorical(std::string n, std::vector<std::string> c) {
    return {std::move(n), Type::Categorical, 0, 0, std::move(c)};
  }

  int width() const { return type == Type::Categorical ? static_cast<int>(choices.size()) : 1; }

  bool contains(const ParamValue& v) const {
    if (type == Type::Categorical) {
      const auto* s = std::get_if<std::string>(&v);
      return s && std::find(choices.begin(), choices.end(), *s) != choices.end();
    }
    const auto* d = std::get_if<double>(&v);
    return d && *d >= lo && *d <= hi && (type == Type::Real || *d == std::round(*d));
  }
};

using Point = std::vector<ParamValue>;

struct SearchSpace {
  Kind kind = Kind::Svr;
  std::vector<Dimension> dims;
  std::map<std::string, ParamValue> fixed;  // passed through unchanged

  RegressorSpec spec_at(const Point& p) const {
    RegressorSpec s;
    s.kind = kind;
    s.params = fixed;
    for (std::size_t i = 0; i < dims.size(); ++i) s.params[dims[i].name] = p[i];
    return s;
  }

  bool contains(const RegressorSpec& s) const {
    if (s.kind != kind) return false;
    for (const auto& d : dims)
      if (!s.has(d.name) || !d.contains(s.params.at(d.name))) return false;
    return true;
  }
};

/// Search spaces of the tuned model families, all uniform or categorical.
inline SearchSpace default_space(Kind kind) {
  using D = Dimension;
  SearchSpace s;
  s.kind = kind;
  switch (kind) {
    case Kind::Forest:
      s.dims = {D::integer("n_estimators", 10, 150), D::integer("max_depth", 5, 20),
                D::integer("min_samples_split", 2, 10), D::integer("min_samples_leaf", 1, 5)};
      break;
    case Kind::GBoost:
      s.dims = {D::integer("n_estimators", 10, 500), D::real("learning_rate", 0.01, 1.0),
                D::categorical("loss", {"squared_error", "absolute_error", "huber", "quantile"}),
                D::categorical("criterion", {"friedman_mse", "squared_error"})};
      break;
    case Kind::Svr:
      s.dims = {D::integer("degree", 1, 9), D::categorical("gamma", {"scale", "auto"}), D::real("epsilon", 0.0, 5.0),
                D::categorical("kernel", {"linear", "poly", "rbf", "sigmoid"}), D::real("C", 0.01, 5.0)};
      break;
    case Kind::Tree:
      s.dims = {D::integer("max_depth", 2, 30), D::integer("min_samples_split", 2, 10),
                D::integer("min_samples_leaf", 1, 5)};
      break;
    case Kind::Linear:
      throw SurrogateError("LINEAR has no hyperparameters to tune");
  }
  return s;
}

namespace detail {

inline Point sample_point(const std::vector<Dimension>& dims, std::mt19937_64& rng) {
  Point p;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& d : dims) {
    switch (d.type) {
      case Dimension::Type::Real: p.emplace_back(d.lo + (d.hi - d.lo) * u(rng)); break;
      case Dimension::Type::Integer:
        p.emplace_back(static_cast<double>(
            std::uniform_int_distribution<int>(static_cast<int>(d.lo), static_cast<int>(d.hi))(rng)));
        break;
      case Dimension::Type::Categorical:
        p.emplace_back(d.choices[std::uniform_int_distribution<std::size_t>(0, d.choices.size() - 1)(rng)]);
        break;
    }
  }
  return p;
}

/// Gaussian perturbation in normalised coordinates; categoricals are
/// resampled with probability 0.2.
inline Point perturb(const std::vector<Dimension>& dims, const Point& base, double sd, std::mt19937_64& rng) {
  Point p = base;
  std::normal_distribution<double> g(0.0, sd);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto& d = dims[i];
    if (d.type == Dimension::Type::Categorical) {
      if (u(rng) < 0.2)
        p[i] = d.choices[std::uniform_int_distribution<std::size_t>(0, d.choices.size() - 1)(rng)];
      continue;
    }
    double v = std::get<double>(base[i]) + g(rng) * (d.hi - d.lo);
    v = std::clamp(v, d.lo, d.hi);
    if (d.type == Dimension::Type::Integer) v = std::round(v);
    p[i] = v;
  }
  return p;
}

/// Continuous and integer dimensions map to [0, 1]; categoricals to one-hot.
inline Eigen::VectorXd encode(const std::vector<Dimension>& dims, const Point& p) {
  int w = 0;
  for (const auto& d : dims) w += d.width();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(w);
  int k = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto& d = dims[i];
    if (d.type == Dimension::Type::Categorical) {
      const auto& s = std::get<std::string>(p[i]);
      const auto it = std::find(d.choices.begin(), d.choices.end(), s);
      x[k + static_cast<int>(it - d.choices.begin())] = 1.0;
    } else {
      x[k] = d.hi > d.lo ? (std::get<double>(p[i]) - d.lo) / (d.hi - d.lo) : 0.0;
    }
    k += d.width();
  }
  return x;
}

/// Zero-mean GP with squared-exponential ARD kernel and Gaussian noise;
/// hyperparameters by maximum marginal likelihood.
class GaussianProcess {
 public:
  void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    X_ = X;
    y_mean_ = y.mean();
    const double sd = std::sqrt((y.array() - y_mean_).square().sum() / std::max<Eigen::Index>(1, y.size() - 1));
    y_sd_ = sd > 1e-12 ? sd : 1.0;
    y_ = (y.array() - y_mean_) / y_sd_;
    const auto d = X.cols();
    Eigen::VectorXd best;
    double best_lml = -std::numeric_limits<double>::infinity();
    for (double l0 : {0.2, 0.5, 1.5}) {
      Eigen::VectorXd th(d + 2);
      th.head(d).setConstant(std::log(l0));
      th[d] = 0.0;
      th[d + 1] = std::log(0.1);
      th = ascend(th);
      const double v = lml(th, nullptr);
      if (v > best_lml) best_lml = v, best = th;
    }
    set(best);
  }

  /// Posterior mean and sd in the original units.
  std::pair<double, double> predict(const Eigen::VectorXd& x) const {
    Eigen::VectorXd k(X_.rows());
    for (Eigen::Index i = 0; i < X_.rows(); ++i) k[i] = kern(x, X_.row(i).transpose());
    const double mu = k.dot(alpha_);
    const Eigen::VectorXd v = L_.triangularView<Eigen::Lower>().solve(k);
    const double var = std::max(sf2_ - v.squaredNorm(), 1e-12);
    return {y_mean_ + y_sd_ * mu, y_sd_ * std::sqrt(var)};
  }

  const Eigen::VectorXd& length_scales() const { return ell_; }

 private:
  static constexpr double kMinLog = -4.6, kMaxLog = 4.6;  // about [0.01, 100]

  double kern(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return sf2_ * std::exp(-0.5 * ((a - b).array() / ell_.array()).square().sum());
  }

  Eigen::VectorXd clamp(Eigen::VectorXd th) const {
    const auto d = X_.cols();
    for (Eigen::Index i = 0; i < d; ++i) th[i] = std::clamp(th[i], kMinLog, kMaxLog);
    th[d] = std::clamp(th[d], -3.0, 3.0);
    th[d + 1] = std::clamp(th[d + 1], std::log(1e-3), std::log(1.0));
    return th;
  }

  /// Log marginal likelihood and its gradient in log-parameters.
  double lml(const Eigen::VectorXd& th, Eigen::VectorXd* grad) const {
    const auto n = X_.rows(), d = X_.cols();
    const Eigen::ArrayXd ell = th.head(d).array().exp();
    const double sf2 = std::exp(2 * th[d]), sn2 = std::exp(2 * th[d + 1]);
    Eigen::MatrixXd Kf(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j)
        Kf(i, j) = Kf(j, i) = sf2 * std::exp(-0.5 * ((X_.row(i) - X_.row(j)).transpose().array() / ell).square().sum());
    Eigen::MatrixXd K = Kf;
    K.diagonal().array() += sn2 + 1e-10;
    const Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd a = llt.solve(y_);
    double logdet = 0;
    for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(llt.matrixL()(i, i));
    const double v = -0.5 * y_.dot(a) - logdet - 0.5 * static_cast<double>(n) * std::log(2 * std::numbers::pi);
    if (grad) {
      const Eigen::MatrixXd W = a * a.transpose() - llt.solve(Eigen::MatrixXd::Identity(n, n));
      grad->resize(d + 2);
      for (Eigen::Index k = 0; k < d; ++k) {
        double g = 0;
        for (Eigen::Index i = 0; i < n; ++i)
          for (Eigen::Index j = 0; j < n; ++j) {
            const double diff = X_(i, k) - X_(j, k);
            g += W(i, j) * Kf(i, j) * diff * diff / (ell[k] * ell[k]);
          }
        (*grad)[k] = 0.5 * g;
      }
      (*grad)[d] = 0.5 * (W.array() * (2 * Kf).array()).sum();
      (*grad)[d + 1] = 0.5 * W.trace() * 2 * sn2;
    }
    return v;
  }

  Eigen::VectorXd ascend(Eigen::VectorXd th) const {
    th = clamp(th);
    Eigen::VectorXd g;
    double v = lml(th, &g);
    double step = 0.1;
    for (int it = 0; it < 200 && std::isfinite(v); ++it) {
      bool moved = false;
      while (step > 1e-8) {
        const Eigen::VectorXd cand = clamp(th + step * g / std::max(1.0, g.norm()));
        Eigen::VectorXd gc;
        const double vc = lml(cand, &gc);
        if (vc > v) {
          moved = (cand - th).norm() > 1e-9;
          th = cand, v = vc, g = gc;
          step *= 1.5;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    return th;
  }

  void set(const Eigen::VectorXd& th) {
    const auto n = X_.rows(), d = X_.cols();
    ell_ = th.head(d).array().exp();
    sf2_ = std::exp(2 * th[d]);
    const double sn2 = std::exp(2 * th[d + 1]);
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) K(i, j) = kern(X_.row(i).transpose(), X_.row(j).transpose());
    K.diagonal().array() += sn2 + 1e-10;
    const Eigen::LLT<Eigen::MatrixXd> llt(K);
    L_ = llt.matrixL();
    alpha_ = llt.solve(y_);
  }

  Eigen::MatrixXd X_;
  Eigen::VectorXd y_;
  double y_mean_ = 0, y_sd_ = 1;
  Eigen::VectorXd ell_;
  double sf2_ = 1;
  Eigen::MatrixXd L_;
  Eigen::VectorXd alpha_;
};

inline double expected_improvement(double mu, double sd, double best, double xi) {
  if (!(sd > 0)) return std::max(mu - best - xi, 0.0);
  const boost::math::normal_distribution<double> N;
  const double z = (mu - best - xi) / sd;
  return (mu - best - xi) * boost::math::cdf(N, z) + sd * boost::math::pdf(N, z);
}

}  // namespace detail

struct BoSettings {
  int budget = 30;
  int n_init = 10;
  double xi = 0.01;       // EI exploration jitter, in objective units
  int candidates = 2000;  // random EI candidates per proposal
  double floor = -1.0;    // objective values are clipped here before the GP sees them
};

struct BoResult {
  std::vector<Point> points;
  std::vector<double> values;  // raw objective values, NaN for failed evaluations
  std::vector<double> best_so_far;
  std::size_t best = 0;
};

/// Maximises `objective` over the space of `dims`.
inline BoResult bayes_maximize(const std::vector<Dimension>& dims, const std::function<double(const Point&)>& objective,
                               const BoSettings& s, std::uint64_t seed) {
  if (s.n_init < 1) throw SurrogateError("n_init must be >= 1");
  if (s.budget < s.n_init)
    throw SurrogateError("budget (" + std::to_string(s.budget) + ") is smaller than n_init (" +
                         std::to_string(s.n_init) + ")");
  if (dims.empty()) throw SurrogateError("empty search space");
  std::mt19937_64 rng(seed);
  BoResult res;
  std::vector<double> clipped;
  auto record = [&](Point p) {
    double v = std::numeric_limits<double>::quiet_NaN();
    try {
      v = objective(p);
    } catch (const SurrogateError&) {
    }
    res.points.push_back(std::move(p));
    res.values.push_back(v);
    clipped.push_back(std::isfinite(v) ? std::max(v, s.floor) : s.floor);
    const double prev = res.best_so_far.empty() ? -std::numeric_limits<double>::infinity() : res.best_so_far.back();
    if (std::isfinite(v) && v > prev) res.best = res.points.size() - 1;
    res.best_so_far.push_back(std::isfinite(v) ? std::max(prev, v) : prev);
  };
  auto seen = [&](const Point& p) { return std::find(res.points.begin(), res.points.end(), p) != res.points.end(); };

  for (int i = 0; i < s.n_init; ++i) record(detail::sample_point(dims, rng));
  while (static_cast<int>(res.points.size()) < s.budget) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(res.points.size()), detail::encode(dims, res.points[0]).size());
    for (std::size_t i = 0; i < res.points.size(); ++i)
      X.row(static_cast<Eigen::Index>(i)) = detail::encode(dims, res.points[i]).transpose();
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(clipped.data(), static_cast<Eigen::Index>(clipped.size()));
    detail::GaussianProcess gp;
    gp.fit(X, y);
    const double best = y.maxCoeff();

    std::vector<Point> cands;
    for (int c = 0; c < s.candidates; ++c) cands.push_back(detail::sample_point(dims, rng));
    std::vector<std::size_t> order(clipped.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return clipped[a] > clipped[b]; });
    for (std::size_t t = 0; t < std::min<std::size_t>(5, order.size()); ++t)
      for (double sd : {0.02, 0.1})
        for (int c = 0; c < 50; ++c) cands.push_back(detail::perturb(dims, res.points[order[t]], sd, rng));

    double best_ei = -1;
    std::optional<Point> next;
    for (auto& c : cands) {
      if (seen(c)) continue;
      const auto [mu, sd] = gp.predict(detail::encode(dims, c));
      const double ei = detail::expected_improvement(mu, sd, best, s.xi);
      if (ei > best_ei) best_ei = ei, next = c;
    }
    record(next ? *next : detail::sample_point(dims, rng));
  }
  return res;
}

struct TuneSettings {
  BoSettings bo;
  int folds = 5;
};

struct TraceEntry {
  RegressorSpec spec;
  double score = 0;  // mean CV r2
  double best_so_far = 0;
  bool initial = false;
};

struct TuneResult {
  RegressorSpec best;
  double best_score = 0;
  std::vector<TraceEntry> trace;
};

/// Objective: mean k-fold CV r2 on the training set.
inline TuneResult tune(const SearchSpace& space, const Dataset& train, const TuneSettings& settings,
                       std::uint64_t seed) {
  train.touch("tune");
  const std::uint64_t cv_seed = util::derive_seed(seed, 11);
  const auto bo = bayes_maximize(
      space.dims,
      [&](const Point& p) {
        const double v = kfold_cv(space.spec_at(p), train, settings.folds, cv_seed).mean_r2;
        if (!std::isfinite(v)) throw SurrogateError("non-finite CV score");
        return v;
      },
      settings.bo, util::derive_seed(seed, 12));
  TuneResult r;
  for (std::size_t i = 0; i < bo.points.size(); ++i)
    r.trace.push_back({space.spec_at(bo.points[i]), bo.values[i], bo.best_so_far[i],
                       static_cast<int>(i) < settings.bo.n_init});
  if (!std::isfinite(bo.best_so_far.back())) throw SurrogateError("every tuner evaluation failed");
  r.best = space.spec_at(bo.points[bo.best]);
  r.best_score = bo.values[bo.best];
  return r;
}

}  // namespace cranio::surrogate
