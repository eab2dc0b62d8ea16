#pragma once

// Epsilon-insensitive support vector regression, dual solved by SMO with
// second-order working set selection (the LIBSVM formulation: 2l bounded
// variables alpha, alpha*, one equality constraint).

#include "cranio/surrogate/dataset.hpp"
#include "cranio/util/binio.hpp"

#include <cmath>
#include <limits>

namespace cranio::surrogate {

enum class KernelType { Linear, Poly, Rbf, Sigmoid };

inline KernelType parse_kernel(std::string_view s) {
  if (s == "linear") return KernelType::Linear;
  if (s == "poly") return KernelType::Poly;
  if (s == "rbf") return KernelType::Rbf;
  if (s == "sigmoid") return KernelType::Sigmoid;
  throw SurrogateError("unknown kernel '" + std::string(s) + "'");
}

inline std::string kernel_name(KernelType k) {
  switch (k) {
    case KernelType::Linear: return "linear";
    case KernelType::Poly: return "poly";
    case KernelType::Rbf: return "rbf";
    case KernelType::Sigmoid: return "sigmoid";
  }
  return "?";
}

struct Kernel {
  KernelType type = KernelType::Rbf;
  double gamma = 1.0;
  int degree = 3;
  double coef0 = 0.0;

  double from_dot(double dot, double sq_a, double sq_b) const {
    switch (type) {
      case KernelType::Linear: return dot;
      case KernelType::Poly: return std::pow(gamma * dot + coef0, degree);
      case KernelType::Rbf: return std::exp(-gamma * std::max(sq_a + sq_b - 2 * dot, 0.0));
      case KernelType::Sigmoid: return std::tanh(gamma * dot + coef0);
    }
    return 0;
  }

  /// Gram matrix K(A_i, B_j).
  Eigen::MatrixXd matrix(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) const {
    Eigen::MatrixXd K = A * B.transpose();
    const Eigen::VectorXd sa = A.rowwise().squaredNorm(), sb = B.rowwise().squaredNorm();
    for (Eigen::Index j = 0; j < K.cols(); ++j)
      for (Eigen::Index i = 0; i < K.rows(); ++i) K(i, j) = from_dot(K(i, j), sa[i], sb[j]);
    return K;
  }
};

/// gamma = "auto" -> 1 / n_features; "scale" -> 1 / (n_features * var(X)),
/// var over all entries of the (scaled) training matrix.
inline double resolve_gamma(const std::string& mode, const Eigen::MatrixXd& X) {
  const double nf = static_cast<double>(X.cols());
  if (mode == "auto") return 1.0 / nf;
  if (mode == "scale") {
    const double mu = X.mean();
    const double var = (X.array() - mu).square().mean();
    return var > 0 ? 1.0 / (nf * var) : 1.0;
  }
  throw SurrogateError("gamma must be 'scale', 'auto' or a positive number");
}

struct SvrSettings {
  double C = 1.0;
  double epsilon = 0.1;
  double tol = 1e-3;        // maximal KKT violation at the stopping point
  double max_passes = 10;   // iteration cap = max_passes * l
};

struct SvrFit {
  Eigen::VectorXd coef;  // alpha - alpha*, one per training row
  double rho = 0;        // prediction = sum coef_i K(x_i, x) - rho
  int iterations = 0;
  bool converged = false;
};

/// Solves the dual for one target, given the full training kernel matrix.
inline SvrFit solve_svr(const Eigen::MatrixXd& K, const Eigen::VectorXd& z, const SvrSettings& s) {
  constexpr double kTau = 1e-12;
  const Eigen::Index l = K.rows();
  if (K.cols() != l || z.size() != l) throw SurrogateError("kernel matrix and targets disagree");
  if (!(s.C > 0) || !(s.epsilon >= 0)) throw SurrogateError("invalid SVR settings");
  const Eigen::Index n = 2 * l;
  std::vector<double> alpha(static_cast<std::size_t>(n), 0.0), G(static_cast<std::size_t>(n));
  std::vector<signed char> y(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < l; ++i) {
    y[static_cast<std::size_t>(i)] = 1;
    y[static_cast<std::size_t>(i + l)] = -1;
    G[static_cast<std::size_t>(i)] = s.epsilon - z[i];
    G[static_cast<std::size_t>(i + l)] = s.epsilon + z[i];
  }
  const double C = s.C;
  auto upper = [&](Eigen::Index t) { return alpha[static_cast<std::size_t>(t)] >= C; };
  auto lower = [&](Eigen::Index t) { return alpha[static_cast<std::size_t>(t)] <= 0; };
  auto Q = [&](Eigen::Index a, Eigen::Index b) {
    return static_cast<double>(y[static_cast<std::size_t>(a)] * y[static_cast<std::size_t>(b)]) * K(a % l, b % l);
  };
  auto QD = [&](Eigen::Index a) { return K(a % l, a % l); };

  SvrFit fit;
  const long max_iter = std::max<long>(10000, static_cast<long>(s.max_passes * static_cast<double>(l)));
  for (;;) {
    if (fit.iterations >= max_iter) break;
    // working set: maximal violating i, then j by second-order gain
    double Gmax = -std::numeric_limits<double>::infinity(), Gmax2 = Gmax;
    Eigen::Index i = -1, j = -1;
    for (Eigen::Index t = 0; t < n; ++t) {
      const double g = G[static_cast<std::size_t>(t)];
      if (y[static_cast<std::size_t>(t)] == 1) {
        if (!upper(t) && -g >= Gmax) Gmax = -g, i = t;
      } else if (!lower(t) && g >= Gmax) {
        Gmax = g, i = t;
      }
    }
    if (i < 0) {
      fit.converged = true;
      break;
    }
    const double yi = y[static_cast<std::size_t>(i)];
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      const double g = G[static_cast<std::size_t>(t)];
      double diff;
      double quad;
      if (y[static_cast<std::size_t>(t)] == 1) {
        if (lower(t)) continue;
        Gmax2 = std::max(Gmax2, g);
        diff = Gmax + g;
        if (diff <= 0) continue;
        quad = QD(i) + QD(t) - 2.0 * yi * Q(i, t);
      } else {
        if (upper(t)) continue;
        Gmax2 = std::max(Gmax2, -g);
        diff = Gmax - g;
        if (diff <= 0) continue;
        quad = QD(i) + QD(t) + 2.0 * yi * Q(i, t);
      }
      const double obj = -(diff * diff) / (quad > 0 ? quad : kTau);
      if (obj <= best) best = obj, j = t;
    }
    if (Gmax + Gmax2 < s.tol || j < 0) {
      fit.converged = true;
      break;
    }
    ++fit.iterations;

    auto& ai = alpha[static_cast<std::size_t>(i)];
    auto& aj = alpha[static_cast<std::size_t>(j)];
    const double old_i = ai, old_j = aj;
    const double Gi = G[static_cast<std::size_t>(i)], Gj = G[static_cast<std::size_t>(j)];
    const double Qij = Q(i, j);
    if (y[static_cast<std::size_t>(i)] != y[static_cast<std::size_t>(j)]) {
      double quad = QD(i) + QD(j) + 2 * Qij;
      if (quad <= 0) quad = kTau;
      const double delta = (-Gi - Gj) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0) {
        if (aj < 0) aj = 0, ai = diff;
      } else if (ai < 0) {
        ai = 0, aj = -diff;
      }
      if (diff > 0) {
        if (ai > C) ai = C, aj = C - diff;
      } else if (aj > C) {
        aj = C, ai = C + diff;
      }
    } else {
      double quad = QD(i) + QD(j) - 2 * Qij;
      if (quad <= 0) quad = kTau;
      const double delta = (Gi - Gj) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (sum > C) {
        if (ai > C) ai = C, aj = sum - C;
      } else if (aj < 0) {
        aj = 0, ai = sum;
      }
      if (sum > C) {
        if (aj > C) aj = C, ai = sum - C;
      } else if (ai < 0) {
        ai = 0, aj = sum;
      }
    }
    const double di = ai - old_i, dj = aj - old_j;
    const double yid = y[static_cast<std::size_t>(i)] * di, yjd = y[static_cast<std::size_t>(j)] * dj;
    const auto ki = K.col(i % l), kj = K.col(j % l);  // K is symmetric
    for (Eigen::Index t = 0; t < l; ++t) {
      const double u = ki[t] * yid + kj[t] * yjd;
      G[static_cast<std::size_t>(t)] += u;
      G[static_cast<std::size_t>(t + l)] -= u;
    }
  }

  // bias from free variables, else midpoint of the feasible interval
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0;
  int nr_free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yG = y[static_cast<std::size_t>(t)] * G[static_cast<std::size_t>(t)];
    if (upper(t)) {
      if (y[static_cast<std::size_t>(t)] == -1) ub = std::min(ub, yG);
      else lb = std::max(lb, yG);
    } else if (lower(t)) {
      if (y[static_cast<std::size_t>(t)] == 1) ub = std::min(ub, yG);
      else lb = std::max(lb, yG);
    } else {
      ++nr_free;
      sum_free += yG;
    }
  }
  fit.rho = nr_free > 0 ? sum_free / nr_free : (ub + lb) / 2;
  fit.coef.resize(l);
  for (Eigen::Index t = 0; t < l; ++t)
    fit.coef[t] = alpha[static_cast<std::size_t>(t)] - alpha[static_cast<std::size_t>(t + l)];
  return fit;
}

/// Fitted SVR for one target: support vectors and their coefficients.
struct SvrModel {
  Kernel kernel;
  Eigen::MatrixXd support;  // n_sv x features
  Eigen::VectorXd coef;
  double rho = 0;
  Eigen::VectorXd sq;  // squared norms of the support vectors

  void finalize() { sq = support.rowwise().squaredNorm(); }

  template <typename Row>
  double predict(const Row& x) const {
    const double sx = x.squaredNorm();
    double s = -rho;
    for (Eigen::Index i = 0; i < support.rows(); ++i)
      s += coef[i] * kernel.from_dot(support.row(i).dot(x), sq[i], sx);
    return s;
  }

  static SvrModel from_fit(const Kernel& k, const Eigen::MatrixXd& X, const SvrFit& f) {
    SvrModel m;
    m.kernel = k;
    m.rho = f.rho;
    std::vector<Eigen::Index> sv;
    for (Eigen::Index i = 0; i < f.coef.size(); ++i)
      if (f.coef[i] != 0) sv.push_back(i);
    m.support.resize(static_cast<Eigen::Index>(sv.size()), X.cols());
    m.coef.resize(static_cast<Eigen::Index>(sv.size()));
    for (std::size_t r = 0; r < sv.size(); ++r) {
      m.support.row(static_cast<Eigen::Index>(r)) = X.row(sv[r]);
      m.coef[static_cast<Eigen::Index>(r)] = f.coef[sv[r]];
    }
    m.finalize();
    return m;
  }
};

}  // namespace cranio::surrogate
