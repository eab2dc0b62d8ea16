#pragma once

// Regression trees grown by variance reduction on presorted columns.

#include "cranio/surrogate/dataset.hpp"
#include "cranio/util/binio.hpp"

namespace cranio::surrogate {

struct TreeParams {
  int max_depth = 0;  // 0 = grow until pure or too small
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  double max_features = 1.0;  // fraction of features tried per split
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0;
  int left = -1, right = -1;
  double value = 0;
};

/// Row orders of every column by ascending value. Computed once per
/// feature matrix and shared by all trees grown on it.
struct SortedColumns {
  std::vector<std::vector<int>> order;

  SortedColumns() = default;
  explicit SortedColumns(const Eigen::MatrixXd& X) : order(static_cast<std::size_t>(X.cols())) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      auto& o = order[static_cast<std::size_t>(c)];
      o.resize(static_cast<std::size_t>(X.rows()));
      std::iota(o.begin(), o.end(), 0);
      std::stable_sort(o.begin(), o.end(), [&](int a, int b) { return X(a, c) < X(b, c); });
    }
  }
};

class RegressionTree {
 public:
  std::vector<TreeNode> nodes;

  template <typename Row>
  int leaf(const Row& x) const {
    int n = 0;
    while (nodes[static_cast<std::size_t>(n)].feature >= 0) {
      const auto& nd = nodes[static_cast<std::size_t>(n)];
      n = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return n;
  }
  template <typename Row>
  double predict(const Row& x) const {
    return nodes[static_cast<std::size_t>(leaf(x))].value;
  }

  int depth() const {
    std::vector<std::pair<int, int>> stack{{0, 0}};
    int d = 0;
    while (!stack.empty()) {
      auto [n, k] = stack.back();
      stack.pop_back();
      d = std::max(d, k);
      const auto& nd = nodes[static_cast<std::size_t>(n)];
      if (nd.feature >= 0) {
        stack.emplace_back(nd.left, k + 1);
        stack.emplace_back(nd.right, k + 1);
      }
    }
    return d;
  }

  void write(util::BinaryWriter& w) const {
    w.u64(nodes.size());
    for (const auto& n : nodes) {
      w.pod(static_cast<std::int32_t>(n.feature));
      w.f64(n.threshold);
      w.pod(static_cast<std::int32_t>(n.left));
      w.pod(static_cast<std::int32_t>(n.right));
      w.f64(n.value);
    }
  }
  static RegressionTree read(util::BinaryReader& r) {
    RegressionTree t;
    t.nodes.resize(r.u64());
    for (auto& n : t.nodes) {
      n.feature = r.pod<std::int32_t>();
      n.threshold = r.f64();
      n.left = r.pod<std::int32_t>();
      n.right = r.pod<std::int32_t>();
      n.value = r.f64();
    }
    for (const auto& n : t.nodes)
      if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || static_cast<std::size_t>(std::max(n.left, n.right)) >= t.nodes.size()))
        throw util::FormatError("corrupt tree node");
    if (t.nodes.empty()) throw util::FormatError("empty tree");
    return t;
  }
};

namespace detail {

class TreeGrower {
 public:
  TreeGrower(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<double>& w,
             const SortedColumns& sorted, const TreeParams& p, std::mt19937_64& rng)
      : X_(X), y_(y), w_(w), p_(p), rng_(rng), left_(static_cast<std::size_t>(X.rows()), 0) {
    cols_.resize(sorted.order.size());
    for (std::size_t f = 0; f < cols_.size(); ++f) {
      cols_[f].reserve(sorted.order[f].size());
      for (int r : sorted.order[f])
        if (w_[static_cast<std::size_t>(r)] > 0) cols_[f].push_back(r);
    }
    buf_.resize(cols_.empty() ? 0 : cols_[0].size());
    features_.resize(cols_.size());
    std::iota(features_.begin(), features_.end(), 0);
  }

  RegressionTree grow() {
    if (cols_.empty() || cols_[0].empty()) throw SurrogateError("cannot grow a tree on zero rows");
    build(0, static_cast<int>(cols_[0].size()), 0);
    return std::move(tree_);
  }

 private:
  int build(int lo, int hi, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    double W = 0, S = 0, Q = 0;
    for (int i = lo; i < hi; ++i) {
      const int r = cols_[0][static_cast<std::size_t>(i)];
      const double wi = w_[static_cast<std::size_t>(r)], yi = y_[r];
      W += wi;
      S += wi * yi;
      Q += wi * yi * yi;
    }
    const double mean = S / W;
    tree_.nodes[static_cast<std::size_t>(id)].value = mean;
    const int n = hi - lo;
    const double var = Q / W - mean * mean;
    if ((p_.max_depth > 0 && depth >= p_.max_depth) || n < p_.min_samples_split || n < 2 * p_.min_samples_leaf ||
        var <= 1e-14 * std::max(1.0, mean * mean))
      return id;

    // candidate features
    int n_try = static_cast<int>(features_.size());
    if (p_.max_features < 1.0) {
      n_try = std::max(1, static_cast<int>(p_.max_features * static_cast<double>(features_.size())));
      for (int k = 0; k < n_try; ++k) {
        std::uniform_int_distribution<int> pick(k, static_cast<int>(features_.size()) - 1);
        std::swap(features_[static_cast<std::size_t>(k)], features_[static_cast<std::size_t>(pick(rng_))]);
      }
    }
    std::vector<int> tried(features_.begin(), features_.begin() + n_try);
    std::sort(tried.begin(), tried.end());

    const double parent = S * S / W;
    double best = parent + 1e-12 * std::abs(parent) + 1e-300;
    int best_f = -1, best_pos = -1;
    double best_thr = 0;
    for (int f : tried) {
      const auto& col = cols_[static_cast<std::size_t>(f)];
      double wl = 0, sl = 0;
      for (int i = lo; i < hi - 1; ++i) {
        const int r = col[static_cast<std::size_t>(i)];
        wl += w_[static_cast<std::size_t>(r)];
        sl += w_[static_cast<std::size_t>(r)] * y_[r];
        const int nl = i - lo + 1;
        if (nl < p_.min_samples_leaf) continue;
        if (n - nl < p_.min_samples_leaf) break;
        const double xa = X_(r, f), xb = X_(col[static_cast<std::size_t>(i) + 1], f);
        if (!(xb > xa)) continue;
        const double wr = W - wl, sr = S - sl;
        const double gain = sl * sl / wl + sr * sr / wr;
        if (gain > best) {
          best = gain;
          best_f = f;
          best_pos = nl;
          best_thr = 0.5 * (xa + xb);
          if (!(best_thr < xb)) best_thr = xa;
        }
      }
    }
    if (best_f < 0) return id;

    const auto& bcol = cols_[static_cast<std::size_t>(best_f)];
    for (int i = lo; i < hi; ++i) left_[static_cast<std::size_t>(bcol[static_cast<std::size_t>(i)])] = i - lo < best_pos;
    for (auto& col : cols_) {
      int a = 0, b = 0;
      for (int i = lo; i < hi; ++i) {
        const int r = col[static_cast<std::size_t>(i)];
        if (left_[static_cast<std::size_t>(r)])
          col[static_cast<std::size_t>(lo + a++)] = r;
        else
          buf_[static_cast<std::size_t>(b++)] = r;
      }
      std::copy(buf_.begin(), buf_.begin() + b, col.begin() + lo + a);
    }
    const int mid = lo + best_pos;
    const int l = build(lo, mid, depth + 1);
    const int r = build(mid, hi, depth + 1);
    auto& nd = tree_.nodes[static_cast<std::size_t>(id)];
    nd.feature = best_f;
    nd.threshold = best_thr;
    nd.left = l;
    nd.right = r;
    return id;
  }

  const Eigen::MatrixXd& X_;
  const Eigen::VectorXd& y_;
  const std::vector<double>& w_;
  TreeParams p_;
  std::mt19937_64& rng_;
  std::vector<std::vector<int>> cols_;
  std::vector<int> buf_;
  std::vector<char> left_;
  std::vector<int> features_;
  RegressionTree tree_;
};

}  // namespace detail

/// Rows with weight 0 are left out; integer weights act as repeated rows.
inline RegressionTree grow_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<double>& w,
                                const SortedColumns& sorted, const TreeParams& p, std::mt19937_64& rng) {
  if (y.size() != X.rows() || w.size() != static_cast<std::size_t>(X.rows()))
    throw SurrogateError("tree inputs have inconsistent row counts");
  return detail::TreeGrower(X, y, w, sorted, p, rng).grow();
}

inline RegressionTree grow_tree(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TreeParams& p = {},
                                std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  return grow_tree(X, y, std::vector<double>(static_cast<std::size_t>(X.rows()), 1.0), SortedColumns(X), p, rng);
}

}  // namespace cranio::surrogate
