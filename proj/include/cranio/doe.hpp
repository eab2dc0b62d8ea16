#pragma once

// Surgical design of experiments: Latin hypercube over the osteotomy ratios
// with truncated-normal marginals, categorical springs, maximin selection
// among several hypercube candidates.

#include "cranio/biomech.hpp"
#include "cranio/util/csv.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace cranio::doe {

using biomech::SpringModel;

class DoeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Range {
  double lo = 0, hi = 1;
  double mid() const { return 0.5 * (lo + hi); }
  double width() const { return hi - lo; }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

// Published parameter bounds, as fractions.
inline constexpr Range kBoundA{0.18, 0.30};
inline constexpr Range kBoundAP{0.47, 0.63};
inline constexpr Range kBoundLAT{0.10, 0.25};

/// Normal(mid, width/6) truncated to the range.
class TruncatedNormal {
 public:
  explicit TruncatedNormal(Range r) : r_(r), n_(r.mid(), r.width() / 6.0) {
    if (!(r.hi > r.lo)) throw DoeError("empty range");
    p_lo_ = boost::math::cdf(n_, r.lo);
    p_hi_ = boost::math::cdf(n_, r.hi);
  }

  double quantile(double u) const {
    const double v = boost::math::quantile(n_, p_lo_ + u * (p_hi_ - p_lo_));
    return std::clamp(v, r_.lo, r_.hi);
  }
  double cdf(double x) const { return (boost::math::cdf(n_, std::clamp(x, r_.lo, r_.hi)) - p_lo_) / (p_hi_ - p_lo_); }
  double mean() const {
    const double a = (r_.lo - n_.mean()) / n_.standard_deviation();
    const double b = (r_.hi - n_.mean()) / n_.standard_deviation();
    const boost::math::normal z;
    return n_.mean() + n_.standard_deviation() * (boost::math::pdf(z, a) - boost::math::pdf(z, b)) /
                           (boost::math::cdf(z, b) - boost::math::cdf(z, a));
  }

 private:
  Range r_;
  boost::math::normal n_;
  double p_lo_ = 0, p_hi_ = 1;
};

/// The three commercial spring models differ in stiffness and free length.
inline std::vector<SpringModel> default_spring_catalog() {
  return {{0.20, 56.0, "S1"}, {0.30, 60.0, "S2"}, {0.45, 64.0, "S3"}};
}

struct ParamSpace {
  Range A = kBoundA;
  Range AP = kBoundAP;
  Range LAT = kBoundLAT;
  std::vector<SpringModel> spring_catalog = default_spring_catalog();
  int candidates = 20;        // hypercube instances compared by maximin
  int max_samples = 100000;   // strata per dimension

  void validate() const {
    auto check = [](const char* name, Range r, Range bound) {
      if (!(r.lo < r.hi)) throw DoeError(std::string(name) + " range is empty");
      if (r.lo < bound.lo || r.hi > bound.hi)
        throw DoeError(std::string(name) + " range [" + util::format_double(r.lo) + ", " +
                       util::format_double(r.hi) + "] exceeds bounds [" + util::format_double(bound.lo) + ", " +
                       util::format_double(bound.hi) + "]");
    };
    check("A", A, kBoundA);
    check("AP", AP, kBoundAP);
    check("LAT", LAT, kBoundLAT);
    if (spring_catalog.empty()) throw DoeError("spring catalog is empty");
    for (const auto& s : spring_catalog) s.validate();
    if (candidates < 1) throw DoeError("need at least one hypercube candidate");
  }
};

struct SurgicalConfig {
  double A = 0.24, AP = 0.55, LAT = 0.175;
  SpringModel front_spring{0.30, 60.0, "S2"}, back_spring{0.30, 60.0, "S2"};  // catalog default

  mesh::OsteotomySpec osteotomy(double notch_diameter = 5.0) const { return {A, AP, LAT, notch_diameter}; }
};

struct Plan {
  std::vector<SurgicalConfig> configs;
  std::vector<std::array<double, 3>> unit;  // hypercube coordinates in [0,1)^3
  std::vector<double> candidate_scores;     // min pairwise distance per candidate
  int chosen = 0;
};

namespace detail {

inline double min_pairwise_distance(const std::vector<std::array<double, 3>>& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      double d = 0;
      for (int k = 0; k < 3; ++k) d += (pts[i][k] - pts[j][k]) * (pts[i][k] - pts[j][k]);
      best = std::min(best, d);
    }
  return std::sqrt(best);
}

}  // namespace detail

inline Plan sample_plan(const ParamSpace& space, int n, std::uint64_t seed) {
  space.validate();
  if (n < 1) throw DoeError("plan size must be at least 1");
  if (n > space.max_samples)
    throw DoeError("plan size " + std::to_string(n) + " exceeds stratification capacity " +
                   std::to_string(space.max_samples));
  const TruncatedNormal mA(space.A), mAP(space.AP), mLAT(space.LAT);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto un = static_cast<std::size_t>(n);

  Plan plan;
  std::vector<std::array<double, 3>> best;
  for (int c = 0; c < space.candidates; ++c) {
    std::vector<std::array<double, 3>> pts(un);
    std::array<std::vector<int>, 3> perm;
    for (auto& p : perm) {
      p.resize(un);
      std::iota(p.begin(), p.end(), 0);
      std::shuffle(p.begin(), p.end(), rng);
    }
    for (std::size_t i = 0; i < un; ++i) {
      // Redraw within the same strata until A < AP.
      for (int tries = 0;; ++tries) {
        for (int k = 0; k < 3; ++k) pts[i][k] = (perm[k][i] + unit(rng)) / n;
        if (mA.quantile(pts[i][0]) < mAP.quantile(pts[i][1])) break;
        if (tries > 1000) throw DoeError("cannot satisfy A < AP within the sampled strata");
      }
    }
    const double score = un > 1 ? detail::min_pairwise_distance(pts) : 0.0;
    plan.candidate_scores.push_back(score);
    if (best.empty() || score > plan.candidate_scores[static_cast<std::size_t>(plan.chosen)]) {
      plan.chosen = c;
      best = std::move(pts);
    }
  }
  // Springs are stratified as well: every catalog entry appears floor(n/C) or
  // ceil(n/C) times, the remainder going to a random subset of entries.
  const std::size_t nc = space.spring_catalog.size();
  auto balanced = [&] {
    const std::size_t offset = std::uniform_int_distribution<std::size_t>(0, nc - 1)(rng);
    std::vector<std::size_t> ids(un);
    for (std::size_t i = 0; i < un; ++i) ids[i] = (i + offset) % nc;
    std::shuffle(ids.begin(), ids.end(), rng);
    return ids;
  };
  const auto front = balanced(), back = balanced();
  for (std::size_t i = 0; i < un; ++i) {
    const auto& u = best[i];
    SurgicalConfig cfg;
    cfg.A = mA.quantile(u[0]);
    cfg.AP = mAP.quantile(u[1]);
    cfg.LAT = mLAT.quantile(u[2]);
    cfg.front_spring = space.spring_catalog[front[i]];
    cfg.back_spring = space.spring_catalog[back[i]];
    plan.configs.push_back(cfg);
  }
  plan.unit = std::move(best);
  return plan;
}

/// Configurations per patient: 80 plus a uniform offset in [-5, 5].
inline int configs_per_patient(std::uint64_t seed, int base = 80, int spread = 5) {
  std::mt19937_64 rng(seed);
  return base + std::uniform_int_distribution<int>(-spread, spread)(rng);
}

inline std::vector<std::string> validate_plan(const std::vector<SurgicalConfig>& plan, const ParamSpace& space) {
  std::vector<std::string> out;
  auto range = [&](std::size_t i, const char* name, double v, Range r) {
    if (!r.contains(v))
      out.push_back("config " + std::to_string(i) + ": " + name + "=" + util::format_double(v) + " outside [" +
                    util::format_double(r.lo) + ", " + util::format_double(r.hi) + "]");
  };
  auto in_catalog = [&](const SpringModel& s) {
    return std::any_of(space.spring_catalog.begin(), space.spring_catalog.end(), [&](const SpringModel& c) {
      return c.id == s.id && c.stiffness == s.stiffness && c.free_length == s.free_length;
    });
  };
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& c = plan[i];
    range(i, "A", c.A, space.A);
    range(i, "AP", c.AP, space.AP);
    range(i, "LAT", c.LAT, space.LAT);
    if (!(c.A < c.AP)) out.push_back("config " + std::to_string(i) + ": A must be less than AP");
    if (!in_catalog(c.front_spring))
      out.push_back("config " + std::to_string(i) + ": front spring '" + c.front_spring.id + "' not in catalog");
    if (!in_catalog(c.back_spring))
      out.push_back("config " + std::to_string(i) + ": back spring '" + c.back_spring.id + "' not in catalog");
  }
  return out;
}

struct PlanRow {
  int patient_id = 0;
  int config_id = 0;
  SurgicalConfig config;
  std::uint64_t seed = 0;
};

inline const std::vector<std::string>& plan_header() {
  static const std::vector<std::string> h = {"patient_id", "config_id", "A",        "AP",       "LAT",   "front_k",
                                             "front_L0",   "back_k",    "back_L0", "front_id", "back_id", "seed"};
  return h;
}

inline void write_plan(const std::filesystem::path& path, const std::vector<PlanRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DoeError("cannot write " + path.string());
  const auto& h = plan_header();
  for (std::size_t i = 0; i < h.size(); ++i) out << (i ? "," : "") << h[i];
  out << '\n';
  for (const auto& r : rows) {
    const auto& c = r.config;
    out << util::csv_row(r.patient_id, r.config_id, c.A, c.AP, c.LAT, c.front_spring.stiffness,
                         c.front_spring.free_length, c.back_spring.stiffness, c.back_spring.free_length,
                         c.front_spring.id, c.back_spring.id, r.seed)
        << '\n';
  }
}

inline std::vector<PlanRow> read_plan(const std::filesystem::path& path) {
  const auto t = util::read_csv(path);
  std::vector<PlanRow> out;
  for (const auto& row : t.rows) {
    auto num = [&](const char* c) { return util::to_double(row[t.column(c)]); };
    PlanRow r;
    r.patient_id = static_cast<int>(num("patient_id"));
    r.config_id = static_cast<int>(num("config_id"));
    r.config.A = num("A");
    r.config.AP = num("AP");
    r.config.LAT = num("LAT");
    r.config.front_spring = {num("front_k"), num("front_L0"), row[t.column("front_id")]};
    r.config.back_spring = {num("back_k"), num("back_L0"), row[t.column("back_id")]};
    r.seed = std::stoull(row[t.column("seed")]);
    out.push_back(r);
  }
  return out;
}

}  // namespace cranio::doe
