#pragma once

#include "cranio/surrogate/dataset.hpp"

#include <json.hpp>

#include <map>
#include <set>
#include <variant>

namespace cranio::surrogate {

enum class Kind { Linear, Tree, Forest, GBoost, Svr };

inline std::string kind_name(Kind k) {
  switch (k) {
    case Kind::Linear: return "LINEAR";
    case Kind::Tree: return "TREE";
    case Kind::Forest: return "FOREST";
    case Kind::GBoost: return "GBOOST";
    case Kind::Svr: return "SVR";
  }
  return "?";
}

inline Kind parse_kind(std::string_view s) {
  for (Kind k : {Kind::Linear, Kind::Tree, Kind::Forest, Kind::GBoost, Kind::Svr})
    if (kind_name(k) == s) return k;
  throw SurrogateError("unknown regressor kind '" + std::string(s) + "'");
}

using ParamValue = std::variant<double, std::string>;

struct RegressorSpec {
  Kind kind = Kind::Linear;
  std::map<std::string, ParamValue> params;

  bool has(const std::string& key) const { return params.count(key) > 0; }

  double num(const std::string& key, double fallback) const {
    const auto it = params.find(key);
    if (it == params.end()) return fallback;
    if (const auto* d = std::get_if<double>(&it->second)) return *d;
    throw SurrogateError("hyperparameter '" + key + "' must be numeric");
  }
  int integer(const std::string& key, int fallback) const {
    const double v = num(key, fallback);
    if (v != std::round(v)) throw SurrogateError("hyperparameter '" + key + "' must be an integer");
    return static_cast<int>(v);
  }
  std::string str(const std::string& key, const std::string& fallback) const {
    const auto it = params.find(key);
    if (it == params.end()) return fallback;
    if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
    throw SurrogateError("hyperparameter '" + key + "' must be a string");
  }

  void validate() const;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["kind"] = kind_name(kind);
    auto& p = j["params"] = nlohmann::json::object();
    for (const auto& [k, v] : params) std::visit([&](const auto& x) { p[k] = x; }, v);
    return j;
  }

  static RegressorSpec from_json(const nlohmann::json& j) {
    RegressorSpec s;
    s.kind = parse_kind(j.at("kind").get<std::string>());
    if (j.contains("params"))
      for (const auto& [k, v] : j.at("params").items()) {
        if (v.is_string())
          s.params[k] = v.get<std::string>();
        else if (v.is_number() || v.is_boolean())
          s.params[k] = v.is_boolean() ? (v.get<bool>() ? 1.0 : 0.0) : v.get<double>();
        else
          throw SurrogateError("hyperparameter '" + k + "' has an unsupported type");
      }
    s.validate();
    return s;
  }

  bool operator==(const RegressorSpec&) const = default;
};

inline const std::set<std::string> kSvrKernels{"linear", "poly", "rbf", "sigmoid"};
inline const std::set<std::string> kGbLosses{"squared_error", "absolute_error", "huber", "quantile"};
inline const std::set<std::string> kGbCriteria{"friedman_mse", "squared_error"};

inline void RegressorSpec::validate() const {
  auto fail = [&](const std::string& msg) { throw SurrogateError(kind_name(kind) + ": " + msg); };
  auto allowed = [&](std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : params) {
      bool ok = false;
      for (const char* a : keys) ok = ok || k == a;
      if (!ok) fail("unknown hyperparameter '" + k + "'");
    }
  };
  auto at_least = [&](const char* key, double lo, double def) {
    if (const double v = num(key, def); !(v >= lo)) fail(std::string(key) + " must be >= " + std::to_string(lo));
  };
  auto tree_keys = [&] {
    if (integer("max_depth", 0) < 0) fail("max_depth must be >= 0 (0 = unlimited)");
    if (integer("min_samples_split", 2) < 2) fail("min_samples_split must be >= 2");
    if (integer("min_samples_leaf", 1) < 1) fail("min_samples_leaf must be >= 1");
    if (const double f = num("max_features", 1.0); !(f > 0 && f <= 1)) fail("max_features must be in (0, 1]");
  };
  switch (kind) {
    case Kind::Linear:
      allowed({});
      break;
    case Kind::Tree:
      allowed({"max_depth", "min_samples_split", "min_samples_leaf", "max_features"});
      tree_keys();
      break;
    case Kind::Forest:
      allowed({"n_estimators", "max_depth", "min_samples_split", "min_samples_leaf", "max_features", "bootstrap"});
      tree_keys();
      if (integer("n_estimators", 100) < 1) fail("n_estimators must be >= 1");
      if (const int b = integer("bootstrap", 1); b != 0 && b != 1) fail("bootstrap must be 0 or 1");
      break;
    case Kind::GBoost: {
      allowed({"n_estimators", "learning_rate", "loss", "criterion", "max_depth", "alpha", "min_samples_split",
               "min_samples_leaf"});
      if (integer("n_estimators", 100) < 1) fail("n_estimators must be >= 1");
      if (!(num("learning_rate", 0.1) > 0)) fail("learning_rate must be > 0");
      if (!kGbLosses.count(str("loss", "squared_error"))) fail("unknown loss '" + str("loss", "") + "'");
      if (!kGbCriteria.count(str("criterion", "friedman_mse"))) fail("unknown criterion '" + str("criterion", "") + "'");
      if (integer("max_depth", 3) < 1) fail("max_depth must be >= 1");
      if (const double a = num("alpha", 0.9); !(a > 0 && a < 1)) fail("alpha must be in (0, 1)");
      if (integer("min_samples_split", 2) < 2) fail("min_samples_split must be >= 2");
      if (integer("min_samples_leaf", 1) < 1) fail("min_samples_leaf must be >= 1");
      break;
    }
    case Kind::Svr: {
      allowed({"kernel", "C", "epsilon", "gamma", "degree", "coef0", "tol", "max_passes"});
      if (!kSvrKernels.count(str("kernel", "rbf"))) fail("unknown kernel '" + str("kernel", "") + "'");
      if (!(num("C", 1.0) > 0)) fail("C must be > 0");
      at_least("epsilon", 0.0, 0.1);
      if (has("gamma")) {
        const auto& g = params.at("gamma");
        if (const auto* s = std::get_if<std::string>(&g)) {
          if (*s != "scale" && *s != "auto") fail("gamma must be 'scale', 'auto' or a positive number");
        } else if (!(std::get<double>(g) > 0)) {
          fail("gamma must be positive");
        }
      }
      if (integer("degree", 3) < 1) fail("degree must be >= 1");
      if (!(num("tol", 1e-3) > 0)) fail("tol must be > 0");
      if (!(num("max_passes", 10) > 0)) fail("max_passes must be > 0");
      break;
    }
  }
}

}  // namespace cranio::surrogate
