#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lf2i/io/csv.hpp"
#include "lf2i/learners/spec.hpp"

namespace lf2i::io {

inline constexpr int kConfigSchemaVersion = 1;

/// Invalid configuration. `where` is "line:col" for syntax errors and a JSON
/// pointer for schema errors.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string where, const std::string& msg)
      : std::runtime_error("config " + where + ": " + msg), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

struct SimulatorConfig {
  std::string kind = "gmm";  // gmm | mvg | poisson
  double weight = 0.5;       // gmm
  std::size_t dim = 2;       // mvg
  double gamma = 1.0;        // poisson
  std::size_t grid_points = 51;
  std::vector<double> lower, upper;  // optional box override
};

struct StatisticConfig {
  std::string kind = "acore";  // acore | bff | exact_lrt | exact_bf
  std::size_t grid_points = 101;  // per dim of the maximization / integration grid
  std::size_t mc_draws = 0;       // bff: Monte Carlo denominator when > 0
  std::size_t psi_points = 25;    // nuisance grid per dim for hybrid statistics
};

struct OddsConfig {
  bool oracle = false;
  learners::ClassifierSpec classifier;
  std::size_t B = 5000;
  double p = 0.5;
  std::size_t heldout = 2000;
};

struct CalibrationConfig {
  std::string method = "qr";  // qr | mc | chi2
  std::size_t B_prime = 1000;
  learners::QuantileSpec quantile;
  std::size_t mc_draws_per_point = 1000;
};

struct PValueConfig {
  bool enabled = false;
  std::size_t B_prime = 10000;
  learners::MeanSpec mean = [] {
    learners::MeanSpec s;
    s.kind = "conditional_cdf";
    return s;
  }();
};

struct DiagnosticsConfig {
  bool enabled = true;
  std::size_t B_double_prime = 1000;
  learners::MeanSpec mean = [] {
    learners::MeanSpec s;
    s.kind = "logistic_spline";
    return s;
  }();
  std::size_t report_grid_points = 51;
};

struct ObservedConfig {
  std::vector<double> theta;  // simulate D_obs at theta ...
  std::uint64_t seed = 0;
  std::string csv;  // ... or read it from a file
};

struct SelectionConfig {
  std::vector<learners::ClassifierSpec> candidates;
  std::vector<std::size_t> B_values;
  std::size_t heldout = 5000;
  double plateau_tol = 0.002;
  std::size_t odds_loss_draws = 0;  // > 0 also reports integrated odds loss vs the oracle
};

struct BaselinesConfig {
  std::size_t report_grid_points = 51;
  std::size_t mc_draws_per_point = 1000;
};

struct CheckConfig {
  std::optional<std::pair<double, double>> coverage_mean;
  std::optional<double> cc_fraction_min;
  std::optional<bool> truth_in_set;
};

struct ExperimentConfig {
  std::string name = "experiment";
  SimulatorConfig simulator;
  StatisticConfig statistic;
  OddsConfig odds;
  CalibrationConfig calibration;
  PValueConfig pvalues;
  DiagnosticsConfig diagnostics;
  ObservedConfig observed;
  SelectionConfig selection;
  BaselinesConfig baselines;
  CheckConfig check;
  std::size_t n = 10;
  double alpha = 0.1;
  std::uint64_t seed = 1;
  std::string output_dir;
};

namespace detail {

inline std::string child(const std::string& ptr, const std::string& key) { return ptr + "/" + key; }

inline void only_keys(const nlohmann::json& j, const std::string& ptr, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(ptr.empty() ? "/" : ptr, "expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(child(ptr, k), "unknown key");
}

template <class T>
T get(const nlohmann::json& j, const std::string& ptr, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(child(ptr, key), "expected a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(child(ptr, key), "expected a string");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(child(ptr, key), "expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(child(ptr, key), "expected an integer");
    } else {
      if (!v.is_number()) throw ConfigError(child(ptr, key), "expected a number");
    }
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(child(ptr, key), e.what());
  }
}

inline std::vector<double> get_vector(const nlohmann::json& j, const std::string& ptr, const char* key) {
  if (!j.contains(key)) return {};
  const auto& v = j.at(key);
  if (!v.is_array()) throw ConfigError(child(ptr, key), "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError(child(ptr, key) + "/" + std::to_string(i), "expected a number");
    out.push_back(v[i].get<double>());
  }
  return out;
}

inline void require(bool ok, const std::string& ptr, const std::string& msg) {
  if (!ok) throw ConfigError(ptr, msg);
}

inline void one_of(const std::string& value, const std::string& ptr, std::initializer_list<const char*> options) {
  for (const char* o : options)
    if (value == o) return;
  std::string list;
  for (const char* o : options) list += (list.empty() ? "" : ", ") + std::string(o);
  throw ConfigError(ptr, "'" + value + "' is not one of: " + list);
}

inline learners::TreeParams parse_trees(const nlohmann::json& j, const std::string& ptr, learners::TreeParams t) {
  only_keys(j, ptr,
            {"max_depth", "rounds", "learning_rate", "subsample", "min_samples_leaf", "l2", "max_bins",
             "validation_fraction", "patience", "one_se_rule"});
  t.max_depth = get(j, ptr, "max_depth", t.max_depth);
  t.rounds = get(j, ptr, "rounds", t.rounds);
  t.learning_rate = get(j, ptr, "learning_rate", t.learning_rate);
  t.subsample = get(j, ptr, "subsample", t.subsample);
  t.min_samples_leaf = get(j, ptr, "min_samples_leaf", t.min_samples_leaf);
  t.l2 = get(j, ptr, "l2", t.l2);
  t.max_bins = get(j, ptr, "max_bins", t.max_bins);
  t.validation_fraction = get(j, ptr, "validation_fraction", t.validation_fraction);
  t.patience = get(j, ptr, "patience", t.patience);
  t.one_se_rule = get(j, ptr, "one_se_rule", t.one_se_rule);
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ptr, e.what());
  }
  return t;
}

inline learners::ClassifierSpec parse_classifier(const nlohmann::json& j, const std::string& ptr) {
  only_keys(j, ptr, {"kind", "degree", "l2", "reg", "trees"});
  learners::ClassifierSpec s;
  s.kind = get(j, ptr, "kind", s.kind);
  one_of(s.kind, child(ptr, "kind"), {"qda", "logistic", "gbt"});
  s.degree = get(j, ptr, "degree", s.degree);
  require(s.degree >= 1, child(ptr, "degree"), "must be at least 1");
  s.l2 = get(j, ptr, "l2", s.l2);
  s.reg = get(j, ptr, "reg", s.reg);
  require(s.l2 >= 0.0 && s.reg >= 0.0, ptr, "regularization must be non-negative");
  if (j.contains("trees")) s.trees = parse_trees(j.at("trees"), child(ptr, "trees"), s.trees);
  return s;
}

inline learners::QuantileSpec parse_quantile(const nlohmann::json& j, const std::string& ptr) {
  only_keys(j, ptr, {"kind", "trees", "neighbours"});
  learners::QuantileSpec s;
  s.kind = get(j, ptr, "kind", s.kind);
  one_of(s.kind, child(ptr, "kind"), {"gbt", "local_bin"});
  s.neighbours = get(j, ptr, "neighbours", s.neighbours);
  if (j.contains("trees")) s.trees = parse_trees(j.at("trees"), child(ptr, "trees"), s.trees);
  return s;
}

inline learners::MeanSpec parse_mean(const nlohmann::json& j, const std::string& ptr, learners::MeanSpec s,
                                     bool allow_cdf) {
  only_keys(j, ptr, {"kind", "trees", "interior_knots", "degree", "neighbours"});
  s.kind = get(j, ptr, "kind", s.kind);
  if (allow_cdf)
    one_of(s.kind, child(ptr, "kind"), {"gbt", "logistic_spline", "logistic_poly", "conditional_cdf"});
  else
    one_of(s.kind, child(ptr, "kind"), {"gbt", "logistic_spline", "logistic_poly"});
  s.interior_knots = get(j, ptr, "interior_knots", s.interior_knots);
  require(s.interior_knots >= 0, child(ptr, "interior_knots"), "must be non-negative");
  s.degree = get(j, ptr, "degree", s.degree);
  require(s.degree >= 1, child(ptr, "degree"), "must be at least 1");
  s.neighbours = get(j, ptr, "neighbours", s.neighbours);
  if (j.contains("trees")) s.trees = parse_trees(j.at("trees"), child(ptr, "trees"), s.trees);
  return s;
}

inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

}  // namespace detail

/// Validate a parsed document against the experiment schema.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using namespace detail;
  only_keys(j, "",
            {"schema_version", "name", "simulator", "statistic", "odds", "calibration", "pvalues", "diagnostics",
             "observed", "selection", "baselines", "check", "n", "alpha", "seed", "output_dir"});
  if (!j.contains("schema_version")) throw ConfigError("/schema_version", "required");
  const int version = get(j, "", "schema_version", 0);
  require(version == kConfigSchemaVersion, "/schema_version",
          "unsupported version " + std::to_string(version) + " (expected " + std::to_string(kConfigSchemaVersion) +
              ")");
  ExperimentConfig c;
  c.name = get(j, "", "name", c.name);
  require(!c.name.empty() && c.name.find('/') == std::string::npos, "/name", "must be a non-empty file name");
  c.n = get(j, "", "n", c.n);
  require(c.n >= 1, "/n", "must be positive");
  c.alpha = get(j, "", "alpha", c.alpha);
  require(c.alpha > 0.0 && c.alpha < 1.0, "/alpha", "must be in (0, 1)");
  c.seed = get(j, "", "seed", c.seed);
  c.output_dir = get(j, "", "output_dir", c.output_dir);

  if (!j.contains("simulator")) throw ConfigError("/simulator", "required");
  {
    const auto& s = j.at("simulator");
    only_keys(s, "/simulator", {"kind", "weight", "dim", "gamma", "grid_points", "lower", "upper"});
    auto& o = c.simulator;
    o.kind = get(s, "/simulator", "kind", o.kind);
    one_of(o.kind, "/simulator/kind", {"gmm", "mvg", "poisson"});
    o.weight = get(s, "/simulator", "weight", o.weight);
    require(o.weight > 0.0 && o.weight < 1.0, "/simulator/weight", "must be in (0, 1)");
    o.dim = get(s, "/simulator", "dim", o.dim);
    require(o.dim >= 1, "/simulator/dim", "must be positive");
    o.gamma = get(s, "/simulator", "gamma", o.gamma);
    require(o.gamma > 0.0, "/simulator/gamma", "must be positive");
    o.grid_points = get(s, "/simulator", "grid_points", o.grid_points);
    require(o.grid_points >= 2, "/simulator/grid_points", "must be at least 2");
    o.lower = get_vector(s, "/simulator", "lower");
    o.upper = get_vector(s, "/simulator", "upper");
    require(o.lower.size() == o.upper.size(), "/simulator/upper", "lower and upper must have equal length");
    for (std::size_t i = 0; i < o.lower.size(); ++i)
      require(o.lower[i] < o.upper[i], "/simulator/upper/" + std::to_string(i), "must exceed lower bound");
  }
  if (j.contains("statistic")) {
    const auto& s = j.at("statistic");
    only_keys(s, "/statistic", {"kind", "grid_points", "mc_draws", "psi_points"});
    auto& o = c.statistic;
    o.kind = get(s, "/statistic", "kind", o.kind);
    one_of(o.kind, "/statistic/kind", {"acore", "bff", "exact_lrt", "exact_bf"});
    o.grid_points = get(s, "/statistic", "grid_points", o.grid_points);
    require(o.grid_points >= 2, "/statistic/grid_points", "must be at least 2");
    o.mc_draws = get(s, "/statistic", "mc_draws", o.mc_draws);
    o.psi_points = get(s, "/statistic", "psi_points", o.psi_points);
    require(o.psi_points >= 1, "/statistic/psi_points", "must be positive");
  }
  if ((c.statistic.kind == "exact_lrt" || c.statistic.kind == "exact_bf") && c.simulator.kind != "mvg")
    throw ConfigError("/statistic/kind", "exact statistics need the mvg simulator");
  if (j.contains("odds")) {
    const auto& s = j.at("odds");
    only_keys(s, "/odds", {"oracle", "classifier", "B", "p", "heldout"});
    auto& o = c.odds;
    o.oracle = get(s, "/odds", "oracle", o.oracle);
    if (s.contains("classifier")) o.classifier = parse_classifier(s.at("classifier"), "/odds/classifier");
    o.B = get(s, "/odds", "B", o.B);
    require(o.B >= 10, "/odds/B", "must be at least 10");
    o.p = get(s, "/odds", "p", o.p);
    require(o.p > 0.0 && o.p < 1.0, "/odds/p", "must be in (0, 1)");
    o.heldout = get(s, "/odds", "heldout", o.heldout);
    require(o.heldout >= 1, "/odds/heldout", "must be positive");
  }
  if (j.contains("calibration")) {
    const auto& s = j.at("calibration");
    only_keys(s, "/calibration", {"method", "B_prime", "quantile", "mc_draws_per_point"});
    auto& o = c.calibration;
    o.method = get(s, "/calibration", "method", o.method);
    one_of(o.method, "/calibration/method", {"qr", "mc", "chi2"});
    o.B_prime = get(s, "/calibration", "B_prime", o.B_prime);
    require(o.B_prime >= 100, "/calibration/B_prime", "must be at least 100");
    if (s.contains("quantile")) o.quantile = parse_quantile(s.at("quantile"), "/calibration/quantile");
    o.mc_draws_per_point = get(s, "/calibration", "mc_draws_per_point", o.mc_draws_per_point);
    require(o.mc_draws_per_point >= 100, "/calibration/mc_draws_per_point", "must be at least 100");
  }
  if (j.contains("pvalues")) {
    const auto& s = j.at("pvalues");
    only_keys(s, "/pvalues", {"enabled", "B_prime", "mean"});
    auto& o = c.pvalues;
    o.enabled = get(s, "/pvalues", "enabled", o.enabled);
    o.B_prime = get(s, "/pvalues", "B_prime", o.B_prime);
    require(o.B_prime >= 100, "/pvalues/B_prime", "must be at least 100");
    if (s.contains("mean")) o.mean = parse_mean(s.at("mean"), "/pvalues/mean", o.mean, true);
  }
  if (j.contains("diagnostics")) {
    const auto& s = j.at("diagnostics");
    only_keys(s, "/diagnostics", {"enabled", "B_double_prime", "mean", "report_grid_points"});
    auto& o = c.diagnostics;
    o.enabled = get(s, "/diagnostics", "enabled", o.enabled);
    o.B_double_prime = get(s, "/diagnostics", "B_double_prime", o.B_double_prime);
    require(o.B_double_prime >= 100, "/diagnostics/B_double_prime", "must be at least 100");
    if (s.contains("mean")) o.mean = parse_mean(s.at("mean"), "/diagnostics/mean", o.mean, false);
    o.report_grid_points = get(s, "/diagnostics", "report_grid_points", o.report_grid_points);
    require(o.report_grid_points >= 2, "/diagnostics/report_grid_points", "must be at least 2");
  }
  if (!j.contains("observed")) throw ConfigError("/observed", "required");
  {
    const auto& s = j.at("observed");
    only_keys(s, "/observed", {"theta", "seed", "csv"});
    auto& o = c.observed;
    o.theta = get_vector(s, "/observed", "theta");
    o.seed = get(s, "/observed", "seed", o.seed);
    o.csv = get(s, "/observed", "csv", o.csv);
    require(o.theta.empty() != o.csv.empty(), "/observed", "give exactly one of 'theta' or 'csv'");
  }
  if (j.contains("selection")) {
    const auto& s = j.at("selection");
    only_keys(s, "/selection", {"candidates", "B_values", "heldout", "plateau_tol", "odds_loss_draws"});
    auto& o = c.selection;
    if (s.contains("candidates")) {
      const auto& arr = s.at("candidates");
      require(arr.is_array() && !arr.empty(), "/selection/candidates", "expected a non-empty array");
      for (std::size_t i = 0; i < arr.size(); ++i)
        o.candidates.push_back(parse_classifier(arr[i], "/selection/candidates/" + std::to_string(i)));
    }
    if (s.contains("B_values")) {
      const auto& arr = s.at("B_values");
      require(arr.is_array() && !arr.empty(), "/selection/B_values", "expected a non-empty array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = "/selection/B_values/" + std::to_string(i);
        require(arr[i].is_number_integer() && arr[i].get<std::int64_t>() >= 10, p, "expected an integer >= 10");
        o.B_values.push_back(arr[i].get<std::size_t>());
      }
    }
    o.heldout = get(s, "/selection", "heldout", o.heldout);
    require(o.heldout >= 1, "/selection/heldout", "must be positive");
    o.plateau_tol = get(s, "/selection", "plateau_tol", o.plateau_tol);
    require(o.plateau_tol >= 0.0, "/selection/plateau_tol", "must be non-negative");
    o.odds_loss_draws = get(s, "/selection", "odds_loss_draws", o.odds_loss_draws);
    require(o.odds_loss_draws == 0 || o.odds_loss_draws >= 1000, "/selection/odds_loss_draws",
            "must be 0 or at least 1000");
  }
  if (j.contains("baselines")) {
    const auto& s = j.at("baselines");
    only_keys(s, "/baselines", {"report_grid_points", "mc_draws_per_point"});
    auto& o = c.baselines;
    o.report_grid_points = get(s, "/baselines", "report_grid_points", o.report_grid_points);
    require(o.report_grid_points >= 2, "/baselines/report_grid_points", "must be at least 2");
    o.mc_draws_per_point = get(s, "/baselines", "mc_draws_per_point", o.mc_draws_per_point);
    require(o.mc_draws_per_point >= 100, "/baselines/mc_draws_per_point", "must be at least 100");
  }
  if (j.contains("check")) {
    const auto& s = j.at("check");
    only_keys(s, "/check", {"coverage_mean", "cc_fraction_min", "truth_in_set"});
    auto& o = c.check;
    if (s.contains("coverage_mean")) {
      const auto v = get_vector(s, "/check", "coverage_mean");
      require(v.size() == 2 && v[0] <= v[1], "/check/coverage_mean", "expected [lo, hi] with lo <= hi");
      o.coverage_mean = std::make_pair(v[0], v[1]);
    }
    if (s.contains("cc_fraction_min")) o.cc_fraction_min = get(s, "/check", "cc_fraction_min", 0.0);
    if (s.contains("truth_in_set")) o.truth_in_set = get(s, "/check", "truth_in_set", false);
  }
  return c;
}

/// Fully resolved config, defaults included. Its dump is the config hash input.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["name"] = c.name;
  j["n"] = c.n;
  j["alpha"] = c.alpha;
  j["seed"] = c.seed;
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  const auto& s = c.simulator;
  j["simulator"] = {{"kind", s.kind}, {"weight", s.weight}, {"dim", s.dim}, {"gamma", s.gamma},
                    {"grid_points", s.grid_points}};
  if (!s.lower.empty()) {
    j["simulator"]["lower"] = s.lower;
    j["simulator"]["upper"] = s.upper;
  }
  j["statistic"] = {{"kind", c.statistic.kind}, {"grid_points", c.statistic.grid_points},
                    {"mc_draws", c.statistic.mc_draws}, {"psi_points", c.statistic.psi_points}};
  j["odds"] = {{"oracle", c.odds.oracle}, {"classifier", c.odds.classifier}, {"B", c.odds.B}, {"p", c.odds.p},
               {"heldout", c.odds.heldout}};
  j["calibration"] = {{"method", c.calibration.method}, {"B_prime", c.calibration.B_prime},
                      {"quantile", c.calibration.quantile},
                      {"mc_draws_per_point", c.calibration.mc_draws_per_point}};
  j["pvalues"] = {{"enabled", c.pvalues.enabled}, {"B_prime", c.pvalues.B_prime}, {"mean", c.pvalues.mean}};
  j["diagnostics"] = {{"enabled", c.diagnostics.enabled}, {"B_double_prime", c.diagnostics.B_double_prime},
                      {"mean", c.diagnostics.mean}, {"report_grid_points", c.diagnostics.report_grid_points}};
  if (!c.observed.csv.empty())
    j["observed"] = {{"csv", c.observed.csv}};
  else
    j["observed"] = {{"theta", c.observed.theta}, {"seed", c.observed.seed}};
  nlohmann::json cand = nlohmann::json::array();
  for (const auto& k : c.selection.candidates) cand.push_back(k);
  j["selection"] = {{"heldout", c.selection.heldout}, {"plateau_tol", c.selection.plateau_tol},
                    {"odds_loss_draws", c.selection.odds_loss_draws}};
  if (!cand.empty()) j["selection"]["candidates"] = cand;
  if (!c.selection.B_values.empty()) j["selection"]["B_values"] = c.selection.B_values;
  j["baselines"] = {{"report_grid_points", c.baselines.report_grid_points},
                    {"mc_draws_per_point", c.baselines.mc_draws_per_point}};
  nlohmann::json chk = nlohmann::json::object();
  if (c.check.coverage_mean) chk["coverage_mean"] = {c.check.coverage_mean->first, c.check.coverage_mean->second};
  if (c.check.cc_fraction_min) chk["cc_fraction_min"] = *c.check.cc_fraction_min;
  if (c.check.truth_in_set) chk["truth_in_set"] = *c.check.truth_in_set;
  j["check"] = chk;
  return j;
}

/// Parse config text; syntax errors carry line:col.
inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::string msg = e.what();
    if (const auto pos = msg.find("syntax error"); pos != std::string::npos) msg = msg.substr(pos);
    throw ConfigError(detail::line_col(text, e.byte == 0 ? 0 : e.byte - 1), msg);
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(path, e.what());
  }
  return parse_config(text);
}

}  // namespace lf2i::io
