#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lf2i/calibration.hpp"
#include "lf2i/diagnostics.hpp"
#include "lf2i/inference.hpp"
#include "lf2i/io/config.hpp"
#include "lf2i/io/csv.hpp"
#include "lf2i/io/manifest.hpp"
#include "lf2i/odds.hpp"
#include "lf2i/simulators.hpp"
#include "lf2i/statistics.hpp"

namespace lf2i::pipeline {

namespace fs = std::filesystem;

/// Failure inside a stage, tagged with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& msg)
      : std::runtime_error("stage " + stage + ": " + msg), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Non-finite or otherwise unusable numerical output.
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& all_stages() {
  static const std::vector<std::string> s = {"simulate", "train-odds", "calibrate", "invert", "pvalues", "diagnose"};
  return s;
}

/// Stages needed to produce `target` ("pipeline" means every enabled stage).
inline std::vector<std::string> stages_for(const std::string& target, const io::ExperimentConfig& c) {
  if (target == "simulate") return {"simulate"};
  if (target == "train-odds") return {"simulate", "train-odds"};
  if (target == "calibrate") return {"simulate", "train-odds", "calibrate"};
  if (target == "invert") return {"simulate", "train-odds", "calibrate", "invert"};
  if (target == "pvalues") return {"simulate", "train-odds", "pvalues"};
  if (target == "diagnose") return {"simulate", "train-odds", "calibrate", "diagnose"};
  if (target == "pipeline") {
    std::vector<std::string> s = {"simulate", "train-odds", "calibrate", "invert"};
    if (c.pvalues.enabled) s.push_back("pvalues");
    if (c.diagnostics.enabled) s.push_back("diagnose");
    return s;
  }
  throw std::invalid_argument("unknown pipeline target: " + target);
}

// Per-purpose seeds derived from the master seed.
namespace seeds {
inline constexpr std::uint64_t kSample = 1, kHeldout = 2, kFit = 3, kCalibration = 4, kPValue = 5, kCoverage = 6,
                               kMonteCarlo = 7, kLoss = 8, kStatistic = 9;
}

inline std::shared_ptr<const Simulator> make_simulator(const io::SimulatorConfig& s) {
  auto box = [&](std::vector<double> lo, std::vector<double> hi) {
    if (s.lower.empty()) return std::make_pair(lo, hi);
    if (s.lower.size() != lo.size())
      throw io::ConfigError("/simulator/lower", "expected " + std::to_string(lo.size()) + " bounds");
    return std::make_pair(s.lower, s.upper);
  };
  if (s.kind == "gmm") {
    auto [lo, hi] = box({0.0}, {5.0});
    return std::make_shared<GaussianMixture1D>(s.weight, ParamSpace(lo, hi, {}, {}, s.grid_points));
  }
  if (s.kind == "mvg") {
    auto [lo, hi] = box(std::vector<double>(s.dim, -5.0), std::vector<double>(s.dim, 5.0));
    return std::make_shared<MultivariateGaussian>(ParamSpace(lo, hi, {}, {}, s.grid_points));
  }
  if (s.kind == "poisson") {
    const ParamSpace def = PoissonCounting::default_space(s.grid_points);
    auto [lo, hi] = box(def.lower(), def.upper());
    return std::make_shared<PoissonCounting>(s.gamma, ParamSpace(lo, hi, {0}, {1, 2}, s.grid_points));
  }
  throw io::ConfigError("/simulator/kind", "unknown simulator " + s.kind);
}

inline bool needs_odds(const io::ExperimentConfig& c) {
  return c.statistic.kind == "acore" || c.statistic.kind == "bff";
}

inline std::size_t checked_grid_size(std::size_t points, std::size_t dims, const std::string& where) {
  double total = std::pow(static_cast<double>(points), static_cast<double>(dims));
  if (total > 5e6) throw io::ConfigError(where, "grid of " + std::to_string(points) + "^" + std::to_string(dims) +
                                                    " points is too large");
  return static_cast<std::size_t>(total);
}

inline StatisticEvaluator make_statistic(const io::ExperimentConfig& c, const Simulator& sim,
                                         std::shared_ptr<const OddsModel> odds) {
  const ParamSpace& space = sim.space();
  const auto& s = c.statistic;
  if (s.kind == "exact_lrt") return StatisticEvaluator::exact_lrt(space.dims());
  if (s.kind == "exact_bf") {
    const double a = space.lower().front(), b = space.upper().front();
    for (std::size_t i = 0; i < space.dims(); ++i)
      if (space.lower()[i] != a || space.upper()[i] != b)
        throw io::ConfigError("/statistic/kind", "exact_bf needs a cube parameter box");
    return StatisticEvaluator::exact_bf(space.dims(), a, b);
  }
  if (!odds) throw std::logic_error("make_statistic: odds model required");
  std::vector<ParamPoint> psi;
  if (space.has_nuisance()) {
    checked_grid_size(s.psi_points, space.nuisance_dims().size(), "/statistic/psi_points");
    psi = space.nuisance_grid(s.psi_points);
  }
  if (s.kind == "bff" && s.mc_draws > 0)
    return StatisticEvaluator::bff_monte_carlo(odds, UniformProposal(space), s.mc_draws,
                                               derive_seed(c.seed, seeds::kStatistic), psi);
  checked_grid_size(s.grid_points, space.dims(), "/statistic/grid_points");
  auto grid = space.full_grid(s.grid_points);
  return s.kind == "acore" ? StatisticEvaluator::acore(odds, std::move(grid), std::move(psi))
                           : StatisticEvaluator::bff(odds, std::move(grid), std::move(psi));
}

inline Dataset observed_dataset(const io::ExperimentConfig& c, const Simulator& sim) {
  if (!c.observed.csv.empty()) {
    std::ifstream is(c.observed.csv);
    if (!is) throw io::ConfigError("/observed/csv", "cannot open " + c.observed.csv);
    Dataset D = io::read_dataset(is);
    if (D.dim() != sim.obs_dim())
      throw io::ConfigError("/observed/csv", "expected " + std::to_string(sim.obs_dim()) + " columns");
    return D;
  }
  const ParamPoint theta(c.observed.theta);
  if (theta.size() != sim.param_dim())
    throw io::ConfigError("/observed/theta", "expected " + std::to_string(sim.param_dim()) + " values");
  if (!sim.space().contains(theta.span())) throw io::ConfigError("/observed/theta", "outside the parameter box");
  return sample_forward(sim, theta, c.n, c.observed.seed);
}

/// Cutoff rule over target coordinates, whichever method produced it.
struct CutoffRule {
  std::string method;
  std::optional<CalibrationModel> model;  // qr
  std::vector<ParamPoint> grid;           // mc: cutoffs at grid points, nearest lookup
  std::vector<double> values;
  double constant = 0.0;  // chi2

  double operator()(std::span<const double> target) const {
    if (model) return model->cutoff(target);
    if (method == "mc") return values[nearest_index(grid, target)];
    return constant;
  }
};

inline void require_finite(std::span<const double> v, const std::string& what) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(what + " contains non-finite values");
}

struct RunOptions {
  fs::path out_dir;
  std::string target = "pipeline";
  bool resume = false;
  bool check = false;
};

struct CheckOutcome {
  bool pass = true;
  nlohmann::json detail = nlohmann::json::object();
};

struct PipelineResult {
  fs::path dir;
  std::vector<std::string> ran;
  std::vector<std::string> skipped;
  std::optional<CheckOutcome> check;
};

namespace detail {

/// Shared state threaded through the stages.
struct Context {
  const io::ExperimentConfig& cfg;
  fs::path dir;
  std::shared_ptr<const Simulator> sim;
  UniformProposal prop;
  std::optional<Dataset> observed;
  std::vector<LabeledExample> sample, heldout;
  std::shared_ptr<const OddsModel> odds;
  std::optional<StatisticEvaluator> stat;
  std::vector<ParamPoint> inversion_grid;
  std::optional<CutoffRule> cutoff;
  std::optional<ConfidenceSet> set;
  std::optional<CoverageReport> coverage;

  fs::path path(const std::string& f) const { return dir / f; }
};

inline bool is_hybrid_acore(const Context& cx) {
  return cx.sim->space().has_nuisance() && cx.cfg.statistic.kind == "acore";
}

inline std::uint64_t seed(const Context& cx, std::uint64_t purpose) { return derive_seed(cx.cfg.seed, purpose); }

inline void write_json(const fs::path& p, const nlohmann::json& j) {
  io::write_file(p.string(), [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

inline nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(io::read_text(p.string())); }

inline std::vector<NuisanceProfile> profiles(Context& cx) {
  const auto& space = cx.sim->space();
  return profile_nuisance(*cx.odds, *cx.observed, space.interest_grid(), cx.stat->psi_grid());
}

inline std::vector<std::string> stage_simulate(Context& cx) {
  std::vector<std::string> files = {"observed.csv"};
  cx.observed = observed_dataset(cx.cfg, *cx.sim);
  io::write_file(cx.path("observed.csv").string(), [&](std::ostream& os) { io::write_dataset(os, *cx.observed); });
  if (needs_odds(cx.cfg) && !cx.cfg.odds.oracle) {
    cx.sample = generate_labeled_sample(*cx.sim, cx.prop, cx.cfg.odds.B, cx.cfg.odds.p, seed(cx, seeds::kSample));
    cx.heldout =
        generate_labeled_sample(*cx.sim, cx.prop, cx.cfg.odds.heldout, cx.cfg.odds.p, seed(cx, seeds::kHeldout));
    io::write_file(cx.path("sample.csv").string(), [&](std::ostream& os) { io::write_labeled_sample(os, cx.sample); });
    io::write_file(cx.path("heldout.csv").string(),
                   [&](std::ostream& os) { io::write_labeled_sample(os, cx.heldout); });
    files.push_back("sample.csv");
    files.push_back("heldout.csv");
  }
  return files;
}

inline void load_simulate(Context& cx) {
  std::ifstream is(cx.path("observed.csv"));
  cx.observed = io::read_dataset(is);
  if (needs_odds(cx.cfg) && !cx.cfg.odds.oracle) {
    std::ifstream s(cx.path("sample.csv")), h(cx.path("heldout.csv"));
    cx.sample = io::read_labeled_sample(s);
    cx.heldout = io::read_labeled_sample(h);
  }
}

inline std::vector<std::string> stage_train_odds(Context& cx) {
  nlohmann::json model;
  nlohmann::json losses = nlohmann::json::array();
  if (!needs_odds(cx.cfg)) {
    model = {{"kind", "none"}, {"statistic", cx.cfg.statistic.kind}};
  } else if (cx.cfg.odds.oracle) {
    cx.odds = std::make_shared<OddsModel>(OddsModel::oracle(cx.sim, cx.prop, cx.cfg.odds.p));
    model = {{"kind", "oracle"}, {"simulator", cx.sim->name()}, {"p", cx.cfg.odds.p}};
  } else {
    const auto [X, y] = to_features(cx.sample);
    auto clf = learners::fit_classifier(cx.cfg.odds.classifier, X, y, seed(cx, seeds::kFit));
    cx.odds = std::make_shared<OddsModel>(clf, cx.sim->space(), cx.cfg.odds.p);
    model = {{"kind", "classifier"}, {"p", cx.cfg.odds.p}, {"clamp", cx.odds->clamp()}, {"classifier", clf->to_json()}};
    LossRow row{clf->kind(), cx.cfg.odds.B, cross_entropy(*cx.odds, cx.heldout), 0.0, 0.0};
    if (!std::isfinite(row.ce_loss)) throw NumericError("held-out cross-entropy is not finite");
    losses.push_back(row);
  }
  write_json(cx.path("odds_model.json"), model);
  write_json(cx.path("losses.json"), losses);
  return {"odds_model.json", "losses.json"};
}

inline void load_train_odds(Context& cx) {
  const auto j = read_json(cx.path("odds_model.json"));
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "oracle") {
    cx.odds = std::make_shared<OddsModel>(OddsModel::oracle(cx.sim, cx.prop, j.at("p").get<double>()));
  } else if (kind == "classifier") {
    cx.odds = std::make_shared<OddsModel>(learners::load_classifier(j.at("classifier")), cx.sim->space(),
                                          j.at("p").get<double>(), j.at("clamp").get<double>());
  }
}

inline std::vector<std::string> stage_calibrate(Context& cx) {
  const auto& c = cx.cfg;
  const auto& stat = *cx.stat;
  CutoffRule rule;
  rule.method = c.calibration.method;
  std::vector<std::string> files = {"calibration.json", "cutoffs.csv"};
  if (rule.method == "qr") {
    SimulationTable table;
    if (is_hybrid_acore(cx)) {
      auto prof = profiles(cx);
      io::write_file(cx.path("profiles.csv").string(), [&](std::ostream& os) {
        const auto& space = cx.sim->space();
        for (std::size_t k = 0; k < space.interest_dims().size(); ++k) os << "phi_" << k << ',';
        for (std::size_t k = 0; k < space.nuisance_dims().size(); ++k) os << "psi_hat_" << k << ',';
        os << "log_odds_sum\n";
        for (const auto& p : prof) {
          for (double v : p.phi.values) os << io::format_double(v) << ',';
          for (double v : p.psi_hat.values) os << io::format_double(v) << ',';
          os << io::format_double(p.log_odds_sum) << '\n';
        }
      });
      files.push_back("profiles.csv");
      ProfiledProposal pp(cx.sim->space(), std::move(prof));
      table = simulate_statistics(*cx.sim, pp, stat, c.calibration.B_prime, c.n, seed(cx, seeds::kCalibration));
    } else {
      table = simulate_statistics(*cx.sim, cx.prop, stat, c.calibration.B_prime, c.n, seed(cx, seeds::kCalibration));
    }
    require_finite(table.lambda, "simulated statistics");
    io::write_file(cx.path("statistics.csv").string(), [&](std::ostream& os) { io::write_statistics(os, table); });
    files.push_back("statistics.csv");
    rule.model = fit_critical_values(table, stat, c.alpha, c.calibration.quantile, seed(cx, seeds::kCalibration));
    write_json(cx.path("calibration.json"), {{"method", "qr"}, {"model", rule.model->to_json()}});
  } else if (rule.method == "mc") {
    if (cx.sim->space().has_nuisance())
      throw io::ConfigError("/calibration/method", "mc cutoffs need a space without nuisance parameters");
    rule.grid = cx.inversion_grid;
    rule.values = mc_critical_values(*cx.sim, rule.grid, stat, c.alpha, c.calibration.mc_draws_per_point, c.n,
                                     seed(cx, seeds::kMonteCarlo));
    write_json(cx.path("calibration.json"),
               {{"method", "mc"}, {"alpha", c.alpha}, {"draws_per_point", c.calibration.mc_draws_per_point}});
  } else {
    if (c.statistic.kind == "bff" || c.statistic.kind == "exact_bf")
      throw io::ConfigError("/calibration/method", "chi2 cutoffs apply to likelihood-ratio statistics only");
    const auto chi = chi2_cutoff(c.alpha, static_cast<unsigned>(stat.target_dims().size()));
    rule.constant = chi.lr_scale;
    write_json(cx.path("calibration.json"),
               {{"method", "chi2"}, {"alpha", c.alpha}, {"raw", chi.raw}, {"lr_scale", chi.lr_scale}});
  }
  std::vector<double> cut(cx.inversion_grid.size());
  for (std::size_t j = 0; j < cut.size(); ++j) cut[j] = rule(cx.inversion_grid[j].span());
  require_finite(cut, "critical values");
  io::write_file(cx.path("cutoffs.csv").string(),
                 [&](std::ostream& os) { io::write_cutoffs(os, cx.inversion_grid, cut); });
  cx.cutoff = std::move(rule);
  return files;
}

inline void load_calibrate(Context& cx) {
  const auto j = read_json(cx.path("calibration.json"));
  CutoffRule rule;
  rule.method = j.at("method").get<std::string>();
  if (rule.method == "qr") {
    rule.model = CalibrationModel::from_json(j.at("model"));
  } else if (rule.method == "mc") {
    std::ifstream is(cx.path("cutoffs.csv"));
    std::tie(rule.grid, rule.values) = io::read_cutoffs(is);
  } else {
    rule.constant = j.at("lr_scale").get<double>();
  }
  cx.cutoff = std::move(rule);
}

inline nlohmann::json set_summary(const Context& cx, const ConfidenceSet& set) {
  const auto& space = cx.sim->space();
  nlohmann::json j = {{"accepted", set.count()},
                      {"grid_size", set.grid.size()},
                      {"fraction", set.fraction()},
                      {"approximate", set.approximate},
                      {"alpha", set.alpha}};
  if (space.interest_dims().size() == 1) {
    const std::size_t d = space.interest_dims().front();
    j["interval"] = set.interval_summary(space.lower()[d], space.upper()[d]);
  }
  if (!cx.cfg.observed.theta.empty()) {
    const ParamPoint truth = project(ParamPoint(cx.cfg.observed.theta), space.interest_dims());
    j["truth_in_set"] = static_cast<bool>(set.accepted[nearest_index(set.grid, truth.span())]);
  }
  return j;
}

inline std::vector<std::string> stage_invert(Context& cx) {
  std::vector<double> cut(cx.inversion_grid.size());
  for (std::size_t j = 0; j < cut.size(); ++j) cut[j] = (*cx.cutoff)(cx.inversion_grid[j].span());
  auto set = invert_with_cutoffs(*cx.stat, *cx.observed, cx.inversion_grid, std::move(cut), cx.cfg.alpha);
  require_finite(set.stats, "observed statistics");
  io::write_file(cx.path("confidence_set.csv").string(), [&](std::ostream& os) { set.write_csv(os); });
  write_json(cx.path("set_summary.json"), set_summary(cx, set));
  cx.set = std::move(set);
  return {"confidence_set.csv", "set_summary.json"};
}

inline std::vector<std::string> stage_pvalues(Context& cx) {
  const auto& c = cx.cfg;
  PValueModel pv;
  if (is_hybrid_acore(cx))
    pv = hybrid_pvalues(*cx.observed, *cx.sim, profiles(cx), *cx.stat, c.pvalues.B_prime, c.n, c.pvalues.mean,
                        seed(cx, seeds::kPValue));
  else
    pv = estimate_pvalues(*cx.observed, *cx.sim, cx.prop, *cx.stat, c.pvalues.B_prime, c.n, c.pvalues.mean,
                          seed(cx, seeds::kPValue));
  auto set = invert(pv, cx.inversion_grid, c.alpha);
  set.approximate = set.approximate || cx.stat->hybrid();
  require_finite(set.stats, "p-values");
  io::write_file(cx.path("pvalue_set.csv").string(), [&](std::ostream& os) { set.write_csv(os); });
  auto summary = set_summary(cx, set);
  summary["model"] = pv.to_json();
  write_json(cx.path("pvalues.json"), summary);
  return {"pvalue_set.csv", "pvalues.json"};
}

/// Coverage over the full parameter box: W regressed on every coordinate,
/// the statistic and cutoff evaluated at the target coordinates.
inline CoverageReport coverage_over_box(const Context& cx, const std::function<double(std::span<const double>)>& cut,
                                        std::size_t grid_points, std::uint64_t s) {
  const auto& c = cx.cfg;
  const auto& space = cx.sim->space();
  std::vector<std::size_t> all(space.dims());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto& target = cx.stat->target_dims();
  auto accept = [&](const Dataset& D, const ParamPoint& theta) {
    const ParamPoint t = project(theta, target);
    return cx.stat->evaluate(D, t) >= cut(t.span());
  };
  checked_grid_size(grid_points, space.dims(), "/diagnostics/report_grid_points");
  return estimate_coverage(*cx.sim, cx.prop, all, accept, c.diagnostics.B_double_prime, c.n, 1.0 - c.alpha,
                           space.full_grid(grid_points), c.diagnostics.mean, s);
}

inline std::vector<std::string> stage_diagnose(Context& cx) {
  const auto& rule = *cx.cutoff;
  auto report = coverage_over_box(cx, [&](std::span<const double> t) { return rule(t); },
                                  cx.cfg.diagnostics.report_grid_points, seed(cx, seeds::kCoverage));
  require_finite(report.mean, "coverage surface");
  io::write_file(cx.path("coverage.csv").string(), [&](std::ostream& os) { report.write_csv(os); });
  auto summary = summary_json(report);
  summary["approximate"] = cx.stat->hybrid();
  double avg = 0.0;
  for (double m : report.mean) avg += m;
  summary["surface_mean"] = avg / static_cast<double>(report.mean.size());
  write_json(cx.path("coverage_summary.json"), summary);
  cx.coverage = std::move(report);
  return {"coverage.csv", "coverage_summary.json"};
}

inline CheckOutcome run_checks(const Context& cx) {
  const auto& chk = cx.cfg.check;
  CheckOutcome out;
  auto need = [&](const char* name, const char* stage, bool have) {
    if (!have) {
      out.pass = false;
      out.detail[name] = {{"pass", false}, {"reason", std::string("stage ") + stage + " did not run"}};
    }
    return have;
  };
  if (chk.coverage_mean && need("coverage_mean", "diagnose", fs::exists(cx.path("coverage_summary.json")))) {
    const double m = read_json(cx.path("coverage_summary.json")).at("surface_mean").get<double>();
    const bool ok = m >= chk.coverage_mean->first && m <= chk.coverage_mean->second;
    out.pass = out.pass && ok;
    out.detail["coverage_mean"] = {{"pass", ok}, {"value", m}, {"range", {chk.coverage_mean->first, chk.coverage_mean->second}}};
  }
  if (chk.cc_fraction_min && need("cc_fraction_min", "diagnose", fs::exists(cx.path("coverage_summary.json")))) {
    const double cc = read_json(cx.path("coverage_summary.json")).at("CC_pct").get<double>() / 100.0;
    const bool ok = cc >= *chk.cc_fraction_min;
    out.pass = out.pass && ok;
    out.detail["cc_fraction_min"] = {{"pass", ok}, {"value", cc}, {"min", *chk.cc_fraction_min}};
  }
  if (chk.truth_in_set && need("truth_in_set", "invert", fs::exists(cx.path("set_summary.json")))) {
    const auto s = read_json(cx.path("set_summary.json"));
    const bool have = s.contains("truth_in_set");
    const bool ok = have && s.at("truth_in_set").get<bool>() == *chk.truth_in_set;
    out.pass = out.pass && ok;
    out.detail["truth_in_set"] = {{"pass", ok}, {"value", have ? s.at("truth_in_set") : nlohmann::json(nullptr)}};
  }
  return out;
}

inline Context make_context(const io::ExperimentConfig& cfg, fs::path dir) {
  auto sim = make_simulator(cfg.simulator);
  Context cx{cfg, std::move(dir), sim, UniformProposal(sim->space()), {}, {}, {}, {}, {}, {}, {}, {}, {}};
  const auto& space = sim->space();
  checked_grid_size(space.grid_points_per_dim(), space.interest_dims().size(), "/simulator/grid_points");
  cx.inversion_grid = space.interest_grid();
  if (!cfg.observed.theta.empty()) {
    if (cfg.observed.theta.size() != space.dims())
      throw io::ConfigError("/observed/theta", "expected " + std::to_string(space.dims()) + " values");
    if (!space.contains(cfg.observed.theta)) throw io::ConfigError("/observed/theta", "outside the parameter box");
  }
  return cx;
}

}  // namespace detail

inline std::string config_hash(const io::ExperimentConfig& cfg) { return io::sha256(io::config_to_json(cfg).dump()); }

/// Run (or resume) the requested stages, writing artifacts and manifest.json
/// into opts.out_dir. With opts.resume, stages whose recorded outputs still
/// hash correctly are loaded instead of recomputed; the first stage that has
/// to run forces every later stage to run too.
inline PipelineResult run_pipeline(const io::ExperimentConfig& cfg, const RunOptions& opts) {
  if (opts.out_dir.empty()) throw io::ConfigError("/output_dir", "no output directory");
  fs::create_directories(opts.out_dir);
  detail::Context cx = detail::make_context(cfg, opts.out_dir);
  const std::string hash = config_hash(cfg);
  const fs::path manifest_path = cx.path("manifest.json");

  io::Manifest manifest(hash, cfg.seed);
  if (opts.resume && fs::exists(manifest_path)) {
    manifest = io::Manifest::load(manifest_path);
    if (manifest.config_hash() != hash)
      throw io::ConfigError("/", "config differs from the one recorded in " + manifest_path.string() +
                                     "; refusing to resume");
  }
  detail::write_json(cx.path("config.json"), io::config_to_json(cfg));

  PipelineResult result;
  result.dir = opts.out_dir;
  const auto stages = stages_for(opts.target, cfg);
  bool dirty = !opts.resume;
  auto run = [&](const std::string& name, auto&& body, auto&& load) {
    if (std::find(stages.begin(), stages.end(), name) == stages.end()) return;
    try {
      if (!dirty && manifest.complete(cx.dir, name)) {
        load();
        result.skipped.push_back(name);
        return;
      }
      dirty = true;
      const std::vector<std::string> files = body();
      manifest.record(cx.dir, name, files);
      manifest.save(manifest_path);
      result.ran.push_back(name);
    } catch (const io::ConfigError&) {
      throw;
    } catch (const NumericError& e) {
      throw NumericError("stage " + name + ": " + e.what());
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  };
  auto nothing = [] {};
  auto build_stat = [&] {
    if (!cx.stat) cx.stat = make_statistic(cfg, *cx.sim, cx.odds);
  };

  run("simulate", [&] { return detail::stage_simulate(cx); }, [&] { detail::load_simulate(cx); });
  run("train-odds", [&] { return detail::stage_train_odds(cx); }, [&] { detail::load_train_odds(cx); });
  if (std::find(stages.begin(), stages.end(), "train-odds") != stages.end()) build_stat();
  run("calibrate", [&] { return detail::stage_calibrate(cx); }, [&] { detail::load_calibrate(cx); });
  run("invert", [&] { return detail::stage_invert(cx); }, nothing);
  run("pvalues", [&] { return detail::stage_pvalues(cx); }, nothing);
  run("diagnose", [&] { return detail::stage_diagnose(cx); }, nothing);
  manifest.save(manifest_path);

  if (opts.check) {
    result.check = detail::run_checks(cx);
    detail::write_json(cx.path("check.json"), {{"pass", result.check->pass}, {"checks", result.check->detail}});
  }
  return result;
}

/// Stages of `target` that a resume from `dir` would have to run.
inline std::vector<std::string> missing_stages(const io::ExperimentConfig& cfg, const fs::path& dir,
                                               const std::string& target = "pipeline") {
  const auto stages = stages_for(target, cfg);
  if (!fs::exists(dir / "manifest.json")) return stages;
  const auto m = io::Manifest::load(dir / "manifest.json");
  if (m.config_hash() != config_hash(cfg)) return stages;
  return m.missing_stages(dir, stages);
}

// ---------------------------------------------------------------------------
// Model selection by held-out cross-entropy
// ---------------------------------------------------------------------------

inline std::string describe(const learners::ClassifierSpec& s) {
  if (s.kind == "logistic") return "logistic(degree=" + std::to_string(s.degree) + ")";
  if (s.kind == "gbt")
    return "gbt(depth=" + std::to_string(s.trees.max_depth) + ",rounds=" + std::to_string(s.trees.rounds) + ")";
  return s.kind;
}

struct SelectionReport {
  std::vector<LossRow> rows;
  std::size_t chosen_candidate = 0;
  std::size_t chosen_B = 0;
  std::string chosen_name;

  nlohmann::json to_json() const {
    return {{"rows", rows}, {"chosen", {{"classifier", chosen_name}, {"candidate", chosen_candidate}, {"B", chosen_B}}}};
  }
};

/// Fit every (candidate, B) pair on nested prefixes of one labeled sample and
/// score held-out cross-entropy. The candidate with the lowest CE wins (ties go
/// to the earlier candidate); its plateau B is the smallest B within
/// plateau_tol of its best CE.
inline SelectionReport select_model(const io::ExperimentConfig& cfg, std::vector<learners::ClassifierSpec> candidates,
                                    std::vector<std::size_t> B_values) {
  if (candidates.empty()) candidates = cfg.selection.candidates;
  if (candidates.empty()) candidates = {cfg.odds.classifier};
  if (B_values.empty()) B_values = cfg.selection.B_values;
  if (B_values.empty()) B_values = {cfg.odds.B};
  std::sort(B_values.begin(), B_values.end());
  B_values.erase(std::unique(B_values.begin(), B_values.end()), B_values.end());

  auto sim = make_simulator(cfg.simulator);
  const UniformProposal prop(sim->space());
  const auto full = generate_labeled_sample(*sim, prop, B_values.back(), cfg.odds.p, derive_seed(cfg.seed, seeds::kSample));
  const auto heldout =
      generate_labeled_sample(*sim, prop, cfg.selection.heldout, cfg.odds.p, derive_seed(cfg.seed, seeds::kHeldout));
  std::optional<OddsModel> oracle;
  if (cfg.selection.odds_loss_draws > 0 && sim->has_density()) oracle = OddsModel::oracle(sim, prop, cfg.odds.p);

  SelectionReport rep;
  std::vector<double> best(candidates.size(), std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    for (std::size_t B : B_values) {
      const std::vector<LabeledExample> part(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(B));
      const auto [X, y] = to_features(part);
      OddsModel m(learners::fit_classifier(candidates[c], X, y, derive_seed(cfg.seed, seeds::kFit)), sim->space(),
                  cfg.odds.p);
      LossRow row{describe(candidates[c]), B, cross_entropy(m, heldout), 0.0, 0.0};
      if (oracle) {
        const auto l = integrated_odds_loss(m, *oracle, *sim, prop, cfg.selection.odds_loss_draws,
                                            derive_seed(cfg.seed, seeds::kLoss));
        row.odds_loss = l.value;
        row.se = l.se;
      }
      if (!std::isfinite(row.ce_loss)) throw NumericError("cross-entropy not finite for " + row.classifier);
      best[c] = std::min(best[c], row.ce_loss);
      rep.rows.push_back(row);
    }
  }
  rep.chosen_candidate = static_cast<std::size_t>(std::min_element(best.begin(), best.end()) - best.begin());
  rep.chosen_name = describe(candidates[rep.chosen_candidate]);
  for (std::size_t k = 0; k < B_values.size(); ++k) {
    const auto& row = rep.rows[rep.chosen_candidate * B_values.size() + k];
    if (row.ce_loss <= best[rep.chosen_candidate] + cfg.selection.plateau_tol) {
      rep.chosen_B = row.B;
      break;
    }
  }
  return rep;
}

inline void write_selection(const SelectionReport& rep, const fs::path& dir) {
  fs::create_directories(dir);
  io::write_file((dir / "selection.csv").string(), [&](std::ostream& os) {
    os << "classifier,B,ce_loss,odds_loss,se\n";
    for (const auto& r : rep.rows)
      os << r.classifier << ',' << r.B << ',' << io::format_double(r.ce_loss) << ','
         << io::format_double(r.odds_loss) << ',' << io::format_double(r.se) << '\n';
  });
  detail::write_json(dir / "selection.json", rep.to_json());
}

// ---------------------------------------------------------------------------
// Baseline comparison: MC, chi-square and quantile-regression cutoffs
// ---------------------------------------------------------------------------

struct BaselineRow {
  std::string method;
  CoverageReport report;
};

/// Per-theta estimated coverage of the same statistic under each cutoff
/// method, on the interest grid. Needs a space without nuisance parameters.
inline std::vector<BaselineRow> compare_baselines(const io::ExperimentConfig& cfg) {
  detail::Context cx = detail::make_context(cfg, {});
  const auto& space = cx.sim->space();
  if (space.has_nuisance())
    throw io::ConfigError("/simulator/kind", "baseline comparison needs a space without nuisance parameters");
  if (needs_odds(cfg)) {
    if (cfg.odds.oracle) {
      cx.odds = std::make_shared<OddsModel>(OddsModel::oracle(cx.sim, cx.prop, cfg.odds.p));
    } else {
      const auto sample =
          generate_labeled_sample(*cx.sim, cx.prop, cfg.odds.B, cfg.odds.p, derive_seed(cfg.seed, seeds::kSample));
      const auto [X, y] = to_features(sample);
      cx.odds = std::make_shared<OddsModel>(
          learners::fit_classifier(cfg.odds.classifier, X, y, derive_seed(cfg.seed, seeds::kFit)), space, cfg.odds.p);
    }
  }
  cx.stat = make_statistic(cfg, *cx.sim, cx.odds);
  const std::size_t pts = cfg.baselines.report_grid_points;
  checked_grid_size(pts, space.dims(), "/baselines/report_grid_points");
  const auto grid = space.full_grid(pts);
  const std::uint64_t cov_seed = derive_seed(cfg.seed, seeds::kCoverage);

  std::vector<BaselineRow> out;
  const auto mc = mc_critical_values(*cx.sim, grid, *cx.stat, cfg.alpha, cfg.baselines.mc_draws_per_point, cfg.n,
                                     derive_seed(cfg.seed, seeds::kMonteCarlo));
  require_finite(mc, "MC cutoffs");
  auto report = [&](const std::function<double(std::span<const double>)>& cut) {
    return estimate_coverage(*cx.sim, cx.prop, *cx.stat, cut, cfg.diagnostics.B_double_prime, cfg.n, cfg.alpha, grid,
                             cfg.diagnostics.mean, cov_seed);
  };
  out.push_back({"mc", report([&](std::span<const double> t) { return mc[nearest_index(grid, t)]; })});
  if (cfg.statistic.kind == "acore" || cfg.statistic.kind == "exact_lrt") {
    const double chi = chi2_cutoff(cfg.alpha, static_cast<unsigned>(space.dims())).lr_scale;
    out.push_back({"chi2", report([&](std::span<const double>) { return chi; })});
  }
  const auto calib = estimate_critical_values(*cx.sim, cx.prop, *cx.stat, cfg.calibration.B_prime, cfg.n, cfg.alpha,
                                              cfg.calibration.quantile, derive_seed(cfg.seed, seeds::kCalibration));
  out.push_back({"qr", report([&](std::span<const double> t) { return calib.cutoff(t); })});
  return out;
}

inline void write_baselines(const std::vector<BaselineRow>& rows, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json summary = nlohmann::json::object();
  io::write_file((dir / "baselines.csv").string(), [&](std::ostream& os) {
    const std::size_t d = rows.front().report.grid.front().size();
    os << "method,";
    for (std::size_t k = 0; k < d; ++k) os << "theta_" << k << ',';
    os << "mean,lo,hi,label\n";
    for (const auto& r : rows) {
      const auto& rep = r.report;
      for (std::size_t j = 0; j < rep.grid.size(); ++j) {
        os << r.method << ',';
        for (double v : rep.grid[j].values) os << io::format_double(v) << ',';
        os << io::format_double(rep.mean[j]) << ',' << io::format_double(rep.lo[j]) << ','
           << io::format_double(rep.hi[j]) << ',' << to_string(rep.labels[j]) << '\n';
      }
      summary[r.method] = summary_json(rep);
    }
  });
  detail::write_json(dir / "baselines.json", summary);
}

}  // namespace lf2i::pipeline
