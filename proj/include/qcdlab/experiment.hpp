#pragma once

// Pipelines behind the command-line tool: each writes summary.json, the
// relevant CSV tables and manifest.json into an output directory.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "qcdlab/asymptotics.hpp"
#include "qcdlab/config.hpp"
#include "qcdlab/harness.hpp"
#include "qcdlab/metastable.hpp"
#include "qcdlab/model.hpp"
#include "qcdlab/optimizer.hpp"

#ifndef QCDLAB_VERSION
#define QCDLAB_VERSION "unknown"
#endif

namespace qcdlab {

/// Number formatted with 12 significant digits.
inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

/// Minimal CSV table with a fixed header.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(const std::vector<double>& row) {
    if (row.size() != header_.size()) throw DomainError("CSV row width does not match the header");
    rows_.push_back(row);
  }

  std::size_t size() const { return rows_.size(); }

  void write(const std::filesystem::path& file) const {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ResourceError("cannot write " + file.string());
    for (std::size_t i = 0; i < header_.size(); ++i) out << (i ? "," : "") << header_[i];
    out << '\n';
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_number(row[i]);
      out << '\n';
    }
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<double>> rows_;
};

/// JSON number, with non-finite values written as null.
inline Json json_number(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline Json json_vector(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(json_number(v(i)));
  return out;
}

inline Json json_vector(const std::vector<double>& v) {
  Json out = Json::array();
  for (double x : v) out.push_back(json_number(x));
  return out;
}

inline Json json_matrix(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(json_vector(Eigen::VectorXd(m.row(i).transpose())));
  return out;
}

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<long> replications;
};

struct ExperimentOutput {
  Json summary;
  Json manifest;
  std::vector<std::string> files;
};

namespace detail {

inline const char* model_type(const ObservationModel& model) {
  switch (model.index()) {
    case 0: return "iid_gaussian";
    case 1: return "iid_discrete";
    case 2: return "finite_markov";
    default: return "pomdp";
  }
}

inline Json profile_json(const CgfProfile& p, const EagernessCurve& c) {
  return {{"decay_rate", p.decay_rate}, {"theta0", p.theta0},     {"theta_plus", p.theta_plus},
          {"m0", p.m0},                 {"m1", p.m1},             {"drift0", p.drift0},
          {"drift_plus", p.drift_plus}, {"gamma2", c.gamma2},     {"exact_gamma2", c.exact_gamma2},
          {"s_star", c.s_star},         {"s_kink", c.s_kink},     {"curvature_plus", p.curvature_plus}};
}

inline bool exact_applicable(const ExperimentConfig& cfg, const ChangeTimeLaw& law) {
  if (!std::holds_alternative<IidDiscrete>(cfg.model) || !law.is_geometric_mixture()) return false;
  try {
    const auto& d = std::get<IidDiscrete>(cfg.model);
    std::vector<double> support(d.pmf0.size());
    for (std::size_t y = 0; y < support.size(); ++y) support[y] = d.pmf0[y] + d.pmf1[y];
    lattice_denominator(cfg.statistic.cell_values(d.alphabet()), support);
    return true;
  } catch (const DomainError&) {
    return false;
  }
}

// Thresholds to evaluate: explicit list, or H-bar*_inf(kappa) for each kappa > 1.
inline std::vector<double> evaluation_thresholds(const ExperimentConfig& cfg, const CgfProfile& profile) {
  if (!cfg.thresholds.empty()) return cfg.thresholds;
  std::vector<double> out;
  for (double k : cfg.kappas)
    if (k > 1.0) out.push_back(std::log(k) / profile.theta_plus);
  if (out.empty()) out.push_back(1.0);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::uint64_t stream_seed(std::uint64_t base, std::uint64_t stream) { return splitmix64(base ^ (stream * 0xA24BAED4963EE407ULL)); }

}  // namespace detail

inline Json analyze(const ExperimentConfig& cfg) {
  const ChangeTimeLaw law = cfg.law();
  const CgfProfile profile = solve_exponents(cfg.model, cfg.statistic, law.decay_rate());
  const EagernessCurve curve = eagerness_curve(profile);
  const Means means = stationary_means_unchecked(cfg.model, cfg.statistic);
  Json out{{"model", detail::model_type(cfg.model)},
           {"statistic", cfg.statistic.name()},
           {"profile", detail::profile_json(profile, curve)},
           {"stationary_means", {{"m0", means.m0}, {"m1", means.m1}}}};
  Json thresholds = Json::array();
  for (double k : cfg.kappas) {
    if (!(k > 1.0)) continue;
    const auto t = approx_optimal_threshold(curve, k, profile.m1);
    thresholds.push_back({{"kappa", k},
                          {"h_inf", t.h_inf},
                          {"h_first", t.h_first},
                          {"b", t.b},
                          {"j_inf", t.j_inf},
                          {"h_numeric", t.h_numeric},
                          {"j_numeric", t.j_numeric}});
  }
  out["thresholds"] = thresholds;
  if (std::holds_alternative<IidDiscrete>(cfg.model) || std::holds_alternative<FiniteMarkov>(cfg.model)) {
    const auto e = entropy_rates(cfg.model, cfg.statistic);
    out["entropy"] = {{"cgf_at_one", json_number(e.cgf_at_one)}, {"twisted", json_number(e.twisted)},
                      {"post_vs_pre", json_number(e.post_vs_pre)}, {"post_vs_twisted", json_number(e.post_vs_twisted)},
                      {"residual", json_number(e.residual)},       {"infinite", e.infinite}};
  }
  return out;
}

inline ExperimentOutput run_experiment(const std::string& command, const ExperimentConfig& raw_cfg,
                                       const std::filesystem::path& out_dir, const RunOverrides& overrides = {}) {
  ExperimentConfig cfg = raw_cfg;
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.replications) {
    if (*overrides.replications < 1) throw SchemaError("/replications", "must be at least 1");
    cfg.replications = *overrides.replications;
  }
  std::filesystem::create_directories(out_dir);
  ExperimentOutput result;
  Json seeds = Json::array();
  const auto record_seed = [&](const std::string& use, std::uint64_t seed) {
    seeds.push_back({{"use", use}, {"seed", seed}});
  };

  if (!cfg.has_statistic && command != "pomdp") throw SchemaError("/statistic", "missing required field");
  if (command == "analyze") {
    result.summary = analyze(cfg);
  } else if (command == "simulate") {
    const ChangeTimeLaw law = cfg.law();
    const CgfProfile profile = solve_exponents(cfg.model, cfg.statistic, law.decay_rate());
    const EagernessCurve curve = eagerness_curve(profile);
    const auto thresholds = detail::evaluation_thresholds(cfg, profile);
    CsvTable table({"kappa", "H", "J_hat", "J_stderr", "MDD", "MDE", "censored"});
    Json runs = Json::array();
    const McOptions mc{cfg.replications, cfg.seed, cfg.horizon_multiplier, cfg.workers};
    const bool exact = cfg.exact_dp && detail::exact_applicable(cfg, law);
    for (double h : thresholds) {
      Json run{{"threshold", h}};
      const auto approx = curve.mde(h);
      run["approx_mde"] = {{"first", approx.first}, {"second", approx.second}, {"total", approx.total}};
      if (cfg.plain_mc) {
        record_seed("plain_mc H=" + format_number(h), mc.seed);
        const auto est = mc_estimate_cost(cfg.model, cfg.statistic, &law, h, cfg.kappas, mc);
        run["plain_mc"] = {{"mdd", est.mdd},           {"mdd_stderr", est.mdd_stderr},
                           {"mde", est.mde},           {"mde_stderr", est.mde_stderr},
                           {"j", json_vector(est.j)},  {"j_stderr", json_vector(est.j_stderr)},
                           {"censored", est.censored}, {"censoring_warning", est.censoring_warning}};
        for (std::size_t k = 0; k < cfg.kappas.size(); ++k)
          table.add({cfg.kappas[k], h, est.j[k], est.j_stderr[k], est.mdd, est.mde, static_cast<double>(est.censored)});
      }
      if (cfg.hitting) {
        const std::uint64_t s = detail::stream_seed(cfg.seed, 1);
        record_seed("hitting H=" + format_number(h), s);
        const auto est = mde_hitting_estimator(cfg.model, cfg.statistic, h, law, cfg.replications, s, false, cfg.workers);
        run["hitting"] = {{"mde", est.mde}, {"stderr", est.std_error}, {"hits", est.hits}, {"advisory", est.advisory}};
        if (std::holds_alternative<PomdpModel>(cfg.model)) run["hitting"]["approximation"] = "quasi_stationary";
      }
      if (cfg.tilted) {
        const std::uint64_t s = detail::stream_seed(cfg.seed, 2);
        record_seed("tilted H=" + format_number(h), s);
        const auto est = mde_hitting_estimator(cfg.model, cfg.statistic, h, law, cfg.replications, s, true, cfg.workers);
        run["tilted"] = {{"mde", est.mde}, {"stderr", est.std_error}, {"tilt", est.tilt}, {"method", est.method}};
      }
      if (exact) {
        const auto ex = exact_cost_dp(cfg.model, cfg.statistic, h, law, cfg.kappas);
        run["exact_dp"] = {{"mdd", ex.mdd}, {"mde", ex.mde}, {"j", json_vector(ex.j)}, {"lattice_states", ex.lattice_states}};
        if (!cfg.plain_mc)
          for (std::size_t k = 0; k < cfg.kappas.size(); ++k) table.add({cfg.kappas[k], h, ex.j[k], 0.0, ex.mdd, ex.mde, 0.0});
      }
      runs.push_back(run);
    }
    result.summary = {{"model", detail::model_type(cfg.model)},
                      {"profile", detail::profile_json(profile, curve)},
                      {"kappa", cfg.kappas},
                      {"runs", runs}};
    table.write(out_dir / "sweep.csv");
    result.files.push_back("sweep.csv");
  } else if (command == "sweep") {
    const ChangeTimeLaw law = cfg.law();
    SweepOptions opts;
    opts.exact = cfg.exact_dp && detail::exact_applicable(cfg, law);
    opts.mc = {cfg.replications, cfg.seed, cfg.horizon_multiplier, cfg.workers};
    const auto report = sweep_threshold(cfg.model, cfg.statistic, law, cfg.kappas, cfg.thresholds, opts);
    for (auto s : report.seeds) record_seed("sweep (common random numbers across thresholds)", s);
    CsvTable table({"kappa", "H", "J_hat", "J_stderr", "MDD", "MDE", "censored"});
    for (const auto& r : report.rows)
      table.add({r.kappa, r.threshold, r.j, r.j_stderr, r.mdd, r.mde, static_cast<double>(r.censored)});
    table.write(out_dir / "sweep.csv");
    result.files.push_back("sweep.csv");
    Json gaps = Json::array();
    for (const auto& g : report.gaps)
      gaps.push_back({{"kappa", g.kappa},
                      {"h_hat", g.h_hat},
                      {"j_hat", g.j_hat},
                      {"local_minimizers", g.local_minimizers},
                      {"h_inf", json_number(g.h_inf)},
                      {"h_first", json_number(g.h_first)},
                      {"j_inf", json_number(g.j_inf)},
                      {"gap_inf", json_number(g.gap_inf)},
                      {"gap_first", json_number(g.gap_first)},
                      {"cost_ratio", json_number(g.cost_ratio)}});
    result.summary = {{"model", detail::model_type(cfg.model)}, {"mode", report.mode}, {"m1", report.m1}, {"gaps", gaps}};
  } else if (command == "optimize") {
    if (!cfg.linear_class) throw SchemaError("/class", "missing required field");
    const double decay = cfg.law().decay_rate();
    const auto res = optimize_linear(cfg.model, *cfg.linear_class, decay);
    Json trace = Json::array();
    for (const auto& it : res.trace)
      trace.push_back({{"iteration", it.iteration},
                       {"theta", json_vector(it.theta)},
                       {"objective", json_number(it.objective)},
                       {"gradient_norm", json_number(it.gradient_norm)},
                       {"step", json_number(it.step)},
                       {"entropy_residual", json_number(it.entropy_residual)}});
    result.summary = {{"theta_circ", json_vector(res.theta_circ)},
                      {"r_circ", res.r_circ},
                      {"theta_star", json_vector(res.theta_star)},
                      {"theta_plus_star", res.theta_plus_star},
                      {"theta_normalized", json_vector(res.theta_normalized)},
                      {"objective", res.objective},
                      {"cgf_at_star", res.cgf_at_star},
                      {"converged", res.converged},
                      {"iterations", res.iterations},
                      {"autocorrelation", json_matrix(res.autocorrelation)},
                      {"stationarity_residual",
                       {{"gradient", json_vector(res.residual.gradient)},
                        {"drift_gap", res.residual.drift_gap},
                        {"norm", res.residual.norm}}},
                      {"trace", trace}};
    if (is_finite_model(cfg.model))
      result.summary["f_normalized"] = json_vector(res.f_normalized.cell_values(cell_count(cfg.model)));
    try {
      const auto off = optimize_offset(cfg.model, cfg.statistic, decay);
      result.summary["offset"] = {{"theta1", off.theta1}, {"offset", off.offset}, {"theta_plus", off.theta_plus},
                                  {"drift_plus", off.drift_plus}, {"m1", off.m1}};
    } catch (const Error& e) {
      result.summary["offset"] = {{"error", e.what()}};
    }
  } else if (command == "pomdp") {
    const auto* p = std::get_if<PomdpModel>(&cfg.model);
    if (p == nullptr) throw SchemaError("/model/type", "the pomdp command needs a pomdp model");
    const auto& r = p->report;
    const int start = cfg.document.at("model").contains("initial_state")
                          ? cfg.document.at("model").at("initial_state").get<int>()
                          : p->chain().pre_states.front();
    const auto curve = survival_curve(r, start, cfg.survival_steps);
    CsvTable table({"n", "survival_after", "survival_from", "error_a", "error_b"});
    for (int n = 0; n <= cfg.survival_steps; ++n) {
      const auto i = static_cast<std::size_t>(n);
      table.add({static_cast<double>(n), curve.survival_after[i], curve.survival_from[i], curve.error_a[i], curve.error_b[i]});
    }
    table.write(out_dir / "survival.csv");
    result.files.push_back("survival.csv");
    const auto costs = stopping_costs(r, cfg.kappas.front());
    result.summary = {{"eigenvalue", r.eigenvalue},
                      {"decay_rate", r.decay_rate},
                      {"left", json_vector(r.left)},
                      {"right", json_vector(r.right)},
                      {"twisted_kernel", json_matrix(r.twisted_kernel)},
                      {"twisted_invariant", json_vector(r.twisted_invariant)},
                      {"quasi_stationary", json_vector(r.quasi_stationary)},
                      {"induced_pre", json_vector(p->marginals.pre)},
                      {"induced_post", json_vector(p->marginals.post)},
                      {"stopping_costs", {{"kappa", cfg.kappas.front()},
                                          {"running", json_vector(costs.running)},
                                          {"stopping", json_vector(costs.stopping)}}},
                      {"survival",
                       {{"initial_state", start},
                        {"prefactor", curve.prefactor},
                        {"fit_a", {{"slope", curve.fit_a.slope}, {"r_squared", curve.fit_a.r_squared}, {"points", curve.fit_a.points}}},
                        {"fit_b", {{"slope", curve.fit_b.slope}, {"r_squared", curve.fit_b.r_squared}, {"points", curve.fit_b.points}}}}}};
    if (cfg.has_statistic) {
      try {
        const auto profile = solve_exponents(cfg.model, cfg.statistic, r.decay_rate);
        result.summary["profile"] = detail::profile_json(profile, eagerness_curve(profile));
      } catch (const Error& e) {
        result.summary["profile"] = {{"error", e.what()}};
      }
    }
  } else if (command == "path") {
    const ChangeTimeLaw law = cfg.law();
    const CgfProfile profile = solve_exponents(cfg.model, cfg.statistic, law.decay_rate());
    const EagernessCurve curve = eagerness_curve(profile);
    const double h = cfg.path_threshold > 0.0 ? cfg.path_threshold : 1.0;
    std::vector<double> horizons = cfg.path_horizons;
    if (horizons.empty()) horizons.push_back(curve.s_star);
    Json paths = Json::array();
    CsvTable table({"t", "x"});
    for (std::size_t i = 0; i < horizons.size(); ++i) {
      const auto pe = path_exponent(profile, horizons[i]);
      Json knots = Json::array();
      for (const auto& [t, x] : pe.knots) {
        knots.push_back({h * t, h * x});
        if (i == 0) table.add({h * t, h * x});
      }
      paths.push_back({{"horizon", horizons[i]}, {"exponent", json_number(pe.value)},
                       {"G", json_number(pe.value + curve.decay_rate * horizons[i])},
                       {"climb_slope", pe.climb_slope}, {"knots", knots}});
    }
    table.write(out_dir / "path.csv");
    result.files.push_back("path.csv");
    result.summary = {{"threshold", h}, {"profile", detail::profile_json(profile, curve)}, {"paths", paths}};
  } else {
    throw SchemaError("/", "unknown command '" + command + "'");
  }

  result.summary["command"] = command;
  {
    std::ofstream out(out_dir / "summary.json", std::ios::binary);
    out << result.summary.dump(2) << '\n';
  }
  result.files.push_back("summary.json");
  result.manifest = {{"command", command},
                     {"version", QCDLAB_VERSION},
                     {"config", cfg.document},
                     {"base_seed", cfg.seed},
                     {"replications", cfg.replications},
                     {"seed_rule", "replication i of a stream with seed s uses mt19937_64(splitmix64(splitmix64(s) + i))"},
                     {"seeds", seeds},
                     {"outputs", result.files}};
  {
    std::ofstream out(out_dir / "manifest.json", std::ios::binary);
    out << result.manifest.dump(2) << '\n';
  }
  return result;
}

}  // namespace qcdlab
