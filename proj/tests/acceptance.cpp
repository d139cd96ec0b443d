// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "qcdlab/asymptotics.hpp"
#include "qcdlab/harness.hpp"
#include "qcdlab/metastable.hpp"
#include "qcdlab/optimizer.hpp"

using namespace qcdlab;

namespace {

const double kRho = fixtures::kDecay;

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool condition, const std::string& what) {
    if (!condition) {
      ok = false;
      detail << " [" << what << "]";
    }
  }
};

struct Fixture {
  std::string name;
  ObservationModel model;
  Statistic f;
};

std::vector<Fixture> exponent_fixtures() {
  return {{"gaussian/llr", fixtures::gaussian(), llr(fixtures::gaussian())},
          {"two-symbol/llr", fixtures::two_symbol(), llr(fixtures::two_symbol())},
          {"two-symbol/pm1", fixtures::two_symbol(), fixtures::plus_minus_one()},
          {"markov/llr", fixtures::two_state_markov(), llr(fixtures::two_state_markov())}};
}

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

LinearClassSpec llr_class(const ObservationModel& model) {
  LinearClassSpec spec;
  spec.basis = {llr(model), Statistic::constant(1.0)};
  spec.normalization = vec({0.0, 1.0});
  return spec;
}

// Conditional log-moment from the first pre-change state by forward recursion
// over the full kernel, killed on leaving the pre-change region.
double log_conditional_oracle(const PomdpChain& chain, const std::vector<double>& f, double theta, int n) {
  const auto states = chain.state_count();
  Eigen::RowVectorXd tilted = Eigen::RowVectorXd::Zero(states);
  Eigen::RowVectorXd plain = Eigen::RowVectorXd::Zero(states);
  tilted(chain.pre_states[0]) = 1.0;
  plain(chain.pre_states[0]) = 1.0;
  double log_tilted = 0.0, log_plain = 0.0;
  for (int k = 0; k < n; ++k) {
    tilted = tilted * chain.kernel;
    plain = plain * chain.kernel;
    for (int z = 0; z < states; ++z) {
      if (!chain.is_pre_change(z)) {
        tilted(z) = 0.0;
        plain(z) = 0.0;
      } else {
        tilted(z) *= std::exp(theta * f[static_cast<std::size_t>(chain.labels[static_cast<std::size_t>(z)])]);
      }
    }
    log_tilted += std::log(tilted.sum());
    log_plain += std::log(plain.sum());
    tilted /= tilted.sum();
    plain /= plain.sum();
  }
  return log_tilted - log_plain;
}

void duality(Check& c) {
  for (const auto& fx : exponent_fixtures()) {
    if (fx.name == "markov/llr") continue;
    const auto p = solve_exponents(fx.model, fx.f, kRho);
    const double e0 = std::abs(rate_function(p, p.drift0).value - p.drift0 * p.theta0);
    const double e1 = std::abs(rate_function(p, p.drift_plus).value - (p.drift_plus * p.theta_plus - kRho));
    c.detail << ' ' << fx.name << " err=" << std::max(e0, e1);
    c.require(e0 <= 1e-8 && e1 <= 1e-8, fx.name);
  }
}

void llr_normalization(Check& c) {
  for (const auto& fx : exponent_fixtures()) {
    if (fx.name == "two-symbol/pm1") continue;
    const double err = std::abs(solve_exponents(fx.model, fx.f, kRho).theta0 - 1.0);
    c.detail << ' ' << fx.name << " |theta0-1|=" << err;
    c.require(err <= 1e-10, fx.name);
  }
}

void eagerness_geometry(Check& c) {
  for (const auto& fx : exponent_fixtures()) {
    const auto curve = eagerness_curve(solve_exponents(fx.model, fx.f, kRho));
    const double e_min = std::abs(curve.G(curve.s_star) - curve.profile.theta_plus);
    double e_slope = 0.0;
    for (double s : {1.01 * curve.s_kink, 2.0 * curve.s_kink, 7.0 * curve.s_kink}) {
      const double h = 1e-4 * curve.s_kink;
      e_slope = std::max(e_slope, std::abs((curve.G(s + h) - curve.G(s - h)) / (2 * h) - kRho));
    }
    c.detail << ' ' << fx.name << " min_err=" << e_min << " slope_err=" << e_slope;
    c.require(e_min <= 1e-8 && e_slope <= 1e-6, fx.name);
  }
}

void lambert(Check& c) {
  std::vector<double> zs{1.5, std::numbers::e};
  for (double z = 10.0; z <= 1e6 * 1.0001; z *= 10.0) zs.push_back(z);
  for (double z : zs) {
    const auto l = lambert_bound_check(z);
    c.require(l.holds, "bound at z=" + std::to_string(z));
  }
  const double eps_e = lambert_bound_check(std::numbers::e).epsilon;
  c.detail << " eps(e)=" << eps_e;
  c.require(std::abs(eps_e - 0.45867) <= 1e-5, "eps(e)");
}

void oracle_equivalence(Check& c) {
  const auto model = fixtures::two_symbol();
  const auto law = fixtures::geometric();
  McOptions opts;
  opts.replications = 100000;
  opts.seed = 20240501;
  for (double h : {3.0, 6.0}) {
    const auto est = mc_estimate_cost(model, fixtures::plus_minus_one(), &law, h, {10.0, 50.0}, opts);
    const auto exact = exact_cost_dp(model, fixtures::plus_minus_one(), h, law, {10.0, 50.0});
    for (std::size_t k = 0; k < 2; ++k) {
      const double z = std::abs(est.j[k] - exact.j[k]) / est.j_stderr[k];
      c.detail << " H=" << h << ",k=" << est.kappas[k] << " z=" << z;
      c.require(z <= 3.0, "H=" + std::to_string(h));
    }
  }
}

void laplace_trend(Check& c) {
  const auto model = fixtures::two_symbol();
  const auto law = fixtures::geometric();
  const auto f = fixtures::plus_minus_one();
  const auto curve = eagerness_curve(solve_exponents(model, f, law.decay_rate()));
  const auto log_ratio = [&](double h) { return std::log(exact_cost_dp(model, f, h, law, {1.0}).mde / curve.mde(h).total); };
  const double r6 = std::abs(log_ratio(6.0));
  const double r12 = std::abs(log_ratio(12.0));
  c.detail << " |log ratio| H=6: " << r6 << " H=12: " << r12;
  c.require(r12 < r6, "trend");
}

void gap_constancy(Check& c) {
  const auto report = sweep_threshold(fixtures::two_symbol(), fixtures::plus_minus_one(), fixtures::geometric(),
                                      {2.0, 10.0, 50.0, 100.0}, {}, SweepOptions{});
  c.require(report.mode == "exact_dp", "mode");
  double gap_lo = 1e300, gap_hi = -1e300, h_lo = 1e300, h_hi = -1e300;
  for (const auto& g : report.gaps) {
    gap_lo = std::min(gap_lo, g.gap_inf);
    gap_hi = std::max(gap_hi, g.gap_inf);
    h_lo = std::min(h_lo, g.h_inf);
    h_hi = std::max(h_hi, g.h_inf);
  }
  c.detail << " gap range=" << gap_hi - gap_lo << " H_inf range=" << h_hi - h_lo;
  c.require(report.gaps.size() == 4, "rows");
  c.require(gap_hi - gap_lo <= 0.25 * (h_hi - h_lo), "gap");
}

void optimizer_recovery(Check& c) {
  for (const auto& [name, model] :
       std::vector<std::pair<std::string, ObservationModel>>{{"two-symbol", fixtures::two_symbol()},
                                                             {"markov", fixtures::two_state_markov()}}) {
    const auto spec = llr_class(model);
    const auto result = optimize_linear(model, spec, kRho);
    const int cells = cell_count(model);
    const auto got = result.f_normalized.cell_values(cells);
    const auto want = llr(model).shifted(kRho).cell_values(cells);
    double sup = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) sup = std::max(sup, std::abs(got[i] - want[i]));
    c.detail << ' ' << name << " sup=" << sup << " residual=" << result.residual.norm;
    c.require(result.converged, name + " converged");
    c.require(sup <= 1e-6, name + " sup");
    c.require(result.residual.norm <= 1e-6, name + " residual");
  }
}

void metastability(Check& c) {
  const auto r = survival_factorization(fixtures::three_state_chain());
  const double e_lambda = std::abs(r.eigenvalue - 0.6);
  const double e_rate = std::abs(r.decay_rate + std::log(0.6));
  const auto curve = survival_curve(r, 0, 80);
  const double e_yaglom = (curve.conditional[60] - r.quasi_stationary).lpNorm<Eigen::Infinity>();
  c.detail << " lambda_err=" << e_lambda << " rate_err=" << e_rate << " yaglom_err=" << e_yaglom << " fit_a=("
           << curve.fit_a.slope << ", R2 " << curve.fit_a.r_squared << ") fit_b=(" << curve.fit_b.slope << ", R2 "
           << curve.fit_b.r_squared << ")";
  c.require(e_lambda <= 1e-10, "lambda");
  c.require(e_rate <= 1e-10, "rate");
  c.require(e_yaglom <= 1e-8, "yaglom");
  c.require(curve.fit_a.slope < 0.0 && curve.fit_a.r_squared > 0.99, "fit_a");
  c.require(curve.fit_b.slope < 0.0 && curve.fit_b.r_squared > 0.99, "fit_b");
}

void conditional_cgf_check(Check& c) {
  const auto chain = fixtures::three_state_chain();
  const auto r = survival_factorization(chain);
  const auto f = fixtures::three_state_f();
  const int n = 200;
  for (double theta : {-0.5, 0.3, 1.0}) {
    const double value = conditional_cgf(r, f, theta).value;
    // Differencing horizons n and 2n cancels the O(1/n) prefactor term.
    const double oracle = (log_conditional_oracle(chain, f, theta, 2 * n) - log_conditional_oracle(chain, f, theta, n)) / n;
    const double err = std::abs(value - oracle);
    c.detail << " theta=" << theta << " err=" << err;
    c.require(err <= 1e-6, "theta=" + std::to_string(theta));
  }
}

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;
  std::function<void(Check&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "duality identities", 1.0, duality},
      {2, "LLR normalization", 1.0, llr_normalization},
      {3, "eagerness geometry", 1.0, eagerness_geometry},
      {4, "Lambert bound", 1.0, lambert},
      {5, "MC vs exact DP", 60.0, oracle_equivalence},
      {6, "Laplace trend", 30.0, laplace_trend},
      {7, "threshold-gap constancy", 300.0, gap_constancy},
      {8, "optimizer recovery", 30.0, optimizer_recovery},
      {9, "metastability", 5.0, metastability},
      {10, "conditional CGF", 5.0, conditional_cgf_check},
  };
  int failures = 0;
  for (const auto& criterion : criteria) {
    Check check;
    const auto start = std::chrono::steady_clock::now();
    try {
      criterion.run(check);
    } catch (const std::exception& e) {
      check.ok = false;
      check.detail << " [exception: " << e.what() << "]";
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (seconds > criterion.budget_seconds) {
      check.ok = false;
      check.detail << " [over the " << criterion.budget_seconds << " s budget]";
    }
    if (!check.ok) ++failures;
    std::printf("%s criterion %d (%s) %.3fs:%s\n", check.ok ? "PASS" : "FAIL", criterion.id, criterion.title, seconds,
                check.detail.str().c_str());
  }
  std::fflush(stdout);
  return failures == 0 ? 0 : 1;
}
