#pragma once

// Best statistic within a linear class F_theta = theta^T psi.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "qcdlab/asymptotics.hpp"
#include "qcdlab/errors.hpp"
#include "qcdlab/model.hpp"

namespace qcdlab {

/// Basis psi with normalisation vector v (v^T psi == 1) and box bounds on theta.
struct LinearClassSpec {
  std::vector<Statistic> basis;
  Eigen::VectorXd normalization;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int dimension() const { return static_cast<int>(basis.size()); }
  Statistic combine(const Eigen::VectorXd& theta) const { return linear_combination(basis, theta); }
};

/// Checks dimensions and v^T psi = 1 on every cell (finite models) or on a
/// probe grid spanning both Gaussian laws; fills missing bounds with +-inf.
inline LinearClassSpec validate_class(const ObservationModel& model, LinearClassSpec spec) {
  const auto d = static_cast<Eigen::Index>(spec.basis.size());
  if (d == 0) throw InvalidModel("class needs at least one basis function");
  if (spec.normalization.size() != d) throw InvalidModel("normalization vector must match the basis dimension");
  if (spec.lower.size() == 0) spec.lower = Eigen::VectorXd::Constant(d, -numerics::kInf);
  if (spec.upper.size() == 0) spec.upper = Eigen::VectorXd::Constant(d, numerics::kInf);
  if (spec.lower.size() != d || spec.upper.size() != d) throw InvalidModel("bounds must match the basis dimension");

  std::vector<Observation> probes;
  if (const auto* g = std::get_if<IidGaussian>(&model)) {
    const double lo = std::min(g->pre_mean - 6.0 * std::sqrt(g->pre_var), g->post_mean - 6.0 * std::sqrt(g->post_var));
    const double hi = std::max(g->pre_mean + 6.0 * std::sqrt(g->pre_var), g->post_mean + 6.0 * std::sqrt(g->post_var));
    for (int i = 0; i <= 40; ++i) probes.push_back(Observation::of_value(lo + (hi - lo) * i / 40.0));
  } else {
    for (int c = 0; c < cell_count(model); ++c) probes.push_back(Observation::of_cell(c));
  }
  const Statistic unit = spec.combine(spec.normalization);
  for (const auto& y : probes)
    if (std::abs(unit(y) - 1.0) > 1e-10)
      throw AssumptionViolation("A4", "v^T psi is not identically 1 (value " + std::to_string(unit(y)) +
                                          "); the class must contain the constants");
  return spec;
}

/// log(kappa) / (m1^theta theta_+^theta).
inline double cost_approx_theta(const ObservationModel& model, const LinearClassSpec& spec, const Eigen::VectorXd& theta,
                                double kappa, double decay_rate) {
  if (!(kappa > 0.0)) throw DomainError("kappa must be positive");
  const auto profile = solve_exponents(model, spec.combine(theta), decay_rate);
  return std::log(kappa) / (profile.m1 * profile.theta_plus);
}

struct StationarityResidual {
  Eigen::VectorXd gradient;  // -pi1(psi)/m1 + pi-check_+(psi)/drift_plus
  double drift_gap = 0.0;    // drift_plus - m1
  double norm = 0.0;         // Euclidean norm of (gradient, drift_gap)
};

inline StationarityResidual stationarity_residual(const ObservationModel& model, const LinearClassSpec& spec,
                                                  const Eigen::VectorXd& theta, double decay_rate) {
  const auto profile = solve_exponents(model, spec.combine(theta), decay_rate);
  const TwistedLaw twist = profile.cgf->twisted(profile.theta_plus);
  StationarityResidual r;
  r.gradient.resize(spec.dimension());
  for (int i = 0; i < spec.dimension(); ++i) {
    const auto& psi = spec.basis[static_cast<std::size_t>(i)];
    const double post = stationary_means_unchecked(model, psi).m1;
    r.gradient(i) = -post / profile.m1 + twist.expect(psi) / profile.drift_plus;
  }
  r.drift_gap = profile.drift_plus - profile.m1;
  r.norm = std::sqrt(r.gradient.squaredNorm() + r.drift_gap * r.drift_gap);
  return r;
}

/// R_theta(i, j) = pi-check_{1,theta}(psi_i psi_j) under the theta = 1 twist of F_theta.
inline Eigen::MatrixXd autocorrelation(const ObservationModel& model, const LinearClassSpec& spec,
                                       const Eigen::VectorXd& theta) {
  const TwistedLaw twist = Cgf(model, spec.combine(theta)).twisted(1.0);
  const int d = spec.dimension();
  Eigen::MatrixXd r(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      r(i, j) = twist.expect(spec.basis[static_cast<std::size_t>(i)].times(spec.basis[static_cast<std::size_t>(j)]));
      r(j, i) = r(i, j);
    }
  return r;
}

struct OptimizerOptions {
  double armijo = 1e-4;
  double shrink = 0.5;
  double tolerance = 1e-8;
  int max_iterations = 10000;
  // Approximate Wolfe slack used once Gamma differences drop below rounding.
  double wolfe_delta = 0.1;
  double value_slack = 1e-12;
};

struct OptimizerIterate {
  int iteration = 0;
  Eigen::VectorXd theta;
  double objective = 0.0;
  double gradient_norm = 0.0;
  double step = 0.0;
  double entropy_residual = std::numeric_limits<double>::quiet_NaN();
};

struct OptimizerResult {
  Eigen::VectorXd theta_circ;        // minimiser of Gamma on v^T theta = 0
  double r_circ = 0.0;               // rho_a - Lambda_0(F_theta_circ)
  Eigen::VectorXd theta_star;        // theta_circ + r_circ v
  double theta_plus_star = 0.0;      // theta_+ of F_theta_star
  Eigen::VectorXd theta_normalized;  // theta_star / theta_plus_star
  double objective = 0.0;            // Gamma(theta_circ)
  double cgf_at_star = 0.0;          // Lambda_0(F_theta_star)
  bool converged = false;
  int iterations = 0;
  std::vector<OptimizerIterate> trace;
  Eigen::MatrixXd autocorrelation;
  StationarityResidual residual;
  Statistic f_star;
  Statistic f_normalized;
};

namespace detail {

struct GammaEval {
  double value = numerics::kInf;
  Eigen::VectorXd gradient;
};

// Gamma_0(theta) = Lambda_0(F_theta) - pi1(F_theta) and its gradient.
inline GammaEval gamma0(const ObservationModel& model, const LinearClassSpec& spec, const Eigen::VectorXd& post_means,
                        const Eigen::VectorXd& theta, bool with_gradient) {
  GammaEval out;
  const Cgf cgf(model, spec.combine(theta));
  const double lambda = cgf.value_or_inf(1.0);
  if (!std::isfinite(lambda)) return out;
  out.value = lambda - theta.dot(post_means);
  if (with_gradient) {
    const TwistedLaw twist = cgf.twisted(1.0);
    out.gradient.resize(spec.dimension());
    for (int i = 0; i < spec.dimension(); ++i)
      out.gradient(i) = twist.expect(spec.basis[static_cast<std::size_t>(i)]) - post_means(i);
  }
  return out;
}

inline double entropy_residual_or_nan(const ObservationModel& model, const Statistic& f) {
  if (!std::holds_alternative<IidDiscrete>(model) && !std::holds_alternative<FiniteMarkov>(model))
    return std::numeric_limits<double>::quiet_NaN();
  return entropy_rates(model, f).residual;
}

inline void require_full_rank(const Eigen::MatrixXd& r) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(r);
  const double top = solver.eigenvalues().maxCoeff();
  if (!(solver.eigenvalues().minCoeff() > 1e-10 * std::max(1.0, top)))
    throw DomainError("degenerate class: the autocorrelation matrix is rank deficient");
}

}  // namespace detail

/// Minimises Gamma(theta) = Gamma_0(theta) + (v^T theta)^2 / 2 by projected
/// gradient descent with Armijo backtracking, starting from theta = 0 and
/// staying on v^T theta = 0; then shifts along v so Lambda_0(F_theta*) = rho_a.
inline OptimizerResult optimize_linear(const ObservationModel& model, const LinearClassSpec& raw_spec, double decay_rate,
                                       const OptimizerOptions& opts = {}) {
  const LinearClassSpec spec = validate_class(model, raw_spec);
  const int d = spec.dimension();
  const Eigen::VectorXd v = spec.normalization;
  const Eigen::MatrixXd projector = Eigen::MatrixXd::Identity(d, d) - v * v.transpose() / v.squaredNorm();
  Eigen::VectorXd post_means(d);
  for (int i = 0; i < d; ++i) post_means(i) = stationary_means_unchecked(model, spec.basis[static_cast<std::size_t>(i)]).m1;

  OptimizerResult result;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  detail::GammaEval current = detail::gamma0(model, spec, post_means, theta, true);
  if (!std::isfinite(current.value)) throw DomainError("Gamma is not finite at theta = 0");
  double step = 1.0;
  for (int it = 0;; ++it) {
    detail::require_full_rank(autocorrelation(model, spec, theta));
    const Eigen::VectorXd direction = -(projector * current.gradient);
    const double gnorm = direction.norm();
    result.trace.push_back({it, theta, current.value, gnorm, step, detail::entropy_residual_or_nan(model, spec.combine(theta))});
    if (gnorm <= opts.tolerance) {
      result.converged = true;
      break;
    }
    if (it >= opts.max_iterations) break;
    step = std::min(1.0, 2.0 * step);
    detail::GammaEval trial;
    Eigen::VectorXd candidate;
    for (;;) {
      candidate = projector * (theta + step * direction);
      trial = detail::gamma0(model, spec, post_means, candidate, false);
      if (trial.value <= current.value - opts.armijo * step * gnorm * gnorm) break;
      // Near the minimiser the decrease is lost to rounding; accept on the
      // directional derivative instead (Hager-Zhang approximate Wolfe).
      if (std::isfinite(trial.value) &&
          trial.value <= current.value + opts.value_slack * std::max(1.0, std::abs(current.value))) {
        const auto slope = detail::gamma0(model, spec, post_means, candidate, true);
        if (direction.dot(slope.gradient) <= (1.0 - 2.0 * opts.wolfe_delta) * gnorm * gnorm) break;
      }
      step *= opts.shrink;
      if (step < 1e-20) break;
    }
    if (step < 1e-20) break;
    theta = candidate;
    current = detail::gamma0(model, spec, post_means, theta, true);
  }
  result.iterations = static_cast<int>(result.trace.size()) - 1;
  result.theta_circ = theta;
  result.objective = current.value;
  result.autocorrelation = autocorrelation(model, spec, theta);

  const Cgf circ(model, spec.combine(theta));
  result.r_circ = decay_rate - circ.value(1.0);
  result.theta_star = theta + result.r_circ * v;
  result.f_star = spec.combine(result.theta_star);
  result.cgf_at_star = Cgf(model, result.f_star).value(1.0);
  const auto profile = solve_exponents(model, result.f_star, decay_rate);
  result.theta_plus_star = profile.theta_plus;
  result.theta_normalized = result.theta_star / profile.theta_plus;
  result.f_normalized = result.f_star.scaled(1.0 / profile.theta_plus);
  result.residual = stationarity_residual(model, spec, result.theta_star, decay_rate);
  return result;
}

struct OffsetResult {
  double theta1 = 0.0;      // argmin_theta [Upsilon(theta) - theta m1]
  double offset = 0.0;      // [rho_a - Upsilon(theta1)] / theta1
  Statistic f_star;         // F + offset
  double theta_plus = 0.0;  // theta_+ of F*, equal to theta1
  double drift_plus = 0.0;  // Upsilon'_{F*}(theta_+)
  double m1 = 0.0;          // post-change mean of F*
};

/// Best scalar offset for F: matches the twisted drift to the post-change mean.
inline OffsetResult optimize_offset(const ObservationModel& model, const Statistic& f, double decay_rate) {
  const Cgf cgf(model, f);
  const double m1 = stationary_means_unchecked(model, f).m1;
  const auto gap = [&](double t) {
    try {
      return cgf.slope(t) - m1;
    } catch (const DomainError&) {
      return numerics::kInf;
    }
  };
  if (!(gap(0.0) < 0.0)) throw DomainError("offset objective has no positive minimiser (m0 >= m1)");
  double hi = 1.0;
  while (gap(hi) < 0.0) {
    hi *= 2.0;
    if (hi > 1e6) throw DomainError("offset objective is unbounded below");
  }
  OffsetResult out;
  out.theta1 = numerics::bisect_increasing(gap, 0.0, hi);
  out.offset = (decay_rate - cgf.value(out.theta1)) / out.theta1;
  out.f_star = f.shifted(out.offset);
  const auto profile = solve_exponents(model, out.f_star, decay_rate);
  out.theta_plus = profile.theta_plus;
  out.drift_plus = profile.drift_plus;
  out.m1 = profile.m1;
  return out;
}

}  // namespace qcdlab
