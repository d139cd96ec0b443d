#pragma once

// Metastability of a finite absorbing chain: the survival-restricted kernel
// M = P restricted to X0, its Perron-Frobenius factorisation, the
// quasi-stationary (Yaglom) law, and the induced observation marginals that
// feed the large-deviations approximations.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "qcdlab/errors.hpp"
#include "qcdlab/linalg.hpp"

namespace qcdlab {

/// Finite hidden chain with an absorbing post-change region.
///
/// `pre_states` lists X0 (indices into the kernel); every other state is in
/// X1. `labels[z]` is the observation h(z), an integer in 0..L-1.
struct PomdpChain {
  Eigen::MatrixXd kernel;
  std::vector<int> pre_states;
  std::vector<int> labels;

  int state_count() const { return static_cast<int>(kernel.rows()); }
  int label_count() const { return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1; }

  bool is_pre_change(int z) const {
    return std::find(pre_states.begin(), pre_states.end(), z) != pre_states.end();
  }

  std::vector<int> post_states() const {
    std::vector<int> out;
    for (int z = 0; z < state_count(); ++z)
      if (!is_pre_change(z)) out.push_back(z);
    return out;
  }
};

struct MetastableReport {
  PomdpChain chain;
  Eigen::MatrixXd restricted;         // M, rows/cols ordered as chain.pre_states
  double eigenvalue = 0.0;            // lambda
  Eigen::VectorXd left;               // u, sums to one
  Eigen::VectorXd right;              // v, u . v = 1
  Eigen::MatrixXd twisted_kernel;     // lambda^-1 v_i^-1 M_ij v_j
  Eigen::VectorXd twisted_invariant;  // invariant pmf of the twisted kernel
  Eigen::VectorXd quasi_stationary;   // Yaglom law, proportional to v^-1 times twisted_invariant
  double decay_rate = 0.0;            // -log lambda

  int pre_index(int z) const {
    const auto it = std::find(chain.pre_states.begin(), chain.pre_states.end(), z);
    if (it == chain.pre_states.end()) throw DomainError("state " + std::to_string(z) + " is not in X0");
    return static_cast<int>(it - chain.pre_states.begin());
  }
};

namespace detail {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline BoolMatrix bool_product(const BoolMatrix& a, const BoolMatrix& b) {
  BoolMatrix out = BoolMatrix::Constant(a.rows(), b.cols(), false);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index k = 0; k < a.cols(); ++k)
      if (a(i, k))
        for (Eigen::Index j = 0; j < b.cols(); ++j) out(i, j) = out(i, j) || b(k, j);
  return out;
}

inline Eigen::MatrixXd restrict_to(const Eigen::MatrixXd& p, const std::vector<int>& states) {
  const auto n = static_cast<Eigen::Index>(states.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = p(states[static_cast<std::size_t>(i)], states[static_cast<std::size_t>(j)]);
  return m;
}

}  // namespace detail

/// Checks (P1) absorption, (P2) uni-chain reachability and (P3) the
/// positive-column condition on M; throws AssumptionViolation naming the
/// first failure.
inline void check_metastability_assumptions(const PomdpChain& chain) {
  const int n = chain.state_count();
  try {
    linalg::require_stochastic(chain.kernel, "P");
  } catch (const InvalidModel& e) {
    throw AssumptionViolation("P1", e.what());
  }
  if (static_cast<int>(chain.labels.size()) != n) throw InvalidModel("label map must have one entry per state");
  if (chain.pre_states.empty() || static_cast<int>(chain.pre_states.size()) >= n)
    throw AssumptionViolation("P1", "X0 and X1 must both be nonempty");
  for (int z : chain.pre_states)
    if (z < 0 || z >= n) throw InvalidModel("X0 index out of range");
  const auto post = chain.post_states();
  for (int z : post)
    for (int w : chain.pre_states)
      if (chain.kernel(z, w) != 0.0)
        throw AssumptionViolation("P1", "X1 is not absorbing: P(" + std::to_string(z) + "," + std::to_string(w) + ") > 0");

  // (P2): one X1 state reachable from every state in at least one step.
  detail::BoolMatrix reach = (chain.kernel.array() > 0.0).matrix();
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      if (reach(i, k))
        for (int j = 0; j < n; ++j) reach(i, j) = reach(i, j) || reach(k, j);
  const bool uni_chain = std::any_of(post.begin(), post.end(), [&](int target) {
    for (int z = 0; z < n; ++z)
      if (!reach(z, target)) return false;
    return true;
  });
  if (!uni_chain) throw AssumptionViolation("P2", "no X1 state is reachable from every state");

  // (P3): some power M^k, k <= |X0|^2, has a strictly positive column.
  const detail::BoolMatrix pattern = (detail::restrict_to(chain.kernel, chain.pre_states).array() > 0.0).matrix();
  detail::BoolMatrix power = pattern;
  const int n0 = static_cast<int>(chain.pre_states.size());
  for (int k = 1; k <= std::max(1, n0 * n0); ++k) {
    for (int j = 0; j < n0; ++j)
      if (power.col(j).all()) return;
    power = detail::bool_product(power, pattern);
  }
  throw AssumptionViolation("P3", "no power of the restricted kernel has a strictly positive column");
}

/// Perron-Frobenius factorisation of the survival-restricted kernel.
inline MetastableReport survival_factorization(const PomdpChain& chain) {
  check_metastability_assumptions(chain);
  MetastableReport report;
  report.chain = chain;
  report.restricted = detail::restrict_to(chain.kernel, chain.pre_states);
  const auto pf = linalg::perron_frobenius(report.restricted);
  if (!(pf.eigenvalue > 0.0 && pf.eigenvalue < 1.0))
    throw AssumptionViolation("P3", "Perron-Frobenius eigenvalue " + std::to_string(pf.eigenvalue) + " not in (0,1)");
  if ((pf.right.array() <= 0.0).any() || (pf.left.array() <= 0.0).any())
    throw AssumptionViolation("P3", "Perron-Frobenius eigenvectors are not strictly positive");
  report.eigenvalue = pf.eigenvalue;
  report.left = pf.left;
  report.right = pf.right;
  report.decay_rate = -std::log(pf.eigenvalue);

  const auto n0 = report.restricted.rows();
  report.twisted_kernel.resize(n0, n0);
  for (Eigen::Index i = 0; i < n0; ++i)
    for (Eigen::Index j = 0; j < n0; ++j)
      report.twisted_kernel(i, j) = report.restricted(i, j) * pf.right(j) / (pf.eigenvalue * pf.right(i));
  // The twisted kernel's invariant pmf is u_j v_j (u . v = 1).
  report.twisted_invariant = pf.left.cwiseProduct(pf.right);
  report.twisted_invariant /= report.twisted_invariant.sum();
  report.quasi_stationary = report.twisted_invariant.cwiseQuotient(pf.right);
  report.quasi_stationary /= report.quasi_stationary.sum();
  return report;
}

/// Least-squares line through (n, log|e_n|).
struct GeometricFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  int points = 0;
};

inline GeometricFit fit_log_linear(const std::vector<double>& errors, double floor, int first = 1) {
  std::vector<double> xs;
  std::vector<double> ys;
  for (int n = first; n < static_cast<int>(errors.size()); ++n) {
    const double e = std::abs(errors[static_cast<std::size_t>(n)]);
    if (!(e > floor)) break;
    xs.push_back(n);
    ys.push_back(std::log(e));
  }
  GeometricFit fit;
  fit.points = static_cast<int>(xs.size());
  if (fit.points < 3) return fit;
  const double k = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / k;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / k;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

/// Exact survival table from matrix powers of M, for a start state in X0.
struct SurvivalCurve {
  int initial_state = 0;
  std::vector<double> survival_after;     // P{tau_a > n}
  std::vector<double> survival_from;      // P{tau_a >= n}
  std::vector<Eigen::VectorXd> conditional;  // P{Phi_n = . | tau_a > n}, over X0
  double prefactor = 0.0;                 // fitted b0(z)
  std::vector<double> error_a;            // eps^a_n
  std::vector<double> error_b;            // eps^b_n, worst case over X0
  GeometricFit fit_a;
  GeometricFit fit_b;
};

inline SurvivalCurve survival_curve(const MetastableReport& report, int initial_state, int n_max) {
  if (n_max < 21) throw DomainError("survival curve needs n_max > 20 to fit the prefactor");
  SurvivalCurve curve;
  curve.initial_state = initial_state;
  const int start = report.pre_index(initial_state);
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(report.restricted.rows());
  row(start) = 1.0;
  std::vector<double> scaled;
  for (int n = 0; n <= n_max; ++n) {
    const double mass = row.sum();
    curve.survival_after.push_back(mass);
    curve.conditional.push_back((row / mass).transpose());
    scaled.push_back(mass * std::pow(report.eigenvalue, -(n + 1)));
    row = row * report.restricted;
  }
  curve.survival_from.push_back(1.0);
  for (int n = 1; n <= n_max; ++n) curve.survival_from.push_back(curve.survival_after[static_cast<std::size_t>(n - 1)]);

  // b0 is the least-squares constant through the last 20 scaled values.
  curve.prefactor = std::accumulate(scaled.end() - 20, scaled.end(), 0.0) / 20.0;
  for (int n = 0; n <= n_max; ++n) {
    curve.error_a.push_back(scaled[static_cast<std::size_t>(n)] - curve.prefactor);
    const Eigen::ArrayXd ratio =
        curve.conditional[static_cast<std::size_t>(n)].array() / report.quasi_stationary.array() - 1.0;
    curve.error_b.push_back(ratio.abs().maxCoeff());
  }
  curve.fit_a = fit_log_linear(curve.error_a, 1e-11 * curve.prefactor);
  curve.fit_b = fit_log_linear(curve.error_b, 1e-11);
  return curve;
}

/// Observation marginals: post-change from the chain's invariant pmf on X1,
/// pre-change from the quasi-stationary law on X0.
struct InducedMarginals {
  std::vector<double> pre;
  std::vector<double> post;
  Eigen::VectorXd invariant;  // over all states; supported on X1
};

inline InducedMarginals induced_marginals(const MetastableReport& report) {
  const auto& chain = report.chain;
  InducedMarginals out;
  out.invariant = linalg::stationary_pmf(chain.kernel);
  const auto labels = static_cast<std::size_t>(chain.label_count());
  out.pre.assign(labels, 0.0);
  out.post.assign(labels, 0.0);
  for (int z : chain.post_states()) out.post[static_cast<std::size_t>(chain.labels[static_cast<std::size_t>(z)])] += out.invariant(z);
  for (std::size_t i = 0; i < chain.pre_states.size(); ++i)
    out.pre[static_cast<std::size_t>(chain.labels[static_cast<std::size_t>(chain.pre_states[i])])] +=
        report.quasi_stationary(static_cast<Eigen::Index>(i));
  return out;
}

/// Conditional CGF log(lambda_F) - log(lambda) with its derivative in theta.
///
/// `label_values[y]` is F(y); the tilted kernel is M(i,j) exp(theta F(h(j))).
/// `twisted_states` is the twisted marginal over X0 (u_j v_j of the tilted kernel).
struct ConditionalCgf {
  double value = 0.0;
  double slope = 0.0;
  Eigen::VectorXd twisted_states;
};

inline ConditionalCgf conditional_cgf(const MetastableReport& report, const std::vector<double>& label_values,
                                      double theta) {
  const auto& chain = report.chain;
  if (static_cast<int>(label_values.size()) < chain.label_count())
    throw DomainError("statistic has fewer values than observation labels");
  const auto n0 = report.restricted.rows();
  Eigen::VectorXd f(n0);
  for (Eigen::Index j = 0; j < n0; ++j)
    f(j) = label_values[static_cast<std::size_t>(chain.labels[static_cast<std::size_t>(chain.pre_states[static_cast<std::size_t>(j)])])];
  // Shift the exponents by their maximum so the tilt cannot overflow.
  const Eigen::ArrayXd exponents = theta * f.array();
  const double shift = exponents.maxCoeff();
  if (!std::isfinite(shift)) throw DomainError("tilt is not finite");
  const Eigen::MatrixXd tilted = report.restricted * (exponents - shift).exp().matrix().asDiagonal();
  const auto pf = linalg::perron_frobenius(tilted);
  ConditionalCgf out;
  out.value = shift + std::log(pf.eigenvalue) - std::log(report.eigenvalue);
  if (!std::isfinite(out.value)) throw DomainError("conditional CGF diverges");
  out.twisted_states = pf.left.cwiseProduct(pf.right);
  out.twisted_states /= out.twisted_states.sum();
  out.slope = out.twisted_states.dot(f);
  return out;
}

/// Conditional expectation E[exp(theta sum_{k<n} F(h(Phi_k))) | tau_a >= n]
/// from Phi_0 = initial_state, by exact matrix powers; returned as a logarithm.
inline double log_conditional_moment(const MetastableReport& report, const std::vector<double>& label_values,
                                     double theta, int initial_state, int n) {
  const auto& chain = report.chain;
  const auto n0 = report.restricted.rows();
  Eigen::VectorXd weights(n0);
  for (Eigen::Index j = 0; j < n0; ++j)
    weights(j) = std::exp(theta * label_values[static_cast<std::size_t>(
                                      chain.labels[static_cast<std::size_t>(chain.pre_states[static_cast<std::size_t>(j)])])]);
  const int start = report.pre_index(initial_state);
  // Rescale each step to keep the running vectors representable.
  Eigen::RowVectorXd tilted = Eigen::RowVectorXd::Zero(n0);
  Eigen::RowVectorXd plain = Eigen::RowVectorXd::Zero(n0);
  tilted(start) = weights(start);
  plain(start) = 1.0;
  double log_tilted = 0.0;
  double log_plain = 0.0;
  for (int k = 1; k < n; ++k) {
    tilted = (tilted * report.restricted).cwiseProduct(weights.transpose());
    plain = plain * report.restricted;
    const double st = tilted.sum();
    const double sp = plain.sum();
    log_tilted += std::log(st);
    log_plain += std::log(sp);
    tilted /= st;
    plain /= sp;
  }
  return (log_tilted + std::log(tilted.sum())) - (log_plain + std::log(plain.sum()));
}

/// Stopping costs that reproduce MDD + kappa MDE in the optimal-stopping form:
/// running cost 1{z in X1}, stopping cost kappa E[tau_a | Phi_0 = z] 1{z in X0}.
struct StoppingCosts {
  Eigen::VectorXd running;
  Eigen::VectorXd stopping;
};

inline StoppingCosts stopping_costs(const MetastableReport& report, double kappa) {
  const auto& chain = report.chain;
  StoppingCosts out;
  out.running = Eigen::VectorXd::Ones(chain.state_count());
  out.stopping = Eigen::VectorXd::Zero(chain.state_count());
  const auto n0 = report.restricted.rows();
  const Eigen::VectorXd mean_change =
      (Eigen::MatrixXd::Identity(n0, n0) - report.restricted).partialPivLu().solve(Eigen::VectorXd::Ones(n0));
  for (Eigen::Index i = 0; i < n0; ++i) {
    const int z = chain.pre_states[static_cast<std::size_t>(i)];
    out.running(z) = 0.0;
    out.stopping(z) = kappa * mean_change(i);
  }
  return out;
}

/// Shiryaev's conditional i.i.d. model as a hidden chain on (x0, x1, I):
/// fresh pre- and post-change symbols each step, with the change indicator I
/// jumping to 1 with probability rho. h reads x0 while I = 0 and x1 after.
inline PomdpChain shiryaev_embedding(const std::vector<double>& pmf0, const std::vector<double>& pmf1, double rho) {
  if (pmf0.size() != pmf1.size() || pmf0.empty()) throw InvalidModel("pmfs must be nonempty and of equal size");
  if (!(rho > 0.0 && rho < 1.0)) throw InvalidModel("rho must lie in (0,1)");
  const int m = static_cast<int>(pmf0.size());
  const int n = 2 * m * m;
  const auto index = [m](int x0, int x1, int flag) { return (flag * m + x0) * m + x1; };
  PomdpChain chain;
  chain.kernel = Eigen::MatrixXd::Zero(n, n);
  chain.labels.assign(static_cast<std::size_t>(n), 0);
  for (int flag = 0; flag < 2; ++flag)
    for (int x0 = 0; x0 < m; ++x0)
      for (int x1 = 0; x1 < m; ++x1) {
        const int from = index(x0, x1, flag);
        chain.labels[static_cast<std::size_t>(from)] = flag == 0 ? x0 : x1;
        if (flag == 0) chain.pre_states.push_back(from);
        for (int y0 = 0; y0 < m; ++y0)
          for (int y1 = 0; y1 < m; ++y1) {
            const double fresh = pmf0[static_cast<std::size_t>(y0)] * pmf1[static_cast<std::size_t>(y1)];
            if (flag == 0) {
              chain.kernel(from, index(y0, y1, 0)) += (1.0 - rho) * fresh;
              chain.kernel(from, index(y0, y1, 1)) += rho * fresh;
            } else {
              chain.kernel(from, index(y0, y1, 1)) += fresh;
            }
          }
      }
  return chain;
}

}  // namespace qcdlab
