#pragma once

// Large-deviations engine: CGFs and twisted laws, the exponents theta_0 and
// theta_+, the convex dual I_0, the eagerness curve G and the closed-form
// MDE / cost / threshold approximations.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <utility>
#include <vector>

#include "qcdlab/errors.hpp"
#include "qcdlab/linalg.hpp"
#include "qcdlab/metastable.hpp"
#include "qcdlab/model.hpp"
#include "qcdlab/numerics.hpp"

namespace qcdlab {

struct CgfPoint {
  double value = 0.0;      // Upsilon(theta)
  double slope = 0.0;      // Upsilon'(theta), the twisted mean of F
  double curvature = 0.0;  // Upsilon''(theta)
};

/// A twisted (exponentially tilted) law: weights over cells, a Gaussian, or
/// weights over quadrature nodes for a Gaussian model with a general F.
struct TwistedLaw {
  enum class Kind { cells, gaussian, nodes };
  Kind kind = Kind::cells;
  std::vector<double> weights;
  std::vector<double> nodes;
  double mean = 0.0;
  double var = 0.0;

  double expect(const Statistic& f) const {
    switch (kind) {
      case Kind::cells:
        return cell_expectation(f, weights);
      case Kind::gaussian:
        return gaussian_expectation(f, mean, var);
      case Kind::nodes: {
        double acc = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * f.at_value(nodes[i]);
        return acc;
      }
    }
    return 0.0;
  }

  double total_mass() const {
    if (kind == Kind::gaussian) return 1.0;
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

/// Upsilon(theta) = Lambda_0(theta F) for one model and statistic.
///
/// i.i.d. data: the log moment generating function. Markov pairs: the log
/// Perron-Frobenius eigenvalue of P0(x,z) exp(theta F(x,z)). Hidden chains:
/// the conditional CGF log lambda_F - log lambda on the survival-restricted
/// kernel.
class Cgf {
 public:
  Cgf(const ObservationModel& model, Statistic f)
      : model_(std::make_shared<const ObservationModel>(model)), f_(std::move(f)) {
    if (is_finite_model(*model_)) cells_ = f_.cell_values(cell_count(*model_));
    if (const auto* g = std::get_if<IidGaussian>(model_.get());
        g != nullptr && f_.kind() == Statistic::Kind::table)
      throw DomainError("table statistic on a Gaussian model");
  }

  const ObservationModel& model() const { return *model_; }
  const Statistic& statistic() const { return f_; }

  double value(double theta) const { return evaluate(theta, false).value; }

  /// Value, or +inf outside the effective domain.
  double value_or_inf(double theta) const {
    try {
      return value(theta);
    } catch (const DomainError&) {
      return numerics::kInf;
    }
  }

  double slope(double theta) const { return evaluate(theta, false).slope; }

  CgfPoint operator()(double theta) const {
    CgfPoint p = evaluate(theta, true);
    if (std::holds_alternative<FiniteMarkov>(*model_) || std::holds_alternative<PomdpModel>(*model_))
      p.curvature = richardson_curvature(theta);
    return p;
  }

  TwistedLaw twisted(double theta) const {
    TwistedLaw law;
    evaluate(theta, false, &law);
    return law;
  }

 private:
  // Central difference of the exact slope with one Richardson step.
  double richardson_curvature(double theta) const {
    const double h = 1e-4 * std::max(1.0, std::abs(theta));
    const auto diff = [&](double step) { return (slope(theta + step) - slope(theta - step)) / (2.0 * step); };
    return (4.0 * diff(0.5 * h) - diff(h)) / 3.0;
  }

  CgfPoint evaluate(double theta, bool with_curvature, TwistedLaw* law = nullptr) const {
    return std::visit([&](const auto& m) { return evaluate_on(m, theta, with_curvature, law); }, *model_);
  }

  CgfPoint evaluate_on(const IidGaussian& g, double theta, bool with_curvature, TwistedLaw* law) const {
    if (f_.kind() == Statistic::Kind::polynomial && f_.degree() <= 2) {
      const auto& c = f_.values();
      const double c0 = c[0];
      const double c1 = c.size() > 1 ? c[1] : 0.0;
      const double c2 = c.size() > 2 ? c[2] : 0.0;
      const double sd = std::sqrt(g.pre_var);
      const double alpha = theta * c2 * g.pre_var;
      const double beta = sd * (2.0 * theta * c2 * g.pre_mean + theta * c1);
      const double room = 1.0 - 2.0 * alpha;
      if (!(room > 0.0)) throw DomainError("Gaussian CGF diverges at theta = " + std::to_string(theta));
      CgfPoint p;
      p.value = theta * (c0 + c1 * g.pre_mean + c2 * g.pre_mean * g.pre_mean) - 0.5 * std::log(room) +
                beta * beta / (2.0 * room);
      const double mean = g.pre_mean + sd * beta / room;
      const double var = g.pre_var / room;
      p.slope = c0 + c1 * mean + c2 * (var + mean * mean);
      if (with_curvature) {
        const double lin = c1 + 2.0 * c2 * mean;
        p.curvature = lin * lin * var + 2.0 * c2 * c2 * var * var;
      }
      if (law) {
        law->kind = TwistedLaw::Kind::gaussian;
        law->mean = mean;
        law->var = var;
      }
      return p;
    }
    // General F: Gauss-Hermite nodes, doubled until the log-moment settles.
    const double sd = std::sqrt(g.pre_var);
    double previous = numerics::kInf;
    for (std::size_t level = 0; level < numerics::kHermiteLevels.size(); ++level) {
      const auto& rule = numerics::gauss_hermite(level);
      std::vector<double> exps(rule.nodes.size());
      for (std::size_t i = 0; i < rule.nodes.size(); ++i) exps[i] = theta * f_.at_value(g.pre_mean + sd * rule.nodes[i]);
      const double value = numerics::log_sum_exp(rule.weights, exps);
      const bool settled = std::abs(value - previous) <= 1e-10 * std::max(1.0, std::abs(value));
      if (settled || level + 1 == numerics::kHermiteLevels.size()) {
        if (!std::isfinite(value)) throw DomainError("CGF diverges at theta = " + std::to_string(theta));
        CgfPoint p;
        p.value = value;
        std::vector<double> w(rule.nodes.size());
        std::vector<double> x(rule.nodes.size());
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
          w[i] = rule.weights[i] * std::exp(exps[i] - value);
          x[i] = g.pre_mean + sd * rule.nodes[i];
          const double fx = f_.at_value(x[i]);
          m1 += w[i] * fx;
          m2 += w[i] * fx * fx;
        }
        p.slope = m1;
        p.curvature = m2 - m1 * m1;
        if (law) {
          law->kind = TwistedLaw::Kind::nodes;
          law->weights = std::move(w);
          law->nodes = std::move(x);
        }
        return p;
      }
      previous = value;
    }
    return {};
  }

  CgfPoint evaluate_on(const IidDiscrete& d, double theta, bool, TwistedLaw* law) const {
    std::vector<double> exps(cells_.size());
    for (std::size_t y = 0; y < cells_.size(); ++y) exps[y] = d.pmf0[y] > 0.0 ? theta * cells_[y] : 0.0;
    CgfPoint p;
    p.value = numerics::log_sum_exp(d.pmf0, exps);
    if (!std::isfinite(p.value)) throw DomainError("CGF is not finite at theta = " + std::to_string(theta));
    std::vector<double> w(cells_.size(), 0.0);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t y = 0; y < cells_.size(); ++y) {
      if (d.pmf0[y] <= 0.0) continue;
      w[y] = d.pmf0[y] * std::exp(exps[y] - p.value);
      m1 += w[y] * cells_[y];
      m2 += w[y] * cells_[y] * cells_[y];
    }
    p.slope = m1;
    p.curvature = m2 - m1 * m1;
    if (law) {
      law->kind = TwistedLaw::Kind::cells;
      law->weights = std::move(w);
    }
    return p;
  }

  CgfPoint evaluate_on(const FiniteMarkov& m, double theta, bool, TwistedLaw* law) const {
    const int n = m.states();
    double shift = -numerics::kInf;
    for (int x = 0; x < n; ++x)
      for (int z = 0; z < n; ++z)
        if (m.p0(x, z) > 0.0) shift = std::max(shift, theta * cells_[static_cast<std::size_t>(m.cell(x, z))]);
    Eigen::MatrixXd tilted = Eigen::MatrixXd::Zero(n, n);
    for (int x = 0; x < n; ++x)
      for (int z = 0; z < n; ++z)
        if (m.p0(x, z) > 0.0)
          tilted(x, z) = m.p0(x, z) * std::exp(theta * cells_[static_cast<std::size_t>(m.cell(x, z))] - shift);
    const auto pf = linalg::perron_frobenius(tilted);
    CgfPoint p;
    p.value = shift + std::log(pf.eigenvalue);
    if (!std::isfinite(p.value)) throw DomainError("CGF is not finite at theta = " + std::to_string(theta));
    std::vector<double> w(static_cast<std::size_t>(n * n), 0.0);
    double mean = 0.0;
    for (int x = 0; x < n; ++x)
      for (int z = 0; z < n; ++z) {
        const auto c = static_cast<std::size_t>(m.cell(x, z));
        w[c] = pf.left(x) * tilted(x, z) * pf.right(z) / pf.eigenvalue;
        if (w[c] > 0.0) mean += w[c] * cells_[c];
      }
    p.slope = mean;
    if (law) {
      law->kind = TwistedLaw::Kind::cells;
      law->weights = std::move(w);
    }
    return p;
  }

  CgfPoint evaluate_on(const PomdpModel& m, double theta, bool, TwistedLaw* law) const {
    const auto cond = conditional_cgf(m.report, cells_, theta);
    CgfPoint p;
    p.value = cond.value;
    p.slope = cond.slope;
    if (law) {
      law->kind = TwistedLaw::Kind::cells;
      law->weights.assign(cells_.size(), 0.0);
      for (std::size_t i = 0; i < m.chain().pre_states.size(); ++i)
        law->weights[static_cast<std::size_t>(m.chain().labels[static_cast<std::size_t>(m.chain().pre_states[i])])] +=
            cond.twisted_states(static_cast<Eigen::Index>(i));
    }
    return p;
  }

  std::shared_ptr<const ObservationModel> model_;
  Statistic f_;
  std::vector<double> cells_;
};

/// (Upsilon, Upsilon', Upsilon'') at theta.
inline CgfPoint cgf(const ObservationModel& model, const Statistic& f, double theta) { return Cgf(model, f)(theta); }

/// The twisted law pi-check_theta of the pre-change marginal.
inline TwistedLaw twisted_marginal(const ObservationModel& model, const Statistic& f, double theta) {
  return Cgf(model, f).twisted(theta);
}

struct CgfProfile {
  std::shared_ptr<const Cgf> cgf;
  double decay_rate = 0.0;      // rho_a
  double theta0 = 0.0;          // positive root of Upsilon
  double theta_plus = 0.0;      // root of Upsilon = rho_a beyond theta0
  double drift0 = 0.0;          // Upsilon'(theta0)
  double drift_plus = 0.0;      // Upsilon'(theta_plus)
  double m0 = 0.0;              // Upsilon'(0)
  double m1 = 0.0;              // post-change mean
  double curvature_plus = 0.0;  // Upsilon''(theta_plus)
};

/// Root theta > 0 of Upsilon(theta) = level, searched from `start` by doubling then bisection.
inline double solve_cgf_level(const Cgf& cgf, double level, double start, const char* assumption) {
  const auto shifted = [&](double t) { return cgf.value_or_inf(t) - level; };
  std::array<double, 2> bracket{};
  try {
    bracket = numerics::expand_until_positive(shifted, start, start, 1e8);
  } catch (const DomainError&) {
    throw AssumptionViolation(assumption, "no root of the CGF at level " + std::to_string(level));
  }
  if (bracket[0] == bracket[1]) throw AssumptionViolation(assumption, "CGF is already above the level at the search start");
  const double root = numerics::bisect_increasing(shifted, bracket[0], bracket[1]);
  const double residual = std::abs(shifted(root));
  if (!(residual <= 1e-12 * std::max(1.0, std::abs(level))))
    throw DomainError("CGF root residual " + std::to_string(residual) + " above tolerance");
  return root;
}

/// Exponents and drifts for a (model, F) pair and tail rate rho_a.
inline CgfProfile solve_exponents(std::shared_ptr<const Cgf> cgf, double m1, double decay_rate) {
  if (!(decay_rate > 0.0) || !std::isfinite(decay_rate)) throw DomainError("decay rate must be positive and finite");
  CgfProfile p;
  p.cgf = std::move(cgf);
  p.decay_rate = decay_rate;
  p.m1 = m1;
  p.m0 = p.cgf->slope(0.0);
  if (!(p.m0 < 0.0) || !(m1 > 0.0))
    throw AssumptionViolation("A1", "drift signs violated: m0 = " + std::to_string(p.m0) + ", m1 = " + std::to_string(m1));
  p.theta0 = solve_cgf_level(*p.cgf, 0.0, 1e-6, "A3");
  p.theta_plus = solve_cgf_level(*p.cgf, decay_rate, p.theta0, "A3");
  p.drift0 = p.cgf->slope(p.theta0);
  const CgfPoint plus = (*p.cgf)(p.theta_plus);
  p.drift_plus = plus.slope;
  p.curvature_plus = plus.curvature;
  return p;
}

inline CgfProfile solve_exponents(const ObservationModel& model, const Statistic& f, double decay_rate) {
  const Means means = stationary_means_unchecked(model, f);
  return solve_exponents(std::make_shared<const Cgf>(model, f), means.m1, decay_rate);
}

// ---------------------------------------------------------------------------
// Convex dual

struct RatePoint {
  double value = 0.0;  // I_0(m)
  double theta = 0.0;  // maximiser theta(m), Upsilon'(theta(m)) = m
};

/// I_0(m) = sup_theta [theta m - Upsilon(theta)].
inline RatePoint rate_function(const CgfProfile& profile, double m) {
  const Cgf& cgf = *profile.cgf;
  const double m0 = profile.m0;
  if (m == m0) return {0.0, 0.0};
  const double direction = m > m0 ? 1.0 : -1.0;
  // Along the search direction the (signed) slope gap is increasing; outside
  // the CGF domain it counts as above the root.
  const auto gap = [&](double t) {
    try {
      return direction * (cgf.slope(direction * t) - m);
    } catch (const DomainError&) {
      return numerics::kInf;
    }
  };
  double hi = std::max(1.0, profile.theta_plus);
  while (gap(hi) < 0.0) {
    hi *= 2.0;
    if (hi > 1e4) throw DomainError("m = " + std::to_string(m) + " is outside the attainable drift range");
  }
  const double t = direction * numerics::bisect_increasing(gap, 0.0, hi);
  const double slope = cgf.slope(t);
  if (std::abs(slope - m) > 1e-8 * std::max(1.0, std::abs(m)))
    throw DomainError("m = " + std::to_string(m) + " is at the boundary of the attainable drift range");
  return {t * m - cgf.value(t), t};
}

/// Most-likely path to reach level 1 within time T (statistic and time both
/// scaled by 1/H). `knots` are (t, x) points of the reflected statistic.
struct PathExponent {
  double value = 0.0;
  double climb_slope = 0.0;
  std::vector<std::pair<double, double>> knots;
};

inline PathExponent path_exponent(const CgfProfile& profile, double horizon) {
  if (!(horizon > 0.0)) throw DomainError("path horizon must be positive");
  PathExponent out;
  const double kink = 1.0 / profile.drift0;
  if (horizon < kink) {
    try {
      out.value = horizon * rate_function(profile, 1.0 / horizon).value;
    } catch (const DomainError&) {
      out.value = numerics::kInf;
    }
    out.climb_slope = 1.0 / horizon;
    out.knots = {{0.0, 0.0}, {horizon, 1.0}};
  } else {
    // Idle at the reflecting barrier, then climb at the twisted drift.
    out.value = profile.theta0;
    out.climb_slope = profile.drift0;
    out.knots = {{0.0, 0.0}};
    if (horizon > kink) out.knots.emplace_back(horizon - kink, 0.0);
    out.knots.emplace_back(horizon, 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Eagerness curve and Laplace approximations

struct MdeApprox {
  double first = 0.0;   // MDE^1: Laplace term around s*
  double second = 0.0;  // MDE^2: tail term from s >= s0
  double total = 0.0;
};

struct EagernessCurve {
  CgfProfile profile;
  double decay_rate = 0.0;
  double s_star = 0.0;   // 1 / drift_plus
  double s_kink = 0.0;   // 1 / drift0
  double gamma2 = 0.0;   // Upsilon''(theta_+) / theta_+^3
  double exact_gamma2 = 0.0;  // 1 / G''(s*) = Upsilon''(theta_+) / drift_plus^3
  double window_exponent = 0.75;

  double exponent(double s) const { return path_exponent(profile, s).value; }
  double G(double s) const { return exponent(s) + decay_rate * s; }
  double centered(double s) const { return G(s) - profile.theta_plus; }
  double laplace_width(double h) const { return gamma2 / h; }
  double window(double h) const { return std::pow(h, -1.0 + window_exponent); }

  MdeApprox mde(double h) const {
    if (!(h > 0.0)) throw DomainError("threshold must be positive");
    MdeApprox out;
    out.first = std::sqrt(h) * std::sqrt(2.0 * std::numbers::pi * gamma2) * std::exp(-h * profile.theta_plus);
    out.second = std::exp(-h * profile.theta0) / (1.0 - std::exp(-decay_rate));
    out.total = out.first + out.second;
    return out;
  }
};

inline EagernessCurve eagerness_curve(const CgfProfile& profile) {
  EagernessCurve c;
  c.profile = profile;
  c.decay_rate = profile.decay_rate;
  c.s_star = 1.0 / profile.drift_plus;
  c.s_kink = 1.0 / profile.drift0;
  c.gamma2 = profile.curvature_plus / std::pow(profile.theta_plus, 3);
  c.exact_gamma2 = profile.curvature_plus / std::pow(profile.drift_plus, 3);
  return c;
}

inline MdeApprox approx_mde(const EagernessCurve& curve, double h) { return curve.mde(h); }

/// H / m1 + kappa (MDE^1 + MDE^2).
inline double approx_cost(const EagernessCurve& curve, double h, double kappa, double m1) {
  if (!(m1 > 0.0)) throw DomainError("m1 must be positive");
  if (kappa < 0.0) throw DomainError("kappa must be nonnegative");
  return h / m1 + kappa * curve.mde(h).total;
}

struct ThresholdApprox {
  double kappa = 0.0;
  double h_inf = 0.0;      // log(kappa) / theta_+
  double h_first = 0.0;    // (log(kappa) + b) / theta_+
  double b = 0.0;          // log(m1 sqrt(pi gamma^2 theta_+))
  double j_inf = 0.0;      // h_inf / m1
  double h_numeric = 0.0;  // minimiser of approx_cost on (0, 10 h_inf]
  double j_numeric = 0.0;
};

inline ThresholdApprox approx_optimal_threshold(const EagernessCurve& curve, double kappa, double m1) {
  if (!(kappa > 1.0)) throw DomainError("kappa must exceed 1");
  ThresholdApprox t;
  const double theta_plus = curve.profile.theta_plus;
  t.kappa = kappa;
  t.h_inf = std::log(kappa) / theta_plus;
  t.b = std::log(m1 * std::sqrt(std::numbers::pi * curve.gamma2 * theta_plus));
  t.h_first = (std::log(kappa) + t.b) / theta_plus;
  t.j_inf = t.h_inf / m1;
  const auto cost = [&](double h) { return approx_cost(curve, h, kappa, m1); };
  t.h_numeric = numerics::golden_section_minimize(cost, 1e-9 * t.h_inf, 10.0 * t.h_inf, 1e-12);
  t.j_numeric = cost(t.h_numeric);
  return t;
}

// ---------------------------------------------------------------------------
// Lambert-type inverse

/// W(z) = z - log z.
inline double lambert_w(double z) { return z - std::log(z); }

/// L(w) = w + log w, an approximate inverse of W.
inline double lambert_inverse(double w) {
  if (!(w > 0.0)) throw DomainError("L(w) needs w > 0");
  return w + std::log(w);
}

struct LambertCheck {
  double z = 0.0;
  double epsilon = 0.0;  // z - L(W(z))
  double bound = 0.0;    // log(z) / (z - log z)
  bool holds = false;
};

inline LambertCheck lambert_bound_check(double z) {
  if (!(z > 1.0)) throw DomainError("the Lambert bound needs z > 1");
  LambertCheck c;
  c.z = z;
  c.epsilon = z - lambert_inverse(lambert_w(z));
  c.bound = std::log(z) / (z - std::log(z));
  c.holds = c.epsilon >= 0.0 && c.epsilon <= c.bound;
  return c;
}

// ---------------------------------------------------------------------------
// Relative entropy rates

struct EntropyRates {
  double cgf_at_one = 0.0;       // Lambda_0(F)
  double twisted = 0.0;          // K(mu-check || mu0) for the theta = 1 twist
  double post_vs_pre = 0.0;      // K(mu1 || mu0)
  double post_vs_twisted = 0.0;  // K(mu1 || mu-check)
  double m1 = 0.0;
  double residual = 0.0;         // m1 - [Lambda_0(F) + K(mu1||mu0) - K(mu1||mu-check)]
  bool infinite = false;
};

namespace detail {

// sum_c a_c t_c over cells with a_c > 0; t_c = +inf flags a support mismatch.
inline double cell_divergence(const std::vector<double>& a, const std::vector<double>& log_a_over_b_terms) {
  double acc = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c)
    if (a[c] > 0.0) acc += a[c] * log_a_over_b_terms[c];
  return acc;
}

}  // namespace detail

/// Entropy rates for finite i.i.d. or Markov models; relative entropies of
/// Markov chains are rates, K(P||Q) = sum mu(x) P(x,z) log(P(x,z)/Q(x,z)).
inline EntropyRates entropy_rates(const ObservationModel& model, const Statistic& f) {
  if (!std::holds_alternative<IidDiscrete>(model) && !std::holds_alternative<FiniteMarkov>(model))
    throw DomainError("entropy rates need a finite i.i.d. or Markov model");
  const Cgf cgf(model, f);
  const auto [pre, post] = cell_laws(model);
  const int cells = cell_count(model);
  EntropyRates out;
  out.cgf_at_one = cgf.value(1.0);
  out.m1 = cell_expectation(f, post);
  const TwistedLaw tw = cgf.twisted(1.0);

  // Per-step log kernel ratios: the i.i.d. case uses the marginals directly.
  std::vector<double> log_twist_over_pre(static_cast<std::size_t>(cells), 0.0);
  std::vector<double> log_post_over_pre(static_cast<std::size_t>(cells), numerics::kInf);
  std::vector<double> log_post_over_twist(static_cast<std::size_t>(cells), numerics::kInf);
  const auto ratio = [](double a, double b) { return b > 0.0 ? std::log(a / b) : numerics::kInf; };
  if (const auto* d = std::get_if<IidDiscrete>(&model)) {
    for (int c = 0; c < cells; ++c) {
      const auto i = static_cast<std::size_t>(c);
      log_twist_over_pre[i] = tw.weights[i] > 0.0 ? ratio(tw.weights[i], d->pmf0[i]) : 0.0;
      log_post_over_pre[i] = d->pmf1[i] > 0.0 ? ratio(d->pmf1[i], d->pmf0[i]) : 0.0;
      log_post_over_twist[i] = d->pmf1[i] > 0.0 ? ratio(d->pmf1[i], tw.weights[i]) : 0.0;
    }
  } else {
    const auto& m = std::get<FiniteMarkov>(model);
    const int n = m.states();
    // Twisted kernel rows from the twisted pair law.
    Eigen::VectorXd row_mass = Eigen::VectorXd::Zero(n);
    for (int x = 0; x < n; ++x)
      for (int z = 0; z < n; ++z) row_mass(x) += tw.weights[static_cast<std::size_t>(m.cell(x, z))];
    for (int x = 0; x < n; ++x)
      for (int z = 0; z < n; ++z) {
        const auto i = static_cast<std::size_t>(m.cell(x, z));
        const double check = row_mass(x) > 0.0 ? tw.weights[i] / row_mass(x) : 0.0;
        log_twist_over_pre[i] = check > 0.0 ? ratio(check, m.p0(x, z)) : 0.0;
        log_post_over_pre[i] = m.p1(x, z) > 0.0 ? ratio(m.p1(x, z), m.p0(x, z)) : 0.0;
        log_post_over_twist[i] = m.p1(x, z) > 0.0 ? ratio(m.p1(x, z), check) : 0.0;
      }
  }
  out.twisted = detail::cell_divergence(tw.weights, log_twist_over_pre);
  out.post_vs_pre = detail::cell_divergence(post, log_post_over_pre);
  out.post_vs_twisted = detail::cell_divergence(post, log_post_over_twist);
  out.infinite = !std::isfinite(out.twisted) || !std::isfinite(out.post_vs_pre) || !std::isfinite(out.post_vs_twisted);
  out.residual = out.infinite ? numerics::kInf
                              : out.m1 - (out.cgf_at_one + out.post_vs_pre - out.post_vs_twisted);
  return out;
}

// ---------------------------------------------------------------------------
// Validation helpers for the Laplace step

struct RiemannCheck {
  double sum = 0.0;       // sum_n exp(-H G~(n/H)) over the window
  double integral = 0.0;  // H * integral of exp(-H G~(s)) over the window
  double ratio = 0.0;
};

/// Compares the lattice sum with its integral over |s - s*| <= delta_H.
inline RiemannCheck riemann_laplace_ratio(const EagernessCurve& curve, double h) {
  const double delta = curve.window(h);
  const double lo = std::max(curve.s_star - delta, 1e-12);
  const double hi = curve.s_star + delta;
  const auto integrand = [&](double s) { return std::exp(-h * curve.centered(s)); };
  RiemannCheck out;
  for (long n = static_cast<long>(std::ceil(lo * h)); static_cast<double>(n) <= hi * h; ++n)
    out.sum += integrand(static_cast<double>(n) / h);
  out.integral = h * boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, lo, hi, 15, 1e-12);
  out.ratio = out.sum / out.integral;
  return out;
}

struct GaussianTail {
  double q = 0.0;      // P{Z > x}
  double lower = 0.0;  // x / (1 + x^2) phi(x)
  double upper = 0.0;  // phi(x) / x
};

inline GaussianTail gaussian_tail_bounds(double x) {
  if (!(x > 0.0)) throw DomainError("tail bounds need x > 0");
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return {0.5 * std::erfc(x / std::numbers::sqrt2), x / (1.0 + x * x) * phi, phi / x};
}

}  // namespace qcdlab
