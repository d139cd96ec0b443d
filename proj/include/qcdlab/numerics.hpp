#pragma once

// Small scalar numerics shared by the analytic modules: bracketing root
// finders, golden-section search, Gauss-Hermite rules and log-sum-exp.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "qcdlab/errors.hpp"

namespace qcdlab::numerics {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// log(sum_i w_i exp(x_i)) evaluated without overflow. Zero weights are skipped.
inline double log_sum_exp(std::span<const double> weights, std::span<const double> exponents) {
  double peak = -kInf;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (weights[i] > 0.0) peak = std::max(peak, exponents[i]);
  if (!std::isfinite(peak)) return peak;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (weights[i] > 0.0) acc += weights[i] * std::exp(exponents[i] - peak);
  return peak + std::log(acc);
}

/// Bisection on an increasing function with f(lo) < 0 < f(hi).
///
/// Non-finite values are treated as "above the root", which lets callers
/// bracket against the edge of a CGF's effective domain. Runs until the
/// bracket collapses to machine resolution; callers check the residual.
template <class Fn>
double bisect_increasing(Fn&& f, double lo, double hi, int max_iter = 400) {
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < max_iter; ++it) {
    mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double value = f(mid);
    if (value == 0.0) return mid;
    if (!std::isfinite(value) || value > 0.0)
      hi = mid;
    else
      lo = mid;
  }
  return mid;
}

/// Expands `start, 2 start, 4 start, ...` until `f` turns positive (or non-finite).
/// Returns the bracket [previous, current]; throws DomainError past `limit`.
template <class Fn>
std::array<double, 2> expand_until_positive(Fn&& f, double floor, double start, double limit) {
  double prev = floor;
  double cur = start;
  while (cur <= limit) {
    const double value = f(cur);
    if (!std::isfinite(value) || value > 0.0) return {prev, cur};
    prev = cur;
    cur *= 2.0;
  }
  throw DomainError("no sign change found below " + std::to_string(limit));
}

/// Golden-section minimisation of a unimodal function on [a, b].
template <class Fn>
double golden_section_minimize(Fn&& f, double a, double b, double tol = 1e-10, int max_iter = 500) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  for (int it = 0; it < max_iter && (b - a) > tol * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return fc < fd ? c : d;
}

/// Golden-section search over the integers in [lo, hi], finished by an
/// exhaustive scan once the bracket is short. Returns the minimising integer.
template <class Fn>
long golden_section_minimize_int(Fn&& f, long lo, long hi) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  while (hi - lo > 8) {
    const long c = hi - static_cast<long>(std::lround(inv_phi * static_cast<double>(hi - lo)));
    const long d = lo + static_cast<long>(std::lround(inv_phi * static_cast<double>(hi - lo)));
    if (f(c) <= f(d))
      hi = d;
    else
      lo = c;
  }
  long best = lo;
  double best_value = f(lo);
  for (long k = lo + 1; k <= hi; ++k) {
    const double value = f(k);
    if (value < best_value) {
      best_value = value;
      best = k;
    }
  }
  return best;
}

/// Gauss-Hermite rule for the standard normal law: E f(Z) ~ sum w_i f(x_i).
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Golub-Welsch nodes from the probabilists' Hermite recurrence. Weights use
/// w_i = 1 / sum_k p_k(x_i)^2 over the orthonormal polynomials, so tail
/// weights keep full relative accuracy (eigenvector entries do not).
inline GaussHermiteRule make_gauss_hermite(int n) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi, Eigen::EigenvaluesOnly);
  GaussHermiteRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double x = solver.eigenvalues()(i);
    double prev = 0.0, cur = 1.0, sum = 1.0, log_scale = 0.0;
    for (int k = 1; k < n; ++k) {
      const double next = (x * cur - std::sqrt(static_cast<double>(k - 1)) * prev) / std::sqrt(static_cast<double>(k));
      prev = cur;
      cur = next;
      sum += cur * cur;
      if (std::abs(cur) > 1e100) {
        prev *= 1e-100;
        cur *= 1e-100;
        sum *= 1e-200;
        log_scale += 200.0 * std::log(10.0);
      }
    }
    rule.nodes[static_cast<std::size_t>(i)] = x;
    rule.weights[static_cast<std::size_t>(i)] = std::exp(-std::log(sum) - log_scale);
  }
  return rule;
}

inline constexpr std::array<int, 4> kHermiteLevels{64, 128, 256, 512};

/// Cached rules, one per entry of kHermiteLevels.
inline const GaussHermiteRule& gauss_hermite(std::size_t level) {
  static std::array<std::once_flag, kHermiteLevels.size()> flags;
  static std::array<GaussHermiteRule, kHermiteLevels.size()> rules;
  std::call_once(flags.at(level), [level] { rules[level] = make_gauss_hermite(kHermiteLevels[level]); });
  return rules[level];
}

/// E f(Y) for Y ~ N(mean, var) with a fixed rule level.
template <class Fn>
double normal_expectation(Fn&& f, double mean, double var, std::size_t level) {
  const auto& rule = gauss_hermite(level);
  const double sd = std::sqrt(var);
  double acc = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) acc += rule.weights[i] * f(mean + sd * rule.nodes[i]);
  return acc;
}

/// E f(Y) for Y ~ N(mean, var): 64 nodes, doubling until two successive
/// estimates agree to 1e-10 (relative to max(1, |estimate|)).
template <class Fn>
double adaptive_normal_expectation(Fn&& f, double mean, double var) {
  double previous = normal_expectation(f, mean, var, 0);
  for (std::size_t level = 1; level < kHermiteLevels.size(); ++level) {
    const double current = normal_expectation(f, mean, var, level);
    if (std::abs(current - previous) <= 1e-10 * std::max(1.0, std::abs(current))) return current;
    previous = current;
  }
  return previous;
}

}  // namespace qcdlab::numerics
