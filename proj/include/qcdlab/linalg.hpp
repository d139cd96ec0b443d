#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <string>

#include "qcdlab/errors.hpp"

namespace qcdlab::linalg {

/// Perron-Frobenius data of a nonnegative square matrix.
///
/// `left` is normalised to sum to one and `right` so that left . right = 1.
struct PerronTriple {
  double eigenvalue = 0.0;
  Eigen::VectorXd left;
  Eigen::VectorXd right;
  int iterations = 0;
  bool used_fallback = false;
};

namespace detail {

// Normalised power iteration; returns false if the eigenvalue has not settled.
inline bool power_iterate(const Eigen::MatrixXd& m, Eigen::VectorXd& vec, double& value, int& iterations,
                          double tol, int max_iter) {
  const auto n = m.rows();
  vec = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  value = 0.0;
  for (iterations = 1; iterations <= max_iter; ++iterations) {
    Eigen::VectorXd next = m * vec;
    const double next_value = next.sum();
    if (!(next_value > 0.0) || !std::isfinite(next_value)) return false;
    next /= next_value;
    const double drift = std::abs(next_value - value);
    const double move = (next - vec).lpNorm<Eigen::Infinity>();
    vec = std::move(next);
    value = next_value;
    if (drift <= tol * value && move <= 1e3 * tol) return true;
  }
  return false;
}

// Real eigenvector for the eigenvalue of largest real part, from a dense solve.
inline Eigen::VectorXd dominant_dense(const Eigen::MatrixXd& m, double& value) {
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) throw DomainError("dense eigen-solve failed");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < solver.eigenvalues().size(); ++i)
    if (solver.eigenvalues()(i).real() > solver.eigenvalues()(best).real()) best = i;
  value = solver.eigenvalues()(best).real();
  Eigen::VectorXd vec = solver.eigenvectors().col(best).real();
  if (vec.sum() < 0.0) vec = -vec;
  for (auto& x : vec)
    if (x < 0.0 && x > -1e-12) x = 0.0;
  return vec / vec.sum();
}

}  // namespace detail

/// Perron-Frobenius eigenvalue and eigenvectors of a nonnegative matrix.
///
/// Power iteration on M and M^T, normalised each step; stops once the
/// eigenvalue drift falls below `tol`. A dense eigen-solve takes over when
/// iteration stalls (periodicity, close second eigenvalue) or the residual
/// check fails.
inline PerronTriple perron_frobenius(const Eigen::MatrixXd& m, double tol = 1e-14, int max_iter = 100000) {
  if (m.rows() != m.cols() || m.rows() == 0) throw InvalidModel("Perron-Frobenius needs a nonempty square matrix");
  if ((m.array() < 0.0).any()) throw InvalidModel("Perron-Frobenius needs a nonnegative matrix");
  PerronTriple out;
  double right_value = 0.0;
  double left_value = 0.0;
  int right_iters = 0;
  int left_iters = 0;
  const Eigen::MatrixXd mt = m.transpose();
  const bool ok = detail::power_iterate(m, out.right, right_value, right_iters, tol, max_iter) &&
                  detail::power_iterate(mt, out.left, left_value, left_iters, tol, max_iter);
  out.iterations = right_iters + left_iters;
  out.eigenvalue = right_value;
  const auto residual = [&] {
    const double scale = std::max(out.eigenvalue, 1e-300);
    return std::max((m * out.right - out.eigenvalue * out.right).lpNorm<Eigen::Infinity>() /
                        (scale * out.right.lpNorm<Eigen::Infinity>()),
                    (mt * out.left - out.eigenvalue * out.left).lpNorm<Eigen::Infinity>() /
                        (scale * out.left.lpNorm<Eigen::Infinity>()));
  };
  if (!ok || residual() > 1e-12) {
    out.used_fallback = true;
    out.right = detail::dominant_dense(m, out.eigenvalue);
    out.left = detail::dominant_dense(mt, left_value);
  }
  out.left /= out.left.sum();
  const double overlap = out.left.dot(out.right);
  if (!(overlap > 0.0)) throw DomainError("Perron-Frobenius eigenvectors are orthogonal (reducible matrix?)");
  out.right /= overlap;
  return out;
}

/// Invariant pmf of a row-stochastic matrix (unique when the chain is uni-chain).
inline Eigen::VectorXd stationary_pmf(const Eigen::MatrixXd& p) {
  const auto n = p.rows();
  Eigen::MatrixXd a = p.transpose() - Eigen::MatrixXd::Identity(n, n);
  a.row(n - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b(n - 1) = 1.0;
  Eigen::VectorXd mu = a.completeOrthogonalDecomposition().solve(b);
  for (auto& x : mu)
    if (x < 0.0 && x > -1e-14) x = 0.0;
  return mu / mu.sum();
}

/// Checks rows are nonnegative and sum to one within `tol`.
inline void require_stochastic(const Eigen::MatrixXd& p, const std::string& name, double tol = 1e-12) {
  if (p.rows() != p.cols() || p.rows() == 0) throw InvalidModel(name + " must be a nonempty square matrix");
  if ((p.array() < 0.0).any()) throw InvalidModel(name + " has negative entries");
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    if (std::abs(p.row(i).sum() - 1.0) > tol)
      throw InvalidModel(name + " row " + std::to_string(i) + " does not sum to 1");
}

}  // namespace qcdlab::linalg
