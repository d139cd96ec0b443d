#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "qcdlab/errors.hpp"

namespace qcdlab {

/// Xi_{n+1} = max(0, Xi_n + f).
inline double cusum_update(double xi, double f) { return std::max(0.0, xi + f); }

struct CostSpec {
  double kappa = 1.0;

  explicit CostSpec(double k) : kappa(k) {
    if (!(kappa > 0.0)) throw DomainError("kappa must be positive");
  }
};

/// Running CUSUM statistic with threshold stopping. Xi_0 = 0, so a positive
/// threshold can only be crossed after the first increment.
struct DetectorState {
  double xi = 0.0;
  long n = 0;
  double threshold = 1.0;
  bool stopped = false;
  long stop_time = -1;

  explicit DetectorState(double h) : threshold(h) {
    if (!(h > 0.0)) throw DomainError("threshold must be positive");
  }

  /// Feeds F_{n+1}; returns true once stopped.
  bool push(double f) {
    if (stopped) return true;
    xi = cusum_update(xi, f);
    ++n;
    if (xi >= threshold) {
      stopped = true;
      stop_time = n;
    }
    return stopped;
  }
};

/// Runs the detector over increments F(Y_0), F(Y_1), ...; stops at the first
/// crossing or leaves the state un-stopped when the stream runs out.
template <class Range>
DetectorState run_increments(const Range& increments, double threshold) {
  DetectorState state(threshold);
  for (double f : increments)
    if (state.push(f)) break;
  return state;
}

/// Same, with the statistic applied to each observation.
template <class Observations, class Stat>
DetectorState run_detector(const Observations& observations, const Stat& f, double threshold) {
  DetectorState state(threshold);
  for (const auto& y : observations)
    if (state.push(f(y))) break;
  return state;
}

/// (tau_s - tau_a)_+ + kappa (tau_s - tau_a)_-.
inline double pathwise_loss(long stop_time, long change_time, double kappa) {
  const long gap = stop_time - change_time;
  return gap >= 0 ? static_cast<double>(gap) : kappa * static_cast<double>(-gap);
}

}  // namespace qcdlab
