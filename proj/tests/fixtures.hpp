#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "qcdlab/metastable.hpp"
#include "qcdlab/model.hpp"

namespace qcdlab::fixtures {

inline const double kDecay = -std::log(0.9);

// N(0,1) -> N(1,1), LLR y - 1/2.
inline ObservationModel gaussian() { return make_iid_gaussian(0.0, 1.0, 1.0, 1.0); }

inline ObservationModel two_symbol() { return make_iid_discrete({0.8, 0.2}, {0.3, 0.7}); }

// Lattice statistic on the two-symbol model.
inline Statistic plus_minus_one() { return Statistic::table({-1.0, 1.0}); }

inline ObservationModel two_state_markov() {
  Eigen::MatrixXd p0(2, 2), p1(2, 2);
  p0 << 0.9, 0.1, 0.2, 0.8;
  p1 << 0.3, 0.7, 0.4, 0.6;
  return make_finite_markov(p0, p1);
}

inline PomdpChain three_state_chain() {
  Eigen::MatrixXd p(3, 3);
  p << 0.5, 0.2, 0.3, 0.1, 0.4, 0.5, 0.0, 0.0, 1.0;
  return {p, {0, 1}, {0, 1, 2}};
}

// F(h(0)) = 1, F(h(1)) = -1 on X0; the absorbing label carries 0.
inline std::vector<double> three_state_f() { return {1.0, -1.0, 0.0}; }

inline ChangeTimeLaw geometric() { return ChangeTimeLaw::geometric(0.1); }

}  // namespace qcdlab::fixtures
