#pragma once

// Monte Carlo and exact estimators of MDD, MDE and J = MDD + kappa MDE, and
// threshold sweeps built on them.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "qcdlab/asymptotics.hpp"
#include "qcdlab/cusum.hpp"
#include "qcdlab/errors.hpp"
#include "qcdlab/model.hpp"

namespace qcdlab {

// ---------------------------------------------------------------------------
// Seeds and deterministic parallelism

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of replication `index` in the stream rooted at `base`.
inline std::uint64_t replication_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) + index);
}

inline unsigned resolve_workers(unsigned workers) {
  if (workers > 0) return workers;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// out[i] = fn(i, rng seeded for i); the result does not depend on `workers`.
template <class T, class Fn>
std::vector<T> replicate(long count, std::uint64_t base_seed, unsigned workers, Fn fn) {
  std::vector<T> out(static_cast<std::size_t>(count));
  const unsigned w = std::min<unsigned>(resolve_workers(workers), static_cast<unsigned>(std::max(1L, count)));
  const auto run = [&](unsigned lane) {
    for (long i = lane; i < count; i += w) {
      Rng rng(replication_seed(base_seed, static_cast<std::uint64_t>(i)));
      out[static_cast<std::size_t>(i)] = fn(i, rng);
    }
  };
  if (w == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned lane = 0; lane < w; ++lane) pool.emplace_back(run, lane);
    for (auto& t : pool) t.join();
  }
  return out;
}

/// Running mean and variance (Welford), folded in replication order.
struct MeanAccumulator {
  long n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double stderr_of_mean() const { return n > 0 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0; }
};

// ---------------------------------------------------------------------------
// Plain Monte Carlo of the Bayesian cost

struct McOptions {
  long replications = 10000;
  std::uint64_t seed = 1;
  double horizon_multiplier = 10.0;
  unsigned workers = 0;
};

struct RunOutcome {
  long stop_time = -1;
  long change_time = 0;
  bool censored = false;
};

struct CostEstimate {
  double threshold = 0.0;
  std::uint64_t seed = 0;
  long replications = 0;
  long censored = 0;
  double censored_fraction = 0.0;
  bool censoring_warning = false;  // more than 1% censored: MDD biased low
  double mdd = 0.0;
  double mdd_stderr = 0.0;
  double mde = 0.0;
  double mde_stderr = 0.0;
  std::vector<double> kappas;
  std::vector<double> j;
  std::vector<double> j_stderr;
};

/// One realisation: run the detector until it stops or the horizon
/// tau_a + ceil(multiplier H / m1) passes.
inline RunOutcome simulate_run(PathSampler& sampler, const Statistic& f, double threshold, long extra, Rng& rng) {
  sampler.reset(rng);
  DetectorState state(threshold);
  std::optional<long> deadline;
  RunOutcome out;
  for (;;) {
    if (state.push(f(sampler.next(rng)))) break;
    if (!deadline && sampler.change_time()) deadline = *sampler.change_time() + extra;
    if (deadline && state.n >= *deadline) {
      out.censored = true;
      break;
    }
  }
  out.stop_time = state.stopped ? state.stop_time : -1;
  out.change_time = sampler.resolve_change_time(rng);
  return out;
}

inline CostEstimate mc_estimate_cost(const ObservationModel& model, const Statistic& f, const ChangeTimeLaw* law,
                                     double threshold, const std::vector<double>& kappas, const McOptions& opts) {
  if (opts.replications < 1) throw DomainError("replication count must be at least 1");
  const double m1 = stationary_means_unchecked(model, f).m1;
  if (!(m1 > 0.0)) throw AssumptionViolation("A1", "post-change mean must be positive for the horizon policy");
  const long extra = static_cast<long>(std::ceil(opts.horizon_multiplier * threshold / m1));
  const auto outcomes = replicate<RunOutcome>(opts.replications, opts.seed, opts.workers, [&](long, Rng& rng) {
    PathSampler sampler(model, law);
    return simulate_run(sampler, f, threshold, extra, rng);
  });

  CostEstimate est;
  est.threshold = threshold;
  est.seed = opts.seed;
  est.replications = opts.replications;
  est.kappas = kappas;
  MeanAccumulator delay, eager;
  std::vector<MeanAccumulator> loss(kappas.size());
  for (const auto& o : outcomes) {
    if (o.censored) {
      ++est.censored;
      eager.add(0.0);
      continue;
    }
    const long gap = o.stop_time - o.change_time;
    const double d = gap > 0 ? static_cast<double>(gap) : 0.0;
    const double e = gap < 0 ? static_cast<double>(-gap) : 0.0;
    delay.add(d);
    eager.add(e);
    for (std::size_t k = 0; k < kappas.size(); ++k) loss[k].add(d + kappas[k] * e);
  }
  est.mdd = delay.mean;
  est.mdd_stderr = delay.stderr_of_mean();
  est.mde = eager.mean;
  est.mde_stderr = eager.stderr_of_mean();
  for (std::size_t k = 0; k < kappas.size(); ++k) {
    est.j.push_back(est.mdd + kappas[k] * est.mde);
    est.j_stderr.push_back(loss[k].stderr_of_mean());
  }
  est.censored_fraction = static_cast<double>(est.censored) / static_cast<double>(est.replications);
  est.censoring_warning = est.censored_fraction > 0.01;
  return est;
}

// ---------------------------------------------------------------------------
// Pre-change streams for the hitting-time representation of MDE

/// Increments F(Y_0), F(Y_1), ... of the pre-change process, optionally under
/// an exponentially tilted law. `log_weight` is log dP/dQ of the path so far.
/// Markov data use the stationary chain; a hidden chain uses its
/// quasi-stationary (survival-conditioned) dynamics.
class PreChangeStream {
 public:
  PreChangeStream(const ObservationModel& model, const Statistic& f, std::optional<double> tilt) : f_(f) {
    if (const auto* g = std::get_if<IidGaussian>(&model)) {
      kind_ = Kind::gaussian;
      mean_ = g->pre_mean;
      sd_ = std::sqrt(g->pre_var);
      if (tilt) {
        const Cgf cgf(model, f);
        const TwistedLaw law = cgf.twisted(*tilt);
        if (law.kind != TwistedLaw::Kind::gaussian)
          throw DomainError("tilted sampling of a Gaussian model needs a polynomial statistic of degree <= 2");
        theta_ = *tilt;
        cgf_value_ = cgf.value(*tilt);
        mean_ = law.mean;
        sd_ = std::sqrt(law.var);
        tilted_ = true;
      }
      return;
    }
    const auto values = f.cell_values(cell_count(model));
    if (const auto* d = std::get_if<IidDiscrete>(&model)) {
      kind_ = Kind::iid;
      std::vector<double> sampling = d->pmf0;
      if (tilt) sampling = Cgf(model, f).twisted(*tilt).weights;
      increments_ = values;
      log_ratio_.resize(values.size());
      for (std::size_t y = 0; y < values.size(); ++y)
        log_ratio_[y] = sampling[y] > 0.0 ? std::log(d->pmf0[y] / sampling[y]) : 0.0;
      symbols_ = std::discrete_distribution<int>(sampling.begin(), sampling.end());
      return;
    }
    kind_ = Kind::chain;
    Eigen::MatrixXd kernel;
    Eigen::VectorXd initial;
    if (const auto* m = std::get_if<FiniteMarkov>(&model)) {
      kernel = m->p0;
      initial = m->mu0;
      step_value_.resize(m->states(), m->states());
      for (int x = 0; x < m->states(); ++x)
        for (int z = 0; z < m->states(); ++z) step_value_(x, z) = values[static_cast<std::size_t>(m->cell(x, z))];
    } else {
      const auto& p = std::get<PomdpModel>(model);
      kernel = p.report.twisted_kernel;
      initial = p.report.twisted_invariant;
      const auto n0 = kernel.rows();
      step_value_.resize(n0, n0);
      for (Eigen::Index x = 0; x < n0; ++x)
        for (Eigen::Index z = 0; z < n0; ++z)
          step_value_(x, z) = values[static_cast<std::size_t>(
              p.chain().labels[static_cast<std::size_t>(p.chain().pre_states[static_cast<std::size_t>(z)])])];
    }
    Eigen::MatrixXd sampling = kernel;
    Eigen::VectorXd sampling_initial = initial;
    if (tilt) {
      const Eigen::Index n = kernel.rows();
      double shift = -numerics::kInf;
      for (Eigen::Index x = 0; x < n; ++x)
        for (Eigen::Index z = 0; z < n; ++z)
          if (kernel(x, z) > 0.0) shift = std::max(shift, *tilt * step_value_(x, z));
      Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index x = 0; x < n; ++x)
        for (Eigen::Index z = 0; z < n; ++z)
          if (kernel(x, z) > 0.0) t(x, z) = kernel(x, z) * std::exp(*tilt * step_value_(x, z) - shift);
      const auto pf = linalg::perron_frobenius(t);
      for (Eigen::Index x = 0; x < n; ++x)
        for (Eigen::Index z = 0; z < n; ++z) sampling(x, z) = t(x, z) * pf.right(z) / (pf.eigenvalue * pf.right(x));
      sampling_initial = pf.left.cwiseProduct(pf.right);
      sampling_initial /= sampling_initial.sum();
    }
    const Eigen::Index n = kernel.rows();
    log_step_.resize(n, n);
    for (Eigen::Index x = 0; x < n; ++x) {
      std::vector<double> w(static_cast<std::size_t>(n));
      for (Eigen::Index z = 0; z < n; ++z) {
        w[static_cast<std::size_t>(z)] = sampling(x, z);
        log_step_(x, z) = sampling(x, z) > 0.0 ? std::log(kernel(x, z) / sampling(x, z)) : 0.0;
      }
      rows_.emplace_back(w.begin(), w.end());
    }
    initial_ = initial;
    log_initial_.resize(n);
    for (Eigen::Index x = 0; x < n; ++x)
      log_initial_(x) = sampling_initial(x) > 0.0 ? std::log(initial(x) / sampling_initial(x)) : 0.0;
    start_ = std::discrete_distribution<int>(sampling_initial.data(), sampling_initial.data() + n);
  }

  void reset(Rng& rng) {
    log_weight_ = 0.0;
    if (kind_ == Kind::chain) {
      state_ = start_(rng);
      log_weight_ = log_initial_(state_);
    }
  }

  double next(Rng& rng) {
    switch (kind_) {
      case Kind::gaussian: {
        const double y = mean_ + sd_ * normal_(rng);
        const double inc = f_.at_value(y);
        if (tilted_) log_weight_ += cgf_value_ - theta_ * inc;
        return inc;
      }
      case Kind::iid: {
        const int y = symbols_(rng);
        log_weight_ += log_ratio_[static_cast<std::size_t>(y)];
        return increments_[static_cast<std::size_t>(y)];
      }
      case Kind::chain: {
        const int from = state_;
        state_ = rows_[static_cast<std::size_t>(from)](rng);
        log_weight_ += log_step_(from, state_);
        return step_value_(from, state_);
      }
    }
    return 0.0;
  }

  double log_weight() const { return log_weight_; }

  /// Hidden state count (1 for i.i.d. data) and the untilted initial law.
  int states() const { return kind_ == Kind::chain ? static_cast<int>(rows_.size()) : 1; }
  Eigen::VectorXd initial_law() const { return kind_ == Kind::chain ? initial_ : Eigen::VectorXd::Ones(1); }
  int state() const { return kind_ == Kind::chain ? state_ : 0; }

  /// Restarts from a given hidden state with unit weight.
  void reset_at(int state) {
    log_weight_ = 0.0;
    state_ = state;
  }

 private:
  enum class Kind { gaussian, iid, chain };
  Kind kind_ = Kind::iid;
  Statistic f_;
  double mean_ = 0.0, sd_ = 1.0, theta_ = 0.0, cgf_value_ = 0.0;
  bool tilted_ = false;
  std::normal_distribution<double> normal_;
  std::vector<double> increments_, log_ratio_;
  std::discrete_distribution<int> symbols_, start_;
  std::vector<std::discrete_distribution<int>> rows_;
  Eigen::MatrixXd step_value_, log_step_;
  Eigen::VectorXd initial_, log_initial_;
  int state_ = 0;
  double log_weight_ = 0.0;
};

struct HittingEstimate {
  double mde = 0.0;
  double std_error = 0.0;
  long replications = 0;
  long hits = 0;
  bool tilted = false;
  double tilt = 0.0;
  std::uint64_t seed = 0;
  std::string method;  // "path", "tilted_path" or "tilted_regenerative"
  std::string advisory;
};

namespace detail {

struct Excursion {
  long length = 0;
  bool success = false;
  int end_state = 0;
  double log_weight = 0.0;
};

// One CUSUM cycle from (0, start): runs until the partial sum reaches H or drops to 0.
inline Excursion run_excursion(PreChangeStream& stream, int start, double threshold, Rng& rng) {
  Excursion e;
  stream.reset_at(start);
  double sum = 0.0;
  while (e.length < 100000000L) {
    sum += stream.next(rng);
    ++e.length;
    if (sum >= threshold) {
      e.success = true;
      break;
    }
    if (sum <= 0.0) break;
  }
  e.end_state = stream.state();
  e.log_weight = stream.log_weight();
  return e;
}

}  // namespace detail

/// MDE = E g(sigma_H) with g(n) = sum_{m >= n} P{tau_a > m} and sigma_H the
/// crossing time of the pre-change CUSUM.
///
/// Plain sampling runs the pre-change CUSUM until it crosses. With tilting and
/// a geometric-mixture law, g(n) = sum_i K_i q_i^n and the CUSUM regenerates
/// whenever it returns to 0 (in hidden state x), so E_x q^sigma = h(x) with
/// h = (I - A)^{-1} B and
///   A(x, x') = E_x[q^T; cycle returns to 0 in state x']   (plain sampling),
///   B(x)     = E_x[q^T; cycle reaches H]                  (theta_0-tilted sampling),
/// where the tilted weight is bounded by e^{-theta_0 H} up to eigenvector
/// ratios. The standard error comes from the delta method. Other laws draw
/// the whole path under the theta_0 twist and reweight it.
inline HittingEstimate mde_hitting_estimator(const ObservationModel& model, const Statistic& f, double threshold,
                                             const ChangeTimeLaw& law, long replications, std::uint64_t seed,
                                             bool use_tilting, unsigned workers = 0) {
  if (replications < 1) throw DomainError("replication count must be at least 1");
  if (!(threshold > 0.0)) throw DomainError("threshold must be positive");
  HittingEstimate est;
  est.replications = replications;
  est.tilted = use_tilting;
  est.seed = seed;
  est.method = "path";
  std::optional<double> tilt;
  if (use_tilting) {
    tilt = solve_cgf_level(Cgf(model, f), 0.0, 1e-6, "A3");
    est.tilt = *tilt;
  }
  const double total = law.tail_sum(0);
  if (total == 0.0) return est;

  if (use_tilting && law.is_geometric_mixture()) {
    est.method = "tilted_regenerative";
    const auto& components = law.components();
    const std::size_t c = components.size();
    const PreChangeStream plain_proto(model, f, std::nullopt);
    const PreChangeStream tilted_proto(model, f, tilt);
    const int n = plain_proto.states();
    const auto nn = static_cast<Eigen::Index>(n);
    // Per replication and component: fail(x, x') and hit(x) from one plain and
    // one tilted cycle started in every hidden state x.
    struct Cycle {
      std::vector<Eigen::MatrixXd> fail;
      std::vector<Eigen::VectorXd> hit;
      long successes = 0;
    };
    const auto cycles = replicate<Cycle>(replications, seed, workers, [&](long, Rng& rng) {
      PreChangeStream plain = plain_proto;
      PreChangeStream tilted = tilted_proto;
      Cycle out{std::vector<Eigen::MatrixXd>(c, Eigen::MatrixXd::Zero(nn, nn)),
                std::vector<Eigen::VectorXd>(c, Eigen::VectorXd::Zero(nn)), 0};
      for (int x = 0; x < n; ++x) {
        const auto a = detail::run_excursion(plain, x, threshold, rng);
        const auto b = detail::run_excursion(tilted, x, threshold, rng);
        if (b.success) ++out.successes;
        for (std::size_t i = 0; i < c; ++i) {
          const double log_q = std::log1p(-components[i].rho);
          if (!a.success) out.fail[i](x, a.end_state) = std::exp(log_q * static_cast<double>(a.length));
          if (b.success) out.hit[i](x) = std::exp(log_q * static_cast<double>(b.length) + b.log_weight);
        }
      }
      return out;
    });
    const double count = static_cast<double>(replications);
    const Eigen::VectorXd start = plain_proto.initial_law();
    std::vector<Eigen::MatrixXd> fail_mean(c, Eigen::MatrixXd::Zero(nn, nn));
    std::vector<Eigen::VectorXd> hit_mean(c, Eigen::VectorXd::Zero(nn));
    for (const auto& cy : cycles) {
      for (std::size_t i = 0; i < c; ++i) {
        fail_mean[i] += cy.fail[i] / count;
        hit_mean[i] += cy.hit[i] / count;
      }
      est.hits += cy.successes;
    }
    // E_x q^sigma = h(x) with h = (I - A)^{-1} B.
    std::vector<Eigen::VectorXd> h(c);
    std::vector<Eigen::RowVectorXd> w(c);
    for (std::size_t i = 0; i < c; ++i) {
      const double k = components[i].weight * (1.0 - components[i].rho) / components[i].rho;
      const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(nn, nn) - fail_mean[i];
      h[i] = a.partialPivLu().solve(hit_mean[i]);
      w[i] = k * a.transpose().partialPivLu().solve(start).transpose();
      est.mde += k * start.dot(h[i]);
    }
    // Delta method: influence of each replication on the ratio estimate.
    MeanAccumulator influence;
    for (const auto& cy : cycles) {
      double r = 0.0;
      for (std::size_t i = 0; i < c; ++i)
        r += w[i] * ((cy.hit[i] - hit_mean[i]) + (cy.fail[i] - fail_mean[i]) * h[i]);
      influence.add(r);
    }
    est.std_error = influence.stderr_of_mean();
    return est;
  }

  if (use_tilting) est.method = "tilted_path";
  // Past `cutoff`, g is negligible (plain sampling stops there).
  long cutoff = 0;
  while (law.tail_sum(cutoff) > 1e-15 * std::max(1.0, total)) {
    cutoff = cutoff < 16 ? cutoff + 1 : cutoff * 2;
    if (cutoff > (1L << 40)) break;
  }
  struct Sample {
    double value = 0.0;
    bool hit = false;
  };
  const PreChangeStream prototype(model, f, tilt);
  const auto samples = replicate<Sample>(replications, seed, workers, [&](long, Rng& rng) {
    PreChangeStream stream = prototype;
    stream.reset(rng);
    DetectorState state(threshold);
    const long limit = use_tilting ? 100000000L : cutoff;
    while (state.n < limit)
      if (state.push(stream.next(rng))) break;
    if (!state.stopped) return Sample{};
    return Sample{law.tail_sum(state.stop_time) * std::exp(stream.log_weight()), true};
  });
  MeanAccumulator acc;
  for (const auto& s : samples) {
    acc.add(s.value);
    if (s.hit) ++est.hits;
  }
  est.mde = acc.mean;
  est.std_error = acc.stderr_of_mean();
  if (!use_tilting && est.hits == 0) est.advisory = "no threshold crossings observed; enable tilting";
  return est;
}

// ---------------------------------------------------------------------------
// Exact costs for lattice statistics on i.i.d. discrete data

/// Smallest q <= max_q with q F(y) integral on every cell where `mass` > 0.
inline long lattice_denominator(const std::vector<double>& values, const std::vector<double>& mass, long max_q = 1000) {
  for (long q = 1; q <= max_q; ++q) {
    bool ok = true;
    for (std::size_t y = 0; y < values.size() && ok; ++y) {
      if (mass[y] <= 0.0) continue;
      const double scaled = static_cast<double>(q) * values[y];
      ok = std::abs(scaled - std::round(scaled)) <= 1e-9 * std::max(1.0, std::abs(scaled));
    }
    if (ok) return q;
  }
  throw DomainError("statistic is not lattice-valued with denominator <= " + std::to_string(max_q));
}

struct ExactCost {
  double threshold = 0.0;
  long denominator = 1;
  long lattice_states = 0;
  double mdd = 0.0;
  double mde = 0.0;
  std::vector<double> kappas;
  std::vector<double> j;
};

/// Exact MDD and MDE via absorbing-chain solves on the lattice {0, 1/q, ...}.
///
/// With Q the transient transition matrix of the reflected walk below H and a
/// geometric phase q_i = 1 - rho_i:
///   MDE_i = q_i / rho_i - q_i e_0^T (I - q_i Q_0)^{-1} 1,
///   MDD_i = rho_i e_0^T (I - q_i Q_0)^{-1} k,  (I - Q_1) k = 1.
inline ExactCost exact_cost_dp(const ObservationModel& model, const Statistic& f, double threshold,
                               const ChangeTimeLaw& law, const std::vector<double>& kappas) {
  const auto* d = std::get_if<IidDiscrete>(&model);
  if (d == nullptr) throw DomainError("exact costs need an i.i.d. discrete model");
  if (!law.is_geometric_mixture()) throw DomainError("exact costs need a geometric (mixture) change-time law");
  if (!(threshold > 0.0)) throw DomainError("threshold must be positive");
  const auto values = f.cell_values(d->alphabet());
  std::vector<double> support(values.size());
  for (std::size_t y = 0; y < values.size(); ++y) support[y] = d->pmf0[y] + d->pmf1[y];
  ExactCost out;
  out.threshold = threshold;
  out.kappas = kappas;
  out.denominator = lattice_denominator(values, support);
  const double q = static_cast<double>(out.denominator);
  const double levels = std::ceil(threshold * q - 1e-9);
  if (levels + 1.0 > 1e6) throw ResourceError("lattice has more than 1e6 states");
  const auto k = static_cast<Eigen::Index>(levels);
  out.lattice_states = k;

  std::vector<long> steps(values.size());
  for (std::size_t y = 0; y < values.size(); ++y) steps[y] = std::lround(values[y] * q);
  const auto transient = [&](const std::vector<double>& pmf) {
    std::vector<Eigen::Triplet<double>> entries;
    for (Eigen::Index i = 0; i < k; ++i)
      for (std::size_t y = 0; y < pmf.size(); ++y) {
        if (pmf[y] <= 0.0) continue;
        const long j = std::max(0L, static_cast<long>(i) + steps[y]);
        if (j < k) entries.emplace_back(i, j, pmf[y]);
      }
    Eigen::SparseMatrix<double> m(k, k);
    m.setFromTriplets(entries.begin(), entries.end());
    return m;
  };
  Eigen::SparseMatrix<double> identity(k, k);
  identity.setIdentity();
  const auto solve = [&](const Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& rhs) {
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(a);
    if (lu.info() != Eigen::Success) throw DomainError("absorbing-chain system is singular");
    Eigen::VectorXd x = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !x.allFinite()) throw DomainError("absorbing-chain solve failed");
    return x;
  };
  const auto q0 = transient(d->pmf0);
  const auto q1 = transient(d->pmf1);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k);
  const Eigen::VectorXd post_time = solve(identity - q1, ones);
  for (const auto& c : law.components()) {
    const double stay = 1.0 - c.rho;
    const Eigen::SparseMatrix<double> a = identity - stay * q0;
    const Eigen::VectorXd survive = solve(a, ones);
    const Eigen::VectorXd delay = solve(a, post_time);
    out.mde += c.weight * (stay / c.rho - stay * survive(0));
    out.mdd += c.weight * c.rho * delay(0);
  }
  for (double kappa : kappas) out.j.push_back(out.mdd + kappa * out.mde);
  return out;
}

// ---------------------------------------------------------------------------
// Threshold sweeps

struct SweepRow {
  double kappa = 0.0;
  double threshold = 0.0;
  double j = 0.0;
  double j_stderr = 0.0;
  double mdd = 0.0;
  double mde = 0.0;
  long censored = 0;
};

struct SweepGap {
  double kappa = 0.0;
  double h_hat = 0.0;  // empirical or exact minimiser
  double j_hat = 0.0;
  std::vector<double> local_minimizers;
  double h_inf = std::numeric_limits<double>::quiet_NaN();
  double h_first = std::numeric_limits<double>::quiet_NaN();
  double j_inf = std::numeric_limits<double>::quiet_NaN();
  double gap_inf = std::numeric_limits<double>::quiet_NaN();
  double gap_first = std::numeric_limits<double>::quiet_NaN();
  double cost_ratio = 0.0;  // j_hat m1 / h_hat
};

struct SweepReport {
  std::string mode;  // "exact_dp" or "monte_carlo"
  double m1 = 0.0;
  std::vector<double> thresholds;
  std::vector<SweepRow> rows;
  std::vector<SweepGap> gaps;
  std::vector<std::uint64_t> seeds;
};

struct SweepOptions {
  bool exact = true;
  McOptions mc;
};

namespace detail {

inline std::vector<std::size_t> local_minima(const std::vector<double>& j) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const bool left = i == 0 || j[i] < j[i - 1];
    const bool right = i + 1 == j.size() || j[i] <= j[i + 1];
    if (left && right) out.push_back(i);
  }
  return out;
}

}  // namespace detail

/// Default grid: lattice points up to about 2 H-bar*_inf(max kappa) + 3 for
/// exact sweeps, otherwise 30 points spanning the approximate optima.
inline std::vector<double> default_threshold_grid(const ObservationModel& model, const Statistic& f, const CgfProfile& profile,
                                                  const std::vector<double>& kappas, bool exact) {
  const double kmax = *std::max_element(kappas.begin(), kappas.end());
  const double kmin = *std::min_element(kappas.begin(), kappas.end());
  const double top = 2.0 * std::log(std::max(kmax, 2.0)) / profile.theta_plus + 3.0;
  std::vector<double> grid;
  if (exact) {
    const auto& d = std::get<IidDiscrete>(model);
    std::vector<double> support(d.pmf0.size());
    for (std::size_t y = 0; y < support.size(); ++y) support[y] = d.pmf0[y] + d.pmf1[y];
    const long q = lattice_denominator(f.cell_values(d.alphabet()), support);
    for (long k = 1; static_cast<double>(k) <= top * static_cast<double>(q); ++k)
      grid.push_back(static_cast<double>(k) / static_cast<double>(q));
    return grid;
  }
  const double bottom = std::max(0.1, 0.25 * std::log(std::max(kmin, 2.0)) / profile.theta_plus);
  for (int i = 0; i < 30; ++i) grid.push_back(bottom + (top - bottom) * i / 29.0);
  return grid;
}

/// Minimises J(H, kappa) over a threshold grid for each kappa. Exact sweeps
/// refine between grid neighbours by integer golden-section search on the
/// lattice; Monte Carlo sweeps use common random numbers across thresholds.
inline SweepReport sweep_threshold(const ObservationModel& model, const Statistic& f, const ChangeTimeLaw& law,
                                   std::vector<double> kappas, std::vector<double> thresholds, const SweepOptions& opts) {
  if (kappas.empty()) throw DomainError("sweep needs at least one kappa");
  if (!std::is_sorted(kappas.begin(), kappas.end())) throw DomainError("kappa list must be ascending");
  SweepReport report;
  report.mode = opts.exact ? "exact_dp" : "monte_carlo";
  const double decay = law.decay_rate();
  const CgfProfile profile = solve_exponents(model, f, decay);
  const EagernessCurve curve = eagerness_curve(profile);
  report.m1 = profile.m1;
  if (thresholds.empty()) thresholds = default_threshold_grid(model, f, profile, kappas, opts.exact);
  if (!std::is_sorted(thresholds.begin(), thresholds.end()) || thresholds.front() <= 0.0)
    throw DomainError("threshold grid must be positive and ascending");
  report.thresholds = thresholds;

  // cost[h][k]
  std::vector<std::vector<double>> cost(thresholds.size());
  for (std::size_t h = 0; h < thresholds.size(); ++h) {
    if (opts.exact) {
      const auto ex = exact_cost_dp(model, f, thresholds[h], law, kappas);
      cost[h] = ex.j;
      for (std::size_t k = 0; k < kappas.size(); ++k)
        report.rows.push_back({kappas[k], thresholds[h], ex.j[k], 0.0, ex.mdd, ex.mde, 0});
    } else {
      const auto est = mc_estimate_cost(model, f, &law, thresholds[h], kappas, opts.mc);
      cost[h] = est.j;
      for (std::size_t k = 0; k < kappas.size(); ++k)
        report.rows.push_back({kappas[k], thresholds[h], est.j[k], est.j_stderr[k], est.mdd, est.mde, est.censored});
    }
  }
  if (!opts.exact) report.seeds.push_back(opts.mc.seed);
  // Rows grouped by kappa, then threshold.
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const SweepRow& a, const SweepRow& b) { return a.kappa < b.kappa; });

  long q = 1;
  if (opts.exact) {
    const auto& d = std::get<IidDiscrete>(model);
    std::vector<double> support(d.pmf0.size());
    for (std::size_t y = 0; y < support.size(); ++y) support[y] = d.pmf0[y] + d.pmf1[y];
    q = lattice_denominator(f.cell_values(d.alphabet()), support);
  }
  for (std::size_t k = 0; k < kappas.size(); ++k) {
    std::vector<double> column;
    for (const auto& c : cost) column.push_back(c[k]);
    SweepGap gap;
    gap.kappa = kappas[k];
    const auto minima = detail::local_minima(column);
    for (std::size_t i : minima) gap.local_minimizers.push_back(thresholds[i]);
    const std::size_t best =
        static_cast<std::size_t>(std::min_element(column.begin(), column.end()) - column.begin());
    gap.h_hat = thresholds[best];
    gap.j_hat = column[best];
    if (opts.exact) {
      const double qd = static_cast<double>(q);
      const long lo = static_cast<long>(std::ceil(thresholds[best == 0 ? 0 : best - 1] * qd - 1e-9));
      const long hi = static_cast<long>(std::ceil(thresholds[std::min(best + 1, thresholds.size() - 1)] * qd - 1e-9));
      const auto j_at = [&](long level) {
        return exact_cost_dp(model, f, static_cast<double>(std::max(level, 1L)) / qd, law, {kappas[k]}).j[0];
      };
      const long level = numerics::golden_section_minimize_int(j_at, std::max(lo, 1L), std::max(hi, 1L));
      const double j_level = j_at(level);
      if (j_level < gap.j_hat) {
        gap.h_hat = static_cast<double>(level) / qd;
        gap.j_hat = j_level;
      }
    }
    if (kappas[k] > 1.0) {
      const auto approx = approx_optimal_threshold(curve, kappas[k], profile.m1);
      gap.h_inf = approx.h_inf;
      gap.h_first = approx.h_first;
      gap.j_inf = approx.j_inf;
      gap.gap_inf = gap.h_hat - approx.h_inf;
      gap.gap_first = gap.h_hat - approx.h_first;
    }
    gap.cost_ratio = gap.j_hat * profile.m1 / gap.h_hat;
    report.gaps.push_back(gap);
  }
  return report;
}

}  // namespace qcdlab
