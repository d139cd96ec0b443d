#pragma once

// Observation models, change-time laws and detection statistics.
//
// Finite models label each observation by an integer cell: the symbol for
// i.i.d. discrete data, x * N + z for a Markov transition (x, z), and h(z)
// for a hidden chain. Gaussian observations carry a real value and no cell.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "qcdlab/errors.hpp"
#include "qcdlab/linalg.hpp"
#include "qcdlab/metastable.hpp"
#include "qcdlab/numerics.hpp"

namespace qcdlab {

using Rng = std::mt19937_64;

struct Observation {
  int cell = -1;
  double value = 0.0;

  static Observation of_cell(int c) { return {c, static_cast<double>(c)}; }
  static Observation of_value(double y) { return {-1, y}; }
};

// ---------------------------------------------------------------------------
// Statistics

/// A driving function F for the CUSUM recursion.
///
/// `table` indexes finite cells, `polynomial` is sum_k c_k y^k in the
/// observation value, `function` is an arbitrary callable.
class Statistic {
 public:
  enum class Kind { table, polynomial, function };
  using Callable = std::function<double(const Observation&)>;

  Statistic() : Statistic(polynomial({0.0})) {}

  static Statistic table(std::vector<double> values, std::string name = "table") {
    if (values.empty()) throw InvalidModel("table statistic needs at least one value");
    Statistic s(Kind::table, std::move(name));
    s.values_ = std::move(values);
    return s;
  }

  static Statistic polynomial(std::vector<double> coefficients, std::string name = "polynomial") {
    if (coefficients.empty()) coefficients.push_back(0.0);
    while (coefficients.size() > 1 && coefficients.back() == 0.0) coefficients.pop_back();
    Statistic s(Kind::polynomial, std::move(name));
    s.values_ = std::move(coefficients);
    return s;
  }

  static Statistic constant(double c) { return polynomial({c}, "constant"); }

  static Statistic function(Callable fn, std::string name = "function") {
    Statistic s(Kind::function, std::move(name));
    s.fn_ = std::make_shared<Callable>(std::move(fn));
    return s;
  }

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  Statistic& rename(std::string name) {
    name_ = std::move(name);
    return *this;
  }

  /// Table entries or polynomial coefficients (lowest degree first).
  const std::vector<double>& values() const { return values_; }
  int degree() const { return kind_ == Kind::polynomial ? static_cast<int>(values_.size()) - 1 : -1; }

  double operator()(const Observation& y) const {
    switch (kind_) {
      case Kind::table:
        if (y.cell < 0 || y.cell >= static_cast<int>(values_.size()))
          throw DomainError("cell " + std::to_string(y.cell) + " outside table of size " + std::to_string(values_.size()));
        return values_[static_cast<std::size_t>(y.cell)];
      case Kind::polynomial: {
        double acc = 0.0;
        for (auto it = values_.rbegin(); it != values_.rend(); ++it) acc = acc * y.value + *it;
        return acc;
      }
      case Kind::function:
        return (*fn_)(y);
    }
    return 0.0;
  }

  double at_cell(int c) const { return (*this)(Observation::of_cell(c)); }
  double at_value(double y) const { return (*this)(Observation::of_value(y)); }

  /// F evaluated on cells 0..n-1.
  std::vector<double> cell_values(int n) const {
    if (kind_ == Kind::table && static_cast<int>(values_.size()) < n)
      throw DomainError("table statistic has " + std::to_string(values_.size()) + " entries, model has " +
                        std::to_string(n) + " cells");
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) out[static_cast<std::size_t>(c)] = at_cell(c);
    return out;
  }

  Statistic scaled(double k) const {
    if (kind_ == Kind::function) {
      auto fn = fn_;
      return function([fn, k](const Observation& y) { return k * (*fn)(y); }, name_);
    }
    Statistic s = *this;
    for (auto& x : s.values_) x *= k;
    if (kind_ == Kind::polynomial) return polynomial(s.values_, name_);
    return s;
  }

  Statistic shifted(double c) const { return plus(constant(c)).rename(name_); }

  Statistic plus(const Statistic& other) const {
    if (kind_ == Kind::polynomial && other.kind_ == Kind::polynomial) {
      std::vector<double> sum(std::max(values_.size(), other.values_.size()), 0.0);
      for (std::size_t i = 0; i < values_.size(); ++i) sum[i] += values_[i];
      for (std::size_t i = 0; i < other.values_.size(); ++i) sum[i] += other.values_[i];
      return polynomial(std::move(sum), name_);
    }
    if (kind_ == Kind::table && other.kind_ == Kind::polynomial && other.degree() == 0) {
      Statistic s = *this;
      for (auto& x : s.values_) x += other.values_[0];
      return s;
    }
    if (kind_ == Kind::polynomial && degree() == 0 && other.kind_ == Kind::table) return other.plus(*this);
    if (kind_ == Kind::table && other.kind_ == Kind::table && values_.size() == other.values_.size()) {
      Statistic s = *this;
      for (std::size_t i = 0; i < values_.size(); ++i) s.values_[i] += other.values_[i];
      return s;
    }
    const Statistic a = *this;
    const Statistic b = other;
    return function([a, b](const Observation& y) { return a(y) + b(y); }, name_);
  }

  Statistic times(const Statistic& other) const {
    if (kind_ == Kind::polynomial && other.kind_ == Kind::polynomial) {
      std::vector<double> prod(values_.size() + other.values_.size() - 1, 0.0);
      for (std::size_t i = 0; i < values_.size(); ++i)
        for (std::size_t j = 0; j < other.values_.size(); ++j) prod[i + j] += values_[i] * other.values_[j];
      return polynomial(std::move(prod), name_ + "*" + other.name_);
    }
    if (kind_ == Kind::table && other.kind_ == Kind::table && values_.size() == other.values_.size()) {
      Statistic s = *this;
      for (std::size_t i = 0; i < values_.size(); ++i) s.values_[i] *= other.values_[i];
      return s.rename(name_ + "*" + other.name_);
    }
    if (kind_ == Kind::table && other.kind_ == Kind::polynomial && other.degree() == 0) return scaled(other.values_[0]);
    if (kind_ == Kind::polynomial && degree() == 0 && other.kind_ == Kind::table) return other.scaled(values_[0]);
    const Statistic a = *this;
    const Statistic b = other;
    return function([a, b](const Observation& y) { return a(y) * b(y); }, name_ + "*" + other.name_);
  }

 private:
  Statistic(Kind kind, std::string name) : kind_(kind), name_(std::move(name)) {}

  Kind kind_;
  std::string name_;
  std::vector<double> values_;
  std::shared_ptr<const Callable> fn_;
};

/// F_theta = sum_i theta_i psi_i.
inline Statistic linear_combination(const std::vector<Statistic>& basis, const Eigen::VectorXd& theta) {
  if (basis.empty() || static_cast<std::size_t>(theta.size()) != basis.size())
    throw DomainError("parameter dimension does not match the basis");
  Statistic out = basis[0].scaled(theta(0));
  for (std::size_t i = 1; i < basis.size(); ++i) out = out.plus(basis[i].scaled(theta(static_cast<Eigen::Index>(i))));
  return out.rename("affine");
}

// ---------------------------------------------------------------------------
// Observation models

struct IidGaussian {
  double pre_mean = 0.0;
  double pre_var = 1.0;
  double post_mean = 1.0;
  double post_var = 1.0;
};

struct IidDiscrete {
  std::vector<double> pmf0;
  std::vector<double> pmf1;

  int alphabet() const { return static_cast<int>(pmf0.size()); }
};

struct FiniteMarkov {
  Eigen::MatrixXd p0;
  Eigen::MatrixXd p1;
  Eigen::VectorXd mu0;
  Eigen::VectorXd mu1;

  int states() const { return static_cast<int>(p0.rows()); }
  int cell(int x, int z) const { return x * states() + z; }
};

/// Hidden chain with its metastability analysis. `initial` is the law of
/// Phi_0 over X0 (ordered as chain.pre_states).
struct PomdpModel {
  MetastableReport report;
  InducedMarginals marginals;
  Eigen::VectorXd initial;

  const PomdpChain& chain() const { return report.chain; }
};

using ObservationModel = std::variant<IidGaussian, IidDiscrete, FiniteMarkov, PomdpModel>;

namespace detail {

inline void require_pmf(const std::vector<double>& pmf, const std::string& name) {
  if (pmf.empty()) throw InvalidModel(name + " is empty");
  double total = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidModel(name + " has a negative or non-finite entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw InvalidModel(name + " does not sum to 1");
}

}  // namespace detail

inline ObservationModel make_iid_gaussian(double pre_mean, double pre_var, double post_mean, double post_var) {
  if (!(pre_var > 0.0) || !(post_var > 0.0)) throw InvalidModel("Gaussian variances must be positive");
  if (!std::isfinite(pre_mean) || !std::isfinite(post_mean)) throw InvalidModel("Gaussian means must be finite");
  return IidGaussian{pre_mean, pre_var, post_mean, post_var};
}

inline ObservationModel make_iid_discrete(std::vector<double> pmf0, std::vector<double> pmf1) {
  detail::require_pmf(pmf0, "pmf0");
  detail::require_pmf(pmf1, "pmf1");
  if (pmf0.size() != pmf1.size()) throw InvalidModel("pmf0 and pmf1 must have the same alphabet");
  return IidDiscrete{std::move(pmf0), std::move(pmf1)};
}

inline ObservationModel make_finite_markov(Eigen::MatrixXd p0, Eigen::MatrixXd p1) {
  linalg::require_stochastic(p0, "P0");
  linalg::require_stochastic(p1, "P1");
  if (p0.rows() != p1.rows()) throw InvalidModel("P0 and P1 must have the same state count");
  FiniteMarkov m{std::move(p0), std::move(p1), {}, {}};
  m.mu0 = linalg::stationary_pmf(m.p0);
  m.mu1 = linalg::stationary_pmf(m.p1);
  for (const auto& [mu, p, name] : {std::tuple{&m.mu0, &m.p0, "mu0"}, std::tuple{&m.mu1, &m.p1, "mu1"}}) {
    const double residual = (mu->transpose() * *p - mu->transpose()).lpNorm<Eigen::Infinity>();
    if (residual > 1e-10) throw InvalidModel(std::string(name) + " is not invariant (chain not uni-chain?)");
  }
  return m;
}

/// `initial_state` selects a deterministic start in X0; otherwise Phi_0 is
/// drawn from the quasi-stationary law.
inline ObservationModel make_pomdp(PomdpChain chain, std::optional<int> initial_state = std::nullopt) {
  PomdpModel m;
  m.report = survival_factorization(chain);
  m.marginals = induced_marginals(m.report);
  if (initial_state) {
    m.initial = Eigen::VectorXd::Zero(m.report.restricted.rows());
    m.initial(m.report.pre_index(*initial_state)) = 1.0;
  } else {
    m.initial = m.report.quasi_stationary;
  }
  return m;
}

/// Number of observation cells of a finite model; 0 for Gaussian data.
inline int cell_count(const ObservationModel& model) {
  return std::visit(
      [](const auto& m) -> int {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, IidGaussian>) return 0;
        else if constexpr (std::is_same_v<T, IidDiscrete>) return m.alphabet();
        else if constexpr (std::is_same_v<T, FiniteMarkov>) return m.states() * m.states();
        else return m.chain().label_count();
      },
      model);
}

inline bool is_finite_model(const ObservationModel& model) { return !std::holds_alternative<IidGaussian>(model); }

/// Stationary pre- and post-change laws over cells (finite models only).
inline std::pair<std::vector<double>, std::vector<double>> cell_laws(const ObservationModel& model) {
  return std::visit(
      [](const auto& m) -> std::pair<std::vector<double>, std::vector<double>> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, IidGaussian>) {
          throw DomainError("Gaussian model has no finite cell law");
        } else if constexpr (std::is_same_v<T, IidDiscrete>) {
          return {m.pmf0, m.pmf1};
        } else if constexpr (std::is_same_v<T, FiniteMarkov>) {
          const int n = m.states();
          std::vector<double> a(static_cast<std::size_t>(n * n));
          std::vector<double> b(static_cast<std::size_t>(n * n));
          for (int x = 0; x < n; ++x)
            for (int z = 0; z < n; ++z) {
              a[static_cast<std::size_t>(m.cell(x, z))] = m.mu0(x) * m.p0(x, z);
              b[static_cast<std::size_t>(m.cell(x, z))] = m.mu1(x) * m.p1(x, z);
            }
          return {a, b};
        } else {
          return {m.marginals.pre, m.marginals.post};
        }
      },
      model);
}

// ---------------------------------------------------------------------------
// Change-time laws

/// Law of tau_a on {0, 1, 2, ...}; survival(n) = P{tau_a >= n}.
class ChangeTimeLaw {
 public:
  enum class Kind { geometric, mixture, point_mass, tabulated };
  struct Component {
    double weight;
    double rho;
  };

  static ChangeTimeLaw geometric(double rho) {
    ChangeTimeLaw law(Kind::geometric);
    law.components_ = {{1.0, rho}};
    law.validate_components();
    return law;
  }

  static ChangeTimeLaw mixture(std::vector<Component> components) {
    ChangeTimeLaw law(Kind::mixture);
    law.components_ = std::move(components);
    law.validate_components();
    return law;
  }

  static ChangeTimeLaw point_mass(long time) {
    if (time < 0) throw InvalidModel("change time must be nonnegative");
    ChangeTimeLaw law(Kind::point_mass);
    law.point_ = time;
    return law;
  }

  /// survival[n] = P{tau_a >= n} for n <= K; beyond K the tail decays by `ratio` per step.
  static ChangeTimeLaw tabulated(std::vector<double> survival, double ratio) {
    if (survival.empty() || std::abs(survival[0] - 1.0) > 1e-12) throw InvalidModel("survival table must start at 1");
    for (std::size_t n = 1; n < survival.size(); ++n)
      if (!(survival[n] >= 0.0) || survival[n] > survival[n - 1] + 1e-15)
        throw InvalidModel("survival table must be nonincreasing and nonnegative");
    if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidModel("tail ratio must lie in (0,1)");
    ChangeTimeLaw law(Kind::tabulated);
    law.table_ = std::move(survival);
    law.ratio_ = ratio;
    return law;
  }

  Kind kind() const { return kind_; }
  const std::vector<Component>& components() const { return components_; }
  bool is_geometric_mixture() const { return kind_ == Kind::geometric || kind_ == Kind::mixture; }
  long point() const { return point_; }

  /// P{tau_a >= n}.
  double survival(long n) const {
    if (n <= 0) return 1.0;
    switch (kind_) {
      case Kind::geometric:
      case Kind::mixture: {
        double s = 0.0;
        for (const auto& c : components_) s += c.weight * std::pow(1.0 - c.rho, static_cast<double>(n));
        return s;
      }
      case Kind::point_mass:
        return n <= point_ ? 1.0 : 0.0;
      case Kind::tabulated: {
        const long k = static_cast<long>(table_.size()) - 1;
        if (n <= k) return table_[static_cast<std::size_t>(n)];
        return table_.back() * std::pow(ratio_, static_cast<double>(n - k));
      }
    }
    return 0.0;
  }

  /// P{tau_a > n}.
  double survival_after(long n) const { return survival(n + 1); }

  /// Exponential decay rate of the tail; +inf for bounded support.
  double decay_rate() const {
    switch (kind_) {
      case Kind::geometric:
      case Kind::mixture: {
        double rate = numerics::kInf;
        for (const auto& c : components_) rate = std::min(rate, -std::log1p(-c.rho));
        return rate;
      }
      case Kind::point_mass:
        return numerics::kInf;
      case Kind::tabulated:
        return -std::log(ratio_);
    }
    return numerics::kInf;
  }

  /// sum_{n >= from} P{tau_a > n}.
  double tail_sum(long from) const {
    from = std::max(from, 0L);
    switch (kind_) {
      case Kind::geometric:
      case Kind::mixture: {
        double s = 0.0;
        for (const auto& c : components_) {
          const double q = 1.0 - c.rho;
          s += c.weight * std::pow(q, static_cast<double>(from + 1)) / c.rho;
        }
        return s;
      }
      case Kind::point_mass:
        return static_cast<double>(std::max(0L, point_ - from));
      case Kind::tabulated: {
        const long k = static_cast<long>(table_.size()) - 1;
        double s = 0.0;
        long j = from + 1;
        for (; j <= k; ++j) s += table_[static_cast<std::size_t>(j)];
        return s + table_.back() * std::pow(ratio_, static_cast<double>(j - k)) / (1.0 - ratio_);
      }
    }
    return 0.0;
  }

  double mean() const { return tail_sum(0); }

  long sample(Rng& rng) const {
    switch (kind_) {
      case Kind::geometric:
      case Kind::mixture: {
        std::size_t pick = 0;
        if (components_.size() > 1) {
          std::vector<double> w;
          for (const auto& c : components_) w.push_back(c.weight);
          pick = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
        }
        return std::geometric_distribution<long>(components_[pick].rho)(rng);
      }
      case Kind::point_mass:
        return point_;
      case Kind::tabulated: {
        const double u = 1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const long k = static_cast<long>(table_.size()) - 1;
        long n = 0;
        while (n < k && table_[static_cast<std::size_t>(n + 1)] >= u) ++n;
        if (n < k || table_.back() < u) return n;
        return k + static_cast<long>(std::floor(std::log(u / table_.back()) / std::log(ratio_)));
      }
    }
    return 0;
  }

 private:
  explicit ChangeTimeLaw(Kind kind) : kind_(kind) {}

  void validate_components() const {
    if (components_.empty()) throw InvalidModel("mixture needs at least one component");
    double total = 0.0;
    for (const auto& c : components_) {
      if (!(c.rho > 0.0 && c.rho < 1.0)) throw InvalidModel("rho must lie in (0,1)");
      if (!(c.weight > 0.0)) throw InvalidModel("mixture weights must be positive");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw InvalidModel("mixture weights must sum to 1");
  }

  Kind kind_;
  std::vector<Component> components_;
  long point_ = 0;
  std::vector<double> table_;
  double ratio_ = 0.5;
};

/// Exact law of tau_a for a hidden chain started from `model.initial`.
/// Tabulated through n_max, then extended with the Perron-Frobenius ratio.
inline ChangeTimeLaw pomdp_change_law(const PomdpModel& model, int n_max = 400) {
  std::vector<double> survival{1.0};
  Eigen::RowVectorXd row = model.initial.transpose();
  for (int n = 1; n <= n_max; ++n) {
    survival.push_back(std::min(survival.back(), row.sum()));
    row = row * model.report.restricted;
  }
  return ChangeTimeLaw::tabulated(std::move(survival), model.report.eigenvalue);
}

// ---------------------------------------------------------------------------
// Likelihood ratios and means

namespace detail {

inline double log_ratio(double p1, double p0, const std::string& where) {
  if (p0 == 0.0 && p1 == 0.0) return 0.0;
  if (p0 == 0.0 || p1 == 0.0) throw UnboundedLlr("log-likelihood ratio is unbounded at " + where);
  return std::log(p1 / p0);
}

}  // namespace detail

/// Exact log-likelihood-ratio statistic of a model.
inline Statistic llr(const ObservationModel& model) {
  return std::visit(
      [](const auto& m) -> Statistic {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, IidGaussian>) {
          const double c2 = 0.5 / m.pre_var - 0.5 / m.post_var;
          const double c1 = m.post_mean / m.post_var - m.pre_mean / m.pre_var;
          const double c0 = 0.5 * std::log(m.pre_var / m.post_var) - 0.5 * m.post_mean * m.post_mean / m.post_var +
                            0.5 * m.pre_mean * m.pre_mean / m.pre_var;
          return Statistic::polynomial({c0, c1, c2}, "llr");
        } else if constexpr (std::is_same_v<T, IidDiscrete>) {
          std::vector<double> values;
          for (int y = 0; y < m.alphabet(); ++y)
            values.push_back(detail::log_ratio(m.pmf1[static_cast<std::size_t>(y)], m.pmf0[static_cast<std::size_t>(y)],
                                               "symbol " + std::to_string(y)));
          return Statistic::table(std::move(values), "llr");
        } else if constexpr (std::is_same_v<T, FiniteMarkov>) {
          const int n = m.states();
          std::vector<double> values(static_cast<std::size_t>(n * n));
          for (int x = 0; x < n; ++x)
            for (int z = 0; z < n; ++z)
              values[static_cast<std::size_t>(m.cell(x, z))] = detail::log_ratio(
                  m.p1(x, z), m.p0(x, z), "transition (" + std::to_string(x) + "," + std::to_string(z) + ")");
          return Statistic::table(std::move(values), "llr");
        } else {
          std::vector<double> values;
          for (std::size_t y = 0; y < m.marginals.pre.size(); ++y)
            values.push_back(detail::log_ratio(m.marginals.post[y], m.marginals.pre[y], "label " + std::to_string(y)));
          return Statistic::table(std::move(values), "llr");
        }
      },
      model);
}

/// E F(Y) for Y ~ N(mean, var): moments for polynomials, quadrature otherwise.
inline double gaussian_expectation(const Statistic& f, double mean, double var) {
  if (f.kind() == Statistic::Kind::table) throw DomainError("table statistic on a Gaussian model");
  if (f.kind() == Statistic::Kind::polynomial) {
    // E Y^k by m_k = mean m_{k-1} + (k-1) var m_{k-2}.
    double prev = 1.0;
    double cur = mean;
    double acc = f.values()[0];
    for (std::size_t k = 1; k < f.values().size(); ++k) {
      acc += f.values()[k] * cur;
      const double next = mean * cur + static_cast<double>(k) * var * prev;
      prev = cur;
      cur = next;
    }
    return acc;
  }
  return numerics::adaptive_normal_expectation([&f](double y) { return f.at_value(y); }, mean, var);
}

/// Expectation of F over a law on cells.
inline double cell_expectation(const Statistic& f, const std::vector<double>& law) {
  const auto values = f.cell_values(static_cast<int>(law.size()));
  double acc = 0.0;
  for (std::size_t c = 0; c < law.size(); ++c)
    if (law[c] > 0.0) acc += law[c] * values[c];
  return acc;
}

struct Means {
  double m0 = 0.0;
  double m1 = 0.0;
};

/// Stationary pre- and post-change means without the sign check.
inline Means stationary_means_unchecked(const ObservationModel& model, const Statistic& f) {
  if (const auto* g = std::get_if<IidGaussian>(&model))
    return {gaussian_expectation(f, g->pre_mean, g->pre_var), gaussian_expectation(f, g->post_mean, g->post_var)};
  const auto [pre, post] = cell_laws(model);
  return {cell_expectation(f, pre), cell_expectation(f, post)};
}

/// Stationary means, enforcing m0 < 0 < m1.
inline Means stationary_means(const ObservationModel& model, const Statistic& f) {
  const Means m = stationary_means_unchecked(model, f);
  if (!(m.m0 < 0.0) || !(m.m1 > 0.0))
    throw AssumptionViolation("A1", "drift signs violated: m0 = " + std::to_string(m.m0) +
                                        ", m1 = " + std::to_string(m.m1));
  return m;
}

// ---------------------------------------------------------------------------
// Sampling

/// Streams Y_0, Y_1, ... of one realisation: pre-change for k < tau_a and
/// post-change afterwards. Markov data are pairs of a stationary chain; the
/// post-change chain is an independent stationary copy. For a hidden chain
/// tau_a is the absorption time and is known once reached.
class PathSampler {
 public:
  PathSampler(const ObservationModel& model, const ChangeTimeLaw* law) : model_(&model), law_(law) {
    std::visit([this](const auto& m) { prepare(m); }, model);
    if (!std::holds_alternative<PomdpModel>(model) && law_ == nullptr)
      throw DomainError("a change-time law is required for this model");
  }

  /// Starts a fresh realisation.
  void reset(Rng& rng) {
    step_ = 0;
    if (const auto* p = std::get_if<PomdpModel>(model_)) {
      state_ = p->chain().pre_states[initial_(rng)];
      change_.reset();
    } else {
      change_ = law_->sample(rng);
      state_ = -1;
    }
  }

  /// Known change time, if already determined.
  std::optional<long> change_time() const { return change_; }
  long step() const { return step_; }

  Observation next(Rng& rng) {
    const long k = step_++;
    if (const auto* p = std::get_if<PomdpModel>(model_)) {
      if (k > 0) state_ = static_cast<int>(rows_[static_cast<std::size_t>(state_)](rng));
      if (!change_ && !p->chain().is_pre_change(state_)) change_ = k;
      return Observation::of_cell(p->chain().labels[static_cast<std::size_t>(state_)]);
    }
    const bool post = k >= *change_;
    if (const auto* g = std::get_if<IidGaussian>(model_)) {
      const double mean = post ? g->post_mean : g->pre_mean;
      const double sd = std::sqrt(post ? g->post_var : g->pre_var);
      return Observation::of_value(mean + sd * normal_(rng));
    }
    if (std::holds_alternative<IidDiscrete>(*model_))
      return Observation::of_cell(static_cast<int>(post ? symbols1_(rng) : symbols0_(rng)));
    const auto& m = std::get<FiniteMarkov>(*model_);
    if (k == 0 || (post && k == *change_)) state_ = static_cast<int>(post ? start1_(rng) : start0_(rng));
    const int from = state_;
    state_ = static_cast<int>(post ? rows1_[static_cast<std::size_t>(from)](rng) : rows_[static_cast<std::size_t>(from)](rng));
    return Observation::of_cell(m.cell(from, state_));
  }

  /// Hidden chain: keeps stepping until absorption to learn tau_a.
  long resolve_change_time(Rng& rng) {
    while (!change_) next(rng);
    return *change_;
  }

 private:
  using Picker = std::discrete_distribution<int>;

  static std::vector<Picker> row_pickers(const Eigen::MatrixXd& p) {
    std::vector<Picker> out;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      std::vector<double> w(static_cast<std::size_t>(p.cols()));
      for (Eigen::Index j = 0; j < p.cols(); ++j) w[static_cast<std::size_t>(j)] = p(i, j);
      out.emplace_back(w.begin(), w.end());
    }
    return out;
  }

  static Picker picker(const Eigen::VectorXd& w) { return Picker(w.data(), w.data() + w.size()); }

  void prepare(const IidGaussian&) {}
  void prepare(const IidDiscrete& m) {
    symbols0_ = Picker(m.pmf0.begin(), m.pmf0.end());
    symbols1_ = Picker(m.pmf1.begin(), m.pmf1.end());
  }
  void prepare(const FiniteMarkov& m) {
    rows_ = row_pickers(m.p0);
    rows1_ = row_pickers(m.p1);
    start0_ = picker(m.mu0);
    start1_ = picker(m.mu1);
  }
  void prepare(const PomdpModel& m) {
    rows_ = row_pickers(m.chain().kernel);
    initial_ = picker(m.initial);
  }

  const ObservationModel* model_;
  const ChangeTimeLaw* law_;
  long step_ = 0;
  int state_ = -1;
  std::optional<long> change_;
  std::normal_distribution<double> normal_;
  Picker symbols0_, symbols1_, start0_, start1_, initial_;
  std::vector<Picker> rows_, rows1_;
};

struct SampledPath {
  long change_time = 0;
  std::vector<Observation> observations;
};

/// Observations Y_0..Y_horizon of one realisation, deterministic in `seed`.
inline SampledPath sample_path(const ObservationModel& model, const ChangeTimeLaw* law, std::uint64_t seed,
                               long horizon) {
  if (horizon < 1) throw DomainError("horizon must be at least 1");
  Rng rng(seed);
  PathSampler sampler(model, law);
  sampler.reset(rng);
  SampledPath out;
  out.observations.reserve(static_cast<std::size_t>(horizon + 1));
  for (long k = 0; k <= horizon; ++k) out.observations.push_back(sampler.next(rng));
  out.change_time = sampler.resolve_change_time(rng);
  return out;
}

}  // namespace qcdlab
