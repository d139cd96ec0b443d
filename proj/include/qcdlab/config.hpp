#pragma once

// JSON experiment configs. Every schema error names the offending field as
// a JSON pointer, e.g. "/model/pmf0/1".

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qcdlab/errors.hpp"
#include "qcdlab/metastable.hpp"
#include "qcdlab/model.hpp"
#include "qcdlab/optimizer.hpp"

namespace qcdlab {

using Json = nlohmann::json;

/// Read-only cursor into a JSON document that remembers its pointer path.
class Field {
 public:
  Field(const Json& node, std::string path) : node_(&node), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  const Json& raw() const { return *node_; }

  bool has(const std::string& key) const { return node_->is_object() && node_->contains(key); }

  Field at(const std::string& key) const {
    if (!node_->is_object()) fail("expected an object");
    if (!node_->contains(key)) throw SchemaError(path_ + "/" + key, "missing required field");
    return Field((*node_)[key], path_ + "/" + key);
  }

  std::optional<Field> maybe(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return at(key);
  }

  Field at(std::size_t index) const {
    if (!node_->is_array()) fail("expected an array");
    if (index >= node_->size()) throw SchemaError(path_ + "/" + std::to_string(index), "index out of range");
    return Field((*node_)[index], path_ + "/" + std::to_string(index));
  }

  std::size_t size() const {
    if (!node_->is_array()) fail("expected an array");
    return node_->size();
  }

  double number() const {
    if (!node_->is_number()) fail("expected a number");
    return node_->get<double>();
  }

  double positive() const {
    const double x = number();
    if (!(x > 0.0)) fail("expected a positive number");
    return x;
  }

  long integer() const {
    if (!node_->is_number_integer()) fail("expected an integer");
    return node_->get<long>();
  }

  std::string string() const {
    if (!node_->is_string()) fail("expected a string");
    return node_->get<std::string>();
  }

  bool boolean() const {
    if (!node_->is_boolean()) fail("expected true or false");
    return node_->get<bool>();
  }

  std::vector<double> numbers() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).number());
    return out;
  }

  std::vector<int> integers() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(static_cast<int>(at(i).integer()));
    return out;
  }

  /// Nested rows, or a flat row-major array of n * n entries.
  Eigen::MatrixXd matrix() const {
    const std::size_t rows = size();
    if (rows == 0) fail("expected a nonempty matrix");
    if (node_->at(0).is_number()) {
      const auto flat = numbers();
      const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(flat.size()))));
      if (n * n != flat.size()) fail("flat matrix must have a square number of entries");
      Eigen::MatrixXd m(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = flat[i * n + j];
      return m;
    }
    const std::size_t cols = at(0).size();
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
      const auto row = at(i).numbers();
      if (row.size() != cols) at(i).fail("row length differs from the first row");
      for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
    return m;
  }

  [[noreturn]] void fail(const std::string& what) const { throw SchemaError(path_.empty() ? "/" : path_, what); }

 private:
  const Json* node_;
  std::string path_;
};

/// Wraps model-level validation failures with the field path that produced them.
template <class Fn>
auto with_path(const Field& field, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& e) {
    field.fail(e.what());
  }
}

inline ObservationModel parse_model(const Field& node) {
  const std::string type = node.at("type").string();
  return with_path(node, [&]() -> ObservationModel {
    if (type == "iid_gaussian")
      return make_iid_gaussian(node.at("pre_mean").number(), node.at("pre_var").number(), node.at("post_mean").number(),
                               node.at("post_var").number());
    if (type == "iid_discrete") return make_iid_discrete(node.at("pmf0").numbers(), node.at("pmf1").numbers());
    if (type == "finite_markov") return make_finite_markov(node.at("p0").matrix(), node.at("p1").matrix());
    if (type == "pomdp") {
      PomdpChain chain{node.at("kernel").matrix(), node.at("pre_states").integers(), node.at("labels").integers()};
      std::optional<int> initial;
      if (auto f = node.maybe("initial_state")) initial = static_cast<int>(f->integer());
      return make_pomdp(std::move(chain), initial);
    }
    node.at("type").fail("unknown model type '" + type + "'");
  });
}

inline ChangeTimeLaw parse_change_time(const Field& node) {
  const std::string type = node.at("type").string();
  return with_path(node, [&]() -> ChangeTimeLaw {
    if (type == "geometric") return ChangeTimeLaw::geometric(node.at("rho").number());
    if (type == "geometric_mixture") {
      const Field comps = node.at("components");
      std::vector<ChangeTimeLaw::Component> out;
      for (std::size_t i = 0; i < comps.size(); ++i)
        out.push_back({comps.at(i).at("weight").number(), comps.at(i).at("rho").number()});
      return ChangeTimeLaw::mixture(std::move(out));
    }
    if (type == "point_mass") return ChangeTimeLaw::point_mass(node.at("time").integer());
    node.at("type").fail("unknown change-time type '" + type + "'");
  });
}

inline Statistic parse_statistic(const Field& node, const ObservationModel& model);

inline LinearClassSpec parse_class(const Field& node, const ObservationModel& model) {
  LinearClassSpec spec;
  const Field basis = node.at("basis");
  for (std::size_t i = 0; i < basis.size(); ++i) spec.basis.push_back(parse_statistic(basis.at(i), model));
  const auto v = node.at("normalization").numbers();
  if (v.size() != spec.basis.size()) node.at("normalization").fail("length must match the basis");
  spec.normalization = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  if (auto lo = node.maybe("lower")) {
    const auto x = lo->numbers();
    spec.lower = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  }
  if (auto hi = node.maybe("upper")) {
    const auto x = hi->numbers();
    spec.upper = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  }
  return with_path(node, [&] { return validate_class(model, spec); });
}

/// Statistic kinds: llr, table, polynomial, affine (basis + theta), with an
/// optional "scale" and "shift" applied last.
inline Statistic parse_statistic(const Field& node, const ObservationModel& model) {
  const std::string type = node.at("type").string();
  Statistic f = with_path(node, [&]() -> Statistic {
    if (type == "llr") return llr(model);
    if (type == "table") return Statistic::table(node.at("values").numbers());
    if (type == "polynomial") return Statistic::polynomial(node.at("coefficients").numbers());
    if (type == "affine") {
      const LinearClassSpec spec = parse_class(node, model);
      const auto theta = node.at("theta").numbers();
      if (theta.size() != spec.basis.size()) node.at("theta").fail("length must match the basis");
      return spec.combine(Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size())));
    }
    node.at("type").fail("unknown statistic type '" + type + "'");
  });
  if (auto s = node.maybe("scale")) f = f.scaled(s->number());
  if (auto s = node.maybe("shift")) f = f.shifted(s->number());
  if (is_finite_model(model)) with_path(node, [&] { return f.cell_values(cell_count(model)); });
  return f;
}

struct ExperimentConfig {
  Json document;
  ObservationModel model;
  std::optional<ChangeTimeLaw> change_time;
  Statistic statistic;
  bool has_statistic = true;
  std::vector<double> kappas{10.0};
  std::vector<double> thresholds;
  long replications = 10000;
  std::uint64_t seed = 1;
  double horizon_multiplier = 10.0;
  unsigned workers = 0;
  bool plain_mc = true;
  bool hitting = true;
  bool tilted = true;
  bool exact_dp = true;
  std::optional<LinearClassSpec> linear_class;
  std::vector<double> path_horizons;
  double path_threshold = 0.0;
  int survival_steps = 100;

  /// The change-time law: explicit, or implied by a hidden chain.
  ChangeTimeLaw law() const {
    if (change_time) return *change_time;
    if (const auto* p = std::get_if<PomdpModel>(&model)) return pomdp_change_law(*p);
    throw SchemaError("/change_time", "missing required field");
  }
};

inline ExperimentConfig parse_config(const Json& doc) {
  const Field root(doc, "");
  if (!doc.is_object()) root.fail("config must be a JSON object");
  ExperimentConfig cfg;
  cfg.document = doc;
  cfg.model = parse_model(root.at("model"));
  if (auto c = root.maybe("change_time")) cfg.change_time = parse_change_time(*c);
  else if (!std::holds_alternative<PomdpModel>(cfg.model)) throw SchemaError("/change_time", "missing required field");
  if (root.has("statistic") || !std::holds_alternative<PomdpModel>(cfg.model))
    cfg.statistic = parse_statistic(root.at("statistic"), cfg.model);
  else
    cfg.has_statistic = false;

  if (auto k = root.maybe("kappa")) {
    cfg.kappas = k->numbers();
    if (cfg.kappas.empty()) k->fail("needs at least one value");
    for (std::size_t i = 0; i < cfg.kappas.size(); ++i) k->at(i).positive();
    if (!std::is_sorted(cfg.kappas.begin(), cfg.kappas.end())) k->fail("must be ascending");
  }
  if (auto t = root.maybe("thresholds")) {
    cfg.thresholds = t->numbers();
    for (std::size_t i = 0; i < cfg.thresholds.size(); ++i) t->at(i).positive();
    if (!std::is_sorted(cfg.thresholds.begin(), cfg.thresholds.end())) t->fail("must be ascending");
  }
  if (auto r = root.maybe("replications")) {
    cfg.replications = r->integer();
    if (cfg.replications < 1) r->fail("must be at least 1");
  }
  if (auto s = root.maybe("seed")) {
    if (!s->raw().is_number_unsigned()) s->fail("expected a nonnegative integer");
    cfg.seed = s->raw().get<std::uint64_t>();
  }
  if (auto h = root.maybe("horizon_multiplier")) cfg.horizon_multiplier = h->positive();
  if (auto w = root.maybe("workers")) {
    const long workers = w->integer();
    if (workers < 0) w->fail("must be nonnegative");
    cfg.workers = static_cast<unsigned>(workers);
  }
  if (auto e = root.maybe("estimators")) {
    if (auto f = e->maybe("plain_mc")) cfg.plain_mc = f->boolean();
    if (auto f = e->maybe("hitting")) cfg.hitting = f->boolean();
    if (auto f = e->maybe("tilted")) cfg.tilted = f->boolean();
    if (auto f = e->maybe("exact_dp")) cfg.exact_dp = f->boolean();
  }
  if (auto c = root.maybe("class")) cfg.linear_class = parse_class(*c, cfg.model);
  if (auto p = root.maybe("path")) {
    cfg.path_threshold = p->at("threshold").positive();
    if (auto h = p->maybe("horizons")) {
      cfg.path_horizons = h->numbers();
      for (std::size_t i = 0; i < cfg.path_horizons.size(); ++i) h->at(i).positive();
    }
  }
  if (auto s = root.maybe("survival_steps")) {
    const long n = s->integer();
    if (n < 21) s->fail("must be at least 21");
    cfg.survival_steps = static_cast<int>(n);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw SchemaError("/", "cannot read config file " + file);
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw SchemaError("/", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

}  // namespace qcdlab
