#pragma once

// JSON encoding of specs and reports (strict: unknown fields are rejected)
// and CSV output with 17 significant digits.

#include "odre/covariates.hpp"
#include "odre/engine.hpp"
#include "odre/kernels.hpp"
#include "odre/links.hpp"
#include "odre/model.hpp"
#include "odre/verify.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace odre::io {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Strict object reader

inline std::vector<double> numbers_of(const Json& v, const std::string& where) {
  require(v.is_array(), ErrorCode::Usage, where + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    require(e.is_number(), ErrorCode::Usage, where + ": expected an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

/// Wraps a JSON object, hands out fields by name and rejects leftovers.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j.is_object(), ErrorCode::Usage, where_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const Json& get(const std::string& key) {
    require(j_.contains(key), ErrorCode::Usage, where_ + ": missing field \"" + key + "\"");
    seen_.insert(key);
    return j_.at(key);
  }

  const Json* find(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  double number(const std::string& key) { return as_number(get(key), key); }
  double number(const std::string& key, double fallback) {
    const Json* v = find(key);
    return v ? as_number(*v, key) : fallback;
  }

  std::int64_t integer(const std::string& key) { return as_integer(get(key), key); }
  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    const Json* v = find(key);
    return v ? as_integer(*v, key) : fallback;
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    const Json* v = find(key);
    if (!v) return fallback;
    require(v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0), ErrorCode::Usage,
            where_ + "." + key + ": expected a nonnegative integer");
    return v->get<std::uint64_t>();
  }

  std::string string(const std::string& key) {
    const Json& v = get(key);
    require(v.is_string(), ErrorCode::Usage, where_ + "." + key + ": expected a string");
    return v.get<std::string>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const Json* v = find(key);
    if (!v) return fallback;
    require(v->is_boolean(), ErrorCode::Usage, where_ + "." + key + ": expected a boolean");
    return v->get<bool>();
  }

  std::vector<double> numbers(const std::string& key) { return as_numbers(get(key), where_ + "." + key); }

  /// Throws on any field that was never requested.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      require(seen_.count(it.key()) > 0, ErrorCode::Usage, where_ + ": unknown field \"" + it.key() + "\"");
  }

  const std::string& where() const { return where_; }

  double as_number(const Json& v, const std::string& key) const {
    if (v.is_string()) {
      // Infinite interval bounds are written as strings.
      const auto s = v.get<std::string>();
      if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    require(v.is_number(), ErrorCode::Usage, where_ + "." + key + ": expected a number");
    return v.get<double>();
  }

  std::int64_t as_integer(const Json& v, const std::string& key) const {
    require(v.is_number_integer(), ErrorCode::Usage, where_ + "." + key + ": expected an integer");
    return v.get<std::int64_t>();
  }

  std::vector<double> as_numbers(const Json& v, const std::string& where) const { return numbers_of(v, where); }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline std::vector<std::vector<double>> matrix(const Json& v, const std::string& where) {
  require(v.is_array(), ErrorCode::Usage, where + ": expected an array of arrays");
  std::vector<std::vector<double>> out;
  for (const auto& row : v) out.push_back(numbers_of(row, where));
  return out;
}

/// Finite numbers as JSON numbers, infinities as "inf"/"-inf", NaN as null.
inline Json number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

// ---------------------------------------------------------------------------
// Marginals and covariate processes

inline Marginal marginal_from_json(const Json& j, const std::string& where) {
  Fields f(j, where);
  const auto d = f.string("distribution");
  Marginal m;
  if (d == "gaussian") m = Gaussian{f.number("mu", 0.0), f.number("sigma", 1.0)};
  else if (d == "uniform") m = Uniform{f.number("a", 0.0), f.number("b", 1.0)};
  else if (d == "point_mass") m = PointMass{f.number("value")};
  else fail(ErrorCode::Usage, where + ": unknown distribution \"" + d + "\"");
  f.finish();
  return m;
}

inline Json to_json(const Marginal& m) {
  return std::visit(overloaded{
                        [](const Gaussian& g) { return Json{{"distribution", "gaussian"}, {"mu", g.mu}, {"sigma", g.sigma}}; },
                        [](const Uniform& u) { return Json{{"distribution", "uniform"}, {"a", u.a}, {"b", u.b}}; },
                        [](const PointMass& p) { return Json{{"distribution", "point_mass"}, {"value", p.value}}; },
                    },
                    m);
}

inline CovariateProcessSpec covariates_from_json(const Json& j, const std::string& where = "covariates") {
  Fields f(j, where);
  const auto kind = f.string("kind");
  CovariateProcessSpec spec;
  if (kind == "constant") {
    const Json& v = f.get("value");
    spec.variant = covariate::Constant{v.is_array() ? f.as_numbers(v, where + ".value")
                                                    : std::vector<double>{f.as_number(v, "value")}};
  } else if (kind == "iid") {
    spec.variant = covariate::IID{marginal_from_json(f.get("marginal"), where + ".marginal"),
                                  static_cast<std::size_t>(f.integer("dimension", 1))};
  } else if (kind == "ar1") {
    spec.variant = covariate::AR1{f.number("a"), marginal_from_json(f.get("noise"), where + ".noise"),
                                  static_cast<std::size_t>(f.integer("dimension", 1))};
  } else if (kind == "finite_state_markov") {
    spec.variant = covariate::FiniteStateMarkov{matrix(f.get("states"), where + ".states"),
                                                matrix(f.get("transition"), where + ".transition")};
  } else {
    fail(ErrorCode::Usage, where + ": unknown covariate kind \"" + kind + "\"");
  }
  f.finish();
  validate(spec);
  return spec;
}

inline Json to_json(const CovariateProcessSpec& spec) {
  return std::visit(
      overloaded{
          [](const covariate::Constant& c) { return Json{{"kind", "constant"}, {"value", c.value}}; },
          [](const covariate::IID& c) {
            return Json{{"kind", "iid"}, {"marginal", to_json(c.marginal)}, {"dimension", c.dimension}};
          },
          [](const covariate::AR1& c) {
            return Json{{"kind", "ar1"}, {"a", c.a}, {"noise", to_json(c.noise)}, {"dimension", c.dimension}};
          },
          [](const covariate::FiniteStateMarkov& c) {
            return Json{{"kind", "finite_state_markov"}, {"states", c.states}, {"transition", c.transition}};
          },
      },
      spec.variant);
}

// ---------------------------------------------------------------------------
// Coefficient maps: a bare number is a constant map.

inline CoefficientMap coefficient_from_json(const Json& j, const std::string& where) {
  if (j.is_number()) {
    const double c = j.get<double>();
    return constant_map(c);
  }
  Fields f(j, where);
  const auto kind = f.string("kind");
  auto slope = [&](const std::string& key) {
    const Json& v = f.get(key);
    return v.is_array() ? f.as_numbers(v, where + "." + key) : std::vector<double>{f.as_number(v, key)};
  };
  auto args = [&] {
    const Json& v = f.get("args");
    require(v.is_array(), ErrorCode::Usage, where + ".args: expected an array");
    std::vector<CoefficientMap> out;
    for (std::size_t i = 0; i < v.size(); ++i)
      out.push_back(coefficient_from_json(v[i], where + ".args[" + std::to_string(i) + "]"));
    return out;
  };
  CoefficientMap m;
  if (kind == "constant") m = coef::Constant{f.number("c")};
  else if (kind == "affine") m = coef::Affine{f.number("c0", 0.0), slope("c1")};
  else if (kind == "affine_abs") m = coef::AffineAbs{f.number("c0", 0.0), f.number("c1")};
  else if (kind == "exp_affine") m = coef::ExpAffine{f.number("c0", 0.0), slope("c1")};
  else if (kind == "table") m = coef::Table{f.numbers("keys"), f.numbers("values")};
  else if (kind == "abs") m = coef::Abs{args()};
  else if (kind == "max") m = coef::Max{args()};
  else if (kind == "sum") m = coef::Sum{args()};
  else if (kind == "product") m = coef::Product{args()};
  else fail(ErrorCode::Usage, where + ": unknown coefficient kind \"" + kind + "\"");
  m.nonnegative = f.boolean("nonnegative", m.structurally_nonnegative());
  f.finish();
  validate(m);
  return m;
}

inline Json to_json(const CoefficientMap& m) {
  Json j = std::visit(
      overloaded{
          [](const coef::Constant& c) { return Json{{"kind", "constant"}, {"c", c.c}}; },
          [](const coef::Affine& c) { return Json{{"kind", "affine"}, {"c0", c.c0}, {"c1", c.c1}}; },
          [](const coef::AffineAbs& c) { return Json{{"kind", "affine_abs"}, {"c0", c.c0}, {"c1", c.c1}}; },
          [](const coef::ExpAffine& c) { return Json{{"kind", "exp_affine"}, {"c0", c.c0}, {"c1", c.c1}}; },
          [](const coef::Table& c) { return Json{{"kind", "table"}, {"keys", c.keys}, {"values", c.values}}; },
          [](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            const char* kind = std::is_same_v<T, coef::Abs>   ? "abs"
                               : std::is_same_v<T, coef::Max> ? "max"
                               : std::is_same_v<T, coef::Sum> ? "sum"
                                                              : "product";
            Json args = Json::array();
            for (const auto& a : c.args) args.push_back(to_json(a));
            return Json{{"kind", kind}, {"args", args}};
          },
      },
      m.variant);
  j["nonnegative"] = m.nonnegative;
  return j;
}

// ---------------------------------------------------------------------------
// Kernels

inline ObservationKernel kernel_from_json(const Json& j, const std::string& where = "kernel") {
  Fields f(j, where);
  const auto family = f.string("family");
  ObservationKernel k;
  if (family == "poisson") k = kernel::Poisson{};
  else if (family == "negbinomial") k = kernel::NegBinomial{static_cast<int>(f.integer("r"))};
  else if (family == "bernoulli_logit") k = kernel::BernoulliLogit{};
  else if (family == "bernoulli_probit") k = kernel::BernoulliProbit{};
  else if (family == "multinomial") k = kernel::Multinomial{static_cast<int>(f.integer("N"))};
  else if (family == "garch_gaussian") k = kernel::GarchGaussian{f.number("c_minus")};
  else if (family == "location") {
    const auto d = f.string("density");
    kernel::Location l;
    if (d == "gaussian") {
      l.density = kernel::Density::Gaussian;
      l.scale = f.number("sigma", 1.0);
    } else if (d == "laplace") {
      l.density = kernel::Density::Laplace;
      l.scale = f.number("b", 1.0);
    } else if (d == "student_t") {
      l.density = kernel::Density::StudentT;
      l.nu = f.number("nu");
    } else {
      fail(ErrorCode::Usage, where + ": unknown density \"" + d + "\"");
    }
    k = l;
  } else {
    fail(ErrorCode::Usage, where + ": unknown family \"" + family + "\"");
  }
  f.finish();
  validate(k);
  return k;
}

inline Json to_json(const ObservationKernel& k) {
  return std::visit(overloaded{
                        [](const kernel::Poisson&) { return Json{{"family", "poisson"}}; },
                        [](const kernel::NegBinomial& nb) { return Json{{"family", "negbinomial"}, {"r", nb.r}}; },
                        [](const kernel::BernoulliLogit&) { return Json{{"family", "bernoulli_logit"}}; },
                        [](const kernel::BernoulliProbit&) { return Json{{"family", "bernoulli_probit"}}; },
                        [](const kernel::Multinomial& m) { return Json{{"family", "multinomial"}, {"N", m.N}}; },
                        [](const kernel::GarchGaussian& g) {
                          return Json{{"family", "garch_gaussian"}, {"c_minus", g.c_minus}};
                        },
                        [](const kernel::Location& l) {
                          switch (l.density) {
                            case kernel::Density::Gaussian:
                              return Json{{"family", "location"}, {"density", "gaussian"}, {"sigma", l.scale}};
                            case kernel::Density::Laplace:
                              return Json{{"family", "location"}, {"density", "laplace"}, {"b", l.scale}};
                            case kernel::Density::StudentT:
                              return Json{{"family", "location"}, {"density", "student_t"}, {"nu", l.nu}};
                          }
                          return Json{};
                        },
                    },
                    k);
}

// ---------------------------------------------------------------------------
// Links

inline IntervalMap interval_from_json(const Json& j, const std::string& where) {
  Fields f(j, where);
  const auto kind = f.string("kind");
  IntervalMap m;
  if (kind == "fixed") m = interval::Fixed{f.number("lo"), f.number("hi")};
  else if (kind == "covariate_scaled") m = interval::CovariateScaled{f.number("lo"), f.number("hi")};
  else fail(ErrorCode::Usage, where + ": unknown interval kind \"" + kind + "\"");
  f.finish();
  validate(m);
  return m;
}

inline Json to_json(const IntervalMap& m) {
  return std::visit(overloaded{
                        [](const interval::Fixed& i) {
                          return Json{{"kind", "fixed"}, {"lo", number(i.lo)}, {"hi", number(i.hi)}};
                        },
                        [](const interval::CovariateScaled& i) {
                          return Json{{"kind", "covariate_scaled"}, {"lo", number(i.lo)}, {"hi", number(i.hi)}};
                        },
                    },
                    m);
}

inline link::Regime regime_from_json(const Json& j, const std::string& where) {
  Fields f(j, where);
  link::Regime r;
  r.kappa = coefficient_from_json(f.get("kappa"), where + ".kappa");
  r.kappa_tilde = coefficient_from_json(f.get("kappa_tilde"), where + ".kappa_tilde");
  r.gamma = coefficient_from_json(f.get("gamma"), where + ".gamma");
  f.finish();
  return r;
}

inline Json to_json(const link::Regime& r) {
  return Json{{"kappa", to_json(r.kappa)}, {"kappa_tilde", to_json(r.kappa_tilde)}, {"gamma", to_json(r.gamma)}};
}

inline link::Regression regression_from_json(const Json& j, const std::string& where) {
  Fields f(j, where);
  const auto kind = f.string("kind");
  link::Regression g;
  if (kind == "linear") {
    link::LinearRegression r;
    r.slope = coefficient_from_json(f.get("slope"), where + ".slope");
    if (const Json* v = f.find("intercept")) r.intercept = coefficient_from_json(*v, where + ".intercept");
    if (const Json* v = f.find("clip")) r.clip = f.as_number(*v, "clip");
    g = r;
  } else if (kind == "power") {
    g = link::PowerRegression{coefficient_from_json(f.get("coef"), where + ".coef"), f.number("power")};
  } else {
    fail(ErrorCode::Usage, where + ": unknown regression kind \"" + kind + "\"");
  }
  f.finish();
  return g;
}

inline Json to_json(const link::Regression& g) {
  return std::visit(overloaded{
                        [](const link::LinearRegression& r) {
                          Json j{{"kind", "linear"}, {"slope", to_json(r.slope)}, {"intercept", to_json(r.intercept)}};
                          if (r.clip) j["clip"] = *r.clip;
                          return j;
                        },
                        [](const link::PowerRegression& r) {
                          return Json{{"kind", "power"}, {"coef", to_json(r.coef)}, {"power", r.power}};
                        },
                    },
                    g);
}

inline LinkSpec link_from_json(const Json& j, const std::string& where = "link") {
  Fields f(j, where);
  const auto variant = f.string("variant");
  LinkSpec link;
  auto coef_field = [&](const std::string& key) { return coefficient_from_json(f.get(key), where + "." + key); };
  if (variant == "linear") {
    link::Linear l;
    l.kappa = coef_field("kappa");
    l.kappa_tilde = coef_field("kappa_tilde");
    l.delta_tilde = coef_field("delta_tilde");
    l.order = static_cast<int>(f.integer("order", 1));
    link.variant = l;
  } else if (variant == "threshold") {
    link::Threshold t;
    t.inside = regime_from_json(f.get("inside"), where + ".inside");
    t.outside = regime_from_json(f.get("outside"), where + ".outside");
    t.interval = interval_from_json(f.get("interval"), where + ".interval");
    t.order = static_cast<int>(f.integer("order", 1));
    link.variant = t;
  } else if (variant == "arma_like") {
    link::ArmaLike a;
    a.a = coef_field("a");
    a.g = regression_from_json(f.get("g"), where + ".g");
    link.variant = a;
  } else if (variant == "categorical") {
    link::Categorical c;
    c.kappa = coef_field("kappa");
    c.kappa_tilde = coef_field("kappa_tilde");
    c.delta_tilde = coef_field("delta_tilde");
    c.table = matrix(f.get("table"), where + ".table");
    c.intercept = f.numbers("intercept");
    link.variant = c;
  } else {
    fail(ErrorCode::Usage, where + ": unknown link variant \"" + variant + "\"");
  }
  if (const Json* v = f.find("floor")) link.floor = f.as_number(*v, "floor");
  f.finish();
  validate(link);
  return link;
}

inline Json to_json(const LinkSpec& link) {
  Json j = std::visit(
      overloaded{
          [](const link::Linear& l) {
            return Json{{"variant", "linear"},
                        {"kappa", to_json(l.kappa)},
                        {"kappa_tilde", to_json(l.kappa_tilde)},
                        {"delta_tilde", to_json(l.delta_tilde)},
                        {"order", l.order}};
          },
          [](const link::Threshold& t) {
            return Json{{"variant", "threshold"},
                        {"inside", to_json(t.inside)},
                        {"outside", to_json(t.outside)},
                        {"interval", to_json(t.interval)},
                        {"order", t.order}};
          },
          [](const link::ArmaLike& a) { return Json{{"variant", "arma_like"}, {"a", to_json(a.a)}, {"g", to_json(a.g)}}; },
          [](const link::Categorical& c) {
            return Json{{"variant", "categorical"},
                        {"kappa", to_json(c.kappa)},
                        {"kappa_tilde", to_json(c.kappa_tilde)},
                        {"delta_tilde", to_json(c.delta_tilde)},
                        {"table", c.table},
                        {"intercept", c.intercept}};
          },
      },
      link.variant);
  if (link.floor) j["floor"] = *link.floor;
  return j;
}

inline Json to_json(const GrowthEnvelope& env) {
  Json j{{"kappa", describe(env.kappa)},
         {"kappa_tilde", describe(env.kappa_tilde)},
         {"delta_tilde", describe(env.delta_tilde)},
         {"order", env.order},
         {"is_contractive_in_s", env.is_contractive_in_s},
         {"case", std::string(to_string(env.case_tag))}};
  if (env.outside_growth) j["outside_growth"] = describe(*env.outside_growth);
  return j;
}

// ---------------------------------------------------------------------------
// Models and states

inline ModelSpec model_from_json(const Json& j, const std::string& where = "model") {
  Fields f(j, where);
  ModelSpec m;
  m.kernel = kernel_from_json(f.get("kernel"), where + ".kernel");
  m.link = link_from_json(f.get("link"), where + ".link");
  m.covariates = covariates_from_json(f.get("covariates"), where + ".covariates");
  m.alpha = f.number("alpha", 1.0);
  if (f.has("norm"))
    require(f.string("norm") == norm_tag(m), ErrorCode::Usage, where + ".norm: must be \"" + norm_tag(m) + "\"");
  f.finish();
  validate(m);
  return m;
}

inline Json to_json(const ModelSpec& m) {
  return Json{{"kernel", to_json(m.kernel)},
              {"link", to_json(m.link)},
              {"covariates", to_json(m.covariates)},
              {"alpha", m.alpha},
              {"norm", norm_tag(m)}};
}

inline State state_from_json(const Json& j, const std::string& where) {
  if (j.is_number()) return State(j.get<double>());
  const auto v = numbers_of(j, where);
  require(!v.empty() && v.size() <= kMaxStateDim, ErrorCode::Usage, where + ": bad state dimension");
  return State(std::span<const double>(v));
}

inline Json to_json(const State& s) {
  if (s.size() == 1) return number(s[0]);
  Json a = Json::array();
  for (double v : s) a.push_back(number(v));
  return a;
}

inline Json to_json(const PhiSpec& phi) { return Json{{"coefficients", phi.coefficients}, {"degree", phi.degree()}}; }

// ---------------------------------------------------------------------------
// Reports

inline Json to_json(const MomentEstimate& e) {
  return Json{{"mean", number(e.mean)},
              {"std_error", number(e.std_error)},
              {"n_samples", e.n_samples},
              {"verdict", std::string(to_string(e.verdict))},
              {"floored", e.floored},
              {"heavy_tail_suspected", e.heavy_tail_suspected}};
}

inline Json to_json(const VerificationReport& r) {
  Json a1{{"kappa", r.a1.kappa_description},
          {"log_kappa", to_json(r.a1.log_kappa)},
          {"kappa_vanishes", r.a1.kappa_vanishes},
          {"lipschitz_triples", r.a1.lipschitz_triples},
          {"lipschitz_max_excess", number(r.a1.lipschitz_max_excess)},
          {"lipschitz_tolerance", 1e-12},
          {"lipschitz_pass", r.a1.lipschitz_pass},
          {"outcome", std::string(to_string(r.a1.outcome))}};
  Json a2{{"case", std::string(to_string(r.a2.route))},
          {"order", r.a2.order},
          {"envelope", {{"kappa", r.a2.kappa_description},
                        {"kappa_tilde", r.a2.kappa_tilde_description},
                        {"delta_tilde", r.a2.delta_tilde_description}}},
          {"gamma", r.a2.gamma_description},
          {"delta", r.a2.delta_description},
          {"V", r.a2.V_description},
          {"D", r.a2.D},
          {"log_gamma", to_json(r.a2.log_gamma)},
          {"log_plus_delta", to_json(r.a2.log_plus_delta)},
          {"structural_error", r.a2.structural_error ? Json(*r.a2.structural_error) : Json(nullptr)},
          {"outcome", std::string(to_string(r.a2.outcome))}};
  if (r.a2.log_outside_growth) a2["log_outside_growth"] = to_json(*r.a2.log_outside_growth);
  if (!r.a2.log_plus_reference.empty()) {
    Json refs = Json::array();
    for (const auto& e : r.a2.log_plus_reference) refs.push_back(to_json(e));
    a2["log_plus_reference"] = refs;
  }
  Json a3{{"phi", to_json(r.a3.phi)},
          {"pairs", r.a3.pairs},
          {"tol", r.a3.tol},
          {"max_violation", number(r.a3.max_violation)},
          {"worst_pair", {to_json(r.a3.worst.s), to_json(r.a3.worst.s_prime)}},
          {"grid", r.a3.grid_description},
          {"outcome", std::string(to_string(r.a3.outcome))}};
  Json config{{"mc_n", r.config.mc_n},
              {"seed", r.config.seed},
              {"grid_size", r.config.grid_size},
              {"tol", r.config.tol},
              {"lipschitz_triples", r.config.lipschitz_triples}};
  if (r.config.phi_override) config["phi_override"] = r.config.phi_override->coefficients;
  return Json{{"schema_version", VerificationReport::kSchemaVersion},
              {"a1", a1},
              {"a2", a2},
              {"a3", a3},
              {"config", config},
              {"overall", std::string(to_string(r.overall))}};
}

inline std::string to_text(const VerificationReport& r) {
  char buf[512];
  std::string out;
  auto line = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    out += buf;
    out += '\n';
  };
  line("A1 %s: E log kappa = %.6g +- %.3g (%s), kappa = %s, Lipschitz excess %.3g over %zu triples",
       std::string(to_string(r.a1.outcome)).c_str(), r.a1.log_kappa.mean, r.a1.log_kappa.std_error,
       std::string(to_string(r.a1.log_kappa.verdict)).c_str(), r.a1.kappa_description.c_str(),
       r.a1.lipschitz_max_excess, r.a1.lipschitz_triples);
  line("A2 %s: route %s, V(s)=1+|s|, D = %.6g, E log gamma = %.6g +- %.3g, E log+ delta = %.6g",
       std::string(to_string(r.a2.outcome)).c_str(), std::string(to_string(r.a2.route)).c_str(), r.a2.D,
       r.a2.log_gamma.mean, r.a2.log_gamma.std_error, r.a2.log_plus_delta.mean);
  if (r.a2.structural_error) line("   structural error: %s", r.a2.structural_error->c_str());
  line("A3 %s: max(tv_exact - tv_bound) = %.3g over %zu pairs (tol %.3g)", std::string(to_string(r.a3.outcome)).c_str(),
       r.a3.max_violation, r.a3.pairs, r.a3.tol);
  line("overall %s", std::string(to_string(r.overall)).c_str());
  return out;
}

// ---------------------------------------------------------------------------
// CSV

/// 17 significant digits; infinities and NaN spelled out.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// RFC 4180 field quoting.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}

  void header(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (i) os_ << ',';
      os_ << csv_field(names[i]);
    }
    os_ << '\n';
  }

  CsvWriter& operator<<(double v) { return put(format_double(v)); }
  CsvWriter& operator<<(std::int64_t v) { return put(std::to_string(v)); }
  CsvWriter& operator<<(std::size_t v) { return put(std::to_string(v)); }
  CsvWriter& operator<<(int v) { return put(std::to_string(v)); }
  CsvWriter& operator<<(const std::string& s) { return put(csv_field(s)); }

  void end_row() {
    os_ << '\n';
    first_ = true;
  }

 private:
  CsvWriter& put(const std::string& s) {
    if (!first_) os_ << ',';
    os_ << s;
    first_ = false;
    return *this;
  }

  std::ostream& os_;
  bool first_ = true;
};

/// Column names "name" for one component, "name_1".."name_d" otherwise.
inline std::vector<std::string> component_names(const std::string& name, std::size_t d) {
  if (d == 1) return {name};
  std::vector<std::string> out;
  for (std::size_t i = 1; i <= d; ++i) out.push_back(name + "_" + std::to_string(i));
  return out;
}

inline void write_path_csv(std::ostream& os, const CovariatePath& path) {
  CsvWriter w(os);
  auto names = component_names("x", path.dimension());
  names.insert(names.begin(), "t");
  w.header(names);
  for (std::int64_t t = path.range().t_min; t <= path.range().t_max; ++t) {
    w << t;
    for (double v : path.at(t)) w << v;
    w.end_row();
  }
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  CsvWriter w(os);
  std::vector<std::string> names{"t"};
  for (auto& n : component_names("x", tr.path.dimension())) names.push_back(n);
  const std::size_t d = tr.lambda.empty() ? 1 : tr.lambda.front().size();
  for (auto& n : component_names("lambda", d)) names.push_back(n);
  names.push_back("y");
  w.header(names);
  for (std::size_t i = 0; i < tr.lambda.size(); ++i) {
    const std::int64_t t = tr.range.t_min + static_cast<std::int64_t>(i);
    w << t;
    for (double v : tr.path.at(t)) w << v;
    for (double v : tr.lambda[i]) w << v;
    w << tr.y[i];
    w.end_row();
  }
}

inline void write_trace_csv(std::ostream& os, const CouplingTrace& tr, const CovariatePath& path) {
  CsvWriter w(os);
  std::vector<std::string> names{"t"};
  for (auto& n : component_names("x", path.dimension())) names.push_back(n);
  const std::size_t d = tr.lambda.empty() ? 1 : tr.lambda.front().size();
  for (auto& n : component_names("lambda", d)) names.push_back(n);
  names.push_back("y");
  for (auto& n : component_names("lambda_prime", d)) names.push_back(n);
  names.insert(names.end(), {"y_prime", "met"});
  w.header(names);
  for (std::size_t i = 0; i < tr.lambda.size(); ++i) {
    const std::int64_t t = tr.range.t_min + static_cast<std::int64_t>(i);
    w << t;
    for (double v : path.at(t)) w << v;
    for (double v : tr.lambda[i]) w << v;
    w << tr.y[i];
    for (double v : tr.lambda_prime[i]) w << v;
    w << tr.y_prime[i] << static_cast<int>(tr.met[i]);
    w.end_row();
  }
}

inline void write_measure_csv(std::ostream& os, const EmpiricalMeasure& mu) {
  CsvWriter w(os);
  const std::size_t d = mu.points.empty() ? 1 : mu.points.front().size();
  auto names = component_names("lambda", d);
  names.insert(names.begin(), "replica");
  w.header(names);
  for (std::size_t r = 0; r < mu.points.size(); ++r) {
    w << r;
    for (double v : mu.points[r]) w << v;
    w.end_row();
  }
}

/// Sorted keys (the default object type is ordered), two-space indent.
inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace odre::io
