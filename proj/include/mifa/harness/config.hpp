#pragma once

// Experiment configuration: a JSON document with one section per module.
//
//   {
//     "problem":      {"family": "quadratic", "N": 10, "d": 5, "mu": 1, ...},
//     "availability": {"model": "bernoulli", "p": [...]},
//     "algorithm":    {"name": "mifa"},
//     "schedule":     {"kind": "strongly_convex", "t0": 0},
//     "run":          {"T": 1000, "K": 5, "seeds": [1, 2], "output": "out.csv"}
//   }
//
// Unknown keys are rejected; every error names the offending key as a JSON
// pointer.

#include "mifa/simulation.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace mifa::harness {

using json = nlohmann::json;

class ConfigError : public InvalidArgument {
 public:
  ConfigError(std::string pointer, const std::string& message)
      : InvalidArgument(pointer + ": " + message), pointer_(std::move(pointer)) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

struct ProblemSpec {
  Family family = Family::kQuadratic;
  std::size_t N = 10;
  std::size_t d = 5;
  std::uint64_t seed = 0;
  // quadratic / nonconvex-trig
  double sigma = 0.0;
  double heterogeneity = 1.0;
  // quadratic
  double mu = 1.0;
  double L = 10.0;
  // logistic
  std::size_t samples_per_device = 20;
  double lambda = 0.01;
  double label_skew = 1.0;
  // nonconvex-trig
  double L_quad = 1.0;
  double a = 0.5;
};

enum class AvailabilityKind {
  kFull,
  kBernoulli,
  kLabelCorrelated,
  kPeriodic,
  kAdversarial,
  kTrace
};

struct AvailabilitySpec {
  AvailabilityKind kind = AvailabilityKind::kFull;
  std::vector<double> p;                          // bernoulli
  std::vector<std::pair<int, int>> labels;        // label_correlated
  double p_min = 0.1;                             // label_correlated
  std::vector<Round> period, phase;               // periodic
  double t0 = 0.0;                                // adversarial
  double b = 2.0;                                 // adversarial
  std::string file;                               // trace
};

enum class ScheduleKind { kStronglyConvex, kNonConvexConstant, kExperimentalDecay };

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::kExperimentalDecay;
  // strongly_convex: t0 given directly, or derived from the Bernoulli bound
  std::optional<double> t0;
  bool t0_from_bernoulli_bound = false;
  double delta = 0.01;
  // nonconvex_constant
  double c0 = 1.0;
  std::optional<double> nu_bar;
  // experimental_decay
  double eta0 = 0.1;
};

struct RunSpec {
  Round T = 100;
  int K = 1;
  std::vector<std::uint64_t> seeds{1};
  std::string output = "run.csv";
  double init = 0.0;  // w_1 = init * ones
};

struct ExperimentConfig {
  ProblemSpec problem;
  AvailabilitySpec availability;
  AlgorithmConfig algorithm;
  ScheduleSpec schedule;
  RunSpec run;
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

class Section {
 public:
  Section(const json& j, std::string pointer)
      : j_(j), pointer_(std::move(pointer)) {
    if (!j_.is_object()) throw ConfigError(pointer_, "expected an object");
  }

  const std::string& pointer() const { return pointer_; }
  std::string at(const std::string& key) const { return pointer_ + "/" + key; }
  bool has(const std::string& key) const {
    allowed_.insert(key);
    return j_.contains(key);
  }

  const json& raw(const std::string& key) const {
    allowed_.insert(key);
    if (!j_.contains(key)) throw ConfigError(at(key), "missing required key");
    return j_.at(key);
  }

  double number(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(at(key), "must be finite");
    return x;
  }
  double number(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  long long integer(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_number_integer())
      throw ConfigError(at(key), "expected an integer");
    return v.get<long long>();
  }
  long long integer(const std::string& key, long long fallback) const {
    return has(key) ? integer(key) : fallback;
  }
  std::size_t count(const std::string& key, std::size_t fallback,
                    long long min_value) const {
    const long long v = has(key) ? integer(key) : static_cast<long long>(fallback);
    if (v < min_value)
      throw ConfigError(at(key), "must be >= " + std::to_string(min_value));
    return static_cast<std::size_t>(v);
  }

  std::string string(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) const {
    return has(key) ? string(key) : fallback;
  }

  std::vector<double> numbers(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array");
    std::vector<double> out;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!v[k].is_number())
        throw ConfigError(at(key) + "/" + std::to_string(k), "expected a number");
      out.push_back(v[k].get<double>());
    }
    return out;
  }

  std::vector<long long> integers(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array");
    std::vector<long long> out;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!v[k].is_number_integer())
        throw ConfigError(at(key) + "/" + std::to_string(k),
                          "expected an integer");
      out.push_back(v[k].get<long long>());
    }
    return out;
  }

  /// Throws on the first key that no accessor asked about.
  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!allowed_.count(it.key()))
        throw ConfigError(at(it.key()), "unknown key");
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (const char* k : keys) allowed_.insert(k);
  }

 private:
  const json& j_;
  std::string pointer_;
  mutable std::set<std::string> allowed_;
};

inline void check(bool ok, const std::string& pointer, const std::string& msg) {
  if (!ok) throw ConfigError(pointer, msg);
}

inline ProblemSpec parse_problem(const json& j) {
  Section s(j, "/problem");
  ProblemSpec p;
  const std::string family = s.string("family");
  p.N = s.count("N", p.N, 1);
  p.d = s.count("d", p.d, 1);
  p.seed = static_cast<std::uint64_t>(s.integer("seed", 0));
  if (family == "quadratic") {
    p.family = Family::kQuadratic;
    p.mu = s.number("mu");
    p.L = s.number("L");
    p.sigma = s.number("sigma", 0.0);
    p.heterogeneity = s.number("heterogeneity", 1.0);
    check(p.mu > 0.0, s.at("mu"), "mu must be > 0");
    check(p.mu <= p.L, s.at("mu"), "mu must be <= L");
  } else if (family == "logistic") {
    p.family = Family::kLogistic;
    p.samples_per_device = s.count("samples_per_device", p.samples_per_device, 1);
    p.lambda = s.number("lambda");
    p.label_skew = s.number("label_skew", 1.0);
    check(p.lambda > 0.0, s.at("lambda"), "lambda must be > 0");
    check(p.label_skew >= 0.0 && p.label_skew <= 1.0, s.at("label_skew"),
          "label_skew must lie in [0, 1]");
  } else if (family == "nonconvex-trig") {
    p.family = Family::kNonconvexTrig;
    p.L_quad = s.number("L_quad");
    p.a = s.number("a");
    p.sigma = s.number("sigma", 0.0);
    p.heterogeneity = s.number("heterogeneity", 1.0);
    check(p.L_quad > 0.0, s.at("L_quad"), "L_quad must be > 0");
    check(p.a >= 0.0, s.at("a"), "a must be >= 0");
    check(p.a <= p.L_quad, s.at("a"), "a must be <= L_quad");
  } else {
    throw ConfigError(s.at("family"),
                      "expected quadratic, logistic or nonconvex-trig");
  }
  check(p.sigma >= 0.0, s.at("sigma"), "sigma must be >= 0");
  check(p.heterogeneity >= 0.0, s.at("heterogeneity"),
        "heterogeneity must be >= 0");
  s.reject_unknown();
  return p;
}

inline AvailabilitySpec parse_availability(const json& j, std::size_t N) {
  Section s(j, "/availability");
  AvailabilitySpec a;
  const std::string model = s.string("model");
  if (model == "full") {
    a.kind = AvailabilityKind::kFull;
  } else if (model == "bernoulli") {
    a.kind = AvailabilityKind::kBernoulli;
    a.p = s.numbers("p");
    check(a.p.size() == N, s.at("p"), "needs one probability per device");
    for (std::size_t i = 0; i < N; ++i)
      check(a.p[i] > 0.0 && a.p[i] <= 1.0, s.at("p") + "/" + std::to_string(i),
            "probability must lie in (0, 1]");
  } else if (model == "label_correlated") {
    a.kind = AvailabilityKind::kLabelCorrelated;
    a.p_min = s.number("p_min");
    check(a.p_min > 0.0 && a.p_min <= 1.0, s.at("p_min"),
          "p_min must lie in (0, 1]");
    const json& labels = s.raw("labels");
    check(labels.is_array() && labels.size() == N, s.at("labels"),
          "needs one [j, k] label pair per device");
    for (std::size_t i = 0; i < N; ++i) {
      const std::string ptr = s.at("labels") + "/" + std::to_string(i);
      const json& pair = labels[i];
      check(pair.is_array() && pair.size() == 2 && pair[0].is_number_integer() &&
                pair[1].is_number_integer(),
            ptr, "expected a pair of integer labels");
      const int lj = pair[0].get<int>();
      const int lk = pair[1].get<int>();
      check(lj >= 0 && lj <= 9 && lk >= 0 && lk <= 9, ptr,
            "labels must lie in 0..9");
      check(a.p_min * std::min(lj, lk) / 9.0 + (1.0 - a.p_min) > 0.0, ptr,
            "label pair yields participation probability 0");
      a.labels.emplace_back(lj, lk);
    }
  } else if (model == "periodic") {
    a.kind = AvailabilityKind::kPeriodic;
    for (long long v : s.integers("period")) a.period.push_back(v);
    for (long long v : s.integers("phase")) a.phase.push_back(v);
    check(a.period.size() == N, s.at("period"), "needs one period per device");
    check(a.phase.size() == N, s.at("phase"), "needs one phase per device");
    for (std::size_t i = 0; i < N; ++i)
      check(a.period[i] >= 1, s.at("period") + "/" + std::to_string(i),
            "period must be >= 1");
  } else if (model == "adversarial") {
    a.kind = AvailabilityKind::kAdversarial;
    a.t0 = s.number("t0");
    a.b = s.number("b");
    check(a.t0 >= 0.0, s.at("t0"), "t0 must be >= 0");
    check(a.b > 1.0, s.at("b"), "b must be > 1");
  } else if (model == "trace") {
    a.kind = AvailabilityKind::kTrace;
    a.file = s.string("file");
  } else {
    throw ConfigError(s.at("model"),
                      "expected full, bernoulli, label_correlated, periodic, "
                      "adversarial or trace");
  }
  s.reject_unknown();
  return a;
}

inline AlgorithmConfig parse_algorithm(const json& j) {
  Section s(j, "/algorithm");
  AlgorithmConfig a;
  const std::string name = s.string("name");
  const auto kind = mifa::parse_algorithm(name);
  check(kind.has_value(), s.at("name"),
        "expected mifa, mifa_delta, biased_fedavg, is_fedavg or sampling_fedavg");
  a.kind = *kind;
  const std::string norm = s.string("normalization", "active_count");
  if (norm == "active_count") {
    a.normalization = IsNormalization::kActiveCount;
  } else if (norm == "total_count") {
    a.normalization = IsNormalization::kTotalCount;
  } else {
    throw ConfigError(s.at("normalization"),
                      "expected active_count or total_count");
  }
  a.S = s.count("S", 1, 1);
  if (s.has("p")) {
    a.p = s.numbers("p");
    for (std::size_t i = 0; i < a.p.size(); ++i)
      check(a.p[i] > 0.0 && a.p[i] <= 1.0, s.at("p") + "/" + std::to_string(i),
            "probability must lie in (0, 1]");
  }
  s.reject_unknown();
  return a;
}

inline ScheduleSpec parse_schedule(const json& j) {
  Section s(j, "/schedule");
  ScheduleSpec sc;
  const std::string kind = s.string("kind");
  if (kind == "strongly_convex") {
    sc.kind = ScheduleKind::kStronglyConvex;
    const json& t0 = s.raw("t0");
    if (t0.is_string()) {
      check(t0.get<std::string>() == "bernoulli_bound", s.at("t0"),
            "expected a number or \"bernoulli_bound\"");
      sc.t0_from_bernoulli_bound = true;
      sc.delta = s.number("delta", 0.01);
      check(sc.delta > 0.0 && sc.delta < 1.0, s.at("delta"),
            "delta must lie in (0, 1)");
    } else {
      sc.t0 = s.number("t0");
      check(*sc.t0 >= 0.0, s.at("t0"), "t0 must be >= 0");
    }
  } else if (kind == "nonconvex_constant") {
    sc.kind = ScheduleKind::kNonConvexConstant;
    sc.c0 = s.number("c0", 1.0);
    check(sc.c0 > 0.0 && sc.c0 <= 1.0, s.at("c0"), "c0 must lie in (0, 1]");
    if (s.has("nu_bar")) {
      sc.nu_bar = s.number("nu_bar");
      check(*sc.nu_bar >= 0.0, s.at("nu_bar"), "nu_bar must be >= 0");
    }
  } else if (kind == "experimental_decay") {
    sc.kind = ScheduleKind::kExperimentalDecay;
    sc.eta0 = s.number("eta0");
    check(sc.eta0 > 0.0, s.at("eta0"), "eta0 must be > 0");
  } else {
    throw ConfigError(
        s.at("kind"),
        "expected strongly_convex, nonconvex_constant or experimental_decay");
  }
  s.reject_unknown();
  return sc;
}

inline RunSpec parse_run(const json& j) {
  Section s(j, "/run");
  RunSpec r;
  r.T = static_cast<Round>(s.count("T", 100, 2));
  r.K = static_cast<int>(s.count("K", 1, 1));
  if (s.has("seeds")) {
    r.seeds.clear();
    for (long long v : s.integers("seeds")) {
      check(v >= 0, s.at("seeds"), "seeds must be >= 0");
      r.seeds.push_back(static_cast<std::uint64_t>(v));
    }
    check(!r.seeds.empty(), s.at("seeds"), "need at least one seed");
  }
  r.output = s.string("output", r.output);
  r.init = s.number("init", 0.0);
  s.reject_unknown();
  return r;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  detail::Section top(j, "");
  ExperimentConfig c;
  c.problem = detail::parse_problem(top.raw("problem"));
  c.availability = detail::parse_availability(top.raw("availability"), c.problem.N);
  c.algorithm = detail::parse_algorithm(top.raw("algorithm"));
  c.schedule = detail::parse_schedule(top.raw("schedule"));
  c.run = detail::parse_run(top.raw("run"));
  top.reject_unknown();

  if (c.algorithm.kind == AlgorithmKind::kSamplingFedAvg)
    detail::check(c.algorithm.S <= c.problem.N, "/algorithm/S", "S must be <= N");
  if (!c.algorithm.p.empty())
    detail::check(c.algorithm.p.size() == c.problem.N, "/algorithm/p",
                  "needs one probability per device");
  if (c.schedule.kind == ScheduleKind::kStronglyConvex) {
    detail::check(c.problem.family != Family::kNonconvexTrig, "/schedule/kind",
                  "strongly_convex schedule needs a convex problem family");
    if (c.schedule.t0_from_bernoulli_bound)
      detail::check(c.availability.kind == AvailabilityKind::kBernoulli ||
                        c.availability.kind == AvailabilityKind::kLabelCorrelated,
                    "/schedule/t0",
                    "bernoulli_bound needs a Bernoulli availability model");
  }
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Serialization (canonical form; parse_config(to_json(c)) reproduces c)
// ---------------------------------------------------------------------------

inline json to_json(const ExperimentConfig& c) {
  json j;
  json& p = j["problem"];
  p["family"] = to_string(c.problem.family);
  p["N"] = c.problem.N;
  p["d"] = c.problem.d;
  p["seed"] = c.problem.seed;
  switch (c.problem.family) {
    case Family::kQuadratic:
      p["mu"] = c.problem.mu;
      p["L"] = c.problem.L;
      p["sigma"] = c.problem.sigma;
      p["heterogeneity"] = c.problem.heterogeneity;
      break;
    case Family::kLogistic:
      p["samples_per_device"] = c.problem.samples_per_device;
      p["lambda"] = c.problem.lambda;
      p["label_skew"] = c.problem.label_skew;
      break;
    case Family::kNonconvexTrig:
      p["L_quad"] = c.problem.L_quad;
      p["a"] = c.problem.a;
      p["sigma"] = c.problem.sigma;
      p["heterogeneity"] = c.problem.heterogeneity;
      break;
  }

  json& a = j["availability"];
  switch (c.availability.kind) {
    case AvailabilityKind::kFull: a["model"] = "full"; break;
    case AvailabilityKind::kBernoulli:
      a["model"] = "bernoulli";
      a["p"] = c.availability.p;
      break;
    case AvailabilityKind::kLabelCorrelated: {
      a["model"] = "label_correlated";
      a["p_min"] = c.availability.p_min;
      json labels = json::array();
      for (auto [lj, lk] : c.availability.labels) labels.push_back({lj, lk});
      a["labels"] = labels;
      break;
    }
    case AvailabilityKind::kPeriodic:
      a["model"] = "periodic";
      a["period"] = c.availability.period;
      a["phase"] = c.availability.phase;
      break;
    case AvailabilityKind::kAdversarial:
      a["model"] = "adversarial";
      a["t0"] = c.availability.t0;
      a["b"] = c.availability.b;
      break;
    case AvailabilityKind::kTrace:
      a["model"] = "trace";
      a["file"] = c.availability.file;
      break;
  }

  json& al = j["algorithm"];
  al["name"] = to_string(c.algorithm.kind);
  al["normalization"] = c.algorithm.normalization == IsNormalization::kActiveCount
                            ? "active_count"
                            : "total_count";
  al["S"] = c.algorithm.S;
  if (!c.algorithm.p.empty()) al["p"] = c.algorithm.p;

  json& s = j["schedule"];
  switch (c.schedule.kind) {
    case ScheduleKind::kStronglyConvex:
      s["kind"] = "strongly_convex";
      if (c.schedule.t0_from_bernoulli_bound) {
        s["t0"] = "bernoulli_bound";
        s["delta"] = c.schedule.delta;
      } else {
        s["t0"] = c.schedule.t0.value_or(0.0);
      }
      break;
    case ScheduleKind::kNonConvexConstant:
      s["kind"] = "nonconvex_constant";
      s["c0"] = c.schedule.c0;
      if (c.schedule.nu_bar) s["nu_bar"] = *c.schedule.nu_bar;
      break;
    case ScheduleKind::kExperimentalDecay:
      s["kind"] = "experimental_decay";
      s["eta0"] = c.schedule.eta0;
      break;
  }

  json& r = j["run"];
  r["T"] = c.run.T;
  r["K"] = c.run.K;
  r["seeds"] = c.run.seeds;
  r["output"] = c.run.output;
  r["init"] = c.run.init;
  return j;
}

inline std::string serialize(const ExperimentConfig& c) {
  return to_json(c).dump(2) + "\n";
}

}  // namespace mifa::harness
