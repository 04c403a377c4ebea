#pragma once

// Multi-seed experiment orchestration and CSV emission.

#include "mifa/harness/config.hpp"
#include "mifa/harness/studies.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <thread>

namespace mifa::harness {

// ---------------------------------------------------------------------------
// Building runtime objects from a config
// ---------------------------------------------------------------------------

inline ProblemInstance build_instance(const ProblemSpec& p) {
  switch (p.family) {
    case Family::kQuadratic:
      return make_quadratic_instance(p.N, p.d, p.mu, p.L, p.sigma,
                                     p.heterogeneity, p.seed);
    case Family::kLogistic:
      return make_logistic_instance(p.N, p.d, p.samples_per_device, p.lambda,
                                    p.label_skew, p.seed);
    case Family::kNonconvexTrig:
      return make_nonconvex_instance(p.N, p.d, p.L_quad, p.a, p.sigma,
                                     p.heterogeneity, p.seed);
  }
  throw InvalidArgument("unknown problem family");
}

inline AvailabilityModel build_availability(const AvailabilitySpec& a,
                                            std::size_t N) {
  switch (a.kind) {
    case AvailabilityKind::kFull: return AvailabilityModel::full(N);
    case AvailabilityKind::kBernoulli: return AvailabilityModel::bernoulli(a.p);
    case AvailabilityKind::kLabelCorrelated:
      return AvailabilityModel::bernoulli(
          label_correlated_probabilities(a.labels, a.p_min));
    case AvailabilityKind::kPeriodic:
      return AvailabilityModel::periodic(a.period, a.phase);
    case AvailabilityKind::kAdversarial:
      return AvailabilityModel::adversarial(N, a.t0, a.b);
    case AvailabilityKind::kTrace: {
      std::ifstream in(a.file);
      if (!in) throw ConfigError("/availability/file",
                                 "cannot open trace file '" + a.file + "'");
      Trace trace = read_trace(in);
      if (trace.num_devices != N)
        throw ConfigError("/availability/file",
                          "trace device count differs from problem N");
      return AvailabilityModel::replay(std::move(trace));
    }
  }
  throw InvalidArgument("unknown availability model");
}

/// Mean per-device cap on inactive rounds implied by the availability model,
/// when one exists.
inline std::optional<double> implied_nu_bar(const AvailabilityModel& model) {
  return std::visit(
      [&](const auto& m) -> std::optional<double> {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, participation::Full>) {
          return 0.0;
        } else if constexpr (std::is_same_v<M, participation::Periodic>) {
          double total = 0.0;
          for (Round p : m.period) total += static_cast<double>(p - 1);
          return total / static_cast<double>(m.period.size());
        } else if constexpr (std::is_same_v<M, participation::TraceReplay>) {
          TauTracker tracker(m.trace.num_devices);
          for (const auto& a : m.trace.rounds) tracker.update(a);
          return tracker.stats_through_current().nu_bar;
        } else {
          return std::nullopt;
        }
      },
      model.variant());
}

struct ScheduleEcho {
  std::optional<double> a;
  double t0 = 0.0;
  double eta_first = 0.0;
  double eta_last = 0.0;
};

inline LrSchedule build_schedule(const ExperimentConfig& c,
                                 const ProblemInstance& instance,
                                 const AvailabilityModel& availability) {
  const auto& s = c.schedule;
  switch (s.kind) {
    case ScheduleKind::kStronglyConvex: {
      const double mu = instance.constants().mu;
      const double L = instance.constants().L;
      double t0 = s.t0.value_or(0.0);
      if (s.t0_from_bernoulli_bound) {
        const auto* p = availability.bernoulli_probabilities();
        if (!p) throw ConfigError("/schedule/t0", "needs a Bernoulli model");
        t0 = bernoulli_t0(*p, delay_slope(L, mu), s.delta);
      }
      return LrSchedule::strongly_convex(mu, L, c.run.K, t0);
    }
    case ScheduleKind::kNonConvexConstant: {
      std::optional<double> nu = s.nu_bar ? s.nu_bar : implied_nu_bar(availability);
      if (!nu)
        throw ConfigError("/schedule/nu_bar",
                          "required for this availability model");
      return LrSchedule::nonconvex_constant(instance.num_devices(), c.run.K,
                                            c.run.T, instance.constants().L,
                                            *nu, s.c0);
    }
    case ScheduleKind::kExperimentalDecay:
      return LrSchedule::experimental_decay(s.eta0);
  }
  throw InvalidArgument("unknown schedule");
}

/// Everything a run needs, built once and shared read-only across seeds.
struct Experiment {
  ExperimentConfig config;
  ProblemInstance instance;
  AvailabilityModel availability;
  LrSchedule schedule;

  explicit Experiment(ExperimentConfig c)
      : config(std::move(c)),
        instance(build_instance(config.problem)),
        availability(build_availability(config.availability, config.problem.N)),
        schedule(build_schedule(config, instance, availability)) {}

  ParamVector initial_model() const {
    return ParamVector::Constant(static_cast<Eigen::Index>(instance.dim()),
                                 config.run.init);
  }

  ScheduleEcho echo() const {
    ScheduleEcho e;
    e.a = schedule.shift();
    if (const auto* sc = std::get_if<schedule::StronglyConvex>(&schedule.variant()))
      e.t0 = sc->t0;
    e.eta_first = schedule.eta(1);
    e.eta_last = schedule.eta(config.run.T);
    return e;
  }
};

// ---------------------------------------------------------------------------
// Running and aggregating
// ---------------------------------------------------------------------------

struct SeedResult {
  std::uint64_t seed = 0;
  Trajectory trajectory;
};

struct AggregateRow {
  Round t = 0;
  std::size_t seeds = 0;
  // mean and standard error per metric; nullopt when any seed lacks it
  std::vector<std::optional<std::pair<double, double>>> stats;
};

struct ExperimentResult {
  std::vector<SeedResult> seeds;
  std::vector<AggregateRow> aggregate;
  bool partial = false;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{
      "t_prime", "f_gap",   "avg_gap", "grad_norm_sq", "min_grad_norm_sq",
      "tau_bar", "tau_max", "oracle_calls"};
  return names;
}

inline std::vector<std::optional<double>> metric_values(const RoundMetrics& m) {
  return {static_cast<double>(m.t_prime),
          m.f_gap,
          m.avg_gap,
          m.grad_norm_sq,
          m.min_grad_norm_sq,
          m.tau_bar,
          m.tau_max,
          static_cast<double>(m.oracle_calls)};
}

/// Per-round mean and standard error across seeds. Streams of different
/// lengths are truncated to the shortest.
inline std::vector<AggregateRow> aggregate(const std::vector<SeedResult>& seeds) {
  std::vector<AggregateRow> rows;
  if (seeds.empty()) return rows;
  std::size_t len = seeds.front().trajectory.rounds.size();
  for (const auto& s : seeds) len = std::min(len, s.trajectory.rounds.size());
  const std::size_t n = seeds.size();
  const std::size_t metrics = metric_names().size();
  for (std::size_t r = 0; r < len; ++r) {
    AggregateRow row;
    row.t = seeds.front().trajectory.rounds[r].t;
    row.seeds = n;
    row.stats.resize(metrics);
    std::vector<std::vector<std::optional<double>>> vals;
    for (const auto& s : seeds) vals.push_back(metric_values(s.trajectory.rounds[r]));
    for (std::size_t m = 0; m < metrics; ++m) {
      double sum = 0.0;
      bool complete = true;
      for (const auto& v : vals) {
        if (!v[m]) { complete = false; break; }
        sum += *v[m];
      }
      if (!complete) continue;
      const double mean = sum / static_cast<double>(n);
      double ss = 0.0;
      for (const auto& v : vals) ss += (*v[m] - mean) * (*v[m] - mean);
      const double se =
          n > 1 ? std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n))
                : 0.0;
      row.stats[m] = std::make_pair(mean, se);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Runs every seed (concurrently when hardware allows) and aggregates.
inline ExperimentResult run_experiment(const Experiment& exp,
                                       unsigned max_threads = 0) {
  const auto& seeds = exp.config.run.seeds;
  require(!seeds.empty(), "need at least one seed");
  auto one = [&](std::uint64_t seed) {
    return SeedResult{seed, run(exp.config.algorithm, exp.instance,
                                exp.availability, exp.schedule, exp.config.run.T,
                                exp.config.run.K, seed, exp.initial_model())};
  };
  unsigned threads = max_threads ? max_threads : std::thread::hardware_concurrency();
  threads = std::max(1u, threads);

  ExperimentResult out;
  out.seeds.resize(seeds.size());
  for (std::size_t start = 0; start < seeds.size(); start += threads) {
    const std::size_t stop = std::min(seeds.size(), start + threads);
    if (stop - start == 1) {
      out.seeds[start] = one(seeds[start]);
      continue;
    }
    std::vector<std::future<SeedResult>> jobs;
    for (std::size_t k = start; k < stop; ++k)
      jobs.push_back(std::async(std::launch::async, one, seeds[k]));
    for (std::size_t k = start; k < stop; ++k) out.seeds[k] = jobs[k - start].get();
  }
  for (const auto& s : out.seeds) out.partial = out.partial || s.trajectory.diverged;
  out.aggregate = aggregate(out.seeds);
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_real(*v) : std::string();
}

inline const char* kRunCsvHeader =
    "seed,t,t_prime,f_gap,avg_gap,grad_norm_sq,min_grad_norm_sq,tau_bar,"
    "tau_max,oracle_calls";

inline void write_run_csv(std::ostream& out, const std::vector<SeedResult>& seeds) {
  out << kRunCsvHeader << '\n';
  for (const auto& s : seeds)
    for (const RoundMetrics& m : s.trajectory.rounds)
      out << s.seed << ',' << m.t << ',' << m.t_prime << ','
          << format_optional(m.f_gap) << ',' << format_optional(m.avg_gap) << ','
          << format_real(m.grad_norm_sq) << ',' << format_real(m.min_grad_norm_sq)
          << ',' << format_real(m.tau_bar) << ','
          << static_cast<long long>(m.tau_max) << ',' << m.oracle_calls << '\n';
}

inline std::string aggregate_csv_header() {
  std::string h = "t,seeds,partial";
  for (const auto& m : metric_names()) h += "," + m + "_mean," + m + "_stderr";
  return h;
}

inline void write_aggregate_csv(std::ostream& out, const ExperimentResult& result) {
  out << aggregate_csv_header() << '\n';
  for (const AggregateRow& row : result.aggregate) {
    out << row.t << ',' << row.seeds << ',' << (result.partial ? 1 : 0);
    for (const auto& st : row.stats) {
      if (st)
        out << ',' << format_real(st->first) << ',' << format_real(st->second);
      else
        out << ",,";
    }
    out << '\n';
  }
}

/// Writes through a temporary file and renames into place.
template <typename Fn>
void write_file_atomically(const std::filesystem::path& path, Fn&& fn) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    fn(out);
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

/// Output paths for one experiment. Partial (diverged) results go to
/// ".partial" siblings so complete outputs are never overwritten.
struct OutputPaths {
  std::filesystem::path runs, aggregate, meta;
};

inline OutputPaths output_paths(const std::filesystem::path& base, bool partial) {
  std::filesystem::path stem = base;
  stem.replace_extension();
  const std::string suffix = partial ? ".partial" : "";
  OutputPaths p;
  p.runs = stem.string() + suffix + ".csv";
  p.aggregate = stem.string() + "_aggregate" + suffix + ".csv";
  p.meta = stem.string() + suffix + ".meta.json";
  return p;
}

/// Conditions on T under which the non-convex guarantee is stated:
/// T >= 32 alpha L N K, T >= 16 L N K, T >= 8 K N nu_max^2 (L^2 + rho delta) / L.
inline json nonconvex_horizon_conditions(const Experiment& exp) {
  const auto& c = exp.instance.constants();
  const double N = static_cast<double>(exp.instance.num_devices());
  const double K = exp.config.run.K;
  const double T = static_cast<double>(exp.config.run.T);
  double nu_max = 0.0;
  if (const auto* p = std::get_if<participation::Periodic>(&exp.availability.variant()))
    for (Round r : p->period) nu_max = std::max(nu_max, static_cast<double>(r - 1));
  const double c1 = 32.0 * c.alpha * c.L * N * K;
  const double c2 = 16.0 * c.L * N * K;
  const double c3 = 8.0 * K * N * nu_max * nu_max * (c.L * c.L + c.rho * c.delta) / c.L;
  json j;
  j["T_ge_32_alpha_L_N_K"] = {{"required", c1}, {"holds", T >= c1}};
  j["T_ge_16_L_N_K"] = {{"required", c2}, {"holds", T >= c2}};
  j["T_ge_delay_term"] = {{"required", c3}, {"holds", T >= c3}};
  return j;
}

inline json run_metadata(const Experiment& exp, const ExperimentResult& result) {
  json meta;
  meta["config"] = to_json(exp.config);
  const ScheduleEcho e = exp.echo();
  json& s = meta["schedule"];
  s["name"] = exp.schedule.name();
  if (e.a) s["a"] = *e.a;
  s["t0"] = e.t0;
  s["eta_1"] = e.eta_first;
  s["eta_T"] = e.eta_last;
  const auto& c = exp.instance.constants();
  meta["constants"] = {{"L", c.L},         {"mu", c.mu},       {"sigma", c.sigma},
                       {"delta", c.delta}, {"rho", c.rho},     {"alpha", c.alpha},
                       {"beta", c.beta}};
  if (exp.instance.optimum()) {
    meta["optimum"] = {{"f_star", exp.instance.optimum()->f_star},
                       {"D", exp.instance.optimum()->dissimilarity}};
  }
  if (std::holds_alternative<schedule::NonConvexConstant>(exp.schedule.variant()))
    meta["nonconvex_horizon_conditions"] = nonconvex_horizon_conditions(exp);
  meta["partial"] = result.partial;
  json diverged = json::array();
  for (const auto& s : result.seeds)
    if (s.trajectory.diverged)
      diverged.push_back({{"seed", s.seed}, {"message", s.trajectory.divergence_message}});
  meta["diverged"] = diverged;
  return meta;
}

/// Writes per-seed CSV, aggregate CSV and metadata for a finished experiment.
inline OutputPaths write_outputs(const Experiment& exp, const ExperimentResult& result,
                                 const std::filesystem::path& base) {
  const OutputPaths paths = output_paths(base, result.partial);
  write_file_atomically(paths.runs, [&](std::ostream& o) { write_run_csv(o, result.seeds); });
  write_file_atomically(paths.aggregate,
                        [&](std::ostream& o) { write_aggregate_csv(o, result); });
  write_file_atomically(paths.meta, [&](std::ostream& o) {
    o << run_metadata(exp, result).dump(2) << '\n';
  });
  return paths;
}

}  // namespace mifa::harness
