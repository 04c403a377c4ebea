#include "mifa/harness/experiment.hpp"
#include "mifa/harness/studies.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

namespace mifa::harness {
namespace {

const char* kBase = R"({
  "problem": {"family": "quadratic", "N": 4, "d": 3, "mu": 1, "L": 4, "sigma": 0.5, "seed": 3},
  "availability": {"model": "bernoulli", "p": [0.2, 0.5, 0.8, 1.0]},
  "algorithm": {"name": "mifa"},
  "schedule": {"kind": "strongly_convex", "t0": "bernoulli_bound", "delta": 0.05},
  "run": {"T": 60, "K": 2, "seeds": [1, 2, 3]}
})";

json base() { return json::parse(kBase); }

std::string pointer_of(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.pointer();
  }
  return "<accepted>";
}

TEST(Config, ParsesBaseExample) {
  const ExperimentConfig c = parse_config(base());
  EXPECT_EQ(c.problem.N, 4u);
  EXPECT_EQ(c.availability.kind, AvailabilityKind::kBernoulli);
  EXPECT_TRUE(c.schedule.t0_from_bernoulli_bound);
  EXPECT_EQ(c.schedule.delta, 0.05);
  EXPECT_EQ(c.run.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
}

TEST(Config, ErrorsNameTheOffendingKey) {
  json j = base();
  j["problem"]["mu"] = 10;
  EXPECT_EQ(pointer_of(j), "/problem/mu");

  j = base();
  j["problem"]["colour"] = 1;
  EXPECT_EQ(pointer_of(j), "/problem/colour");

  j = base();
  j["availability"]["p"][2] = 0.0;
  EXPECT_EQ(pointer_of(j), "/availability/p/2");

  j = base();
  j["availability"]["p"].erase(0);
  EXPECT_EQ(pointer_of(j), "/availability/p");

  j = base();
  j["algorithm"]["name"] = "fedprox";
  EXPECT_EQ(pointer_of(j), "/algorithm/name");

  j = base();
  j["run"]["T"] = 1;
  EXPECT_EQ(pointer_of(j), "/run/T");

  j = base();
  j["run"]["K"] = 1.5;
  EXPECT_EQ(pointer_of(j), "/run/K");

  j = base();
  j.erase("schedule");
  EXPECT_EQ(pointer_of(j), "/schedule");

  j = base();
  j["extra"] = {};
  EXPECT_EQ(pointer_of(j), "/extra");

  j = base();
  j["availability"] = {{"model", "full"}};
  EXPECT_EQ(pointer_of(j), "/schedule/t0");

  j = base();
  j["problem"] = {{"family", "nonconvex-trig"}, {"L_quad", 1.0}, {"a", 0.5}};
  EXPECT_EQ(pointer_of(j), "/availability/p");
}

TEST(Config, MalformedJsonIsAConfigError) {
  EXPECT_THROW(parse_config_text("{\"problem\": "), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, SerializationRoundTrips) {
  const std::vector<std::string> variants{
      kBase,
      R"({"problem": {"family": "logistic", "N": 3, "d": 2, "samples_per_device": 5, "lambda": 0.1},
          "availability": {"model": "label_correlated", "p_min": 0.5, "labels": [[0, 1], [9, 9], [3, 4]]},
          "algorithm": {"name": "is_fedavg", "normalization": "total_count"},
          "schedule": {"kind": "experimental_decay", "eta0": 0.1},
          "run": {"T": 10, "K": 1, "init": 0.5}})",
      R"({"problem": {"family": "nonconvex-trig", "N": 2, "d": 2, "L_quad": 1, "a": 0.25},
          "availability": {"model": "periodic", "period": [1, 3], "phase": [0, 1]},
          "algorithm": {"name": "sampling_fedavg", "S": 1},
          "schedule": {"kind": "nonconvex_constant", "c0": 0.5},
          "run": {"T": 10, "K": 3, "seeds": [4]}})",
      R"({"problem": {"family": "quadratic", "N": 2, "d": 1, "mu": 1, "L": 1},
          "availability": {"model": "adversarial", "t0": 2, "b": 3},
          "algorithm": {"name": "biased_fedavg"},
          "schedule": {"kind": "strongly_convex", "t0": 7},
          "run": {"T": 5}})"};
  for (const auto& text : variants) {
    const ExperimentConfig c = parse_config_text(text);
    const std::string once = serialize(c);
    EXPECT_EQ(serialize(parse_config_text(once)), once);
  }
}

TEST(Config, RoundTripReproducesOutputs) {
  const ExperimentConfig c = parse_config(base());
  const ExperimentConfig d = parse_config_text(serialize(c));
  std::ostringstream a, b;
  write_run_csv(a, run_experiment(Experiment(c), 1).seeds);
  write_run_csv(b, run_experiment(Experiment(d), 1).seeds);
  EXPECT_EQ(a.str(), b.str());
}

// --------------------------------------------------------------- builders

TEST(Builders, LabelCorrelatedProbabilities) {
  const auto p = label_correlated_probabilities({{0, 1}, {9, 9}, {3, 5}}, 0.1);
  EXPECT_DOUBLE_EQ(p[0], 0.9);
  EXPECT_DOUBLE_EQ(p[1], 1.0);
  EXPECT_DOUBLE_EQ(p[2], 0.1 * 3 / 9.0 + 0.9);
  EXPECT_THROW(label_correlated_probabilities({{0, 1}}, 1.0), InvalidArgument);
  EXPECT_NO_THROW(label_correlated_probabilities({{1, 1}}, 1.0));
}

TEST(Builders, ScheduleFromBernoulliBound) {
  const Experiment e(parse_config(base()));
  const double slope = delay_slope(e.instance.constants().L, e.instance.constants().mu);
  const double t0 = bernoulli_t0({0.2, 0.5, 0.8, 1.0}, slope, 0.05);
  EXPECT_EQ(e.echo().t0, t0);
  const auto expected = LrSchedule::strongly_convex(e.instance.constants().mu,
                                                    e.instance.constants().L, 2, t0);
  EXPECT_EQ(e.schedule.eta(1), expected.eta(1));
}

TEST(Builders, NonConvexNuBarDefaults) {
  json j = json::parse(R"({"problem": {"family": "nonconvex-trig", "N": 2, "d": 2, "L_quad": 1, "a": 0.25},
      "availability": {"model": "periodic", "period": [1, 3], "phase": [0, 1]},
      "algorithm": {"name": "mifa"},
      "schedule": {"kind": "nonconvex_constant"},
      "run": {"T": 100, "K": 2}})");
  const Experiment periodic(parse_config(j));
  const double L = periodic.instance.constants().L;
  EXPECT_DOUBLE_EQ(periodic.schedule.eta(1), std::sqrt(2.0 / (2 * 100 * L * 2.0)));

  j["availability"] = {{"model", "bernoulli"}, {"p", {0.5, 0.5}}};
  EXPECT_THROW(
      {
        try {
          Experiment e(parse_config(j));
        } catch (const ConfigError& err) {
          EXPECT_EQ(err.pointer(), "/schedule/nu_bar");
          throw;
        }
      },
      ConfigError);
  j["schedule"]["nu_bar"] = 1.0;
  EXPECT_NO_THROW(Experiment(parse_config(j)));
}

TEST(Builders, HorizonConditionsReported) {
  json j = json::parse(R"({"problem": {"family": "nonconvex-trig", "N": 2, "d": 2, "L_quad": 1, "a": 0.25},
      "availability": {"model": "periodic", "period": [1, 3], "phase": [0, 1]},
      "algorithm": {"name": "mifa"},
      "schedule": {"kind": "nonconvex_constant"},
      "run": {"T": 100, "K": 2}})");
  const Experiment e(parse_config(j));
  const json c = nonconvex_horizon_conditions(e);
  const auto& k = e.instance.constants();
  EXPECT_DOUBLE_EQ(c["T_ge_32_alpha_L_N_K"]["required"].get<double>(), 32 * k.alpha * k.L * 4);
  EXPECT_DOUBLE_EQ(c["T_ge_16_L_N_K"]["required"].get<double>(), 16 * k.L * 4);
  EXPECT_DOUBLE_EQ(c["T_ge_delay_term"]["required"].get<double>(),
                   8 * 4 * 4 * (k.L * k.L + k.rho * k.delta) / k.L);
  EXPECT_EQ(c["T_ge_16_L_N_K"]["holds"].get<bool>(), 100 >= 16 * k.L * 4);
}

// ------------------------------------------------------------ rate slopes

TEST(RateSlope, RecoversPowerLaws) {
  std::vector<std::pair<double, double>> inv, inv_sqrt;
  for (int t = 1; t <= 10000; ++t) {
    inv.emplace_back(t, 3.0 / t);
    inv_sqrt.emplace_back(t, 2.0 / std::sqrt(t));
  }
  EXPECT_NEAR(fit_rate_slope(inv, 1000, 10000), -1.0, 1e-6);
  EXPECT_NEAR(fit_rate_slope(inv_sqrt, 1000, 10000), -0.5, 1e-6);
}

TEST(RateSlope, NeedsTenPoints) {
  std::vector<std::pair<double, double>> s;
  for (int t = 1; t <= 9; ++t) s.emplace_back(t, 1.0 / t);
  EXPECT_THROW(fit_rate_slope(s, 1, 100), InvalidArgument);
  s.emplace_back(10, 0.1);
  EXPECT_NEAR(fit_rate_slope(s, 1, 100), -1.0, 1e-12);
}

// ------------------------------------------------------------ wait study

TEST(WaitStudy, AlwaysAvailableWaitsOneRound) {
  const WaitStudy w = waiting_time_study(5, 3, {1, 1, 1, 1, 1}, 200, 1);
  EXPECT_EQ(w.mean_wait, 1.0);
  EXPECT_EQ(w.stderr_wait, 0.0);
  EXPECT_DOUBLE_EQ(w.lower_bound, 0.6);
}

TEST(WaitStudy, TwoDeviceOracle) {
  // One of two devices sampled uniformly: half the time wait 1, half the time
  // Geometric(0.5) with mean 2, so the expectation is 1.5.
  const WaitStudy w = waiting_time_study(2, 1, {0.5, 1.0}, 40000, 3);
  EXPECT_NEAR(w.mean_wait, 1.5, 4 * w.stderr_wait);
  EXPECT_DOUBLE_EQ(w.lower_bound, 1.0);
}

TEST(WaitStudy, RejectsBadInput) {
  EXPECT_THROW(waiting_time_study(2, 3, {1, 1}, 10, 1), InvalidArgument);
  EXPECT_THROW(waiting_time_study(2, 1, {1}, 10, 1), InvalidArgument);
  EXPECT_THROW(waiting_time_study(2, 1, {0, 1}, 10, 1), InvalidArgument);
}

// ------------------------------------------------------------- tau study

TEST(TauStudy, FullParticipationIsZero) {
  const TauStudy s = tau_study({1.0, 1.0, 1.0}, 50, 20, 0.01, 1);
  for (const auto& t : s.traces) {
    EXPECT_EQ(t.tau_max, 0);
    EXPECT_EQ(t.tau_bar, 0.0);
  }
  EXPECT_EQ(s.fraction_within_bound, 1.0);
  for (const auto& e : s.tails) {
    EXPECT_EQ(e.empirical, 0.0);
    EXPECT_EQ(e.expected, 0.0);
  }
}

TEST(TauStudy, TailsWithinSamplingError) {
  const TauStudy s = tau_study({0.3, 0.6}, 200, 4000, 0.01, 5);
  for (const auto& e : s.tails)
    EXPECT_LE(std::abs(e.empirical - e.expected), 4 * e.stderr_est + 1e-12)
        << e.device << " " << e.k;
}

// --------------------------------------------------------------- aggregate

SeedResult fake(std::uint64_t seed, std::vector<double> gaps) {
  SeedResult s;
  s.seed = seed;
  for (std::size_t r = 0; r < gaps.size(); ++r) {
    RoundMetrics m;
    m.t = static_cast<Round>(r + 1);
    m.f_gap = gaps[r];
    m.grad_norm_sq = gaps[r];
    s.trajectory.rounds.push_back(m);
  }
  return s;
}

TEST(Aggregate, MeanAndStandardErrorByHand) {
  const auto rows = aggregate({fake(1, {1.0, 2.0, 9.0}), fake(2, {3.0, 4.0})});
  ASSERT_EQ(rows.size(), 2u);
  const auto& st = *rows[0].stats[1];
  EXPECT_DOUBLE_EQ(st.first, 2.0);
  EXPECT_DOUBLE_EQ(st.second, 1.0);  // sqrt(2 / 1 / 2)
  EXPECT_FALSE(rows[0].stats[2].has_value());
  EXPECT_EQ(rows[1].seeds, 2u);
}

TEST(Aggregate, SingleSeedHasZeroError) {
  const auto rows = aggregate({fake(1, {1.0, 2.0})});
  EXPECT_EQ(rows[1].stats[1]->second, 0.0);
}

TEST(Aggregate, NoiselessDeterministicRunsAgree) {
  json j = base();
  j["problem"]["sigma"] = 0.0;
  j["availability"] = {{"model", "periodic"}, {"period", {1, 2, 3, 2}}, {"phase", {0, 1, 0, 1}}};
  j["schedule"] = {{"kind", "experimental_decay"}, {"eta0", 0.05}};
  const ExperimentResult r = run_experiment(Experiment(parse_config(j)), 2);
  for (std::size_t k = 1; k < r.seeds.size(); ++k)
    EXPECT_EQ(r.seeds[k].trajectory.rounds, r.seeds[0].trajectory.rounds);
  for (const auto& row : r.aggregate) EXPECT_EQ(row.stats[1]->second, 0.0);
}

TEST(Aggregate, NoisyRunsHaveSpreadAndMeanInsideEnvelope) {
  const ExperimentResult r = run_experiment(Experiment(parse_config(base())), 2);
  const auto& last = r.aggregate.back();
  EXPECT_GT(last.stats[1]->second, 0.0);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : r.seeds) {
    lo = std::min(lo, *s.trajectory.rounds.back().f_gap);
    hi = std::max(hi, *s.trajectory.rounds.back().f_gap);
  }
  EXPECT_GE(last.stats[1]->first, lo);
  EXPECT_LE(last.stats[1]->first, hi);
}

TEST(Aggregate, ThreadCountDoesNotChangeResults) {
  const Experiment e(parse_config(base()));
  const auto a = run_experiment(e, 1);
  const auto b = run_experiment(e, 3);
  for (std::size_t k = 0; k < a.seeds.size(); ++k)
    EXPECT_EQ(a.seeds[k].trajectory.rounds, b.seeds[k].trajectory.rounds);
}

// -------------------------------------------------------------------- CSV

TEST(Csv, HeadersAndEmptyFields) {
  EXPECT_EQ(std::string(kRunCsvHeader),
            "seed,t,t_prime,f_gap,avg_gap,grad_norm_sq,min_grad_norm_sq,tau_bar,tau_max,"
            "oracle_calls");
  EXPECT_EQ(aggregate_csv_header().rfind("t,seeds,partial,t_prime_mean,t_prime_stderr,", 0),
            0u);
  std::ostringstream out;
  write_run_csv(out, {fake(7, {0.5})});
  EXPECT_EQ(out.str(), std::string(kRunCsvHeader) + "\n7,1,0,0.5,,0.5,0,0,0,0\n");
}

TEST(Csv, RealsRoundTripExactly) {
  for (double v : {0.1, 1.0 / 3.0, 6.02e23, 5e-324, -2.5})
    EXPECT_EQ(std::strtod(format_real(v).c_str(), nullptr), v);
}

TEST(Outputs, PartialResultsUseSeparatePaths) {
  const auto ok = output_paths("out/run.csv", false);
  const auto bad = output_paths("out/run.csv", true);
  EXPECT_EQ(ok.runs, "out/run.csv");
  EXPECT_EQ(ok.aggregate, "out/run_aggregate.csv");
  EXPECT_EQ(ok.meta, "out/run.meta.json");
  EXPECT_EQ(bad.runs, "out/run.partial.csv");
  EXPECT_EQ(bad.aggregate, "out/run_aggregate.partial.csv");
  EXPECT_EQ(bad.meta, "out/run.partial.meta.json");
}

TEST(Outputs, WritesAllThreeFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "mifa_harness_test";
  std::filesystem::remove_all(dir);
  const Experiment e(parse_config(base()));
  const auto paths = write_outputs(e, run_experiment(e, 1), dir / "x.csv");
  for (const auto& p : {paths.runs, paths.aggregate, paths.meta})
    EXPECT_TRUE(std::filesystem::exists(p)) << p;
  std::ifstream in(paths.meta);
  const json meta = json::parse(in);
  EXPECT_EQ(meta["partial"], false);
  EXPECT_EQ(meta["schedule"]["name"], "strongly_convex");
  EXPECT_EQ(meta["schedule"]["eta_1"].get<double>(), e.schedule.eta(1));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace mifa::harness
