// Command-line front end for the federated-optimization simulator.

#include "mifa/harness/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace mifa;
using namespace mifa::harness;
namespace fs = std::filesystem;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "csv";
};

ExperimentConfig load_with_overrides(const std::string& path, const Overrides& o) {
  ExperimentConfig c = load_config(path);
  if (c.availability.kind == AvailabilityKind::kTrace) {
    fs::path f = c.availability.file;
    if (f.is_relative() && !fs::exists(f))
      c.availability.file = (fs::path(path).parent_path() / f).string();
  }
  if (o.seed) c.run.seeds = {*o.seed};
  if (!o.out.empty()) c.run.output = o.out;
  return c;
}

void print_paths(const OutputPaths& p) {
  std::cout << p.runs.string() << '\n'
            << p.aggregate.string() << '\n'
            << p.meta.string() << '\n';
}

int report_run(const ExperimentResult& r) {
  for (const auto& s : r.seeds)
    if (s.trajectory.diverged)
      std::cerr << "seed " << s.seed << " diverged: "
                << s.trajectory.divergence_message << '\n';
  return r.partial ? 3 : 0;
}

int cmd_run(const std::string& cfg, const Overrides& o) {
  const Experiment exp(load_with_overrides(cfg, o));
  const ExperimentResult r = run_experiment(exp);
  print_paths(write_outputs(exp, r, exp.config.run.output));
  return report_run(r);
}

int cmd_compare(const std::string& cfg, const std::vector<std::string>& names,
                const Overrides& o) {
  const ExperimentConfig base = load_with_overrides(cfg, o);
  fs::path stem = base.run.output;
  stem.replace_extension();
  int status = 0;
  for (const std::string& name : names) {
    const auto kind = mifa::parse_algorithm(name);
    if (!kind) throw ConfigError("/algorithm/name", "unknown algorithm '" + name + "'");
    ExperimentConfig c = base;
    c.algorithm.kind = *kind;
    c.run.output = stem.string() + "_" + name + ".csv";
    const Experiment exp(c);
    const ExperimentResult r = run_experiment(exp);
    print_paths(write_outputs(exp, r, c.run.output));
    status = std::max(status, report_run(r));
  }
  return status;
}

int cmd_tau_study(const std::string& cfg, std::size_t traces, double delta,
                  const Overrides& o) {
  const Experiment exp(load_with_overrides(cfg, o));
  const auto* p = exp.availability.bernoulli_probabilities();
  if (!p) throw ConfigError("/availability/model", "tau-study needs a Bernoulli model");
  const TauStudy s = tau_study(*p, exp.config.run.T, traces, delta,
                               exp.config.run.seeds.front());
  fs::path stem = exp.config.run.output;
  stem.replace_extension();
  const fs::path traces_csv = stem.string() + "_tau_traces.csv";
  const fs::path tails_csv = stem.string() + "_tau_tails.csv";
  write_file_atomically(traces_csv, [&](std::ostream& out) {
    out << "trace,tau_max,tau_bar,tau_max_bound,tau_bar_shape\n";
    for (std::size_t k = 0; k < s.traces.size(); ++k)
      out << k << ',' << s.traces[k].tau_max << ',' << format_real(s.traces[k].tau_bar)
          << ',' << format_real(s.bounds.tau_max_bound) << ','
          << format_real(s.bounds.tau_bar_bound_shape) << '\n';
  });
  write_file_atomically(tails_csv, [&](std::ostream& out) {
    out << "device,k,empirical,expected,stderr\n";
    for (const auto& e : s.tails)
      out << e.device << ',' << e.k << ',' << format_real(e.empirical) << ','
          << format_real(e.expected) << ',' << format_real(e.stderr_est) << '\n';
  });
  json summary{{"traces", traces},
               {"T", exp.config.run.T},
               {"delta", delta},
               {"tau_max_bound", s.bounds.tau_max_bound},
               {"tau_bar_shape", s.bounds.tau_bar_bound_shape},
               {"fraction_within_bound", s.fraction_within_bound},
               {"mean_tau_bar_ratio", s.mean_ratio}};
  std::cout << summary.dump(2) << '\n'
            << traces_csv.string() << '\n'
            << tails_csv.string() << '\n';
  return 0;
}

int cmd_wait_study(std::size_t N, std::size_t S, const std::vector<double>& p,
                   std::size_t trials, std::uint64_t seed, const std::string& out) {
  if (p.size() != N)
    throw InvalidArgument("--p needs exactly N values");
  const WaitStudy w = waiting_time_study(N, S, p, trials, seed);
  auto emit = [&](std::ostream& o) {
    o << "N,S,trials,mean_wait,stderr_wait,lower_bound\n"
      << N << ',' << S << ',' << trials << ',' << format_real(w.mean_wait) << ','
      << format_real(w.stderr_wait) << ',' << format_real(w.lower_bound) << '\n';
  };
  if (out.empty()) {
    emit(std::cout);
  } else {
    write_file_atomically(out, emit);
    std::cout << out << '\n';
  }
  return 0;
}

int cmd_validate(const std::string& cfg, const Overrides& o) {
  const Experiment exp(load_with_overrides(cfg, o));
  const auto& c = exp.instance.constants();
  json report;
  report["constants"] = {{"L", c.L},     {"mu", c.mu},       {"sigma", c.sigma},
                         {"delta", c.delta}, {"rho", c.rho}, {"alpha", c.alpha},
                         {"beta", c.beta}};
  bool ok = true;
  if (const auto& opt = exp.instance.optimum()) {
    const double g0 = exp.instance.global_grad(exp.initial_model()).norm();
    const double gs = exp.instance.global_grad(opt->w).norm();
    const bool holds = gs <= 1e-8 * std::max(1.0, g0);
    report["optimum"] = {{"f_star", opt->f_star},
                         {"D", opt->dissimilarity},
                         {"grad_norm_at_optimum", gs},
                         {"holds", holds}};
    ok = ok && holds;
  }
  const ScheduleEcho e = exp.echo();
  report["schedule"] = {{"name", exp.schedule.name()},
                        {"eta_1", e.eta_first},
                        {"eta_T", e.eta_last}};
  if (e.a) report["schedule"]["a"] = *e.a;

  const Round T = exp.config.run.T;
  if (const auto* p = exp.availability.bernoulli_probabilities()) {
    const BernoulliBounds b = bernoulli_bounds(*p, T, exp.config.schedule.delta);
    report["bernoulli"] = {{"tau_max_bound", b.tau_max_bound},
                           {"tau_bar_shape", b.tau_bar_bound_shape}};
  }
  if (exp.instance.is_convex_family() && c.mu > 0.0 &&
      exp.availability.bernoulli_probabilities() == nullptr) {
    const Trace trace = record_trace(exp.availability, exp.config.run.seeds.front(), T);
    const double t0 = e.t0;
    const DelayCheck d = check_delay_envelope(trace, t0, c.L, c.mu);
    json delay{{"t0", t0}, {"b", delay_slope(c.L, c.mu)}, {"holds", d.holds}};
    if (d.first_violation)
      delay["first_violation"] = {{"t", d.first_violation->first},
                               {"device", d.first_violation->second}};
    report["bounded_delay"] = delay;
  }
  if (std::holds_alternative<schedule::NonConvexConstant>(exp.schedule.variant()))
    report["nonconvex_horizon_conditions"] = nonconvex_horizon_conditions(exp);
  report["valid"] = ok;
  std::cout << report.dump(2) << '\n';
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated optimization simulator under device unavailability"};
  app.require_subcommand(1);

  Overrides o;
  std::uint64_t seed_value = 0;
  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--seed", seed_value, "Run a single seed instead of the configured list");
    sub->add_option("--out", o.out, "Output CSV path");
    sub->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv"}));
  };

  std::string cfg;
  auto* run = app.add_subcommand("run", "Run every configured seed and write CSV");
  run->add_option("config", cfg, "Config file")->required();
  add_overrides(run);

  std::vector<std::string> algorithms;
  auto* compare = app.add_subcommand("compare", "Run several algorithms on shared availability");
  compare->add_option("config", cfg, "Config file")->required();
  compare->add_option("--algorithms", algorithms, "Comma-separated algorithm names")
      ->required()
      ->delimiter(',');
  add_overrides(compare);

  std::size_t traces = 200;
  double delta = 0.01;
  auto* tau = app.add_subcommand("tau-study", "Monte Carlo study of inactive-round statistics");
  tau->add_option("config", cfg, "Config file")->required();
  tau->add_option("--traces", traces, "Number of simulated traces");
  tau->add_option("--delta", delta, "Confidence parameter");
  add_overrides(tau);

  std::size_t N = 0, S = 0, trials = 10000;
  std::vector<double> p;
  std::uint64_t wait_seed = 1;
  std::string wait_out;
  auto* wait = app.add_subcommand("wait-study", "Waiting time of device-sampling FedAvg");
  wait->add_option("--N", N, "Number of devices")->required();
  wait->add_option("--S", S, "Sampled devices per update")->required();
  wait->add_option("--p", p, "Comma-separated participation probabilities")
      ->required()
      ->delimiter(',');
  wait->add_option("--trials", trials, "Monte Carlo trials");
  wait->add_option("--seed", wait_seed, "Random seed");
  wait->add_option("--out", wait_out, "Output CSV path (stdout when omitted)");
  wait->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv"}));

  auto* validate = app.add_subcommand("validate", "Check a config and its assumptions without running");
  validate->add_option("config", cfg, "Config file")->required();
  add_overrides(validate);

  CLI11_PARSE(app, argc, argv);

  for (auto* sub : {run, compare, tau, validate})
    if (sub->parsed() && sub->count("--seed")) o.seed = seed_value;

  try {
    if (run->parsed()) return cmd_run(cfg, o);
    if (compare->parsed()) return cmd_compare(cfg, algorithms, o);
    if (tau->parsed()) return cmd_tau_study(cfg, traces, delta, o);
    if (wait->parsed()) return cmd_wait_study(N, S, p, trials, wait_seed, wait_out);
    if (validate->parsed()) return cmd_validate(cfg, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error at " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
