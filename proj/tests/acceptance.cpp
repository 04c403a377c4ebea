// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "mifa/harness/experiment.hpp"
#include "mifa/harness/studies.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

namespace {

using namespace mifa;
using namespace mifa::harness;

// FNV-1a over everything a criterion produced; used for the rerun check.
class Digest {
 public:
  void add(const std::string& s) {
    for (unsigned char c : s) {
      h_ ^= c;
      h_ *= 0x100000001b3ULL;
    }
  }
  void add(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%a;", v);
    add(std::string(buf));
  }
  void add(const ParamVector& w) {
    for (Eigen::Index j = 0; j < w.size(); ++j) add(w[j]);
  }
  void add(const Trajectory& tr) {
    std::ostringstream out;
    write_run_csv(out, {SeedResult{0, tr}});
    add(out.str());
    add(tr.final_w);
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

AlgorithmConfig algo(AlgorithmKind k, std::size_t S = 1) {
  AlgorithmConfig c;
  c.kind = k;
  c.S = S;
  return c;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------- 1

Outcome full_participation_degeneracy(Digest& dg) {
  const auto inst = make_quadratic_instance(10, 5, 1.0, 4.0, 1.0, 2.0, 1);
  const auto avail = AvailabilityModel::full(10);
  const auto sched = LrSchedule::strongly_convex(1.0, 4.0, 5, 0.0);
  const std::uint64_t seed = 42;
  Simulation mifa(algo(AlgorithmKind::kMifa), inst, avail, sched, 5, seed);
  Simulation delta(algo(AlgorithmKind::kMifaDelta), inst, avail, sched, 5, seed);
  Simulation biased(algo(AlgorithmKind::kBiasedFedAvg), inst, avail, sched, 5, seed);
  std::size_t mismatches = 0;
  for (Round t = 1; t <= 500; ++t) {
    const RoundMetrics a = mifa.step(), b = delta.step(), c = biased.step();
    if (!(a == b && a == c && mifa.model() == delta.model() && mifa.model() == biased.model()))
      ++mismatches;
    dg.add(mifa.model());
  }
  return {mismatches == 0,
          "rounds with any bit difference: " + std::to_string(mismatches) + " of 500"};
}

// ---------------------------------------------------------------------- 2

Outcome delta_equivalence(Digest& dg) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int c = 0; c < 20; ++c) {
    const std::size_t N = 2 + rng() % 14;
    const std::size_t d = 1 + rng() % 6;
    const int K = 1 + static_cast<int>(rng() % 5);
    const double sigma = 0.1 + 1.9 * u(rng);
    std::vector<double> p(N);
    for (double& pi : p) pi = 0.1 + 0.9 * u(rng);
    const std::uint64_t inst_seed = rng();
    const ProblemInstance inst =
        c % 2 == 0 ? make_quadratic_instance(N, d, 1.0, 1.0 + 9.0 * u(rng), sigma, 1.0, inst_seed)
                   : make_logistic_instance(N, d, 10, 0.05, u(rng), inst_seed);
    const auto avail = AvailabilityModel::bernoulli(p);
    const auto sched = LrSchedule::experimental_decay(0.02 + 0.1 * u(rng));
    const std::uint64_t seed = rng();
    Simulation a(algo(AlgorithmKind::kMifa), inst, avail, sched, K, seed);
    Simulation b(algo(AlgorithmKind::kMifaDelta), inst, avail, sched, K, seed);
    for (Round t = 1; t <= 300; ++t) {
      a.step();
      b.step();
      for (Eigen::Index j = 0; j < a.model().size(); ++j) {
        const double x = a.model()[j], y = b.model()[j];
        const double scale = std::max(std::abs(x), std::abs(y));
        if (scale > 0.0) worst = std::max(worst, std::abs(x - y) / scale);
      }
    }
    dg.add(a.model());
    dg.add(b.model());
  }
  return {worst <= 1e-9, "max relative deviation " + fmt(worst) + " (limit 1e-9)"};
}

// ---------------------------------------------------------------------- 3

Outcome strongly_convex_rate(Digest& dg) {
  const auto inst = make_quadratic_instance(20, 10, 1.0, 10.0, 1.0, 1.0, 1);
  std::vector<double> p(20);
  for (int i = 0; i < 20; ++i) p[i] = 0.3 + 0.7 * i / 19.0;
  const auto avail = AvailabilityModel::bernoulli(p);
  const double t0 = bernoulli_t0(p, delay_slope(10.0, 1.0), 0.01);
  const auto sched = LrSchedule::strongly_convex(1.0, 10.0, 5, t0);
  const Trajectory tr = run(algo(AlgorithmKind::kMifa), inst, avail, sched, 10000, 5, 1);
  dg.add(tr);
  std::vector<std::pair<double, double>> stream;
  for (const auto& m : tr.rounds) stream.emplace_back(static_cast<double>(m.t), *m.avg_gap);
  const double slope = fit_rate_slope(stream, 1e3, 1e4);
  return {!tr.diverged && slope >= -1.3 && slope <= -0.7,
          "avg_gap slope " + fmt(slope) + " in [-1.3, -0.7], t0=" + fmt(t0) +
              ", a=" + fmt(*sched.shift())};
}

// ---------------------------------------------------------------------- 4

Outcome bias_demonstration(Digest& dg) {
  std::vector<Matrix> H;
  std::vector<ParamVector> centers;
  std::vector<std::pair<int, int>> labels;
  for (int i = 0; i < 10; ++i) {
    H.push_back(Matrix::Identity(1, 1));
    centers.push_back(ParamVector::Constant(1, i < 5 ? -1.0 : 1.0));
    labels.push_back(i < 5 ? std::make_pair(0, 1) : std::make_pair(9, 9));
  }
  const auto inst = make_quadratic_from_parts(H, centers, 0.5);
  const auto avail = AvailabilityModel::bernoulli(label_correlated_probabilities(labels, 0.1));
  const auto sched = LrSchedule::experimental_decay(0.5);
  std::vector<double> ratios;
  std::string per_seed;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto b = run(algo(AlgorithmKind::kBiasedFedAvg), inst, avail, sched, 10000, 5, s,
                       ParamVector::Constant(1, 1.0));
    const auto m = run(algo(AlgorithmKind::kMifa), inst, avail, sched, 10000, 5, s,
                       ParamVector::Constant(1, 1.0));
    dg.add(b);
    dg.add(m);
    ratios.push_back(*b.rounds.back().f_gap / *m.rounds.back().f_gap);
    per_seed += (s > 1 ? "," : "") + fmt(ratios.back(), 3);
  }
  const double med = median(ratios);
  return {med >= 5.0, "median gap ratio biased/mifa " + fmt(med) + " >= 5 (seeds: " + per_seed + ")"};
}

// ---------------------------------------------------------------------- 5

Outcome straggler_resistance(Digest& dg) {
  const auto inst = make_quadratic_instance(20, 5, 1.0, 4.0, 1.0, 2.0, 5);
  std::vector<double> p(20, 1.0);
  p[0] = 0.05;
  const auto avail = AvailabilityModel::bernoulli(p);
  const auto sched = LrSchedule::experimental_decay(0.05);
  const Round horizon = 2000, cap = 40000;
  std::vector<double> ratios;
  int censored = 0;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto m = run(algo(AlgorithmKind::kMifa), inst, avail, sched, horizon, 5, s);
    const double target = *m.rounds.back().f_gap;
    const auto sf = run(algo(AlgorithmKind::kSamplingFedAvg, 10), inst, avail, sched, cap, 5, s);
    dg.add(m);
    dg.add(sf);
    Round hit = 0;
    for (const auto& r : sf.rounds)
      if (*r.f_gap <= target) {
        hit = r.t;
        break;
      }
    // not reached within the cap: the ratio is at least cap / horizon
    if (hit == 0) ++censored;
    ratios.push_back(static_cast<double>(hit ? hit : cap) / static_cast<double>(horizon));
  }
  const double med = median(ratios);
  return {med >= 3.0, "median wall-round ratio sampling/mifa " + std::string(censored ? ">= " : "") +
                          fmt(med) + " >= 3 (" + std::to_string(censored) +
                          " of 5 seeds censored at " + std::to_string(cap) + ")"};
}

// ---------------------------------------------------------------------- 6

Outcome waiting_time_bound(Digest& dg) {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  int violations = 0;
  double tightest = INFINITY;
  for (int c = 0; c < 50; ++c) {
    const std::size_t N = 2 + rng() % 29;
    const std::size_t S = 1 + rng() % N;
    std::vector<double> p(N);
    for (double& pi : p) pi = u(rng);
    const WaitStudy w = waiting_time_study(N, S, p, 10000, static_cast<std::uint64_t>(c + 1));
    dg.add(w.mean_wait);
    dg.add(w.stderr_wait);
    const double margin = (w.mean_wait - w.lower_bound) / std::max(w.stderr_wait, 1e-300);
    tightest = std::min(tightest, margin);
    if (w.mean_wait < w.lower_bound - 3.0 * w.stderr_wait) ++violations;
  }
  return {violations == 0, std::to_string(violations) +
                               " of 50 configs below bound - 3 SE (smallest margin " +
                               fmt(tightest) + " SE)"};
}

// ---------------------------------------------------------------------- 7

Outcome tau_bounds(Digest& dg) {
  std::vector<double> p(20);
  for (int i = 0; i < 20; ++i) p[i] = 0.1 + 0.9 * i / 19.0;
  const TauStudy s = tau_study(p, 2000, 200, 0.01, 7);
  int tail_misses = 0;
  for (const auto& e : s.tails) {
    dg.add(e.empirical);
    if (std::abs(e.empirical - e.expected) > 3.0 * e.stderr_est) ++tail_misses;
  }
  for (const auto& t : s.traces) dg.add(t.tau_bar);
  const bool ok = tail_misses == 0 && s.fraction_within_bound >= 0.99 && s.mean_ratio <= 3.0;
  return {ok, "tail cells outside 3 SE: " + std::to_string(tail_misses) + " of " +
                  std::to_string(s.tails.size()) + "; traces within tau_max bound " +
                  fmt(100.0 * s.fraction_within_bound) + "% (>= 99%); mean tau_bar ratio " +
                  fmt(s.mean_ratio) + " (<= 3)"};
}

// ---------------------------------------------------------------------- 8

Outcome nonconvex_rate(Digest& dg) {
  const auto inst = make_nonconvex_instance(10, 10, 1.0, 0.5, 1.0, 1.0, 1);
  const auto avail = AvailabilityModel::full(10);
  const int K = 5;
  std::vector<std::pair<double, double>> points;
  for (int k = 0; k <= 12; ++k) {
    const Round T = std::llround(100.0 * std::pow(10.0, k / 6.0));
    const auto sched =
        LrSchedule::nonconvex_constant(10, K, T, inst.constants().L, 0.0, 1.0);
    double mean_min = 0.0;
    for (std::uint64_t s = 1; s <= 5; ++s) {
      const auto tr = run(algo(AlgorithmKind::kMifa), inst, avail, sched, T, K, s);
      dg.add(tr);
      mean_min += tr.rounds.back().min_grad_norm_sq / 5.0;
    }
    points.emplace_back(static_cast<double>(T), mean_min);
  }
  const double slope = fit_rate_slope(points, 1e2, 1e4);
  return {slope >= -0.75 && slope <= -0.3,
          "slope of min gradient norm^2 vs horizon " + fmt(slope) + " in [-0.75, -0.3]"};
}

// ---------------------------------------------------------------------- 9

Outcome formula_suite(Digest&) {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  const auto unit = LrSchedule::strongly_convex(1.0, 1.0, 1, 0.0);
  check(*unit.shift() == 100.0, "a=100");
  check(unit.eta(1) == 4.0 / 101.0, "eta_1=4/101");
  const auto s1600 = LrSchedule::strongly_convex(1.0, 4.0, 1, 5.0);
  check(*s1600.shift() == 1600.0, "a=1600");
  const auto sc = LrSchedule::strongly_convex(0.5, 2.0, 3, 4.0);
  const double a = std::max(100.0, 160.0) * std::pow(4.0, 1.5);
  check(*sc.shift() == a, "a general");
  for (Round t : {1, 2, 17, 1000})
    check(sc.eta(t) == 4.0 / (0.5 * 3 * (static_cast<double>(t) + a)), "eta_t general");
  check(sc.eta(1) <= 1.0 / (25.0 * 3 * 2.0), "step cap");
  const auto nc = LrSchedule::nonconvex_constant(10, 5, 1000, 2.0, 3.0, 1.0);
  check(nc.eta(1) == std::sqrt(10.0 / 40000.0), "nonconvex eta");
  check(std::abs(nc.eta(1) - 0.015811) < 1e-6, "nonconvex eta value");
  const auto pl = label_correlated_probabilities({{0, 1}, {9, 9}}, 0.1);
  check(pl[0] == 0.9 && pl[1] == 1.0, "label-correlated p");
  bool rejected = false;
  try {
    label_correlated_probabilities({{0, 1}}, 1.0);
  } catch (const InvalidArgument&) {
    rejected = true;
  }
  check(rejected, "p_min=1 degeneracy rejected");
  check(AveragedIterate::weight(2.0, 1) == 2.0 && AveragedIterate::weight(2.0, 2) == 6.0 &&
            AveragedIterate::weight(2.0, 3) == 12.0,
        "weights 2,6,12");
  for (double aa : {2.0, 100.0, 1600.0})
    for (Round T : {1, 10, 1000}) {
      double direct = 0.0;
      for (Round t = 1; t <= T; ++t) direct += AveragedIterate::weight(aa, t);
      check(std::abs(averaging_weight_total(aa, T) - direct) <= 1e-6 * direct, "W_T closed form");
    }
  AveragedIterate avg(2.0, 1);
  for (Round t = 1; t <= 3; ++t) avg.observe(t, ParamVector::Constant(1, static_cast<double>(t)));
  check(avg.total_weight() == 20.0 && avg.current()[0] == 2.5, "averaged iterate 2.5");

  std::string detail = failed.empty() ? "all formula checks exact" : "failed:";
  for (const auto& f : failed) detail += " " + f + ";";
  return {failed.empty(), detail};
}

// ---------------------------------------------------------------------- driver

struct Criterion {
  int id;
  std::string name;
  double limit_seconds;
  std::function<Outcome(Digest&)> fn;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "full-participation degeneracy", 5, full_participation_degeneracy},
      {2, "delta-variant equivalence", 30, delta_equivalence},
      {3, "strongly convex rate shape", 120, strongly_convex_rate},
      {4, "bias under correlated availability", 120, bias_demonstration},
      {5, "straggler resistance", 120, straggler_resistance},
      {6, "waiting-time bound", 60, waiting_time_bound},
      {7, "inactive-round tails and bounds", 60, tau_bounds},
      {8, "non-convex rate shape", 120, nonconvex_rate},
      {9, "formula suite", 1, formula_suite},
  };
  using clock = std::chrono::steady_clock;
  bool all = true;
  std::vector<std::uint64_t> digests;
  for (const auto& c : criteria) {
    Digest dg;
    const auto start = clock::now();
    Outcome o;
    try {
      o = c.fn(dg);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clock::now() - start).count();
    const bool in_time = secs < c.limit_seconds;
    const bool pass = o.pass && in_time;
    all = all && pass;
    digests.push_back(dg.value());
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail
              << " (" << fmt(secs, 3) << " s, limit " << fmt(c.limit_seconds, 3) << " s"
              << (in_time ? "" : ", OVER TIME LIMIT") << ")" << std::endl;
  }

  // Rerun every criterion and compare digests of all produced trajectories.
  std::string diffs;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Digest dg;
    try {
      criteria[k].fn(dg);
    } catch (const std::exception&) {
    }
    if (dg.value() != digests[k]) diffs += " " + std::to_string(criteria[k].id);
  }
  const bool det = diffs.empty();
  all = all && det;
  std::cout << (det ? "PASS" : "FAIL") << " [10] determinism: "
            << (det ? "reruns of criteria 1-9 reproduce every trajectory bit-exactly"
                    : "digest mismatch in criteria" + diffs)
            << std::endl;
  return all ? 0 : 1;
}
