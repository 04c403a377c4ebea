#pragma once

// Monte Carlo studies and rate estimation used by the CLI and the acceptance
// suite.

#include "mifa/availability.hpp"
#include "mifa/algorithms.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace mifa::harness {

/// p_i = p_min * min(j, k) / 9 + (1 - p_min) for a device holding labels j, k.
inline std::vector<double> label_correlated_probabilities(
    const std::vector<std::pair<int, int>>& labels_per_device, double p_min) {
  require(p_min > 0.0 && p_min <= 1.0, "p_min must lie in (0, 1]");
  std::vector<double> p;
  p.reserve(labels_per_device.size());
  for (auto [j, k] : labels_per_device) {
    require(j >= 0 && j <= 9 && k >= 0 && k <= 9, "labels must lie in 0..9");
    const double pi = p_min * std::min(j, k) / 9.0 + (1.0 - p_min);
    require(pi > 0.0, "label pair yields participation probability 0");
    p.push_back(pi);
  }
  return p;
}

/// Least-squares slope of log(value) against log(t) over t in [t_lo, t_hi].
inline double fit_rate_slope(const std::vector<std::pair<double, double>>& stream,
                             double t_lo, double t_hi) {
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t n = 0;
  for (auto [t, v] : stream) {
    if (t < t_lo || t > t_hi) continue;
    require(t > 0.0 && v > 0.0, "rate fit needs positive t and values in window");
    const double x = std::log(t);
    const double y = std::log(v);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  require(n >= 10, "rate fit needs at least 10 points in the window");
  const double dn = static_cast<double>(n);
  const double denom = dn * sxx - sx * sx;
  require(denom > 0.0, "rate fit window has no spread in t");
  return (dn * sxy - sx * sy) / denom;
}

struct WaitStudy {
  double mean_wait = 0.0;
  double stderr_wait = 0.0;
  double lower_bound = 0.0;  // (S/N) / p_min
};

/// Rounds needed for S devices, drawn uniformly without replacement, to all
/// have been active at least once under Bernoulli(p) participation.
inline WaitStudy waiting_time_study(std::size_t N, std::size_t S,
                                    const std::vector<double>& p,
                                    std::size_t trials, std::uint64_t seed) {
  require(N >= 1 && p.size() == N, "need one probability per device");
  require(S >= 1 && S <= N, "S must lie in [1, N]");
  require(trials >= 1, "trials must be >= 1");
  double p_min = 1.0;
  for (double pi : p) {
    require(pi > 0.0 && pi <= 1.0, "p must lie in (0, 1]");
    p_min = std::min(p_min, pi);
  }
  Rng rng = make_stream(seed, 0, StreamPurpose::kStudy);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::vector<DeviceId> pending = sample_without_replacement(N, S, rng);
    Round rounds = 0;
    while (!pending.empty()) {
      ++rounds;
      std::vector<DeviceId> left;
      for (DeviceId i : pending)
        if (!(uniform01(rng) < p[i])) left.push_back(i);
      pending = std::move(left);
    }
    const double r = static_cast<double>(rounds);
    sum += r;
    sum_sq += r * r;
  }
  const double n = static_cast<double>(trials);
  WaitStudy out;
  out.mean_wait = sum / n;
  const double var = trials > 1 ? (sum_sq - n * out.mean_wait * out.mean_wait) / (n - 1.0) : 0.0;
  out.stderr_wait = std::sqrt(std::max(var, 0.0) / n);
  out.lower_bound = (static_cast<double>(S) / static_cast<double>(N)) / p_min;
  return out;
}

struct TauTraceResult {
  std::int64_t tau_max = 0;
  double tau_bar = 0.0;
};

struct TailEstimate {
  DeviceId device = 0;
  std::int64_t k = 0;
  double empirical = 0.0;
  double expected = 0.0;
  double stderr_est = 0.0;
};

struct TauStudy {
  std::vector<TauTraceResult> traces;
  BernoulliBounds bounds;
  double fraction_within_bound = 0.0;
  double mean_ratio = 0.0;  // mean of tau_bar / ((1/N) sum 1/p_i)
  std::vector<TailEstimate> tails;  // P(tau(T, i) >= k) across traces
};

/// Simulates `traces` independent Bernoulli traces of T rounds and compares
/// the observed inactive-round statistics with the closed-form bounds.
inline TauStudy tau_study(const std::vector<double>& p, Round T,
                          std::size_t traces, double delta, std::uint64_t seed,
                          const std::vector<std::int64_t>& tail_ks = {1, 2, 3, 5}) {
  require(T >= 2, "T must be >= 2");
  require(traces >= 1, "need at least one trace");
  const AvailabilityModel model = AvailabilityModel::bernoulli(p);
  TauStudy out;
  out.bounds = bernoulli_bounds(p, T, delta);
  const std::size_t N = p.size();
  std::vector<std::vector<std::size_t>> hits(N,
                                             std::vector<std::size_t>(tail_ks.size(), 0));
  std::size_t within = 0;
  double ratio_sum = 0.0;
  for (std::size_t k = 0; k < traces; ++k) {
    ParticipationStream stream(model, derive_seed(seed, k, StreamPurpose::kStudy));
    TauTracker tracker(N);
    for (Round t = 1; t <= T; ++t) tracker.update(stream.next());
    const TauStats s = tracker.stats();
    out.traces.push_back({s.tau_max, s.tau_bar});
    if (static_cast<double>(s.tau_max) <= out.bounds.tau_max_bound) ++within;
    ratio_sum += s.tau_bar / out.bounds.tau_bar_bound_shape;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t q = 0; q < tail_ks.size(); ++q)
        if (tracker.tau()[i] >= tail_ks[q]) ++hits[i][q];
  }
  const double n = static_cast<double>(traces);
  out.fraction_within_bound = static_cast<double>(within) / n;
  out.mean_ratio = ratio_sum / n;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t q = 0; q < tail_ks.size(); ++q) {
      TailEstimate e;
      e.device = i;
      e.k = tail_ks[q];
      e.empirical = static_cast<double>(hits[i][q]) / n;
      e.expected = bernoulli_tau_tail(p[i], tail_ks[q], T);
      e.stderr_est = std::sqrt(e.expected * (1.0 - e.expected) / n);
      out.tails.push_back(e);
    }
  return out;
}

}  // namespace mifa::harness
