#pragma once

// Server-side aggregation rules under partial participation:
//
//   mifa_round             keeps the latest update of every device and steps
//                          with the average of the whole array
//   mifa_delta_round       same trajectory, but the server holds only the
//                          running average; devices send update differences
//   biased_fedavg_round    averages fresh updates of active devices only
//   is_fedavg_round        reweights fresh updates by 1/p_i
//   sampling_fedavg_round  samples S devices and waits until all respond
//
// All aggregates are formed with exact summation, so any two rules that
// average the same multiset of updates produce bit-identical models.

#include "mifa/availability.hpp"
#include "mifa/problems.hpp"
#include "mifa/schedules.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

namespace mifa {

using DeviceStreams = std::vector<Rng>;

/// One gradient-noise stream per device, keyed by (seed, device).
inline DeviceStreams make_device_streams(std::size_t n, std::uint64_t seed) {
  DeviceStreams streams;
  streams.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    streams.push_back(make_stream(seed, i, StreamPurpose::kGradientNoise));
  return streams;
}

struct LocalUpdate {
  DeviceId device = 0;
  ParamVector value;  // sum of the K sampled gradients = (w - w_K) / eta
  Round produced_at = 0;
};

/// K local SGD steps from w. The returned value is accumulated as the running
/// sum of sampled gradients rather than recovered from (w - w_K) / eta.
inline LocalUpdate local_update(const ProblemInstance& instance, DeviceId i,
                                const ParamVector& w, double eta, int K,
                                Rng& rng, Round produced_at = 0) {
  require(eta > 0.0 && std::isfinite(eta), "eta must be > 0");
  require(K >= 1, "K must be >= 1");
  LocalUpdate out{i, ParamVector::Zero(w.size()), produced_at};
  ParamVector iterate = w;
  for (int k = 0; k < K; ++k) {
    const ParamVector g = instance.stoch_grad(i, iterate, rng);
    out.value += g;
    iterate -= eta * g;
    if (!all_finite(iterate))
      throw DivergenceError("local iterate diverged on device " +
                            std::to_string(i) + " at round " +
                            std::to_string(produced_at));
  }
  return out;
}

struct RoundOutcome {
  std::size_t devices_computed = 0;
  bool global_update = false;
  std::optional<Round> completed_wait;  // device sampling: rounds waited
};

namespace detail {

/// w <- w - eta * (sum / count), evaluated coordinate by coordinate in one
/// fixed expression shared by every aggregation rule.
inline void apply_step(ParamVector& w, double eta, const ParamVector& sum,
                       double count) {
  for (Eigen::Index j = 0; j < w.size(); ++j) w[j] -= eta * (sum[j] / count);
  if (!all_finite(w)) throw DivergenceError("server model diverged");
}

inline void check_round(Round state_t, const ActiveSet& active,
                        std::size_t n) {
  require(active.round == state_t + 1,
          "round mismatch: server is at " + std::to_string(state_t) +
              ", active set is for round " + std::to_string(active.round));
  if (active.round == 1)
    require(active.size() == n, "every device must be active at round 1");
  for (DeviceId i : active.members) require(i < n, "device id out of range");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MIFA with the full update array on the server
// ---------------------------------------------------------------------------

struct MifaServerState {
  ParamVector w;
  std::vector<ParamVector> G;  // latest update per device, zero-initialized
  Round t = 0;

  MifaServerState(ParamVector w1, std::size_t n)
      : w(std::move(w1)), G(n, ParamVector::Zero(w.size())) {}
};

inline RoundOutcome mifa_round(MifaServerState& state, const ActiveSet& active,
                               double eta_t, const ProblemInstance& instance,
                               int K, DeviceStreams& streams) {
  const std::size_t n = state.G.size();
  detail::check_round(state.t, active, n);
  for (DeviceId i : active.members)
    state.G[i] =
        local_update(instance, i, state.w, eta_t, K, streams[i], active.round)
            .value;
  ExactVectorSum sum(static_cast<std::size_t>(state.w.size()));
  for (const ParamVector& g : state.G) sum.add(g);
  detail::apply_step(state.w, eta_t, sum.value(), static_cast<double>(n));
  state.t = active.round;
  return {active.size(), true, std::nullopt};
}

// ---------------------------------------------------------------------------
// MIFA with device-side memory
// ---------------------------------------------------------------------------

/// Exact difference new - old as an unevaluated pair hi + lo.
struct UpdateDifference {
  ParamVector hi;
  ParamVector lo;
};

inline UpdateDifference difference(const ParamVector& fresh,
                                   const ParamVector& stored) {
  UpdateDifference d{ParamVector(fresh.size()), ParamVector(fresh.size())};
  for (Eigen::Index j = 0; j < fresh.size(); ++j) {
    const double a = fresh[j];
    const double b = -stored[j];
    const double s = a + b;
    const double bb = s - a;
    d.hi[j] = s;
    d.lo[j] = (a - (s - bb)) + (b - bb);
  }
  return d;
}

struct DeltaServerState {
  ParamVector w;
  ExactVectorSum update_sum;               // N * Gbar, the only server vector
  std::vector<ParamVector> device_memory;  // held by the devices themselves
  Round t = 0;

  DeltaServerState(ParamVector w1, std::size_t n)
      : w(std::move(w1)),
        update_sum(static_cast<std::size_t>(w.size())),
        device_memory(n, ParamVector::Zero(w.size())) {}

  ParamVector gbar() const {
    return update_sum.value() / static_cast<double>(device_memory.size());
  }
};

inline RoundOutcome mifa_delta_round(DeltaServerState& state,
                                     const ActiveSet& active, double eta_t,
                                     const ProblemInstance& instance, int K,
                                     DeviceStreams& streams) {
  const std::size_t n = state.device_memory.size();
  detail::check_round(state.t, active, n);
  for (DeviceId i : active.members) {
    ParamVector fresh =
        local_update(instance, i, state.w, eta_t, K, streams[i], active.round)
            .value;
    const UpdateDifference msg = difference(fresh, state.device_memory[i]);
    state.device_memory[i] = std::move(fresh);
    state.update_sum.add(msg.hi);
    state.update_sum.add(msg.lo);
  }
  detail::apply_step(state.w, eta_t, state.update_sum.value(),
                     static_cast<double>(n));
  state.t = active.round;
  return {active.size(), true, std::nullopt};
}

// ---------------------------------------------------------------------------
// FedAvg baselines
// ---------------------------------------------------------------------------

struct FedAvgServerState {
  ParamVector w;
  Round t = 0;
};

/// Average of fresh updates from the active devices; an empty round leaves w
/// unchanged.
inline RoundOutcome biased_fedavg_round(FedAvgServerState& state,
                                        const ActiveSet& active, double eta_t,
                                        const ProblemInstance& instance, int K,
                                        DeviceStreams& streams) {
  detail::check_round(state.t, active, instance.num_devices());
  state.t = active.round;
  if (active.empty()) return {};
  ExactVectorSum sum(static_cast<std::size_t>(state.w.size()));
  for (DeviceId i : active.members)
    sum.add(local_update(instance, i, state.w, eta_t, K, streams[i],
                         active.round)
                .value);
  detail::apply_step(state.w, eta_t, sum.value(),
                     static_cast<double>(active.size()));
  return {active.size(), true, std::nullopt};
}

enum class IsNormalization { kActiveCount, kTotalCount };

/// Fresh updates weighted by 1/p_i, divided by |A(t)| (kActiveCount, as in
/// the original algorithm box) or by N (kTotalCount, unbiased).
inline RoundOutcome is_fedavg_round(FedAvgServerState& state,
                                    const ActiveSet& active, double eta_t,
                                    const std::vector<double>& p,
                                    IsNormalization normalization,
                                    const ProblemInstance& instance, int K,
                                    DeviceStreams& streams) {
  const std::size_t n = instance.num_devices();
  require(p.size() == n, "importance sampling needs one probability per device");
  for (double pi : p) require(pi > 0.0, "participation probabilities must be > 0");
  detail::check_round(state.t, active, n);
  state.t = active.round;
  if (active.empty()) return {};
  ExactVectorSum sum(static_cast<std::size_t>(state.w.size()));
  for (DeviceId i : active.members) {
    const ParamVector g =
        local_update(instance, i, state.w, eta_t, K, streams[i], active.round)
            .value;
    sum.add(p[i] == 1.0 ? g : ParamVector(g / p[i]));
  }
  const double count = normalization == IsNormalization::kActiveCount
                           ? static_cast<double>(active.size())
                           : static_cast<double>(n);
  detail::apply_step(state.w, eta_t, sum.value(), count);
  return {active.size(), true, std::nullopt};
}

// ---------------------------------------------------------------------------
// FedAvg with device sampling
// ---------------------------------------------------------------------------

struct SamplingServerState {
  ParamVector w;                    // frozen while a window is open
  std::vector<DeviceId> pending;    // selected, not yet responded (sorted)
  std::vector<LocalUpdate> collected;
  Round t = 0;                      // wall-rounds consumed
  Round t_prime = 0;                // global updates applied
  Round window_start = 0;           // wall-round at which the window opened
  Rng sampler;

  SamplingServerState(ParamVector w1, std::uint64_t seed, std::size_t n)
      : w(std::move(w1)),
        sampler(make_stream(seed, n, StreamPurpose::kDeviceSampling)) {}

  bool window_open() const { return !pending.empty() || !collected.empty(); }
};

/// S distinct devices drawn uniformly (partial Fisher-Yates), sorted.
inline std::vector<DeviceId> sample_without_replacement(std::size_t n,
                                                        std::size_t S,
                                                        Rng& rng) {
  std::vector<DeviceId> ids(n);
  std::iota(ids.begin(), ids.end(), DeviceId{0});
  for (std::size_t k = 0; k < S; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng() % (n - k));
    std::swap(ids[k], ids[j]);
  }
  ids.resize(S);
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// One wall-round of device-sampling FedAvg. A pending device computes its
/// update on the frozen model at its first active round in the window, with
/// that wall-round's step size. When every selected device has responded the
/// server steps with eta_{t'} and the global-update counter advances.
inline RoundOutcome sampling_fedavg_round(SamplingServerState& state,
                                          const ActiveSet& active,
                                          const LrSchedule& schedule,
                                          std::size_t S,
                                          const ProblemInstance& instance,
                                          int K, DeviceStreams& streams) {
  const std::size_t n = instance.num_devices();
  require(S >= 1 && S <= n, "S must lie in [1, N]");
  detail::check_round(state.t, active, n);
  state.t = active.round;

  if (!state.window_open()) {
    state.pending = sample_without_replacement(n, S, state.sampler);
    state.window_start = active.round;
  }

  RoundOutcome outcome;
  const double eta_wall = schedule.eta(active.round);
  std::vector<DeviceId> still_pending;
  for (DeviceId i : state.pending) {
    if (active.contains(i)) {
      state.collected.push_back(local_update(instance, i, state.w, eta_wall, K,
                                             streams[i], active.round));
      ++outcome.devices_computed;
    } else {
      still_pending.push_back(i);
    }
  }
  state.pending = std::move(still_pending);

  if (state.pending.empty()) {
    ExactVectorSum sum(static_cast<std::size_t>(state.w.size()));
    for (const LocalUpdate& u : state.collected) sum.add(u.value);
    detail::apply_step(state.w, schedule.eta(state.t_prime + 1), sum.value(),
                       static_cast<double>(state.collected.size()));
    state.collected.clear();
    ++state.t_prime;
    outcome.global_update = true;
    outcome.completed_wait = active.round - state.window_start + 1;
  }
  return outcome;
}

}  // namespace mifa
