#pragma once

// Drives one algorithm over T wall-rounds: draws A(t), advances the server,
// tracks inactive rounds and the averaged iterate, and emits per-round
// metrics. A Simulation can be checkpointed to text and resumed exactly.

#include "mifa/algorithms.hpp"

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>

namespace mifa {

enum class AlgorithmKind {
  kMifa,
  kMifaDelta,
  kBiasedFedAvg,
  kImportanceSampling,
  kSamplingFedAvg,
};

inline std::string to_string(AlgorithmKind k) {
  switch (k) {
    case AlgorithmKind::kMifa: return "mifa";
    case AlgorithmKind::kMifaDelta: return "mifa_delta";
    case AlgorithmKind::kBiasedFedAvg: return "biased_fedavg";
    case AlgorithmKind::kImportanceSampling: return "is_fedavg";
    case AlgorithmKind::kSamplingFedAvg: return "sampling_fedavg";
  }
  return "unknown";
}

inline std::optional<AlgorithmKind> parse_algorithm(const std::string& name) {
  for (auto k : {AlgorithmKind::kMifa, AlgorithmKind::kMifaDelta,
                 AlgorithmKind::kBiasedFedAvg, AlgorithmKind::kImportanceSampling,
                 AlgorithmKind::kSamplingFedAvg})
    if (to_string(k) == name) return k;
  return std::nullopt;
}

struct AlgorithmConfig {
  AlgorithmKind kind = AlgorithmKind::kMifa;
  IsNormalization normalization = IsNormalization::kActiveCount;
  std::size_t S = 1;
  std::vector<double> p;  // importance weights; defaults to the Bernoulli p
};

struct RoundMetrics {
  Round t = 0;
  Round t_prime = 0;
  std::optional<double> f_gap;
  std::optional<double> avg_gap;
  double grad_norm_sq = 0.0;
  double min_grad_norm_sq = 0.0;
  double tau_bar = 0.0;
  double tau_max = 0.0;
  std::uint64_t oracle_calls = 0;
  std::size_t devices_computed = 0;
  bool global_update = false;

  friend bool operator==(const RoundMetrics&, const RoundMetrics&) = default;
};

struct Trajectory {
  std::vector<RoundMetrics> rounds;
  bool diverged = false;
  std::string divergence_message;
  std::optional<double> final_avg_gap;
  ParamVector final_w;
  std::vector<Round> waits;  // completed device-sampling windows
};

class Simulation {
 public:
  using ServerState =
      std::variant<MifaServerState, DeltaServerState, FedAvgServerState,
                   SamplingServerState>;

  /// The instance, model and schedule must outlive the simulation.
  Simulation(AlgorithmConfig config, const ProblemInstance& instance,
             const AvailabilityModel& availability, const LrSchedule& schedule,
             int K, std::uint64_t seed, std::optional<ParamVector> w1 = {})
      : config_(std::move(config)),
        instance_(&instance),
        availability_(&availability),
        schedule_(&schedule),
        K_(K),
        seed_(seed),
        server_(make_server(config_, instance, seed,
                            w1 ? *w1 : ParamVector::Zero(
                                           static_cast<Eigen::Index>(instance.dim())))),
        streams_(make_device_streams(instance.num_devices(), seed)),
        participation_(availability, seed),
        tau_(instance.num_devices()) {
    require(K >= 1, "K must be >= 1");
    require(availability.num_devices() == instance.num_devices(),
            "availability model and instance disagree on N");
    require(static_cast<std::size_t>(model().size()) == instance.dim(),
            "initial model has wrong dimension");
    if (config_.kind == AlgorithmKind::kImportanceSampling) {
      if (config_.p.empty()) {
        const auto* p = availability.bernoulli_probabilities();
        require(p != nullptr,
                "is_fedavg needs participation probabilities (Bernoulli model "
                "or explicit p)");
        config_.p = *p;
      }
      require(config_.p.size() == instance.num_devices(),
              "is_fedavg needs one probability per device");
    }
    if (config_.kind == AlgorithmKind::kSamplingFedAvg)
      require(config_.S >= 1 && config_.S <= instance.num_devices(),
              "S must lie in [1, N]");
    if (schedule.is_strongly_convex() && instance.is_convex_family() &&
        instance.optimum()) {
      averaged_.emplace(*schedule.shift(), instance.dim());
      averaged_->observe(1, model());
    }
  }

  Round round() const { return participation_.round(); }
  const AlgorithmConfig& config() const { return config_; }
  const ServerState& server() const { return server_; }
  const DeviceStreams& device_streams() const { return streams_; }
  const TauTracker& tau_tracker() const { return tau_; }
  const std::optional<AveragedIterate>& averaged() const { return averaged_; }
  const ActiveSet& last_active() const { return last_active_; }
  const std::vector<Round>& waits() const { return waits_; }

  const ParamVector& model() const {
    return std::visit([](const auto& s) -> const ParamVector& { return s.w; },
                      server_);
  }

  Round global_updates() const {
    if (const auto* s = std::get_if<SamplingServerState>(&server_))
      return s->t_prime;
    return global_updates_;
  }

  /// Executes the next wall-round. Throws DivergenceError on a non-finite
  /// iterate and EndOfTrace when a replayed trace runs out.
  RoundMetrics step() {
    ActiveSet active = participation_.next();
    tau_.update(active);
    const double eta = schedule_->eta(active.round);
    const RoundOutcome outcome = std::visit(
        [&](auto& s) -> RoundOutcome {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, MifaServerState>) {
            return mifa_round(s, active, eta, *instance_, K_, streams_);
          } else if constexpr (std::is_same_v<S, DeltaServerState>) {
            return mifa_delta_round(s, active, eta, *instance_, K_, streams_);
          } else if constexpr (std::is_same_v<S, FedAvgServerState>) {
            if (config_.kind == AlgorithmKind::kImportanceSampling)
              return is_fedavg_round(s, active, eta, config_.p,
                                     config_.normalization, *instance_, K_,
                                     streams_);
            return biased_fedavg_round(s, active, eta, *instance_, K_, streams_);
          } else {
            return sampling_fedavg_round(s, active, *schedule_, config_.S,
                                         *instance_, K_, streams_);
          }
        },
        server_);
    if (outcome.global_update) ++global_updates_;
    if (outcome.completed_wait) waits_.push_back(*outcome.completed_wait);
    oracle_calls_ += static_cast<std::uint64_t>(K_) * outcome.devices_computed;
    last_active_ = std::move(active);

    const ParamVector& w = model();
    RoundMetrics m;
    m.t = round();
    m.t_prime = global_updates();
    m.grad_norm_sq = instance_->global_grad(w).squaredNorm();
    min_grad_norm_sq_ = std::min(min_grad_norm_sq_, m.grad_norm_sq);
    m.min_grad_norm_sq = min_grad_norm_sq_;
    m.f_gap = instance_->is_convex_family() ? instance_->suboptimality(w)
                                            : std::optional<double>(m.grad_norm_sq);
    if (averaged_) {
      averaged_->observe(m.t + 1, w);
      m.avg_gap = instance_->suboptimality(averaged_->current());
    }
    const TauStats ts = tau_.stats_through_current();
    m.tau_bar = ts.tau_bar;
    m.tau_max = static_cast<double>(ts.tau_max);
    m.oracle_calls = oracle_calls_;
    m.devices_computed = outcome.devices_computed;
    m.global_update = outcome.global_update;
    return m;
  }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  static ServerState make_server(const AlgorithmConfig& config,
                                 const ProblemInstance& instance,
                                 std::uint64_t seed, ParamVector w1) {
    const std::size_t n = instance.num_devices();
    switch (config.kind) {
      case AlgorithmKind::kMifa: return MifaServerState(std::move(w1), n);
      case AlgorithmKind::kMifaDelta: return DeltaServerState(std::move(w1), n);
      case AlgorithmKind::kBiasedFedAvg:
      case AlgorithmKind::kImportanceSampling:
        return FedAvgServerState{std::move(w1), 0};
      case AlgorithmKind::kSamplingFedAvg:
        return SamplingServerState(std::move(w1), seed, n);
    }
    throw InvalidArgument("unknown algorithm");
  }

  AlgorithmConfig config_;
  const ProblemInstance* instance_;
  const AvailabilityModel* availability_;
  const LrSchedule* schedule_;
  int K_;
  std::uint64_t seed_;
  ServerState server_;
  DeviceStreams streams_;
  ParticipationStream participation_;
  TauTracker tau_;
  std::optional<AveragedIterate> averaged_;
  ActiveSet last_active_;
  std::vector<Round> waits_;
  std::uint64_t oracle_calls_ = 0;
  Round global_updates_ = 0;
  double min_grad_norm_sq_ = std::numeric_limits<double>::infinity();
};

/// Runs T wall-rounds. Divergence ends the run early with the partial
/// trajectory flagged.
inline Trajectory run(const AlgorithmConfig& config,
                      const ProblemInstance& instance,
                      const AvailabilityModel& availability,
                      const LrSchedule& schedule, Round T, int K,
                      std::uint64_t seed, std::optional<ParamVector> w1 = {}) {
  require(T >= 2, "T must be >= 2");
  Simulation sim(config, instance, availability, schedule, K, seed,
                 std::move(w1));
  Trajectory out;
  out.rounds.reserve(static_cast<std::size_t>(T));
  try {
    for (Round t = 1; t <= T; ++t) out.rounds.push_back(sim.step());
  } catch (const DivergenceError& e) {
    out.diverged = true;
    out.divergence_message = e.what();
  }
  out.final_w = sim.model();
  if (!out.rounds.empty()) out.final_avg_gap = out.rounds.back().avg_gap;
  out.waits = sim.waits();
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: whitespace-separated tokens, doubles in hexfloat so the
// round trip is lossless, generator states in the standard textual form.
// ---------------------------------------------------------------------------

namespace detail {

class TokenWriter {
 public:
  explicit TokenWriter(std::ostream& out) : out_(out) {}

  void key(const char* k) { out_ << '\n' << k; }
  void integer(long long v) { out_ << ' ' << v; }
  void real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    out_ << ' ' << buf;
  }
  void vector(const ParamVector& v) {
    integer(v.size());
    for (Eigen::Index j = 0; j < v.size(); ++j) real(v[j]);
  }
  void rng(const Rng& r) { out_ << ' ' << r; }

 private:
  std::ostream& out_;
};

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  void expect(const char* k) {
    std::string tok;
    if (!(in_ >> tok) || tok != k)
      throw InvalidArgument(std::string("checkpoint: expected '") + k +
                            "', got '" + tok + "'");
  }
  long long integer() {
    long long v = 0;
    if (!(in_ >> v)) throw InvalidArgument("checkpoint: expected integer");
    return v;
  }
  double real() {
    std::string tok;
    if (!(in_ >> tok)) throw InvalidArgument("checkpoint: expected real");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size())
      throw InvalidArgument("checkpoint: bad real '" + tok + "'");
    return v;
  }
  ParamVector vector() {
    const auto n = integer();
    if (n < 0) throw InvalidArgument("checkpoint: negative length");
    ParamVector v(n);
    for (Eigen::Index j = 0; j < n; ++j) v[j] = real();
    return v;
  }
  void rng(Rng& r) {
    if (!(in_ >> r)) throw InvalidArgument("checkpoint: bad generator state");
  }

 private:
  std::istream& in_;
};

}  // namespace detail

inline void Simulation::save(std::ostream& out) const {
  detail::TokenWriter w(out);
  out << "mifa-checkpoint 1";
  w.key("algorithm");
  out << ' ' << to_string(config_.kind);
  // availability draws are keyed on the run seed
  w.key("seed");
  out << ' ' << seed_;
  w.key("round");
  w.integer(participation_.round());
  w.key("run_lengths");
  w.integer(static_cast<long long>(participation_.run_lengths().size()));
  for (Round r : participation_.run_lengths()) w.integer(r);

  const TauTracker::State ts = tau_.state();
  w.key("tau");
  w.integer(ts.T);
  w.integer(static_cast<long long>(ts.committed_sum));
  w.integer(static_cast<long long>(ts.tau.size()));
  for (std::size_t i = 0; i < ts.tau.size(); ++i) {
    w.integer(ts.tau[i]);
    w.integer(ts.committed_max[i]);
    w.integer(ts.nu[i]);
  }

  w.key("streams");
  w.integer(static_cast<long long>(streams_.size()));
  for (const Rng& r : streams_) w.rng(r);

  w.key("counters");
  w.integer(static_cast<long long>(oracle_calls_));
  w.integer(global_updates_);
  w.real(min_grad_norm_sq_);
  w.integer(static_cast<long long>(waits_.size()));
  for (Round r : waits_) w.integer(r);

  w.key("averaged");
  w.integer(averaged_ ? 1 : 0);
  if (averaged_) {
    w.vector(averaged_->weighted_sum());
    w.real(averaged_->total_weight());
    w.integer(averaged_->rounds_seen());
  }

  w.key("server");
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        w.integer(s.t);
        w.vector(s.w);
        if constexpr (std::is_same_v<S, MifaServerState>) {
          w.integer(static_cast<long long>(s.G.size()));
          for (const auto& g : s.G) w.vector(g);
        } else if constexpr (std::is_same_v<S, DeltaServerState>) {
          w.integer(static_cast<long long>(s.update_sum.dim()));
          for (const ExactSum& c : s.update_sum.coords()) {
            w.integer(static_cast<long long>(c.partials().size()));
            for (double p : c.partials()) w.real(p);
          }
          w.integer(static_cast<long long>(s.device_memory.size()));
          for (const auto& g : s.device_memory) w.vector(g);
        } else if constexpr (std::is_same_v<S, SamplingServerState>) {
          w.integer(s.t_prime);
          w.integer(s.window_start);
          w.integer(static_cast<long long>(s.pending.size()));
          for (DeviceId i : s.pending) w.integer(static_cast<long long>(i));
          w.integer(static_cast<long long>(s.collected.size()));
          for (const LocalUpdate& u : s.collected) {
            w.integer(static_cast<long long>(u.device));
            w.integer(u.produced_at);
            w.vector(u.value);
          }
          w.rng(s.sampler);
        }
      },
      server_);
  w.key("end");
  out << '\n';
}

inline void Simulation::load(std::istream& in) {
  detail::TokenReader r(in);
  r.expect("mifa-checkpoint");
  if (r.integer() != 1) throw InvalidArgument("checkpoint: unsupported version");
  r.expect("algorithm");
  std::string name;
  in >> name;
  if (name != to_string(config_.kind))
    throw InvalidArgument("checkpoint: algorithm '" + name +
                          "' does not match this simulation");
  r.expect("seed");
  std::uint64_t seed = 0;
  if (!(in >> seed)) throw InvalidArgument("checkpoint: bad seed");
  r.expect("round");
  const Round t = r.integer();
  r.expect("run_lengths");
  std::vector<Round> runs(static_cast<std::size_t>(r.integer()));
  for (Round& v : runs) v = r.integer();
  seed_ = seed;
  participation_ = ParticipationStream(*availability_, seed_);
  participation_.restore(t, std::move(runs));

  r.expect("tau");
  TauTracker::State ts;
  ts.T = r.integer();
  ts.committed_sum = static_cast<std::uint64_t>(r.integer());
  const auto n = static_cast<std::size_t>(r.integer());
  ts.tau.resize(n);
  ts.committed_max.resize(n);
  ts.nu.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ts.tau[i] = r.integer();
    ts.committed_max[i] = r.integer();
    ts.nu[i] = r.integer();
  }
  tau_.restore(std::move(ts));

  r.expect("streams");
  if (static_cast<std::size_t>(r.integer()) != streams_.size())
    throw InvalidArgument("checkpoint: stream count mismatch");
  for (Rng& g : streams_) r.rng(g);

  r.expect("counters");
  oracle_calls_ = static_cast<std::uint64_t>(r.integer());
  global_updates_ = r.integer();
  min_grad_norm_sq_ = r.real();
  waits_.assign(static_cast<std::size_t>(r.integer()), 0);
  for (Round& v : waits_) v = r.integer();

  r.expect("averaged");
  if (r.integer() != (averaged_ ? 1 : 0))
    throw InvalidArgument("checkpoint: averaged-iterate presence mismatch");
  if (averaged_) {
    ParamVector sum = r.vector();
    const double W = r.real();
    const Round seen = r.integer();
    averaged_->restore(std::move(sum), W, seen);
  }

  r.expect("server");
  std::visit(
      [&](auto& s) {
        using S = std::decay_t<decltype(s)>;
        s.t = r.integer();
        s.w = r.vector();
        if constexpr (std::is_same_v<S, MifaServerState>) {
          s.G.assign(static_cast<std::size_t>(r.integer()), ParamVector());
          for (auto& g : s.G) g = r.vector();
        } else if constexpr (std::is_same_v<S, DeltaServerState>) {
          s.update_sum = ExactVectorSum(static_cast<std::size_t>(r.integer()));
          for (ExactSum& c : s.update_sum.coords()) {
            std::vector<double> parts(static_cast<std::size_t>(r.integer()));
            for (double& p : parts) p = r.real();
            c.assign_partials(std::move(parts));
          }
          s.device_memory.assign(static_cast<std::size_t>(r.integer()),
                                 ParamVector());
          for (auto& g : s.device_memory) g = r.vector();
        } else if constexpr (std::is_same_v<S, SamplingServerState>) {
          s.t_prime = r.integer();
          s.window_start = r.integer();
          s.pending.assign(static_cast<std::size_t>(r.integer()), 0);
          for (DeviceId& i : s.pending) i = static_cast<DeviceId>(r.integer());
          s.collected.assign(static_cast<std::size_t>(r.integer()), {});
          for (LocalUpdate& u : s.collected) {
            u.device = static_cast<DeviceId>(r.integer());
            u.produced_at = r.integer();
            u.value = r.vector();
          }
          r.rng(s.sampler);
        }
      },
      server_);
  r.expect("end");
}

}  // namespace mifa
