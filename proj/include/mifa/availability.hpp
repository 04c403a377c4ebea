#pragma once

// Device participation: generators of active sets A(t), the inactive-round
// counters tau(t, i) with their aggregate statistics, and closed-form tail and
// high-probability bounds for i.i.d. Bernoulli participation.

#include "mifa/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace mifa {

struct ActiveSet {
  Round round = 0;
  std::vector<DeviceId> members;  // sorted, unique

  bool contains(DeviceId i) const {
    return std::binary_search(members.begin(), members.end(), i);
  }
  std::size_t size() const { return members.size(); }
  bool empty() const { return members.empty(); }

  friend bool operator==(const ActiveSet&, const ActiveSet&) = default;
};

inline ActiveSet all_devices(Round t, std::size_t n) {
  ActiveSet s{t, {}};
  s.members.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.members[i] = i;
  return s;
}

/// A finite sequence of active sets starting at round 1.
struct Trace {
  std::size_t num_devices = 0;
  std::vector<ActiveSet> rounds;
};

namespace participation {

struct Full {};

struct IidBernoulli {
  std::vector<double> p;
};

struct Periodic {
  std::vector<Round> period;
  std::vector<Round> phase;
};

/// Deterministic maximal-delay schedule: every device stays inactive for as
/// long as tau(t, i) <= t0 + t/b allows, then is active for one round.
struct AdversarialLinear {
  double t0 = 0.0;
  double b = 2.0;
};

struct TraceReplay {
  Trace trace;
};

}  // namespace participation

class AvailabilityModel {
 public:
  using Variant =
      std::variant<participation::Full, participation::IidBernoulli,
                   participation::Periodic, participation::AdversarialLinear,
                   participation::TraceReplay>;

  static AvailabilityModel full(std::size_t n) {
    require(n >= 1, "availability model needs at least one device");
    return AvailabilityModel(n, participation::Full{});
  }

  static AvailabilityModel bernoulli(std::vector<double> p) {
    require(!p.empty(), "availability model needs at least one device");
    for (double pi : p)
      require(std::isfinite(pi) && pi > 0.0 && pi <= 1.0,
              "participation probabilities must lie in (0, 1]");
    const std::size_t n = p.size();
    return AvailabilityModel(n, participation::IidBernoulli{std::move(p)});
  }

  static AvailabilityModel periodic(std::vector<Round> period,
                                    std::vector<Round> phase) {
    require(!period.empty() && period.size() == phase.size(),
            "periodic model needs one period and phase per device");
    for (Round p : period) require(p >= 1, "periods must be >= 1");
    const std::size_t n = period.size();
    return AvailabilityModel(
        n, participation::Periodic{std::move(period), std::move(phase)});
  }

  static AvailabilityModel adversarial(std::size_t n, double t0, double b) {
    require(n >= 1, "availability model needs at least one device");
    require(std::isfinite(t0) && t0 >= 0.0, "t0 must be >= 0");
    require(std::isfinite(b) && b > 1.0, "b must be > 1");
    return AvailabilityModel(n, participation::AdversarialLinear{t0, b});
  }

  static AvailabilityModel replay(Trace trace) {
    require(trace.num_devices >= 1, "trace needs at least one device");
    require(!trace.rounds.empty() &&
                trace.rounds.front() == all_devices(1, trace.num_devices),
            "trace must start at round 1 with every device active");
    for (std::size_t k = 0; k < trace.rounds.size(); ++k)
      require(trace.rounds[k].round == static_cast<Round>(k + 1),
              "trace rounds must be consecutive from 1");
    const std::size_t n = trace.num_devices;
    return AvailabilityModel(n, participation::TraceReplay{std::move(trace)});
  }

  std::size_t num_devices() const { return n_; }
  const Variant& variant() const { return variant_; }

  /// Participation probabilities when the model is Bernoulli.
  const std::vector<double>* bernoulli_probabilities() const {
    if (const auto* b = std::get_if<participation::IidBernoulli>(&variant_))
      return &b->p;
    return nullptr;
  }

 private:
  AvailabilityModel(std::size_t n, Variant v) : n_(n), variant_(std::move(v)) {}

  std::size_t n_;
  Variant variant_;
};

/// Produces A(1), A(2), ... for one run. Bernoulli draws are counter-based
/// per device, so device i's draws depend only on (seed, i, t): changing
/// another device's probability leaves them untouched.
class ParticipationStream {
 public:
  ParticipationStream(const AvailabilityModel& model, std::uint64_t seed)
      : model_(&model), run_length_(model.num_devices(), 0) {
    keys_.reserve(model.num_devices());
    for (std::size_t i = 0; i < model.num_devices(); ++i)
      keys_.push_back(derive_seed(seed, i, StreamPurpose::kAvailability));
  }

  ParticipationStream(AvailabilityModel&&, std::uint64_t) = delete;

  Round round() const { return t_; }

  ActiveSet next() {
    const Round t = t_ + 1;
    const std::size_t n = model_->num_devices();
    ActiveSet out{t, {}};
    if (const auto* replay =
            std::get_if<participation::TraceReplay>(&model_->variant())) {
      if (static_cast<std::size_t>(t) > replay->trace.rounds.size())
        throw EndOfTrace("availability trace exhausted at round " +
                         std::to_string(t));
      out = replay->trace.rounds[static_cast<std::size_t>(t - 1)];
    } else if (t == 1) {
      out = all_devices(1, n);
    } else {
      for (std::size_t i = 0; i < n; ++i)
        if (is_active(i, t)) out.members.push_back(i);
    }
    for (std::size_t i = 0; i < n; ++i)
      run_length_[i] = out.contains(i) ? 0 : run_length_[i] + 1;
    t_ = t;
    return out;
  }

  // Checkpoint support: the stream position plus the adversarial run lengths.
  const std::vector<Round>& run_lengths() const { return run_length_; }
  void restore(Round t, std::vector<Round> run_lengths) {
    require(run_lengths.size() == model_->num_devices(),
            "participation state has wrong device count");
    t_ = t;
    run_length_ = std::move(run_lengths);
  }

 private:
  bool is_active(std::size_t i, Round t) const {
    return std::visit(
        [&](const auto& m) -> bool {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, participation::Full>) {
            return true;
          } else if constexpr (std::is_same_v<M, participation::IidBernoulli>) {
            return counter_uniform(keys_[i], static_cast<std::uint64_t>(t)) <
                   m.p[i];
          } else if constexpr (std::is_same_v<M, participation::Periodic>) {
            const Round period = m.period[i];
            const Round r = ((t - m.phase[i]) % period + period) % period;
            return r == 0;
          } else if constexpr (std::is_same_v<M,
                                              participation::AdversarialLinear>) {
            const double allowed = m.t0 + static_cast<double>(t) / m.b;
            return static_cast<double>(run_length_[i] + 1) > allowed + 1e-12;
          } else {
            return false;
          }
        },
        model_->variant());
  }

  const AvailabilityModel* model_;
  Round t_ = 0;
  std::vector<std::uint64_t> keys_;
  std::vector<Round> run_length_;
};

/// Materializes the first T active sets of a model.
inline Trace record_trace(const AvailabilityModel& model, std::uint64_t seed,
                          Round T) {
  Trace trace{model.num_devices(), {}};
  ParticipationStream stream(model, seed);
  for (Round t = 1; t <= T; ++t) trace.rounds.push_back(stream.next());
  return trace;
}

// ---------------------------------------------------------------------------
// Inactive-round bookkeeping
// ---------------------------------------------------------------------------

struct TauStats {
  double tau_bar = 0.0;
  std::int64_t tau_max = 0;
  double d_max_bar = 0.0;  // (1/N) sum_i (max_t tau(t, i))^2
  double nu_bar = 0.0;
  std::int64_t nu_max = 0;
};

/// tau(t, i) = 0 if i is active at round t, tau(t-1, i) + 1 otherwise.
/// Accumulators are split into a committed part (rounds 1..T-1) and the
/// current round T.
class TauTracker {
 public:
  explicit TauTracker(std::size_t n)
      : tau_(n, 0), committed_max_(n, 0), nu_(n, 0) {
    require(n >= 1, "tau tracker needs at least one device");
  }

  std::size_t num_devices() const { return tau_.size(); }
  Round rounds() const { return T_; }
  const std::vector<std::int64_t>& tau() const { return tau_; }
  std::uint64_t sum_tau_committed() const { return committed_sum_; }
  std::uint64_t sum_tau_all() const { return committed_sum_ + current_sum(); }

  void update(const ActiveSet& active) {
    require(active.round == T_ + 1,
            "out-of-order round: expected " + std::to_string(T_ + 1) +
                ", got " + std::to_string(active.round));
    for (DeviceId i : active.members)
      require(i < tau_.size(), "active device id out of range");
    if (active.round == 1)
      require(active.size() == tau_.size(),
              "every device must be active at round 1");
    if (T_ >= 1) {
      committed_sum_ += current_sum();
      for (std::size_t i = 0; i < tau_.size(); ++i)
        committed_max_[i] = std::max(committed_max_[i], tau_[i]);
    }
    for (std::size_t i = 0; i < tau_.size(); ++i) {
      tau_[i] = active.contains(i) ? 0 : tau_[i] + 1;
      nu_[i] = std::max(nu_[i], tau_[i]);
    }
    T_ = active.round;
  }

  /// Statistics over rounds 1..T-1.
  TauStats stats() const {
    if (T_ < 2) throw InvalidArgument("tau statistics need T >= 2");
    return build(static_cast<double>(committed_sum_), committed_max_, T_ - 1);
  }

  /// Statistics over rounds 1..T (used for per-round metrics).
  TauStats stats_through_current() const {
    if (T_ < 1) throw InvalidArgument("no rounds observed");
    std::vector<std::int64_t> maxes(tau_.size());
    for (std::size_t i = 0; i < tau_.size(); ++i)
      maxes[i] = std::max(committed_max_[i], tau_[i]);
    return build(static_cast<double>(sum_tau_all()), maxes, T_);
  }

  // Checkpoint support.
  struct State {
    Round T = 0;
    std::vector<std::int64_t> tau, committed_max, nu;
    std::uint64_t committed_sum = 0;
  };
  State state() const { return {T_, tau_, committed_max_, nu_, committed_sum_}; }
  void restore(State s) {
    require(s.tau.size() == tau_.size() && s.committed_max.size() == tau_.size() &&
                s.nu.size() == tau_.size(),
            "tau tracker state has wrong device count");
    T_ = s.T;
    tau_ = std::move(s.tau);
    committed_max_ = std::move(s.committed_max);
    nu_ = std::move(s.nu);
    committed_sum_ = s.committed_sum;
  }

 private:
  std::uint64_t current_sum() const {
    std::uint64_t s = 0;
    for (auto v : tau_) s += static_cast<std::uint64_t>(v);
    return s;
  }

  TauStats build(double sum, const std::vector<std::int64_t>& maxes,
                 Round rounds) const {
    const double n = static_cast<double>(tau_.size());
    TauStats s;
    s.tau_bar = sum / (n * static_cast<double>(rounds));
    double sq = 0.0;
    double nu_total = 0.0;
    for (std::size_t i = 0; i < tau_.size(); ++i) {
      s.tau_max = std::max(s.tau_max, maxes[i]);
      sq += static_cast<double>(maxes[i]) * static_cast<double>(maxes[i]);
      nu_total += static_cast<double>(nu_[i]);
      s.nu_max = std::max(s.nu_max, nu_[i]);
    }
    s.d_max_bar = sq / n;
    s.nu_bar = nu_total / n;
    return s;
  }

  Round T_ = 0;
  std::vector<std::int64_t> tau_;
  std::vector<std::int64_t> committed_max_;
  std::vector<std::int64_t> nu_;
  std::uint64_t committed_sum_ = 0;
};

// ---------------------------------------------------------------------------
// Linear-growth delay condition and Bernoulli bounds
// ---------------------------------------------------------------------------

struct DelayCheck {
  bool holds = true;
  std::optional<std::pair<Round, DeviceId>> first_violation;
};

/// The slope parameter b = 40 (L/mu)^1.5.
inline double delay_slope(double L, double mu) {
  require(mu > 0.0 && L >= mu, "delay slope needs 0 < mu <= L");
  return 40.0 * std::pow(L / mu, 1.5);
}

/// Replays the tau recursion over a trace and tests tau(t, i) <= t0 + t/b.
inline DelayCheck check_linear_delay(const Trace& trace, double t0, double b) {
  TauTracker tracker(trace.num_devices);
  for (const ActiveSet& a : trace.rounds) {
    tracker.update(a);
    const double bound = t0 + static_cast<double>(a.round) / b;
    for (std::size_t i = 0; i < trace.num_devices; ++i)
      if (static_cast<double>(tracker.tau()[i]) > bound + 1e-12)
        return {false, std::make_pair(a.round, i)};
  }
  return {};
}

/// Same check with b derived from the condition number.
inline DelayCheck check_delay_envelope(const Trace& trace, double t0, double L,
                                       double mu) {
  return check_linear_delay(trace, t0, delay_slope(L, mu));
}

/// P(tau(t, i) >= k) under Bernoulli(p) participation: (1-p)^k for k < t,
/// zero otherwise.
inline double bernoulli_tau_tail(double p, std::int64_t k, Round t) {
  require(p > 0.0 && p <= 1.0, "p must lie in (0, 1]");
  require(k >= 0, "k must be >= 0");
  if (k >= t) return 0.0;
  return std::pow(1.0 - p, static_cast<double>(k));
}

struct BernoulliBounds {
  double tau_max_bound = 0.0;
  double tau_bar_bound_shape = 0.0;
};

/// tau_max_bound = 1 + (2 log T + log N + log(pi^2 / (6 delta))) / p_min holds
/// for every (t <= T, i) with probability at least 1 - delta.
/// tau_bar_bound_shape = (1/N) sum_i 1/p_i, the leading factor of the
/// high-probability bound on the average.
inline BernoulliBounds bernoulli_bounds(const std::vector<double>& p, Round T,
                                        double delta) {
  require(!p.empty(), "need at least one probability");
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  require(T >= 1, "T must be >= 1");
  double p_min = 1.0;
  double inv_sum = 0.0;
  for (double pi : p) {
    require(pi > 0.0 && pi <= 1.0, "p must lie in (0, 1]");
    p_min = std::min(p_min, pi);
    inv_sum += 1.0 / pi;
  }
  const double n = static_cast<double>(p.size());
  const double pi2 = std::numbers::pi * std::numbers::pi;
  BernoulliBounds out;
  out.tau_max_bound =
      1.0 + (2.0 * std::log(static_cast<double>(T)) + std::log(n) +
             std::log(pi2 / (6.0 * delta))) /
                p_min;
  out.tau_bar_bound_shape = inv_sum / n;
  return out;
}

/// Smallest t0 for which the Bernoulli high-probability envelope stays below
/// t0 + t/b for all t:
///   t0 = (2/p_min)(log(2b/p_min) - 1) + (1/p_min) log(pi^2 N / (6 delta)) + 1.
inline double bernoulli_t0(const std::vector<double>& p, double b,
                           double delta) {
  require(!p.empty(), "need at least one probability");
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  require(b > 0.0, "b must be > 0");
  const double p_min = *std::min_element(p.begin(), p.end());
  require(p_min > 0.0 && p_min <= 1.0, "p must lie in (0, 1]");
  const double n = static_cast<double>(p.size());
  const double pi2 = std::numbers::pi * std::numbers::pi;
  return (2.0 / p_min) * (std::log(2.0 * b / p_min) - 1.0) +
         std::log(pi2 * n / (6.0 * delta)) / p_min + 1.0;
}

// ---------------------------------------------------------------------------
// Trace file format
//
//   N=<int> T=<int>
//   t:<int> active:<comma-separated device ids>
//   ...
// ---------------------------------------------------------------------------

inline void write_trace(std::ostream& out, const Trace& trace) {
  out << "N=" << trace.num_devices << " T=" << trace.rounds.size() << '\n';
  for (const ActiveSet& a : trace.rounds) {
    out << "t:" << a.round << " active:";
    for (std::size_t k = 0; k < a.members.size(); ++k) {
      if (k) out << ',';
      out << a.members[k];
    }
    out << '\n';
  }
}

namespace detail {

template <typename T>
T parse_integer(std::string_view text, const std::string& context) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    throw InvalidArgument("trace: bad integer '" + std::string(text) + "' in " +
                          context);
  return value;
}

}  // namespace detail

inline Trace read_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("trace: missing header");
  if (!line.empty() && line.back() == '\r')
    throw InvalidArgument("trace: CRLF line endings are not accepted");
  std::size_t n = 0;
  std::size_t T = 0;
  {
    std::istringstream hs(line);
    std::string a, b;
    hs >> a >> b;
    if (a.rfind("N=", 0) != 0 || b.rfind("T=", 0) != 0 || !hs.eof())
      throw InvalidArgument("trace: header must be 'N=<int> T=<int>'");
    n = detail::parse_integer<std::size_t>(std::string_view(a).substr(2), "header");
    T = detail::parse_integer<std::size_t>(std::string_view(b).substr(2), "header");
  }
  Trace trace{n, {}};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::string ctx = "line " + std::to_string(trace.rounds.size() + 2);
    const auto space = line.find(' ');
    if (line.rfind("t:", 0) != 0 || space == std::string::npos ||
        line.compare(space + 1, 7, "active:") != 0)
      throw InvalidArgument("trace: malformed " + ctx);
    ActiveSet a;
    a.round = detail::parse_integer<Round>(
        std::string_view(line).substr(2, space - 2), ctx);
    std::string_view ids = std::string_view(line).substr(space + 8);
    while (!ids.empty()) {
      const auto comma = ids.find(',');
      const auto tok = ids.substr(0, comma);
      const auto id = detail::parse_integer<DeviceId>(tok, ctx);
      if (id >= n) throw InvalidArgument("trace: device id out of range on " + ctx);
      a.members.push_back(id);
      if (comma == std::string_view::npos) break;
      ids.remove_prefix(comma + 1);
    }
    std::sort(a.members.begin(), a.members.end());
    if (std::adjacent_find(a.members.begin(), a.members.end()) != a.members.end())
      throw InvalidArgument("trace: duplicate device id on " + ctx);
    trace.rounds.push_back(std::move(a));
  }
  if (trace.rounds.size() != T)
    throw InvalidArgument("trace: header declares T=" + std::to_string(T) +
                          " but file has " + std::to_string(trace.rounds.size()) +
                          " rounds");
  // Validates round numbering and first-round totality.
  AvailabilityModel::replay(trace);
  return trace;
}

}  // namespace mifa
