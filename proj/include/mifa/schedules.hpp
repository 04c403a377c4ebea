#pragma once

// Learning-rate schedules and the polynomially weighted averaged iterate used
// for the strongly convex guarantee.

#include "mifa/core.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <variant>

namespace mifa {

namespace schedule {

/// eta_t = 4 / (mu K (t + a)),  a = max{100, 40 t0} (L/mu)^1.5.
struct StronglyConvex {
  double mu = 1.0;
  double L = 1.0;
  int K = 1;
  double t0 = 0.0;
};

/// eta = c0 sqrt(N / (K T L (1 + nu_bar))), constant over the horizon T.
struct NonConvexConstant {
  std::size_t N = 1;
  int K = 1;
  Round T = 1;
  double L = 1.0;
  double nu_bar = 0.0;
  double c0 = 1.0;
};

/// eta_t = eta0 / t.
struct ExperimentalDecay {
  double eta0 = 0.1;
};

}  // namespace schedule

class LrSchedule {
 public:
  using Variant = std::variant<schedule::StronglyConvex,
                               schedule::NonConvexConstant,
                               schedule::ExperimentalDecay>;

  static LrSchedule strongly_convex(double mu, double L, int K, double t0) {
    require(std::isfinite(mu) && std::isfinite(L) && std::isfinite(t0),
            "schedule parameters must be finite");
    require(mu > 0.0, "mu must be > 0");
    require(L >= mu, "L must be >= mu");
    require(K >= 1, "K must be >= 1");
    require(t0 >= 0.0, "t0 must be >= 0");
    LrSchedule s(schedule::StronglyConvex{mu, L, K, t0});
    s.a_ = std::max(100.0, 40.0 * t0) * std::pow(L / mu, 1.5);
    // The analysis needs eta_t <= 1/(25 K L); eta_t decreases, so round 1
    // is the binding case.
    require(s.eta(1) <= 1.0 / (25.0 * K * L),
            "strongly convex schedule violates eta_1 <= 1/(25 K L)");
    return s;
  }

  static LrSchedule nonconvex_constant(std::size_t N, int K, Round T, double L,
                                       double nu_bar, double c0 = 1.0) {
    require(N >= 1 && K >= 1 && T >= 1, "N, K, T must be >= 1");
    require(std::isfinite(L) && L > 0.0, "L must be > 0");
    require(std::isfinite(nu_bar) && nu_bar >= 0.0, "nu_bar must be >= 0");
    require(c0 > 0.0 && c0 <= 1.0, "c0 must lie in (0, 1]");
    return LrSchedule(schedule::NonConvexConstant{N, K, T, L, nu_bar, c0});
  }

  static LrSchedule experimental_decay(double eta0) {
    require(std::isfinite(eta0) && eta0 > 0.0, "eta0 must be > 0");
    return LrSchedule(schedule::ExperimentalDecay{eta0});
  }

  const Variant& variant() const { return variant_; }
  bool is_strongly_convex() const {
    return std::holds_alternative<schedule::StronglyConvex>(variant_);
  }

  /// Shift a of the strongly convex schedule; nullopt for other variants.
  std::optional<double> shift() const {
    if (is_strongly_convex()) return a_;
    return std::nullopt;
  }

  double eta(Round t) const {
    require(t >= 1, "rounds start at 1");
    const double out = std::visit(
        [&](const auto& s) -> double {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, schedule::StronglyConvex>) {
            return 4.0 / (s.mu * s.K * (static_cast<double>(t) + a_));
          } else if constexpr (std::is_same_v<S, schedule::NonConvexConstant>) {
            return s.c0 * std::sqrt(static_cast<double>(s.N) /
                                    (s.K * static_cast<double>(s.T) * s.L *
                                     (1.0 + s.nu_bar)));
          } else {
            return s.eta0 / static_cast<double>(t);
          }
        },
        variant_);
    if (!std::isfinite(out) || out <= 0.0)
      throw InvalidArgument("learning rate is not a positive finite number");
    return out;
  }

  std::string name() const {
    return std::visit(
        [](const auto& s) -> std::string {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, schedule::StronglyConvex>)
            return "strongly_convex";
          else if constexpr (std::is_same_v<S, schedule::NonConvexConstant>)
            return "nonconvex_constant";
          else
            return "experimental_decay";
        },
        variant_);
  }

 private:
  explicit LrSchedule(Variant v) : variant_(std::move(v)) {}

  Variant variant_;
  double a_ = 0.0;
};

/// W_T = sum_{t=1}^T (t+a-1)(t+a-2) in closed form.
inline double averaging_weight_total(double a, Round T) {
  const double t = static_cast<double>(T);
  return t * t * t / 3.0 + (a - 1.0) * t * t + (a * a - 2.0 * a + 2.0 / 3.0) * t;
}

/// Weighted average of w_1, w_2, ... with weights (t+a-1)(t+a-2).
class AveragedIterate {
 public:
  AveragedIterate(double a, std::size_t dim)
      : a_(a), weighted_sum_(ParamVector::Zero(static_cast<Eigen::Index>(dim))) {
    require(std::isfinite(a), "averaging shift must be finite");
  }

  double shift() const { return a_; }
  double total_weight() const { return W_; }
  Round rounds_seen() const { return T_seen_; }

  static double weight(double a, Round t) {
    const double s = static_cast<double>(t) + a;
    return (s - 1.0) * (s - 2.0);
  }

  void observe(Round t, const ParamVector& w) {
    require(t == T_seen_ + 1, "averaged iterate must observe rounds in order");
    require(w.size() == weighted_sum_.size(), "dimension mismatch");
    const double wt = weight(a_, t);
    weighted_sum_ += wt * w;
    W_ += wt;
    T_seen_ = t;
  }

  ParamVector current() const {
    if (T_seen_ == 0) throw Unavailable("averaged iterate has no observations");
    if (W_ == 0.0) throw Unavailable("averaged iterate has zero total weight");
    return weighted_sum_ / W_;
  }

  // Checkpoint support.
  const ParamVector& weighted_sum() const { return weighted_sum_; }
  void restore(ParamVector weighted_sum, double W, Round T_seen) {
    require(weighted_sum.size() == weighted_sum_.size(), "dimension mismatch");
    weighted_sum_ = std::move(weighted_sum);
    W_ = W;
    T_seen_ = T_seen;
  }

 private:
  double a_;
  ParamVector weighted_sum_;
  double W_ = 0.0;
  Round T_seen_ = 0;
};

}  // namespace mifa
