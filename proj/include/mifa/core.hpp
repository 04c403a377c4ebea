#pragma once

// Shared vocabulary for the simulator: parameter vectors, error types,
// seeded random substreams and an exact floating-point accumulator.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mifa {

using ParamVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using DeviceId = std::size_t;
using Round = std::int64_t;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on user-supplied parameters was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An iterate became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A replayed availability trace has no more rounds.
class EndOfTrace : public Error {
 public:
  using Error::Error;
};

/// A quantity was requested that the instance cannot certify (e.g. f*).
class Unavailable : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

inline bool all_finite(const ParamVector& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

/// Tags separating independent substreams derived from one master seed.
enum class StreamPurpose : std::uint64_t {
  kAvailability = 0x41,
  kGradientNoise = 0x4e,
  kDeviceSampling = 0x53,
  kProblemData = 0x50,
  kCertification = 0x43,
  kStudy = 0x59,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for the substream identified by (master seed, stream id, purpose).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 StreamPurpose purpose) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  h = splitmix64(h ^ (stream * 0xd6e8feb86659fd93ULL));
  return h;
}

inline Rng make_stream(std::uint64_t master, std::uint64_t stream,
                       StreamPurpose purpose) {
  return Rng(derive_seed(master, stream, purpose));
}

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller; consumes exactly two draws and keeps no
/// cached spare, so the generator state alone captures the stream position.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Counter-based uniform in [0, 1): a pure function of (key, counter).
/// Used where draws must be addressable by round without stream state.
inline double counter_uniform(std::uint64_t key, std::uint64_t counter) {
  std::uint64_t h = splitmix64(key ^ splitmix64(counter));
  h = splitmix64(h + counter);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Direction drawn uniformly from the unit sphere in R^d.
inline ParamVector unit_sphere(std::size_t d, Rng& rng) {
  ParamVector v(static_cast<Eigen::Index>(d));
  double norm = 0.0;
  do {
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = standard_normal(rng);
    norm = v.norm();
  } while (norm == 0.0);
  return v / norm;
}

// ---------------------------------------------------------------------------
// Exact summation
// ---------------------------------------------------------------------------

/// Exact running sum of doubles, kept as non-overlapping partials (Shewchuk
/// expansion). value() is the correctly rounded sum, so two accumulators
/// holding the same real number always report the same double no matter
/// which additions and subtractions produced it.
class ExactSum {
 public:
  void add(double x) {
    std::size_t kept = 0;
    for (double y : partials_) {
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials_[kept++] = lo;
      x = hi;
    }
    partials_.resize(kept);
    partials_.push_back(x);
  }

  void subtract(double x) { add(-x); }

  double value() const {
    std::size_t n = partials_.size();
    if (n == 0) return 0.0;
    double hi = partials_[--n];
    double lo = 0.0;
    while (n > 0) {
      const double x = hi;
      const double y = partials_[--n];
      hi = x + y;
      const double yr = hi - x;
      lo = y - yr;
      if (lo != 0.0) break;
    }
    // Round-half-even correction when the remaining tail pushes past a tie.
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) ||
                  (lo > 0.0 && partials_[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      const double yr = x - hi;
      if (y == yr) hi = x;
    }
    return hi;
  }

  const std::vector<double>& partials() const { return partials_; }
  void assign_partials(std::vector<double> p) { partials_ = std::move(p); }

 private:
  std::vector<double> partials_;
};

/// Coordinate-wise exact accumulator for parameter vectors.
class ExactVectorSum {
 public:
  ExactVectorSum() = default;
  explicit ExactVectorSum(std::size_t d) : coords_(d) {}

  std::size_t dim() const { return coords_.size(); }

  void add(const ParamVector& v) {
    for (std::size_t j = 0; j < coords_.size(); ++j)
      coords_[j].add(v[static_cast<Eigen::Index>(j)]);
  }
  void subtract(const ParamVector& v) {
    for (std::size_t j = 0; j < coords_.size(); ++j)
      coords_[j].subtract(v[static_cast<Eigen::Index>(j)]);
  }

  ParamVector value() const {
    ParamVector out(static_cast<Eigen::Index>(coords_.size()));
    for (std::size_t j = 0; j < coords_.size(); ++j)
      out[static_cast<Eigen::Index>(j)] = coords_[j].value();
    return out;
  }

  std::vector<ExactSum>& coords() { return coords_; }
  const std::vector<ExactSum>& coords() const { return coords_; }

 private:
  std::vector<ExactSum> coords_;
};

}  // namespace mifa
