#pragma once

// Synthetic federated objectives f(w) = (1/N) sum_i f_i(w) with exact and
// stochastic gradient oracles and declared regularity constants.
//
// Three families are provided:
//   quadratic       f_i(w) = 1/2 (w - c_i)^T H_i (w - c_i)
//   logistic        binary logistic loss over a per-device sample set plus
//                   (lambda/2)|w|^2
//   nonconvex-trig  f_i(w) = (L_q/2)|w - c_i|^2 + a * sum_j cos(w_j)
//
// Instances are immutable once built and are regenerated from their
// construction parameters rather than serialized.

#include "mifa/core.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mifa {

enum class Family { kQuadratic, kLogistic, kNonconvexTrig };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::kQuadratic: return "quadratic";
    case Family::kLogistic: return "logistic";
    case Family::kNonconvexTrig: return "nonconvex-trig";
  }
  return "unknown";
}

struct QuadraticObjective {
  Matrix hessian;
  ParamVector center;
};

struct LogisticObjective {
  Matrix features;     // one sample per row
  ParamVector labels;  // entries in {-1, +1}
  double lambda = 0.0;
};

struct TrigObjective {
  ParamVector center;
  double curvature = 0.0;  // L_q
  double amplitude = 0.0;  // a
};

using DeviceObjective =
    std::variant<QuadraticObjective, LogisticObjective, TrigObjective>;

struct ProblemConstants {
  double L = 0.0;
  double mu = 0.0;     // 0 for the non-convex family
  double sigma = 0.0;  // noise standard-deviation bound
  double delta = 0.0;  // almost-sure noise bound
  double rho = 0.0;    // Hessian Lipschitz constant
  double alpha = 0.0;  // gradient dissimilarity, non-convex family only
  std::vector<double> beta_i;
  double beta = 0.0;
};

struct Optimum {
  ParamVector w;
  double f_star = 0.0;
  double dissimilarity = 0.0;  // D = (1/N) sum_i |grad f_i(w*)|^2
};

namespace detail {

inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double value_of(const QuadraticObjective& q, const ParamVector& w) {
  const ParamVector r = w - q.center;
  return 0.5 * r.dot(q.hessian * r);
}

inline ParamVector grad_of(const QuadraticObjective& q, const ParamVector& w) {
  return q.hessian * (w - q.center);
}

inline Matrix hessian_of(const QuadraticObjective& q, const ParamVector&) {
  return q.hessian;
}

inline double value_of(const LogisticObjective& l, const ParamVector& w) {
  const Eigen::Index m = l.features.rows();
  double loss = 0.0;
  for (Eigen::Index j = 0; j < m; ++j)
    loss += softplus(-l.labels[j] * l.features.row(j).dot(w));
  return loss / static_cast<double>(m) + 0.5 * l.lambda * w.squaredNorm();
}

inline ParamVector sample_grad(const LogisticObjective& l, Eigen::Index j,
                               const ParamVector& w) {
  const double y = l.labels[j];
  const double s = sigmoid(-y * l.features.row(j).dot(w));
  return (-y * s) * l.features.row(j).transpose();
}

inline ParamVector grad_of(const LogisticObjective& l, const ParamVector& w) {
  const Eigen::Index m = l.features.rows();
  ParamVector g = ParamVector::Zero(w.size());
  for (Eigen::Index j = 0; j < m; ++j) g += sample_grad(l, j, w);
  return g / static_cast<double>(m) + l.lambda * w;
}

inline Matrix hessian_of(const LogisticObjective& l, const ParamVector& w) {
  const Eigen::Index m = l.features.rows();
  Matrix h = l.lambda * Matrix::Identity(w.size(), w.size());
  for (Eigen::Index j = 0; j < m; ++j) {
    const double s = sigmoid(l.features.row(j).dot(w));
    h += (s * (1.0 - s) / static_cast<double>(m)) *
         (l.features.row(j).transpose() * l.features.row(j));
  }
  return h;
}

inline double value_of(const TrigObjective& t, const ParamVector& w) {
  return 0.5 * t.curvature * (w - t.center).squaredNorm() +
         t.amplitude * w.array().cos().sum();
}

inline ParamVector grad_of(const TrigObjective& t, const ParamVector& w) {
  return t.curvature * (w - t.center) -
         t.amplitude * w.array().sin().matrix();
}

inline Matrix hessian_of(const TrigObjective& t, const ParamVector& w) {
  Matrix h = t.curvature * Matrix::Identity(w.size(), w.size());
  h.diagonal() -= t.amplitude * w.array().cos().matrix();
  return h;
}

}  // namespace detail

class ProblemInstance {
 public:
  ProblemInstance(Family family, std::size_t dim,
                  std::vector<DeviceObjective> devices,
                  ProblemConstants constants, std::optional<Optimum> optimum)
      : family_(family),
        dim_(dim),
        devices_(std::move(devices)),
        constants_(std::move(constants)),
        optimum_(std::move(optimum)) {}

  Family family() const { return family_; }
  bool is_convex_family() const { return family_ != Family::kNonconvexTrig; }
  std::size_t num_devices() const { return devices_.size(); }
  std::size_t dim() const { return dim_; }
  const ProblemConstants& constants() const { return constants_; }
  const std::optional<Optimum>& optimum() const { return optimum_; }
  const std::vector<DeviceObjective>& devices() const { return devices_; }

  double value(DeviceId i, const ParamVector& w) const {
    check(i, w);
    return std::visit([&](const auto& o) { return detail::value_of(o, w); },
                      devices_[i]);
  }

  ParamVector grad(DeviceId i, const ParamVector& w) const {
    check(i, w);
    return std::visit([&](const auto& o) { return detail::grad_of(o, w); },
                      devices_[i]);
  }

  Matrix hessian(DeviceId i, const ParamVector& w) const {
    check(i, w);
    return std::visit([&](const auto& o) { return detail::hessian_of(o, w); },
                      devices_[i]);
  }

  /// Unbiased gradient estimate. Quadratic and trig devices add noise drawn
  /// uniformly from the sphere of radius sigma; logistic devices return the
  /// gradient of one uniformly chosen sample.
  ParamVector stoch_grad(DeviceId i, const ParamVector& w, Rng& rng) const {
    check(i, w);
    if (const auto* l = std::get_if<LogisticObjective>(&devices_[i])) {
      const auto m = static_cast<std::uint64_t>(l->features.rows());
      const auto j = static_cast<Eigen::Index>(rng() % m);
      return detail::sample_grad(*l, j, w) + l->lambda * w;
    }
    ParamVector g = grad(i, w);
    if (constants_.sigma > 0.0)
      g += constants_.sigma * unit_sphere(dim_, rng);
    return g;
  }

  double global_value(const ParamVector& w) const {
    double total = 0.0;
    for (DeviceId i = 0; i < devices_.size(); ++i) total += value(i, w);
    return total / static_cast<double>(devices_.size());
  }

  ParamVector global_grad(const ParamVector& w) const {
    ParamVector total = ParamVector::Zero(static_cast<Eigen::Index>(dim_));
    for (DeviceId i = 0; i < devices_.size(); ++i) total += grad(i, w);
    return total / static_cast<double>(devices_.size());
  }

  /// f(w) - f*, or nullopt when the instance has no certified optimum.
  std::optional<double> suboptimality(const ParamVector& w) const {
    if (!optimum_) return std::nullopt;
    return global_value(w) - optimum_->f_star;
  }

  /// D evaluated at an arbitrary point.
  double dissimilarity_at(const ParamVector& w) const {
    double total = 0.0;
    for (DeviceId i = 0; i < devices_.size(); ++i)
      total += grad(i, w).squaredNorm();
    return total / static_cast<double>(devices_.size());
  }

 private:
  void check(DeviceId i, const ParamVector& w) const {
    require(i < devices_.size(), "device id out of range");
    require(static_cast<std::size_t>(w.size()) == dim_,
            "parameter vector has wrong dimension");
    require(all_finite(w), "parameter vector is not finite");
  }

  Family family_;
  std::size_t dim_;
  std::vector<DeviceObjective> devices_;
  ProblemConstants constants_;
  std::optional<Optimum> optimum_;
};

// ---------------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------------

namespace detail {

inline void require_finite(std::initializer_list<double> values,
                           const char* what) {
  for (double v : values)
    require(std::isfinite(v), std::string(what) + ": non-finite parameter");
}

/// Random orthogonal matrix (Haar) from the QR factorization of a Gaussian
/// matrix with the sign of R's diagonal folded into Q.
inline Matrix random_orthogonal(std::size_t d, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(d);
  Matrix g(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) g(r, c) = standard_normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix& r = qr.matrixQR();
  for (Eigen::Index c = 0; c < n; ++c)
    if (r(c, c) < 0.0) q.col(c) *= -1.0;
  return q;
}

/// Point drawn uniformly from the ball of the given radius.
inline ParamVector uniform_ball(std::size_t d, double radius, Rng& rng) {
  if (radius == 0.0) return ParamVector::Zero(static_cast<Eigen::Index>(d));
  const double r =
      radius * std::pow(uniform01(rng), 1.0 / static_cast<double>(d));
  return r * unit_sphere(d, rng);
}

/// Deterministic full-batch gradient descent with step 1/L. Returns the final
/// iterate and whether the stopping tolerance was met.
template <typename GradFn>
std::pair<ParamVector, bool> gradient_descent_oracle(GradFn&& global_grad,
                                                     ParamVector w, double L,
                                                     double tol,
                                                     long max_iters) {
  const double step = 1.0 / L;
  for (long it = 0; it < max_iters; ++it) {
    const ParamVector g = global_grad(w);
    if (g.norm() <= tol) return {std::move(w), true};
    w -= step * g;
  }
  const bool ok = global_grad(w).norm() <= tol;
  return {std::move(w), ok};
}

inline Optimum optimum_at(const ProblemInstance& inst, ParamVector w) {
  Optimum opt;
  opt.f_star = inst.global_value(w);
  opt.dissimilarity = inst.dissimilarity_at(w);
  opt.w = std::move(w);
  return opt;
}

inline std::optional<Optimum> oracle_optimum(const ProblemInstance& inst) {
  const ParamVector w0 = ParamVector::Zero(static_cast<Eigen::Index>(inst.dim()));
  const double tol =
      1e-10 * std::max(1.0, inst.global_grad(w0).norm());
  auto [w, ok] = gradient_descent_oracle(
      [&](const ParamVector& v) { return inst.global_grad(v); }, w0,
      inst.constants().L, tol, 1'000'000);
  if (!ok) return std::nullopt;
  return optimum_at(inst, std::move(w));
}

}  // namespace detail

/// Quadratic instance from explicit Hessians and centers. mu and L are read
/// off the extreme eigenvalues; w* solves (sum H_i) w = sum H_i c_i.
inline ProblemInstance make_quadratic_from_parts(std::vector<Matrix> hessians,
                                                 std::vector<ParamVector> centers,
                                                 double sigma) {
  require(!hessians.empty(), "quadratic instance needs at least one device");
  require(hessians.size() == centers.size(),
          "hessian and center counts differ");
  require(std::isfinite(sigma) && sigma >= 0.0, "sigma must be finite and >= 0");
  const auto d = centers.front().size();
  require(d >= 1, "dimension must be >= 1");

  double mu = std::numeric_limits<double>::infinity();
  double L = 0.0;
  Matrix h_sum = Matrix::Zero(d, d);
  ParamVector rhs = ParamVector::Zero(d);
  std::vector<DeviceObjective> devices;
  devices.reserve(hessians.size());
  for (std::size_t i = 0; i < hessians.size(); ++i) {
    require(hessians[i].rows() == d && hessians[i].cols() == d &&
                centers[i].size() == d,
            "inconsistent quadratic dimensions");
    require(hessians[i].allFinite() && centers[i].allFinite(),
            "quadratic parameters must be finite");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(hessians[i],
                                              Eigen::EigenvaluesOnly);
    mu = std::min(mu, eig.eigenvalues().minCoeff());
    L = std::max(L, eig.eigenvalues().maxCoeff());
    h_sum += hessians[i];
    rhs += hessians[i] * centers[i];
    devices.emplace_back(QuadraticObjective{hessians[i], centers[i]});
  }
  require(mu > 0.0, "quadratic Hessians must be positive definite");

  // Direct solve plus one step of iterative refinement.
  const Eigen::LDLT<Matrix> ldlt(h_sum);
  ParamVector w_star = ldlt.solve(rhs);
  w_star += ldlt.solve(rhs - h_sum * w_star);

  ProblemConstants constants;
  constants.L = L;
  constants.mu = mu;
  constants.sigma = sigma;
  constants.delta = sigma;
  ProblemInstance shell(Family::kQuadratic, static_cast<std::size_t>(d),
                        devices, constants, std::nullopt);
  Optimum opt = detail::optimum_at(shell, std::move(w_star));
  return ProblemInstance(Family::kQuadratic, static_cast<std::size_t>(d),
                         std::move(devices), std::move(constants),
                         std::move(opt));
}

/// Random quadratic instance. Each H_i = Q_i diag(lambda) Q_i^T with Q_i a
/// random rotation and lambda linearly spaced over [mu, L], so both endpoints
/// are attained exactly. Centers lie in the ball of radius heterogeneity.
/// For d = 1 the spacing runs across devices instead.
inline ProblemInstance make_quadratic_instance(std::size_t N, std::size_t d,
                                               double mu, double L,
                                               double sigma,
                                               double heterogeneity,
                                               std::uint64_t seed) {
  detail::require_finite({mu, L, sigma, heterogeneity}, "quadratic instance");
  require(N >= 1, "N must be >= 1");
  require(d >= 1, "d must be >= 1");
  require(mu > 0.0, "mu must be > 0");
  require(mu <= L, "mu must be <= L");
  require(sigma >= 0.0, "sigma must be >= 0");
  require(heterogeneity >= 0.0, "heterogeneity must be >= 0");

  std::vector<Matrix> hessians;
  std::vector<ParamVector> centers;
  for (std::size_t i = 0; i < N; ++i) {
    Rng rng = make_stream(seed, i, StreamPurpose::kProblemData);
    ParamVector spectrum(static_cast<Eigen::Index>(d));
    if (d == 1) {
      spectrum[0] = N == 1 ? mu
                           : mu + (L - mu) * static_cast<double>(i) /
                                      static_cast<double>(N - 1);
    } else {
      for (std::size_t j = 0; j < d; ++j)
        spectrum[static_cast<Eigen::Index>(j)] =
            mu + (L - mu) * static_cast<double>(j) / static_cast<double>(d - 1);
    }
    const Matrix q = detail::random_orthogonal(d, rng);
    Matrix h = q * spectrum.asDiagonal() * q.transpose();
    h = (0.5 * (h + h.transpose())).eval();
    hessians.push_back(std::move(h));
    centers.push_back(detail::uniform_ball(d, heterogeneity, rng));
  }
  ProblemInstance inst =
      make_quadratic_from_parts(std::move(hessians), std::move(centers), sigma);
  // Report the requested (exact) spectrum bounds rather than the rounded
  // eigen-solver estimates.
  ProblemConstants c = inst.constants();
  c.mu = mu;
  c.L = (d == 1 && N == 1) ? mu : L;
  return ProblemInstance(Family::kQuadratic, d, inst.devices(), std::move(c),
                         inst.optimum());
}

/// Logistic instance from explicit per-device samples.
inline ProblemInstance make_logistic_from_parts(std::vector<Matrix> features,
                                                std::vector<ParamVector> labels,
                                                double lambda) {
  require(std::isfinite(lambda) && lambda > 0.0,
          "lambda must be > 0 (strong convexity)");
  require(!features.empty() && features.size() == labels.size(),
          "logistic instance needs matching feature/label sets");
  const auto d = features.front().cols();
  require(d >= 1, "dimension must be >= 1");

  double curvature = 0.0;
  double max_row_norm = 0.0;
  std::vector<DeviceObjective> devices;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Matrix& x = features[i];
    require(x.rows() >= 1, "samples_per_device must be >= 1");
    require(x.cols() == d && labels[i].size() == x.rows(),
            "inconsistent logistic dimensions");
    require(x.allFinite(), "features must be finite");
    for (Eigen::Index j = 0; j < labels[i].size(); ++j)
      require(labels[i][j] == 1.0 || labels[i][j] == -1.0,
              "labels must be +1 or -1");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(x.transpose() * x,
                                              Eigen::EigenvaluesOnly);
    curvature = std::max(curvature, eig.eigenvalues().maxCoeff() /
                                        (4.0 * static_cast<double>(x.rows())));
    max_row_norm = std::max(max_row_norm, x.rowwise().norm().maxCoeff());
    devices.emplace_back(LogisticObjective{x, labels[i], lambda});
  }

  ProblemConstants constants;
  constants.mu = lambda;
  constants.L = lambda + curvature;
  // A single-sample gradient deviates from the device mean by at most the
  // largest feature norm in expectation-square, twice that almost surely.
  constants.sigma = max_row_norm;
  constants.delta = 2.0 * max_row_norm;
  constants.rho = 0.0;

  ProblemInstance shell(Family::kLogistic, static_cast<std::size_t>(d), devices,
                        constants, std::nullopt);
  auto opt = detail::oracle_optimum(shell);
  return ProblemInstance(Family::kLogistic, static_cast<std::size_t>(d),
                         std::move(devices), std::move(constants),
                         std::move(opt));
}

/// Binary logistic instance with label skew: device i prefers label +1 when i
/// is even and -1 when odd; each sample carries the preferred label with
/// probability (1 + label_skew)/2. Features are y*u + N(0, I) for a shared
/// random unit direction u.
inline ProblemInstance make_logistic_instance(std::size_t N, std::size_t d,
                                              std::size_t samples_per_device,
                                              double lambda, double label_skew,
                                              std::uint64_t seed) {
  detail::require_finite({lambda, label_skew}, "logistic instance");
  require(N >= 1, "N must be >= 1");
  require(d >= 1, "d must be >= 1");
  require(samples_per_device >= 1, "samples_per_device must be >= 1");
  require(lambda > 0.0, "lambda must be > 0 (strong convexity)");
  require(label_skew >= 0.0 && label_skew <= 1.0,
          "label_skew must lie in [0, 1]");

  Rng shared = make_stream(seed, N, StreamPurpose::kProblemData);
  const ParamVector direction = unit_sphere(d, shared);
  const auto m = static_cast<Eigen::Index>(samples_per_device);
  const auto dd = static_cast<Eigen::Index>(d);

  std::vector<Matrix> features;
  std::vector<ParamVector> labels;
  for (std::size_t i = 0; i < N; ++i) {
    Rng rng = make_stream(seed, i, StreamPurpose::kProblemData);
    const double preferred = (i % 2 == 0) ? 1.0 : -1.0;
    Matrix x(m, dd);
    ParamVector y(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      y[j] = uniform01(rng) < 0.5 * (1.0 + label_skew) ? preferred : -preferred;
      for (Eigen::Index k = 0; k < dd; ++k)
        x(j, k) = y[j] * direction[k] + standard_normal(rng);
    }
    features.push_back(std::move(x));
    labels.push_back(std::move(y));
  }
  return make_logistic_from_parts(std::move(features), std::move(labels),
                                  lambda);
}

namespace detail {

/// Certifies |grad f_i(w)|^2 <= alpha |grad f(w)|^2 + beta_i with alpha = 2
/// by sampling the ball of radius 10 * heterogeneity around the mean center
/// (plus every device center) and inflating the observed excess by 1.1.
inline void certify_dissimilarity(const ProblemInstance& inst,
                                  ProblemConstants& c, double heterogeneity,
                                  std::uint64_t seed) {
  constexpr int kSamples = 10'000;
  constexpr double kAlpha = 2.0;
  constexpr double kMargin = 1.1;
  const std::size_t N = inst.num_devices();
  const std::size_t d = inst.dim();

  ParamVector mean_center = ParamVector::Zero(static_cast<Eigen::Index>(d));
  std::vector<ParamVector> candidates;
  for (const auto& dev : inst.devices()) {
    const auto& t = std::get<TrigObjective>(dev);
    mean_center += t.center;
    candidates.push_back(t.center);
  }
  mean_center /= static_cast<double>(N);
  const double radius = 10.0 * std::max(heterogeneity, 0.1);
  Rng rng = make_stream(seed, N, StreamPurpose::kCertification);
  for (int s = 0; s < kSamples; ++s)
    candidates.push_back(mean_center + uniform_ball(d, radius, rng));

  std::vector<double> excess(N, 0.0);
  for (const ParamVector& w : candidates) {
    const double global = inst.global_grad(w).squaredNorm();
    for (std::size_t i = 0; i < N; ++i)
      excess[i] = std::max(excess[i],
                           inst.grad(i, w).squaredNorm() - kAlpha * global);
  }
  c.alpha = kAlpha;
  c.beta_i.resize(N);
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    c.beta_i[i] = kMargin * excess[i];
    total += c.beta_i[i];
  }
  c.beta = total / static_cast<double>(N);
}

}  // namespace detail

/// Non-convex instance from explicit centers.
inline ProblemInstance make_nonconvex_from_parts(std::vector<ParamVector> centers,
                                                 double L_quad, double a,
                                                 double sigma,
                                                 double heterogeneity = 1.0,
                                                 std::uint64_t seed = 0) {
  detail::require_finite({L_quad, a, sigma}, "nonconvex instance");
  require(!centers.empty(), "nonconvex instance needs at least one device");
  require(L_quad > 0.0, "L_quad must be > 0");
  require(a >= 0.0, "a must be >= 0");
  require(a <= L_quad, "a must be <= L_quad");
  require(sigma >= 0.0, "sigma must be >= 0");
  const auto d = centers.front().size();
  require(d >= 1, "dimension must be >= 1");

  std::vector<DeviceObjective> devices;
  for (auto& c : centers) {
    require(c.size() == d && c.allFinite(), "inconsistent centers");
    devices.emplace_back(TrigObjective{std::move(c), L_quad, a});
  }
  ProblemConstants constants;
  constants.L = L_quad + a;
  constants.mu = 0.0;
  constants.rho = a;
  constants.sigma = sigma;
  constants.delta = sigma;

  ProblemInstance shell(Family::kNonconvexTrig, static_cast<std::size_t>(d),
                        devices, constants, std::nullopt);
  detail::certify_dissimilarity(shell, constants, heterogeneity, seed);
  ProblemInstance with_constants(Family::kNonconvexTrig,
                                 static_cast<std::size_t>(d), devices,
                                 constants, std::nullopt);
  // With a <= L_q every f_i is convex, so a stationary point found by the
  // descent oracle is a global minimizer.
  auto opt = detail::oracle_optimum(with_constants);
  return ProblemInstance(Family::kNonconvexTrig, static_cast<std::size_t>(d),
                         std::move(devices), std::move(constants),
                         std::move(opt));
}

inline ProblemInstance make_nonconvex_instance(std::size_t N, std::size_t d,
                                               double L_quad, double a,
                                               double sigma,
                                               double heterogeneity,
                                               std::uint64_t seed) {
  detail::require_finite({L_quad, a, sigma, heterogeneity},
                         "nonconvex instance");
  require(N >= 1, "N must be >= 1");
  require(d >= 1, "d must be >= 1");
  require(heterogeneity >= 0.0, "heterogeneity must be >= 0");
  std::vector<ParamVector> centers;
  for (std::size_t i = 0; i < N; ++i) {
    Rng rng = make_stream(seed, i, StreamPurpose::kProblemData);
    centers.push_back(detail::uniform_ball(d, heterogeneity, rng));
  }
  return make_nonconvex_from_parts(std::move(centers), L_quad, a, sigma,
                                   heterogeneity, seed);
}

}  // namespace mifa
