#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <sstream>

#include "sdeid/models.hpp"

namespace sdeid::sim {

struct SamplerConfig {
  double dt = 0.01;
  Index burnin = 100;    // recorded-sample units: burnin * thinning steps are discarded
  Index thinning = 300;  // steps between recorded samples
  Index n_samples = 1000;
  std::uint64_t seed = 0;

  void validate() const;
  /// Total number of integrator steps.
  Index total_steps() const { return (burnin + n_samples) * thinning; }
};

struct StationaryMoments {
  Vec mean;
  Mat cov;
  double epsilon = 1.0;
  Index n_samples = 0;

  /// cov / epsilon, the quantity whose zero-noise limit solves the
  /// linearized Lyapunov equation.
  Mat scaled_cov() const { return cov / epsilon; }
};

inline constexpr double kDivergenceNorm = 1e8;

namespace detail {

/// Runs one Euler-Maruyama chain x <- x + f(x) dt + sqrt(eps dt) z and hands
/// every recorded state to `sink`. `f(x, out)` writes the total drift.
template <class DriftFn, class Sink>
void run_chain(DriftFn&& f, double epsilon, Vec x, const SamplerConfig& cfg, Sink&& sink) {
  cfg.validate();
  if (!(epsilon >= 0.0)) throw Error(Errc::invalid_param, "epsilon must be >= 0");
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = x.size();
  const double noise = std::sqrt(epsilon * cfg.dt);
  Vec v(n);
  const Index discard = cfg.burnin * cfg.thinning;
  const Index total = cfg.total_steps();
  for (Index step = 1; step <= total; ++step) {
    f(x, v);
    x += cfg.dt * v;
    if (noise > 0.0)
      for (Index i = 0; i < n; ++i) x(i) += noise * normal(rng);
    if (step % cfg.thinning == 0) {
      const double norm = x.norm();
      if (!(norm <= kDivergenceNorm)) {
        std::ostringstream os;
        os << "state norm " << norm << " exceeded " << kDivergenceNorm << " at step " << step;
        throw Error(Errc::diverged, os.str());
      }
      if (step > discard) sink(x);
    }
  }
}

class MomentAccumulator {
 public:
  explicit MomentAccumulator(Index n) : mean_(Vec::Zero(n)), m2_(Mat::Zero(n, n)), delta_(n) {}
  void add(const Vec& x);
  StationaryMoments finish(double epsilon) const;

 private:
  Index count_ = 0;
  Vec mean_;
  Mat m2_;
  Vec delta_;
};

}  // namespace detail

/// Integrates dX = (v(X) + c) dt + sqrt(eps) dW and returns the recorded
/// samples as rows (n_samples x n). Deterministic per `cfg.seed`.
Mat euler_maruyama(const models::LinearDrift& d, const Vec& c, double epsilon, const Vec& x0,
                   const SamplerConfig& cfg);
Mat euler_maruyama(const models::NonlinearDrift& d, const Vec& c, double epsilon, const Vec& x0,
                   const SamplerConfig& cfg);

/// Same chain as `euler_maruyama` but only accumulates moments, so it can run
/// with sample counts that would not fit in memory.
StationaryMoments sample_moments(const models::LinearDrift& d, const Vec& c, double epsilon,
                                 const Vec& x0, const SamplerConfig& cfg);
StationaryMoments sample_moments(const models::NonlinearDrift& d, const Vec& c, double epsilon,
                                 const Vec& x0, const SamplerConfig& cfg);

/// Unbiased mean and covariance (divisor N - 1) of the rows of `samples`.
StationaryMoments empirical_moments(const Mat& samples, double epsilon = 1.0);

/// Mean -L^{-1} c and covariance solving L S + S L^T + eps I = 0.
StationaryMoments exact_linear_moments(const models::LinearDrift& d, const Vec& c, double epsilon);

struct LinearizedMoments {
  Vec xstar;
  Mat omega;  // J omega + omega J^T + I = 0, J the drift Jacobian at xstar
};

/// Zero-noise limit of (mean, cov / eps).
LinearizedMoments linearized_nonlinear_moments(const models::NonlinearDrift& d, const Vec& c);

/// |Sigma_eps / eps - omega| estimated two ways from one chain of the
/// nonlinear SDE and one of its linearization at x*, both driven by the same
/// Brownian increments. `direct` uses the nonlinear sample covariance alone;
/// `coupled` uses (Sigma_x - Sigma_lin) / eps, which cancels the sampling
/// noise and discretization bias the two chains share. Spectral norms.
struct CovarianceError {
  double direct = 0.0;
  double coupled = 0.0;
  Vec mean;  // sample mean of the nonlinear chain
  Vec xstar;
  Index n_samples = 0;
};
CovarianceError linearization_covariance_error(const models::NonlinearDrift& d, const Vec& c, double epsilon,
                                               const SamplerConfig& cfg);

/// Chain start: the fixed point for nonlinear drift, -D^{-1} c for linear drift.
Vec default_start(const models::LinearDrift& d, const Vec& c);
Vec default_start(const models::NonlinearDrift& d, const Vec& c);

/// CSV with header x0,...,x{n-1} and one sample per line.
void write_samples_csv(std::ostream& os, const Mat& samples);
Mat read_samples_csv(std::istream& is);

}  // namespace sdeid::sim
