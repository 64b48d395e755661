#include "sdeid/simulate.hpp"

#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace sdeid::sim {

using models::LinearDrift;
using models::NonlinearDrift;

void SamplerConfig::validate() const {
  if (!(dt > 0.0)) throw Error(Errc::invalid_param, "dt must be > 0");
  if (thinning < 1) throw Error(Errc::invalid_param, "thinning must be >= 1");
  if (n_samples < 1) throw Error(Errc::invalid_param, "n_samples must be >= 1");
  if (burnin < 0) throw Error(Errc::invalid_param, "burnin must be >= 0");
}

namespace detail {

void MomentAccumulator::add(const Vec& x) {
  ++count_;
  delta_ = x - mean_;
  mean_ += delta_ / static_cast<double>(count_);
  m2_.noalias() += delta_ * (x - mean_).transpose();
}

StationaryMoments MomentAccumulator::finish(double epsilon) const {
  StationaryMoments m;
  m.mean = mean_;
  m.cov = count_ > 1 ? Mat(m2_ / static_cast<double>(count_ - 1)) : Mat::Zero(m2_.rows(), m2_.cols());
  m.cov = 0.5 * (m.cov + m.cov.transpose());
  m.epsilon = epsilon;
  m.n_samples = count_;
  return m;
}

}  // namespace detail

namespace {

void check_inputs(Index n, const Vec& c, const Vec& x0) {
  if (c.size() != n || x0.size() != n)
    throw Error(Errc::dimension_mismatch, "intervention and start must have n entries");
}

auto linear_fn(const LinearDrift& d, const Vec& c) {
  d.check_shapes();
  return [L = d.matrix(), &c](const Vec& x, Vec& out) { out.noalias() = L * x + c; };
}

auto nonlinear_fn(const NonlinearDrift& d, const Vec& c) {
  d.check_shapes();
  return [&d, &c, y = Vec(d.r()), s = Vec(d.r())](const Vec& x, Vec& out) mutable {
    y.noalias() = d.B * x;
    for (Index i = 0; i < y.size(); ++i) s(i) = d.act.value(i, y(i));
    out.noalias() = d.A * s;
    out += c - x;
  };
}

template <class Fn>
Mat collect(Fn&& f, Index n, double epsilon, const Vec& x0, const SamplerConfig& cfg) {
  Mat out(cfg.n_samples, n);
  Index row = 0;
  detail::run_chain(f, epsilon, x0, cfg, [&](const Vec& x) { out.row(row++) = x.transpose(); });
  return out;
}

template <class Fn>
StationaryMoments accumulate(Fn&& f, Index n, double epsilon, const Vec& x0, const SamplerConfig& cfg) {
  detail::MomentAccumulator acc(n);
  detail::run_chain(f, epsilon, x0, cfg, [&](const Vec& x) { acc.add(x); });
  return acc.finish(epsilon);
}

}  // namespace

Mat euler_maruyama(const LinearDrift& d, const Vec& c, double epsilon, const Vec& x0,
                   const SamplerConfig& cfg) {
  check_inputs(d.n(), c, x0);
  return collect(linear_fn(d, c), d.n(), epsilon, x0, cfg);
}

Mat euler_maruyama(const NonlinearDrift& d, const Vec& c, double epsilon, const Vec& x0,
                   const SamplerConfig& cfg) {
  check_inputs(d.n(), c, x0);
  return collect(nonlinear_fn(d, c), d.n(), epsilon, x0, cfg);
}

StationaryMoments sample_moments(const LinearDrift& d, const Vec& c, double epsilon, const Vec& x0,
                                 const SamplerConfig& cfg) {
  check_inputs(d.n(), c, x0);
  return accumulate(linear_fn(d, c), d.n(), epsilon, x0, cfg);
}

StationaryMoments sample_moments(const NonlinearDrift& d, const Vec& c, double epsilon, const Vec& x0,
                                 const SamplerConfig& cfg) {
  check_inputs(d.n(), c, x0);
  return accumulate(nonlinear_fn(d, c), d.n(), epsilon, x0, cfg);
}

StationaryMoments empirical_moments(const Mat& samples, double epsilon) {
  if (samples.rows() < 2) throw Error(Errc::invalid_param, "empirical_moments needs >= 2 samples");
  StationaryMoments m;
  m.mean = samples.colwise().mean().transpose();
  const Mat centered = samples.rowwise() - m.mean.transpose();
  m.cov = centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
  m.cov = 0.5 * (m.cov + m.cov.transpose());
  m.epsilon = epsilon;
  m.n_samples = samples.rows();
  return m;
}

StationaryMoments exact_linear_moments(const LinearDrift& d, const Vec& c, double epsilon) {
  const Mat L = d.matrix();
  if (c.size() != d.n()) throw Error(Errc::dimension_mismatch, "intervention must have n entries");
  StationaryMoments m;
  m.cov = linalg::solve_lyapunov(L, epsilon * Mat::Identity(d.n(), d.n()));
  m.mean = -L.partialPivLu().solve(c);
  m.epsilon = epsilon;
  m.n_samples = 0;
  return m;
}

LinearizedMoments linearized_nonlinear_moments(const NonlinearDrift& d, const Vec& c) {
  LinearizedMoments out;
  out.xstar = models::fixed_point(d, c);
  const Mat J = models::drift_jacobian(d, out.xstar);
  out.omega = linalg::solve_lyapunov(J, Mat::Identity(d.n(), d.n()));
  return out;
}

CovarianceError linearization_covariance_error(const NonlinearDrift& d, const Vec& c, double epsilon,
                                               const SamplerConfig& cfg) {
  cfg.validate();
  if (!(epsilon > 0.0)) throw Error(Errc::invalid_param, "epsilon must be > 0");
  const LinearizedMoments lin = linearized_nonlinear_moments(d, c);
  const Mat J = models::drift_jacobian(d, lin.xstar);
  const Index n = d.n();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise = std::sqrt(epsilon * cfg.dt);
  Vec x = lin.xstar, y = lin.xstar, z(n), vx(n);
  auto drift = nonlinear_fn(d, c);
  detail::MomentAccumulator ax(n), ay(n);
  const Index discard = cfg.burnin * cfg.thinning;
  const Index total = cfg.total_steps();
  for (Index step = 1; step <= total; ++step) {
    for (Index i = 0; i < n; ++i) z(i) = noise * normal(rng);
    drift(x, vx);
    x += cfg.dt * vx + z;
    y.noalias() += cfg.dt * (J * (y - lin.xstar));
    y += z;
    if (step % cfg.thinning == 0) {
      if (!(x.norm() <= kDivergenceNorm) || !(y.norm() <= kDivergenceNorm))
        throw Error(Errc::diverged, "coupled chain diverged");
      if (step > discard) {
        ax.add(x);
        ay.add(y);
      }
    }
  }
  const StationaryMoments mx = ax.finish(epsilon), my = ay.finish(epsilon);
  CovarianceError out;
  out.direct = linalg::spectral_norm(mx.scaled_cov() - lin.omega);
  out.coupled = linalg::spectral_norm((mx.cov - my.cov) / epsilon);
  out.mean = mx.mean;
  out.xstar = lin.xstar;
  out.n_samples = mx.n_samples;
  return out;
}

Vec default_start(const LinearDrift& d, const Vec& c) { return (c.array() / d.decay.array()).matrix() * -1.0; }

Vec default_start(const NonlinearDrift& d, const Vec& c) { return models::fixed_point(d, c, 1e-10); }

void write_samples_csv(std::ostream& os, const Mat& samples) {
  const auto flags = os.flags();
  const auto prec = os.precision(17);
  for (Index j = 0; j < samples.cols(); ++j) os << (j ? "," : "") << 'x' << j;
  os << '\n';
  for (Index i = 0; i < samples.rows(); ++i) {
    for (Index j = 0; j < samples.cols(); ++j) os << (j ? "," : "") << samples(i, j);
    os << '\n';
  }
  os.flags(flags);
  os.precision(prec);
}

Mat read_samples_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(Errc::parse_error, "empty sample CSV");
  Index cols = line.empty() ? 0 : 1;
  for (char ch : line)
    if (ch == ',') ++cols;
  std::vector<double> data;
  Index rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    Index count = 0;
    while (std::getline(ls, cell, ',')) {
      try {
        data.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(Errc::parse_error, "bad number '" + cell + "' in sample CSV");
      }
      ++count;
    }
    if (count != cols) throw Error(Errc::parse_error, "ragged sample CSV row");
    ++rows;
  }
  Mat out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = data[static_cast<std::size_t>(i * cols + j)];
  return out;
}

}  // namespace sdeid::sim
