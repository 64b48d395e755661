#include "sdeid/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace sdeid::fit {

using models::LinearDrift;
using models::NonlinearDrift;

namespace {

constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;
constexpr double kLinearNormCap = 0.99;
constexpr double kNonlinearNormCap = 1.0;
constexpr double kInitNorm = 0.9;

bool all_finite(const Vec& v) { return v.allFinite(); }

// Views into a flat parameter vector, column-major blocks.
struct Layout {
  Index n, r, extra;
  Index size() const { return 2 * n * r + extra; }
  Eigen::Map<const Mat> A(const Vec& x) const { return {x.data(), n, r}; }
  Eigen::Map<const Mat> B(const Vec& x) const { return {x.data() + n * r, r, n}; }
  Eigen::Map<const Vec> tail(const Vec& x) const { return {x.data() + 2 * n * r, extra}; }
  Eigen::Map<Mat> A(Vec& x) const { return {x.data(), n, r}; }
  Eigen::Map<Mat> B(Vec& x) const { return {x.data() + n * r, r, n}; }
  Eigen::Map<Vec> tail(Vec& x) const { return {x.data() + 2 * n * r, extra}; }
};

double l1_term(const Mat& A, const Mat& B, double w, Mat* gA, Mat* gB) {
  if (w <= 0.0) return 0.0;
  if (gA) *gA += w * A.cwiseSign();
  if (gB) *gB += w * B.cwiseSign();
  return w * (A.cwiseAbs().sum() + B.cwiseAbs().sum());
}

void clip_blocks(const Layout& lay, Vec& x, double cap) {
  lay.A(x) = linalg::clip_spectral_norm(lay.A(x), cap);
  lay.B(x) = linalg::clip_spectral_norm(lay.B(x), cap);
}

Vec decay_from(const Vec& u) {
  Vec d(u.size());
  for (Index i = 0; i < u.size(); ++i) d(i) = 1.0 + softplus(u(i));
  return d;
}

double logistic(double u) { return models::logistic(u); }

Index pick_best(const std::vector<double>& losses) {
  Index best = -1;
  for (Index i = 0; i < static_cast<Index>(losses.size()); ++i)
    if (std::isfinite(losses[i]) && (best < 0 || losses[i] < losses[best])) best = i;
  if (best < 0) throw Error(Errc::no_convergence, "every restart failed");
  return best;
}

}  // namespace

void FitConfig::validate() const {
  if (!(lr > 0.0)) throw Error(Errc::invalid_param, "lr must be > 0");
  if (iters < 1) throw Error(Errc::invalid_param, "iters must be >= 1");
  if (restarts < 1) throw Error(Errc::invalid_param, "restarts must be >= 1");
  if (!(l1_weight >= 0.0)) throw Error(Errc::invalid_param, "l1_weight must be >= 0");
}

AdamResult adam_minimize(const Objective& f, Vec init, const FitConfig& cfg, const Projection& project) {
  cfg.validate();
  AdamResult out;
  out.loss_trace.reserve(static_cast<std::size_t>(cfg.iters) + 1);
  Vec x = std::move(init), g, m = Vec::Zero(x.size()), v = Vec::Zero(x.size());
  double b1t = 1.0, b2t = 1.0;
  for (Index t = 0;; ++t) {
    const double loss = f(x, g);
    if (!std::isfinite(loss) || g.size() != x.size() || !all_finite(g)) {
      std::ostringstream os;
      os << "non-finite loss or gradient at Adam step " << t;
      throw Error(Errc::non_finite, os.str());
    }
    out.loss_trace.push_back(loss);
    if (t == cfg.iters) break;
    b1t *= kBeta1;
    b2t *= kBeta2;
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseAbs2();
    const double step = cfg.lr / (1.0 - b1t);
    const double vscale = 1.0 / (1.0 - b2t);
    x.array() -= step * m.array() / ((v.array() * vscale).sqrt() + kAdamEps);
    if (project) project(x);
  }
  out.params = std::move(x);
  return out;
}

Vec gradient(const Objective& f, const Vec& x) {
  Vec g;
  f(x, g);
  return g;
}

double finite_difference_check(const Objective& f, const Vec& x, Rng& rng, int n_dirs, double h) {
  const Vec g = gradient(f, x);
  Vec scratch;
  double worst = 0.0;
  for (int k = 0; k < n_dirs; ++k) {
    const Vec d = linalg::random_normal(x.size(), 1, rng).col(0).normalized();
    const double fd = (f(x + h * d, scratch) - f(x - h * d, scratch)) / (2.0 * h);
    const double an = g.dot(d);
    const double gap = std::abs(fd - an) / std::max({1e-8, std::abs(fd), std::abs(an)});
    worst = std::max(worst, gap);
  }
  return worst;
}

std::vector<Index> hungarian(const Mat& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw Error(Errc::dimension_mismatch, "hungarian needs a square cost matrix");
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials u (rows), v (columns); p[j] is the row matched to column j (1-based, 0 = none).
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<Index> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Index i0 = p[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<Index> assign(n);
  for (Index j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

Alignment align_up_to_perm_scale(const Mat& Ahat, const Mat& A) {
  if (Ahat.rows() != A.rows() || Ahat.cols() != A.cols())
    throw Error(Errc::dimension_mismatch, "align_up_to_perm_scale: shapes differ");
  const Index r = A.cols();
  Mat X = Ahat, Y = A;
  Vec nx(r), ny(r);
  for (Index j = 0; j < r; ++j) {
    nx(j) = X.col(j).norm();
    ny(j) = Y.col(j).norm();
    if (!(nx(j) >= 1e-12) || !(ny(j) >= 1e-12)) {
      std::ostringstream os;
      os << "column " << j << " has norm below 1e-12";
      throw Error(Errc::degenerate_column, os.str());
    }
    X.col(j) /= nx(j);
    Y.col(j) /= ny(j);
  }
  Mat cost(r, r), sign(r, r);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < r; ++j) {
      const double minus = (X.col(i) - Y.col(j)).norm(), plus = (X.col(i) + Y.col(j)).norm();
      cost(i, j) = std::min(minus, plus);
      sign(i, j) = minus <= plus ? 1.0 : -1.0;
    }
  Mat sq = cost.cwiseAbs2();
  Alignment out;
  out.perm = hungarian(sq);
  out.scales.resize(r);
  double total = 0.0;
  for (Index i = 0; i < r; ++i) {
    const Index j = out.perm[i];
    total += sq(i, j);
    out.scales(i) = sign(i, j) * nx(i) / ny(j);
  }
  out.err = r ? std::sqrt(total / static_cast<double>(r)) : 0.0;
  return out;
}

Mat random_init(Index rows, Index cols, Index n, Index r, Rng& rng) {
  const Mat M = linalg::random_normal(rows, cols, rng, 1.0 / std::sqrt(static_cast<double>(n * r)));
  return linalg::clip_spectral_norm(M, kInitNorm);
}

double softplus(double u) { return u > 30.0 ? u : std::log1p(std::exp(u)); }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw Error(Errc::invalid_param, "softplus_inverse needs y > 0");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

namespace {

Layout linear_layout(Index n, Index r, bool learn) { return {n, r, learn ? n : 0}; }

template <class Problem>
std::vector<Vec> run_restarts(const Problem& prob, const FitConfig& cfg, std::vector<double>& losses) {
  cfg.validate();
  const Objective f = prob.objective();
  const Projection proj = prob.projection();
  std::vector<Vec> finals(static_cast<std::size_t>(cfg.restarts));
  losses.assign(static_cast<std::size_t>(cfg.restarts), std::numeric_limits<double>::infinity());
  for (Index k = 0; k < cfg.restarts; ++k) {
    Rng rng(linalg::derive_seed(cfg.seed, static_cast<std::uint64_t>(k)));
    try {
      AdamResult res = adam_minimize(f, prob.random_start(rng), cfg, proj);
      losses[k] = res.loss_trace.back();
      finals[k] = std::move(res.params);
    } catch (const Error& e) {
      if (e.code() != Errc::non_finite && e.code() != Errc::singular && e.code() != Errc::no_convergence) throw;
    }
  }
  return finals;
}

}  // namespace

LinearProblem::LinearProblem(LinearData data, Index r, bool learn_decay, double l1_weight)
    : data_(std::move(data)), n_(data_.C.rows()), r_(r), learn_decay_(learn_decay), l1_(l1_weight) {
  if (r < 1) throw Error(Errc::invalid_param, "linear fit needs r >= 1");
  if (data_.means.rows() != n_ || data_.means.cols() != data_.C.cols())
    throw Error(Errc::dimension_mismatch, "linear fit: means must match C");
  if (!learn_decay_ && data_.decay.size() != n_)
    throw Error(Errc::dimension_mismatch, "known decay must have n entries");
}

Index LinearProblem::size() const { return linear_layout(n_, r_, learn_decay_).size(); }

models::LinearDrift LinearProblem::unpack(const Vec& x) const {
  const Layout lay = linear_layout(n_, r_, learn_decay_);
  return LinearDrift{lay.A(x), lay.B(x), learn_decay_ ? decay_from(lay.tail(x)) : data_.decay};
}

Vec LinearProblem::pack(const LinearDrift& d) const {
  const Layout lay = linear_layout(n_, r_, learn_decay_);
  Vec x(lay.size());
  lay.A(x) = d.A;
  lay.B(x) = d.B;
  if (learn_decay_)
    for (Index i = 0; i < n_; ++i) x(2 * n_ * r_ + i) = softplus_inverse(d.decay(i) - 1.0);
  return x;
}

double LinearProblem::value(const Vec& x, Vec* grad) const {
  const Layout lay = linear_layout(n_, r_, learn_decay_);
  const LinearDrift d = unpack(x);
  loss::LinearDriftGrad g;
  double v = loss::loss_linear(d, data_.C, data_.means, data_.omega, data_.epsilon, grad ? &g : nullptr);
  v += l1_term(d.A, d.B, l1_, grad ? &g.A : nullptr, grad ? &g.B : nullptr);
  if (grad) {
    grad->resize(lay.size());
    lay.A(*grad) = g.A;
    lay.B(*grad) = g.B;
    if (learn_decay_) {
      const Vec u = lay.tail(x);
      for (Index i = 0; i < n_; ++i) (*grad)(2 * n_ * r_ + i) = g.decay(i) * logistic(u(i));
    }
  }
  return v;
}

Objective LinearProblem::objective() const {
  return [this](const Vec& x, Vec& g) { return value(x, &g); };
}

Projection LinearProblem::projection() const {
  const Layout lay = linear_layout(n_, r_, learn_decay_);
  return [lay](Vec& x) { clip_blocks(lay, x, kLinearNormCap); };
}

Vec LinearProblem::random_start(Rng& rng) const {
  const Layout lay = linear_layout(n_, r_, learn_decay_);
  Vec x(lay.size());
  lay.A(x) = random_init(n_, r_, n_, r_, rng);
  lay.B(x) = random_init(r_, n_, n_, r_, rng);
  if (learn_decay_) lay.tail(x).setConstant(softplus_inverse(0.5));
  return x;
}

RecoveryResult fit_linear(const LinearData& data, Index r, bool learn_decay, const FitConfig& cfg,
                          const LinearDrift* truth) {
  const LinearProblem prob(data, r, learn_decay, cfg.l1_weight);
  RecoveryResult best;
  const std::vector<Vec> finals = run_restarts(prob, cfg, best.restart_losses);
  best.best_restart = pick_best(best.restart_losses);
  const LinearDrift d = prob.unpack(finals[best.best_restart]);
  best.Ahat = d.A;
  best.Bhat = d.B;
  best.Dhat = d.decay;
  best.train_loss = best.restart_losses[best.best_restart];
  if (truth) {
    const Mat L = truth->matrix();
    best.drift_err = (d.matrix() - L).norm() / L.norm();
    best.align_err_A = align_up_to_perm_scale(d.A, truth->A).err;
    best.align_err_B = align_up_to_perm_scale(d.B.transpose(), truth->B.transpose()).err;
  }
  return best;
}

NonlinearProblem::NonlinearProblem(NonlinearData data, Index r, models::Activation act, double l1_weight)
    : data_(std::move(data)), n_(data_.C.rows()), r_(r), act_(std::move(act)), l1_(l1_weight) {
  if (r < 1) throw Error(Errc::invalid_param, "nonlinear fit needs r >= 1");
  if (static_cast<Index>(data_.moments.size()) != data_.C.cols())
    throw Error(Errc::dimension_mismatch, "nonlinear fit: one moment pair per intervention");
  if (act_.kind() == models::ActivationKind::learnable && act_.dim() != r)
    throw Error(Errc::dimension_mismatch, "learnable activation dim must equal r");
}

Index NonlinearProblem::size() const { return 2 * n_ * r_ + act_.num_params(); }

NonlinearDrift NonlinearProblem::unpack(const Vec& x) const {
  const Layout lay{n_, r_, act_.num_params()};
  NonlinearDrift d{lay.A(x), lay.B(x), act_};
  if (act_.num_params()) d.act.set_params(lay.tail(x));
  return d;
}

Vec NonlinearProblem::pack(const NonlinearDrift& d) const {
  const Layout lay{n_, r_, act_.num_params()};
  Vec x(lay.size());
  lay.A(x) = d.A;
  lay.B(x) = d.B;
  if (act_.num_params()) {
    if (d.act.num_params() != act_.num_params()) throw Error(Errc::dimension_mismatch, "activation parameter count");
    lay.tail(x) = d.act.params();
  }
  return x;
}

double NonlinearProblem::value(const Vec& x, Vec* grad) const {
  const Layout lay{n_, r_, act_.num_params()};
  const NonlinearDrift d = unpack(x);
  loss::NonlinearDriftGrad g;
  double v = loss::loss_nonlinear(d, data_.C, data_.moments, grad ? &g : nullptr);
  v += l1_term(d.A, d.B, l1_, grad ? &g.A : nullptr, grad ? &g.B : nullptr);
  if (grad) {
    grad->resize(lay.size());
    lay.A(*grad) = g.A;
    lay.B(*grad) = g.B;
    if (act_.num_params()) lay.tail(*grad) = g.act;
  }
  return v;
}

Objective NonlinearProblem::objective() const {
  return [this](const Vec& x, Vec& g) { return value(x, &g); };
}

Projection NonlinearProblem::projection() const {
  const Layout lay{n_, r_, act_.num_params()};
  return [lay](Vec& x) { clip_blocks(lay, x, kNonlinearNormCap); };
}

Vec NonlinearProblem::random_start(Rng& rng) const {
  const Layout lay{n_, r_, act_.num_params()};
  Vec x(lay.size());
  lay.A(x) = random_init(n_, r_, n_, r_, rng);
  lay.B(x) = random_init(r_, n_, n_, r_, rng);
  if (act_.num_params())
    lay.tail(x) = models::Activation::learnable(r_, act_.hidden(), static_cast<std::uint64_t>(rng())).params();
  return x;
}

RecoveryResult fit_nonlinear(const NonlinearData& data, Index r, const NonlinearModelSpec& model, const FitConfig& cfg,
                             const NonlinearDrift* truth) {
  const models::Activation act =
      model.act_hidden > 0 ? models::Activation::learnable(r, model.act_hidden, 0) : model.fixed_act;
  const NonlinearProblem prob(data, r, act, cfg.l1_weight);
  RecoveryResult best;
  const std::vector<Vec> finals = run_restarts(prob, cfg, best.restart_losses);
  best.best_restart = pick_best(best.restart_losses);
  const NonlinearDrift d = prob.unpack(finals[best.best_restart]);
  best.Ahat = d.A;
  best.Bhat = d.B;
  best.act = d.act;
  best.train_loss = best.restart_losses[best.best_restart];
  if (truth) {
    best.align_err_A = align_up_to_perm_scale(d.A, truth->A).err;
    best.align_err_B = align_up_to_perm_scale(d.B.transpose(), truth->B.transpose()).err;
    double num = 0.0, den = 0.0;
    for (const auto& m : data.moments) {
      const Mat J = models::drift_jacobian(*truth, m.mean);
      num += (models::drift_jacobian(d, m.mean) - J).squaredNorm();
      den += J.squaredNorm();
    }
    best.drift_err = std::sqrt(num / den);
  }
  return best;
}

LinearData linear_oracle_data(const LinearDrift& d, const Mat& C, double eps) {
  LinearData data;
  data.C = C;
  data.means.resize(C.rows(), C.cols());
  for (Index i = 0; i < C.cols(); ++i) data.means.col(i) = sim::exact_linear_moments(d, C.col(i), eps).mean;
  data.omega = sim::exact_linear_moments(d, Vec::Zero(C.rows()), eps).cov;
  data.epsilon = eps;
  data.decay = d.decay;
  return data;
}

NonlinearData nonlinear_oracle_data(const NonlinearDrift& d, const Mat& C) {
  NonlinearData data;
  data.C = C;
  for (Index i = 0; i < C.cols(); ++i) {
    const sim::LinearizedMoments m = sim::linearized_nonlinear_moments(d, C.col(i));
    data.moments.push_back({m.xstar, m.omega});
  }
  return data;
}

NonlinearData nonlinear_sampled_data(const NonlinearDrift& d, const Mat& C, double eps,
                                     const sim::SamplerConfig& cfg) {
  NonlinearData data;
  data.C = C;
  for (Index i = 0; i < C.cols(); ++i) {
    sim::SamplerConfig c = cfg;
    c.seed = linalg::derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
    const Vec ci = C.col(i);
    const sim::StationaryMoments m = sim::sample_moments(d, ci, eps, sim::default_start(d, ci), c);
    data.moments.push_back({m.mean, m.scaled_cov()});
  }
  return data;
}

KdsProblem::KdsProblem(KdsData data, Index r, models::Activation act, double l1_weight)
    : data_(std::move(data)), n_(data_.C.rows()), r_(r), act_(std::move(act)), l1_(l1_weight) {
  if (r < 1) throw Error(Errc::invalid_param, "KDS fit needs r >= 1");
  if (static_cast<Index>(data_.samples.size()) != data_.C.cols())
    throw Error(Errc::dimension_mismatch, "KDS fit: one sample batch per intervention");
  for (const Mat& s : data_.samples)
    if (s.cols() != n_ || s.rows() < 1) throw Error(Errc::dimension_mismatch, "KDS fit: batch dimension");
  if (act_.kind() == models::ActivationKind::learnable && act_.dim() != r)
    throw Error(Errc::dimension_mismatch, "learnable activation dim must equal r");
  data_.kernel.validate();
}

Index KdsProblem::size() const { return 2 * n_ * r_ + act_.num_params(); }

NonlinearDrift KdsProblem::unpack(const Vec& x) const {
  const Layout lay{n_, r_, act_.num_params()};
  NonlinearDrift d{lay.A(x), lay.B(x), act_};
  if (act_.num_params()) d.act.set_params(lay.tail(x));
  return d;
}

Vec KdsProblem::pack(const NonlinearDrift& d) const {
  const Layout lay{n_, r_, act_.num_params()};
  Vec x(lay.size());
  lay.A(x) = d.A;
  lay.B(x) = d.B;
  if (act_.num_params()) lay.tail(x) = d.act.params();
  return x;
}

double KdsProblem::value(const Vec& x, Vec* grad) const {
  const Layout lay{n_, r_, act_.num_params()};
  const NonlinearDrift d = unpack(x);
  const double w = 1.0 / static_cast<double>(data_.C.cols());
  double v = 0.0;
  Mat gA = Mat::Zero(n_, r_), gB = Mat::Zero(r_, n_);
  Vec gact = Vec::Zero(act_.num_params());
  for (Index i = 0; i < data_.C.cols(); ++i) {
    loss::NonlinearDriftGrad g;
    v += w * loss::kds_loss(d, data_.C.col(i), data_.epsilon, data_.samples[static_cast<std::size_t>(i)], data_.kernel,
                            grad ? &g : nullptr);
    if (grad) {
      gA += w * g.A;
      gB += w * g.B;
      if (act_.num_params()) gact += w * g.act;
    }
  }
  v += l1_term(d.A, d.B, l1_, grad ? &gA : nullptr, grad ? &gB : nullptr);
  if (grad) {
    grad->resize(lay.size());
    lay.A(*grad) = gA;
    lay.B(*grad) = gB;
    if (act_.num_params()) lay.tail(*grad) = gact;
  }
  return v;
}

Objective KdsProblem::objective() const {
  return [this](const Vec& x, Vec& g) { return value(x, &g); };
}

Projection KdsProblem::projection() const {
  const Layout lay{n_, r_, act_.num_params()};
  return [lay](Vec& x) { clip_blocks(lay, x, kNonlinearNormCap); };
}

Vec KdsProblem::random_start(Rng& rng) const {
  const Layout lay{n_, r_, act_.num_params()};
  Vec x(lay.size());
  lay.A(x) = random_init(n_, r_, n_, r_, rng);
  lay.B(x) = random_init(r_, n_, n_, r_, rng);
  if (act_.num_params())
    lay.tail(x) = models::Activation::learnable(r_, act_.hidden(), static_cast<std::uint64_t>(rng())).params();
  return x;
}

RecoveryResult fit_kds(const KdsData& data, Index r, const NonlinearModelSpec& model, const FitConfig& cfg,
                       const NonlinearDrift* truth) {
  const models::Activation act =
      model.act_hidden > 0 ? models::Activation::learnable(r, model.act_hidden, 0) : model.fixed_act;
  const KdsProblem prob(data, r, act, cfg.l1_weight);
  RecoveryResult best;
  const std::vector<Vec> finals = run_restarts(prob, cfg, best.restart_losses);
  best.best_restart = pick_best(best.restart_losses);
  const NonlinearDrift d = prob.unpack(finals[best.best_restart]);
  best.Ahat = d.A;
  best.Bhat = d.B;
  best.act = d.act;
  best.train_loss = best.restart_losses[best.best_restart];
  if (truth) {
    best.align_err_A = align_up_to_perm_scale(d.A, truth->A).err;
    best.align_err_B = align_up_to_perm_scale(d.B.transpose(), truth->B.transpose()).err;
  }
  return best;
}

double kds_generalization_mse(const NonlinearDrift& fitted, const NonlinearDrift& truth, const Mat& C_test,
                              double epsilon, const sim::SamplerConfig& cfg) {
  if (C_test.cols() < 1) throw Error(Errc::invalid_param, "no test interventions");
  double total = 0.0;
  for (Index i = 0; i < C_test.cols(); ++i) {
    sim::SamplerConfig c = cfg;
    c.seed = linalg::derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
    const Vec ci = C_test.col(i);
    const Mat pred = sim::euler_maruyama(fitted, ci, epsilon, ci, c);
    const Mat real = sim::euler_maruyama(truth, ci, epsilon, ci, c);
    total += loss::mse_distribution(pred, real);
  }
  return total / static_cast<double>(C_test.cols());
}

void write_fit_report_row(std::ostream& os, const FitReportRow& row) {
  const auto prec = os.precision(10);
  os << row.seed << ',' << row.k << ',' << row.r << ',' << row.n << ',' << row.restarts << ',' << row.train_loss << ','
     << row.drift_err << ',' << row.align_err_A << ',' << row.align_err_B << '\n';
  os.precision(prec);
}

}  // namespace sdeid::fit
