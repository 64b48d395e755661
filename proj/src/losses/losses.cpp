#include "sdeid/losses.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sdeid::loss {

using models::LinearDrift;
using models::NonlinearDrift;

namespace {

constexpr double kSingularRcond = 1e-13;

void require(bool ok, const char* what) {
  if (!ok) throw Error(Errc::dimension_mismatch, what);
}

void init_grad(NonlinearDriftGrad& g, const NonlinearDrift& d) {
  g.A = Mat::Zero(d.A.rows(), d.A.cols());
  g.B = Mat::Zero(d.B.rows(), d.B.cols());
  g.act = Vec::Zero(d.act.num_params());
}

}  // namespace

void KernelSpec::validate() const {
  if (!(bandwidth > 0.0)) throw Error(Errc::invalid_param, "kernel bandwidth must be > 0");
}

double loss_linear(const LinearDrift& d, const Mat& C, const Mat& means, const Mat& omega, double epsilon,
                   LinearDriftGrad* grad) {
  d.check_shapes();
  const Index n = d.n();
  require(C.rows() == n && means.rows() == n && means.cols() == C.cols(), "loss_linear: C and means must be n x k");
  require(omega.rows() == n && omega.cols() == n, "loss_linear: omega must be n x n");
  const Mat L = d.matrix();
  Eigen::PartialPivLU<Mat> lu(L);
  if (!(lu.rcond() > kSingularRcond)) throw Error(Errc::singular, "loss_linear: L = A B - D is singular");

  const Mat X = lu.solve(C);
  const Mat R1 = X + means;
  Mat R2 = L * omega + omega * L.transpose();
  R2.diagonal().array() += epsilon;
  const double f1 = R1.norm(), f2 = R2.norm();

  if (grad) {
    Mat GL = Mat::Zero(n, n);
    if (f1 > 0.0) GL -= L.transpose().partialPivLu().solve(R1) * X.transpose() / f1;
    if (f2 > 0.0) GL += (R2 + R2.transpose()) * omega / f2;
    grad->A = GL * d.B.transpose();
    grad->B = d.A.transpose() * GL;
    grad->decay = -GL.diagonal();
  }
  return f1 + f2;
}

double loss_nonlinear(const NonlinearDrift& d, const Mat& C, const std::vector<InterventionMoments>& moments,
                      NonlinearDriftGrad* grad) {
  d.check_shapes();
  const Index n = d.n();
  const Index k = static_cast<Index>(moments.size());
  require(k >= 1 && C.rows() == n && C.cols() == k, "loss_nonlinear: C must be n x k, one column per moment pair");
  for (const auto& m : moments)
    require(m.mean.size() == n && m.w.rows() == n && m.w.cols() == n, "loss_nonlinear: moment shapes");

  std::vector<Vec> ys(k), resid(k);
  std::vector<Mat> E(k);
  double s1 = 0.0, s2 = 0.0;
  for (Index i = 0; i < k; ++i) {
    const auto& m = moments[static_cast<std::size_t>(i)];
    ys[i] = d.B * m.mean;
    resid[i] = d.A * d.act.apply(ys[i]) - m.mean + C.col(i);
    const Mat J = models::drift_jacobian(d, m.mean);
    E[i] = J * m.w + m.w * J.transpose();
    E[i].diagonal().array() += 1.0;
    s1 += resid[i].squaredNorm();
    s2 += E[i].squaredNorm();
  }
  const double f1 = std::sqrt(s1), f2 = std::sqrt(s2);

  if (grad) {
    init_grad(*grad, d);
    const bool learn = d.act.num_params() > 0;
    for (Index i = 0; i < k; ++i) {
      const auto& m = moments[static_cast<std::size_t>(i)];
      const Vec& y = ys[i];
      const Vec sig = d.act.apply(y), s = d.act.deriv(y), s2v = d.act.deriv2(y);
      Vec g_val = Vec::Zero(d.r()), g_der = Vec::Zero(d.r()), dy = Vec::Zero(d.r());
      if (f1 > 0.0) {
        const Vec g = resid[i] / f1;
        grad->A += g * sig.transpose();
        g_val = d.A.transpose() * g;
        dy += g_val.cwiseProduct(s);
      }
      if (f2 > 0.0) {
        const Mat R = E[i] / f2;
        const Mat G = (R + R.transpose()) * m.w;  // dL / dJ
        grad->A += G * d.B.transpose() * s.asDiagonal();
        grad->B += s.asDiagonal() * d.A.transpose() * G;
        g_der = (d.A.transpose() * G * d.B.transpose()).diagonal();
        dy += g_der.cwiseProduct(s2v);
      }
      grad->B += dy * m.mean.transpose();
      if (learn) d.act.accumulate_param_grad(y, g_val, g_der, grad->act);
    }
  }
  return f1 + f2;
}

namespace detail {

RbfTerms rbf_terms(const Vec& x, const Vec& y, double bandwidth) {
  const Index n = x.size();
  const double s = 1.0 / (bandwidth * bandwidth);
  const Vec u = x - y;
  const double rho = u.squaredNorm();
  const double nd = static_cast<double>(n);
  RbfTerms t;
  t.k = std::exp(-0.5 * s * rho);
  t.dxdy = -s * s * t.k * (u * u.transpose());
  t.dxdy.diagonal().array() += s * t.k;
  t.dx_lapy = s * s * t.k * (2.0 + nd - s * rho) * u;
  t.lapxlapy = t.k * (s * s * s * s * rho * rho - (4.0 + 2.0 * nd) * s * s * s * rho + (nd * nd + 2.0 * nd) * s * s);
  return t;
}

double kds_from_drifts(const Mat& samples, const Mat& F, double epsilon, const KernelSpec& kernel, Mat* grad_f) {
  kernel.validate();
  const Index N = samples.rows(), n = samples.cols();
  require(N >= 2, "kds_loss needs at least 2 samples");
  require(F.rows() == N && F.cols() == n, "kds_loss: drift matrix shape");
  const double s = 1.0 / (kernel.bandwidth * kernel.bandwidth);
  const double e = 0.5 * epsilon;
  const double nd = static_cast<double>(n);
  if (grad_f) *grad_f = Mat::Zero(N, n);

  // T_ab = f_a^T K2 f_b + e (f_a . g_ab - f_b . g_ab) + e^2 K4, g_ab = grad_x lap_y k.
  // Pairs are symmetric (T_ab = T_ba), so sum the upper triangle twice.
  double total = 0.0;
  Vec u(n);
  for (Index a = 0; a < N; ++a) {
    const auto fa = F.row(a);
    for (Index b = a; b < N; ++b) {
      const auto fb = F.row(b);
      u = (samples.row(a) - samples.row(b)).transpose();
      const double rho = u.squaredNorm();
      const double k = std::exp(-0.5 * s * rho);
      const double fu_a = fa.dot(u), fu_b = fb.dot(u);
      const double ff = fa.dot(fb);
      const double k2 = s * k * (ff - s * fu_a * fu_b);
      const double cg = s * s * k * (2.0 + nd - s * rho);  // g_ab = cg u
      const double k3 = e * cg * (fu_a - fu_b);
      const double k4 = e * e * k * (s * s * s * s * rho * rho - (4.0 + 2.0 * nd) * s * s * s * rho + (nd * nd + 2.0 * nd) * s * s);
      const double t = k2 + k3 + k4;
      total += (a == b) ? t : 2.0 * t;
      if (grad_f) {
        // dT_ab / df_a and dT_ab / df_b; T_ba contributes the same amounts.
        const Vec ka = s * k * (fb.transpose() - s * fu_b * u) + e * cg * u;
        const Vec kb = s * k * (fa.transpose() - s * fu_a * u) - e * cg * u;
        if (a == b) {
          grad_f->row(a) += (ka + kb).transpose();
        } else {
          grad_f->row(a) += 2.0 * ka.transpose();
          grad_f->row(b) += 2.0 * kb.transpose();
        }
      }
    }
  }
  const double norm = 1.0 / (static_cast<double>(N) * static_cast<double>(N));
  if (grad_f) *grad_f *= norm;
  return total * norm;
}

}  // namespace detail

double kds_loss(const NonlinearDrift& d, const Vec& c, double epsilon, const Mat& samples, const KernelSpec& kernel,
                NonlinearDriftGrad* grad) {
  d.check_shapes();
  require(samples.cols() == d.n() && c.size() == d.n(), "kds_loss: samples must be N x n");
  const Index N = samples.rows();
  Mat Y = samples * d.B.transpose();  // N x r
  Mat S(N, d.r());
  for (Index a = 0; a < N; ++a) S.row(a) = d.act.apply(Y.row(a).transpose()).transpose();
  Mat F = S * d.A.transpose() - samples;
  F.rowwise() += c.transpose();
  if (!grad) return detail::kds_from_drifts(samples, F, epsilon, kernel, nullptr);

  Mat GF;
  const double value = detail::kds_from_drifts(samples, F, epsilon, kernel, &GF);
  init_grad(*grad, d);
  grad->A = GF.transpose() * S;
  const Mat GS = GF * d.A;  // N x r, d value / d sigma
  Mat GY(N, d.r());
  const Vec zero = Vec::Zero(d.r());
  for (Index a = 0; a < N; ++a) {
    const Vec y = Y.row(a).transpose();
    GY.row(a) = GS.row(a).cwiseProduct(d.act.deriv(y).transpose());
    if (grad->act.size()) d.act.accumulate_param_grad(y, GS.row(a).transpose(), zero, grad->act);
  }
  grad->B = GY.transpose() * samples;
  return value;
}

double kds_loss(const LinearDrift& d, const Vec& c, double epsilon, const Mat& samples, const KernelSpec& kernel,
                LinearDriftGrad* grad) {
  d.check_shapes();
  require(samples.cols() == d.n() && c.size() == d.n(), "kds_loss: samples must be N x n");
  const Mat Y = samples * d.B.transpose();
  Mat F = Y * d.A.transpose() - samples * d.decay.asDiagonal();
  F.rowwise() += c.transpose();
  if (!grad) return detail::kds_from_drifts(samples, F, epsilon, kernel, nullptr);

  Mat GF;
  const double value = detail::kds_from_drifts(samples, F, epsilon, kernel, &GF);
  grad->A = GF.transpose() * Y;
  grad->B = (GF * d.A).transpose() * samples;
  grad->decay = -(GF.cwiseProduct(samples)).colwise().sum().transpose();
  return value;
}

double mse_distribution(const Mat& pred, const Mat& truth) {
  require(pred.cols() == truth.cols(), "mse_distribution: batches must share dimension");
  require(pred.rows() >= 1 && truth.rows() >= 1, "mse_distribution: empty batch");
  const Vec diff = (pred.colwise().mean() - truth.colwise().mean()).transpose();
  return diff.squaredNorm() / static_cast<double>(diff.size());
}

namespace {

Mat sq_cost(const Mat& a, const Mat& b) {
  const Vec na = a.rowwise().squaredNorm(), nb = b.rowwise().squaredNorm();
  Mat C = -2.0 * a * b.transpose();
  C.colwise() += na;
  C.rowwise() += nb.transpose();
  return C.cwiseMax(0.0);
}

// out_j = -eps log sum_i exp(logw + (p_i - C_ij) / eps), over columns of C.
void softmin_cols(const Mat& C, const Vec& p, double logw, double eps, Vec& out) {
  out.resize(C.cols());
  for (Index j = 0; j < C.cols(); ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < C.rows(); ++i) mx = std::max(mx, (p(i) - C(i, j)) / eps);
    double acc = 0.0;
    for (Index i = 0; i < C.rows(); ++i) acc += std::exp((p(i) - C(i, j)) / eps - mx);
    out(j) = -eps * (logw + mx + std::log(acc));
  }
}

struct Potentials {
  Vec f, g;
};

// L1 violation of the row marginal for potentials (f, g).
double row_marginal_error(const Mat& C, const Potentials& p, double reg) {
  const Index N = C.rows(), M = C.cols();
  const double lw = -std::log(static_cast<double>(N)) - std::log(static_cast<double>(M));
  double err = 0.0;
  for (Index i = 0; i < N; ++i) {
    double row = 0.0;
    for (Index j = 0; j < M; ++j) row += std::exp(lw + (p.f(i) + p.g(j) - C(i, j)) / reg);
    err += std::abs(row - 1.0 / static_cast<double>(N));
  }
  return err;
}

// Symmetric problems (a against itself) use the averaged update
// f <- (f + T f) / 2, which converges where plain alternation crawls.
Potentials solve_potentials(const Mat& C, const SinkhornOptions& opt, bool symmetric) {
  const Index N = C.rows(), M = C.cols();
  const double la = -std::log(static_cast<double>(N)), lb = -std::log(static_cast<double>(M));
  const double cmax = C.maxCoeff();
  const Mat Ct = C.transpose();
  Potentials p{Vec::Zero(N), Vec::Zero(M)};
  Vec tmp;

  auto sweep = [&](double eps) {
    if (symmetric) {
      softmin_cols(C, p.f, la, eps, tmp);
      p.f = 0.5 * (p.f + tmp);
      p.g = p.f;
    } else {
      softmin_cols(C, p.f, la, eps, p.g);
      softmin_cols(Ct, p.g, lb, eps, p.f);
      softmin_cols(C, p.f, la, eps, p.g);
    }
  };

  // Anneal the regularization from the cost diameter down to the target.
  double eps = std::max(cmax, opt.reg);
  while (eps > opt.reg) {
    sweep(eps);
    eps = std::max(opt.reg, 0.5 * eps);
  }
  for (int it = 0; it < opt.max_iter; ++it) {
    sweep(opt.reg);
    if (row_marginal_error(C, p, opt.reg) <= opt.tol) return p;
  }
  std::ostringstream os;
  os << "Sinkhorn marginals still off by " << row_marginal_error(C, p, opt.reg) << " after " << opt.max_iter
     << " iterations at reg " << opt.reg;
  throw Error(Errc::no_convergence, os.str());
}

Mat plan_from(const Mat& C, const Potentials& p, double reg) {
  const Index N = C.rows(), M = C.cols();
  const double lw = -std::log(static_cast<double>(N)) - std::log(static_cast<double>(M));
  Mat P(N, M);
  for (Index i = 0; i < N; ++i)
    for (Index j = 0; j < M; ++j) P(i, j) = std::exp(lw + (p.f(i) + p.g(j) - C(i, j)) / reg);
  return P;
}

}  // namespace

namespace {

double entropic_ot_impl(const Mat& a, const Mat& b, const SinkhornOptions& opt, Mat* plan, bool symmetric) {
  if (!(opt.reg > 0.0)) throw Error(Errc::invalid_param, "Sinkhorn reg must be > 0");
  require(a.cols() == b.cols() && a.rows() >= 1 && b.rows() >= 1, "entropic_ot: batches must share dimension");
  const Mat C = sq_cost(a, b);
  const Potentials p = solve_potentials(C, opt, symmetric);
  if (plan) *plan = plan_from(C, p, opt.reg);
  return p.f.mean() + p.g.mean();
}

}  // namespace

double entropic_ot(const Mat& a, const Mat& b, const SinkhornOptions& opt, Mat* plan) {
  return entropic_ot_impl(a, b, opt, plan, &a == &b);
}

double sinkhorn_divergence(const Mat& a, const Mat& b, const SinkhornOptions& opt, Mat* grad_a) {
  Mat Pab, Paa;
  const double ab = entropic_ot(a, b, opt, grad_a ? &Pab : nullptr);
  const double aa = entropic_ot_impl(a, a, opt, grad_a ? &Paa : nullptr, true);
  const double bb = entropic_ot_impl(b, b, opt, nullptr, true);
  if (grad_a) {
    // Envelope theorem: d OT / d C_ij = P_ij, and d C_ij / d x_i = 2 (x_i - y_j).
    const Vec rab = Pab.rowwise().sum(), raa = Paa.rowwise().sum();
    *grad_a = 2.0 * (rab.asDiagonal() * a - Pab * b) - 2.0 * (raa.asDiagonal() * a - Paa * a);
  }
  return ab - 0.5 * aa - 0.5 * bb;
}

}  // namespace sdeid::loss
