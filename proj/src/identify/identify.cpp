#include "sdeid/identify.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace sdeid::identify {

using models::NonlinearDrift;

namespace {

[[noreturn]] void rank_fail(const std::string& what, double got, double need) {
  std::ostringstream os;
  os << what << ": singular-value ratio " << got << " below " << need;
  throw Error(Errc::rank_deficient, os.str());
}

// Top `dim` left singular vectors of M. The retained block must be nonsingular
// and separated from the discarded part by `gap_ratio`.
Mat dominant_basis(const Mat& M, Index dim, double gap_ratio, const char* what) {
  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeThinU);
  const Vec s = svd.singularValues();
  if (s.size() < dim || dim < 1) throw Error(Errc::dimension_mismatch, std::string(what) + ": too few columns");
  const double keep = s(dim - 1);
  if (!(keep > linalg::kRankTol * s(0))) rank_fail(what, keep / s(0), linalg::kRankTol);
  if (s.size() > dim) {
    const double drop = s(dim);
    if (drop > 0.0 && keep / drop < gap_ratio) rank_fail(what, keep / drop, gap_ratio);
  }
  return svd.matrixU().leftCols(dim);
}

Mat random_orthogonal(Index r, Rng& rng) { return linalg::random_stiefel(r, r, rng); }

// Columns vec(E W + W E^T) of the Lyapunov map applied to each basis matrix.
Mat lyapunov_design(const std::vector<Mat>& basis, const Mat& W) {
  const Index n = W.rows();
  Mat design(n * n, static_cast<Index>(basis.size()));
  for (std::size_t j = 0; j < basis.size(); ++j) {
    const Mat F = basis[j] * W + W * basis[j].transpose();
    design.col(static_cast<Index>(j)) = Eigen::Map<const Vec>(F.data(), n * n);
  }
  return design;
}

Vec solve_full_rank_ls(const Mat& design, const Vec& rhs, const char* what) {
  if (!design.allFinite() || !rhs.allFinite()) throw Error(Errc::non_finite, std::string(what) + ": non-finite system");
  Eigen::ColPivHouseholderQR<Mat> qr(design);
  qr.setThreshold(linalg::kRankTol);
  if (qr.rank() < design.cols()) {
    std::ostringstream os;
    os << what << ": rank " << qr.rank() << " < " << design.cols();
    throw Error(Errc::rank_deficient, os.str());
  }
  return qr.solve(rhs);
}


// Residual map of the (discretized) Lyapunov equation written in N = J + I:
// (1 - dt) (N W + W N^T) + dt N W N^T - (2 - dt) W + I.
Mat lyap_residual_n(const Mat& N, const Mat& W, double dt) {
  const Mat I = Mat::Identity(W.rows(), W.cols());
  return (1.0 - dt) * (N * W + W * N.transpose()) + dt * N * W * N.transpose() - (2.0 - dt) * W + I;
}

// Least squares for the coefficients of N = sum_j coef_j basis_j under the
// equation above; the quadratic term is iterated to a fixed point.
Vec fit_lyapunov_coefficients(const std::vector<std::vector<Mat>>& basis, const std::vector<Mat>& W, double dt,
                              const char* what) {
  const Index n = W.front().rows(), m = static_cast<Index>(basis.front().size());
  const Index blocks = static_cast<Index>(W.size());
  Mat design(blocks * n * n, m);
  for (Index b = 0; b < blocks; ++b)
    design.middleRows(b * n * n, n * n) = (1.0 - dt) * lyapunov_design(basis[b], W[b]);
  Vec coef = Vec::Zero(m), rhs(blocks * n * n);
  const Mat I = Mat::Identity(n, n);
  for (int it = 0; it < 50; ++it) {
    for (Index b = 0; b < blocks; ++b) {
      Mat N = Mat::Zero(n, n);
      for (Index j = 0; j < m; ++j) N += coef(j) * basis[b][j];
      const Mat r = (2.0 - dt) * W[b] - I - dt * N * W[b] * N.transpose();
      rhs.segment(b * n * n, n * n) = Eigen::Map<const Vec>(r.data(), n * n);
    }
    const Vec next = solve_full_rank_ls(design, rhs, what);
    if (!next.allFinite()) throw Error(Errc::diverged, std::string(what) + ": fixed-point iteration diverged");
    const double change = (next - coef).norm();
    coef = next;
    if (dt == 0.0 || change <= 1e-14 * std::max(1.0, coef.norm())) break;
  }
  return coef;
}

// Alternating least squares over N_i = A diag(s_i) B with s_0 = 1 and
// A = UA R restricted to the observed range of A: refit the slopes s_i, then
// B pooled over interventions, then R.
void refine_factors(const Mat& UA, Mat& A, Mat& B, const std::vector<Mat>& W, double dt, int sweeps) {
  const Index n = A.rows(), r = A.cols(), k = static_cast<Index>(W.size());
  std::vector<Vec> s(static_cast<std::size_t>(k), Vec::Ones(r));
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (Index i = 1; i < k; ++i) {
      std::vector<std::vector<Mat>> basis(1);
      for (Index j = 0; j < r; ++j) basis[0].push_back(A.col(j) * B.row(j));
      s[i] = fit_lyapunov_coefficients(basis, {W[i]}, dt, "slope refit");
    }
    std::vector<std::vector<Mat>> basis(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i)
      for (Index b = 0; b < r; ++b)
        for (Index col = 0; col < n; ++col) {
          Mat E = Mat::Zero(n, n);
          E.col(col) = s[i](b) * A.col(b);
          basis[i].push_back(E);
        }
    const Vec flat = fit_lyapunov_coefficients(basis, W, dt, "B refit");
    for (Index b = 0; b < r; ++b) B.row(b) = flat.segment(b * n, n).transpose();

    std::vector<std::vector<Mat>> abasis(static_cast<std::size_t>(k));
    for (Index i = 0; i < k; ++i)
      for (Index b = 0; b < r; ++b)
        for (Index a = 0; a < r; ++a) abasis[i].push_back(s[i](b) * UA.col(a) * B.row(b));
    const Vec R = fit_lyapunov_coefficients(abasis, W, dt, "A refit");
    for (Index b = 0; b < r; ++b) A.col(b) = UA * R.segment(b * r, r);
  }
}

}  // namespace

void MomentOracle::validate() const {
  if (entries.empty()) throw Error(Errc::invalid_param, "moment oracle needs k >= 1");
  const Index dim = n();
  for (const auto& e : entries) {
    if (e.c.size() != dim || e.xstar.size() != dim || e.W.rows() != dim || e.W.cols() != dim)
      throw Error(Errc::dimension_mismatch, "moment oracle entries must share n");
    if ((e.W - e.W.transpose()).norm() > 1e-8 * std::max(1.0, e.W.norm()))
      throw Error(Errc::invalid_param, "scaled covariance must be symmetric");
  }
}

MomentOracle exact_oracle(const NonlinearDrift& d, const Mat& C) {
  MomentOracle out;
  for (Index i = 0; i < C.cols(); ++i) {
    const sim::LinearizedMoments m = sim::linearized_nonlinear_moments(d, C.col(i));
    out.entries.push_back({C.col(i), m.xstar, m.omega});
  }
  return out;
}

MomentOracle simulated_oracle(const NonlinearDrift& d, const Mat& C, double epsilon, const sim::SamplerConfig& cfg) {
  MomentOracle out;
  for (Index i = 0; i < C.cols(); ++i) {
    sim::SamplerConfig run = cfg;
    run.seed = linalg::derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
    const Vec c = C.col(i);
    const sim::StationaryMoments m = sim::sample_moments(d, c, epsilon, models::fixed_point(d, c), run);
    out.entries.push_back({c, m.mean, m.scaled_cov()});
  }
  return out;
}

Mat recover_linear_closedform(const Mat& C, const Mat& means, const Mat& omega, const Vec& decay, double epsilon,
                              const RecoveryOptions& opt) {
  const Index n = C.rows(), k = C.cols();
  if (means.rows() != n || means.cols() != k || omega.rows() != n || omega.cols() != n || decay.size() != n)
    throw Error(Errc::dimension_mismatch, "recover_linear_closedform: inconsistent shapes");
  if (k < 1 || k >= n) throw Error(Errc::invalid_param, "recover_linear_closedform needs 1 <= k < n");
  // D M - C = A (I - B D^-1 A)^-1 B D^-1 C spans im A.
  const Mat image = decay.asDiagonal() * means - C;
  const Mat U = dominant_basis(image, k, opt.gap_ratio, "range of A");
  const Mat P = Mat::Identity(n, n) - U * U.transpose();
  Mat omega_d = omega * decay.asDiagonal();
  omega_d.diagonal().array() -= epsilon;

  Mat R(n, n + k), S(n, n + k);
  R << omega_d * P, C;
  S << omega * P, -means;
  Eigen::JacobiSVD<Mat> svd(R.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec s = svd.singularValues();
  if (!(s(n - 1) > linalg::kRankTol * s(0))) rank_fail("im (omega D - eps I) P + im C", s(n - 1) / s(0), linalg::kRankTol);
  const Mat Linv = svd.solve(S.transpose()).transpose();
  Eigen::FullPivLU<Mat> lu(Linv);
  if (!lu.isInvertible()) throw Error(Errc::singular, "recovered L^-1 is singular");
  return lu.inverse();
}

GameResult low_rank_game(const std::vector<Mat>& S, Index r, const GameOptions& opt) {
  if (S.empty() || r < 1) throw Error(Errc::invalid_param, "low_rank_game needs at least one matrix and r >= 1");
  const Index n = S.front().rows();
  for (const Mat& s : S)
    if (s.rows() != n || s.cols() != r || n < r) throw Error(Errc::dimension_mismatch, "low_rank_game: S_i must be n x r");
  Rng rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t m = S.size();
  for (int attempt = 1; attempt <= opt.max_retries; ++attempt) {
    Mat Sa = Mat::Zero(n, r), Sb = Mat::Zero(n, r);
    for (std::size_t j = 0; j < m; ++j) {
      Sa += normal(rng) * S[j];
      Sb += normal(rng) * S[j];
    }
    if (m == 1) Sa = S[0];
    const Mat T = linalg::pinv(Sa) * Sb;
    Eigen::EigenSolver<Mat> es(T);
    if (es.info() != Eigen::Success) continue;
    const Eigen::VectorXcd lam = es.eigenvalues();
    const double scale = std::max(lam.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    bool ok = lam.imag().cwiseAbs().maxCoeff() <= 1e-10 * scale;
    for (Index a = 0; ok && a < r; ++a)
      for (Index b = a + 1; b < r; ++b)
        if (std::abs(lam(a) - lam(b)) < opt.min_gap * scale) ok = false;
    if (!ok) continue;

    const Mat V = es.eigenvectors().real();
    Mat X = Sa * V;
    bool degenerate = false;
    for (Index j = 0; j < r; ++j) {
      const double nj = X.col(j).norm();
      if (!(nj > 0.0)) degenerate = true;
      else X.col(j) /= nj;
    }
    if (degenerate) continue;
    GameResult out;
    out.X = X;
    out.Y = linalg::pinv(X) * Sa;
    out.attempts = attempt;
    // S_i = sum_k d_k x_k y_k^T: least squares over the Khatri-Rao columns.
    Mat design(n * r, r);
    for (Index j = 0; j < r; ++j) {
      const Mat outer = X.col(j) * out.Y.row(j);
      design.col(j) = Eigen::Map<const Vec>(outer.data(), n * r);
    }
    const auto qr = design.colPivHouseholderQr();
    for (const Mat& s : S) out.diagonals.push_back(qr.solve(Eigen::Map<const Vec>(s.data(), n * r)));
    return out;
  }
  std::ostringstream os;
  os << "no separated real spectrum after " << opt.max_retries << " recombinations";
  throw Error(Errc::degenerate_spectrum, os.str());
}

NonlinearRecovery recover_nonlinear_closedform(const MomentOracle& oracle, Index r, const RecoveryOptions& opt) {
  oracle.validate();
  const Index n = oracle.n(), k = oracle.k();
  if (r < 1) throw Error(Errc::invalid_param, "r must be >= 1");
  if (k < r + 1) throw Error(Errc::invalid_param, "closed-form nonlinear recovery needs k >= r + 1 interventions");
  if (n <= 2 * r) throw Error(Errc::invalid_param, "closed-form nonlinear recovery needs n > 2r");
  const Mat I = Mat::Identity(n, n);

  Mat shifts(n, k);
  for (Index i = 0; i < k; ++i) shifts.col(i) = oracle.entries[i].xstar - oracle.entries[i].c;
  const Mat UA = dominant_basis(shifts, r, opt.gap_ratio, "span of x*_i - c_i");
  const Mat P = I - UA * UA.transpose();

  const double dt = opt.sampling_dt;
  if (!(dt >= 0.0 && dt < 1.0)) throw Error(Errc::invalid_param, "sampling_dt must be in [0, 1)");
  // ker(P W_i) = (I - B^T sigma'_[i] A^T / h) im A and P W_i P = P / (2 - dt).
  const double h = (2.0 - dt) / (1.0 - dt);
  auto structured = [&](const Mat& W) { return opt.project_structure ? Mat(W - P * W * P + P / (2.0 - dt)) : W; };

  std::optional<Rng> rot;
  if (opt.rotate_basis_seed) rot.emplace(*opt.rotate_basis_seed);
  std::vector<Mat> Z(k);
  for (Index i = 0; i < k; ++i) {
    Z[i] = linalg::trailing_singular_basis(P * structured(oracle.entries[i].W), r, opt.gap_ratio);
    if (rot) Z[i] = Z[i] * random_orthogonal(r, *rot);
  }

  NonlinearRecovery out;
  const Mat PZ0 = P * Z[0];
  out.S.resize(k);
  out.S[0] = Z[0];
  for (Index i = 1; i < k; ++i) {
    const Mat PZi = P * Z[i];
    if (linalg::numerical_rank(PZi) < r)
      throw Error(Errc::rank_deficient, "P_A^perp Z_i is not full column rank (n > 2r violated numerically)");
    out.S[i] = Z[i] * PZi.colPivHouseholderQr().solve(PZ0);
  }

  std::vector<Mat> diffs;
  for (Index i = 1; i < k; ++i) diffs.push_back(out.S[i] - out.S[0]);
  GameOptions gopt;
  gopt.seed = opt.seed;
  gopt.max_retries = opt.game_retries;
  const GameResult game = low_rank_game(diffs, r, gopt);
  Mat X = game.X;
  if (opt.project_structure) X = UA * (UA.transpose() * X);
  const Mat& G = game.Y;
  Eigen::JacobiSVD<Mat> gsvd(G);
  out.cond_G = gsvd.singularValues()(0) / gsvd.singularValues()(r - 1);
  if (!std::isfinite(out.cond_G) || out.cond_G > 1.0 / linalg::kRankTol)
    throw Error(Errc::rank_deficient, "recovered r x r factor is singular");
  const Mat Ginv = G.inverse();
  out.Ahat = linalg::pinv(X.transpose());

  // S_0 G^-1 = X U_0 - B^T / h in the game's scaling; its P_A^perp part gives
  // B P_A^perp, the X-coefficients give B P_A off its diagonal.
  const Mat S0G = out.S[0] * Ginv;
  const Mat Kperp = -h * P * S0G;
  const Mat T = linalg::pinv(X) * S0G;
  const Mat K = Kperp.transpose() - h * T.transpose() * X.transpose();

  // N = J_0 + I = Ahat diag(lambda) K + h Ahat diag(mu) X^T satisfies
  // (1 - dt) F(N) + dt N W N^T = (2 - dt) W - I with F(N) = N W + W N^T.
  // Linear in (lambda, mu) for dt = 0; otherwise the quadratic term is
  // iterated to a fixed point.
  const Mat W0 = structured(oracle.entries[0].W);
  std::vector<Mat> basis;
  for (Index j = 0; j < r; ++j) basis.push_back(out.Ahat.col(j) * K.row(j));
  for (Index j = 0; j < r; ++j) basis.push_back(h * out.Ahat.col(j) * X.col(j).transpose());
  const Mat design = (1.0 - dt) * lyapunov_design(basis, W0);
  Mat N = Mat::Zero(n, n);
  Vec coef;
  for (int it = 0; it < 50; ++it) {
    const Mat rhsM = (2.0 - dt) * W0 - I - dt * N * W0 * N.transpose();
    coef = solve_full_rank_ls(design, Eigen::Map<const Vec>(rhsM.data(), n * n), "Lyapunov fit of the Jacobian scales");
    Mat next = Mat::Zero(n, n);
    for (std::size_t j = 0; j < basis.size(); ++j) next += coef(static_cast<Index>(j)) * basis[j];
    const double change = (next - N).norm();
    N = next;
    if (dt == 0.0 || change <= 1e-14 * std::max(1.0, N.norm())) break;
  }
  const Vec lambda = coef.head(r), mu = coef.tail(r);
  if ((lambda.cwiseAbs().array() <= linalg::kRankTol * lambda.cwiseAbs().maxCoeff()).any())
    throw Error(Errc::rank_deficient, "Jacobian scale vanished");
  const Vec E = mu.cwiseQuotient(lambda);
  out.Bhat = K + h * E.asDiagonal() * X.transpose();

  out.lyapunov_residual = lyap_residual_n(N, W0, dt).norm();

  // X diag(E + D_i) G carries sigma'_[i]^-1 in the game's scaling.
  Mat diag_factors(r, k);
  diag_factors.col(0) = E;
  for (Index i = 1; i < k; ++i) diag_factors.col(i) = E + game.diagonals[static_cast<std::size_t>(i - 1)];
  Eigen::JacobiSVD<Mat> asvd(diag_factors, Eigen::ComputeFullV);
  out.alpha = asvd.matrixV().col(k - 1);
  out.alpha_sum = out.alpha.sum();
  const Mat common = -out.Bhat.transpose() * G / h;
  Mat combo = Mat::Zero(n, r);
  for (Index i = 0; i < k; ++i) combo += out.alpha(i) * (out.S[i] - common);
  out.alpha_residual = combo.norm() / out.S[0].norm();
  if (!(std::abs(out.alpha_sum) > opt.alpha_tol)) {
    std::ostringstream os;
    os << "alpha^T 1 = " << out.alpha_sum;
    throw Error(Errc::alpha_degenerate, os.str());
  }
  out.Bclosed = out.Bhat;
  if (opt.refine_sweeps > 0) {
    std::vector<Mat> Ws;
    for (const auto& e : oracle.entries) Ws.push_back(structured(e.W));
    // Start from the pipeline's B in intervention 0's scaling: N_0 = A-hat B-tilde.
    Mat Bt = lambda.asDiagonal() * K + h * mu.asDiagonal() * X.transpose();
    Mat At = UA * (UA.transpose() * out.Ahat);
    refine_factors(UA, At, Bt, Ws, dt, opt.refine_sweeps);
    out.Ahat = At;
    out.Bhat = Bt;
  }
  return out;
}

void Certificate::add(std::string name, CheckKind kind, double value, double tol, bool upper) {
  checks.push_back({std::move(name), kind, value, tol, upper});
}

bool Certificate::holds(CheckKind kind) const {
  bool any = false;
  for (const auto& c : checks) {
    if (c.kind != kind) continue;
    any = true;
    if (!c.passed()) return false;
  }
  return any;
}

bool Certificate::passed() const {
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed(); });
}

std::string_view to_string(CheckKind kind) {
  switch (kind) {
    case CheckKind::same_distribution: return "same_distribution";
    case CheckKind::distinct_drift: return "distinct_drift";
    case CheckKind::structure: return "structure";
  }
  return "unknown";
}

void write_certificate(std::ostream& os, const Certificate& cert) {
  os << "certificate " << cert.construction << ": " << (cert.passed() ? "PASS" : "FAIL") << '\n';
  for (const auto& c : cert.checks) {
    os << "  " << std::left << std::setw(24) << c.name << ' ' << std::setw(18) << to_string(c.kind) << ' '
       << std::scientific << std::setprecision(3) << c.value << (c.upper ? " <= " : " > ") << c.tol << "  "
       << (c.passed() ? "PASS" : "FAIL") << '\n';
    os.unsetf(std::ios::floatfield);
    os << std::right;
  }
}

LinearCounterexample counterexample_linear_adversarial(Index n, Index r, double q, std::uint64_t seed) {
  if (!(r >= 1 && n > r)) throw Error(Errc::invalid_param, "adversarial counterexample needs n > r >= 1");
  const double h = 1.0 / std::sqrt(2.0);
  Mat A = Mat::Zero(n, r);
  A.topRows(r) = h * Mat::Identity(r, r);
  const Mat B = A.transpose();
  LinearCounterexample out;
  out.L = A * B - Mat::Identity(n, n);
  out.omega = Mat::Identity(n, n);
  out.omega.diagonal().tail(n - r).setConstant(0.5);

  Mat Q = Mat::Zero(n, n);
  if (r >= 2) {
    Rng rng(seed);
    const Mat G = linalg::random_normal(r, r, rng);
    const Mat skew = G - G.transpose();
    Q.topLeftCorner(r, r) = q * skew / linalg::spectral_norm(skew);
  }
  out.Lhat = A * B + Q * out.omega.inverse() - Mat::Identity(n, n);
  out.interventions = Mat::Identity(n, n).rightCols(n - r);

  const Mat I = Mat::Identity(n, n);
  Certificate& cert = out.cert;
  cert.construction = "linear_adversarial";
  cert.add("lyapunov_L", CheckKind::same_distribution, linalg::lyapunov_residual(out.L, out.omega, I), 1e-10);
  cert.add("lyapunov_Lhat", CheckKind::same_distribution, linalg::lyapunov_residual(out.Lhat, out.omega, I), 1e-10);
  const Mat means_gap = out.Lhat.partialPivLu().solve(out.interventions) - out.L.partialPivLu().solve(out.interventions);
  cert.add("means_e_i_gt_r", CheckKind::same_distribution, means_gap.cwiseAbs().maxCoeff(), 1e-10);
  cert.add("lhat_hurwitz", CheckKind::structure, linalg::max_real_eigenvalue(out.Lhat), -linalg::kHurwitzMargin);
  cert.add("lhat_rank_gap", CheckKind::structure,
           std::abs(static_cast<double>(linalg::numerical_rank(out.Lhat + I) - r)), 0.0);
  cert.add("drift_distance", CheckKind::distinct_drift, (out.L - out.Lhat).norm(), 0.01, false);
  return out;
}

LinearCounterexample counterexample_linear_lower(const Mat& A, const Mat& B, const Mat& C, double q) {
  const Index n = A.rows(), r = A.cols();
  if (B.rows() != r || B.cols() != n || C.rows() != n) throw Error(Errc::dimension_mismatch, "counterexample_linear_lower shapes");
  if (!(q > 0.0)) throw Error(Errc::invalid_param, "q must be > 0");
  const Mat I = Mat::Identity(n, n);
  LinearCounterexample out;
  out.L = A * B - I;
  out.omega = linalg::solve_lyapunov(out.L, I);
  out.interventions = C;
  const Mat LinvC = out.L.partialPivLu().solve(C);

  const Mat kerAT = linalg::null_space_basis(A.transpose());
  Mat H(n, C.cols() + kerAT.cols());
  H << A * B * LinvC, kerAT;
  const Mat free = linalg::null_space_basis(H.transpose());
  if (free.cols() < 2) {
    std::ostringstream os;
    os << "only " << free.cols() << " directions orthogonal to im(A B L^-1 C) + ker A^T (need 2)";
    throw Error(Errc::rank_deficient, os.str());
  }
  const Vec u = free.col(0), v = free.col(1);
  const Mat Qstar = u * v.transpose() - v * u.transpose();
  const Mat dir = out.omega * B.transpose() * A.transpose() * Qstar * A * B;
  const double dn = linalg::spectral_norm(dir);
  if (!(dn > 1e-12)) throw Error(Errc::rank_deficient, "B^T A^T Q* A B vanished");
  double scale = q * (-linalg::max_real_eigenvalue(out.L)) / dn;
  out.Lhat = out.L + scale * dir;
  for (int halvings = 0; halvings < 60 && !linalg::is_hurwitz(out.Lhat); ++halvings) {
    scale *= 0.5;
    out.Lhat = out.L + scale * dir;
  }

  Certificate& cert = out.cert;
  cert.construction = "linear_lower";
  const Mat LhatInvC = out.Lhat.partialPivLu().solve(C);
  cert.add("means_preserved", CheckKind::same_distribution,
           (LhatInvC - LinvC).norm() / std::max(1.0, LinvC.norm()), 1e-9);
  const Mat cov_gap = (out.Lhat * out.omega + out.omega * out.Lhat.transpose()) -
                      (out.L * out.omega + out.omega * out.L.transpose());
  cert.add("covariance_preserved", CheckKind::same_distribution, cov_gap.norm(), 1e-9);
  cert.add("lhat_hurwitz", CheckKind::structure, linalg::max_real_eigenvalue(out.Lhat), -linalg::kHurwitzMargin);
  cert.add("lhat_rank_gap", CheckKind::structure,
           std::abs(static_cast<double>(linalg::numerical_rank(out.Lhat + I) - r)), 0.0);
  cert.add("drift_distance", CheckKind::distinct_drift, (out.Lhat - out.L).norm(), 1e-6, false);
  return out;
}

OdeCounterexample counterexample_ode(const NonlinearDrift& d, const Mat& C, const Vec& b) {
  d.check_shapes();
  const Index n = d.n(), r = d.r();
  if (C.rows() != n || b.size() != r) throw Error(Errc::dimension_mismatch, "counterexample_ode shapes");
  Mat AC(n, r + C.cols());
  AC << d.A, C;
  const Mat free = linalg::null_space_basis(AC.transpose());
  if (free.cols() < 1) throw Error(Errc::rank_deficient, "[A C] spans R^n: no direction orthogonal to A and C");
  OdeCounterexample out;
  out.u = free.col(0);
  out.Bhat = d.B + b * out.u.transpose();

  NonlinearDrift alt = d;
  alt.B = out.Bhat;
  double worst = 0.0;
  for (Index i = 0; i < C.cols(); ++i) {
    const Vec c = C.col(i);
    const Vec xs = models::fixed_point(d, c);
    worst = std::max(worst, models::eval_drift(alt, xs, c).norm());
  }
  Certificate& cert = out.cert;
  cert.construction = "ode";
  cert.add("fixed_points_preserved", CheckKind::same_distribution, worst, 1e-9);
  double gap = 0.0;
  try {
    gap = fit::align_up_to_perm_scale(out.Bhat.transpose(), d.B.transpose()).err;
  } catch (const Error& e) {
    if (e.code() != Errc::degenerate_column) throw;
    gap = 2.0;
  }
  cert.add("b_distance_mod_perm_scale", CheckKind::distinct_drift, gap, 0.01, false);
  return out;
}

}  // namespace sdeid::identify
