#include "sdeid/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>

namespace sdeid::linalg {

namespace {

using Complex = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

void require_square(const Mat& M, const char* what) {
  if (M.rows() != M.cols()) {
    std::ostringstream os;
    os << what << " must be square, got " << M.rows() << "x" << M.cols();
    throw Error(Errc::dimension_mismatch, os.str());
  }
}

// Solves T Y + Y T^H = F for upper-triangular T, column by column from the
// right: column j only couples to columns k > j through conj(T(j, k)).
CMat solve_triangular_lyapunov(const CMat& T, const CMat& F) {
  const Index n = T.rows();
  CMat Y = CMat::Zero(n, n);
  CVec rhs(n);
  for (Index j = n - 1; j >= 0; --j) {
    rhs = F.col(j);
    for (Index k = j + 1; k < n; ++k) rhs -= std::conj(T(j, k)) * Y.col(k);
    const Complex shift = std::conj(T(j, j));
    for (Index i = n - 1; i >= 0; --i) {
      Complex acc = rhs(i);
      for (Index k = i + 1; k < n; ++k) acc -= T(i, k) * Y(k, j);
      Y(i, j) = acc / (T(i, i) + shift);
    }
  }
  return Y;
}

// Complex Schur form from the real one: every 2x2 block of the quasi-
// triangular factor is split by a unitary rotation (much faster than a
// complex QR iteration on the whole matrix).
void complex_schur(const Mat& L, CMat& T, CMat& U) {
  Eigen::RealSchur<Mat> rs(L);
  if (rs.info() != Eigen::Success) throw Error(Errc::no_convergence, "Schur decomposition failed");
  T = rs.matrixT().cast<Complex>();
  U = rs.matrixU().cast<Complex>();
  const Index n = L.rows();
  for (Index m = n - 1; m >= 1; --m) {
    if (T(m, m - 1) == Complex(0.0)) continue;
    const Complex a = T(m - 1, m - 1), b = T(m - 1, m), c = T(m, m - 1), d = T(m, m);
    const Complex half_tr = 0.5 * (a + d);
    const Complex disc = std::sqrt(0.25 * (a - d) * (a - d) + b * c);
    const Complex mu = half_tr + disc - d;
    const double r = std::hypot(std::abs(mu), std::abs(c));
    const Complex cs = mu / r, sn = c / r;
    // G = [conj(cs) conj(sn); -sn cs]
    for (Index j = m - 1; j < n; ++j) {
      const Complex x = T(m - 1, j), y = T(m, j);
      T(m - 1, j) = std::conj(cs) * x + std::conj(sn) * y;
      T(m, j) = -sn * x + cs * y;
    }
    for (Index i = 0; i <= m; ++i) {
      const Complex x = T(i, m - 1), y = T(i, m);
      T(i, m - 1) = cs * x + sn * y;
      T(i, m) = -std::conj(sn) * x + std::conj(cs) * y;
    }
    for (Index i = 0; i < n; ++i) {
      const Complex x = U(i, m - 1), y = U(i, m);
      U(i, m - 1) = cs * x + sn * y;
      U(i, m) = -std::conj(sn) * x + std::conj(cs) * y;
    }
    T(m, m - 1) = 0.0;
  }
}

}  // namespace

Projector Projector::complement() const {
  return Projector(Mat::Identity(P_.rows(), P_.cols()) - P_);
}

double lyapunov_residual(const Mat& L, const Mat& X, const Mat& Q) {
  return (L * X + X * L.transpose() + Q).norm();
}

Mat solve_lyapunov(const Mat& L, const Mat& Q) {
  require_square(L, "L");
  require_square(Q, "Q");
  if (L.rows() != Q.rows()) throw Error(Errc::dimension_mismatch, "L and Q sizes differ");
  const Index n = L.rows();
  if (n == 0) return Mat(0, 0);
  if (!L.allFinite() || !Q.allFinite()) throw Error(Errc::non_finite, "Lyapunov input not finite");

  CMat T, U;
  complex_schur(L, T, U);
  for (Index i = 0; i < n; ++i) {
    if (T(i, i).real() >= -kHurwitzMargin) {
      std::ostringstream os;
      os << "eigenvalue " << T(i, i) << " has real part >= " << -kHurwitzMargin;
      throw Error(Errc::not_hurwitz, os.str());
    }
  }

  // L = U T U^H and L^T = U T^H U^H, so with X = U Y U^H the equation becomes
  // T Y + Y T^H = -U^H Q U.
  auto solve = [&](const Mat& rhs) -> Mat {
    const CMat F = -(U.adjoint() * rhs.cast<Complex>() * U);
    const CMat Y = solve_triangular_lyapunov(T, F);
    Mat X = (U * Y * U.adjoint()).real();
    return 0.5 * (X + X.transpose());
  };

  const double target = 1e-8 * std::max(1.0, Q.norm());
  Mat X = solve(Q);
  double res = lyapunov_residual(L, X, Q);
  if (res > 1e-3 * target) {
    const Mat R = L * X + X * L.transpose() + Q;
    const Mat Xr = X + solve(R);
    const double res2 = lyapunov_residual(L, Xr, Q);
    if (res2 < res) {
      X = Xr;
      res = res2;
    }
  }
  if (!(res <= target)) {
    std::ostringstream os;
    os << "Lyapunov residual " << res << " exceeds " << target;
    throw Error(Errc::no_convergence, os.str());
  }
  return X;
}

Vec singular_values_padded(const Mat& M) {
  Vec s = Vec::Zero(M.cols());
  if (M.size() == 0) return s;
  Eigen::JacobiSVD<Mat> svd(M);
  const Vec& sv = svd.singularValues();
  s.head(sv.size()) = sv;
  return s;
}

Index numerical_rank(const Mat& M, double rel_tol) {
  if (M.size() == 0) return 0;
  Eigen::JacobiSVD<Mat> svd(M);
  const Vec& s = svd.singularValues();
  const double smax = s.size() ? s(0) : 0.0;
  if (smax == 0.0) return 0;
  return static_cast<Index>((s.array() > rel_tol * smax).count());
}

Projector range_projector(const Mat& M, double rel_tol) {
  const Index n = M.rows();
  if (M.cols() == 0 || n == 0) return Projector(Mat::Zero(n, n));
  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeThinU);
  const Vec& s = svd.singularValues();
  const double smax = s(0);
  Index rank = 0;
  if (smax > 0.0) rank = static_cast<Index>((s.array() > rel_tol * smax).count());
  const Mat Ur = svd.matrixU().leftCols(rank);
  Mat P = Ur * Ur.transpose();
  return Projector(0.5 * (P + P.transpose()));
}

Mat null_space_basis(const Mat& M, std::optional<Index> expected_dim, double rel_tol) {
  const Index n = M.cols();
  Index rank = 0;
  Mat V = Mat::Identity(n, n);
  if (M.rows() > 0 && n > 0) {
    Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullV);
    const Vec& s = svd.singularValues();
    const double smax = s(0);
    if (smax > 0.0) rank = static_cast<Index>((s.array() > rel_tol * smax).count());
    V = svd.matrixV();
  }
  const Index dim = n - rank;
  if (expected_dim && *expected_dim != dim) {
    std::ostringstream os;
    os << "null space has numerical dimension " << dim << ", expected " << *expected_dim;
    throw Error(Errc::dimension_mismatch, os.str());
  }
  return V.rightCols(dim);
}

Mat trailing_singular_basis(const Mat& M, Index dim, double min_gap_ratio) {
  const Index n = M.cols();
  if (dim < 0 || dim > n) throw Error(Errc::dimension_mismatch, "requested dimension out of range");
  if (dim == 0) return Mat(n, 0);
  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullV);
  Vec s = Vec::Zero(n);
  s.head(svd.singularValues().size()) = svd.singularValues();
  if (dim < n) {
    const double kept = s(n - dim - 1);
    const double dropped = s(n - dim);
    if (!(kept > 0.0) || (dropped > 0.0 && kept / dropped < min_gap_ratio)) {
      std::ostringstream os;
      os << "singular value gap " << kept << " / " << dropped << " below required ratio "
         << min_gap_ratio;
      throw Error(Errc::rank_deficient, os.str());
    }
  }
  return svd.matrixV().rightCols(dim);
}

Mat pinv(const Mat& M, double rel_tol) {
  if (M.size() == 0) return Mat::Zero(M.cols(), M.rows());
  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& s = svd.singularValues();
  const double smax = s(0);
  Vec inv = Vec::Zero(s.size());
  for (Index i = 0; i < s.size(); ++i) {
    if (smax > 0.0 && s(i) > rel_tol * smax) inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

double spectral_norm(const Mat& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(M);
  return svd.singularValues()(0);
}

double max_real_eigenvalue(const Mat& L) {
  require_square(L, "L");
  if (L.rows() == 0) return -std::numeric_limits<double>::infinity();
  Eigen::EigenSolver<Mat> es(L, false);
  if (es.info() != Eigen::Success) throw Error(Errc::no_convergence, "eigenvalue solver failed");
  return es.eigenvalues().real().maxCoeff();
}

bool is_hurwitz(const Mat& L, double margin) { return max_real_eigenvalue(L) < -margin; }

Mat clip_spectral_norm(const Mat& M, double bound) {
  const double s = spectral_norm(M);
  if (s <= bound || s == 0.0) return M;
  return M * (bound / s);
}

Mat random_normal(Index rows, Index cols, Rng& rng, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  Mat M(rows, cols);
  // Fill row-major so that the draw order matches the serialized layout.
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) M(i, j) = normal(rng);
  return M;
}

Mat random_stiefel(Index n, Index r, Rng& rng) {
  if (r > n) throw Error(Errc::dimension_mismatch, "Stiefel requires r <= n");
  const Mat G = random_normal(n, r, rng);
  Eigen::HouseholderQR<Mat> qr(G);
  Mat Q = qr.householderQ() * Mat::Identity(n, r);
  const Mat R = qr.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  for (Index j = 0; j < r; ++j)
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  return Q;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace sdeid::linalg
