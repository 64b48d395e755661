#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>

#include "sdeid/error.hpp"

namespace sdeid {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

namespace linalg {

// Relative singular-value cutoffs. Every rank decision in the library goes
// through one of these unless the caller passes its own.
inline constexpr double kRankTol = 1e-9;
inline constexpr double kPinvTol = 1e-12;
inline constexpr double kHurwitzMargin = 1e-12;

/// Orthogonal projector onto a subspace. Symmetric and idempotent to 1e-10.
class Projector {
 public:
  Projector() = default;
  explicit Projector(Mat P) : P_(std::move(P)) {}

  const Mat& matrix() const { return P_; }
  Index dim() const { return P_.rows(); }
  /// Trace of P, i.e. the subspace dimension.
  double rank() const { return P_.trace(); }
  /// I - P.
  Projector complement() const;

  Vec operator*(const Vec& x) const { return P_ * x; }
  Mat operator*(const Mat& X) const { return P_ * X; }

 private:
  Mat P_;
};

/// Solves L X + X L^T + Q = 0 for Hurwitz L by complex Schur reduction
/// (Bartels-Stewart with a triangular factor). The result is symmetrized.
///
/// Throws `not_hurwitz` when any eigenvalue has real part >= -1e-12 and
/// `no_convergence` if the residual exceeds 1e-8 max(1, |Q|_F) after one
/// step of iterative refinement.
Mat solve_lyapunov(const Mat& L, const Mat& Q);

/// Residual |L X + X L^T + Q|_F.
double lyapunov_residual(const Mat& L, const Mat& X, const Mat& Q);

Projector range_projector(const Mat& M, double rel_tol = kRankTol);

/// Orthonormal basis of the right null space. With `expected_dim`, a
/// numerical dimension different from it throws `dimension_mismatch`.
Mat null_space_basis(const Mat& M, std::optional<Index> expected_dim = std::nullopt,
                     double rel_tol = kRankTol);

/// The `dim` right singular vectors with smallest singular values, provided the
/// singular value just above them is at least `min_gap_ratio` times the largest
/// one discarded (rank_deficient otherwise). Used where noise means there is no
/// exact null space but the expected dimension is known.
Mat trailing_singular_basis(const Mat& M, Index dim, double min_gap_ratio);

Mat pinv(const Mat& M, double rel_tol = kPinvTol);

double spectral_norm(const Mat& M);

Index numerical_rank(const Mat& M, double rel_tol = kRankTol);

/// All singular values of M, descending, padded with zeros to length cols(M).
Vec singular_values_padded(const Mat& M);

/// Largest real part over the spectrum of a square matrix.
double max_real_eigenvalue(const Mat& L);

bool is_hurwitz(const Mat& L, double margin = kHurwitzMargin);

/// Scales M down (never up) so that its spectral norm is at most `bound`.
Mat clip_spectral_norm(const Mat& M, double bound);

Mat random_normal(Index rows, Index cols, Rng& rng, double stddev = 1.0);

/// Uniformly distributed n x r matrix with orthonormal columns (QR of a
/// Gaussian matrix with sign-corrected R).
Mat random_stiefel(Index n, Index r, Rng& rng);

/// Independent seed for sub-stream `stream` of `base` (restarts, seeds,
/// interventions), so parallel work never shares an RNG.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace linalg
}  // namespace sdeid
