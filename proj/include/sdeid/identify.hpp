#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sdeid/fit.hpp"
#include "sdeid/simulate.hpp"

namespace sdeid::identify {

// Closed-form recovery from moments and explicit non-identifiability
// constructions. Every genericity failure is a typed Error
// (rank_deficient, degenerate_spectrum, alpha_degenerate); callers resample.

struct RecoveryOptions {
  // Required ratio between the smallest retained and the largest discarded
  // singular value in every "dimension r" / "rank n - r" decision. Exact
  // oracles clear 1e3 easily; simulated moments need a smaller value.
  double gap_ratio = 1e3;
  double alpha_tol = 1e-9;
  std::uint64_t seed = 0;  // low-rank game recombination weights
  int game_retries = 20;
  // When set, every null-space basis Z_i is multiplied by a random orthogonal
  // matrix drawn from this seed. Recovery must not depend on it.
  std::optional<std::uint64_t> rotate_basis_seed;
  // Use the model identities P W_i P = P / 2 (P the projector onto ker A^T)
  // and im X = im A-hat = im A instead of their noisy estimates. Exact on
  // oracle moments; removes most of the sampling noise from simulated ones.
  bool project_structure = true;
  // Step of the Euler-Maruyama sampler that produced the moments (0 for the
  // continuous-time limit). The stationary covariance of the discretized
  // linearization solves J W + W J^T + dt J W J^T + I = 0, and every identity
  // below is used in that form.
  double sampling_dt = 0.0;
  // Alternating least squares after the closed form: the Jacobians
  // A-hat diag(s_i) B-hat - I of all interventions are fitted to their
  // Lyapunov equations, with A-hat kept inside the observed range of A.
  // Pools the noise of every W_i. Oracle inputs are unchanged by it.
  int refine_sweeps = 0;
};

/// One intervention's zero-noise moments: shift c, fixed point x* and the
/// scaled covariance W = lim Sigma / eps.
struct OracleEntry {
  Vec c, xstar;
  Mat W;
};

struct MomentOracle {
  std::vector<OracleEntry> entries;

  Index k() const { return static_cast<Index>(entries.size()); }
  Index n() const { return entries.empty() ? 0 : entries.front().c.size(); }
  void validate() const;
};

/// Exact oracle from the linearization at each fixed point.
MomentOracle exact_oracle(const models::NonlinearDrift& d, const Mat& C);

/// Oracle estimated by Euler-Maruyama at noise level `epsilon`; intervention i
/// uses seed derive_seed(cfg.seed, i) and starts at its fixed point.
MomentOracle simulated_oracle(const models::NonlinearDrift& d, const Mat& C, double epsilon,
                              const sim::SamplerConfig& cfg);

/// L = A B - D from k = r interventions: means M = -L^-1 C, stationary
/// covariance omega, known decay D and noise level eps. Uses
/// omega P = L^-1 (omega D - eps I) P with P the projector onto ker A^T,
/// together with L^-1 C = -M, and solves for L^-1 by least squares.
Mat recover_linear_closedform(const Mat& C, const Mat& means, const Mat& omega, const Vec& decay,
                              double epsilon, const RecoveryOptions& opt = {});

struct GameOptions {
  std::uint64_t seed = 0;
  int max_retries = 20;
  double min_gap = 1e-6;  // relative eigenvalue separation
};

struct GameResult {
  Mat X;  // n x r, unit columns
  Mat Y;  // r x r
  std::vector<Vec> diagonals;  // least-squares D_i with X diag(D_i) Y ~ S_i
  int attempts = 0;
};

/// Recovers X (columns) and Y (rows) up to permutation and scaling from
/// S_i = X D_i Y with unknown diagonal D_i, by diagonalizing
/// pinv(sum a_j S_j) (sum b_j S_j) for random weights a, b. Throws
/// `degenerate_spectrum` when every attempt has eigenvalues closer than
/// `min_gap` (relative) or a complex pair.
GameResult low_rank_game(const std::vector<Mat>& S, Index r, const GameOptions& opt = {});

struct NonlinearRecovery {
  Mat Ahat;  // A Lambda1
  Mat Bhat;  // Lambda2 B
  Vec alpha;  // unit vector with sum_i alpha_i sigma'_[i]^-1 = 0
  double alpha_sum = 0.0;
  double alpha_residual = 0.0;  // |sum_i alpha_i (S_i - R)| / |S_0|, R the common term
  double lyapunov_residual = 0.0;  // intervention 0's equation at the recovered Jacobian
  double cond_G = 0.0;  // condition number of the recovered r x r factor
  Mat Bclosed;  // B-hat before refinement
  std::vector<Mat> S;  // Z_i M_i
};

/// Recovers A and B up to permutation and scaling from k >= r + 1 zero-noise
/// moment pairs when n > 2r:
///  - P_A from the span of x*_i - c_i, and Z_i spanning ker(P_A^perp W_i);
///  - M_i aligning P_A^perp Z_i with P_A^perp Z_0, S_i = Z_i M_i;
///  - the low-rank game on S_i - S_0 = X (U_i - U_0) G, X = (A^+)^T,
///    U_i = sigma'_[i]^-1, G = sigma'_[0] A^T A Q_0;
///  - B from S_0 = X U_0 G - B^T G / 2 up to one unknown diagonal, which is
///    fitted (linearly) to intervention 0's Lyapunov equation.
NonlinearRecovery recover_nonlinear_closedform(const MomentOracle& oracle, Index r, const RecoveryOptions& opt = {});

// Certificates list named checks with residual and tolerance.

enum class CheckKind { same_distribution, distinct_drift, structure };

struct CertificateCheck {
  std::string name;
  CheckKind kind = CheckKind::same_distribution;
  double value = 0.0;
  double tol = 0.0;
  bool upper = true;  // pass when value <= tol; otherwise when value > tol
  bool passed() const { return upper ? value <= tol : value > tol; }
};

struct Certificate {
  std::string construction;
  std::vector<CertificateCheck> checks;

  void add(std::string name, CheckKind kind, double value, double tol, bool upper = true);
  /// All checks of the given kind pass (and at least one exists).
  bool holds(CheckKind kind) const;
  bool passed() const;
};

std::string_view to_string(CheckKind kind);
/// One line per check: name, kind, residual, comparison, tolerance, PASS/FAIL.
void write_certificate(std::ostream& os, const Certificate& cert);

struct LinearCounterexample {
  Mat L, Lhat, omega;
  Mat interventions;  // n x k
  Certificate cert;
};

/// A = B^T = [I_r / sqrt 2; 0], D = I, omega = diag(I_r, I_{n-r} / 2) and
/// L-hat = A B + Q omega^-1 - I for a random skew Q of spectral norm q on the
/// top-left block. Interventions e_i, i > r, cannot tell L from L-hat. With
/// r = 1 (or q = 0) Q vanishes and the distinct-drift check fails.
LinearCounterexample counterexample_linear_adversarial(Index n, Index r, double q = 0.1, std::uint64_t seed = 0);

/// For k <= r - 2 interventions and D = I: u, v orthogonal to im(A B L^-1 C)
/// and ker A^T, Q* = u v^T - v u^T, L-hat = L + omega B^T A^T Q* A B, scaled so
/// |L-hat - L| = q * (stability margin of L) and halved until Hurwitz.
/// Throws `rank_deficient` when no such u, v exist.
LinearCounterexample counterexample_linear_lower(const Mat& A, const Mat& B, const Mat& C, double q = 0.1);

struct OdeCounterexample {
  Mat Bhat;
  Vec u;
  Certificate cert;
};

/// B-hat = B + b u^T with u a unit vector orthogonal to im A and every c_i:
/// all fixed points of the noiseless dynamics are unchanged. Throws
/// `rank_deficient` when [A C] spans R^n.
OdeCounterexample counterexample_ode(const models::NonlinearDrift& d, const Mat& C, const Vec& b);

}  // namespace sdeid::identify
