#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "sdeid/losses.hpp"
#include "sdeid/simulate.hpp"

namespace sdeid::fit {

struct FitConfig {
  double lr = 0.005;
  Index iters = 3000;
  Index restarts = 20;
  std::uint64_t seed = 0;
  double l1_weight = 0.0;  // penalty on |A|_1 + |B|_1

  void validate() const;
};

/// Writes the gradient into `grad` (resized by the callee) and returns the value.
using Objective = std::function<double(const Vec& x, Vec& grad)>;
/// Maps an iterate back into the feasible set in place.
using Projection = std::function<void(Vec& x)>;

struct AdamResult {
  Vec params;
  std::vector<double> loss_trace;  // iters + 1 values: at the init and after every step
};

/// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8 for cfg.iters steps,
/// applying `project` after every step. Throws `non_finite` as soon as the loss
/// or gradient stops being finite.
AdamResult adam_minimize(const Objective& f, Vec init, const FitConfig& cfg, const Projection& project = {});

/// Gradient of `f` at `x`.
Vec gradient(const Objective& f, const Vec& x);

/// Largest relative gap between <grad f, d> and the central difference of f
/// along `n_dirs` random unit directions d.
double finite_difference_check(const Objective& f, const Vec& x, Rng& rng, int n_dirs = 20, double h = 1e-6);

struct Alignment {
  double err = 0.0;          // in [0, sqrt(2)]
  std::vector<Index> perm;   // column j of the estimate matches column perm[j] of the truth
  Vec scales;                // estimate column j ~ scales(j) * truth column perm[j]
};

/// Distance between column sets modulo permutation and nonzero rescaling:
/// both sides are normalized to unit columns, the column cost min(|a - b|,
/// |a + b|) is matched by the Hungarian algorithm, and the error is
/// sqrt(sum of matched costs^2) / sqrt(r). Throws `degenerate_column` for a
/// column of norm < 1e-12.
Alignment align_up_to_perm_scale(const Mat& Ahat, const Mat& A);

/// Minimum-cost perfect matching on a square matrix; result[i] is the column
/// assigned to row i.
std::vector<Index> hungarian(const Mat& cost);

struct RecoveryResult {
  Mat Ahat, Bhat;
  Vec Dhat;                // diagonal of D-hat; empty for nonlinear fits
  models::Activation act = models::Activation::logistic();  // fitted activation (nonlinear fits)
  double train_loss = 0.0;
  double align_err_A = 0.0, align_err_B = 0.0;
  double drift_err = 0.0;
  Index best_restart = 0;
  std::vector<double> restart_losses;  // final train loss per restart (inf when a restart failed)
};

struct LinearData {
  Mat C;      // n x k
  Mat means;  // n x k
  Mat omega;  // stationary covariance (shared by all interventions)
  double epsilon = 1.0;
  Vec decay;  // used as the known D when decay is not learned
};

/// loss_linear (+ L1) as a function of the flat vector [vec A, vec B, u] with
/// D = I + softplus(u) when the decay is learned. Projection clips |A|, |B|
/// to 0.99, which keeps AB - D Hurwitz.
class LinearProblem {
 public:
  LinearProblem(LinearData data, Index r, bool learn_decay, double l1_weight = 0.0);

  Index size() const;
  double value(const Vec& x, Vec* grad) const;
  Objective objective() const;
  Projection projection() const;
  Vec pack(const models::LinearDrift& d) const;
  models::LinearDrift unpack(const Vec& x) const;
  Vec random_start(Rng& rng) const;
  const LinearData& data() const { return data_; }

 private:
  LinearData data_;
  Index n_, r_;
  bool learn_decay_;
  double l1_;
};

/// Minimizes loss_linear over A-hat, B-hat (and D-hat when `learn_decay`).
/// Returns the restart with the lowest final loss; errors are filled in
/// against `truth` when given (drift_err = |L-hat - L|_F / |L|_F).
RecoveryResult fit_linear(const LinearData& data, Index r, bool learn_decay, const FitConfig& cfg,
                          const models::LinearDrift* truth = nullptr);

struct NonlinearData {
  Mat C;  // n x k
  std::vector<loss::InterventionMoments> moments;
};

/// `act_hidden` > 0 fits a learnable activation of that hidden width;
/// 0 keeps `fixed_act` fixed.
struct NonlinearModelSpec {
  Index act_hidden = 20;
  models::Activation fixed_act = models::Activation::logistic();
};

/// loss_nonlinear (+ L1) over [vec A, vec B, activation params]; projection
/// clips |A|, |B| to 1.
class NonlinearProblem {
 public:
  NonlinearProblem(NonlinearData data, Index r, models::Activation act, double l1_weight = 0.0);

  Index size() const;
  double value(const Vec& x, Vec* grad) const;
  Objective objective() const;
  Projection projection() const;
  Vec pack(const models::NonlinearDrift& d) const;
  models::NonlinearDrift unpack(const Vec& x) const;
  /// Random A, B and, for a learnable activation, freshly seeded weights.
  Vec random_start(Rng& rng) const;

 private:
  NonlinearData data_;
  Index n_, r_;
  models::Activation act_;
  double l1_;
};

/// Minimizes loss_nonlinear with restarts. drift_err is the relative Frobenius
/// error of the drift Jacobians at the observed means.
RecoveryResult fit_nonlinear(const NonlinearData& data, Index r, const NonlinearModelSpec& model, const FitConfig& cfg,
                             const models::NonlinearDrift* truth = nullptr);

/// Exact moments for every column of C: means -L^-1 c_i and the shared
/// stationary covariance at noise `eps`.
LinearData linear_oracle_data(const models::LinearDrift& d, const Mat& C, double eps);
/// Zero-noise moments (x*_i, W_i) from the linearization at each fixed point.
NonlinearData nonlinear_oracle_data(const models::NonlinearDrift& d, const Mat& C);
/// The same quantities estimated by sample_moments at noise `eps`; chain i
/// uses seed derive_seed(cfg.seed, i) and starts at its fixed point.
NonlinearData nonlinear_sampled_data(const models::NonlinearDrift& d, const Mat& C, double eps,
                                     const sim::SamplerConfig& cfg);

struct KdsData {
  Mat C;                     // n x k
  std::vector<Mat> samples;  // one batch per intervention, samples as rows
  double epsilon = 0.1;
  loss::KernelSpec kernel;
};

/// Mean over interventions of kds_loss (+ L1) over [vec A, vec B, activation
/// params] for v(x) = A sigma(B x) - x; projection clips |A|, |B| to 1.
class KdsProblem {
 public:
  KdsProblem(KdsData data, Index r, models::Activation act, double l1_weight = 0.0);

  Index size() const;
  double value(const Vec& x, Vec* grad) const;
  Objective objective() const;
  Projection projection() const;
  Vec pack(const models::NonlinearDrift& d) const;
  models::NonlinearDrift unpack(const Vec& x) const;
  Vec random_start(Rng& rng) const;

 private:
  KdsData data_;
  Index n_, r_;
  models::Activation act_;
  double l1_;
};

/// Minimizes the KDS objective with restarts; align errors against `truth`
/// when given (drift_err unset).
RecoveryResult fit_kds(const KdsData& data, Index r, const NonlinearModelSpec& model, const FitConfig& cfg,
                       const models::NonlinearDrift* truth = nullptr);

/// Held-out evaluation: for every column c of `C_test`, samples of the fitted
/// and the true SDE at noise `epsilon` compared by mse_distribution, averaged
/// over interventions. Both chains of intervention i start at c and use seed
/// derive_seed(cfg.seed, i).
double kds_generalization_mse(const models::NonlinearDrift& fitted, const models::NonlinearDrift& truth,
                              const Mat& C_test, double epsilon, const sim::SamplerConfig& cfg);

/// Init used by every fit: iid N(0, 1) / sqrt(n r) entries clipped to spectral norm 0.9.
Mat random_init(Index rows, Index cols, Index n, Index r, Rng& rng);

double softplus(double u);
double softplus_inverse(double y);

// Fit reports: one CSV row per (seed, k) with the columns below.
struct FitReportRow {
  std::uint64_t seed = 0;
  Index k = 0, r = 0, n = 0, restarts = 0;
  double train_loss = 0.0, drift_err = 0.0, align_err_A = 0.0, align_err_B = 0.0;
};
inline constexpr const char* kFitReportHeader = "seed,k,r,n,restarts,train_loss,drift_err,align_err_A,align_err_B";
void write_fit_report_row(std::ostream& os, const FitReportRow& row);

}  // namespace sdeid::fit
