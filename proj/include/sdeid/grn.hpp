#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "sdeid/fit.hpp"
#include "sdeid/losses.hpp"
#include "sdeid/simulate.hpp"

namespace sdeid::grn {

using BoolMat = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Gene-regulatory-network simulator with mRNA x and protein p per gene:
//
//   dx_i = (f_i(p_R[i]) - l_x x_i) dt + s sqrt(x_i) dB
//   dp_i = (rho x_i - l_p p_i) dt + s sqrt(p_i) dB'
//
// with Hill kinetics
//
//   f_i = (basal + sum_act kappa q_a / (1 + q_a)) * prod_rep 1 / (1 + q_r),
//   q = (p / theta)^h.
//
// A gene without activators transcribes at basal + `unregulated` instead of
// the activator sum, so a pure repressor target is on unless repressed.

struct Edge {
  Index src = 0, dst = 0;
  bool activating = true;
  double coefficient = 2.0;  // kappa
  double exponent = 2.0;     // h
};

struct GRNRates {
  double rho_translate = 1.0;
  double l_x = 1.0;
  double l_p = 1.0;
  double noise = 0.1;  // s
  double basal = 0.01;
  double threshold = 1.0;  // theta
  double unregulated = 0.5;
};

struct GRNSpec {
  std::vector<std::string> names;
  std::vector<Edge> edges;
  GRNRates rates;

  Index n() const { return static_cast<Index>(names.size()); }
  void validate() const;
  /// R[i]: indices of the genes regulating gene i, in edge order.
  std::vector<std::vector<Index>> regulators() const;
  /// truth(i, j) = edge j -> i, the orientation of extract_grn.
  BoolMat adjacency() const;
  /// Fraction of true off-diagonal entries: the expected AUPRC of random scores.
  double edge_density() const;
  /// f_i for every gene at protein levels p (no intervention).
  Vec transcription(const Vec& p) const;
};

// Network files:
//
//   # comment
//   genes g0 g1 g2          (optional; otherwise names in order of appearance)
//   rho = 1.0               (rate block: rho, l_x, l_p, s, basal, theta, unregulated)
//   g0 g1 +                 (edge src dst sign [kappa [h]])
//   g1 g2 - 2.0 2
//
// Rate lines must come before the first edge.
GRNSpec parse_grn(std::istream& is);
GRNSpec read_grn_file(const std::string& path);
void write_grn(std::ostream& os, const GRNSpec& spec);

/// Built-in networks: "cycle" (5 genes), "fanout" (6), "feedforward" (6) and
/// "mixed12" (12 genes combining the three motifs).
GRNSpec synthetic_network(std::string_view kind);
std::vector<std::string> synthetic_network_names();

struct InterventionRegime {
  Index k = 0;
  std::vector<Index> targets;  // I_k; empty for the observational regime
  double shift = 20.0;

  void validate(Index n) const;
  /// 0 on intervened genes, 1 elsewhere.
  Vec mask(Index n) const;
  /// shift * sum_{j in I_k} e_j.
  Vec shift_vector(Index n) const;
};

/// Observational regime followed by one single-gene overexpression per target.
std::vector<InterventionRegime> single_gene_regimes(const std::vector<Index>& genes, double shift = 20.0);

/// Particle ensembles: every row of the initial batch is integrated for
/// `steps` Euler-Maruyama steps and its terminal state is returned. One RNG
/// stream per call, consumed particle by particle.
struct EnsembleConfig {
  double dt = 0.01;
  Index steps = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Integrates the network under `regime` and returns the mRNA coordinates.
/// `init` holds n columns (mRNA; proteins start at rho x / l_p) or 2n columns
/// (mRNA then protein). Intervened genes have f_j = 0 and +shift on dx_j/dt.
/// States are clamped at 0 after every step. `protein` receives the terminal
/// protein levels when given.
Mat simulate_grn(const GRNSpec& spec, const InterventionRegime& regime, const EnsembleConfig& cfg, const Mat& init,
                 Mat* protein = nullptr);

/// `particles` observational cells started at the basal steady state x = basal / l_x.
Mat observational_batch(const GRNSpec& spec, Index particles, const EnsembleConfig& cfg);

/// rho_0 from observational_batch, then rho_k by simulating regime k from
/// rho_0. Regime k uses seed derive_seed(cfg.seed, k + 1).
std::vector<Mat> regime_batches(const GRNSpec& spec, const std::vector<InterventionRegime>& regimes,
                                Index particles, const EnsembleConfig& cfg);

enum class GrnActivation { logistic, learnable };
std::string_view to_string(GrnActivation a);

/// v_k(x) = M_k A s(x) + shift_k - D x with s = logistic(alpha o (B x - beta))
/// or the learnable sigma_*(B x - beta), and additive noise of scale
/// `diffusion`.
struct ModularDriftModel {
  Mat A;      // n x r
  Mat B;      // r x n
  Vec alpha;  // r (ignored by the learnable variant)
  Vec beta;   // r
  Vec decay;  // diagonal of D
  double diffusion = 0.1;
  models::Activation act = models::Activation::logistic();

  Index n() const { return A.rows(); }
  Index r() const { return A.cols(); }
  bool learnable() const { return act.kind() == models::ActivationKind::learnable; }
  void check_shapes() const;
  /// Module pre-activation: alpha o (B x - beta), or B x - beta when learnable.
  Vec preactivation(const Vec& x) const;
  Vec drift(const Vec& x, const InterventionRegime& regime, bool use_mask = true) const;
};

/// Euler-Maruyama pushforward of `init` (rows) under the model, no clamping.
Mat simulate_model(const ModularDriftModel& model, const InterventionRegime& regime, const EnsembleConfig& cfg,
                   const Mat& init, bool use_mask = true);

/// A diag(alpha) B for the logistic variant and A diag(mean sigma_*' over the
/// rows of `batch`) B for the learnable one (`batch` required there).
Mat extract_grn(const ModularDriftModel& model, const Mat* batch = nullptr);

/// Area under the precision-recall curve of |scores| ranked over the
/// off-diagonal entries. Ties keep row-major index order; the curve starts at
/// (recall 0, first precision) and is integrated by trapezoids.
double auprc(const Mat& scores, const BoolMat& truth);

struct GrnFitConfig {
  fit::FitConfig fit{0.02, 300, 1, 0, 0.0};
  Index particles = 64;  // simulated cells per regime
  EnsembleConfig sim{0.1, 50, 0};  // model pushforward; the seed is set per restart
  loss::SinkhornOptions sinkhorn{1.0, 5000, 1e-6};
  Index hidden = 8;  // learnable activation width

  void validate() const;
};

/// Sum over regimes of sinkhorn_divergence(model pushforward of rho_0, rho_k)
/// plus cfg.fit.l1_weight (|A|_1 + |B|_1), with the cell subsample and
/// Brownian increments frozen. The gradient is
/// the adjoint of the unrolled integrator.
///
/// Parameter layout: A (column-major), B (column-major), alpha (logistic
/// only), beta, softplus^-1(decay), softplus^-1(diffusion), activation params.
class GrnProblem {
 public:
  GrnProblem(std::vector<Mat> data, std::vector<InterventionRegime> regimes, Index r, GrnActivation act,
             const GrnFitConfig& cfg, std::uint64_t seed);

  Index size() const;
  double value(const Vec& x, Vec* grad) const;
  Vec pack(const ModularDriftModel& m) const;
  ModularDriftModel unpack(const Vec& x) const;
  /// Small random A, B, beta centred on the observational mean, D = 1.
  ModularDriftModel random_start(Rng& rng) const;
  /// Every training cell, for extract_grn.
  Mat pooled_data() const;

 private:
  std::vector<Mat> data_;
  std::vector<InterventionRegime> regimes_;
  Index n_, r_;
  GrnActivation act_;
  GrnFitConfig cfg_;
  Mat start_;                         // frozen cells from rho_0
  std::vector<std::vector<Mat>> noise_;  // per regime, per step: particles x n
  models::Activation act_template_;
};

struct GrnFitResult {
  ModularDriftModel model;
  std::vector<double> loss_trace;
  Mat grn;  // extract_grn of the fitted model
};

/// Adam over GrnProblem with cfg.fit.restarts restarts (seed
/// derive_seed(cfg.fit.seed, restart)); keeps the lowest final loss. Requires
/// regimes[0] to be observational and one batch per regime.
GrnFitResult fit_grn_model(const std::vector<Mat>& data, const std::vector<InterventionRegime>& regimes, Index r,
                           GrnActivation act, const GrnFitConfig& cfg);

/// AUPRC report row: model,seed,auprc.
inline constexpr const char* kAuprcHeader = "model,seed,auprc";
void write_auprc_row(std::ostream& os, std::string_view model, std::uint64_t seed, double value);

}  // namespace sdeid::grn
