#pragma once

#include <vector>

#include "sdeid/models.hpp"

namespace sdeid::loss {

/// RBF kernel k(x, y) = exp(-|x - y|^2 / (2 h^2)).
struct KernelSpec {
  double bandwidth = 5.0;
  void validate() const;
};

struct LinearDriftGrad {
  Mat A, B;
  Vec decay;
};

struct NonlinearDriftGrad {
  Mat A, B;
  Vec act;  // gradient w.r.t. Activation::params(); empty for fixed activations
};

/// Mean and rescaled covariance W = Sigma / eps observed under one intervention.
struct InterventionMoments {
  Vec mean;
  Mat w;
};

/// |L^-1 C + M|_F + |L omega + omega L^T + eps I|_F with L = A B - D and
/// M the observed means (which equal -L_true^-1 C). Throws `singular` when L
/// cannot be inverted. Fills `grad` when given (zero gradient for a term that
/// is exactly zero).
double loss_linear(const models::LinearDrift& d, const Mat& C, const Mat& means, const Mat& omega,
                   double epsilon, LinearDriftGrad* grad = nullptr);

/// sqrt(sum_i |v(m_i) + c_i|^2) + sqrt(sum_i |J_i W_i + W_i J_i^T + I|_F^2),
/// J_i the drift Jacobian at m_i.
double loss_nonlinear(const models::NonlinearDrift& d, const Mat& C,
                      const std::vector<InterventionMoments>& moments,
                      NonlinearDriftGrad* grad = nullptr);

/// V-statistic (1/N^2) sum_{a,b} A_x A_y k(x_a, x_b) with generator
/// A g = grad g . (v + c) + (eps / 2) lap g. `samples` holds one point per row.
double kds_loss(const models::NonlinearDrift& d, const Vec& c, double epsilon, const Mat& samples,
                const KernelSpec& kernel = {}, NonlinearDriftGrad* grad = nullptr);
double kds_loss(const models::LinearDrift& d, const Vec& c, double epsilon, const Mat& samples,
                const KernelSpec& kernel = {}, LinearDriftGrad* grad = nullptr);

/// Mean over coordinates of the squared difference of the two batch means.
double mse_distribution(const Mat& pred, const Mat& truth);

struct SinkhornOptions {
  double reg = 0.1;
  int max_iter = 2000;
  double tol = 1e-9;  // L1 violation of the row marginal
};

/// Debiased entropic OT with squared Euclidean cost and uniform weights:
/// OT(a, b) - OT(a, a) / 2 - OT(b, b) / 2. Throws `no_convergence` when the
/// marginals are still off by more than `tol` after `max_iter` iterations at
/// the target reg.
double sinkhorn_divergence(const Mat& a, const Mat& b, const SinkhornOptions& opt = {},
                           Mat* grad_a = nullptr);

/// Entropic OT value <alpha, f> + <beta, g> at the optimal potentials;
/// `plan` receives the transport plan when given.
double entropic_ot(const Mat& a, const Mat& b, const SinkhornOptions& opt, Mat* plan = nullptr);

namespace detail {

/// Closed-form RBF derivative blocks at u = x - y with s = 1 / h^2.
struct RbfTerms {
  double k;       // k(x, y)
  Mat dxdy;       // grad_x grad_y^T k
  Vec dx_lapy;    // grad_x lap_y k  (= -lap_x grad_y k)
  double lapxlapy;
};
RbfTerms rbf_terms(const Vec& x, const Vec& y, double bandwidth);

/// KDS value for precomputed total drifts F (row a = v(x_a) + c). Writes
/// d value / d F into `grad_f` when given.
double kds_from_drifts(const Mat& samples, const Mat& F, double epsilon, const KernelSpec& kernel,
                       Mat* grad_f);

}  // namespace detail

}  // namespace sdeid::loss
