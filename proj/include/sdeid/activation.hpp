#pragma once

#include <cstdint>
#include <string>

#include "sdeid/linalg.hpp"

namespace sdeid::models {

enum class ActivationKind { logistic, leaky_logistic, sine_mix, learnable, linear };

std::string to_string(ActivationKind kind);

/// Elementwise C^2 map sigma(y)_i = sigma_i(y_i) with analytic first and
/// second derivatives.
///
/// The fixed kinds act identically on every coordinate (sine_mix cycles
/// through its three component functions by index). The learnable kind carries
/// one two-layer perceptron per coordinate,
///
///   sigma_i(y) = sum_j w2_ij * logistic(w1_ij * y + b1_ij) + b2_i + 0.1 * logistic(y),
///
/// and therefore has a fixed dimension.
class Activation {
 public:
  static Activation logistic();
  /// s * logistic(y) + tau * y with s = 4 (gamma - tau), so the slope lies in
  /// [tau, gamma]. Requires 0 < tau < gamma < 1.
  static Activation leaky_logistic(double tau, double gamma = 0.9);
  static Activation sine_mix();
  static Activation linear(double slope);
  /// Per-coordinate perceptrons of width `hidden` with seeded initialization.
  static Activation learnable(Index dim, Index hidden, std::uint64_t seed);

  ActivationKind kind() const { return kind_; }
  /// 0 for the dimension-agnostic kinds.
  Index dim() const { return dim_; }
  Index hidden() const { return hidden_; }
  double tau_param() const { return tau_; }
  double gamma_param() const { return gamma_; }
  double slope_param() const { return slope_; }

  double value(Index i, double y) const;
  double d1(Index i, double y) const;
  double d2(Index i, double y) const;

  Vec apply(const Vec& y) const;
  Vec deriv(const Vec& y) const;
  Vec deriv2(const Vec& y) const;

  /// Slope bounds and curvature bound: gamma = sup sigma', tau = inf sigma',
  /// M = sup |sigma''|. Exact for the fixed kinds; for the learnable kind they
  /// are estimated on a grid over [-20, 20].
  double max_slope() const;
  double min_slope() const;
  double curvature_bound() const;
  /// 0 < tau <= gamma < 1.
  bool assumption_compliant() const;

  // Learnable parameters, flattened as [w1 | b1 | w2 | b2] with the per
  // coordinate blocks stored row-major (coordinate, hidden unit).
  Index num_params() const { return params_.size(); }
  const Vec& params() const { return params_; }
  void set_params(const Vec& p);

  /// Adds d(sum_i gv_i sigma_i(y_i) + gd_i sigma_i'(y_i)) / d(params) into
  /// `out` (length num_params()). No-op for fixed kinds.
  void accumulate_param_grad(const Vec& y, const Vec& g_value, const Vec& g_deriv,
                             Eigen::Ref<Vec> out) const;

 private:
  Activation() = default;
  void check_index(Index i) const;

  ActivationKind kind_ = ActivationKind::logistic;
  double tau_ = 0.0;
  double gamma_ = 0.0;
  double scale_ = 1.0;
  double slope_ = 1.0;
  Index dim_ = 0;
  Index hidden_ = 0;
  Vec params_;
};

double logistic(double y);

}  // namespace sdeid::models
