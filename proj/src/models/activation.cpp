#include "sdeid/activation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sdeid::models {

namespace {

constexpr double kWarmStart = 0.1;

double logistic_d1(double l) { return l * (1.0 - l); }
double logistic_d2(double l) { return l * (1.0 - l) * (1.0 - 2.0 * l); }

// Component functions of the sine mixture, selected by coordinate index mod 3.
double sine_value(Index i, double y) {
  if (i % 3 == 1) return 2.0 * std::sin(2.0 * (y + 1.5)) - 1.0;
  return 3.0 * std::cos(3.0 * (y - 0.5));
}
double sine_d1(Index i, double y) {
  if (i % 3 == 1) return 4.0 * std::cos(2.0 * (y + 1.5));
  return -9.0 * std::sin(3.0 * (y - 0.5));
}
double sine_d2(Index i, double y) {
  if (i % 3 == 1) return -8.0 * std::sin(2.0 * (y + 1.5));
  return -27.0 * std::cos(3.0 * (y - 0.5));
}

}  // namespace

double logistic(double y) {
  if (y >= 0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::logistic: return "logistic";
    case ActivationKind::leaky_logistic: return "leaky_logistic";
    case ActivationKind::sine_mix: return "sine_mix";
    case ActivationKind::learnable: return "learnable";
    case ActivationKind::linear: return "linear";
  }
  return "unknown";
}

Activation Activation::logistic() {
  Activation a;
  a.kind_ = ActivationKind::logistic;
  return a;
}

Activation Activation::leaky_logistic(double tau, double gamma) {
  if (!(tau > 0.0) || !(tau < 1.0)) throw Error(Errc::invalid_param, "leaky_logistic needs 0 < tau < 1");
  if (!(gamma > tau) || !(gamma < 1.0))
    throw Error(Errc::invalid_param, "leaky_logistic needs tau < gamma < 1");
  Activation a;
  a.kind_ = ActivationKind::leaky_logistic;
  a.tau_ = tau;
  a.gamma_ = gamma;
  a.scale_ = 4.0 * (gamma - tau);
  return a;
}

Activation Activation::sine_mix() {
  Activation a;
  a.kind_ = ActivationKind::sine_mix;
  return a;
}

Activation Activation::linear(double slope) {
  Activation a;
  a.kind_ = ActivationKind::linear;
  a.slope_ = slope;
  return a;
}

Activation Activation::learnable(Index dim, Index hidden, std::uint64_t seed) {
  if (dim < 1 || hidden < 1) throw Error(Errc::invalid_param, "learnable activation needs dim, hidden >= 1");
  Activation a;
  a.kind_ = ActivationKind::learnable;
  a.dim_ = dim;
  a.hidden_ = hidden;
  const Index block = dim * hidden;
  a.params_.resize(3 * block + dim);
  Rng rng(seed);
  std::uniform_real_distribution<double> inner(-1.0, 1.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> outer(-bound, bound);
  for (Index k = 0; k < 2 * block; ++k) a.params_(k) = inner(rng);
  for (Index k = 2 * block; k < a.params_.size(); ++k) a.params_(k) = outer(rng);
  return a;
}

void Activation::check_index(Index i) const {
  if (kind_ == ActivationKind::learnable && (i < 0 || i >= dim_)) {
    std::ostringstream os;
    os << "coordinate " << i << " outside learnable activation of dim " << dim_;
    throw Error(Errc::dimension_mismatch, os.str());
  }
}

void Activation::set_params(const Vec& p) {
  if (p.size() != params_.size()) throw Error(Errc::dimension_mismatch, "activation parameter size");
  params_ = p;
}

double Activation::value(Index i, double y) const {
  switch (kind_) {
    case ActivationKind::logistic: return sdeid::models::logistic(y);
    case ActivationKind::leaky_logistic: return scale_ * sdeid::models::logistic(y) + tau_ * y;
    case ActivationKind::sine_mix: return sine_value(i, y);
    case ActivationKind::linear: return slope_ * y;
    case ActivationKind::learnable: {
      check_index(i);
      const Index h = hidden_, block = dim_ * hidden_;
      const double* w1 = params_.data() + i * h;
      const double* b1 = w1 + block;
      const double* w2 = b1 + block;
      double acc = params_(3 * block + i) + kWarmStart * sdeid::models::logistic(y);
      for (Index j = 0; j < h; ++j) acc += w2[j] * sdeid::models::logistic(w1[j] * y + b1[j]);
      return acc;
    }
  }
  return 0.0;
}

double Activation::d1(Index i, double y) const {
  switch (kind_) {
    case ActivationKind::logistic: return logistic_d1(sdeid::models::logistic(y));
    case ActivationKind::leaky_logistic: return scale_ * logistic_d1(sdeid::models::logistic(y)) + tau_;
    case ActivationKind::sine_mix: return sine_d1(i, y);
    case ActivationKind::linear: return slope_;
    case ActivationKind::learnable: {
      check_index(i);
      const Index h = hidden_, block = dim_ * hidden_;
      const double* w1 = params_.data() + i * h;
      const double* b1 = w1 + block;
      const double* w2 = b1 + block;
      double acc = kWarmStart * logistic_d1(sdeid::models::logistic(y));
      for (Index j = 0; j < h; ++j)
        acc += w2[j] * w1[j] * logistic_d1(sdeid::models::logistic(w1[j] * y + b1[j]));
      return acc;
    }
  }
  return 0.0;
}

double Activation::d2(Index i, double y) const {
  switch (kind_) {
    case ActivationKind::logistic: return logistic_d2(sdeid::models::logistic(y));
    case ActivationKind::leaky_logistic: return scale_ * logistic_d2(sdeid::models::logistic(y));
    case ActivationKind::sine_mix: return sine_d2(i, y);
    case ActivationKind::linear: return 0.0;
    case ActivationKind::learnable: {
      check_index(i);
      const Index h = hidden_, block = dim_ * hidden_;
      const double* w1 = params_.data() + i * h;
      const double* b1 = w1 + block;
      const double* w2 = b1 + block;
      double acc = kWarmStart * logistic_d2(sdeid::models::logistic(y));
      for (Index j = 0; j < h; ++j)
        acc += w2[j] * w1[j] * w1[j] * logistic_d2(sdeid::models::logistic(w1[j] * y + b1[j]));
      return acc;
    }
  }
  return 0.0;
}

Vec Activation::apply(const Vec& y) const {
  Vec out(y.size());
  for (Index i = 0; i < y.size(); ++i) out(i) = value(i, y(i));
  return out;
}

Vec Activation::deriv(const Vec& y) const {
  Vec out(y.size());
  for (Index i = 0; i < y.size(); ++i) out(i) = d1(i, y(i));
  return out;
}

Vec Activation::deriv2(const Vec& y) const {
  Vec out(y.size());
  for (Index i = 0; i < y.size(); ++i) out(i) = d2(i, y(i));
  return out;
}

namespace {

struct GridBounds {
  double max_d1, min_d1, max_abs_d2;
};

GridBounds scan_grid(const Activation& act) {
  GridBounds b{-1e300, 1e300, 0.0};
  const Index dims = std::max<Index>(act.dim(), 1);
  for (Index i = 0; i < dims; ++i) {
    for (int k = 0; k <= 4000; ++k) {
      const double y = -20.0 + 0.01 * k;
      const double s = act.d1(i, y);
      b.max_d1 = std::max(b.max_d1, s);
      b.min_d1 = std::min(b.min_d1, s);
      b.max_abs_d2 = std::max(b.max_abs_d2, std::abs(act.d2(i, y)));
    }
  }
  return b;
}

}  // namespace

double Activation::max_slope() const {
  switch (kind_) {
    case ActivationKind::logistic: return 0.25;
    case ActivationKind::leaky_logistic: return gamma_;
    case ActivationKind::sine_mix: return 9.0;
    case ActivationKind::linear: return slope_;
    case ActivationKind::learnable: return scan_grid(*this).max_d1;
  }
  return 0.0;
}

double Activation::min_slope() const {
  switch (kind_) {
    case ActivationKind::logistic: return 0.0;
    case ActivationKind::leaky_logistic: return tau_;
    case ActivationKind::sine_mix: return -9.0;
    case ActivationKind::linear: return slope_;
    case ActivationKind::learnable: return scan_grid(*this).min_d1;
  }
  return 0.0;
}

double Activation::curvature_bound() const {
  // max |l''| = 1 / (6 sqrt 3), attained at l = (3 -+ sqrt 3) / 6.
  const double logistic_curv = 1.0 / (6.0 * std::sqrt(3.0));
  switch (kind_) {
    case ActivationKind::logistic: return logistic_curv;
    case ActivationKind::leaky_logistic: return scale_ * logistic_curv;
    case ActivationKind::sine_mix: return 27.0;
    case ActivationKind::linear: return 0.0;
    case ActivationKind::learnable: return scan_grid(*this).max_abs_d2;
  }
  return 0.0;
}

bool Activation::assumption_compliant() const {
  const double g = max_slope(), t = min_slope();
  return t > 0.0 && t <= g && g < 1.0;
}

void Activation::accumulate_param_grad(const Vec& y, const Vec& g_value, const Vec& g_deriv,
                                       Eigen::Ref<Vec> out) const {
  if (kind_ != ActivationKind::learnable) return;
  if (y.size() != dim_ || g_value.size() != dim_ || g_deriv.size() != dim_ ||
      out.size() != params_.size())
    throw Error(Errc::dimension_mismatch, "activation gradient sizes");
  const Index h = hidden_, block = dim_ * hidden_;
  for (Index i = 0; i < dim_; ++i) {
    const double gv = g_value(i), gd = g_deriv(i), yi = y(i);
    out(3 * block + i) += gv;
    for (Index j = 0; j < h; ++j) {
      const Index k = i * h + j;
      const double w1 = params_(k), b1 = params_(block + k), w2 = params_(2 * block + k);
      const double l = sdeid::models::logistic(w1 * yi + b1);
      const double l1 = logistic_d1(l), l2 = logistic_d2(l);
      // value: w2 l(z);  deriv: w2 w1 l'(z), z = w1 y + b1
      out(k) += gv * w2 * l1 * yi + gd * (w2 * l1 + w2 * w1 * l2 * yi);
      out(block + k) += gv * w2 * l1 + gd * w2 * w1 * l2;
      out(2 * block + k) += gv * l + gd * w1 * l1;
    }
  }
}

}  // namespace sdeid::models
