#pragma once

#include <iosfwd>
#include <string>
#include <variant>

#include "sdeid/activation.hpp"
#include "sdeid/linalg.hpp"

namespace sdeid::models {

/// Linear drift v(x) = (A B - D) x with D = diag(decay).
struct LinearDrift {
  Mat A;      // n x r
  Mat B;      // r x n
  Vec decay;  // diagonal of D, n

  Index n() const { return A.rows(); }
  Index r() const { return A.cols(); }
  /// L = A B - D.
  Mat matrix() const;
  /// |A| |B| <= gamma < 1, every decay entry >= 1 and L Hurwitz.
  bool is_valid(double gamma = 1.0) const;
  void check_shapes() const;
};

/// v(x) = A sigma(B x) - x.
struct NonlinearDrift {
  Mat A;  // n x r
  Mat B;  // r x n
  Activation act = Activation::logistic();

  Index n() const { return A.rows(); }
  Index r() const { return A.cols(); }
  void check_shapes() const;
  /// gamma |A| |B|: the Lipschitz constant of x -> A sigma(B x).
  double contraction_rate() const;
};

/// Shift interventions, one column per regime.
struct InterventionSet {
  Mat C;  // n x k

  Index n() const { return C.rows(); }
  Index k() const { return C.cols(); }
  Vec shift(Index i) const { return C.col(i); }
};

Vec eval_drift(const LinearDrift& d, const Vec& x, const Vec& c);
Vec eval_drift(const NonlinearDrift& d, const Vec& x, const Vec& c);

/// A diag(sigma'(B x)) B - I.
Mat drift_jacobian(const NonlinearDrift& d, const Vec& x);
Mat drift_jacobian(const LinearDrift& d, const Vec& x);

/// Banach iteration x <- A sigma(B x) + c started at x = c. Stops when
/// |v(x) + c| <= tol; throws `no_convergence` after
/// ceil(log(tol / |c|) / log rate) + 100 iterations.
Vec fixed_point(const NonlinearDrift& d, const Vec& c, double tol = 1e-12);
/// Same iteration from an arbitrary start (used for uniqueness checks).
Vec fixed_point_from(const NonlinearDrift& d, const Vec& c, const Vec& start, double tol = 1e-12);

// Seeded instance generators.

/// A, B iid Gaussian rescaled to spectral norm `norm`, decay ~ U[1, 2]
/// (`random_decay`) or identity.
LinearDrift random_linear_drift(Index n, Index r, Rng& rng, double norm = 0.9, bool random_decay = true);
/// A and B^T uniform on the Stiefel manifold rescaled by `scale`.
NonlinearDrift random_nonlinear_drift(Index n, Index r, Rng& rng, const Activation& act,
                                      double scale = 0.9);
/// Columns iid N(0, stddev^2 I).
InterventionSet random_interventions(Index n, Index k, Rng& rng, double stddev = 1.0);

// Plain-text serialization:
//
//   sdeid-drift 1
//   type linear|nonlinear
//   n <n> r <r>
//   A            (n rows of r entries)
//   B            (r rows of n entries)
//   decay        (linear only: one row of n entries)
//   activation <kind> [params...]
//   params <count>   (learnable only: one row of parameters)
//
// Reals are written with 17 significant digits so reading back is exact.
using AnyDrift = std::variant<LinearDrift, NonlinearDrift>;

void write_drift(std::ostream& os, const LinearDrift& d);
void write_drift(std::ostream& os, const NonlinearDrift& d);
AnyDrift read_drift(std::istream& is);
std::string to_text(const AnyDrift& d);
AnyDrift from_text(const std::string& text);

}  // namespace sdeid::models
