#include "sdeid/models.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace sdeid::models {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::dimension_mismatch, what);
}

}  // namespace

Mat LinearDrift::matrix() const {
  check_shapes();
  Mat L = A * B;
  L.diagonal() -= decay;
  return L;
}

void LinearDrift::check_shapes() const {
  require(B.rows() == A.cols() && B.cols() == A.rows(), "LinearDrift: A is n x r, B must be r x n");
  require(decay.size() == A.rows(), "LinearDrift: decay must have n entries");
}

bool LinearDrift::is_valid(double gamma) const {
  check_shapes();
  if (linalg::spectral_norm(A) * linalg::spectral_norm(B) > gamma) return false;
  if ((decay.array() < 1.0).any()) return false;
  return linalg::is_hurwitz(matrix());
}

void NonlinearDrift::check_shapes() const {
  require(B.rows() == A.cols() && B.cols() == A.rows(), "NonlinearDrift: A is n x r, B must be r x n");
  if (act.kind() == ActivationKind::learnable)
    require(act.dim() == A.cols(), "NonlinearDrift: learnable activation dim must equal r");
}

double NonlinearDrift::contraction_rate() const {
  const double slope = std::max(std::abs(act.max_slope()), std::abs(act.min_slope()));
  return slope * linalg::spectral_norm(A) * linalg::spectral_norm(B);
}

Vec eval_drift(const LinearDrift& d, const Vec& x, const Vec& c) {
  d.check_shapes();
  require(x.size() == d.n() && c.size() == d.n(), "eval_drift: x and c must have n entries");
  return d.A * (d.B * x) - d.decay.cwiseProduct(x) + c;
}

Vec eval_drift(const NonlinearDrift& d, const Vec& x, const Vec& c) {
  d.check_shapes();
  require(x.size() == d.n() && c.size() == d.n(), "eval_drift: x and c must have n entries");
  return d.A * d.act.apply(d.B * x) - x + c;
}

Mat drift_jacobian(const NonlinearDrift& d, const Vec& x) {
  d.check_shapes();
  require(x.size() == d.n(), "drift_jacobian: x must have n entries");
  const Vec s = d.act.deriv(d.B * x);
  Mat J = d.A * s.asDiagonal() * d.B;
  J.diagonal().array() -= 1.0;
  return J;
}

Mat drift_jacobian(const LinearDrift& d, const Vec& x) {
  require(x.size() == d.n(), "drift_jacobian: x must have n entries");
  return d.matrix();
}

Vec fixed_point_from(const NonlinearDrift& d, const Vec& c, const Vec& start, double tol) {
  d.check_shapes();
  require(c.size() == d.n() && start.size() == d.n(), "fixed_point: c must have n entries");
  Vec x = start;
  Vec next = d.A * d.act.apply(d.B * x) + c;
  double res = (next - x).norm();

  Index max_iter = 10000;
  if (d.act.kind() != ActivationKind::learnable) {
    const double rate = d.contraction_rate();
    const double scale = std::max({c.norm(), res, tol});
    if (rate > 0.0 && rate < 1.0) {
      const double est = std::ceil(std::log(tol / scale) / std::log(rate));
      max_iter = static_cast<Index>(std::max(0.0, est)) + 100;
    }
  }
  for (Index it = 0; it <= max_iter; ++it) {
    if (res <= tol) return x;
    if (!std::isfinite(res)) break;
    x = next;
    next = d.A * d.act.apply(d.B * x) + c;
    res = (next - x).norm();
  }
  std::ostringstream os;
  os << "fixed point iteration stalled at residual " << res << " (tol " << tol << ")";
  throw Error(Errc::no_convergence, os.str());
}

Vec fixed_point(const NonlinearDrift& d, const Vec& c, double tol) {
  return fixed_point_from(d, c, c, tol);
}

LinearDrift random_linear_drift(Index n, Index r, Rng& rng, double norm, bool random_decay) {
  LinearDrift d;
  d.A = linalg::random_normal(n, r, rng);
  d.B = linalg::random_normal(r, n, rng);
  d.A *= norm / linalg::spectral_norm(d.A);
  d.B *= norm / linalg::spectral_norm(d.B);
  d.decay = Vec::Ones(n);
  if (random_decay) {
    std::uniform_real_distribution<double> unif(1.0, 2.0);
    for (Index i = 0; i < n; ++i) d.decay(i) = unif(rng);
  }
  return d;
}

NonlinearDrift random_nonlinear_drift(Index n, Index r, Rng& rng, const Activation& act, double scale) {
  NonlinearDrift d;
  d.A = scale * linalg::random_stiefel(n, r, rng);
  d.B = scale * linalg::random_stiefel(n, r, rng).transpose();
  d.act = act;
  return d;
}

InterventionSet random_interventions(Index n, Index k, Rng& rng, double stddev) {
  return InterventionSet{linalg::random_normal(n, k, rng, stddev)};
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr const char* kMagic = "sdeid-drift";
constexpr int kVersion = 1;

void write_rows(std::ostream& os, const Mat& M) {
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) {
      if (j) os << ' ';
      os << M(i, j);
    }
    os << '\n';
  }
}

void write_vector(std::ostream& os, const Vec& v) {
  for (Index i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    os << v(i);
  }
  os << '\n';
}

void expect_token(std::istream& is, const std::string& want) {
  std::string tok;
  if (!(is >> tok) || tok != want)
    throw Error(Errc::parse_error, "expected '" + want + "', got '" + tok + "'");
}

Mat read_matrix(std::istream& is, Index rows, Index cols) {
  Mat M(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      if (!(is >> M(i, j))) throw Error(Errc::parse_error, "truncated matrix data");
  return M;
}

void write_activation(std::ostream& os, const Activation& act) {
  os << "activation " << to_string(act.kind());
  switch (act.kind()) {
    case ActivationKind::leaky_logistic: os << ' ' << act.tau_param() << ' ' << act.gamma_param(); break;
    case ActivationKind::linear: os << ' ' << act.slope_param(); break;
    case ActivationKind::learnable: os << ' ' << act.dim() << ' ' << act.hidden(); break;
    default: break;
  }
  os << '\n';
  if (act.kind() == ActivationKind::learnable) {
    os << "params " << act.num_params() << '\n';
    write_vector(os, act.params());
  }
}

Activation read_activation(std::istream& is) {
  expect_token(is, "activation");
  std::string kind;
  is >> kind;
  if (kind == "logistic") return Activation::logistic();
  if (kind == "sine_mix") return Activation::sine_mix();
  if (kind == "leaky_logistic") {
    double tau = 0, gamma = 0;
    if (!(is >> tau >> gamma)) throw Error(Errc::parse_error, "leaky_logistic parameters");
    return Activation::leaky_logistic(tau, gamma);
  }
  if (kind == "linear") {
    double slope = 0;
    if (!(is >> slope)) throw Error(Errc::parse_error, "linear slope");
    return Activation::linear(slope);
  }
  if (kind == "learnable") {
    Index dim = 0, hidden = 0, count = 0;
    if (!(is >> dim >> hidden)) throw Error(Errc::parse_error, "learnable dimensions");
    Activation act = Activation::learnable(dim, hidden, 0);
    expect_token(is, "params");
    is >> count;
    if (count != act.num_params()) throw Error(Errc::parse_error, "learnable parameter count");
    act.set_params(read_matrix(is, count, 1).col(0));
    return act;
  }
  throw Error(Errc::parse_error, "unknown activation kind '" + kind + "'");
}

struct PrecisionGuard {
  explicit PrecisionGuard(std::ostream& os) : os_(os), flags_(os.flags()), prec_(os.precision()) {
    os_ << std::setprecision(17);
  }
  ~PrecisionGuard() {
    os_.flags(flags_);
    os_.precision(prec_);
  }
  std::ostream& os_;
  std::ios::fmtflags flags_;
  std::streamsize prec_;
};

}  // namespace

void write_drift(std::ostream& os, const LinearDrift& d) {
  d.check_shapes();
  PrecisionGuard guard(os);
  os << kMagic << ' ' << kVersion << "\ntype linear\nn " << d.n() << " r " << d.r() << "\nA\n";
  write_rows(os, d.A);
  os << "B\n";
  write_rows(os, d.B);
  os << "decay\n";
  write_vector(os, d.decay);
}

void write_drift(std::ostream& os, const NonlinearDrift& d) {
  d.check_shapes();
  PrecisionGuard guard(os);
  os << kMagic << ' ' << kVersion << "\ntype nonlinear\nn " << d.n() << " r " << d.r() << "\nA\n";
  write_rows(os, d.A);
  os << "B\n";
  write_rows(os, d.B);
  write_activation(os, d.act);
}

AnyDrift read_drift(std::istream& is) {
  expect_token(is, kMagic);
  int version = 0;
  if (!(is >> version) || version != kVersion)
    throw Error(Errc::parse_error, "unsupported drift format version");
  expect_token(is, "type");
  std::string type;
  is >> type;
  Index n = 0, r = 0;
  expect_token(is, "n");
  is >> n;
  expect_token(is, "r");
  is >> r;
  if (!is || n < 1 || r < 0) throw Error(Errc::parse_error, "bad dimensions");
  expect_token(is, "A");
  Mat A = read_matrix(is, n, r);
  expect_token(is, "B");
  Mat B = read_matrix(is, r, n);
  if (type == "linear") {
    expect_token(is, "decay");
    Vec decay = read_matrix(is, n, 1).col(0);
    return LinearDrift{std::move(A), std::move(B), std::move(decay)};
  }
  if (type == "nonlinear") {
    NonlinearDrift d{std::move(A), std::move(B), read_activation(is)};
    d.check_shapes();
    return d;
  }
  throw Error(Errc::parse_error, "unknown drift type '" + type + "'");
}

std::string to_text(const AnyDrift& d) {
  std::ostringstream os;
  std::visit([&](const auto& drift) { write_drift(os, drift); }, d);
  return os.str();
}

AnyDrift from_text(const std::string& text) {
  std::istringstream is(text);
  return read_drift(is);
}

}  // namespace sdeid::models
