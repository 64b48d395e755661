#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "sdeid/fit.hpp"
#include "sdeid/simulate.hpp"

using namespace sdeid;
using namespace sdeid::fit;

namespace {

LinearData linear_data(const models::LinearDrift& d, const Mat& C, double eps) {
  LinearData data;
  data.C = C;
  data.means.resize(C.rows(), C.cols());
  for (Index i = 0; i < C.cols(); ++i) data.means.col(i) = sim::exact_linear_moments(d, C.col(i), eps).mean;
  data.omega = sim::exact_linear_moments(d, Vec::Zero(C.rows()), eps).cov;
  data.epsilon = eps;
  data.decay = d.decay;
  return data;
}

NonlinearData nonlinear_oracle(const models::NonlinearDrift& d, const Mat& C) {
  NonlinearData data;
  data.C = C;
  for (Index i = 0; i < C.cols(); ++i) {
    const sim::LinearizedMoments m = sim::linearized_nonlinear_moments(d, C.col(i));
    data.moments.push_back({m.xstar, m.omega});
  }
  return data;
}

// Exhaustive minimum of the sign-invariant column cost over all permutations.
double brute_force_align(const Mat& X, const Mat& Y) {
  const Index r = X.cols();
  Mat Xn = X, Yn = Y;
  for (Index j = 0; j < r; ++j) {
    Xn.col(j).normalize();
    Yn.col(j).normalize();
  }
  std::vector<Index> p(r);
  std::iota(p.begin(), p.end(), 0);
  double best = 1e300;
  do {
    double s = 0.0;
    for (Index j = 0; j < r; ++j)
      s += std::min((Xn.col(j) - Yn.col(p[j])).squaredNorm(), (Xn.col(j) + Yn.col(p[j])).squaredNorm());
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return std::sqrt(best / static_cast<double>(r));
}

}  // namespace

TEST_CASE("Adam converges on a quadratic") {
  const Vec a = (Vec(3) << 1.0, -2.0, 0.5).finished();
  const Objective f = [&](const Vec& x, Vec& g) {
    g = 2.0 * (x - a);
    return (x - a).squaredNorm();
  };
  FitConfig cfg;
  cfg.lr = 0.01;
  cfg.iters = 5000;
  const AdamResult res = adam_minimize(f, Vec::Zero(3), cfg);
  CHECK((res.params - a).norm() < 1e-4);
  CHECK(res.loss_trace.size() == 5001u);
}

TEST_CASE("Adam leaves a zero-gradient objective alone") {
  const Objective f = [](const Vec& x, Vec& g) {
    g = Vec::Zero(x.size());
    return 3.0;
  };
  const Vec x0 = (Vec(2) << 0.3, -0.7).finished();
  FitConfig cfg;
  cfg.iters = 50;
  const AdamResult res = adam_minimize(f, x0, cfg);
  CHECK((res.params - x0).norm() == 0.0);
  CHECK(gradient(f, x0).norm() == 0.0);
}

TEST_CASE("Adam reduces Rosenbrock by three orders of magnitude") {
  const Objective f = [](const Vec& x, Vec& g) {
    const double a = 1.0 - x(0), b = x(1) - x(0) * x(0);
    g.resize(2);
    g(0) = -2.0 * a - 400.0 * x(0) * b;
    g(1) = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  FitConfig cfg;
  cfg.lr = 0.01;
  cfg.iters = 10000;
  const AdamResult res = adam_minimize(f, (Vec(2) << -1.2, 1.0).finished(), cfg);
  CHECK(res.loss_trace.back() * 1e3 <= res.loss_trace.front());
}

TEST_CASE("Adam reports non-finite objectives") {
  const Objective f = [](const Vec& x, Vec& g) {
    g = Vec::Ones(x.size());
    return x(0) < -0.05 ? std::nan("") : x(0);
  };
  FitConfig cfg;
  cfg.lr = 0.1;
  cfg.iters = 10;
  try {
    adam_minimize(f, Vec::Zero(1), cfg);
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::non_finite);
  }
  cfg.lr = 0.0;
  CHECK_THROWS_AS(adam_minimize(f, Vec::Zero(1), cfg), Error);
}

TEST_CASE("projection is applied after every step") {
  const Objective f = [](const Vec& x, Vec& g) {
    g = -Vec::Ones(x.size());
    return -x.sum();
  };
  FitConfig cfg;
  cfg.lr = 0.5;
  cfg.iters = 20;
  const AdamResult res = adam_minimize(f, Vec::Zero(2), cfg, [](Vec& x) { x = x.cwiseMin(1.0); });
  CHECK((res.params - Vec::Ones(2)).norm() == 0.0);
}

TEST_CASE("finite-difference check flags a wrong gradient") {
  Rng rng(1);
  const Objective good = [](const Vec& x, Vec& g) {
    g = x.array().cos();
    return x.array().sin().sum();
  };
  const Objective bad = [](const Vec& x, Vec& g) {
    g = 1.1 * x.array().cos();
    return x.array().sin().sum();
  };
  const Vec x = linalg::random_normal(5, 1, rng).col(0);
  CHECK(finite_difference_check(good, x, rng) < 1e-6);
  CHECK(finite_difference_check(bad, x, rng) > 0.05);
}

TEST_CASE("linear objective satisfies the gradient contract") {
  Rng rng(2);
  const auto truth = models::random_linear_drift(10, 3, rng);
  const Mat C = linalg::random_normal(10, 3, rng);
  const LinearData data = linear_data(truth, C, 1.0);
  for (bool learn : {false, true}) {
    const LinearProblem prob(data, 3, learn, 0.0);
    const Vec x = prob.random_start(rng);
    CHECK(finite_difference_check(prob.objective(), x, rng) <= 1e-4);
    CHECK(prob.unpack(prob.pack(prob.unpack(x))).matrix().isApprox(prob.unpack(x).matrix(), 1e-14));
  }
  const LinearProblem learned(data, 3, true, 0.0);
  const Vec x = learned.random_start(rng);
  CHECK((learned.unpack(x).decay.array() >= 1.0).all());
}

TEST_CASE("nonlinear objective satisfies the gradient contract") {
  Rng rng(3);
  const auto truth = models::random_nonlinear_drift(8, 2, rng, models::Activation::logistic());
  const NonlinearData data = nonlinear_oracle(truth, linalg::random_normal(8, 3, rng));
  const NonlinearProblem fixed(data, 2, models::Activation::logistic(), 0.0);
  CHECK(finite_difference_check(fixed.objective(), fixed.random_start(rng), rng) <= 1e-3);
  const NonlinearProblem learn(data, 2, models::Activation::learnable(2, 6, 9), 0.0);
  const Vec x = learn.random_start(rng);
  CHECK(x.size() == learn.size());
  CHECK(finite_difference_check(learn.objective(), x, rng) <= 1e-3);
}

TEST_CASE("nonlinear fit started at the truth stays at the optimum") {
  Rng rng(4);
  const auto truth = models::random_nonlinear_drift(8, 2, rng, models::Activation::logistic());
  const NonlinearData data = nonlinear_oracle(truth, linalg::random_normal(8, 3, rng));
  const NonlinearProblem prob(data, 2, models::Activation::logistic(), 0.0);
  const Vec x0 = prob.pack(truth);
  Vec g;
  CHECK(prob.value(x0, &g) <= 1e-6);
  FitConfig cfg;
  cfg.lr = 1e-4;
  cfg.iters = 200;
  const AdamResult res = adam_minimize(prob.objective(), x0, cfg, prob.projection());
  CHECK(*std::max_element(res.loss_trace.begin(), res.loss_trace.end()) <= 1e-2);
}

TEST_CASE("alignment examples") {
  Rng rng(5);
  const Mat A = linalg::random_normal(7, 4, rng);
  CHECK(align_up_to_perm_scale(A, A).err < 1e-15);

  Mat swapped = A;
  swapped.col(0) = -3.0 * A.col(2);
  swapped.col(2) = -3.0 * A.col(0);
  const Alignment al = align_up_to_perm_scale(swapped, A);
  CHECK(al.err <= 1e-10);
  CHECK(al.perm[0] == 2);
  CHECK(al.perm[2] == 0);
  CHECK(al.scales(0) == doctest::Approx(-3.0 * A.col(2).norm() / A.col(2).norm()));

  Mat bad = A;
  bad.col(1).setZero();
  try {
    align_up_to_perm_scale(bad, A);
    FAIL("expected DegenerateColumn");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::degenerate_column);
  }
  CHECK_THROWS_AS(align_up_to_perm_scale(A.leftCols(3), A), Error);
}

TEST_CASE("alignment is invariant under permutation and rescaling") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Index r = 1 + trial % 6;
    const Mat X = linalg::random_normal(9, r, rng);
    std::vector<Index> p(r);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    Mat Y(9, r);
    for (Index j = 0; j < r; ++j) {
      const double s = (rng() % 2 ? 1.0 : -1.0) * (0.1 + static_cast<double>(rng() % 100));
      Y.col(j) = s * X.col(p[j]);
    }
    CHECK(align_up_to_perm_scale(X, Y).err <= 1e-10);
    CHECK(align_up_to_perm_scale(Y, X).err <= 1e-10);
  }
}

TEST_CASE("alignment matches the exhaustive permutation minimum") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const Index r = 1 + trial % 6;
    const Mat X = linalg::random_normal(6, r, rng);
    const Mat Y = linalg::random_normal(6, r, rng);
    const double err = align_up_to_perm_scale(X, Y).err;
    CHECK(err == doctest::Approx(brute_force_align(X, Y)).epsilon(1e-12));
    CHECK(err >= 0.0);
    CHECK(err <= 2.0);
  }
}

TEST_CASE("hungarian examples") {
  Mat c(3, 3);
  c << 4, 1, 3, 2, 0, 5, 3, 2, 2;
  const std::vector<Index> p = hungarian(c);
  double total = 0.0;
  for (Index i = 0; i < 3; ++i) total += c(i, p[i]);
  CHECK(total == 5.0);
  CHECK(hungarian(Mat::Zero(1, 1)) == std::vector<Index>{0});
  CHECK_THROWS_AS(hungarian(Mat::Zero(2, 3)), Error);
}

TEST_CASE("linear fit is reproducible and best-of-restarts is monotone") {
  Rng rng(8);
  const auto truth = models::random_linear_drift(6, 2, rng);
  const LinearData data = linear_data(truth, linalg::random_normal(6, 2, rng), 1.0);
  FitConfig cfg;
  cfg.iters = 150;
  cfg.restarts = 6;
  cfg.seed = 42;
  const RecoveryResult a = fit_linear(data, 2, false, cfg, &truth);
  const RecoveryResult b = fit_linear(data, 2, false, cfg, &truth);
  CHECK((a.Ahat - b.Ahat).norm() == 0.0);
  CHECK((a.Bhat - b.Bhat).norm() == 0.0);
  CHECK(a.restart_losses == b.restart_losses);
  CHECK(a.train_loss == a.restart_losses[a.best_restart]);

  cfg.restarts = 3;
  const RecoveryResult prefix = fit_linear(data, 2, false, cfg, &truth);
  for (std::size_t k = 0; k < 3; ++k) CHECK(prefix.restart_losses[k] == a.restart_losses[k]);
  double best = 1e300;
  for (double l : a.restart_losses) {
    const double next = std::min(best, l);
    CHECK(next <= best);
    best = next;
  }
  CHECK(a.train_loss <= prefix.train_loss);
  CHECK(a.align_err_A >= 0.0);
  CHECK(a.align_err_A <= 2.0);
}

TEST_CASE("learned decay stays at or above one") {
  Rng rng(9);
  const auto truth = models::random_linear_drift(6, 2, rng);
  const LinearData data = linear_data(truth, linalg::random_normal(6, 4, rng), 1.0);
  FitConfig cfg;
  cfg.iters = 100;
  cfg.restarts = 2;
  const RecoveryResult res = fit_linear(data, 2, true, cfg, &truth);
  CHECK(res.Dhat.size() == 6);
  CHECK((res.Dhat.array() >= 1.0).all());
}

TEST_CASE("nonlinear fit is reproducible") {
  Rng rng(10);
  const auto truth = models::random_nonlinear_drift(6, 2, rng, models::Activation::logistic());
  const NonlinearData data = nonlinear_oracle(truth, linalg::random_normal(6, 3, rng));
  NonlinearModelSpec model;
  model.act_hidden = 4;
  FitConfig cfg;
  cfg.iters = 60;
  cfg.restarts = 2;
  cfg.seed = 3;
  const RecoveryResult a = fit_nonlinear(data, 2, model, cfg, &truth);
  const RecoveryResult b = fit_nonlinear(data, 2, model, cfg, &truth);
  CHECK(a.restart_losses == b.restart_losses);
  CHECK((a.act.params() - b.act.params()).norm() == 0.0);
  CHECK(a.drift_err >= 0.0);
}

TEST_CASE("fit report rows") {
  std::ostringstream os;
  FitReportRow row;
  row.seed = 3;
  row.k = 4;
  row.r = 4;
  row.n = 20;
  row.restarts = 20;
  row.train_loss = 0.5;
  write_fit_report_row(os, row);
  const std::string line = os.str();
  CHECK(line.rfind("3,4,4,20,20,0.5,", 0) == 0);
  CHECK(std::count(line.begin(), line.end(), ',') == 8);
}
