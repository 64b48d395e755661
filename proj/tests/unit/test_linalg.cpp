#include "doctest.h"

#include <cmath>

#include "sdeid/linalg.hpp"

using namespace sdeid;
using namespace sdeid::linalg;

namespace {

Mat random_hurwitz(Index n, Rng& rng, double margin = 0.5) {
  Mat M = random_normal(n, n, rng) / std::sqrt(static_cast<double>(n));
  M.diagonal().array() -= max_real_eigenvalue(M) + margin;
  return M;
}

// exp(L h) by scaling and squaring of a Taylor series.
Mat expm_small(const Mat& L, double h) {
  int squarings = 0;
  double scale = h * L.norm();
  while (scale > 0.1) {
    scale *= 0.5;
    ++squarings;
  }
  const Mat X = L * (h / std::pow(2.0, squarings));
  Mat term = Mat::Identity(L.rows(), L.cols()), out = term;
  for (int k = 1; k < 20; ++k) {
    term = term * X / static_cast<double>(k);
    out += term;
  }
  for (int k = 0; k < squarings; ++k) out = out * out;
  return out;
}

// int_0^T e^{Lt} Q e^{L^T t} dt by composite Simpson.
Mat gramian_quadrature(const Mat& L, const Mat& Q, double T, int steps) {
  const double h = T / steps;
  const Mat step = expm_small(L, h);
  Mat E = Mat::Identity(L.rows(), L.cols());
  Mat acc = Mat::Zero(L.rows(), L.cols());
  for (int k = 0; k <= steps; ++k) {
    const double w = (k == 0 || k == steps) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    acc += w * E * Q * E.transpose();
    E = E * step;
  }
  return acc * h / 3.0;
}

double power_iteration_norm(const Mat& M) {
  const Mat G = M.transpose() * M;
  Vec v = Vec::Ones(M.cols()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 5000; ++it) {
    Vec w = G * v;
    const double next = w.norm();
    v = w / next;
    if (std::abs(next - lambda) <= 1e-15 * next) break;
    lambda = next;
  }
  return std::sqrt(v.dot(G * v));
}

}  // namespace

TEST_CASE("solve_lyapunov closed-form cases") {
  const Mat I2 = Mat::Identity(2, 2);
  CHECK((solve_lyapunov(-I2, I2) - 0.5 * I2).norm() < 1e-14);
  Mat L = Mat::Zero(2, 2);
  L.diagonal() << -1.0, -2.0;
  Mat want = Mat::Zero(2, 2);
  want.diagonal() << 0.5, 0.25;
  CHECK((solve_lyapunov(L, I2) - want).norm() < 1e-14);
}

TEST_CASE("solve_lyapunov matches the controllability gramian by quadrature") {
  Rng rng(7);
  const Mat L = random_hurwitz(10, rng);
  const Mat Q = Mat::Identity(10, 10);
  const Mat omega = solve_lyapunov(L, Q);
  const Mat quad = gramian_quadrature(L, Q, 50.0, 20000);
  CHECK((omega - quad).norm() <= 1e-6 * std::max(1.0, quad.norm()));
}

TEST_CASE("solve_lyapunov residual, symmetry and PSD properties") {
  Rng rng(11);
  for (Index n : {1, 3, 7, 25, 60}) {
    for (int rep = 0; rep < 4; ++rep) {
      const Mat L = random_hurwitz(n, rng, 0.05 + 0.3 * rep);
      const Mat G = random_normal(n, n, rng);
      const Mat Q = G * G.transpose();
      const Mat X = solve_lyapunov(L, Q);
      CHECK(lyapunov_residual(L, X, Q) <= 1e-8 * std::max(1.0, Q.norm()));
      CHECK((X - X.transpose()).norm() <= 1e-9 * X.norm());
      Eigen::SelfAdjointEigenSolver<Mat> es(X);
      CHECK(es.eigenvalues().minCoeff() >= -1e-9 * spectral_norm(X));
    }
  }
}

TEST_CASE("solve_lyapunov rejects non-Hurwitz input") {
  Mat L = Mat::Identity(3, 3);
  L(2, 2) = 0.0;
  L(0, 0) = L(1, 1) = -1.0;
  try {
    solve_lyapunov(L, Mat::Identity(3, 3));
    FAIL("expected NotHurwitz");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::not_hurwitz);
  }
  CHECK_THROWS_AS(solve_lyapunov(Mat::Identity(2, 2), Mat::Identity(2, 2)), Error);
}

TEST_CASE("range_projector examples") {
  Mat e1 = Mat::Zero(3, 1);
  e1(0, 0) = 1.0;
  Mat want = Mat::Zero(3, 3);
  want(0, 0) = 1.0;
  CHECK((range_projector(e1).matrix() - want).norm() < 1e-14);
  Mat twice(3, 2);
  twice << e1, e1;
  CHECK((range_projector(twice).matrix() - want).norm() < 1e-14);

  Rng rng(3);
  const Mat M = random_normal(8, 2, rng);
  const Projector P = range_projector(M);
  CHECK((P * M - M).norm() < 1e-10);
  CHECK(std::abs(P.rank() - 2.0) < 1e-10);
  CHECK((P.matrix() - P.matrix().transpose()).norm() < 1e-10);
  CHECK((P.matrix() * P.matrix() - P.matrix()).norm() < 1e-10);
  CHECK((P.complement().matrix() + P.matrix() - Mat::Identity(8, 8)).norm() < 1e-12);
}

TEST_CASE("null_space_basis examples") {
  Mat M = Mat::Zero(2, 2);
  M(0, 0) = 1.0;
  const Mat N = null_space_basis(M);
  REQUIRE(N.cols() == 1);
  CHECK(std::abs(std::abs(N(1, 0)) - 1.0) < 1e-12);

  const Mat Z = null_space_basis(Mat::Zero(2, 2));
  REQUIRE(Z.cols() == 2);
  CHECK((Z.transpose() * Z - Mat::Identity(2, 2)).norm() < 1e-12);

  try {
    null_space_basis(M, 2);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::dimension_mismatch);
  }
}

TEST_CASE("null space of the projected covariance has dimension r") {
  // P_A^perp has rank n - r and omega is invertible, so P_A^perp omega has an
  // r-dimensional right kernel.
  Rng rng(5);
  const Index n = 8, r = 2;
  const Mat A = random_normal(n, r, rng);
  const Mat B = random_normal(r, n, rng);
  Mat L = 0.3 * A * B / (spectral_norm(A) * spectral_norm(B));
  L.diagonal().array() -= 1.0;
  const Mat omega = solve_lyapunov(L, Mat::Identity(n, n));
  const Mat Pperp = range_projector(A).complement().matrix();
  const Mat N = null_space_basis(Pperp * omega, r);
  CHECK(N.cols() == r);
  CHECK((Pperp * omega * N).norm() < 1e-9);
}

TEST_CASE("range_projector and null_space_basis are complementary") {
  Rng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    const Index n = 6 + rep % 4, k = 1 + rep % 3;
    const Mat M = random_normal(n, k, rng);
    const Mat N = null_space_basis(M.transpose());
    const Mat P = range_projector(M).matrix();
    CHECK((P + N * N.transpose() - Mat::Identity(n, n)).norm() < 1e-8);
  }
}

TEST_CASE("pinv examples and Penrose identities") {
  Mat M = Mat::Zero(2, 2);
  M(0, 0) = 2.0;
  Mat want = Mat::Zero(2, 2);
  want(0, 0) = 0.5;
  CHECK((pinv(M) - want).norm() < 1e-15);

  Rng rng(1);
  const Mat Q = random_stiefel(6, 3, rng);
  CHECK((pinv(Q) - Q.transpose()).norm() < 1e-12);

  const Mat R = random_normal(6, 3, rng);
  const Mat Rp = pinv(R);
  CHECK((Rp * R - Mat::Identity(3, 3)).norm() < 1e-10);
  CHECK((R * Rp * R - R).norm() < 1e-8);
  CHECK((Rp * R * Rp - Rp).norm() < 1e-8);
  CHECK(((R * Rp).transpose() - R * Rp).norm() < 1e-8);
  CHECK(((Rp * R).transpose() - Rp * R).norm() < 1e-8);
  CHECK((pinv(Rp) - R).norm() < 1e-8);
}

TEST_CASE("spectral_norm agrees with power iteration") {
  CHECK(std::abs(spectral_norm(Mat::Identity(3, 3)) - 1.0) < 1e-14);
  Mat D = Mat::Zero(2, 2);
  D.diagonal() << 3.0, -5.0;
  CHECK(std::abs(spectral_norm(D) - 5.0) < 1e-14);
  Rng rng(2);
  const Mat M = random_normal(10, 4, rng);
  const double s = spectral_norm(M);
  CHECK(std::abs(s - power_iteration_norm(M)) <= 1e-8 * s);
}

TEST_CASE("rank and spectrum helpers") {
  Rng rng(4);
  const Mat M = random_normal(7, 3, rng) * random_normal(3, 7, rng);
  CHECK(numerical_rank(M) == 3);
  const Vec sv = singular_values_padded(random_normal(2, 5, rng));
  CHECK(sv.size() == 5);
  CHECK(sv.tail(3).norm() == 0.0);
  CHECK(sv(0) >= sv(1));
  CHECK(is_hurwitz(-Mat::Identity(3, 3)));
  CHECK_FALSE(is_hurwitz(Mat::Zero(3, 3)));
  const Mat big = 4.0 * random_stiefel(5, 2, rng);
  CHECK(std::abs(spectral_norm(clip_spectral_norm(big, 0.9)) - 0.9) < 1e-12);
  const Mat small = 0.1 * random_stiefel(5, 2, rng);
  CHECK((clip_spectral_norm(small, 0.9) - small).norm() == 0.0);
}

TEST_CASE("trailing_singular_basis checks the gap") {
  Rng rng(8);
  const Mat U = random_stiefel(5, 5, rng);
  Vec s(5);
  s << 3.0, 2.0, 1.0, 1e-6, 1e-7;
  const Mat M = U * s.asDiagonal() * U.transpose();
  const Mat N = trailing_singular_basis(M, 2, 1e3);
  CHECK((M * N).norm() < 1e-5);
  CHECK_THROWS_AS(trailing_singular_basis(M, 3, 1e3), Error);
}

TEST_CASE("random generators are seed-deterministic") {
  Rng a(42), b(42);
  CHECK((random_normal(4, 3, a) - random_normal(4, 3, b)).norm() == 0.0);
  Rng c(9);
  const Mat Q = random_stiefel(7, 3, c);
  CHECK((Q.transpose() * Q - Mat::Identity(3, 3)).norm() < 1e-12);
}
