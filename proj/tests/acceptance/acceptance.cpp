// Acceptance checks: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "sdeid/cli.hpp"
#include "sdeid/error.hpp"

using namespace sdeid;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

cli::ExperimentOutput run_config(const std::string& text) {
  std::istringstream is(text);
  return cli::run_experiment(cli::parse_experiment_config(cli::ConfigFile::parse(is, "acceptance")));
}

// Metric column `metric` of every row whose keys equal `keys`.
std::vector<double> column(const cli::ExperimentOutput& out, const std::vector<std::string>& keys,
                           const std::string& metric) {
  const auto m = static_cast<std::size_t>(std::find(out.schema.metrics.begin(), out.schema.metrics.end(), metric) -
                                          out.schema.metrics.begin());
  std::vector<double> v;
  for (const cli::ResultRow& row : out.rows)
    if (row.keys == keys) v.push_back(row.metrics.at(m));
  return v;
}

bool genericity_failure(const Error& e) {
  return e.code() == Errc::rank_deficient || e.code() == Errc::degenerate_spectrum ||
         e.code() == Errc::alpha_degenerate;
}

Outcome lyapunov() {
  // Instances are drawn first so the clock covers the solver alone.
  std::vector<std::pair<Mat, Mat>> cases;
  Rng rng(1);
  for (Index n : {5, 20, 100}) {
    const int reps = n == 5 ? 34 : 33;
    for (int i = 0; i < reps; ++i) {
      const Mat M = linalg::random_normal(n, n, rng, 1.0 / std::sqrt(static_cast<double>(n)));
      const Mat L = M - (linalg::max_real_eigenvalue(M) + 0.1) * Mat::Identity(n, n);
      const Mat G = linalg::random_normal(n, n, rng);
      cases.emplace_back(L, G * G.transpose() + Mat::Identity(n, n));
    }
  }
  double worst = 0.0;
  const auto t0 = Clock::now();
  std::vector<Mat> X;
  for (const auto& [L, Q] : cases) X.push_back(linalg::solve_lyapunov(L, Q));
  const double t = std::chrono::duration<double>(Clock::now() - t0).count();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& [L, Q] = cases[i];
    worst = std::max(worst, (L * X[i] + X[i] * L.transpose() + Q).norm() / Q.norm());
  }
  return {cases.size() == 100 && worst <= 1e-8 && t < 5.0, "100 instances, worst relative residual " + num(worst) +
                                                               " (<= 1e-8), solve time " + num(t) + " s (< 5)"};
}

Outcome linear_threshold() {
  const cli::ExperimentOutput out = run_config(
      "experiment = linear-recovery\nn = 20\nr = 4\nk = 2, 4\nseeds = 0..4\n"
      "[fit]\nlr = 0.005\niters = 3000\nrestarts = 20\n");
  const auto e4 = column(out, {"4", "1"}, "drift_err"), e2 = column(out, {"2", "1"}, "drift_err");
  const double m4 = median(e4), m2 = median(e2), s4 = stddev(e4), s2 = stddev(e2);
  const bool median_branch = m2 > 0.2, std_branch = s2 > 4.0 * s4;
  return {m4 < 0.05 && (median_branch || std_branch),
          "k=r median " + num(m4) + " (< 0.05); k=r-2 median " + num(m2) + " > 0.2: " +
              (median_branch ? "yes" : "no") + ", std " + num(s2) + " > 4 x " + num(s4) + ": " +
              (std_branch ? "yes" : "no")};
}

Outcome linear_closed_form() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const cli::LinearInstance in = cli::linear_instance(20, 4, 4, seed, true);
    const fit::LinearData d = fit::linear_oracle_data(in.truth, in.C, 1.0);
    const Mat Lhat = identify::recover_linear_closedform(d.C, d.means, d.omega, d.decay, d.epsilon);
    worst = std::max(worst, (Lhat - in.truth.matrix()).norm() / in.truth.matrix().norm());
  }
  return {worst <= 1e-6, "20 seeds (n=20, r=k=4), worst relative error " + num(worst) + " (<= 1e-6)"};
}

Outcome certificates() {
  int passed = 0, total = 0;
  std::string failures;
  for (const std::string& kind : cli::certificate_cases())
    for (std::uint64_t seed = 0; seed < 20; ++seed, ++total) {
      const identify::Certificate c = cli::certify_case(kind, 8, 4, seed);
      if (c.passed()) ++passed;
      else failures += " " + kind + "/" + std::to_string(seed);
    }
  return {passed == total, std::to_string(passed) + "/" + std::to_string(total) + " certificates pass" + failures};
}

Outcome perturbation() {
  bool means_ok = true;
  std::vector<double> ratios;
  double worst_mean_ratio = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const cli::NonlinearInstance in =
        cli::nonlinear_instance(8, 2, 1, seed, models::Activation::leaky_logistic(0.1, 0.9));
    const double gamma = in.truth.contraction_rate();
    for (double eps : {1e-3, 1e-4}) {
      const sim::SamplerConfig sc{0.01, 5, 50, 4000, linalg::derive_seed(seed, 7)};
      const sim::CovarianceError a = sim::linearization_covariance_error(in.truth, in.C.col(0), eps, sc);
      const sim::CovarianceError b = sim::linearization_covariance_error(in.truth, in.C.col(0), eps / 4, sc);
      const double bound = std::sqrt(eps * 8.0 / (1.0 - gamma));
      const double err = (a.mean - a.xstar).norm();
      worst_mean_ratio = std::max(worst_mean_ratio, err / bound);
      means_ok = means_ok && err <= 2.0 * bound;
      ratios.push_back(a.coupled / b.coupled);
    }
  }
  const double med = median(ratios);
  return {means_ok && med >= 1.3 && med <= 3.5,
          "worst |m - x*| / bound " + num(worst_mean_ratio) + " (<= 2); median covariance-error ratio " + num(med) +
              " in [1.3, 3.5]"};
}

Outcome nonlinear_closed_form() {
  double worst = 0.0;
  int done = 0, resampled = 0;
  std::uint64_t seed = 0;
  for (Index n : {8, 16})
    for (Index r : {2, 3})
      for (int i = 0; i < (n == 8 && r == 2 ? 14 : 12); ++seed) {
        const cli::NonlinearInstance in =
            cli::nonlinear_instance(n, r, r + 1, seed, models::Activation::leaky_logistic(0.1, 0.9));
        try {
          const identify::NonlinearRecovery rec =
              identify::recover_nonlinear_closedform(identify::exact_oracle(in.truth, in.C), r);
          worst = std::max({worst, fit::align_up_to_perm_scale(rec.Ahat, in.truth.A).err,
                            fit::align_up_to_perm_scale(rec.Bhat.transpose(), in.truth.B.transpose()).err});
          ++done;
          ++i;
        } catch (const Error& e) {
          if (!genericity_failure(e)) throw;
          ++resampled;
        }
      }
  const cli::ExperimentOutput sim = run_config(
      "experiment = nonlinear-recovery\nmethod = closed-form\nmoments = sampled\nn = 8\nr = 2\nk = 3\n"
      "epsilon = 1e-5\nactivation = leaky_logistic\nseeds = 0..19\n"
      "[sampler]\ndt = 0.3\nburnin = 1000\nthinning = 1\nn_samples = 10000000\n"
      "[recovery]\ngap_ratio = 1.2\nrefine_sweeps = 100\n");
  const double ma = mean(column(sim, {"3", "1e-05"}, "align_err_A"));
  const double mb = mean(column(sim, {"3", "1e-05"}, "align_err_B"));
  const std::vector<double> ok = column(sim, {"3", "1e-05"}, "recovered");
  const long rejected = std::count(ok.begin(), ok.end(), 0.0);
  return {done == 50 && worst <= 1e-6 && ma <= 0.15 && mb <= 0.15,
          "exact oracle: " + std::to_string(done) + " instances (" + std::to_string(resampled) +
              " resampled), worst align " + num(worst) + " (<= 1e-6); simulated eps=1e-5, 20 seeds: mean A " +
              num(ma) + ", B " + num(mb) + " (<= 0.15; " + std::to_string(rejected) +
              " rejected as non-generic, scored at sqrt(2))"};
}

Outcome nonlinear_fit() {
  const cli::ExperimentOutput out = run_config(
      "experiment = nonlinear-recovery\nn = 8\nr = 2\nk = 2, 3\nintervention_std = 0.5\nseeds = 0..9\n"
      "[fit]\nlr = 0.005\niters = 5000\nrestarts = 5\nhidden = 20\n");
  const double a2 = mean(column(out, {"2", "1"}, "align_err_A")), a3 = mean(column(out, {"3", "1"}, "align_err_A"));
  const double b2 = mean(column(out, {"2", "1"}, "align_err_B")), b3 = mean(column(out, {"3", "1"}, "align_err_B"));
  return {a3 < a2 && b3 < b2, "mean align A: k=r+1 " + num(a3) + " < k=r " + num(a2) + "; B: " + num(b3) + " < " +
                                  num(b2)};
}

Outcome kds_ordering() {
  const cli::ExperimentOutput out = run_config(
      "experiment = kds-generalization\nn = 10\nr = 3\nepsilon = 0.05, 0.3\nseeds = 0..4\n[kds]\nbandwidth = 0.5\n");
  const double s05 = median(column(out, {"0.05", "sigmoid"}, "test_mse"));
  const double l05 = median(column(out, {"0.05", "learnable"}, "test_mse"));
  const double s3 = median(column(out, {"0.3", "sigmoid"}, "test_mse"));
  const double l3 = median(column(out, {"0.3", "learnable"}, "test_mse"));
  const double r05 = s05 / l05, r3 = s3 / l3;
  return {l05 <= s05 && r05 > r3, "median test MSE eps=0.05: learnable " + num(l05) + " <= sigmoid " + num(s05) +
                                      "; ratio " + num(r05) + " > ratio at eps=0.3 " + num(r3) + " (" + num(s3) +
                                      " / " + num(l3) + ")"};
}

Outcome gradients() {
  double worst = 0.0;
  std::string worst_name;
  auto check = [&](const std::string& name, const fit::Objective& f, const Vec& x, Rng& rng) {
    const double gap = fit::finite_difference_check(f, x, rng, 20);
    if (gap >= worst) {
      worst = gap;
      worst_name = name;
    }
  };
  Rng rng(9);
  {
    const cli::LinearInstance in = cli::linear_instance(10, 3, 3, 1, true);
    const fit::LinearData d = fit::linear_oracle_data(in.truth, in.C, 0.5);
    for (bool learn : {false, true}) {
      const fit::LinearProblem p(d, 3, learn);
      for (int t = 0; t < 3; ++t) check("loss_linear", p.objective(), p.random_start(rng), rng);
    }
  }
  {
    const cli::NonlinearInstance in = cli::nonlinear_instance(8, 2, 3, 2, models::Activation::logistic());
    const fit::NonlinearData d = fit::nonlinear_oracle_data(in.truth, in.C);
    for (const models::Activation& act : {models::Activation::logistic(), models::Activation::learnable(2, 6, 3)}) {
      const fit::NonlinearProblem p(d, 2, act);
      for (int t = 0; t < 3; ++t) check("loss_nonlinear", p.objective(), p.random_start(rng), rng);
    }
    fit::KdsData kd;
    kd.C = in.C;
    kd.epsilon = 0.1;
    for (Index i = 0; i < in.C.cols(); ++i)
      kd.samples.push_back(sim::euler_maruyama(in.truth, in.C.col(i), 0.1, in.C.col(i), {0.01, 10, 20, 30, 5}));
    for (const models::Activation& act : {models::Activation::logistic(), models::Activation::learnable(2, 6, 3)}) {
      const fit::KdsProblem p(kd, 2, act);
      for (int t = 0; t < 3; ++t) check("kds_loss", p.objective(), p.random_start(rng), rng);
    }
    // Linear-drift KDS over [vec A, vec B] with the decay fixed.
    const models::LinearDrift lin = models::random_linear_drift(8, 2, rng);
    const fit::Objective kl = [&](const Vec& x, Vec& g) {
      models::LinearDrift d = lin;
      d.A = Eigen::Map<const Mat>(x.data(), 8, 2);
      d.B = Eigen::Map<const Mat>(x.data() + 16, 2, 8);
      loss::LinearDriftGrad grad;
      const double v = loss::kds_loss(d, in.C.col(0), 0.1, kd.samples[0], {}, &grad);
      g.resize(32);
      g << Eigen::Map<const Vec>(grad.A.data(), 16), Eigen::Map<const Vec>(grad.B.data(), 16);
      return v;
    };
    check("kds_loss linear", kl, linalg::random_normal(32, 1, rng, 0.3).col(0), rng);
  }
  {
    const Mat b = linalg::random_normal(12, 2, rng);
    const loss::SinkhornOptions opt{1.0, 20000, 1e-13};
    const fit::Objective f = [&](const Vec& x, Vec& g) {
      const Mat a = Eigen::Map<const Mat>(x.data(), 10, 2);
      Mat ga;
      const double v = loss::sinkhorn_divergence(a, b, opt, &ga);
      g = Eigen::Map<const Vec>(ga.data(), ga.size());
      return v;
    };
    for (int t = 0; t < 3; ++t) check("sinkhorn_divergence", f, linalg::random_normal(20, 1, rng).col(0), rng);
  }
  {
    const grn::GRNSpec spec = grn::synthetic_network("cycle");
    const auto regimes = grn::single_gene_regimes({0, 2});
    const auto data = grn::regime_batches(spec, regimes, 12, {0.02, 100, 4});
    grn::GrnFitConfig cfg;
    cfg.particles = 8;
    cfg.sim = {0.1, 5, 0};
    cfg.fit.l1_weight = 0.01;
    cfg.hidden = 3;
    for (grn::GrnActivation act : {grn::GrnActivation::logistic, grn::GrnActivation::learnable}) {
      const grn::GrnProblem p(data, regimes, 2, act, cfg, 11);
      const fit::Objective f = [&](const Vec& x, Vec& g) { return p.value(x, &g); };
      for (int t = 0; t < 2; ++t) {
        Rng r2(100 + t);
        check("grn sinkhorn", f, p.pack(p.random_start(r2)), rng);
      }
    }
  }
  return {worst <= 1e-3, "worst relative gap " + num(worst) + " (" + worst_name + ") over 20 directions per point"};
}

// Exhaustive alternative to low_rank_game for r = 2: scan alpha on the unit
// circle, refine every near-zero of sigma_2(alpha_1 S_1 + alpha_2 S_2), and
// read the surviving column of X and row of Y off the top singular pair.
struct GridOracle {
  Mat X, Yt;
};

GridOracle alpha_grid_oracle(const Mat& S1, const Mat& S2) {
  auto s2 = [&](double th) {
    Eigen::JacobiSVD<Mat> svd(std::cos(th) * S1 + std::sin(th) * S2);
    return svd.singularValues()(1) / svd.singularValues()(0);
  };
  const int grid = 3600;
  std::vector<double> vals(grid);
  for (int i = 0; i < grid; ++i) vals[static_cast<std::size_t>(i)] = s2(M_PI * i / grid);
  GridOracle out{Mat(S1.rows(), 0), Mat(S1.cols(), 0)};
  for (int i = 0; i < grid; ++i) {
    const double prev = vals[static_cast<std::size_t>((i + grid - 1) % grid)];
    const double next = vals[static_cast<std::size_t>((i + 1) % grid)];
    const double here = vals[static_cast<std::size_t>(i)];
    if (!(here <= prev && here < next)) continue;
    double lo = M_PI * (i - 1) / grid, hi = M_PI * (i + 1) / grid;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
      const double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
      if (s2(a) < s2(b)) hi = b;
      else lo = a;
    }
    const double th = 0.5 * (lo + hi);
    if (s2(th) > 1e-8) continue;
    Eigen::JacobiSVD<Mat> svd(std::cos(th) * S1 + std::sin(th) * S2, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.X.conservativeResize(Eigen::NoChange, out.X.cols() + 1);
    out.X.rightCols(1) = svd.matrixU().col(0);
    out.Yt.conservativeResize(Eigen::NoChange, out.Yt.cols() + 1);
    out.Yt.rightCols(1) = svd.matrixV().col(0);
  }
  return out;
}

Outcome low_rank_game() {
  double worst = 0.0;
  int matched = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(linalg::derive_seed(seed, 10));
    const Index n = 6;
    const Mat X = linalg::random_normal(n, 2, rng), Y = linalg::random_normal(2, 2, rng);
    std::vector<Mat> S;
    for (int i = 0; i < 2; ++i) S.push_back(X * linalg::random_normal(2, 1, rng).col(0).asDiagonal() * Y);
    const identify::GameResult game = identify::low_rank_game(S, 2, {seed, 20, 1e-6});
    const GridOracle oracle = alpha_grid_oracle(S[0], S[1]);
    if (oracle.X.cols() != 2) continue;
    ++matched;
    worst = std::max({worst, fit::align_up_to_perm_scale(game.X, oracle.X).err,
                      fit::align_up_to_perm_scale(game.Y.transpose(), oracle.Yt).err});
  }
  return {matched == 20 && worst <= 1e-6,
          std::to_string(matched) + "/20 oracles found both certificates; worst disagreement " + num(worst) +
              " (<= 1e-6)"};
}

Outcome grn_auprc() {
  const cli::ExperimentOutput out = run_config(
      "experiment = grn\nr = 8\nseeds = 0..4\n"
      "[grn]\nnetwork = mixed12\ncells = 100\ndt = 0.02\nsteps = 500\niters = 300\nl1_weight = 0.1\n");
  const double learn = median(column(out, {"learnable"}, "auprc"));
  const double logi = median(column(out, {"logistic"}, "auprc"));
  const double density = column(out, {"logistic"}, "density").front();
  return {learn >= logi && logi > density && learn > density,
          "median AUPRC learnable " + num(learn) + " >= logistic " + num(logi) + " > density " + num(density)};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "Lyapunov correctness", 60, lyapunov},
      {2, "linear identifiability threshold", 600, linear_threshold},
      {3, "closed-form linear recovery", 30, linear_closed_form},
      {4, "lower-bound certificates", 60, certificates},
      {5, "zero-noise perturbation rates", 1200, perturbation},
      {6, "closed-form nonlinear recovery", 1800, nonlinear_closed_form},
      {7, "optimization-based nonlinear fit", 1800, nonlinear_fit},
      {8, "KDS generalization ordering", 3600, kds_ordering},
      {9, "gradient contract", 60, gradients},
      {10, "low-rank game oracle equivalence", 60, low_rank_game},
      {11, "GRN directional claim", 3600, grn_auprc},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double t = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool pass = o.pass && t < c.limit_s;
    failed += pass ? 0 : 1;
    std::printf("CRITERION %2d %s: %s | %s | %.1f s (limit %.0f s)\n", c.id, pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), t, c.limit_s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
