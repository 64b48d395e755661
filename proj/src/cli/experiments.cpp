#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "sdeid/cli.hpp"
#include "sdeid/error.hpp"

namespace sdeid::cli {

namespace {

using linalg::derive_seed;

std::string key_num(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

models::Activation truth_activation(const ExperimentConfig& cfg) { return activation_by_name(cfg.activation); }

bool genericity_failure(const Error& e) {
  return e.code() == Errc::rank_deficient || e.code() == Errc::degenerate_spectrum ||
         e.code() == Errc::alpha_degenerate;
}

Index max_k(const ExperimentConfig& cfg) { return *std::max_element(cfg.k.begin(), cfg.k.end()); }

std::vector<ResultRow> run_linear(const ExperimentConfig& cfg, std::uint64_t seed) {
  const LinearInstance in = linear_instance(cfg.n, cfg.r, max_k(cfg), seed, cfg.learn_decay, cfg.intervention_std);
  std::vector<ResultRow> rows;
  for (std::size_t ei = 0; ei < cfg.epsilon.size(); ++ei) {
    const double eps = cfg.epsilon[ei];
    for (Index k : cfg.k) {
      const Mat C = in.C.leftCols(k);
      fit::LinearData data;
      if (cfg.sampled_moments) {
        data.C = C;
        data.means.resize(cfg.n, k);
        data.omega = Mat::Zero(cfg.n, cfg.n);
        for (Index i = 0; i < k; ++i) {
          sim::SamplerConfig sc = cfg.sampler;
          sc.seed = derive_seed(seed, 1000 + 100 * ei + static_cast<std::uint64_t>(i));
          const sim::StationaryMoments m = sim::sample_moments(in.truth, C.col(i), eps, sim::default_start(in.truth, C.col(i)), sc);
          data.means.col(i) = m.mean;
          data.omega += m.cov / static_cast<double>(k);
        }
        data.epsilon = eps;
        data.decay = in.truth.decay;
      } else {
        data = fit::linear_oracle_data(in.truth, C, eps);
      }
      fit::FitConfig fc = cfg.fit;
      fc.seed = derive_seed(seed, 2);
      const fit::RecoveryResult res = fit::fit_linear(data, cfg.r, cfg.learn_decay, fc, &in.truth);
      rows.push_back({seed, {std::to_string(k), key_num(eps)},
                      {res.drift_err, res.align_err_A, res.align_err_B, res.train_loss}});
    }
  }
  return rows;
}

std::vector<ResultRow> run_nonlinear(const ExperimentConfig& cfg, std::uint64_t seed) {
  const NonlinearInstance in =
      nonlinear_instance(cfg.n, cfg.r, max_k(cfg), seed, truth_activation(cfg), cfg.intervention_std);
  std::vector<ResultRow> rows;
  for (std::size_t ei = 0; ei < cfg.epsilon.size(); ++ei) {
    const double eps = cfg.epsilon[ei];
    for (Index k : cfg.k) {
      const Mat C = in.C.leftCols(k);
      sim::SamplerConfig sc = cfg.sampler;
      sc.seed = derive_seed(seed, 1000 + ei);
      if (cfg.closed_form) {
        const identify::MomentOracle oracle = cfg.sampled_moments ? identify::simulated_oracle(in.truth, C, eps, sc)
                                                                  : identify::exact_oracle(in.truth, C);
        identify::RecoveryOptions opt = cfg.recovery;
        opt.seed = derive_seed(seed, 3);
        // A rejected instance stays in the results at the largest possible
        // alignment error.
        double ea = std::sqrt(2.0), eb = std::sqrt(2.0), ok = 0.0;
        try {
          const identify::NonlinearRecovery rec = identify::recover_nonlinear_closedform(oracle, cfg.r, opt);
          ea = fit::align_up_to_perm_scale(rec.Ahat, in.truth.A).err;
          eb = fit::align_up_to_perm_scale(rec.Bhat.transpose(), in.truth.B.transpose()).err;
          ok = 1.0;
        } catch (const Error& e) {
          if (!genericity_failure(e)) throw;
        }
        rows.push_back({seed, {std::to_string(k), key_num(eps)}, {ea, eb, NAN, NAN, ok}});
        continue;
      }
      const fit::NonlinearData data = cfg.sampled_moments ? fit::nonlinear_sampled_data(in.truth, C, eps, sc)
                                                          : fit::nonlinear_oracle_data(in.truth, C);
      fit::NonlinearModelSpec spec;
      spec.act_hidden = cfg.hidden;
      spec.fixed_act = in.truth.act;
      fit::FitConfig fc = cfg.fit;
      fc.seed = derive_seed(seed, 2);
      const fit::RecoveryResult res = fit::fit_nonlinear(data, cfg.r, spec, fc, &in.truth);
      rows.push_back({seed, {std::to_string(k), key_num(eps)},
                      {res.align_err_A, res.align_err_B, res.drift_err, res.train_loss, 1.0}});
    }
  }
  return rows;
}

std::vector<ResultRow> run_kds(const ExperimentConfig& cfg, std::uint64_t seed) {
  const models::NonlinearDrift truth = kds_truth(cfg.n, cfg.kds.scale);
  Rng rng(derive_seed(seed, 1));
  const Mat C = linalg::random_normal(cfg.n, cfg.kds.train_interventions, rng, cfg.kds.intervention_std);
  const Mat C_test = linalg::random_normal(cfg.n, cfg.kds.test_interventions, rng, cfg.kds.intervention_std);
  std::vector<ResultRow> rows;
  for (std::size_t ei = 0; ei < cfg.epsilon.size(); ++ei) {
    const double eps = cfg.epsilon[ei];
    fit::KdsData data;
    data.C = C;
    data.epsilon = eps;
    data.kernel.bandwidth = cfg.kds.bandwidth;
    for (Index i = 0; i < C.cols(); ++i) {
      sim::SamplerConfig sc = cfg.sampler;
      sc.seed = derive_seed(seed, 1000 + 100 * ei + static_cast<std::uint64_t>(i));
      data.samples.push_back(sim::euler_maruyama(truth, C.col(i), eps, C.col(i), sc));
    }
    for (Index hidden : {Index{0}, cfg.kds.hidden}) {
      fit::NonlinearModelSpec spec;
      spec.act_hidden = hidden;
      fit::FitConfig fc = cfg.fit;
      fc.seed = derive_seed(seed, 2);
      const fit::RecoveryResult res = fit::fit_kds(data, cfg.r, spec, fc, &truth);
      const models::NonlinearDrift fitted{res.Ahat, res.Bhat, res.act};
      sim::SamplerConfig ec = cfg.sampler;
      ec.seed = derive_seed(seed, 5000 + ei);
      const double mse = fit::kds_generalization_mse(fitted, truth, C_test, eps, ec);
      rows.push_back({seed, {key_num(eps), hidden == 0 ? "sigmoid" : "learnable"}, {mse, res.train_loss, res.align_err_A}});
    }
  }
  return rows;
}

grn::GRNSpec load_network(const std::string& name) {
  const auto builtin = grn::synthetic_network_names();
  if (std::find(builtin.begin(), builtin.end(), name) != builtin.end()) return grn::synthetic_network(name);
  return grn::read_grn_file(name);
}

std::vector<ResultRow> run_grn(const ExperimentConfig& cfg, std::uint64_t seed) {
  const grn::GRNSpec spec = load_network(cfg.grn.network);
  std::vector<Index> genes(static_cast<std::size_t>(spec.n()));
  for (Index j = 0; j < spec.n(); ++j) genes[static_cast<std::size_t>(j)] = j;
  const auto regimes = grn::single_gene_regimes(genes, cfg.grn.shift);
  grn::EnsembleConfig ec = cfg.grn.data;
  ec.seed = seed;
  const std::vector<Mat> data = grn::regime_batches(spec, regimes, cfg.grn.cells, ec);
  std::vector<ResultRow> rows;
  for (grn::GrnActivation act : {grn::GrnActivation::logistic, grn::GrnActivation::learnable}) {
    grn::GrnFitConfig fc = cfg.grn.model;
    fc.fit.seed = seed;
    const grn::GrnFitResult res = grn::fit_grn_model(data, regimes, cfg.r, act, fc);
    rows.push_back({seed, {std::string(grn::to_string(act))},
                    {grn::auprc(res.grn, spec.adjacency()), res.loss_trace.back(), spec.edge_density()}});
  }
  return rows;
}

std::vector<ResultRow> run_counterexamples(const ExperimentConfig& cfg, std::uint64_t seed, std::string& report) {
  std::vector<ResultRow> rows;
  std::ostringstream os;
  for (const std::string& kind : certificate_cases()) {
    const identify::Certificate cert = certify_case(kind, cfg.n, cfg.r, seed);
    os << "seed " << seed << ' ';
    identify::write_certificate(os, cert);
    for (const identify::CertificateCheck& c : cert.checks)
      rows.push_back({seed, {cert.construction, c.name}, {c.value, c.tol, c.passed() ? 1.0 : 0.0}});
  }
  report = os.str();
  return rows;
}

std::vector<ResultRow> run_perturbation(const ExperimentConfig& cfg, std::uint64_t seed) {
  const NonlinearInstance in = nonlinear_instance(cfg.n, cfg.r, 1, seed, truth_activation(cfg), cfg.intervention_std);
  const double gamma = in.truth.contraction_rate();
  std::vector<ResultRow> rows;
  for (std::size_t ei = 0; ei < cfg.epsilon.size(); ++ei) {
    const double eps = cfg.epsilon[ei];
    sim::SamplerConfig sc = cfg.sampler;
    sc.seed = derive_seed(seed, 1000 + ei);
    const sim::CovarianceError ce = sim::linearization_covariance_error(in.truth, in.C.col(0), eps, sc);
    const double bound = std::sqrt(eps * static_cast<double>(cfg.n) / (1.0 - gamma));
    rows.push_back({seed, {key_num(eps)}, {(ce.mean - ce.xstar).norm(), bound, ce.direct, ce.coupled}});
  }
  return rows;
}

std::vector<ResultRow> run_seed(const ExperimentConfig& cfg, std::uint64_t seed, std::string& report) {
  switch (cfg.experiment) {
    case Experiment::linear_recovery: return run_linear(cfg, seed);
    case Experiment::nonlinear_recovery: return run_nonlinear(cfg, seed);
    case Experiment::kds_generalization: return run_kds(cfg, seed);
    case Experiment::grn: return run_grn(cfg, seed);
    case Experiment::counterexamples: return run_counterexamples(cfg, seed, report);
    case Experiment::perturbation_check: return run_perturbation(cfg, seed);
  }
  return {};
}

// One plot per secondary key value (epsilon for the recovery sweeps): the
// first key on x, every plotted metric as a series.
std::map<std::string, PlotSpec> make_plots(const ExperimentConfig& cfg, const Schema& schema,
                                           const std::vector<SummaryRow>& summary) {
  std::map<std::string, PlotSpec> plots;
  auto metric_index = [&](const std::string& m) {
    return static_cast<std::size_t>(std::find(schema.metrics.begin(), schema.metrics.end(), m) - schema.metrics.begin());
  };
  auto add_series = [&](PlotSpec& p, const std::string& label, const std::vector<const SummaryRow*>& rows,
                        std::size_t key, std::size_t m) {
    Series s{label, {}, {}, {}};
    for (const SummaryRow* row : rows) {
      if (!std::isfinite(row->mean[m])) return;
      s.x.push_back(std::stod(row->keys[key]));
      s.y.push_back(row->mean[m]);
      s.yerr.push_back(row->stddev[m]);
    }
    if (!s.x.empty()) p.series.push_back(std::move(s));
  };
  switch (cfg.experiment) {
    case Experiment::linear_recovery:
    case Experiment::nonlinear_recovery: {
      std::vector<std::string> metrics = cfg.experiment == Experiment::linear_recovery
                                             ? std::vector<std::string>{"drift_err"}
                                             : std::vector<std::string>{"align_err_A", "align_err_B"};
      for (double eps : cfg.epsilon) {
        std::vector<const SummaryRow*> rows;
        for (const SummaryRow& row : summary)
          if (row.keys[1] == key_num(eps)) rows.push_back(&row);
        PlotSpec p{std::string(to_string(cfg.experiment)) + " (eps = " + key_num(eps) + ")", "interventions k",
                   cfg.experiment == Experiment::linear_recovery ? "normalized drift error" : "alignment error", {}};
        for (const std::string& m : metrics) add_series(p, m, rows, 0, metric_index(m));
        if (!p.series.empty()) plots["error_vs_k_eps" + key_num(eps) + ".svg"] = std::move(p);
      }
      break;
    }
    case Experiment::kds_generalization: {
      PlotSpec p{"held-out mean error", "noise level epsilon", "test MSE", {}};
      for (const std::string model : {"sigmoid", "learnable"}) {
        std::vector<const SummaryRow*> rows;
        for (const SummaryRow& row : summary)
          if (row.keys[1] == model) rows.push_back(&row);
        add_series(p, model, rows, 0, metric_index("test_mse"));
      }
      if (!p.series.empty()) plots["mse_vs_epsilon.svg"] = std::move(p);
      break;
    }
    case Experiment::perturbation_check: {
      std::vector<const SummaryRow*> rows;
      for (const SummaryRow& row : summary) rows.push_back(&row);
      PlotSpec p{"zero-noise limit", "noise level epsilon", "error", {}};
      for (const std::string m : {"mean_err", "mean_bound", "cov_err_direct", "cov_err_coupled"})
        add_series(p, m, rows, 0, metric_index(m));
      plots["errors_vs_epsilon.svg"] = std::move(p);
      break;
    }
    case Experiment::grn:
    case Experiment::counterexamples: break;
  }
  return plots;
}

}  // namespace

models::Activation activation_by_name(std::string_view name) {
  if (name == "logistic") return models::Activation::logistic();
  if (name == "leaky_logistic") return models::Activation::leaky_logistic(0.1, 0.9);
  if (name == "sine_mix") return models::Activation::sine_mix();
  throw Error(Errc::config_error, "unknown activation '" + std::string(name) + "' (logistic, leaky_logistic, sine_mix)");
}

LinearInstance linear_instance(Index n, Index r, Index k_max, std::uint64_t seed, bool random_decay,
                               double intervention_std) {
  Rng rng(derive_seed(seed, 1));
  LinearInstance in{models::random_linear_drift(n, r, rng, 0.9, random_decay), Mat()};
  in.C = linalg::random_normal(n, k_max, rng, intervention_std);
  return in;
}

NonlinearInstance nonlinear_instance(Index n, Index r, Index k_max, std::uint64_t seed, const models::Activation& act,
                                     double intervention_std) {
  Rng rng(derive_seed(seed, 1));
  NonlinearInstance in{models::random_nonlinear_drift(n, r, rng, act), Mat()};
  in.C = linalg::random_normal(n, k_max, rng, intervention_std);
  return in;
}

models::NonlinearDrift kds_truth(Index n, double scale) {
  if (n < 3) throw Error(Errc::invalid_param, "kds_truth: needs n >= 3");
  models::NonlinearDrift d{Mat::Zero(n, 3), Mat::Zero(3, n), models::Activation::sine_mix()};
  for (Index j = 0; j < 3; ++j) d.A(j, j) = d.B(j, j) = scale;
  return d;
}

std::vector<std::string> certificate_cases() { return {"adversarial", "lower", "ode"}; }

identify::Certificate certify_case(std::string_view kind, Index n, Index r, std::uint64_t seed) {
  if (kind == "adversarial") return identify::counterexample_linear_adversarial(n, r, 0.1, seed).cert;
  Rng rng(derive_seed(seed, 1));
  if (kind == "lower") {
    if (r < 2) throw Error(Errc::invalid_param, "certify lower: needs r >= 2");
    const models::LinearDrift d = models::random_linear_drift(n, r, rng, 0.9, false);
    const Mat C = linalg::random_normal(n, r - 2, rng);
    return identify::counterexample_linear_lower(d.A, d.B, C).cert;
  }
  if (kind == "ode") {
    if (n - r - 1 < 1) throw Error(Errc::invalid_param, "certify ode: needs n >= r + 2");
    const models::NonlinearDrift d = models::random_nonlinear_drift(n, r, rng, models::Activation::logistic());
    const Mat C = linalg::random_normal(n, n - r - 1, rng);
    const Vec b = linalg::random_normal(r, 1, rng).col(0);
    return identify::counterexample_ode(d, C, b).cert;
  }
  throw Error(Errc::config_error, "unknown certificate case '" + std::string(kind) + "' (adversarial, lower, ode)");
}

ExperimentOutput run_experiment(const ExperimentConfig& cfg, int threads) {
  cfg.validate();
  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

  struct Slot {
    std::vector<ResultRow> rows;
    std::string report;
    std::exception_ptr error;
  };
  std::vector<Slot> slots(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        slots[i].rows = run_seed(cfg, seeds[i], slots[i].report);
      } catch (...) {
        slots[i].error = std::current_exception();
      }
    }
  };
  const int n_workers = std::clamp(threads, 1, static_cast<int>(seeds.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ExperimentOutput out;
  out.schema = schema_for(cfg.experiment);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (slots[i].error) {
      const std::string ctx = std::string(to_string(cfg.experiment)) + " seed " + std::to_string(seeds[i]) + ": ";
      try {
        std::rethrow_exception(slots[i].error);
      } catch (const Error& e) {
        throw Error(e.code(), ctx + e.what());
      } catch (const std::exception& e) {
        throw std::runtime_error(ctx + e.what());
      }
    }
    out.rows.insert(out.rows.end(), slots[i].rows.begin(), slots[i].rows.end());
    out.certificates += slots[i].report;
  }
  out.summary = summarize(out.rows, out.schema.metrics.size());
  out.plots = make_plots(cfg, out.schema, out.summary);
  return out;
}

void write_outputs(const ExperimentOutput& out, const std::string& dir, bool plots) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::io_error, "cannot create output directory '" + dir + "': " + ec.message());
  auto write = [&](const std::string& name, auto&& body) {
    const std::string path = (fs::path(dir) / name).string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(Errc::io_error, "cannot write '" + path + "'");
    body(f);
    if (!f) throw Error(Errc::io_error, "write failed for '" + path + "'");
  };
  write("results.csv", [&](std::ostream& os) { write_results_csv(os, out.schema, out.rows); });
  write("summary.csv", [&](std::ostream& os) { write_summary_csv(os, out.schema, out.summary); });
  if (!out.certificates.empty()) write("certificates.txt", [&](std::ostream& os) { os << out.certificates; });
  if (plots && !out.plots.empty()) {
    fs::create_directories(fs::path(dir) / "plots", ec);
    if (ec) throw Error(Errc::io_error, "cannot create plot directory: " + ec.message());
    for (const auto& [name, plot] : out.plots) emit_plot(plot, (fs::path(dir) / "plots" / name).string());
  }
}

}  // namespace sdeid::cli
