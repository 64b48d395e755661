#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <variant>

#include "CLI11.hpp"
#include "sdeid/cli.hpp"
#include "sdeid/error.hpp"

using namespace sdeid;

namespace {

Vec parse_vector(const std::string& text, Index n) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  if (v.size() == 1 && n > 1) v.assign(static_cast<std::size_t>(n), v[0]);
  if (static_cast<Index>(v.size()) != n)
    throw Error(Errc::dimension_mismatch, "shift has " + std::to_string(v.size()) + " entries, drift has " +
                                              std::to_string(n));
  return Eigen::Map<Vec>(v.data(), n);
}

void write_csv(const std::string& path, const Mat& samples) {
  if (path == "-") {
    sim::write_samples_csv(std::cout, samples);
    return;
  }
  std::ofstream f(path);
  if (!f) throw Error(Errc::io_error, "cannot write '" + path + "'");
  sim::write_samples_csv(f, samples);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identifiability experiments for SDEs with low-rank drift under shift interventions"};
  app.footer("\n" + cli::csv_schema_help());
  app.require_subcommand(1);

  std::string output_dir;
  int threads = 1;

  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  std::string config_path;
  std::vector<std::uint64_t> seed_override;
  run->add_option("config", config_path, "Config file (key = value with [section] headers)")
      ->required()
      ->check(CLI::ExistingFile);
  run->add_option("--output-dir", output_dir, "Overrides output_dir from the config");
  run->add_option("--seed", seed_override, "Run only these seeds");
  run->add_option("--threads", threads, "Seeds run in parallel")->check(CLI::PositiveNumber);

  auto* certify = app.add_subcommand("certify", "Build one counterexample and print its certificate");
  std::string cert_case;
  Index cn = 8, cr = 4;
  std::uint64_t cseed = 0;
  certify->add_option("--case", cert_case, "adversarial | lower | ode")
      ->required()
      ->check(CLI::IsMember(cli::certificate_cases()));
  certify->add_option("--n", cn, "State dimension")->check(CLI::PositiveNumber);
  certify->add_option("--r", cr, "Rank")->check(CLI::PositiveNumber);
  certify->add_option("--seed", cseed, "Instance seed");
  certify->add_option("--output-dir", output_dir, "Also write certificates.txt here");

  auto* simulate = app.add_subcommand("simulate", "Sample a drift file or a gene network and write CSV");
  std::string drift_path, network, out_path = "-", shift_text = "0", targets_text;
  double epsilon = 0.01, dt = 0.01, grn_shift = 20.0;
  Index n_samples = 1000, burnin = 100, thinning = 300, cells = 100, steps = 500;
  std::uint64_t sseed = 0;
  auto* drift_opt = simulate->add_option("--drift", drift_path, "Drift file")->check(CLI::ExistingFile);
  simulate->add_option("--network", network, "Built-in network name or network file")->excludes(drift_opt);
  simulate->add_option("--shift", shift_text, "Drift shift c: one value or n comma-separated values");
  simulate->add_option("--epsilon", epsilon, "Noise level of the drift SDE")->check(CLI::NonNegativeNumber);
  simulate->add_option("--samples", n_samples, "Recorded samples (drift)")->check(CLI::PositiveNumber);
  simulate->add_option("--burnin", burnin, "Discarded samples (drift)")->check(CLI::NonNegativeNumber);
  simulate->add_option("--thinning", thinning, "Steps between samples (drift)")->check(CLI::PositiveNumber);
  simulate->add_option("--dt", dt, "Integrator step")->check(CLI::PositiveNumber);
  simulate->add_option("--targets", targets_text, "Comma-separated overexpressed gene names (network)");
  simulate->add_option("--overexpression", grn_shift, "Overexpression shift (network)");
  simulate->add_option("--cells", cells, "Cells (network)")->check(CLI::PositiveNumber);
  simulate->add_option("--steps", steps, "Integrator steps per cell (network)")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sseed, "RNG seed");
  simulate->add_option("-o,--out", out_path, "Output CSV ('-' for stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      cli::ExperimentConfig cfg = cli::load_experiment_config(config_path);
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      if (!seed_override.empty()) cfg.seeds = seed_override;
      const cli::ExperimentOutput out = cli::run_experiment(cfg, threads);
      cli::write_outputs(out, cfg.output_dir, cfg.plots);
      cli::write_summary_csv(std::cout, out.schema, out.summary);
      if (!out.certificates.empty()) {
        bool all = true;
        for (const cli::ResultRow& row : out.rows) all = all && row.metrics.back() == 1.0;
        std::cout << "certificates: " << (all ? "all checks PASS" : "some checks FAIL") << '\n';
      }
      std::cerr << "wrote " << cfg.output_dir << '\n';
      return 0;
    }
    if (certify->parsed()) {
      const identify::Certificate cert = cli::certify_case(cert_case, cn, cr, cseed);
      identify::write_certificate(std::cout, cert);
      if (!output_dir.empty()) {
        std::filesystem::create_directories(output_dir);
        std::ofstream f(std::filesystem::path(output_dir) / "certificates.txt");
        if (!f) throw Error(Errc::io_error, "cannot write certificates.txt in '" + output_dir + "'");
        identify::write_certificate(f, cert);
      }
      return cert.passed() ? 0 : 1;
    }
    if (simulate->parsed()) {
      if (!drift_path.empty()) {
        std::ifstream f(drift_path);
        const models::AnyDrift d = models::read_drift(f);
        sim::SamplerConfig sc{dt, burnin, thinning, n_samples, sseed};
        const Mat samples = std::visit(
            [&](const auto& drift) {
              const Vec c = parse_vector(shift_text, drift.n());
              return sim::euler_maruyama(drift, c, epsilon, sim::default_start(drift, c), sc);
            },
            d);
        write_csv(out_path, samples);
        return 0;
      }
      if (network.empty()) throw Error(Errc::config_error, "simulate needs --drift or --network");
      const auto builtin = grn::synthetic_network_names();
      const grn::GRNSpec spec = std::find(builtin.begin(), builtin.end(), network) != builtin.end()
                                    ? grn::synthetic_network(network)
                                    : grn::read_grn_file(network);
      grn::InterventionRegime regime;
      regime.shift = grn_shift;
      std::stringstream ss(targets_text);
      std::string name;
      while (std::getline(ss, name, ',')) {
        const auto it = std::find(spec.names.begin(), spec.names.end(), name);
        if (it == spec.names.end()) throw Error(Errc::config_error, "unknown gene '" + name + "'");
        regime.targets.push_back(static_cast<Index>(it - spec.names.begin()));
      }
      const grn::EnsembleConfig ec{dt, steps, sseed};
      const Mat start = grn::observational_batch(spec, cells, ec);
      write_csv(out_path, regime.targets.empty() ? start : grn::simulate_grn(spec, regime, ec, start));
      return 0;
    }
  } catch (const sdeid::Error& e) {
    std::cerr << "sde-identify: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "sde-identify: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
