#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sdeid/fit.hpp"
#include "sdeid/grn.hpp"
#include "sdeid/identify.hpp"

namespace sdeid::cli {

// Config files:
//
//   # comment
//   experiment = linear-recovery
//   k = 2, 4, 12
//   seeds = 0..4          (inclusive range, or a comma list)
//   [fit]
//   iters = 3000
//
// Keys before the first header are top level; a key inside [s] is addressed
// as "s.key". Duplicate and unused keys are config errors.
class ConfigFile {
 public:
  static ConfigFile parse(std::istream& is, const std::string& origin = "<config>");
  static ConfigFile read(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  Index get_int(const std::string& key, Index fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;
  /// Comma list or inclusive range "a..b".
  std::vector<Index> get_ints(const std::string& key, std::vector<Index> fallback) const;
  std::vector<std::uint64_t> get_uints(const std::string& key, std::vector<std::uint64_t> fallback) const;
  /// Throws config_error naming the first key nobody asked for.
  void check_all_used() const;
  const std::string& origin() const { return origin_; }

 private:
  struct Entry {
    std::string value;
    int line = 0;
    mutable bool used = false;
  };
  const Entry* find(const std::string& key) const;
  [[noreturn]] void fail(const std::string& key, const Entry& e, const std::string& what) const;

  std::string origin_;
  std::map<std::string, Entry> entries_;
};

enum class Experiment { linear_recovery, nonlinear_recovery, kds_generalization, grn, counterexamples, perturbation_check };

std::string_view to_string(Experiment e);
Experiment parse_experiment(std::string_view name);
std::vector<std::string> experiment_names();

struct KdsSettings {
  Index train_interventions = 10;
  Index test_interventions = 10;
  double intervention_std = 0.31622776601683794;  // variance 0.1
  double scale = 0.32998316455372217;  // entries of A = B^T; contraction rate 9 scale^2 = 0.98
  double bandwidth = 0.5;
  Index hidden = 20;  // learnable model; compared against the fixed logistic
};

struct GrnSettings {
  std::string network = "mixed12";  // built-in name or a network file
  Index cells = 100;                // per regime
  grn::EnsembleConfig data{0.02, 500, 0};
  double shift = 20.0;
  grn::GrnFitConfig model;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::linear_recovery;
  Index n = 20, r = 4;
  std::vector<Index> k{4};
  std::vector<double> epsilon{1.0};
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "results";
  bool plots = true;

  sim::SamplerConfig sampler;
  fit::FitConfig fit;
  identify::RecoveryOptions recovery;

  bool sampled_moments = false;  // moments = exact | sampled
  bool learn_decay = false;
  bool closed_form = false;  // method = optimize | closed-form (nonlinear-recovery)
  std::string activation = "logistic";  // truth activation for nonlinear instances
  Index hidden = 0;  // learnable width of the nonlinear-recovery model (0 = truth activation)
  double intervention_std = 1.0;

  KdsSettings kds;
  GrnSettings grn;

  /// Counts positive, epsilon >= 0, known experiment, non-empty seed list.
  void validate() const;
};

/// Reads every key the experiment uses; relative network paths resolve
/// against `base_dir`.
ExperimentConfig parse_experiment_config(const ConfigFile& file, const std::string& base_dir = ".");
ExperimentConfig load_experiment_config(const std::string& path);

// Results: one row per (seed, cell) with string keys and numeric metrics.

struct Schema {
  std::vector<std::string> keys;
  std::vector<std::string> metrics;
};

struct ResultRow {
  std::uint64_t seed = 0;
  std::vector<std::string> keys;
  std::vector<double> metrics;
};

struct SummaryRow {
  std::vector<std::string> keys;
  Index count = 0;
  std::vector<double> mean, stddev;  // sample standard deviation (0 for one seed)
};

Schema schema_for(Experiment e);

/// Groups by key tuple in order of first appearance.
std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows, std::size_t n_metrics);

/// results.csv: seed, keys..., metrics...
void write_results_csv(std::ostream& os, const Schema& schema, const std::vector<ResultRow>& rows);
/// summary.csv: keys..., count, then <metric>_mean,<metric>_std per metric.
void write_summary_csv(std::ostream& os, const Schema& schema, const std::vector<SummaryRow>& rows);

/// Column documentation for every experiment (printed by --help).
std::string csv_schema_help();

struct Series {
  std::string label;
  std::vector<double> x, y, yerr;  // yerr empty or one entry per point
};

struct PlotSpec {
  std::string title, xlabel, ylabel;
  std::vector<Series> series;
};

/// Self-contained SVG: axes with ticks, one polyline with markers and
/// error bars per series, and a legend. Same input, same bytes.
std::string render_svg(const PlotSpec& plot);
void emit_plot(const PlotSpec& plot, const std::string& path);

struct ExperimentOutput {
  Schema schema;
  std::vector<ResultRow> rows;  // sorted by seed
  std::vector<SummaryRow> summary;
  std::string certificates;     // empty unless the experiment produces certificates
  std::map<std::string, PlotSpec> plots;  // file name -> plot
};

/// Runs every seed on `threads` workers and collects rows in seed order.
/// Errors are rethrown with experiment and seed context.
ExperimentOutput run_experiment(const ExperimentConfig& cfg, int threads = 1);

/// results.csv, summary.csv, certificates.txt (when non-empty) and plots/.
void write_outputs(const ExperimentOutput& out, const std::string& dir, bool plots = true);

// Certificates for the individual constructions on seeded instances:
//   adversarial: counterexample_linear_adversarial(n, r, 0.1, seed)
//   lower:       random linear drift with D = I and k = r - 2 interventions
//   ode:         random logistic drift with k = n - r - 1 interventions
identify::Certificate certify_case(std::string_view kind, Index n, Index r, std::uint64_t seed);
std::vector<std::string> certificate_cases();

// Instances shared by the runners and the acceptance checks.

models::Activation activation_by_name(std::string_view name);
/// Truth and an n x k_max intervention matrix drawn from Rng(derive_seed(seed, 1)).
struct LinearInstance {
  models::LinearDrift truth;
  Mat C;
};
LinearInstance linear_instance(Index n, Index r, Index k_max, std::uint64_t seed, bool random_decay = false,
                               double intervention_std = 1.0);
struct NonlinearInstance {
  models::NonlinearDrift truth;
  Mat C;
};
NonlinearInstance nonlinear_instance(Index n, Index r, Index k_max, std::uint64_t seed, const models::Activation& act,
                                     double intervention_std = 1.0);
/// A = B^T = scale [I_3; 0] padded to n, sine_mix activation.
models::NonlinearDrift kds_truth(Index n, double scale);

}  // namespace sdeid::cli
