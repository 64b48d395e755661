#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>

#include "sdeid/cli.hpp"
#include "sdeid/error.hpp"

namespace sdeid::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

[[noreturn]] void config_error(const std::string& msg) { throw Error(Errc::config_error, msg); }

}  // namespace

ConfigFile ConfigFile::parse(std::istream& is, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::string section, raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line);
    if (text.front() == '[') {
      if (text.back() != ']' || text.size() < 3) config_error(where + ": malformed section header '" + text + "'");
      section = trim(text.substr(1, text.size() - 2));
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) config_error(where + ": expected 'key = value', got '" + text + "'");
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (key.empty()) config_error(where + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (cfg.entries_.count(full)) config_error(where + ": duplicate key '" + full + "'");
    cfg.entries_[full] = Entry{value, line, false};
  }
  return cfg;
}

ConfigFile ConfigFile::read(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::io_error, "cannot open config '" + path + "'");
  return parse(f, path);
}

const ConfigFile::Entry* ConfigFile::find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  it->second.used = true;
  return &it->second;
}

void ConfigFile::fail(const std::string& key, const Entry& e, const std::string& what) const {
  config_error(origin_ + ":" + std::to_string(e.line) + ": '" + key + "' " + what + ", got '" + e.value + "'");
}

bool ConfigFile::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  const Entry* e = find(key);
  return e ? e->value : fallback;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  double v = 0.0;
  if (!parse_number(e->value, v)) fail(key, *e, "expects a number");
  return v;
}

Index ConfigFile::get_int(const std::string& key, Index fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  long long v = 0;
  if (!parse_number(e->value, v)) {
    // Accept integral reals such as 1e7.
    double d = 0.0;
    if (!parse_number(e->value, d) || d != static_cast<double>(static_cast<long long>(d)))
      fail(key, *e, "expects an integer");
    v = static_cast<long long>(d);
  }
  return static_cast<Index>(v);
}

std::uint64_t ConfigFile::get_uint(const std::string& key, std::uint64_t fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::uint64_t v = 0;
  if (!parse_number(e->value, v)) fail(key, *e, "expects a non-negative integer");
  return v;
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "yes" || e->value == "1") return true;
  if (e->value == "false" || e->value == "no" || e->value == "0") return false;
  fail(key, *e, "expects true or false");
}

std::vector<double> ConfigFile::get_doubles(const std::string& key, std::vector<double> fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<double> out;
  for (const std::string& item : split_list(e->value)) {
    double v = 0.0;
    if (!parse_number(item, v)) fail(key, *e, "expects a comma-separated list of numbers");
    out.push_back(v);
  }
  if (out.empty()) fail(key, *e, "expects at least one value");
  return out;
}

std::vector<std::uint64_t> ConfigFile::get_uints(const std::string& key, std::vector<std::uint64_t> fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<std::uint64_t> out;
  const auto dots = e->value.find("..");
  if (dots != std::string::npos) {
    std::uint64_t a = 0, b = 0;
    if (!parse_number(trim(e->value.substr(0, dots)), a) || !parse_number(trim(e->value.substr(dots + 2)), b) || b < a)
      fail(key, *e, "expects a range a..b with a <= b");
    for (std::uint64_t v = a; v <= b; ++v) out.push_back(v);
    return out;
  }
  for (const std::string& item : split_list(e->value)) {
    std::uint64_t v = 0;
    if (!parse_number(item, v)) fail(key, *e, "expects a comma-separated list of non-negative integers");
    out.push_back(v);
  }
  if (out.empty()) fail(key, *e, "expects at least one value");
  return out;
}

std::vector<Index> ConfigFile::get_ints(const std::string& key, std::vector<Index> fallback) const {
  std::vector<std::uint64_t> fb;
  for (Index v : fallback) fb.push_back(static_cast<std::uint64_t>(std::max<Index>(v, 0)));
  std::vector<Index> out;
  for (std::uint64_t v : get_uints(key, fb)) out.push_back(static_cast<Index>(v));
  return out;
}

void ConfigFile::check_all_used() const {
  for (const auto& [key, e] : entries_)
    if (!e.used) config_error(origin_ + ":" + std::to_string(e.line) + ": unknown key '" + key + "'");
}

std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::linear_recovery: return "linear-recovery";
    case Experiment::nonlinear_recovery: return "nonlinear-recovery";
    case Experiment::kds_generalization: return "kds-generalization";
    case Experiment::grn: return "grn";
    case Experiment::counterexamples: return "counterexamples";
    case Experiment::perturbation_check: return "perturbation-check";
  }
  return "?";
}

std::vector<std::string> experiment_names() {
  return {"linear-recovery", "nonlinear-recovery", "kds-generalization", "grn", "counterexamples",
          "perturbation-check"};
}

Experiment parse_experiment(std::string_view name) {
  for (Experiment e : {Experiment::linear_recovery, Experiment::nonlinear_recovery, Experiment::kds_generalization,
                       Experiment::grn, Experiment::counterexamples, Experiment::perturbation_check})
    if (to_string(e) == name) return e;
  config_error("unknown experiment '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  if (n <= 0 || r <= 0) config_error("n and r must be positive");
  if (k.empty()) config_error("k needs at least one value");
  for (Index v : k)
    if (v <= 0) config_error("every k must be positive");
  if (epsilon.empty()) config_error("epsilon needs at least one value");
  for (double e : epsilon)
    if (!(e >= 0.0)) config_error("epsilon must be >= 0");
  if (seeds.empty()) config_error("seeds needs at least one value");
  if (output_dir.empty()) config_error("output_dir must not be empty");
  if (!(intervention_std > 0.0)) config_error("intervention_std must be positive");
  if (hidden < 0) config_error("hidden must be >= 0");
  try {
    sampler.validate();
    fit.validate();
    grn.data.validate();
    grn.model.validate();
  } catch (const Error& e) {
    config_error(e.what());
  }
  if (kds.train_interventions <= 0 || kds.test_interventions <= 0 || grn.cells <= 0)
    config_error("intervention and cell counts must be positive");
  if (!(kds.bandwidth > 0.0) || !(kds.intervention_std > 0.0) || kds.hidden <= 0)
    config_error("kds bandwidth, intervention_std and hidden must be positive");
  if (experiment == Experiment::kds_generalization) {
    for (double e : epsilon)
      if (!(e > 0.0)) config_error("kds-generalization needs epsilon > 0");
  }
  if (experiment == Experiment::nonlinear_recovery && closed_form && hidden != 0)
    config_error("the closed form does not use a model activation; drop 'hidden'");
}

ExperimentConfig parse_experiment_config(const ConfigFile& f, const std::string& base_dir) {
  ExperimentConfig c;
  const std::string name = f.get_string("experiment", "");
  if (name.empty()) config_error(f.origin() + ": missing 'experiment'");
  c.experiment = parse_experiment(name);

  // Defaults follow the experiment so a minimal file runs at desk scale.
  switch (c.experiment) {
    case Experiment::linear_recovery: c.n = 20; c.r = 4; c.k = {2, 4}; break;
    case Experiment::nonlinear_recovery: c.n = 8; c.r = 2; c.k = {2, 3}; break;
    case Experiment::kds_generalization: c.n = 10; c.r = 3; c.epsilon = {0.05, 0.3}; break;
    case Experiment::grn: c.r = 8; c.n = 12; break;
    case Experiment::counterexamples: c.n = 8; c.r = 4; break;
    case Experiment::perturbation_check:
      c.n = 8; c.r = 2; c.epsilon = {1e-3, 1e-4}; c.activation = "leaky_logistic"; break;
  }
  if (c.experiment == Experiment::kds_generalization) {
    c.fit.lr = 0.01;
    c.fit.iters = 1500;
    c.fit.restarts = 1;
    c.sampler = {0.01, 500, 300, 100, 0};
  }

  c.n = f.get_int("n", c.n);
  c.r = f.get_int("r", c.r);
  c.k = f.get_ints("k", c.k);
  c.epsilon = f.get_doubles("epsilon", c.epsilon);
  c.seeds = f.get_uints("seeds", c.seeds);
  c.output_dir = f.get_string("output_dir", c.output_dir);
  c.plots = f.get_bool("plots", c.plots);
  const std::string moments = f.get_string("moments", "exact");
  if (moments != "exact" && moments != "sampled") config_error("moments must be exact or sampled");
  c.sampled_moments = moments == "sampled";
  const std::string method = f.get_string("method", "optimize");
  if (method != "optimize" && method != "closed-form") config_error("method must be optimize or closed-form");
  c.closed_form = method == "closed-form";
  c.activation = f.get_string("activation", c.activation);
  activation_by_name(c.activation);
  c.intervention_std = f.get_double("intervention_std", c.intervention_std);

  c.sampler.dt = f.get_double("sampler.dt", c.sampler.dt);
  c.sampler.burnin = f.get_int("sampler.burnin", c.sampler.burnin);
  c.sampler.thinning = f.get_int("sampler.thinning", c.sampler.thinning);
  c.sampler.n_samples = f.get_int("sampler.n_samples", c.sampler.n_samples);

  c.fit.lr = f.get_double("fit.lr", c.fit.lr);
  c.fit.iters = f.get_int("fit.iters", c.fit.iters);
  c.fit.restarts = f.get_int("fit.restarts", c.fit.restarts);
  c.fit.l1_weight = f.get_double("fit.l1_weight", c.fit.l1_weight);
  c.learn_decay = f.get_bool("fit.learn_decay", c.learn_decay);
  c.hidden = f.get_int("fit.hidden", c.hidden);

  c.recovery.gap_ratio = f.get_double("recovery.gap_ratio", c.sampled_moments ? 1.2 : c.recovery.gap_ratio);
  c.recovery.refine_sweeps = static_cast<int>(f.get_int("recovery.refine_sweeps", c.sampled_moments ? 100 : 0));
  c.recovery.sampling_dt = f.get_double("recovery.sampling_dt", c.sampled_moments ? c.sampler.dt : 0.0);

  c.kds.train_interventions = f.get_int("kds.train_interventions", c.kds.train_interventions);
  c.kds.test_interventions = f.get_int("kds.test_interventions", c.kds.test_interventions);
  c.kds.intervention_std = f.get_double("kds.intervention_std", c.kds.intervention_std);
  c.kds.scale = f.get_double("kds.scale", c.kds.scale);
  c.kds.bandwidth = f.get_double("kds.bandwidth", c.kds.bandwidth);
  c.kds.hidden = f.get_int("kds.hidden", c.kds.hidden);

  std::string network = f.get_string("grn.network", c.grn.network);
  const auto builtin = grn::synthetic_network_names();
  if (std::find(builtin.begin(), builtin.end(), network) == builtin.end()) {
    std::filesystem::path p(network);
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    if (!std::filesystem::exists(p)) throw Error(Errc::io_error, "network file '" + p.string() + "' not found");
    network = p.string();
  }
  c.grn.network = network;
  c.grn.cells = f.get_int("grn.cells", c.grn.cells);
  c.grn.data.dt = f.get_double("grn.dt", c.grn.data.dt);
  c.grn.data.steps = f.get_int("grn.steps", c.grn.data.steps);
  c.grn.shift = f.get_double("grn.shift", c.grn.shift);
  c.grn.model.fit.lr = f.get_double("grn.lr", c.grn.model.fit.lr);
  c.grn.model.fit.iters = f.get_int("grn.iters", c.grn.model.fit.iters);
  c.grn.model.fit.restarts = f.get_int("grn.restarts", c.grn.model.fit.restarts);
  c.grn.model.fit.l1_weight = f.get_double("grn.l1_weight", 0.1);
  c.grn.model.particles = f.get_int("grn.particles", c.grn.model.particles);
  c.grn.model.sim.dt = f.get_double("grn.model_dt", c.grn.model.sim.dt);
  c.grn.model.sim.steps = f.get_int("grn.model_steps", c.grn.model.sim.steps);
  c.grn.model.sinkhorn.reg = f.get_double("grn.sinkhorn_reg", c.grn.model.sinkhorn.reg);
  c.grn.model.hidden = f.get_int("grn.hidden", c.grn.model.hidden);

  f.check_all_used();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  const ConfigFile f = ConfigFile::read(path);
  return parse_experiment_config(f, std::filesystem::path(path).parent_path().string());
}

}  // namespace sdeid::cli
