#include "sdeid/grn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

namespace sdeid::grn {
namespace {

void require(bool ok, Errc code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

double hill(double p, double theta, double h) {
  const double q = std::pow(std::max(p, 0.0) / theta, h);
  return q / (1.0 + q);
}

double logistic(double y) { return models::logistic(y); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Transcription with intervened genes switched off.
Vec regime_transcription(const GRNSpec& spec, const Vec& p, const Vec& mask) {
  return spec.transcription(p).cwiseProduct(mask);
}

// Integrates the full (x, p) state of every particle; rows of `state` are
// [x | p] and are overwritten with the terminal states.
void integrate_full(const GRNSpec& spec, const InterventionRegime& regime, const EnsembleConfig& cfg, Mat& state) {
  const Index n = spec.n();
  const GRNRates& k = spec.rates;
  const Vec mask = regime.mask(n), shift = regime.shift_vector(n);
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sq = std::sqrt(cfg.dt);
  for (Index row = 0; row < state.rows(); ++row) {
    Vec x = state.row(row).head(n).transpose(), p = state.row(row).tail(n).transpose();
    for (Index step = 0; step < cfg.steps; ++step) {
      const Vec f = regime_transcription(spec, p, mask);
      const Vec dx = f - k.l_x * x + shift;
      const Vec dp = k.rho_translate * x - k.l_p * p;
      for (Index i = 0; i < n; ++i) {
        const double zx = normal(rng), zp = normal(rng);
        const double xi = x(i) + cfg.dt * dx(i) + k.noise * std::sqrt(x(i)) * sq * zx;
        const double pi = p(i) + cfg.dt * dp(i) + k.noise * std::sqrt(p(i)) * sq * zp;
        x(i) = std::max(xi, 0.0);
        p(i) = std::max(pi, 0.0);
      }
      if (!(x.norm() + p.norm() <= sim::kDivergenceNorm)) {
        std::ostringstream os;
        os << "GRN state of particle " << row << " exceeded " << sim::kDivergenceNorm << " at step " << step;
        throw Error(Errc::diverged, os.str());
      }
    }
    state.row(row).head(n) = x.transpose();
    state.row(row).tail(n) = p.transpose();
  }
}

Mat full_state(const GRNSpec& spec, const Mat& init) {
  const Index n = spec.n();
  require(init.cols() == n || init.cols() == 2 * n, Errc::dimension_mismatch,
          "GRN init must have n or 2n columns");
  require((init.array() >= 0.0).all(), Errc::invalid_param, "GRN init must be nonnegative");
  if (init.cols() == 2 * n) return init;
  Mat s(init.rows(), 2 * n);
  s.leftCols(n) = init;
  s.rightCols(n) = init * (spec.rates.rho_translate / spec.rates.l_p);
  return s;
}

Mat observational_full(const GRNSpec& spec, Index particles, const EnsembleConfig& cfg) {
  require(particles >= 1, Errc::invalid_param, "need at least one particle");
  const Index n = spec.n();
  const double x0 = spec.rates.basal / spec.rates.l_x;
  Mat state(particles, 2 * n);
  state.leftCols(n).setConstant(x0);
  state.rightCols(n).setConstant(x0 * spec.rates.rho_translate / spec.rates.l_p);
  integrate_full(spec, {}, cfg, state);
  return state;
}

}  // namespace

void GRNSpec::validate() const {
  require(n() >= 1, Errc::invalid_param, "GRN needs at least one gene");
  const GRNRates& k = rates;
  require(k.rho_translate > 0 && k.l_x > 0 && k.l_p > 0 && k.noise >= 0 && k.basal > 0 && k.threshold > 0 &&
              k.unregulated >= 0,
          Errc::invalid_param, "GRN rates must be positive");
  for (const Edge& e : edges) {
    require(e.src >= 0 && e.src < n() && e.dst >= 0 && e.dst < n(), Errc::invalid_param, "edge gene out of range");
    require(e.coefficient > 0 && e.exponent > 0, Errc::invalid_param, "Hill parameters must be positive");
  }
}

std::vector<std::vector<Index>> GRNSpec::regulators() const {
  std::vector<std::vector<Index>> R(static_cast<std::size_t>(n()));
  for (const Edge& e : edges) R[static_cast<std::size_t>(e.dst)].push_back(e.src);
  return R;
}

BoolMat GRNSpec::adjacency() const {
  BoolMat t = BoolMat::Constant(n(), n(), false);
  for (const Edge& e : edges) t(e.dst, e.src) = true;
  return t;
}

double GRNSpec::edge_density() const {
  const BoolMat t = adjacency();
  Index on = 0;
  for (Index i = 0; i < n(); ++i)
    for (Index j = 0; j < n(); ++j) on += (i != j && t(i, j)) ? 1 : 0;
  return n() > 1 ? static_cast<double>(on) / static_cast<double>(n() * (n() - 1)) : 0.0;
}

Vec GRNSpec::transcription(const Vec& p) const {
  require(p.size() == n(), Errc::dimension_mismatch, "protein vector has wrong length");
  Vec act = Vec::Zero(n()), rep = Vec::Ones(n());
  std::vector<bool> has_act(static_cast<std::size_t>(n()), false);
  for (const Edge& e : edges) {
    const double h = hill(p(e.src), rates.threshold, e.exponent);
    if (e.activating) {
      act(e.dst) += e.coefficient * h;
      has_act[static_cast<std::size_t>(e.dst)] = true;
    } else {
      rep(e.dst) *= 1.0 - h;  // 1 / (1 + q)
    }
  }
  Vec f(n());
  for (Index i = 0; i < n(); ++i)
    f(i) = (rates.basal + (has_act[static_cast<std::size_t>(i)] ? act(i) : rates.unregulated)) * rep(i);
  return f;
}

GRNSpec parse_grn(std::istream& is) {
  GRNSpec spec;
  std::map<std::string, Index> index;
  bool declared = false, seen_edge = false;
  auto gene = [&](const std::string& name, int line) {
    auto it = index.find(name);
    if (it != index.end()) return it->second;
    if (declared) throw Error(Errc::parse_error, "line " + std::to_string(line) + ": unknown gene " + name);
    const Index id = spec.n();
    spec.names.push_back(name);
    index[name] = id;
    return id;
  };
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    const std::string text = trim(raw.substr(0, raw.find('#')));
    if (text.empty()) continue;
    const std::string where = "line " + std::to_string(line) + ": ";
    if (const auto eq = text.find('='); eq != std::string::npos) {
      if (seen_edge) throw Error(Errc::parse_error, where + "rate after the first edge");
      const std::string key = trim(text.substr(0, eq)), val = trim(text.substr(eq + 1));
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(val, &used);
        if (used != val.size()) throw std::invalid_argument(val);
      } catch (const std::exception&) {
        throw Error(Errc::parse_error, where + "bad value '" + val + "'");
      }
      GRNRates& k = spec.rates;
      if (key == "rho") k.rho_translate = v;
      else if (key == "l_x") k.l_x = v;
      else if (key == "l_p") k.l_p = v;
      else if (key == "s") k.noise = v;
      else if (key == "basal") k.basal = v;
      else if (key == "theta") k.threshold = v;
      else if (key == "unregulated") k.unregulated = v;
      else throw Error(Errc::parse_error, where + "unknown rate '" + key + "'");
      continue;
    }
    std::istringstream ls(text);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.front() == "genes") {
      if (declared || !spec.names.empty()) throw Error(Errc::parse_error, where + "genes must be declared once, first");
      for (std::size_t i = 1; i < tok.size(); ++i) {
        if (index.count(tok[i])) throw Error(Errc::parse_error, where + "duplicate gene " + tok[i]);
        gene(tok[i], line);
      }
      declared = true;
      continue;
    }
    if (tok.size() < 3 || tok.size() > 5) throw Error(Errc::parse_error, where + "expected 'src dst sign [kappa [h]]'");
    Edge e;
    e.src = gene(tok[0], line);
    e.dst = gene(tok[1], line);
    if (tok[2] == "+") e.activating = true;
    else if (tok[2] == "-") e.activating = false;
    else throw Error(Errc::parse_error, where + "sign must be + or -");
    try {
      if (tok.size() >= 4) e.coefficient = std::stod(tok[3]);
      if (tok.size() == 5) e.exponent = std::stod(tok[4]);
    } catch (const std::exception&) {
      throw Error(Errc::parse_error, where + "bad Hill parameter");
    }
    for (const Edge& o : spec.edges)
      if (o.src == e.src && o.dst == e.dst) throw Error(Errc::parse_error, where + "duplicate edge");
    spec.edges.push_back(e);
    seen_edge = true;
  }
  try {
    spec.validate();
  } catch (const Error& err) {
    throw Error(Errc::parse_error, err.what());
  }
  return spec;
}

GRNSpec read_grn_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open network file " + path);
  return parse_grn(in);
}

void write_grn(std::ostream& os, const GRNSpec& spec) {
  os << std::setprecision(17) << "genes";
  for (const auto& g : spec.names) os << ' ' << g;
  os << '\n';
  const GRNRates& k = spec.rates;
  os << "rho = " << k.rho_translate << "\nl_x = " << k.l_x << "\nl_p = " << k.l_p << "\ns = " << k.noise
     << "\nbasal = " << k.basal << "\ntheta = " << k.threshold << "\nunregulated = " << k.unregulated << '\n';
  for (const Edge& e : spec.edges)
    os << spec.names[static_cast<std::size_t>(e.src)] << ' ' << spec.names[static_cast<std::size_t>(e.dst)] << ' '
       << (e.activating ? '+' : '-') << ' ' << e.coefficient << ' ' << e.exponent << '\n';
}

GRNSpec synthetic_network(std::string_view kind) {
  struct E {
    int s, d;
    bool act;
  };
  std::vector<E> edges;
  int n = 0;
  if (kind == "cycle") {
    n = 5;
    edges = {{0, 1, true}, {1, 2, true}, {2, 3, true}, {3, 4, true}, {4, 0, false}};
  } else if (kind == "fanout") {
    n = 6;
    edges = {{0, 1, true}, {0, 2, true}, {0, 3, false}, {0, 4, true}, {0, 5, false}};
  } else if (kind == "feedforward") {
    n = 6;
    edges = {{0, 1, true}, {0, 2, true}, {1, 2, true}, {2, 3, true}, {3, 4, false}, {1, 5, true}, {4, 5, true}};
  } else if (kind == "mixed12") {
    n = 12;
    edges = {{0, 1, true},  {1, 2, true},  {2, 3, true},   {3, 0, false},  {2, 4, true},
             {4, 5, true},  {4, 6, true},  {4, 7, false},  {4, 8, true},   {8, 9, true},
             {8, 10, true}, {9, 10, true}, {10, 11, false}};
  } else {
    throw Error(Errc::invalid_param, "unknown synthetic network '" + std::string(kind) + "'");
  }
  GRNSpec spec;
  for (int i = 0; i < n; ++i) spec.names.push_back("g" + std::to_string(i));
  for (const E& e : edges) spec.edges.push_back({e.s, e.d, e.act});
  spec.validate();
  return spec;
}

std::vector<std::string> synthetic_network_names() { return {"cycle", "fanout", "feedforward", "mixed12"}; }

void InterventionRegime::validate(Index n) const {
  std::vector<Index> t = targets;
  std::sort(t.begin(), t.end());
  require(std::adjacent_find(t.begin(), t.end()) == t.end(), Errc::invalid_param, "duplicate intervened gene");
  for (Index j : t) require(j >= 0 && j < n, Errc::invalid_param, "intervened gene out of range");
  require(targets.empty() || shift > 0.0, Errc::invalid_param, "overexpression shift must be positive");
}

Vec InterventionRegime::mask(Index n) const {
  Vec m = Vec::Ones(n);
  for (Index j : targets) m(j) = 0.0;
  return m;
}

Vec InterventionRegime::shift_vector(Index n) const {
  Vec c = Vec::Zero(n);
  for (Index j : targets) c(j) = shift;
  return c;
}

std::vector<InterventionRegime> single_gene_regimes(const std::vector<Index>& genes, double shift) {
  std::vector<InterventionRegime> out{{0, {}, shift}};
  for (Index j : genes) out.push_back({static_cast<Index>(out.size()), {j}, shift});
  return out;
}

void EnsembleConfig::validate() const {
  require(dt > 0.0 && std::isfinite(dt), Errc::invalid_param, "dt must be positive");
  require(steps >= 0, Errc::invalid_param, "steps must be >= 0");
}

Mat simulate_grn(const GRNSpec& spec, const InterventionRegime& regime, const EnsembleConfig& cfg, const Mat& init,
                 Mat* protein) {
  spec.validate();
  regime.validate(spec.n());
  cfg.validate();
  Mat state = full_state(spec, init);
  integrate_full(spec, regime, cfg, state);
  if (protein) *protein = state.rightCols(spec.n());
  return state.leftCols(spec.n());
}

Mat observational_batch(const GRNSpec& spec, Index particles, const EnsembleConfig& cfg) {
  spec.validate();
  cfg.validate();
  return observational_full(spec, particles, cfg).leftCols(spec.n());
}

std::vector<Mat> regime_batches(const GRNSpec& spec, const std::vector<InterventionRegime>& regimes, Index particles,
                                const EnsembleConfig& cfg) {
  spec.validate();
  cfg.validate();
  const Mat rho0 = observational_full(spec, particles, cfg);
  std::vector<Mat> out;
  for (const auto& reg : regimes) {
    reg.validate(spec.n());
    EnsembleConfig c = cfg;
    c.seed = linalg::derive_seed(cfg.seed, static_cast<std::uint64_t>(reg.k) + 1);
    Mat state = rho0;
    integrate_full(spec, reg, c, state);
    out.push_back(state.leftCols(spec.n()));
  }
  return out;
}

std::string_view to_string(GrnActivation a) { return a == GrnActivation::logistic ? "logistic" : "learnable"; }

void ModularDriftModel::check_shapes() const {
  const Index n_ = n(), r_ = r();
  require(B.rows() == r_ && B.cols() == n_ && beta.size() == r_ && decay.size() == n_ &&
              (learnable() || alpha.size() == r_),
          Errc::dimension_mismatch, "modular model shapes disagree");
  require(!learnable() || act.dim() == r_, Errc::dimension_mismatch, "learnable activation width must equal r");
}

Vec ModularDriftModel::preactivation(const Vec& x) const {
  const Vec y = B * x - beta;
  return learnable() ? y : Vec(alpha.cwiseProduct(y));
}

Vec ModularDriftModel::drift(const Vec& x, const InterventionRegime& regime, bool use_mask) const {
  const Vec u = preactivation(x);
  Vec s = learnable() ? act.apply(u) : Vec(u.unaryExpr(&logistic));
  Vec reg = A * s;
  if (use_mask) reg = reg.cwiseProduct(regime.mask(n()));
  return reg + regime.shift_vector(n()) - decay.cwiseProduct(x);
}

Mat simulate_model(const ModularDriftModel& model, const InterventionRegime& regime, const EnsembleConfig& cfg,
                   const Mat& init, bool use_mask) {
  model.check_shapes();
  regime.validate(model.n());
  cfg.validate();
  require(init.cols() == model.n(), Errc::dimension_mismatch, "init must have n columns");
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise = model.diffusion * std::sqrt(cfg.dt);
  Mat out = init;
  for (Index row = 0; row < out.rows(); ++row) {
    Vec x = out.row(row).transpose();
    for (Index step = 0; step < cfg.steps; ++step) {
      x += cfg.dt * model.drift(x, regime, use_mask);
      for (Index i = 0; i < x.size(); ++i) x(i) += noise * normal(rng);
    }
    if (!(x.norm() <= sim::kDivergenceNorm)) throw Error(Errc::diverged, "model pushforward diverged");
    out.row(row) = x.transpose();
  }
  return out;
}

Mat extract_grn(const ModularDriftModel& model, const Mat* batch) {
  model.check_shapes();
  if (!model.learnable()) return model.A * model.alpha.asDiagonal() * model.B;
  require(batch != nullptr && batch->rows() >= 1 && batch->cols() == model.n(), Errc::invalid_param,
          "learnable GRN extraction needs the training batch");
  Vec slope = Vec::Zero(model.r());
  for (Index i = 0; i < batch->rows(); ++i) slope += model.act.deriv(model.preactivation(batch->row(i).transpose()));
  slope /= static_cast<double>(batch->rows());
  return model.A * slope.asDiagonal() * model.B;
}

double auprc(const Mat& scores, const BoolMat& truth) {
  require(scores.rows() == scores.cols() && truth.rows() == scores.rows() && truth.cols() == scores.cols(),
          Errc::dimension_mismatch, "auprc: scores and truth must be square and equal-sized");
  std::vector<double> s;
  std::vector<bool> t;
  for (Index i = 0; i < scores.rows(); ++i)
    for (Index j = 0; j < scores.cols(); ++j)
      if (i != j) {
        s.push_back(std::abs(scores(i, j)));
        t.push_back(truth(i, j));
      }
  const auto positives = std::count(t.begin(), t.end(), true);
  require(positives > 0, Errc::invalid_param, "auprc: truth has no off-diagonal edge");
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  double area = 0.0, prev_recall = 0.0, prev_precision = -1.0;
  long tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (t[order[rank]]) ++tp;
    const double precision = static_cast<double>(tp) / static_cast<double>(rank + 1);
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    if (prev_precision < 0.0) prev_precision = precision;
    area += 0.5 * (recall - prev_recall) * (precision + prev_precision);
    prev_recall = recall;
    prev_precision = precision;
  }
  return area;
}

void GrnFitConfig::validate() const {
  fit.validate();
  sim.validate();
  require(particles >= 2, Errc::invalid_param, "need at least two simulated cells per regime");
  require(hidden >= 1, Errc::invalid_param, "hidden width must be positive");
}

GrnProblem::GrnProblem(std::vector<Mat> data, std::vector<InterventionRegime> regimes, Index r, GrnActivation act,
                       const GrnFitConfig& cfg, std::uint64_t seed)
    : data_(std::move(data)),
      regimes_(std::move(regimes)),
      n_(0),
      r_(r),
      act_(act),
      cfg_(cfg),
      act_template_(models::Activation::logistic()) {
  cfg_.validate();
  require(!data_.empty() && data_.size() == regimes_.size(), Errc::dimension_mismatch,
          "one batch per regime required");
  require(regimes_.front().targets.empty(), Errc::invalid_param, "regime 0 must be observational");
  require(r_ >= 1, Errc::invalid_param, "r must be positive");
  n_ = data_.front().cols();
  for (std::size_t k = 0; k < data_.size(); ++k) {
    require(data_[k].cols() == n_ && data_[k].rows() >= 1, Errc::dimension_mismatch, "batch dimension mismatch");
    regimes_[k].validate(n_);
  }
  if (act_ == GrnActivation::learnable) act_template_ = models::Activation::learnable(r_, cfg_.hidden, seed);

  Rng rng(seed);
  const Mat& rho0 = data_.front();
  std::vector<Index> idx(static_cast<std::size_t>(rho0.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  start_.resize(cfg_.particles, n_);
  for (Index i = 0; i < cfg_.particles; ++i) start_.row(i) = rho0.row(idx[static_cast<std::size_t>(i) % idx.size()]);
  std::normal_distribution<double> normal(0.0, 1.0);
  noise_.resize(regimes_.size());
  for (auto& per_regime : noise_)
    for (Index t = 0; t < cfg_.sim.steps; ++t)
      per_regime.push_back(Mat::NullaryExpr(cfg_.particles, n_, [&] { return normal(rng); }));
}

Index GrnProblem::size() const {
  return 2 * n_ * r_ + (act_ == GrnActivation::logistic ? r_ : 0) + r_ + n_ + 1 + act_template_.num_params();
}

Vec GrnProblem::pack(const ModularDriftModel& m) const {
  Vec x(size());
  Index o = 0;
  auto put = [&](const auto& block) {
    x.segment(o, block.size()) = Eigen::Map<const Vec>(block.data(), block.size());
    o += block.size();
  };
  put(m.A);
  put(m.B);
  if (act_ == GrnActivation::logistic) put(m.alpha);
  put(m.beta);
  for (Index i = 0; i < n_; ++i) x(o++) = fit::softplus_inverse(m.decay(i));
  x(o++) = fit::softplus_inverse(m.diffusion);
  if (act_ == GrnActivation::learnable) x.tail(act_template_.num_params()) = m.act.params();
  return x;
}

ModularDriftModel GrnProblem::unpack(const Vec& x) const {
  require(x.size() == size(), Errc::dimension_mismatch, "GRN parameter vector has wrong length");
  ModularDriftModel m;
  Index o = 0;
  m.A = Eigen::Map<const Mat>(x.data() + o, n_, r_);
  o += n_ * r_;
  m.B = Eigen::Map<const Mat>(x.data() + o, r_, n_);
  o += n_ * r_;
  if (act_ == GrnActivation::logistic) {
    m.alpha = x.segment(o, r_);
    o += r_;
  } else {
    m.alpha = Vec::Ones(r_);
  }
  m.beta = x.segment(o, r_);
  o += r_;
  m.decay = x.segment(o, n_).unaryExpr(&fit::softplus);
  o += n_;
  m.diffusion = fit::softplus(x(o++));
  m.act = act_template_;
  if (act_ == GrnActivation::learnable) m.act.set_params(x.tail(act_template_.num_params()));
  return m;
}

ModularDriftModel GrnProblem::random_start(Rng& rng) const {
  ModularDriftModel m;
  m.A = fit::random_init(n_, r_, n_, r_, rng);
  m.B = fit::random_init(r_, n_, n_, r_, rng);
  m.alpha = Vec::Ones(r_);
  m.beta = m.B * data_.front().colwise().mean().transpose();
  m.decay = Vec::Ones(n_);
  m.diffusion = 0.1;
  m.act = act_ == GrnActivation::learnable ? models::Activation::learnable(r_, cfg_.hidden, rng()) : act_template_;
  return m;
}

Mat GrnProblem::pooled_data() const {
  Index rows = 0;
  for (const auto& d : data_) rows += d.rows();
  Mat out(rows, n_);
  Index o = 0;
  for (const auto& d : data_) {
    out.middleRows(o, d.rows()) = d;
    o += d.rows();
  }
  return out;
}

double GrnProblem::value(const Vec& x, Vec* grad) const {
  const ModularDriftModel m = unpack(x);
  const bool learn = act_ == GrnActivation::learnable;
  const Index P = cfg_.particles, T = cfg_.sim.steps;
  const double dt = cfg_.sim.dt, sq = std::sqrt(dt);

  Mat gA = Mat::Zero(n_, r_), gB = Mat::Zero(r_, n_);
  Vec galpha = Vec::Zero(r_), gbeta = Vec::Zero(r_), gdecay = Vec::Zero(n_), gact = Vec::Zero(act_template_.num_params());
  double gdiff = 0.0, total = 0.0;

  std::vector<Mat> X(static_cast<std::size_t>(T + 1)), Y(static_cast<std::size_t>(T)), S(static_cast<std::size_t>(T)),
      Sp(static_cast<std::size_t>(T));
  for (std::size_t k = 0; k < regimes_.size(); ++k) {
    const Vec mask = regimes_[k].mask(n_), shift = regimes_[k].shift_vector(n_);
    X[0] = start_;
    for (Index t = 0; t < T; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      const Mat& Xt = X[ts];
      Y[ts] = (Xt * m.B.transpose()).rowwise() - m.beta.transpose();
      S[ts].resize(P, r_);
      Sp[ts].resize(P, r_);
      for (Index p = 0; p < P; ++p) {
        if (learn) {
          const Vec y = Y[ts].row(p).transpose();
          S[ts].row(p) = m.act.apply(y).transpose();
          Sp[ts].row(p) = m.act.deriv(y).transpose();
        } else {
          for (Index j = 0; j < r_; ++j) {
            const double s = logistic(m.alpha(j) * Y[ts](p, j));
            S[ts](p, j) = s;
            Sp[ts](p, j) = s * (1.0 - s);
          }
        }
      }
      Mat F = (S[ts] * m.A.transpose()) * mask.asDiagonal();
      F.rowwise() += shift.transpose();
      F -= Xt * m.decay.asDiagonal();
      X[ts + 1] = Xt + dt * F + (m.diffusion * sq) * noise_[k][ts];
    }
    if (!X[static_cast<std::size_t>(T)].allFinite()) throw Error(Errc::non_finite, "GRN pushforward is not finite");
    Mat G;
    total += loss::sinkhorn_divergence(X[static_cast<std::size_t>(T)], data_[k], cfg_.sinkhorn, grad ? &G : nullptr);
    if (!grad) continue;
    for (Index t = T - 1; t >= 0; --t) {
      const auto ts = static_cast<std::size_t>(t);
      const Mat& Xt = X[ts];
      const Mat GM = G * mask.asDiagonal();
      const Mat H = GM * m.A;  // d loss / d S, per unit dt
      gA += dt * GM.transpose() * S[ts];
      Mat Q = H.cwiseProduct(Sp[ts]);
      Mat dY;
      if (learn) {
        dY = Q;
        for (Index p = 0; p < P; ++p)
          m.act.accumulate_param_grad(Y[ts].row(p).transpose(), dt * H.row(p).transpose(), Vec::Zero(r_), gact);
      } else {
        galpha += dt * Q.cwiseProduct(Y[ts]).colwise().sum().transpose();
        dY = Q * m.alpha.asDiagonal();
      }
      gB += dt * dY.transpose() * Xt;
      gbeta -= dt * dY.colwise().sum().transpose();
      gdecay -= dt * G.cwiseProduct(Xt).colwise().sum().transpose();
      gdiff += sq * G.cwiseProduct(noise_[k][ts]).sum();
      G = G + dt * (dY * m.B - G * m.decay.asDiagonal());
    }
  }
  const double l1 = cfg_.fit.l1_weight;
  if (l1 > 0.0) {
    total += l1 * (m.A.lpNorm<1>() + m.B.lpNorm<1>());
    gA += l1 * m.A.unaryExpr([](double v) { return static_cast<double>((v > 0) - (v < 0)); });
    gB += l1 * m.B.unaryExpr([](double v) { return static_cast<double>((v > 0) - (v < 0)); });
  }
  if (grad) {
    grad->resize(size());
    Index o = 0;
    auto put = [&](const auto& block) {
      grad->segment(o, block.size()) = Eigen::Map<const Vec>(block.data(), block.size());
      o += block.size();
    };
    put(gA);
    put(gB);
    if (!learn) put(galpha);
    put(gbeta);
    for (Index i = 0; i < n_; ++i, ++o) (*grad)(o) = gdecay(i) * logistic(x(o));
    (*grad)(o) = gdiff * logistic(x(o));
    ++o;
    if (learn) grad->tail(gact.size()) = gact;
  }
  return total;
}

GrnFitResult fit_grn_model(const std::vector<Mat>& data, const std::vector<InterventionRegime>& regimes, Index r,
                           GrnActivation act, const GrnFitConfig& cfg) {
  cfg.validate();
  std::optional<GrnFitResult> best;
  std::optional<Error> last;
  for (Index restart = 0; restart < cfg.fit.restarts; ++restart) {
    const std::uint64_t seed = linalg::derive_seed(cfg.fit.seed, static_cast<std::uint64_t>(restart));
    const GrnProblem problem(data, regimes, r, act, cfg, seed);
    Rng rng(seed);
    const Vec init = problem.pack(problem.random_start(rng));
    try {
      const fit::AdamResult res = fit::adam_minimize(
          [&](const Vec& x, Vec& g) { return problem.value(x, &g); }, init, cfg.fit);
      if (!best || res.loss_trace.back() < best->loss_trace.back()) {
        GrnFitResult out;
        out.model = problem.unpack(res.params);
        out.loss_trace = res.loss_trace;
        const Mat pooled = problem.pooled_data();
        out.grn = extract_grn(out.model, &pooled);
        best = std::move(out);
      }
    } catch (const Error& e) {
      if (e.code() != Errc::non_finite && e.code() != Errc::no_convergence && e.code() != Errc::diverged) throw;
      last = e;
    }
  }
  if (!best) throw *last;
  return *best;
}

void write_auprc_row(std::ostream& os, std::string_view model, std::uint64_t seed, double value) {
  os << model << ',' << seed << ',' << std::setprecision(10) << value << '\n';
}

}  // namespace sdeid::grn
