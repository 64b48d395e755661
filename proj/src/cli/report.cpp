#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sdeid/cli.hpp"
#include "sdeid/error.hpp"

namespace sdeid::cli {

namespace {

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  for (int p = 6; p < 17; ++p) {
    char t[32];
    std::snprintf(t, sizeof t, "%.*g", p, v);
    if (std::strtod(t, nullptr) == v) return t;
  }
  return buf;
}

std::string fixed(double v, int digits = 2) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void join(std::ostream& os, const std::vector<std::string>& items) {
  for (std::size_t i = 0; i < items.size(); ++i) os << (i ? "," : "") << items[i];
}

}  // namespace

Schema schema_for(Experiment e) {
  switch (e) {
    case Experiment::linear_recovery:
      return {{"k", "epsilon"}, {"drift_err", "align_err_A", "align_err_B", "train_loss"}};
    case Experiment::nonlinear_recovery:
      return {{"k", "epsilon"}, {"align_err_A", "align_err_B", "drift_err", "train_loss", "recovered"}};
    case Experiment::kds_generalization:
      return {{"epsilon", "model"}, {"test_mse", "train_loss", "align_err_A"}};
    case Experiment::grn:
      return {{"model"}, {"auprc", "final_loss", "density"}};
    case Experiment::counterexamples:
      return {{"construction", "check"}, {"value", "tol", "passed"}};
    case Experiment::perturbation_check:
      return {{"epsilon"}, {"mean_err", "mean_bound", "cov_err_direct", "cov_err_coupled"}};
  }
  return {};
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows, std::size_t n_metrics) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<const ResultRow*>> groups;
  for (const ResultRow& row : rows) {
    if (row.metrics.size() != n_metrics) throw Error(Errc::dimension_mismatch, "summarize: metric count mismatch");
    auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) { return s.keys == row.keys; });
    if (it == out.end()) {
      out.push_back({row.keys, 0, {}, {}});
      groups.emplace_back();
      it = out.end() - 1;
    }
    groups[static_cast<std::size_t>(it - out.begin())].push_back(&row);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    const auto& members = groups[g];
    SummaryRow& s = out[g];
    s.count = static_cast<Index>(members.size());
    s.mean.assign(n_metrics, 0.0);
    s.stddev.assign(n_metrics, 0.0);
    for (std::size_t m = 0; m < n_metrics; ++m) {
      double sum = 0.0;
      for (const ResultRow* r : members) sum += r->metrics[m];
      const double mean = sum / static_cast<double>(members.size());
      double ss = 0.0;
      for (const ResultRow* r : members) ss += (r->metrics[m] - mean) * (r->metrics[m] - mean);
      s.mean[m] = mean;
      s.stddev[m] = members.size() > 1 ? std::sqrt(ss / static_cast<double>(members.size() - 1)) : 0.0;
    }
  }
  return out;
}

void write_results_csv(std::ostream& os, const Schema& schema, const std::vector<ResultRow>& rows) {
  std::vector<std::string> head{"seed"};
  head.insert(head.end(), schema.keys.begin(), schema.keys.end());
  head.insert(head.end(), schema.metrics.begin(), schema.metrics.end());
  join(os, head);
  os << '\n';
  for (const ResultRow& row : rows) {
    std::vector<std::string> cells{std::to_string(row.seed)};
    cells.insert(cells.end(), row.keys.begin(), row.keys.end());
    for (double v : row.metrics) cells.push_back(fmt(v));
    join(os, cells);
    os << '\n';
  }
}

void write_summary_csv(std::ostream& os, const Schema& schema, const std::vector<SummaryRow>& rows) {
  std::vector<std::string> head = schema.keys;
  head.push_back("count");
  for (const std::string& m : schema.metrics) {
    head.push_back(m + "_mean");
    head.push_back(m + "_std");
  }
  join(os, head);
  os << '\n';
  for (const SummaryRow& row : rows) {
    std::vector<std::string> cells = row.keys;
    cells.push_back(std::to_string(row.count));
    for (std::size_t m = 0; m < row.mean.size(); ++m) {
      cells.push_back(fmt(row.mean[m]));
      cells.push_back(fmt(row.stddev[m]));
    }
    join(os, cells);
    os << '\n';
  }
}

std::string csv_schema_help() {
  std::ostringstream os;
  os << "Output files (written to output_dir):\n"
        "  results.csv   one row per seed and cell: seed,<keys>,<metrics>\n"
        "  summary.csv   one row per cell: <keys>,count,<metric>_mean,<metric>_std,...\n"
        "                (mean and sample standard deviation over seeds)\n"
        "  certificates.txt  counterexamples only: one line per certificate check\n"
        "  plots/*.svg   error-bar plots of the summary\n\n"
        "Columns per experiment:\n";
  for (const std::string& name : experiment_names()) {
    const Schema s = schema_for(parse_experiment(name));
    os << "  " << name << "\n    keys:    ";
    join(os, s.keys);
    os << "\n    metrics: ";
    join(os, s.metrics);
    os << '\n';
  }
  os << "\nMetrics:\n"
        "  drift_err      |L-hat - L|_F / |L|_F (linear); relative Jacobian error at the observed means (nonlinear)\n"
        "  align_err_A/B  distance of the column sets of A-hat, B-hat^T and the truth up to permutation and scale\n"
        "  train_loss     final objective of the best restart\n"
        "  recovered      0 when the closed form rejected the moments as non-generic; align errors are then sqrt(2)\n"
        "  test_mse       mean squared difference of true and predicted mean on held-out interventions\n"
        "  auprc          area under the precision-recall curve of the extracted network\n"
        "  final_loss     final Sinkhorn objective; density is the random-guess baseline\n"
        "  value,tol      certificate residual and tolerance; passed is 1 or 0\n"
        "  mean_err       |sample mean - x*|; mean_bound = sqrt(eps n / (1 - gamma))\n"
        "  cov_err_*      |Sigma/eps - omega| directly and with a coupled linearized chain\n";
  return os.str();
}

std::string render_svg(const PlotSpec& plot) {
  if (plot.series.empty()) throw Error(Errc::invalid_param, "emit_plot: no series");
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const Series& s : plot.series) {
    if (s.x.empty()) throw Error(Errc::invalid_param, "emit_plot: series '" + s.label + "' is empty");
    if (s.y.size() != s.x.size() || (!s.yerr.empty() && s.yerr.size() != s.x.size()))
      throw Error(Errc::dimension_mismatch, "emit_plot: series '" + s.label + "' has unequal lengths");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double e = s.yerr.empty() ? 0.0 : std::abs(s.yerr[i]);
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || !std::isfinite(e))
        throw Error(Errc::non_finite, "emit_plot: series '" + s.label + "' has a non-finite value");
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i] - e);
      y1 = std::max(y1, s.y[i] + e);
    }
  }
  y0 = std::min(y0, 0.0);
  if (x1 - x0 < 1e-12) { x0 -= 1.0; x1 += 1.0; }
  if (y1 - y0 < 1e-12) y1 = y0 + 1.0;
  const double pad = 0.05 * (y1 - y0);
  y1 += pad;

  const double W = 640, H = 420, L = 70, R = 170, T = 40, B = 60;
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return T + (1.0 - (y - y0) / (y1 - y0)) * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fixed(L + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
     << escape_xml(plot.title) << "</text>\n";
  os << "<g class=\"axes\" stroke=\"black\">\n";
  os << "<line x1=\"" << fixed(L) << "\" y1=\"" << fixed(T + ph) << "\" x2=\"" << fixed(L + pw) << "\" y2=\""
     << fixed(T + ph) << "\"/>\n";
  os << "<line x1=\"" << fixed(L) << "\" y1=\"" << fixed(T) << "\" x2=\"" << fixed(L) << "\" y2=\"" << fixed(T + ph)
     << "\"/>\n</g>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    os << "<line x1=\"" << fixed(px(xv)) << "\" y1=\"" << fixed(T + ph) << "\" x2=\"" << fixed(px(xv)) << "\" y2=\""
       << fixed(T + ph + 5) << "\" stroke=\"black\"/>";
    os << "<text x=\"" << fixed(px(xv)) << "\" y=\"" << fixed(T + ph + 18) << "\" text-anchor=\"middle\">" << fmt(
        std::round(xv * 1e4) / 1e4) << "</text>\n";
    os << "<line x1=\"" << fixed(L - 5) << "\" y1=\"" << fixed(py(yv)) << "\" x2=\"" << fixed(L) << "\" y2=\""
       << fixed(py(yv)) << "\" stroke=\"black\"/>";
    os << "<text x=\"" << fixed(L - 8) << "\" y=\"" << fixed(py(yv) + 4) << "\" text-anchor=\"end\">"
       << fmt(std::round(yv * 1e4) / 1e4) << "</text>\n";
  }
  os << "<text x=\"" << fixed(L + pw / 2) << "\" y=\"" << fixed(H - 15) << "\" text-anchor=\"middle\">"
     << escape_xml(plot.xlabel) << "</text>\n";
  os << "<text x=\"18\" y=\"" << fixed(T + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << fixed(T + ph / 2) << ")\">" << escape_xml(plot.ylabel) << "</text>\n";

  for (std::size_t si = 0; si < plot.series.size(); ++si) {
    const Series& s = plot.series[si];
    const char* col = colors[si % 6];
    os << "<g class=\"series\" stroke=\"" << col << "\" fill=\"" << col << "\">\n<polyline fill=\"none\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << (i ? " " : "") << fixed(px(s.x[i])) << ',' << fixed(py(s.y[i]));
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!s.yerr.empty() && s.yerr[i] != 0.0) {
        const double e = std::abs(s.yerr[i]), cx = px(s.x[i]);
        os << "<path class=\"errorbar\" d=\"M" << fixed(cx) << ' ' << fixed(py(s.y[i] - e)) << "V"
           << fixed(py(s.y[i] + e)) << "M" << fixed(cx - 4) << ' ' << fixed(py(s.y[i] - e)) << "h8M" << fixed(cx - 4)
           << ' ' << fixed(py(s.y[i] + e)) << "h8\"/>\n";
      }
      os << "<circle class=\"marker\" cx=\"" << fixed(px(s.x[i])) << "\" cy=\"" << fixed(py(s.y[i]))
         << "\" r=\"3.5\"/>\n";
    }
    os << "</g>\n";
  }
  os << "<g class=\"legend\">\n";
  for (std::size_t si = 0; si < plot.series.size(); ++si) {
    const double ly = T + 10 + 20.0 * static_cast<double>(si);
    os << "<rect x=\"" << fixed(L + pw + 15) << "\" y=\"" << fixed(ly - 8) << "\" width=\"12\" height=\"12\" fill=\""
       << colors[si % 6] << "\"/><text x=\"" << fixed(L + pw + 32) << "\" y=\"" << fixed(ly + 2) << "\">"
       << escape_xml(plot.series[si].label) << "</text>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

void emit_plot(const PlotSpec& plot, const std::string& path) {
  const std::string svg = render_svg(plot);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io_error, "cannot write plot '" + path + "'");
  f << svg;
  if (!f) throw Error(Errc::io_error, "write failed for '" + path + "'");
}

}  // namespace sdeid::cli
