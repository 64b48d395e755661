#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdeid/cli.hpp"
#include "sdeid/error.hpp"

using namespace sdeid;
using namespace sdeid::cli;

namespace {

ConfigFile parse_text(const std::string& text) {
  std::istringstream is(text);
  return ConfigFile::parse(is, "test.cfg");
}

ExperimentConfig config_from(const std::string& text) { return parse_experiment_config(parse_text(text)); }

std::string results_text(const ExperimentOutput& out) {
  std::ostringstream os;
  write_results_csv(os, out.schema, out.rows);
  return os.str();
}

const SummaryRow& row_for(const std::vector<SummaryRow>& rows, const std::string& k) {
  for (const SummaryRow& r : rows)
    if (r.keys.front() == k) return r;
  throw std::runtime_error("no row for k = " + k);
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::invalid_param;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("config grammar") {
  const ConfigFile f = parse_text(
      "# header comment\n"
      "experiment = linear-recovery   # trailing comment\n"
      "k = 2, 4 ,12\n"
      "seeds = 3..6\n"
      "\n"
      "[fit]\n"
      "iters = 1e3\n"
      "lr=0.5\n");
  CHECK(f.get_string("experiment", "") == "linear-recovery");
  CHECK(f.get_ints("k", {}) == std::vector<Index>{2, 4, 12});
  CHECK(f.get_uints("seeds", {}) == std::vector<std::uint64_t>{3, 4, 5, 6});
  CHECK(f.get_int("fit.iters", 0) == 1000);
  CHECK(f.get_double("fit.lr", 0.0) == 0.5);
  CHECK(f.get_double("fit.missing", 7.0) == 7.0);
  CHECK_FALSE(f.has("iters"));
  f.check_all_used();
}

TEST_CASE("config errors are typed and located") {
  CHECK(code_of([] { parse_text("a = 1\na = 2\n"); }) == Errc::config_error);
  CHECK(code_of([] { parse_text("just words\n"); }) == Errc::config_error);
  CHECK(code_of([] { parse_text("[open\n"); }) == Errc::config_error);
  CHECK(code_of([] { parse_text("x = abc\n").get_double("x", 0); }) == Errc::config_error);
  CHECK(code_of([] { parse_text("x = 1.5\n").get_int("x", 0); }) == Errc::config_error);
  CHECK(code_of([] { parse_text("x = 5..2\n").get_uints("x", {}); }) == Errc::config_error);
  try {
    const ConfigFile f = parse_text("experiment = grn\n\n[fit]\nitres = 10\n");
    f.get_string("experiment", "");
    f.check_all_used();
    FAIL("expected an unknown-key error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("test.cfg:4") != std::string::npos);
    CHECK(std::string(e.what()).find("fit.itres") != std::string::npos);
  }
  CHECK(code_of([] { ConfigFile::read("/nonexistent/x.cfg"); }) == Errc::io_error);
}

TEST_CASE("experiment config validation") {
  const ExperimentConfig lin = config_from("experiment = linear-recovery\n");
  CHECK(lin.n == 20);
  CHECK(lin.r == 4);
  CHECK(config_from("experiment = kds-generalization\n").epsilon == std::vector<double>{0.05, 0.3});
  CHECK(code_of([] { config_from("experiment = nope\n"); }) == Errc::config_error);
  CHECK(code_of([] { config_from("n = 5\n"); }) == Errc::config_error);
  CHECK(code_of([] { config_from("experiment = grn\nunknown = 1\n"); }) == Errc::config_error);
  CHECK(code_of([] { config_from("experiment = linear-recovery\nepsilon = -1\n"); }) == Errc::config_error);
  CHECK(code_of([] { config_from("experiment = linear-recovery\nn = 0\n"); }) == Errc::config_error);
  CHECK(code_of([] { config_from("experiment = linear-recovery\nk = 0\n"); }) == Errc::config_error);
  CHECK(code_of([] { config_from("experiment = linear-recovery\n[fit]\nrestarts = 0\n"); }) == Errc::config_error);
  CHECK(code_of([] { config_from("experiment = nonlinear-recovery\nactivation = relu\n"); }) == Errc::config_error);
  CHECK(code_of([] { config_from("experiment = grn\n[grn]\nnetwork = missing.txt\n"); }) == Errc::io_error);
}

TEST_CASE("summary uses the sample standard deviation") {
  std::vector<ResultRow> rows{{0, {"a"}, {1.0}}, {1, {"b"}, {5.0}}, {1, {"a"}, {2.0}}, {2, {"a"}, {6.0}}};
  const auto s = summarize(rows, 1);
  REQUIRE(s.size() == 2);
  CHECK(s[0].keys == std::vector<std::string>{"a"});
  CHECK(s[0].count == 3);
  CHECK(s[0].mean[0] == doctest::Approx(3.0));
  // deviations -2, -1, 3: sum of squares 14 over 2
  CHECK(s[0].stddev[0] == doctest::Approx(std::sqrt(7.0)));
  CHECK(s[1].stddev[0] == 0.0);
  CHECK_THROWS_AS(summarize(rows, 2), Error);
}

TEST_CASE("every schema is documented in the help text") {
  const std::string help = csv_schema_help();
  for (const std::string& name : experiment_names()) {
    CHECK(help.find(name) != std::string::npos);
    const Schema s = schema_for(parse_experiment(name));
    for (const std::string& m : s.metrics) CHECK(help.find(m) != std::string::npos);
  }
}

TEST_CASE("plot: single point, empty input, legend") {
  const std::string one = render_svg({"t", "x", "y", {{"only", {1.0}, {2.0}, {}}}});
  CHECK(count(one, "<circle class=\"marker\"") == 1);
  CHECK(one.rfind("<svg", 0) == 0);
  CHECK(one.find("</svg>") != std::string::npos);

  CHECK_THROWS_AS(render_svg({"t", "x", "y", {}}), Error);
  CHECK_THROWS_AS(render_svg({"t", "x", "y", {{"empty", {}, {}, {}}}}), Error);
  CHECK_THROWS_AS(render_svg({"t", "x", "y", {{"bad", {1, 2}, {1}, {}}}}), Error);

  PlotSpec three{"errors", "k", "err", {}};
  for (const char* label : {"alpha", "beta", "gamma<1>"})
    three.series.push_back({label, {2, 4, 12}, {0.3, 0.01, 0.02}, {0.1, 0.001, 0.002}});
  const std::string svg = render_svg(three);
  CHECK(svg.find(">alpha</text>") != std::string::npos);
  CHECK(svg.find(">beta</text>") != std::string::npos);
  CHECK(svg.find(">gamma&lt;1&gt;</text>") != std::string::npos);
  CHECK(count(svg, "class=\"errorbar\"") == 9);
  CHECK(svg == render_svg(three));

  const std::string path = (std::filesystem::temp_directory_path() / "sdeid_plot_test.svg").string();
  emit_plot(three, path);
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  CHECK(ss.str() == svg);
  CHECK(code_of([&] { emit_plot(three, "/nonexistent/dir/p.svg"); }) == Errc::io_error);
}

TEST_CASE("certify cases") {
  for (const std::string& kind : certificate_cases()) CHECK(certify_case(kind, 8, 4, 1).passed());
  CHECK(code_of([] { certify_case("other", 8, 4, 0); }) == Errc::config_error);
  CHECK_THROWS_AS(certify_case("ode", 4, 3, 0), Error);
}

TEST_CASE("counterexamples config passes every check") {
  ExperimentConfig cfg = config_from("experiment = counterexamples\nseeds = 0..4\n");
  const ExperimentOutput out = run_experiment(cfg);
  CHECK(count(out.certificates, "certificate ") == 15);
  CHECK(count(out.certificates, ": PASS") == 15);
  CHECK(out.certificates.find("FAIL") == std::string::npos);
  for (const ResultRow& row : out.rows) CHECK(row.metrics.back() == 1.0);
}

TEST_CASE("results are identical across runs and thread counts") {
  ExperimentConfig cfg = config_from(
      "experiment = linear-recovery\nn = 6\nr = 2\nk = 1, 2\nseeds = 0..3\n[fit]\niters = 200\nrestarts = 2\n");
  const std::string serial = results_text(run_experiment(cfg, 1));
  CHECK(serial == results_text(run_experiment(cfg, 1)));
  CHECK(serial == results_text(run_experiment(cfg, 3)));
  CHECK(serial.rfind("seed,k,epsilon,drift_err", 0) == 0);

  // Seeds come out sorted whatever the config order.
  cfg.seeds = {3, 1, 2, 0};
  CHECK(serial == results_text(run_experiment(cfg, 2)));
}

TEST_CASE("outputs land on disk") {
  const auto dir = std::filesystem::temp_directory_path() / "sdeid_cli_outputs";
  std::filesystem::remove_all(dir);
  ExperimentConfig cfg = config_from(
      "experiment = linear-recovery\nn = 6\nr = 2\nk = 1, 2\nseeds = 0, 1\n[fit]\niters = 100\nrestarts = 1\n");
  write_outputs(run_experiment(cfg), dir.string());
  CHECK(std::filesystem::exists(dir / "results.csv"));
  CHECK(std::filesystem::exists(dir / "summary.csv"));
  CHECK(std::filesystem::exists(dir / "plots" / "error_vs_k_eps1.svg"));
  CHECK_FALSE(std::filesystem::exists(dir / "certificates.txt"));
  CHECK(code_of([&] { write_outputs(run_experiment(cfg), "/proc/no_such_dir"); }) == Errc::io_error);
}

TEST_CASE("seed failures carry experiment and seed context") {
  // The closed form needs k >= r + 1.
  ExperimentConfig cfg = config_from("experiment = nonlinear-recovery\nmethod = closed-form\nk = 2\nseeds = 4\n");
  try {
    run_experiment(cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("nonlinear-recovery seed 4") != std::string::npos);
  }
}

TEST_CASE("linear-recovery example: the threshold at k = r") {
  ExperimentConfig cfg = config_from(
      "experiment = linear-recovery\nn = 20\nr = 4\nk = 2, 4, 12\nseeds = 0..4\n[fit]\nrestarts = 5\n");
  const ExperimentOutput out = run_experiment(cfg);
  REQUIRE(out.summary.size() == 3);
  const SummaryRow& k2 = row_for(out.summary, "2");
  const SummaryRow& k4 = row_for(out.summary, "4");
  CHECK(k4.mean[0] < 0.05);
  CHECK(k2.mean[0] > k4.mean[0]);
  CHECK(k2.stddev[0] > k4.stddev[0]);
}

TEST_CASE("nonlinear-recovery example: k = r + 1 beats k = r") {
  ExperimentConfig cfg = config_from(
      "experiment = nonlinear-recovery\nn = 8\nr = 2\nk = 2, 3\nintervention_std = 0.5\nseeds = 0..9\n"
      "[fit]\niters = 5000\nrestarts = 5\nhidden = 20\n");
  const ExperimentOutput out = run_experiment(cfg);
  REQUIRE(out.summary.size() == 2);
  CHECK(row_for(out.summary, "3").mean[0] < row_for(out.summary, "2").mean[0]);
  CHECK(row_for(out.summary, "3").mean[1] < row_for(out.summary, "2").mean[1]);
}

TEST_CASE("rejected closed-form instances stay in the results") {
  // A few hundred samples cannot meet a 1e3 singular-value gap.
  ExperimentConfig cfg = config_from(
      "experiment = nonlinear-recovery\nmethod = closed-form\nmoments = sampled\nk = 3\nseeds = 0, 1\n"
      "[sampler]\nn_samples = 300\n[recovery]\ngap_ratio = 1e3\n");
  const ExperimentOutput out = run_experiment(cfg);
  REQUIRE(out.rows.size() == 2);
  for (const ResultRow& row : out.rows) {
    CHECK(row.metrics[4] == 0.0);
    CHECK(row.metrics[0] == doctest::Approx(std::sqrt(2.0)));
    CHECK(row.metrics[1] == doctest::Approx(std::sqrt(2.0)));
  }
  CHECK(out.summary.front().count == 2);
}
