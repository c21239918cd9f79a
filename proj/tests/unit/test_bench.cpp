#include "drate/bench.hpp"
#include "drate/rng.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

using namespace drate;

namespace {

Simulation small_simulation() {
  Simulation sim = kang_schafer_simulation(50);
  sim.name = "small";
  return sim;
}

EstimatorConfig fake(const std::string& name,
                     std::function<AteEstimate(const Dataset&, std::uint64_t)> fn) {
  EstimatorConfig c;
  c.learner = name;
  c.custom = std::move(fn);
  return c;
}

EstimatorConfig exact_fake(double truth) {
  return fake("exact", [truth](const Dataset& d, std::uint64_t) {
    return wald_estimate(truth, 1.0, EstimatorKind::Aipw, d.rows());
  });
}

EstimatorConfig noisy_fake(double truth, double sd) {
  return fake("noisy", [truth, sd](const Dataset& d, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> z(0.0, sd);
    return wald_estimate(truth + z(rng), sd, EstimatorKind::Aipw, d.rows());
  });
}

ReplicateRecord record(const std::string& est, double psi, double se, bool failed = false) {
  ReplicateRecord r;
  r.estimator = est;
  r.psi = psi;
  r.se = se;
  r.ci_lo = psi - 1.96 * se;
  r.ci_hi = psi + 1.96 * se;
  r.covered = r.ci_lo <= 0.0 && 0.0 <= r.ci_hi;
  r.failed = failed;
  return r;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("an exact estimator has zero bias and full coverage") {
    const Simulation sim = small_simulation();
    BenchOptions opt;
    opt.replicates = 20;
    opt.seed = 3;
    const auto res = run_benchmark(sim, {exact_fake(sim.true_ate)}, opt);
    REQUIRE(res.summaries.size() == 1);
    const auto& s = res.summaries[0];
    CHECK(s.bias_median == 0.0);
    CHECK(s.coverage == 1.0);
    CHECK(s.mse == 0.0);
    CHECK(s.bvar == 0.0);
    CHECK(s.failures == 0);
    CHECK(s.n_replicates == 20);
    CHECK(s.se_median == 1.0);
  }

  TEST_CASE("normal noise gives nominal coverage") {
    const Simulation sim = small_simulation();
    BenchOptions opt;
    opt.replicates = 1000;
    opt.seed = 11;
    const auto res = run_benchmark(sim, {noisy_fake(sim.true_ate, 0.1)}, opt);
    const auto& s = res.summaries[0];
    const double nominal = std::erf(1.96 / std::sqrt(2.0));
    CHECK(nominal == doctest::Approx(0.95).epsilon(1e-3));
    CHECK(std::abs(s.coverage - nominal) <= 0.05);

    int covered = 0;
    for (const auto& r : res.records) {
      if (r.ci_lo <= sim.true_ate && sim.true_ate <= r.ci_hi) ++covered;
    }
    CHECK(s.coverage == doctest::Approx(covered / 1000.0).epsilon(1e-15));
  }

  TEST_CASE("mse decomposes into between-replicate variance and squared mean bias") {
    const Simulation sim = small_simulation();
    BenchOptions opt;
    opt.replicates = 300;
    opt.seed = 5;
    const auto res = run_benchmark(sim, {noisy_fake(sim.true_ate + 0.3, 0.2)}, opt);
    const auto& s = res.summaries[0];
    CHECK(std::abs(s.mse - (s.bvar + s.bias_mean * s.bias_mean)) < 1e-9);

    std::vector<double> b;
    for (const auto& r : res.records) b.push_back(r.psi - sim.true_ate);
    double mean = 0.0;
    for (const double v : b) mean += v;
    mean /= static_cast<double>(b.size());
    double var = 0.0;
    double mse = 0.0;
    for (const double v : b) {
      var += (v - mean) * (v - mean);
      mse += v * v;
    }
    CHECK(s.bvar == doctest::Approx(var / b.size()).epsilon(1e-12));
    CHECK(s.mse == doctest::Approx(mse / b.size()).epsilon(1e-12));
    CHECK(s.bias_mean == doctest::Approx(mean).epsilon(1e-12));
  }

  TEST_CASE("hand-computed summary with a failed replicate") {
    const std::vector<ReplicateRecord> recs = {
        record("e", 1.0, 1.0), record("e", 2.0, 0.5), record("e", 4.0, 1.0),
        record("e", 0.0, 0.0, true), record("other", 100.0, 1.0)};
    const auto s = summarize("e", recs, 0.0);
    CHECK(s.n_replicates == 3);
    CHECK(s.failures == 1);
    CHECK(s.bias_median == 2.0);
    CHECK(s.se_median == 1.0);
    CHECK(s.bias_mean == doctest::Approx(7.0 / 3.0));
    CHECK(s.mse == doctest::Approx(7.0));
    CHECK(s.bvar == doctest::Approx(14.0 / 9.0));
    CHECK(s.coverage == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("estimator failures are recorded without aborting the run") {
    const Simulation sim = small_simulation();
    BenchOptions opt;
    opt.replicates = 4;
    auto failing = fake("failing", [](const Dataset&, std::uint64_t) -> AteEstimate {
      throw FitError("no fit");
    });
    const auto res = run_benchmark(sim, {failing, exact_fake(sim.true_ate)}, opt);
    CHECK(res.summaries[0].failures == 4);
    CHECK(res.summaries[0].n_replicates == 0);
    CHECK(std::isnan(res.summaries[0].coverage));
    CHECK(res.summaries[1].failures == 0);
    CHECK(res.records[0].error == "no fit");
    const auto csv = format_report(res.summaries, ReportFormat::Csv);
    CHECK(csv.find("aipw:failing,NA,NA,NA") != std::string::npos);
  }
}

TEST_SUITE("runner") {
  TEST_CASE("reports do not depend on the worker count") {
    const Simulation sim = kang_schafer_simulation(200);
    const auto ests = parse_estimator_list("ipw,gcomp,aipw,tmle");
    BenchOptions opt;
    opt.replicates = 6;
    opt.seed = 21;
    opt.timing = false;
    const auto one = run_benchmark(sim, ests, opt);
    opt.workers = 3;
    const auto three = run_benchmark(sim, ests, opt);
    CHECK(format_report(one.summaries, ReportFormat::Csv) ==
          format_report(three.summaries, ReportFormat::Csv));
    CHECK(format_report(one.summaries, ReportFormat::Json) ==
          format_report(three.summaries, ReportFormat::Json));
    CHECK(format_replicates(one.records) == format_replicates(three.records));
    for (const auto& s : one.summaries) CHECK(s.time_median == 0.0);
  }

  TEST_CASE("timing is recorded when enabled") {
    const Simulation sim = kang_schafer_simulation(200);
    BenchOptions opt;
    opt.replicates = 2;
    const auto res = run_benchmark(sim, parse_estimator_list("aipw"), opt);
    CHECK(res.summaries[0].time_median > 0.0);
  }

  TEST_CASE("g-computation bootstrap refits the outcome model") {
    const auto d = drate::testing::linear_dataset(200, 3, 1.5, 9);
    auto cfg = parse_estimator("gcomp");
    cfg.bootstrap_reps = 50;
    const auto est = run_estimator(d, cfg, parse_formula("X1 + X2 + X3"),
                                   parse_formula("A + X1 + X2 + X3"), 4);
    CHECK(est.se > 0.01);
    CHECK(est.ci_lo < est.psi);
    CHECK(est.psi < est.ci_hi);
  }

  TEST_CASE("configuration errors") {
    const Simulation sim = small_simulation();
    BenchOptions opt;
    opt.replicates = 1;
    CHECK_THROWS_AS(run_benchmark(sim, parse_estimator_list("aipw"), opt), ConfigError);
    opt.replicates = 3;
    CHECK_THROWS_AS(run_benchmark(sim, parse_estimator_list("aipw,tmle,aipw:glm"), opt),
                    ConfigError);
    CHECK_THROWS_AS(run_benchmark(sim, {}, opt), ConfigError);
    opt.workers = 0;
    CHECK_THROWS_AS(run_benchmark(sim, parse_estimator_list("aipw"), opt), ConfigError);
  }
}

TEST_SUITE("estimator parsing") {
  TEST_CASE("kinds and learners") {
    const auto c = parse_estimator("dc-tmle:smooth");
    CHECK(c.kind == EstimatorKind::DcTmle);
    CHECK(c.learner == "smooth");
    CHECK(c.label() == "dc-tmle:smooth");
    CHECK(parse_estimator("aipw").label() == "aipw:glm");
    CHECK(parse_estimator(" ipw ").kind == EstimatorKind::Ipw);
    const auto list = parse_estimator_list("ipw, gcomp ,dc-aipw:nonsmooth");
    REQUIRE(list.size() == 3);
    CHECK(list[2].kind == EstimatorKind::DcAipw);
    CHECK(list[2].learner == "nonsmooth");
  }

  TEST_CASE("malformed entries are rejected") {
    CHECK_THROWS_AS(parse_estimator("bogus"), ConfigError);
    CHECK_THROWS_AS(parse_estimator("aipw:"), ConfigError);
    CHECK_THROWS_AS(parse_estimator("aipw:nosuchlearner"), Error);
    CHECK_THROWS_AS(parse_estimator_list(" , "), ConfigError);
    CHECK_THROWS_AS(parse_report_format("xml"), ConfigError);
  }
}

TEST_SUITE("reports") {
  std::vector<MetricsSummary> sample() {
    MetricsSummary a;
    a.estimator = "aipw:glm";
    a.bias_median = -0.0123456789012345;
    a.se_median = 0.987654321;
    a.coverage = 0.93;
    a.mse = 1.0 / 3.0;
    a.bvar = 0.3;
    a.bias_mean = std::sqrt(1.0 / 30.0);
    a.n_replicates = 100;
    a.failures = 0;
    a.time_median = 0.00123;
    MetricsSummary b = a;
    b.estimator = "dc-tmle:smooth";
    b.bias_median = 1e-17;
    b.failures = 2;
    b.n_replicates = 98;
    return {a, b};
  }

  void check_same(const MetricsSummary& x, const MetricsSummary& y) {
    CHECK(x.estimator == y.estimator);
    CHECK(std::abs(x.bias_median - y.bias_median) <= 1e-12);
    CHECK(std::abs(x.se_median - y.se_median) <= 1e-12);
    CHECK(std::abs(x.coverage - y.coverage) <= 1e-12);
    CHECK(std::abs(x.mse - y.mse) <= 1e-12);
    CHECK(std::abs(x.bvar - y.bvar) <= 1e-12);
    CHECK(std::abs(x.bias_mean - y.bias_mean) <= 1e-12);
    CHECK(std::abs(x.time_median - y.time_median) <= 1e-12);
    CHECK(x.failures == y.failures);
    CHECK(x.n_replicates == y.n_replicates);
  }

  TEST_CASE("csv and json round trips") {
    const auto in = sample();
    for (const auto fmt : {ReportFormat::Csv, ReportFormat::Json}) {
      const auto out = parse_report(format_report(in, fmt), fmt);
      REQUIRE(out.size() == in.size());
      for (std::size_t i = 0; i < in.size(); ++i) check_same(in[i], out[i]);
    }
  }

  TEST_CASE("scaled columns and column order") {
    const auto csv = format_report(sample(), ReportFormat::Csv);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("# ", 0) == 0);
    std::getline(in, line);
    CHECK(line.rfind("estimator,bias_x100,se_x100,coverage,mse,bvar,time_s,failures", 0) == 0);
    while (std::getline(in, line)) {
      const auto f = split(line);
      REQUIRE(f.size() == 12);
      CHECK(std::stod(f[1]) == doctest::Approx(100.0 * std::stod(f[8])).epsilon(1e-14));
      CHECK(std::stod(f[2]) == doctest::Approx(100.0 * std::stod(f[9])).epsilon(1e-14));
    }
    CHECK(csv.find("aipw:glm,") != std::string::npos);
    const auto first = split(csv.substr(csv.find("aipw:glm,")));
    CHECK(first[7] == "0");
  }

  TEST_CASE("emit writes the formatted report") {
    const auto path = drate::testing::temp_path("report.json");
    emit_report(sample(), ReportFormat::Json, path);
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    CHECK(buf.str() == format_report(sample(), ReportFormat::Json));
    CHECK_THROWS_AS(emit_report(sample(), ReportFormat::Csv, "/nonexistent/dir/r.csv"), Error);
    CHECK_THROWS_AS(format_report({}, ReportFormat::Csv), ConfigError);
  }
}
