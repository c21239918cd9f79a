#include "drate/learners.hpp"
#include "drate/plasmode.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

using namespace drate;

namespace {

// Small standardized source with a known treatment model.
Dataset toy_source(Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset d;
  d.W.resize(n, 3);
  d.A.resize(n);
  d.Y.resize(n);
  d.covariate_names = {"X1", "X2", "X3"};
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < 3; ++j) d.W(i, j) = z(rng);
    d.A[i] = u(rng) < expit(-0.5 + 0.8 * d.W(i, 0)) ? 1.0 : 0.0;
    d.Y[i] = 2.0 + d.W(i, 0) - 0.5 * d.W(i, 1) + 1.5 * d.A[i] + z(rng);
  }
  return d;
}

ScenarioSpec toy_scenario(const std::string& om, const std::string& ps) {
  ScenarioSpec s;
  s.name = "toy";
  s.om_formula = parse_formula(om);
  s.ps_formula = parse_formula(ps);
  s.estimation_om_formula = s.om_formula;
  s.estimation_ps_formula = s.ps_formula;
  s.true_ate = 6.6;
  return s;
}

std::set<std::string> labels(const FormulaSpec& f) {
  std::set<std::string> out;
  for (const auto& t : f.terms) out.insert(t.label());
  return out;
}

std::set<std::string> core_terms() {
  const std::vector<std::string> core = {"X1", "X2", "X5", "X18", "X217"};
  std::set<std::string> out(core.begin(), core.end());
  for (std::size_t a = 0; a < core.size(); ++a) {
    for (std::size_t b = a + 1; b < core.size(); ++b) {
      out.insert(std::min(core[a], core[b]) + ":" + std::max(core[a], core[b]));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("Kang-Schafer effect is constant and outcomes are consistent") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto draw = generate_kang_schafer(600, seed);
    REQUIRE(draw.dataset.rows() == 600);
    for (Index i = 0; i < 600; ++i) {
      CHECK(draw.y1[i] - draw.y0[i] == doctest::Approx(6.6).epsilon(1e-12));
      const double expected = draw.dataset.A[i] == 1.0 ? draw.y1[i] : draw.y0[i];
      CHECK(draw.dataset.Y[i] == expected);
      CHECK(draw.dataset.W(i, 4) > 0.0);
    }
    CHECK(draw.true_ate_marginal == 6.6);
    const double f = draw.diagnostics.at("redrawn_fraction");
    CHECK(f > 0.0);
    CHECK(f < 0.5);
  }
}

TEST_CASE("Kang-Schafer draws are reproducible") {
  const auto a = generate_kang_schafer(100, 9);
  const auto b = generate_kang_schafer(100, 9);
  CHECK(a.dataset.W == b.dataset.W);
  CHECK(a.dataset.A == b.dataset.A);
  CHECK(a.dataset.Y == b.dataset.Y);
  CHECK(generate_kang_schafer(100, 10).dataset.Y != a.dataset.Y);
  CHECK_THROWS_AS(generate_kang_schafer(49, 1), ConfigError);
}

TEST_CASE("Kang-Schafer covariate law matches its moments") {
  // E[W1] = 0, E[W2] = 2, E[W3] = 2 analytically.
  Rng rng(2024);
  const int n = 100000;
  double s1 = 0, s2 = 0, s3 = 0;
  for (int i = 0; i < n; ++i) {
    const auto w = kang_schafer_covariates(rng);
    s1 += w[0];
    s2 += w[1];
    s3 += w[2];
  }
  CHECK(std::abs(s1 / n) < 0.02);
  CHECK(std::abs(s2 / n - 2.0) < 0.05);
  CHECK(std::abs(s3 / n - 2.0) < 0.1);
}

TEST_CASE("Kang-Schafer rows follow the law conditioned on W5 > 0") {
  // Independent rejection sampler of the stated distribution.
  std::mt19937_64 rng(77);
  std::normal_distribution<double> z;
  double oracle = 0.0;
  int kept = 0;
  while (kept < 100000) {
    const double w1 = z(rng);
    const double w2 = w1 + 2 + 2 * z(rng);
    const double w3 = 2 + std::abs(2 * w2) * z(rng);
    const double w4 = w2 * w2 + 2 * w3 + std::abs(w1) * z(rng);
    const double w5 = w3 * w4 + std::abs(w2 - w1) * z(rng);
    if (w5 <= 0) continue;
    oracle += w2;
    ++kept;
  }
  oracle /= kept;
  const auto draw = generate_kang_schafer(100000, 5);
  CHECK(std::abs(draw.dataset.W.col(1).mean() - oracle) < 0.05);
}

TEST_CASE("intercept calibration hits the prevalence") {
  SUBCASE("intercept-only model has the closed form") {
    const auto src = toy_source(300, 1);
    const auto gen = make_plasmode_generator(src, toy_scenario("A + X1", "1"));
    const double prev = src.A.mean();
    const double beta0 = gen.ps_coefficients()[0];
    CHECK(gen.ps_offset() + beta0 == doctest::Approx(logit(prev)).epsilon(1e-10));
    const Vector p = gen.propensity();
    CHECK(p.maxCoeff() - p.minCoeff() < 1e-15);
    CHECK(p[0] == doctest::Approx(prev).epsilon(1e-10));
  }
  SUBCASE("every preset matches prevalence to 1e-8") {
    const auto src = generate_surrogate_source(1178, 331, 3);
    for (const auto& name : scenario_preset_names()) {
      const auto gen = make_plasmode_generator(src, scenario_preset(name));
      const Vector p = gen.propensity();
      double mean = 0.0;
      for (Index i = 0; i < p.size(); ++i) mean += p[i];
      mean /= static_cast<double>(p.size());
      CHECK(std::abs(mean - src.treated_fraction()) < 1e-8);
    }
  }
  SUBCASE("independent Newton root agrees") {
    Rng rng(4);
    std::normal_distribution<double> z;
    Vector eta(200);
    for (Index i = 0; i < eta.size(); ++i) eta[i] = 2.0 * z(rng);
    for (double target : {0.05, 0.3, 0.5, 0.9}) {
      double d = 0.0;
      for (int it = 0; it < 100; ++it) {
        double f = 0, fp = 0;
        for (Index i = 0; i < eta.size(); ++i) {
          const double p = 1.0 / (1.0 + std::exp(-(eta[i] + d)));
          f += p;
          fp += p * (1 - p);
        }
        d -= (f / eta.size() - target) / (fp / eta.size());
      }
      CHECK(calibrate_intercept(eta, target) == doctest::Approx(d).epsilon(1e-9));
    }
  }
  SUBCASE("unreachable prevalence is an error") {
    const Vector eta = Vector::Constant(10, 40.0);
    CHECK_THROWS_AS(calibrate_intercept(eta, 0.5), FitError);
    CHECK_THROWS_AS(calibrate_intercept(Vector::Zero(10), 1.0), FitError);
  }
}

TEST_CASE("generator sets the treatment coefficient and inflates interactions") {
  const auto src = generate_surrogate_source(1178, 331, 1);
  for (const auto& name : scenario_preset_names()) {
    const auto spec = scenario_preset(name);
    const auto gen = make_plasmode_generator(src, spec);
    for (std::size_t j = 0; j < gen.om_columns().size(); ++j) {
      const auto& label = gen.om_columns()[j];
      const double beta = gen.om_coefficients()[static_cast<Index>(j)];
      if (label == "A") {
        CHECK(beta == 6.6);
      } else if (label.rfind("A:", 0) == 0) {
        CHECK(beta == doctest::Approx(5.0 * spec.om_coefficients->at(label)));
      } else {
        CHECK(beta == spec.om_coefficients->at(label));
      }
    }
  }
  CHECK(scenario_preset("C.cor").interaction_inflation == 5.0);
  CHECK(scenario_preset("A.cor").interaction_inflation == 1.0);
}

TEST_CASE("without a table the generator uses fitted coefficients") {
  const auto src = toy_source(400, 2);
  const auto spec = toy_scenario("A + X1 + X2", "X1");
  const auto gen = make_plasmode_generator(src, spec);
  const auto fit = fit_ols(build_design(spec.om_formula, src), src.Y);
  const Vector beta = *fit.coefficients();
  REQUIRE(gen.om_columns() == std::vector<std::string>{"(Intercept)", "A", "X1", "X2"});
  CHECK(gen.om_coefficients()[1] == 6.6);
  CHECK(gen.om_coefficients()[0] == beta[0]);
  CHECK(gen.om_coefficients()[2] == beta[2]);
  CHECK(gen.om_coefficients()[3] == beta[3]);
  const Vector resid = src.Y - fit.predict(build_design(spec.om_formula, src).values);
  CHECK((gen.residuals() - resid).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero residuals without interactions give the exact effect") {
  const auto src = toy_source(200, 3);
  const auto gen = make_plasmode_generator(src, toy_scenario("A + X1", "X1"),
                                           Vector::Zero(5));
  for (Index i = 0; i < gen.effect().size(); ++i) REQUIRE(gen.effect()[i] == 6.6);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto draw = draw_plasmode(gen, seed);
    for (Index i = 0; i < draw.dataset.rows(); ++i) {
      REQUIRE(draw.y1[i] - draw.y0[i] == doctest::Approx(6.6).epsilon(1e-12));
    }
    CHECK(draw.true_ate_marginal == 6.6);
  }
}

TEST_CASE("draws satisfy the consistency identity bit for bit") {
  const auto src = generate_surrogate_source(1178, 331, 2);
  for (const auto& name : {"A.cor", "B", "C.cor"}) {
    const auto gen = make_plasmode_generator(src, scenario_preset(name));
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto draw = draw_plasmode(gen, seed);
      REQUIRE(draw.dataset.rows() == 1178);
      for (Index i = 0; i < draw.dataset.rows(); ++i) {
        REQUIRE(draw.dataset.Y[i] ==
                (draw.dataset.A[i] == 1.0 ? draw.y1[i] : draw.y0[i]));
      }
    }
  }
}

TEST_CASE("draws are reproducible and honour the size override") {
  const auto src = toy_source(150, 4);
  const auto gen = make_plasmode_generator(src, toy_scenario("A + X1", "X1"));
  const auto a = draw_plasmode(gen, 8);
  const auto b = draw_plasmode(gen, 8);
  CHECK(a.dataset.Y == b.dataset.Y);
  CHECK(a.dataset.W == b.dataset.W);
  CHECK(draw_plasmode(gen, 9).dataset.Y != a.dataset.Y);
  CHECK(draw_plasmode(gen, 8, 60).dataset.rows() == 60);
}

TEST_CASE("treatment prevalence is preserved across draws") {
  const auto src = toy_source(500, 5);
  const auto gen = make_plasmode_generator(src, toy_scenario("A + X1", "X1 + X2"));
  const double target = src.treated_fraction();
  double treated = 0.0;
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto draw = draw_plasmode(gen, seed);
    treated += draw.dataset.A.sum();
    total += static_cast<double>(draw.dataset.rows());
  }
  const double se = std::sqrt(target * (1.0 - target) / total);
  CHECK(std::abs(treated / total - target) < 3.0 * se);
  CHECK(std::abs(treated / total - target) < 0.01);
}

TEST_CASE("resampled residuals keep their mean") {
  const auto src = toy_source(400, 6);
  // Intercept plus treatment: y0 minus the intercept is the residual draw.
  const auto gen = make_plasmode_generator(src, toy_scenario("A", "X1"));
  const Vector& r = gen.residuals();
  const double mean = r.mean();
  const double sd = std::sqrt((r.array() - mean).square().mean());
  const double beta0 = gen.om_coefficients()[0];
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const auto draw = draw_plasmode(gen, seed);
    const double drawn = (draw.y0.array() - beta0).mean();
    CHECK(std::abs(drawn - mean) < 3.0 * sd / std::sqrt(static_cast<double>(r.size())));
  }
}

TEST_CASE("true ATE") {
  const auto src = generate_surrogate_source(1178, 331, 7);
  SUBCASE("no interactions returns the coefficient exactly") {
    for (const auto& name : {"A.cor", "B"}) {
      const auto gen = make_plasmode_generator(src, scenario_preset(name));
      CHECK(compute_true_ate(gen, 500, 1).value == 6.6);
    }
  }
  SUBCASE("treatment interactions give a stable, different truth") {
    const auto gen = make_plasmode_generator(src, scenario_preset("C.cor"));
    const Vector& tau = gen.effect();
    CHECK(tau.maxCoeff() - tau.minCoeff() > 1.0);
    const auto t1 = compute_true_ate(gen, 10000, 3);
    CHECK(t1.mc_se < 0.005);
    const auto t2 = compute_true_ate(gen, 20000, 4);
    CHECK(std::abs(t1.value - t2.value) <
          2.0 * std::sqrt(t1.mc_se * t1.mc_se + t2.mc_se * t2.mc_se));
    // The bootstrap mean estimates the source mean of the effect.
    CHECK(std::abs(t1.value - tau.mean()) < 4.0 * t1.mc_se);
    CHECK(std::abs(t1.value - 6.6) > 0.1);
  }
}

TEST_CASE("surrogate source") {
  const auto src = generate_surrogate_source();
  CHECK(src.rows() == 1178);
  CHECK(src.covariates() == 331);
  CHECK(src.covariate_names[216] == "X217");
  const auto again = generate_surrogate_source();
  CHECK(src.W == again.W);
  CHECK(src.A == again.A);
  for (const Index j : {1, 4, 17}) {
    for (Index i = 0; i < src.rows(); ++i) {
      REQUIRE((src.W(i, j) == 0.0 || src.W(i, j) == 1.0));
    }
  }
  CHECK(std::abs(src.W.col(0).mean()) < 1e-12);
  const double prev = src.treated_fraction();
  CHECK(prev > 0.1);
  CHECK(prev < 0.9);

  const double targets[] = {30, 13, 4};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = generate_surrogate_source(1178, 331, seed);
    const auto counts = correlation_tail_counts(s.W, {0.7, 0.8, 0.9});
    for (std::size_t t = 0; t < 3; ++t) {
      CHECK(counts[t] >= 0.5 * targets[t]);
      CHECK(counts[t] <= 1.5 * targets[t]);
    }
  }
  CHECK_THROWS_AS(generate_surrogate_source(1178, 40, 0), ConfigError);
}

TEST_CASE("correlation tail counting") {
  Matrix X(4, 3);
  X << 1, 2, 1, 2, 4, -1, 3, 6, 1, 4, 8, -1;
  const auto c = correlation_tail_counts(X, {0.5, 0.99});
  // Columns 0 and 1 are perfectly correlated; column 2 is uncorrelated with
  // either (r = -0.447).
  CHECK(c[0] == 1);
  CHECK(c[1] == 1);
}

TEST_CASE("preset formulas have the enumerated term sets") {
  std::set<std::string> first40;
  for (int i = 1; i <= 40; ++i) first40.insert("X" + std::to_string(i));
  std::set<std::string> reduced;
  for (int i : {4, 7, 9, 16, 17, 27, 28, 31, 34, 39}) reduced.insert("X" + std::to_string(i));

  auto unite = [](std::set<std::string> a, const std::set<std::string>& b) {
    a.insert(b.begin(), b.end());
    return a;
  };
  const auto core = core_terms();
  const auto full_ps = unite(core, first40);
  const auto full_om = unite(full_ps, {"A"});
  const auto red_ps = unite(core, reduced);
  const auto red_om = unite(red_ps, {"A"});
  std::set<std::string> no_int_ps = unite(first40, {"X217"});
  const auto no_int_om = unite(no_int_ps, {"A"});
  const auto c_ps = core;
  const auto c_om = unite(core, {"A", "A:X1", "A:X2", "A:X5", "A:X18", "A:X217"});

  CHECK(full_om.size() == 52);
  CHECK(labels(scenario_preset("A.cor").estimation_om_formula) == full_om);
  CHECK(labels(scenario_preset("A.cor").estimation_ps_formula) == full_ps);
  CHECK(labels(scenario_preset("A.no.int").estimation_om_formula) == no_int_om);
  CHECK(labels(scenario_preset("A.no.int").estimation_ps_formula) == no_int_ps);
  CHECK(labels(scenario_preset("A.less.1st").estimation_om_formula) == red_om);
  CHECK(labels(scenario_preset("A.less.1st").estimation_ps_formula) == red_ps);
  CHECK(labels(scenario_preset("A.less.1st").om_formula) == full_om);
  CHECK(labels(scenario_preset("B").om_formula) == red_om);
  CHECK(labels(scenario_preset("B").estimation_om_formula) == full_om);
  CHECK(labels(scenario_preset("B.cor").estimation_om_formula) == red_om);
  CHECK(labels(scenario_preset("C.cor").om_formula) == c_om);
  CHECK(labels(scenario_preset("C.cor").estimation_ps_formula) == c_ps);
  CHECK(labels(scenario_preset("C.part").estimation_om_formula) ==
        unite(core, {"A", "A:X1", "A:X217"}));
  CHECK(labels(scenario_preset("C.bad").estimation_om_formula) == unite(core, {"A"}));
  CHECK(scenario_preset("A.less.1st").covariate_subset == reduced_covariate_set());
}

TEST_CASE("scenario validation") {
  CHECK_THROWS_AS(scenario_preset("D"), ConfigError);
  auto s = toy_scenario("A + X1", "X1");
  s.ps_formula = parse_formula("A + X1");
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = toy_scenario("X1", "X1");
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = toy_scenario("A + X1", "X1");
  s.om_coefficients = CoefficientTable{{"(Intercept)", 1.0}};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.om_coefficients = CoefficientTable{{"(Intercept)", 1.0}, {"X1", 2.0}, {"X9", 1.0}};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.om_coefficients = CoefficientTable{{"(Intercept)", 1.0}, {"X1", 2.0}};
  CHECK_NOTHROW(s.validate());
  s.interaction_inflation = 0.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  const auto src = toy_source(100, 1);
  CHECK_THROWS_AS(make_plasmode_generator(src, scenario_preset("A.cor")), DataError);
}
