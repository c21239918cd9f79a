#include "drate/formula.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace drate;

namespace {

std::vector<std::string> labels(const std::vector<Term>& terms) {
  std::vector<std::string> out;
  for (const auto& t : terms) out.push_back(t.label());
  return out;
}

Dataset tiny(std::vector<std::string> names, std::vector<std::vector<double>> rows,
             std::vector<double> a) {
  Dataset d;
  d.covariate_names = std::move(names);
  d.W.resize(static_cast<Index>(rows.size()),
             static_cast<Index>(d.covariate_names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      d.W(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
  }
  d.A = Eigen::Map<Vector>(a.data(), static_cast<Index>(a.size()));
  d.Y = Vector::Zero(d.A.size());
  return d;
}

}  // namespace

TEST_CASE("group square expands to mains and unordered pairs") {
  const auto f = parse_formula("(X1 + X2 + X5)^2");
  CHECK_FALSE(f.response);
  CHECK(labels(f.main_effects()) == std::vector<std::string>{"X1", "X2", "X5"});
  CHECK(labels(f.interactions()) ==
        std::vector<std::string>{"X1:X2", "X1:X5", "X2:X5"});
}

TEST_CASE("response and plain sum") {
  const auto f = parse_formula("Y ~ A + X1");
  REQUIRE(f.response);
  CHECK(*f.response == "Y");
  CHECK(f.treatment == std::optional<std::string>("A"));
  CHECK(labels(f.terms) == std::vector<std::string>{"A", "X1"});
  CHECK(f.interactions().empty());
}

TEST_CASE("partial treatment interactions merge with group expansion") {
  const auto f =
      parse_formula("A + A:X1 + A:X217 + (X1 + X2 + X5 + X18 + X217)^2");
  CHECK(labels(f.main_effects()) ==
        std::vector<std::string>{"A", "X1", "X18", "X2", "X217", "X5"});
  const auto inter = labels(f.interactions());
  CHECK(inter.size() == 12);
  CHECK(std::count(inter.begin(), inter.end(), "A:X1") == 1);
  CHECK(std::count(inter.begin(), inter.end(), "A:X217") == 1);
}

TEST_CASE("interaction operands are ordered and duplicates merge") {
  const auto f = parse_formula("X2:X1 + X1:X2 + X1 + X1");
  CHECK(labels(f.terms) == std::vector<std::string>{"X1", "X1:X2"});
}

TEST_CASE("canonical order puts mains before interactions") {
  const auto f = parse_formula("B:C + Z + A:B + C");
  CHECK(labels(f.terms) == std::vector<std::string>{"C", "Z", "A:B", "B:C"});
}

TEST_CASE("intercept-only formula") {
  const auto f = parse_formula("Y ~ 1");
  CHECK(f.terms.empty());
  CHECK(render(f) == "Y ~ 1");
}

TEST_CASE("syntax errors report positions") {
  auto position_of = [](const char* text) -> std::size_t {
    try {
      parse_formula(text);
    } catch (const FormulaError& e) {
      return e.position();
    }
    FAIL("no error for " << text);
    return 0;
  };
  CHECK(position_of("X1 + ") == 5);
  CHECK(position_of("X1 * X2") == 3);
  CHECK(position_of("X1:X1") == 2);
  CHECK(position_of("(X1 + X2)^3") == 10);
  CHECK(position_of("(X1 + X2") == 8);
  CHECK(position_of("X1 X2") == 3);
  CHECK_THROWS_WITH_AS(parse_formula("X1 - X2"), doctest::Contains("unknown operator"),
                       FormulaError);
  CHECK_THROWS_WITH_AS(parse_formula("X3:X3"), doctest::Contains("self-interaction"),
                       FormulaError);
}

TEST_CASE("expansion count is k + k(k-1)/2") {
  for (int k = 2; k <= 10; ++k) {
    std::string text = "(";
    for (int i = 1; i <= k; ++i) {
      if (i > 1) text += " + ";
      text += "V" + std::to_string(i);
    }
    text += ")^2";
    const auto f = parse_formula(text);
    CHECK(f.terms.size() == static_cast<std::size_t>(k + k * (k - 1) / 2));
  }
}

TEST_CASE("render round trip on random formulas") {
  Rng rng(7);
  const std::vector<std::string> vars{"A", "X1", "X2", "X5", "X18", "X217", "Z"};
  std::uniform_int_distribution<std::size_t> pick(0, vars.size() - 1);
  std::uniform_int_distribution<int> shape(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    std::string text = trial % 2 ? "Y ~ " : "";
    const int atoms = 1 + trial % 5;
    for (int a = 0; a < atoms; ++a) {
      if (a > 0) text += " + ";
      const int s = shape(rng);
      const auto& v = vars[pick(rng)];
      if (s == 0) {
        text += v;
      } else if (s == 1) {
        std::string w = vars[pick(rng)];
        if (w == v) w = v == "Z" ? "A" : "Z";
        text += v + ":" + w;
      } else {
        text += "(" + v + " + " + vars[pick(rng)] + " + " + vars[pick(rng)] + ")^2";
      }
    }
    const auto f = parse_formula(text);
    CHECK_MESSAGE(parse_formula(render(f)) == f, text);
  }
}

TEST_CASE("design with override zeroes treatment columns") {
  const auto data = tiny({"X1"}, {{2.0}}, {1.0});
  const auto f = parse_formula("A + X1 + A:X1");
  const auto dm = build_design(f, data, 0);
  CHECK(dm.columns == std::vector<std::string>{kInterceptLabel, "A", "X1", "A:X1"});
  CHECK(dm.values(0, 0) == 1.0);
  CHECK(dm.values(0, 1) == 0.0);
  CHECK(dm.values(0, 2) == 2.0);
  CHECK(dm.values(0, 3) == 0.0);
}

TEST_CASE("interaction column is the product") {
  const auto data = tiny({"X1", "X2"}, {{3.0, 4.0}}, {0.0});
  const auto dm = build_design(parse_formula("(X1 + X2)^2"), data);
  CHECK(dm.values.row(0) == Eigen::RowVector4d(1, 3, 4, 12));
}

TEST_CASE("override matches a copy with constant treatment") {
  const auto data = testing::linear_dataset(30, 4, 1.0, 3);
  const auto f = parse_formula("(A + X1 + X2)^2 + X3");
  for (int a : {0, 1}) {
    Dataset copy = data;
    copy.A.setConstant(a);
    const auto expected = build_design(f, copy);
    const auto got = build_design(f, data, a);
    CHECK(got.columns == expected.columns);
    CHECK(got.values == expected.values);
  }
}

TEST_CASE("A.cor design has 53 columns") {
  std::vector<std::string> names;
  for (int j = 1; j <= 331; ++j) names.push_back("X" + std::to_string(j));
  Dataset data;
  data.covariate_names = names;
  data.W = testing::gaussian_matrix(5, 331, 1);
  data.A = Vector::Zero(5);
  data.Y = Vector::Zero(5);

  std::string text = "A + (X1 + X2 + X5 + X18 + X217)^2";
  for (int j = 1; j <= 40; ++j) text += " + X" + std::to_string(j);
  const auto dm = build_design(parse_formula(text), data);

  // Independent enumeration of the term set.
  std::set<std::string> terms{"A", "X217"};
  for (int j = 1; j <= 40; ++j) terms.insert("X" + std::to_string(j));
  const std::vector<std::string> group{"X1", "X2", "X5", "X18", "X217"};
  for (std::size_t i = 0; i < group.size(); ++i) {
    for (std::size_t k = i + 1; k < group.size(); ++k) {
      terms.insert(group[i] + ":" + group[k]);
    }
  }
  CHECK(terms.size() == 52);
  CHECK(dm.cols() == static_cast<Index>(terms.size()) + 1);
}

TEST_CASE("design errors") {
  const auto data = tiny({"X1"}, {{1.0}}, {1.0});
  CHECK_THROWS_AS(build_design(parse_formula("X9"), data), DataError);
  CHECK_THROWS_AS(build_design(parse_formula("X1"), data, 1), DataError);
  auto bad = data;
  bad.W(0, 0) = std::nan("");
  CHECK_THROWS_AS(build_design(parse_formula("X1"), bad), DataError);
}
