// Model formulas in the small R-like dialect used by the scenario
// definitions:
//
//   formula := [VAR "~"] expr
//   expr    := atom { "+" atom }
//   atom    := "1" | VAR | VAR ":" VAR | "(" VAR { "+" VAR } ")" "^2"
//
// "(a + b + c)^2" expands to every main effect plus every unordered pair.
// Terms have set semantics; the intercept is always present. There is no
// "*", nesting, transformation or factor expansion.
#pragma once

#include "drate/types.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace drate {

class FormulaError : public Error {
 public:
  FormulaError(const std::string& message, std::size_t position);
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// A main effect (second empty) or a two-way interaction with
/// first < second lexicographically.
struct Term {
  std::string first;
  std::string second;

  bool is_interaction() const { return !second.empty(); }
  bool involves(const std::string& var) const {
    return first == var || second == var;
  }
  /// "X1" or "X1:X2".
  std::string label() const;

  friend bool operator==(const Term&, const Term&) = default;
};

/// Main effects first, then interactions; each group ordered by name.
bool canonical_less(const Term& a, const Term& b);

struct FormulaSpec {
  std::optional<std::string> response;
  std::optional<std::string> treatment;
  std::vector<Term> terms;  // canonical order, no duplicates

  std::vector<Term> main_effects() const;
  std::vector<Term> interactions() const;
  /// All variable names referenced by terms, sorted, unique.
  std::vector<std::string> variables() const;
  bool has_term(const std::string& label) const;

  friend bool operator==(const FormulaSpec&, const FormulaSpec&) = default;
};

/// Parses a formula. A term that references `exposure` marks the formula's
/// treatment.
FormulaSpec parse_formula(std::string_view text,
                          std::string_view exposure = "A");

/// Builds a formula from terms directly (canonicalizes and merges duplicates).
FormulaSpec make_formula(std::vector<Term> terms,
                         std::optional<std::string> response = std::nullopt,
                         std::string_view exposure = "A");

/// Canonical text form; parse_formula(render(f)) == f.
std::string render(const FormulaSpec& spec);

inline constexpr const char* kInterceptLabel = "(Intercept)";

struct DesignMatrix {
  std::vector<std::string> columns;
  Matrix values;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  std::optional<Index> column_index(const std::string& label) const;
};

/// Intercept, then one column per term in canonical order. With an
/// override, every occurrence of the treatment variable is replaced by the
/// constant value.
DesignMatrix build_design(const FormulaSpec& spec, const Dataset& data,
                          std::optional<int> treatment_override = std::nullopt);

}  // namespace drate
