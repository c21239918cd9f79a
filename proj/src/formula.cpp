#include "drate/formula.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace drate {

FormulaError::FormulaError(const std::string& message, std::size_t position)
    : Error("formula error at position " + std::to_string(position) + ": " +
            message),
      position_(position) {}

std::string Term::label() const {
  return is_interaction() ? first + ":" + second : first;
}

bool canonical_less(const Term& a, const Term& b) {
  if (a.is_interaction() != b.is_interaction()) return !a.is_interaction();
  if (a.first != b.first) return a.first < b.first;
  return a.second < b.second;
}

std::vector<Term> FormulaSpec::main_effects() const {
  std::vector<Term> out;
  for (const auto& t : terms) {
    if (!t.is_interaction()) out.push_back(t);
  }
  return out;
}

std::vector<Term> FormulaSpec::interactions() const {
  std::vector<Term> out;
  for (const auto& t : terms) {
    if (t.is_interaction()) out.push_back(t);
  }
  return out;
}

std::vector<std::string> FormulaSpec::variables() const {
  std::set<std::string> vars;
  for (const auto& t : terms) {
    vars.insert(t.first);
    if (t.is_interaction()) vars.insert(t.second);
  }
  return {vars.begin(), vars.end()};
}

bool FormulaSpec::has_term(const std::string& label) const {
  return std::any_of(terms.begin(), terms.end(),
                     [&](const Term& t) { return t.label() == label; });
}

FormulaSpec make_formula(std::vector<Term> terms,
                         std::optional<std::string> response,
                         std::string_view exposure) {
  for (auto& t : terms) {
    if (t.is_interaction() && t.second < t.first) std::swap(t.first, t.second);
  }
  std::sort(terms.begin(), terms.end(), canonical_less);
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());

  FormulaSpec spec;
  spec.response = std::move(response);
  spec.terms = std::move(terms);
  const std::string exp(exposure);
  if (!exp.empty() && std::any_of(spec.terms.begin(), spec.terms.end(),
                                  [&](const Term& t) { return t.involves(exp); })) {
    spec.treatment = exp;
  }
  return spec;
}

namespace {

enum class Tok { Ident, One, Plus, Colon, LParen, RParen, Caret, Tilde, End };

struct Token {
  Tok kind;
  std::string text;
  std::size_t pos;
};

bool ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

bool ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (ident_start(c)) {
      const std::size_t start = i;
      while (i < text.size() && ident_char(text[i])) ++i;
      out.push_back({Tok::Ident, std::string(text.substr(start, i - start)),
                     start});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      const std::size_t start = i;
      while (i < text.size() &&
             std::isdigit(static_cast<unsigned char>(text[i]))) {
        ++i;
      }
      out.push_back({Tok::One, std::string(text.substr(start, i - start)),
                     start});
      continue;
    }
    Tok kind;
    switch (c) {
      case '+':
        kind = Tok::Plus;
        break;
      case ':':
        kind = Tok::Colon;
        break;
      case '(':
        kind = Tok::LParen;
        break;
      case ')':
        kind = Tok::RParen;
        break;
      case '^':
        kind = Tok::Caret;
        break;
      case '~':
        kind = Tok::Tilde;
        break;
      default:
        throw FormulaError(std::string("unknown operator '") + c + "'", i);
    }
    out.push_back({kind, std::string(1, c), i});
    ++i;
  }
  out.push_back({Tok::End, "", text.size()});
  return out;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  FormulaSpec parse(std::string_view exposure) {
    std::optional<std::string> response;
    if (peek().kind == Tok::Ident && tokens_.size() > 2 &&
        tokens_[1].kind == Tok::Tilde) {
      response = next().text;
      next();
    } else if (peek().kind == Tok::Tilde) {
      next();
    }
    std::vector<Term> terms;
    parse_atom(terms);
    while (peek().kind == Tok::Plus) {
      next();
      parse_atom(terms);
    }
    if (peek().kind != Tok::End) {
      throw FormulaError("unexpected '" + peek().text + "'", peek().pos);
    }
    return make_formula(std::move(terms), std::move(response), exposure);
  }

 private:
  const Token& peek() const { return tokens_[cursor_]; }
  const Token& next() { return tokens_[cursor_++]; }

  const Token& expect(Tok kind, const char* what) {
    if (peek().kind != kind) {
      const std::string found =
          peek().kind == Tok::End ? "end of input" : "'" + peek().text + "'";
      throw FormulaError(std::string("expected ") + what + ", found " + found,
                         peek().pos);
    }
    return next();
  }

  void parse_atom(std::vector<Term>& terms) {
    const Token& tok = peek();
    if (tok.kind == Tok::One) {
      if (tok.text != "1") {
        throw FormulaError("only the constant 1 is allowed", tok.pos);
      }
      next();
      return;
    }
    if (tok.kind == Tok::LParen) {
      parse_group(terms);
      return;
    }
    const Token& var = expect(Tok::Ident, "variable");
    if (peek().kind == Tok::Colon) {
      const std::size_t colon = next().pos;
      const Token& other = expect(Tok::Ident, "variable after ':'");
      if (other.text == var.text) {
        throw FormulaError("self-interaction " + var.text + ":" + other.text,
                           colon);
      }
      terms.push_back({var.text, other.text});
      return;
    }
    terms.push_back({var.text, ""});
  }

  void parse_group(std::vector<Term>& terms) {
    next();  // '('
    std::vector<std::string> vars;
    vars.push_back(expect(Tok::Ident, "variable").text);
    while (peek().kind == Tok::Plus) {
      next();
      vars.push_back(expect(Tok::Ident, "variable").text);
    }
    expect(Tok::RParen, "')'");
    expect(Tok::Caret, "'^' after group");
    const Token& power = peek();
    if (power.kind != Tok::One || power.text != "2") {
      throw FormulaError("only ^2 is supported", power.pos);
    }
    next();
    std::sort(vars.begin(), vars.end());
    vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
    for (std::size_t i = 0; i < vars.size(); ++i) {
      terms.push_back({vars[i], ""});
      for (std::size_t j = i + 1; j < vars.size(); ++j) {
        terms.push_back({vars[i], vars[j]});
      }
    }
  }

  std::vector<Token> tokens_;
  std::size_t cursor_ = 0;
};

}  // namespace

FormulaSpec parse_formula(std::string_view text, std::string_view exposure) {
  return Parser(tokenize(text)).parse(exposure);
}

std::string render(const FormulaSpec& spec) {
  std::string out;
  if (spec.response) out = *spec.response + " ~ ";
  if (spec.terms.empty()) return out + "1";
  for (std::size_t i = 0; i < spec.terms.size(); ++i) {
    if (i > 0) out += " + ";
    out += spec.terms[i].label();
  }
  return out;
}

std::optional<Index> DesignMatrix::column_index(const std::string& label) const {
  const auto it = std::find(columns.begin(), columns.end(), label);
  if (it == columns.end()) return std::nullopt;
  return static_cast<Index>(it - columns.begin());
}

namespace {

Vector variable_column(const std::string& var, const Dataset& data,
                       const std::optional<std::string>& treatment,
                       std::optional<int> override_value) {
  if (override_value && treatment && var == *treatment) {
    return Vector::Constant(data.rows(), *override_value);
  }
  if (var == data.treatment_name) return data.A;
  if (const auto idx = data.covariate_index(var)) return data.W.col(*idx);
  throw DataError("formula variable '" + var + "' not found in data");
}

}  // namespace

DesignMatrix build_design(const FormulaSpec& spec, const Dataset& data,
                          std::optional<int> treatment_override) {
  if (treatment_override) {
    if (!spec.treatment) {
      throw DataError("treatment override given but formula has no treatment");
    }
    if (*treatment_override != 0 && *treatment_override != 1) {
      throw DataError("treatment override must be 0 or 1");
    }
  }
  const Index n = data.rows();
  const auto vars = spec.variables();
  std::vector<Vector> cols;
  cols.reserve(vars.size());
  for (const auto& v : vars) {
    cols.push_back(variable_column(v, data, spec.treatment, treatment_override));
    if (!cols.back().allFinite()) {
      throw DataError("variable '" + v + "' has non-finite values");
    }
  }
  auto column_of = [&](const std::string& v) -> const Vector& {
    const auto it = std::lower_bound(vars.begin(), vars.end(), v);
    return cols[static_cast<std::size_t>(it - vars.begin())];
  };

  DesignMatrix dm;
  dm.columns.reserve(spec.terms.size() + 1);
  dm.columns.emplace_back(kInterceptLabel);
  dm.values.resize(n, static_cast<Index>(spec.terms.size()) + 1);
  dm.values.col(0).setOnes();
  Index c = 1;
  for (const auto& t : spec.terms) {
    dm.columns.push_back(t.label());
    if (t.is_interaction()) {
      dm.values.col(c) =
          column_of(t.first).cwiseProduct(column_of(t.second));
    } else {
      dm.values.col(c) = column_of(t.first);
    }
    ++c;
  }
  return dm;
}

}  // namespace drate
