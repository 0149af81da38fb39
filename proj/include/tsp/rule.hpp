#pragma once
// Chain Horn rules  head(X,Y) <- r1(X,Z1) ^ ... ^ rK(Z{K-1},Y)  with K in {2,3}.
//
// The variable pattern is implied by position, so a rule is just a head
// relation plus an ordered body. Relations are kept as labels; they are
// resolved against a store when the rule is grounded.

#include <cctype>
#include <compare>
#include <cstddef>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "tsp/error.hpp"

namespace tsp {

inline constexpr std::size_t kMinRuleLength = 2;
inline constexpr std::size_t kMaxRuleLength = 3;

inline bool is_relation_name(std::string_view s) {
  if (s.empty()) return false;
  for (unsigned char c : s)
    if (!std::isalnum(c) && c != '_') return false;
  return true;
}

class Rule {
 public:
  Rule(std::string head, std::vector<std::string> body) : head_(std::move(head)), body_(std::move(body)) {
    if (body_.size() < kMinRuleLength || body_.size() > kMaxRuleLength) {
      throw ParseError("rule length " + std::to_string(body_.size()) + " outside {2,3}");
    }
    if (!is_relation_name(head_)) throw ParseError("invalid relation name '" + head_ + "'");
    for (const auto& r : body_)
      if (!is_relation_name(r)) throw ParseError("invalid relation name '" + r + "'");
  }

  const std::string& head() const noexcept { return head_; }
  const std::vector<std::string>& body() const noexcept { return body_; }
  std::size_t length() const noexcept { return body_.size(); }

  friend auto operator<=>(const Rule&, const Rule&) = default;

 private:
  std::string head_;
  std::vector<std::string> body_;
};

namespace detail {

struct Atom {
  std::string relation;
  std::vector<std::string> args;
  std::string text;
};

// Tokenizer for the rule grammar. Accepts `<-`, `⟵` and `←` as the arrow and
// `^`, `∧` as conjunction.
class RuleLexer {
 public:
  enum class Kind { Ident, LParen, RParen, Comma, Arrow, And, End };

  struct Token {
    Kind kind;
    std::string_view text;
    std::size_t offset;
  };

  explicit RuleLexer(std::string_view src) : src_(src) {}

  Token next() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    if (pos_ >= src_.size()) return {Kind::End, {}, start};

    auto take = [&](Kind k, std::size_t n) {
      pos_ += n;
      return Token{k, src_.substr(start, n), start};
    };
    const std::string_view rest = src_.substr(pos_);
    if (rest.starts_with("<-")) return take(Kind::Arrow, 2);
    if (rest.starts_with("⟵") || rest.starts_with("←")) return take(Kind::Arrow, 3);
    if (rest.starts_with("∧")) return take(Kind::And, 3);
    switch (rest.front()) {
      case '^': return take(Kind::And, 1);
      case '(': return take(Kind::LParen, 1);
      case ')': return take(Kind::RParen, 1);
      case ',': return take(Kind::Comma, 1);
      default: break;
    }
    std::size_t n = 0;
    while (n < rest.size() && (std::isalnum(static_cast<unsigned char>(rest[n])) || rest[n] == '_')) ++n;
    if (n == 0) {
      throw ParseError("unexpected character '" + std::string(1, rest.front()) + "' at offset " +
                       std::to_string(start));
    }
    return take(Kind::Ident, n);
  }

 private:
  std::string_view src_;
  std::size_t pos_ = 0;
};

inline Atom parse_atom(RuleLexer& lex, RuleLexer::Token first, std::string_view src) {
  using K = RuleLexer::Kind;
  if (first.kind != K::Ident) {
    throw ParseError("expected relation name at offset " + std::to_string(first.offset));
  }
  Atom atom{std::string(first.text), {}, {}};
  if (lex.next().kind != K::LParen) throw ParseError("expected '(' after '" + atom.relation + "'");
  RuleLexer::Token tok = lex.next();
  if (tok.kind != K::RParen) {
    while (true) {
      if (tok.kind != K::Ident) {
        throw ParseError("bad argument list in atom '" + atom.relation + "' at offset " +
                         std::to_string(tok.offset));
      }
      atom.args.emplace_back(tok.text);
      tok = lex.next();
      if (tok.kind == K::RParen) break;
      if (tok.kind != K::Comma) throw ParseError("unterminated atom '" + atom.relation + "'");
      tok = lex.next();
    }
  }
  atom.text = std::string(src.substr(first.offset, tok.offset + 1 - first.offset));
  if (atom.args.size() != 2) {
    throw ParseError("atom '" + atom.text + "' must have exactly two arguments");
  }
  return atom;
}

}  // namespace detail

// Parses `H(X,Y) <- B1(X,Z1) ^ B2(Z1,Y)` (or the three-atom chain). Anything
// after a '|' is an annotation and ignored.
inline Rule parse_rule(std::string_view text) {
  using K = detail::RuleLexer::Kind;
  if (auto bar = text.find('|'); bar != std::string_view::npos) text = text.substr(0, bar);

  detail::RuleLexer lex(text);
  detail::Atom head = detail::parse_atom(lex, lex.next(), text);
  if (lex.next().kind != K::Arrow) throw ParseError("expected '<-' after rule head '" + head.text + "'");

  std::vector<detail::Atom> body;
  body.push_back(detail::parse_atom(lex, lex.next(), text));
  for (auto tok = lex.next(); tok.kind != K::End; tok = lex.next()) {
    if (tok.kind != K::And) {
      throw ParseError("expected '^' between body atoms at offset " + std::to_string(tok.offset));
    }
    body.push_back(detail::parse_atom(lex, lex.next(), text));
  }

  if (body.size() < kMinRuleLength || body.size() > kMaxRuleLength) {
    throw ParseError("rule length " + std::to_string(body.size()) + " outside {2,3}");
  }

  const std::string& x = head.args[0];
  const std::string& y = head.args[1];
  if (x == y) throw ParseError("head atom '" + head.text + "' repeats its variable");

  std::vector<std::string> seen{x, y};
  std::string expected = x;
  for (std::size_t i = 0; i < body.size(); ++i) {
    const auto& atom = body[i];
    if (atom.args[0] != expected) {
      throw ParseError("atom '" + atom.text + "' breaks the variable chain: expected first argument " + expected);
    }
    const bool last = i + 1 == body.size();
    const std::string& out = atom.args[1];
    if (last) {
      if (out != y) throw ParseError("atom '" + atom.text + "' must end the chain in " + y);
    } else {
      for (const auto& v : seen)
        if (v == out) throw ParseError("atom '" + atom.text + "' reuses variable " + out);
      seen.push_back(out);
    }
    expected = out;
  }

  std::vector<std::string> relations;
  for (auto& atom : body) relations.push_back(std::move(atom.relation));
  return Rule(std::move(head.relation), std::move(relations));
}

inline std::string render_rule(const Rule& rule) {
  std::string out = rule.head() + "(X,Y) <-";
  std::string from = "X";
  for (std::size_t i = 0; i < rule.length(); ++i) {
    std::string to = i + 1 == rule.length() ? std::string("Y") : "Z" + std::to_string(i + 1);
    if (i > 0) out += " ^";
    out += " " + rule.body()[i] + "(" + from + "," + to + ")";
    from = std::move(to);
  }
  return out;
}

// "brotherOf" -> "brother of", "has_child" -> "has child".
inline std::string humanize_relation(std::string_view relation) {
  std::string out;
  for (std::size_t i = 0; i < relation.size(); ++i) {
    unsigned char c = relation[i];
    if (c == '_') {
      out += ' ';
    } else if (std::isupper(c) && i > 0 && !std::isupper(static_cast<unsigned char>(relation[i - 1]))) {
      out += ' ';
      out += static_cast<char>(std::tolower(c));
    } else {
      out += static_cast<char>(c);
    }
  }
  return out;
}

namespace detail {

inline std::string explain_atom(std::string_view relation, const std::string& a, const std::string& b) {
  if (relation.starts_with("inv_")) return b + " is " + humanize_relation(relation.substr(4)) + " " + a;
  return a + " is " + humanize_relation(relation) + " " + b;
}

}  // namespace detail

// One-sentence natural-language reading of a rule, used in prediction prompts.
inline std::string explain_rule(const Rule& rule) {
  std::string out = "If ";
  std::string from = "X";
  for (std::size_t i = 0; i < rule.length(); ++i) {
    std::string to = i + 1 == rule.length() ? std::string("Y") : "Z" + std::to_string(i + 1);
    if (i > 0) out += " and ";
    out += detail::explain_atom(rule.body()[i], from, to);
    from = std::move(to);
  }
  return out + ", then " + detail::explain_atom(rule.head(), "X", "Y") + ".";
}

// One rule per line, '#' comments, optional `| ...` annotations.
inline std::vector<Rule> read_rules(std::istream& in) {
  std::vector<Rule> rules;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      rules.push_back(parse_rule(line));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return rules;
}

}  // namespace tsp
