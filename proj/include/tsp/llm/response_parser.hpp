#pragma once
// Turning raw completion text into rules and prediction records.
//
// Both parsers are total: any input yields a (possibly empty) result and
// never throws.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tsp/error.hpp"
#include "tsp/kg_store.hpp"
#include "tsp/rule.hpp"

namespace tsp {

struct RuleReject {
  std::size_t line = 0;  // 1-based
  std::string text;
  std::string reason;
};

struct MinedRules {
  std::vector<Rule> rules;
  std::vector<RuleReject> rejects;
};

struct PredictionRecord {
  LabeledTriple predicted;
  std::vector<LabeledTriple> premises;  // as cited, possibly empty
  Rule rule;
  std::size_t subgraph = 0;
  std::size_t span_begin = 0;  // byte offsets into the response text
  std::size_t span_end = 0;
  std::string mode;        // "structured" or "fallback" (parsed), "oracle"
  std::string provenance;  // backend tag and prompt fingerprint
};

namespace detail {

inline bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

inline bool is_decoration(char c) { return c == ' ' || c == '\t' || c == '*' || c == '`' || c == '\r'; }

struct ArrowHit {
  std::size_t pos;
  std::size_t len;
};

inline std::optional<ArrowHit> find_arrow(std::string_view s) {
  std::optional<ArrowHit> best;
  for (std::string_view a : {std::string_view("<-"), std::string_view("⟵"), std::string_view("←")}) {
    auto p = s.find(a);
    if (p != std::string_view::npos && (!best || p < best->pos)) best = ArrowHit{p, a.size()};
  }
  return best;
}

// Reads `name(...)` at i (after decoration). Returns the end offset or npos.
inline std::size_t scan_atom(std::string_view s, std::size_t i) {
  while (i < s.size() && is_decoration(s[i])) ++i;
  std::size_t j = i;
  while (j < s.size() && is_ident_char(s[j])) ++j;
  if (j == i) return std::string_view::npos;
  while (j < s.size() && (s[j] == ' ' || s[j] == '\t')) ++j;
  if (j >= s.size() || s[j] != '(') return std::string_view::npos;
  auto close = s.find(')', j);
  return close == std::string_view::npos ? std::string_view::npos : close + 1;
}

// The rule-shaped stretch of a line around its arrow: from the head atom to
// the last conjunct. Falls back to the trimmed line when no head atom sits
// in front of the arrow, so parse_rule can name the defect.
inline std::string rule_candidate(std::string_view line, ArrowHit arrow) {
  std::size_t begin = std::string_view::npos;
  std::size_t j = arrow.pos;
  while (j > 0 && is_decoration(line[j - 1])) --j;
  if (j > 0 && line[j - 1] == ')') {
    auto open = line.rfind('(', j - 1);
    if (open != std::string_view::npos) {
      std::size_t k = open;
      while (k > 0 && (line[k - 1] == ' ' || line[k - 1] == '\t')) --k;
      std::size_t name_end = k;
      while (k > 0 && is_ident_char(line[k - 1])) --k;
      if (k < name_end) begin = k;
    }
  }
  if (begin == std::string_view::npos) {
    auto first = line.find_first_not_of(" \t*`-");
    auto last = line.find_last_not_of(" \t\r*`");
    if (first == std::string_view::npos) return {};
    return std::string(line.substr(first, last + 1 - first));
  }

  std::size_t end = arrow.pos + arrow.len;
  for (std::size_t i = end;;) {
    std::size_t after = scan_atom(line, i);
    if (after == std::string_view::npos) break;
    end = after;
    std::size_t k = after;
    while (k < line.size() && is_decoration(line[k])) ++k;
    if (k < line.size() && line[k] == '^') {
      i = k + 1;
    } else if (line.substr(k).starts_with("∧")) {
      i = k + 3;
    } else {
      break;
    }
  }
  return std::string(line.substr(begin, end - begin));
}

inline std::string trim(std::string_view s) {
  auto first = s.find_first_not_of(" \t\r\n\"'`*");
  if (first == std::string_view::npos) return {};
  auto last = s.find_last_not_of(" \t\r\n\"'`*");
  return std::string(s.substr(first, last + 1 - first));
}

struct Tuple {
  LabeledTriple triple;
  std::size_t begin;  // offset of '('
  std::size_t end;    // one past ')'
};

// Every `(a, b, c)` with three non-empty fields in s[from, to).
inline std::vector<Tuple> scan_tuples(std::string_view s, std::size_t from, std::size_t to) {
  std::vector<Tuple> out;
  std::size_t i = from;
  while (i < to) {
    auto open = s.find('(', i);
    if (open == std::string_view::npos || open >= to) break;
    auto close = s.find_first_of("()", open + 1);
    if (close == std::string_view::npos || close >= to) break;
    if (s[close] == '(') {  // nested or unbalanced: restart at the inner paren
      i = close;
      continue;
    }
    std::string_view inner = s.substr(open + 1, close - open - 1);
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      auto comma = inner.find(',', start);
      fields.push_back(trim(inner.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    const bool ok = fields.size() == 3 && std::none_of(fields.begin(), fields.end(), [](const std::string& f) {
                      return f.empty() || f.find('\n') != std::string::npos;
                    });
    if (ok) out.push_back({{fields[0], fields[1], fields[2]}, open, close + 1});
    i = close + 1;
  }
  return out;
}

enum class LineTag { None, Premises, Prediction };

inline bool iequals_at(std::string_view s, std::size_t pos, std::string_view word) {
  if (pos + word.size() > s.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i)
    if (std::toupper(static_cast<unsigned char>(s[pos + i])) != word[i]) return false;
  return true;
}

// Detects `PREMISES:` / `PREMISE:` / `PREDICTION:` at the start of a line,
// after list markers and emphasis. Returns the tag and the offset after ':'.
inline std::pair<LineTag, std::size_t> line_tag(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && (is_decoration(line[i]) || line[i] == '-' || line[i] == '#' || line[i] == '>' ||
                             std::isdigit(static_cast<unsigned char>(line[i])) || line[i] == '.' || line[i] == ')'))
    ++i;
  auto colon_after = [&](std::size_t k) -> std::size_t {
    while (k < line.size() && (line[k] == '*' || line[k] == ' ')) ++k;
    return k < line.size() && line[k] == ':' ? k + 1 : std::string_view::npos;
  };
  if (iequals_at(line, i, "PREMISES")) {
    if (auto c = colon_after(i + 8); c != std::string_view::npos) return {LineTag::Premises, c};
  } else if (iequals_at(line, i, "PREMISE")) {
    if (auto c = colon_after(i + 7); c != std::string_view::npos) return {LineTag::Premises, c};
  } else if (iequals_at(line, i, "PREDICTION")) {
    if (auto c = colon_after(i + 10); c != std::string_view::npos) return {LineTag::Prediction, c};
  }
  return {LineTag::None, 0};
}

struct Line {
  std::size_t begin;
  std::size_t end;  // excludes '\n'
};

inline std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < text.size()) out.push_back({start, text.size()});
      break;
    }
    out.push_back({start, nl});
    start = nl + 1;
  }
  return out;
}

}  // namespace detail

// Every line holding an arrow is a candidate. Candidates that parse become
// rules; the rest are rejects carrying the parser's reason.
inline MinedRules parse_mined_rules(std::string_view text) {
  MinedRules out;
  const auto lines = detail::split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    std::string_view line = text.substr(lines[n].begin, lines[n].end - lines[n].begin);
    auto arrow = detail::find_arrow(line);
    if (!arrow) continue;
    std::string candidate = detail::rule_candidate(line, *arrow);
    try {
      out.rules.push_back(parse_rule(candidate));
    } catch (const Error& e) {
      out.rejects.push_back({n + 1, candidate, e.what()});
    }
  }
  return out;
}

// Default relation vocabulary for the fallback scan: the rule's relations and
// their inverses.
inline std::vector<std::string> rule_relations(const Rule& rule) {
  std::vector<std::string> out;
  auto add = [&](const std::string& r) {
    for (const auto& x : {r, inverse_label(r)})
      if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
  };
  add(rule.head());
  for (const auto& r : rule.body()) add(r);
  return out;
}

// Structured mode applies when any line carries a PREDICTION: tag. Each
// PREDICTION tuple becomes a record with the premises of the latest
// PREMISES line since the previous prediction.
//
// Fallback mode scans all tuples whose relation is in `known` (default:
// rule_relations). Tuples over a body relation that is not the head are
// premises, the last K of them are attached to the next other tuple, which
// becomes the prediction.
//
// The span [span_begin, span_end) re-parses to a list whose last record
// equals this one; for single-tuple PREDICTION lines it is the only record.
inline std::vector<PredictionRecord> parse_predictions(std::string_view text, const Rule& rule, std::size_t subgraph,
                                                       const std::vector<std::string>* known = nullptr) {
  std::vector<PredictionRecord> out;
  const auto lines = detail::split_lines(text);

  bool structured = false;
  for (const auto& l : lines)
    if (detail::line_tag(text.substr(l.begin, l.end - l.begin)).first == detail::LineTag::Prediction) {
      structured = true;
      break;
    }

  if (structured) {
    std::vector<LabeledTriple> premises;
    std::size_t premises_begin = std::string_view::npos;
    for (const auto& l : lines) {
      auto [tag, after] = detail::line_tag(text.substr(l.begin, l.end - l.begin));
      if (tag == detail::LineTag::Premises) {
        premises.clear();
        for (auto& t : detail::scan_tuples(text, l.begin + after, l.end)) premises.push_back(std::move(t.triple));
        premises_begin = l.begin;
      } else if (tag == detail::LineTag::Prediction) {
        for (auto& t : detail::scan_tuples(text, l.begin + after, l.end)) {
          out.push_back({std::move(t.triple), premises, rule, subgraph, premises_begin == std::string_view::npos ? l.begin : premises_begin, t.end,
                         "structured", {}});
        }
        premises.clear();
        premises_begin = std::string_view::npos;
      }
    }
    return out;
  }

  const std::vector<std::string> defaults = known ? std::vector<std::string>{} : rule_relations(rule);
  const auto& vocab = known ? *known : defaults;
  auto has = [&](const std::string& r) { return std::find(vocab.begin(), vocab.end(), r) != vocab.end(); };
  auto in_body = [&](const std::string& r) {
    return r != rule.head() && std::find(rule.body().begin(), rule.body().end(), r) != rule.body().end();
  };

  std::vector<detail::Tuple> pending;
  for (auto& t : detail::scan_tuples(text, 0, text.size())) {
    if (!has(t.triple.relation)) continue;
    if (in_body(t.triple.relation)) {
      pending.push_back(std::move(t));
      if (pending.size() > rule.length()) pending.erase(pending.begin());
      continue;
    }
    PredictionRecord rec{t.triple, {}, rule, subgraph, pending.empty() ? t.begin : pending.front().begin, t.end,
                         "fallback", {}};
    for (auto& p : pending) rec.premises.push_back(std::move(p.triple));
    pending.clear();
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace tsp
