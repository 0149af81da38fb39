#pragma once
// Hallucination audit of parsed predictions against the subgraph they were
// predicted from. Two failure modes are measured: cited premises that are
// not in the subgraph, and reasoning that does not follow the given rule.
//
// Ground truth for a prediction is the rule engine, not the citation: a
// prediction is entailed when its relation is the rule head and its (x, y)
// pair grounds the rule body in the subgraph.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsp/error.hpp"
#include "tsp/kg_store.hpp"
#include "tsp/llm/response_parser.hpp"
#include "tsp/rule.hpp"
#include "tsp/rule_engine.hpp"

namespace tsp {

struct AuditRecord {
  PredictionRecord prediction;
  std::vector<bool> premise_flags;  // premise exists in the subgraph
  bool premises_cited = false;      // premise checks apply only when true
  bool entities_known = true;       // every cited entity occurs in the subgraph
  bool head_matches_rule = false;
  bool premise_chain_valid = false;
  bool entailed_by_subgraph = false;
  bool already_in_subgraph = false;  // predicted triple is itself a known fact

  bool any_nonexistent_premise() const {
    return std::find(premise_flags.begin(), premise_flags.end(), false) != premise_flags.end();
  }
  // Off-head prediction, or a cited chain that does not instantiate the body.
  bool rule_noncompliant() const { return !head_matches_rule || (premises_cited && !premise_chain_valid); }
};

namespace detail {

inline bool entity_known(const TripleStore& g, const std::string& label) {
  auto id = g.find_entity(label);
  return id && g.has_entity(*id);
}

inline bool chain_valid(const Rule& rule, const LabeledTriple& predicted, const std::vector<LabeledTriple>& premises) {
  if (premises.size() != rule.length()) return false;
  for (std::size_t i = 0; i < premises.size(); ++i) {
    if (premises[i].relation != rule.body()[i]) return false;
    if (i > 0 && premises[i].head != premises[i - 1].tail) return false;
  }
  return premises.front().head == predicted.head && premises.back().tail == predicted.tail;
}

}  // namespace detail

// Body pairs of `rule` in `subgraph`, labelled; reuse across records.
inline std::set<std::pair<std::string, std::string>> grounded_pairs(const TripleStore& subgraph, const Rule& rule) {
  std::set<std::pair<std::string, std::string>> out;
  for (auto [x, y] : ground_pairs(subgraph, rule)) out.emplace(subgraph.label(x), subgraph.label(y));
  return out;
}

inline AuditRecord audit(const TripleStore& subgraph, const Rule& rule, const PredictionRecord& record,
                         const std::set<std::pair<std::string, std::string>>& pairs) {
  if (!(record.rule == rule)) {
    throw Error("audit: record was predicted with " + render_rule(record.rule) + ", not " + render_rule(rule));
  }
  AuditRecord a{record, {}};
  a.premises_cited = !record.premises.empty();
  for (const auto& p : record.premises) {
    a.premise_flags.push_back(subgraph.contains(p));
    a.entities_known = a.entities_known && detail::entity_known(subgraph, p.head) && detail::entity_known(subgraph, p.tail);
  }
  const auto& t = record.predicted;
  a.entities_known = a.entities_known && detail::entity_known(subgraph, t.head) && detail::entity_known(subgraph, t.tail);
  a.head_matches_rule = t.relation == rule.head();
  a.premise_chain_valid = a.premises_cited && detail::chain_valid(rule, t, record.premises);
  a.entailed_by_subgraph = a.head_matches_rule && pairs.contains({t.head, t.tail});
  a.already_in_subgraph = subgraph.contains(t);
  return a;
}

inline AuditRecord audit(const TripleStore& subgraph, const Rule& rule, const PredictionRecord& record) {
  return audit(subgraph, rule, record, grounded_pairs(subgraph, rule));
}

// num/den with an explicit undefined state for den == 0.
struct Rate {
  std::size_t num = 0;
  std::size_t den = 0;

  bool undefined() const noexcept { return den == 0; }
  std::optional<double> value() const {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  }
  std::string str() const {
    return std::to_string(num) + "/" + std::to_string(den) + " = " + (den ? format_ratio(*value()) : "undefined");
  }
  friend bool operator==(const Rate&, const Rate&) = default;
};

struct AuditCounts {
  std::size_t predictions = 0;
  std::size_t with_premises = 0;
  std::size_t with_nonexistent_premise = 0;
  std::size_t rule_noncompliant = 0;
  std::size_t off_head = 0;
  std::size_t unknown_entity = 0;
  std::size_t oracle_confirmed = 0;
  std::size_t already_known = 0;
  std::size_t premises_cited = 0;
  std::size_t premises_nonexistent = 0;

  void add(const AuditRecord& a) {
    ++predictions;
    with_premises += a.premises_cited;
    with_nonexistent_premise += a.any_nonexistent_premise();
    rule_noncompliant += a.rule_noncompliant();
    off_head += !a.head_matches_rule;
    unknown_entity += !a.entities_known;
    oracle_confirmed += a.entailed_by_subgraph;
    already_known += a.already_in_subgraph;
    premises_cited += a.premise_flags.size();
    premises_nonexistent += static_cast<std::size_t>(std::count(a.premise_flags.begin(), a.premise_flags.end(), false));
  }

  // Predictions without premises are excluded from the premise rate.
  Rate nonexistent_premise_rate() const { return {with_nonexistent_premise, with_premises}; }
  Rate rule_noncompliant_rate() const { return {rule_noncompliant, predictions}; }
  Rate unknown_entity_rate() const { return {unknown_entity, predictions}; }
  Rate oracle_confirmed_rate() const { return {oracle_confirmed, predictions}; }

  friend bool operator==(const AuditCounts&, const AuditCounts&) = default;
};

struct HallucinationReport {
  AuditCounts totals;
  // Nonexistent cited premises per relation label.
  std::map<std::string, std::size_t> nonexistent_by_relation;
  std::map<std::string, AuditCounts> by_rule;  // keyed by rendered rule
  std::map<std::size_t, AuditCounts> by_subgraph;

  friend bool operator==(const HallucinationReport&, const HallucinationReport&) = default;
};

inline HallucinationReport summarize(const std::vector<AuditRecord>& audits) {
  HallucinationReport r;
  for (const auto& a : audits) {
    r.totals.add(a);
    r.by_rule[render_rule(a.prediction.rule)].add(a);
    r.by_subgraph[a.prediction.subgraph].add(a);
    for (std::size_t i = 0; i < a.premise_flags.size(); ++i)
      if (!a.premise_flags[i]) ++r.nonexistent_by_relation[a.prediction.premises[i].relation];
  }
  return r;
}

namespace detail {

inline void write_counts(std::ostream& out, const AuditCounts& c, const std::string& indent) {
  out << indent << "predictions: " << c.predictions << '\n';
  out << indent << "with_premises: " << c.with_premises << '\n';
  out << indent << "premises_cited: " << c.premises_cited << '\n';
  out << indent << "premises_nonexistent: " << c.premises_nonexistent << '\n';
  out << indent << "nonexistent_premise_rate: " << c.nonexistent_premise_rate().str() << '\n';
  out << indent << "rule_noncompliant_rate: " << c.rule_noncompliant_rate().str() << '\n';
  out << indent << "off_head: " << c.off_head << '\n';
  out << indent << "unknown_entity_rate: " << c.unknown_entity_rate().str() << '\n';
  out << indent << "oracle_confirmed_rate: " << c.oracle_confirmed_rate().str() << '\n';
  out << indent << "already_known: " << c.already_known << '\n';
}

inline nlohmann::json rate_json(const Rate& r) {
  nlohmann::json j{{"num", r.num}, {"den", r.den}};
  j["value"] = r.undefined() ? nlohmann::json(nullptr) : nlohmann::json(*r.value());
  return j;
}

inline nlohmann::json counts_json(const AuditCounts& c) {
  return {{"predictions", c.predictions},
          {"with_premises", c.with_premises},
          {"with_nonexistent_premise", c.with_nonexistent_premise},
          {"premises_cited", c.premises_cited},
          {"premises_nonexistent", c.premises_nonexistent},
          {"rule_noncompliant", c.rule_noncompliant},
          {"off_head", c.off_head},
          {"unknown_entity", c.unknown_entity},
          {"oracle_confirmed", c.oracle_confirmed},
          {"already_known", c.already_known},
          {"nonexistent_premise_rate", rate_json(c.nonexistent_premise_rate())},
          {"rule_noncompliant_rate", rate_json(c.rule_noncompliant_rate())},
          {"unknown_entity_rate", rate_json(c.unknown_entity_rate())},
          {"oracle_confirmed_rate", rate_json(c.oracle_confirmed_rate())}};
}

}  // namespace detail

inline void write_report(std::ostream& out, const HallucinationReport& r) {
  out << "[hallucination]\n";
  detail::write_counts(out, r.totals, "");
  out << "nonexistent_by_relation:";
  for (const auto& [rel, n] : r.nonexistent_by_relation) out << ' ' << rel << '=' << n;
  out << '\n';
  for (const auto& [rule, c] : r.by_rule) {
    out << "\n[rule " << rule << "]\n";
    detail::write_counts(out, c, "  ");
  }
  for (const auto& [sub, c] : r.by_subgraph) {
    out << "\n[subgraph " << sub << "]\n";
    detail::write_counts(out, c, "  ");
  }
}

inline nlohmann::json to_json(const HallucinationReport& r) {
  nlohmann::json j;
  j["totals"] = detail::counts_json(r.totals);
  j["nonexistent_by_relation"] = r.nonexistent_by_relation;
  j["by_rule"] = nlohmann::json::object();
  for (const auto& [rule, c] : r.by_rule) j["by_rule"][rule] = detail::counts_json(c);
  j["by_subgraph"] = nlohmann::json::object();
  for (const auto& [sub, c] : r.by_subgraph) j["by_subgraph"][std::to_string(sub)] = detail::counts_json(c);
  return j;
}

}  // namespace tsp
