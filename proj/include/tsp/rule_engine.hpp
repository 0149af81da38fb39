#pragma once
// Grounding, scoring and forward application of chain rules.
//
// Body groundings are enumerated with relation-indexed joins left to right
// along the chain: the first atom scans its relation, every later atom looks
// up tails(z, r). Support, head coverage and confidence count distinct (x, y)
// pairs, AMIE style, under the closed world assumption.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tsp/kg_store.hpp"
#include "tsp/rule.hpp"

namespace tsp {

// Body relation ids, or nullopt when some body relation is unknown to the
// store's vocabulary (no grounding can exist then).
inline std::optional<std::vector<RelationId>> resolve_body(const TripleStore& store, const Rule& rule) {
  std::vector<RelationId> ids;
  for (const auto& r : rule.body()) {
    auto id = store.find_relation(r);
    if (!id) return std::nullopt;
    ids.push_back(*id);
  }
  return ids;
}

// Calls fn(path) for every binding of the body chain, where
// path = [x, z1, ..., y] has length body.size() + 1.
template <class Fn>
void for_each_binding(const TripleStore& store, std::span<const RelationId> body, Fn&& fn) {
  if (body.empty()) return;
  std::vector<EntityId> path(body.size() + 1);
  auto extend = [&](auto& self, std::size_t depth) -> void {
    if (depth == body.size()) {
      fn(std::as_const(path));
      return;
    }
    for (EntityId next : store.tails(path[depth], body[depth])) {
      path[depth + 1] = next;
      self(self, depth + 1);
    }
  };
  for (const Triple& t : store.with_relation(body[0])) {
    path[0] = t.head;
    path[1] = t.tail;
    extend(extend, 1);
  }
}

// A distinct (x, y) body grounding with the first witness chain found.
struct Grounding {
  EntityId x;
  EntityId y;
  std::vector<EntityId> path;  // x, z1, ..., y
};

// Distinct (x, y) pairs satisfying the body, sorted by (x, y).
inline std::vector<std::pair<EntityId, EntityId>> ground_pairs(const TripleStore& store, const Rule& rule) {
  std::vector<std::pair<EntityId, EntityId>> pairs;
  auto body = resolve_body(store, rule);
  if (!body) return pairs;
  std::unordered_set<std::uint64_t> seen;
  for_each_binding(store, *body, [&](const std::vector<EntityId>& path) {
    if (seen.insert(detail::pack(path.front().value, path.back().value)).second) {
      pairs.emplace_back(path.front(), path.back());
    }
  });
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

inline std::vector<Grounding> ground_body(const TripleStore& store, const Rule& rule) {
  std::vector<Grounding> out;
  auto body = resolve_body(store, rule);
  if (!body) return out;
  std::unordered_map<std::uint64_t, std::size_t> seen;
  for_each_binding(store, *body, [&](const std::vector<EntityId>& path) {
    if (seen.emplace(detail::pack(path.front().value, path.back().value), out.size()).second) {
      out.push_back(Grounding{path.front(), path.back(), path});
    }
  });
  std::sort(out.begin(), out.end(),
            [](const Grounding& a, const Grounding& b) { return std::tie(a.x, a.y) < std::tie(b.x, b.y); });
  return out;
}

struct RuleQuality {
  std::size_t support = 0;
  std::size_t body_groundings = 0;
  std::size_t head_facts = 0;
  double head_coverage = 0.0;
  double confidence = 0.0;
  // A denominator was zero; the affected ratio is reported as 0.
  bool degenerate = false;
};

inline RuleQuality score_rule(const TripleStore& store, const Rule& rule) {
  RuleQuality q;
  const auto head = store.find_relation(rule.head());
  const auto pairs = ground_pairs(store, rule);
  q.body_groundings = pairs.size();
  if (head) {
    q.head_facts = store.with_relation(*head).size();
    for (auto [x, y] : pairs)
      if (store.contains(Triple{x, *head, y})) ++q.support;
  }
  if (q.head_facts > 0) q.head_coverage = static_cast<double>(q.support) / static_cast<double>(q.head_facts);
  if (q.body_groundings > 0) {
    q.confidence = static_cast<double>(q.support) / static_cast<double>(q.body_groundings);
  }
  q.degenerate = q.head_facts == 0 || q.body_groundings == 0;
  return q;
}

struct ScoredRule {
  Rule rule;
  RuleQuality quality;
};

// Distinct rules in first-seen order.
inline std::vector<Rule> unique_rules(std::span<const Rule> rules) {
  std::vector<Rule> out;
  std::set<Rule> seen;
  for (const auto& r : rules)
    if (seen.insert(r).second) out.push_back(r);
  return out;
}

inline void sort_scored(std::vector<ScoredRule>& rules) {
  std::sort(rules.begin(), rules.end(), [](const ScoredRule& a, const ScoredRule& b) {
    if (a.rule.head() != b.rule.head()) return a.rule.head() < b.rule.head();
    if (a.quality.confidence != b.quality.confidence) return a.quality.confidence > b.quality.confidence;
    return a.rule < b.rule;
  });
}

// Scores each distinct rule once; no thresholding.
inline std::vector<ScoredRule> score_rules(std::span<const Rule> rules, const TripleStore& store) {
  std::vector<ScoredRule> out;
  for (auto& r : unique_rules(rules)) {
    auto q = score_rule(store, r);
    out.push_back({std::move(r), q});
  }
  sort_scored(out);
  return out;
}

// Rules with confidence >= alpha_conf and head coverage >= alpha_hc, sorted by
// head relation, then confidence descending.
inline std::vector<ScoredRule> filter_rules(std::span<const Rule> rules, double alpha_conf, double alpha_hc,
                                            const TripleStore& store) {
  std::vector<ScoredRule> out;
  for (auto& s : score_rules(rules, store)) {
    if (s.quality.confidence >= alpha_conf && s.quality.head_coverage >= alpha_hc) out.push_back(std::move(s));
  }
  return out;
}

// A triple derived by one rule application, with the body chain that
// licenses it.
struct Entailment {
  LabeledTriple predicted;
  std::vector<LabeledTriple> premises;
  bool reflexive = false;  // head == tail
};

// One forward-chaining step: every (x, head, y) with (x, y) grounding the
// body, minus triples already in the graph. Sorted by (x, y) id.
inline std::vector<Entailment> entail(const TripleStore& graph, const Rule& rule) {
  std::vector<Entailment> out;
  auto body = resolve_body(graph, rule);
  if (!body) return out;
  const auto head = graph.find_relation(rule.head());
  for (const Grounding& g : ground_body(graph, rule)) {
    if (head && graph.contains(Triple{g.x, *head, g.y})) continue;
    Entailment e;
    e.predicted = LabeledTriple{graph.label(g.x), rule.head(), graph.label(g.y)};
    for (std::size_t i = 0; i < body->size(); ++i) {
      e.premises.push_back(graph.labeled(Triple{g.path[i], (*body)[i], g.path[i + 1]}));
    }
    e.reflexive = g.x == g.y;
    out.push_back(std::move(e));
  }
  return out;
}

inline std::string format_ratio(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Rules file with `| support=<n> hc=<x> conf=<x>` annotations.
inline void write_rules(std::ostream& out, std::span<const ScoredRule> rules) {
  for (const auto& s : rules) {
    out << render_rule(s.rule) << " | support=" << s.quality.support << " hc=" << format_ratio(s.quality.head_coverage)
        << " conf=" << format_ratio(s.quality.confidence) << '\n';
  }
}

}  // namespace tsp
