#pragma once
// Closed-world scoring of a predicted triple set against a test set.
//
//   T+ = T_predict ∩ T_test,  T- = T_predict \ T+
//   JPrecision = |T+| / |T_predict|
//   STRecall   = sqrt(|T+| / |T_test|)
//   F_TSP      = harmonic mean of the two
//
// T_predict is counted after inverse folding, deduplication and removal of
// triples already in the training graph; each of those tallies is reported
// so other counting bases can be recomputed.

#include <cmath>
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
#include "tsp/rule_engine.hpp"

namespace tsp {

// (h, inv_r, t) -> (t, r, h), repeatedly.
inline LabeledTriple fold_inverse(LabeledTriple t) {
  while (is_inverse_label(t.relation)) {
    t.relation = inverse_label(t.relation);
    std::swap(t.head, t.tail);
  }
  return t;
}

struct CanonicalPredictions {
  std::set<LabeledTriple> triples;  // T_predict
  std::size_t records = 0;
  std::size_t folded = 0;       // records stated with an inverse relation
  std::size_t duplicates = 0;   // records repeating an earlier triple
  std::size_t known_facts = 0;  // distinct triples dropped as already known
  // Contributors to each surviving triple.
  std::map<LabeledTriple, std::set<std::string>> rules_of;
  std::map<LabeledTriple, std::set<std::size_t>> subgraphs_of;
};

// `known` is the training graph; pass nullptr to keep every triple.
inline CanonicalPredictions canonicalize_predictions(const std::vector<PredictionRecord>& records,
                                                     const TripleStore* known) {
  CanonicalPredictions out;
  std::set<LabeledTriple> seen, dropped;
  for (const auto& r : records) {
    ++out.records;
    LabeledTriple t = fold_inverse(r.predicted);
    out.folded += !(t == r.predicted);
    if (!seen.insert(t).second) ++out.duplicates;
    if (known && known->contains(t)) {
      dropped.insert(t);
      continue;
    }
    out.triples.insert(t);
    out.rules_of[t].insert(render_rule(r.rule));
    out.subgraphs_of[t].insert(r.subgraph);
  }
  out.known_facts = dropped.size();
  return out;
}

struct PosNeg {
  std::set<LabeledTriple> positive;
  std::set<LabeledTriple> negative;
};

inline PosNeg split_pos_neg(const std::set<LabeledTriple>& predicted, const std::set<LabeledTriple>& test) {
  PosNeg out;
  for (const auto& t : predicted) (test.contains(t) ? out.positive : out.negative).insert(t);
  return out;
}

struct Metrics {
  double jprecision = 0.0;
  double st_recall = 0.0;
  double f_tsp = 0.0;
};

inline double harmonic_mean(double a, double b) { return a + b == 0.0 ? 0.0 : 2.0 * a * b / (a + b); }

inline Metrics compute_metrics(std::size_t n_positive, std::size_t n_predict, std::size_t n_test) {
  if (n_test == 0) throw Error("compute_metrics: empty test set");
  if (n_positive > n_predict || n_positive > n_test) {
    throw Error("compute_metrics: |T+|=" + std::to_string(n_positive) + " exceeds |T_predict|=" +
                std::to_string(n_predict) + " or |T_test|=" + std::to_string(n_test));
  }
  Metrics m;
  m.jprecision = n_predict ? static_cast<double>(n_positive) / static_cast<double>(n_predict) : 0.0;
  m.st_recall = std::sqrt(static_cast<double>(n_positive) / static_cast<double>(n_test));
  m.f_tsp = harmonic_mean(m.jprecision, m.st_recall);
  return m;
}

struct EvalSlice {
  std::size_t n_predict = 0;
  std::size_t n_positive = 0;
  Metrics metrics;
};

struct EvalReport {
  std::size_t n_predict = 0;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
  std::size_t n_test = 0;
  Metrics metrics;
  std::size_t records = 0;
  std::size_t folded = 0;
  std::size_t duplicates = 0;
  std::size_t known_facts = 0;
  std::map<std::string, EvalSlice> by_rule;
  std::map<std::size_t, EvalSlice> by_subgraph;
};

// Test triples are folded too, so an inverse-stated test file still matches.
inline std::set<LabeledTriple> canonical_test_set(const TripleStore& test) {
  std::set<LabeledTriple> out;
  for (const auto& t : test.triples()) out.insert(fold_inverse(test.labeled(t)));
  return out;
}

inline EvalReport evaluate(const std::vector<PredictionRecord>& records, const TripleStore* known,
                           const std::set<LabeledTriple>& test) {
  auto canon = canonicalize_predictions(records, known);
  auto split = split_pos_neg(canon.triples, test);
  EvalReport r;
  r.n_predict = canon.triples.size();
  r.n_positive = split.positive.size();
  r.n_negative = split.negative.size();
  r.n_test = test.size();
  r.metrics = compute_metrics(r.n_positive, r.n_predict, r.n_test);
  r.records = canon.records;
  r.folded = canon.folded;
  r.duplicates = canon.duplicates;
  r.known_facts = canon.known_facts;

  for (const auto& t : canon.triples) {
    const bool pos = split.positive.contains(t);
    for (const auto& rule : canon.rules_of[t]) {
      ++r.by_rule[rule].n_predict;
      r.by_rule[rule].n_positive += pos;
    }
    for (auto sub : canon.subgraphs_of[t]) {
      ++r.by_subgraph[sub].n_predict;
      r.by_subgraph[sub].n_positive += pos;
    }
  }
  for (auto& [_, s] : r.by_rule) s.metrics = compute_metrics(s.n_positive, s.n_predict, r.n_test);
  for (auto& [_, s] : r.by_subgraph) s.metrics = compute_metrics(s.n_positive, s.n_predict, r.n_test);
  return r;
}

inline void write_report(std::ostream& out, const EvalReport& r) {
  out << "[evaluation]\n";
  out << "records: " << r.records << '\n';
  out << "inverse_folded: " << r.folded << '\n';
  out << "duplicates: " << r.duplicates << '\n';
  out << "known_facts_removed: " << r.known_facts << '\n';
  out << "n_predict: " << r.n_predict << '\n';
  out << "n_positive: " << r.n_positive << '\n';
  out << "n_negative: " << r.n_negative << '\n';
  out << "n_test: " << r.n_test << '\n';
  out << "jprecision: " << format_ratio(r.metrics.jprecision) << '\n';
  out << "st_recall: " << format_ratio(r.metrics.st_recall) << '\n';
  out << "f_tsp: " << format_ratio(r.metrics.f_tsp) << '\n';
  for (const auto& [rule, s] : r.by_rule) {
    out << "rule " << rule << " | n_predict=" << s.n_predict << " n_positive=" << s.n_positive
        << " jprecision=" << format_ratio(s.metrics.jprecision) << " st_recall=" << format_ratio(s.metrics.st_recall)
        << '\n';
  }
  for (const auto& [sub, s] : r.by_subgraph) {
    out << "subgraph " << sub << " | n_predict=" << s.n_predict << " n_positive=" << s.n_positive
        << " jprecision=" << format_ratio(s.metrics.jprecision) << " st_recall=" << format_ratio(s.metrics.st_recall)
        << '\n';
  }
}

namespace detail {

inline nlohmann::json slice_json(const EvalSlice& s) {
  return {{"n_predict", s.n_predict},
          {"n_positive", s.n_positive},
          {"jprecision", s.metrics.jprecision},
          {"st_recall", s.metrics.st_recall},
          {"f_tsp", s.metrics.f_tsp}};
}

}  // namespace detail

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j{{"records", r.records},       {"inverse_folded", r.folded},    {"duplicates", r.duplicates},
                   {"known_facts_removed", r.known_facts}, {"n_predict", r.n_predict}, {"n_positive", r.n_positive},
                   {"n_negative", r.n_negative}, {"n_test", r.n_test},            {"jprecision", r.metrics.jprecision},
                   {"st_recall", r.metrics.st_recall}, {"f_tsp", r.metrics.f_tsp}};
  j["by_rule"] = nlohmann::json::object();
  for (const auto& [rule, s] : r.by_rule) j["by_rule"][rule] = detail::slice_json(s);
  j["by_subgraph"] = nlohmann::json::object();
  for (const auto& [sub, s] : r.by_subgraph) j["by_subgraph"][std::to_string(sub)] = detail::slice_json(s);
  return j;
}

// Mean and sample standard deviation (n - 1) over repeated runs.
struct Spread {
  double mean = 0.0;
  std::optional<double> sd;  // needs at least two runs
};

inline Spread spread(const std::vector<double>& xs) {
  Spread s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

struct RunAggregate {
  std::size_t runs = 0;
  Spread n_predict, n_positive, jprecision, st_recall, f_tsp;
};

inline RunAggregate aggregate_runs(const std::vector<EvalReport>& reports) {
  std::vector<double> np, pos, jp, st, f;
  for (const auto& r : reports) {
    np.push_back(static_cast<double>(r.n_predict));
    pos.push_back(static_cast<double>(r.n_positive));
    jp.push_back(r.metrics.jprecision);
    st.push_back(r.metrics.st_recall);
    f.push_back(r.metrics.f_tsp);
  }
  return {reports.size(), spread(np), spread(pos), spread(jp), spread(st), spread(f)};
}

namespace detail {

inline std::string show(const Spread& s, int digits) {
  return format_ratio(s.mean, digits) + " +- " + (s.sd ? format_ratio(*s.sd, digits) : std::string("n/a"));
}

}  // namespace detail

inline void write_aggregate(std::ostream& out, const RunAggregate& a) {
  out << "[aggregate]\n";
  out << "runs: " << a.runs << '\n';
  out << "n_predict: " << detail::show(a.n_predict, 1) << '\n';
  out << "n_positive: " << detail::show(a.n_positive, 1) << '\n';
  out << "jprecision: " << detail::show(a.jprecision, 4) << '\n';
  out << "st_recall: " << detail::show(a.st_recall, 4) << '\n';
  out << "f_tsp: " << detail::show(a.f_tsp, 4) << '\n';
}

inline nlohmann::json to_json(const RunAggregate& a) {
  auto sj = [](const Spread& s) {
    return nlohmann::json{{"mean", s.mean}, {"sd", s.sd ? nlohmann::json(*s.sd) : nlohmann::json(nullptr)}};
  };
  return {{"runs", a.runs},
          {"n_predict", sj(a.n_predict)},
          {"n_positive", sj(a.n_positive)},
          {"jprecision", sj(a.jprecision)},
          {"st_recall", sj(a.st_recall)},
          {"f_tsp", sj(a.f_tsp)}};
}

}  // namespace tsp
