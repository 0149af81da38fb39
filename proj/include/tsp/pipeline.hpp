#pragma once
// Stage commands: mine-rules, score-rules, partition, predict, audit,
// evaluate, and the composed pipeline. Every stage reads and writes plain
// files under the output directory so stages can be mixed and re-run.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsp/auditor.hpp"
#include "tsp/error.hpp"
#include "tsp/evaluator.hpp"
#include "tsp/kg_store.hpp"
#include "tsp/llm/backend.hpp"
#include "tsp/llm/httplib_transport.hpp"
#include "tsp/llm/prompt.hpp"
#include "tsp/llm/response_parser.hpp"
#include "tsp/partitioner.hpp"
#include "tsp/rule.hpp"
#include "tsp/rule_engine.hpp"

namespace tsp {

namespace fs = std::filesystem;

enum class PredictorKind { Oracle, Llm };

inline PredictorKind parse_predictor(std::string_view s) {
  if (s == "oracle") return PredictorKind::Oracle;
  if (s == "llm") return PredictorKind::Llm;
  throw Error("unknown predictor '" + std::string(s) + "' (expected oracle or llm)");
}

struct PipelineConfig {
  fs::path train;
  fs::path test;
  bool augment_inverses = true;
  bool include_test_in_graph = false;  // score on train + test ("full" graph)
  PartitionConfig partition;
  double alpha_conf = 0.45;
  double alpha_hc = 0.05;
  std::size_t min_rule_length = kMinRuleLength;
  std::size_t max_rule_length = kMaxRuleLength;
  BackendConfig backend;
  PredictorKind predictor = PredictorKind::Oracle;
  fs::path out = "out";
  fs::path rules;  // empty: mined by the pipeline
  bool dump_prompts = false;
  std::size_t runs = 1;

  void validate() const {
    partition.validate();
    if (min_rule_length < kMinRuleLength || max_rule_length > kMaxRuleLength || min_rule_length > max_rule_length) {
      throw Error("rule length bounds must satisfy 2 <= min <= max <= 3");
    }
    if (runs == 0) throw Error("runs must be >= 1");
  }
};

namespace detail {

inline std::string strip(std::string_view s) {
  auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b + 1 - a));
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw Error("config: bad value '" + v + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("config: bad boolean '" + v + "' for " + key);
}

}  // namespace detail

// Applies one `key = value` setting. Relative paths resolve against `base`.
inline void apply_setting(PipelineConfig& c, const std::string& key, const std::string& value, const fs::path& base = {}) {
  auto path = [&] { return fs::path(value).is_absolute() || base.empty() ? fs::path(value) : base / value; };
  if (key == "train") c.train = path();
  else if (key == "test") c.test = path();
  else if (key == "augment_inverses") c.augment_inverses = detail::parse_bool(key, value);
  else if (key == "graph") {
    if (value != "train" && value != "full") throw Error("config: graph must be train or full");
    c.include_test_in_graph = value == "full";
  }
  else if (key == "hops") c.partition.hops = detail::parse_number<unsigned>(key, value);
  else if (key == "min_group") c.partition.min_group = detail::parse_number<std::size_t>(key, value);
  else if (key == "max_group") c.partition.max_group = detail::parse_number<std::size_t>(key, value);
  else if (key == "seed") c.partition.seed = detail::parse_number<std::uint64_t>(key, value);
  else if (key == "alpha_conf") c.alpha_conf = detail::parse_number<double>(key, value);
  else if (key == "alpha_hc") c.alpha_hc = detail::parse_number<double>(key, value);
  else if (key == "min_rule_length") c.min_rule_length = detail::parse_number<std::size_t>(key, value);
  else if (key == "max_rule_length") c.max_rule_length = detail::parse_number<std::size_t>(key, value);
  else if (key == "predictor") c.predictor = parse_predictor(value);
  else if (key == "out") c.out = path();
  else if (key == "rules") c.rules = path();
  else if (key == "dump_prompts") c.dump_prompts = detail::parse_bool(key, value);
  else if (key == "runs") c.runs = detail::parse_number<std::size_t>(key, value);
  else if (key == "backend") c.backend.mode = parse_backend_mode(value);
  else if (key == "endpoint") c.backend.endpoint = value;
  else if (key == "model") c.backend.model = value;
  else if (key == "temperature") c.backend.temperature = detail::parse_number<double>(key, value);
  else if (key == "max_tokens") c.backend.max_tokens = detail::parse_number<int>(key, value);
  else if (key == "timeout_ms") c.backend.timeout = std::chrono::milliseconds(detail::parse_number<long>(key, value));
  else if (key == "max_retries") c.backend.max_retries = detail::parse_number<int>(key, value);
  else if (key == "backoff_ms") c.backend.backoff = std::chrono::milliseconds(detail::parse_number<long>(key, value));
  else if (key == "fixtures") c.backend.fixture_dir = path();
  else if (key == "record") c.backend.record_dir = path();
  else if (key == "api_key_env") c.backend.api_key_env = value;
  else if (key == "max_in_flight") c.backend.max_in_flight = detail::parse_number<std::size_t>(key, value);
  else if (key == "requests_per_second") c.backend.requests_per_second = detail::parse_number<double>(key, value);
  else if (key == "verbose") c.backend.verbose = detail::parse_bool(key, value);
  else throw Error("config: unknown key '" + key + "'");
}

// `key = value` lines, '#' comments.
inline void read_config(std::istream& in, PipelineConfig& c, const fs::path& base = {}) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto s = detail::strip(line);
    if (s.empty() || s[0] == '#') continue;
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", n);
    try {
      apply_setting(c, detail::strip(s.substr(0, eq)), detail::strip(s.substr(eq + 1)), base);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), n);
    }
  }
}

inline PipelineConfig load_config(const fs::path& path, PipelineConfig c = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  read_config(in, c, path.parent_path());
  return c;
}

struct Dataset {
  TripleStore train;  // as loaded
  TripleStore graph;  // train (+ test) (+ inverses): what rules are scored and applied on
};

inline Dataset load_dataset(const PipelineConfig& c) {
  if (c.train.empty()) throw Error("no training graph configured (train = <path>)");
  Dataset d{load_graph(c.train), TripleStore{}};
  TripleStore base = d.train;
  if (c.include_test_in_graph) {
    if (c.test.empty()) throw Error("graph = full needs a test path");
    TripleStore test = load_graph(c.test);
    for (const auto& t : test.triples()) {
      auto l = test.labeled(t);
      base.insert(l.head, l.relation, l.tail);
    }
  }
  d.graph = c.augment_inverses ? add_inverses(base) : base;
  return d;
}

inline std::vector<std::string> relation_labels(const TripleStore& g) {
  std::vector<std::string> out;
  for (auto r : g.relations()) out.push_back(g.label(r));
  std::sort(out.begin(), out.end());
  return out;
}

namespace detail {

inline void ensure_dir(const fs::path& p) {
  if (!p.empty()) fs::create_directories(p);
}

inline std::ofstream open_out(const fs::path& p) {
  ensure_dir(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

template <class F>
void write_file(const fs::path& p, F&& fill) {
  auto out = open_out(p);
  fill(static_cast<std::ostream&>(out));
}

inline std::vector<Rule> load_rules(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open rules file " + p.string());
  try {
    return read_rules(in);
  } catch (const ParseError& e) {
    throw Error(p.string() + ": " + e.what());
  }
}

}  // namespace detail

// ---- predictions file -------------------------------------------------------

inline nlohmann::json to_json(const PredictionRecord& r) {
  auto triple = [](const LabeledTriple& t) { return nlohmann::json::array({t.head, t.relation, t.tail}); };
  nlohmann::json premises = nlohmann::json::array();
  for (const auto& p : r.premises) premises.push_back(triple(p));
  return {{"subgraph", r.subgraph}, {"rule", render_rule(r.rule)}, {"predicted", triple(r.predicted)},
          {"premises", premises},   {"mode", r.mode},                {"provenance", r.provenance},
          {"span", {r.span_begin, r.span_end}}};
}

inline PredictionRecord prediction_from_json(const nlohmann::json& j) {
  auto triple = [](const nlohmann::json& a) {
    if (!a.is_array() || a.size() != 3) throw Error("prediction triple must be a 3-element array");
    return LabeledTriple{a[0].get<std::string>(), a[1].get<std::string>(), a[2].get<std::string>()};
  };
  PredictionRecord r{triple(j.at("predicted")), {}, parse_rule(j.at("rule").get<std::string>()),
                     j.at("subgraph").get<std::size_t>(), 0, 0, j.value("mode", ""), j.value("provenance", "")};
  for (const auto& p : j.at("premises")) r.premises.push_back(triple(p));
  if (j.contains("span")) {
    r.span_begin = j["span"].at(0).get<std::size_t>();
    r.span_end = j["span"].at(1).get<std::size_t>();
  }
  return r;
}

inline void write_predictions(std::ostream& out, const std::vector<PredictionRecord>& records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<PredictionRecord> read_predictions(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open predictions file " + p.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (detail::strip(line).empty()) continue;
    try {
      out.push_back(prediction_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(p.string() + ": " + e.what(), n);
    }
  }
  return out;
}

// ---- mine-rules / score-rules ----------------------------------------------

struct MineSummary {
  std::size_t heads = 0;
  std::size_t candidates = 0;  // parsed rules before scoring
  std::size_t rejects = 0;
  std::size_t kept = 0;
  std::size_t failures = 0;
};

inline MineSummary cmd_mine_rules(const PipelineConfig& c, const BackendFactory& factory = make_backend) {
  c.validate();
  auto data = load_dataset(c);
  auto relations = relation_labels(data.graph);
  std::vector<PromptDoc> prompts;
  for (const auto& head : relations) prompts.push_back(build_rule_prompt(relations, head));
  if (c.dump_prompts)
    for (const auto& p : prompts) detail::open_out(c.out / "prompts" / (p.fingerprint + ".txt")) << p.rendered;

  auto backend = factory(c.backend);
  auto completions = complete_all(*backend, prompts, c.backend.max_in_flight);

  MineSummary s;
  s.heads = relations.size();
  std::vector<Rule> mined;
  auto rejects = detail::open_out(c.out / "rules_rejects.txt");
  std::vector<std::string> failures;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (!completions[i].ok()) {
      failures.push_back(relations[i] + ": " + completions[i].error);
      continue;
    }
    auto m = parse_mined_rules(completions[i].text);
    for (auto& r : m.rules) {
      if (r.length() < c.min_rule_length || r.length() > c.max_rule_length) {
        rejects << relations[i] << '\t' << render_rule(r) << "\trule length outside configured bounds\n";
        ++s.rejects;
        continue;
      }
      mined.push_back(std::move(r));
    }
    for (const auto& rj : m.rejects) {
      rejects << relations[i] << '\t' << rj.text << "\tline " << rj.line << ": " << rj.reason << '\n';
      ++s.rejects;
    }
  }
  s.candidates = mined.size();

  auto scored = score_rules(mined, data.graph);
  detail::write_file(c.out / "rules_scored.txt", [&](std::ostream& o) { write_rules(o, scored); });
  auto kept = filter_rules(mined, c.alpha_conf, c.alpha_hc, data.graph);
  detail::write_file(c.out / "rules.txt", [&](std::ostream& o) { write_rules(o, kept); });
  s.kept = kept.size();
  s.failures = failures.size();
  if (!failures.empty()) {
    auto f = detail::open_out(c.out / "rules_failures.txt");
    for (const auto& line : failures) f << line << '\n';
    throw BackendError(std::to_string(failures.size()) + " rule-mining request(s) failed; partial results in " +
                       (c.out / "rules.txt").string());
  }
  return s;
}

// Scores a rules file; writes every rule and the thresholded subset.
inline std::vector<ScoredRule> cmd_score_rules(const PipelineConfig& c) {
  c.validate();
  if (c.rules.empty()) throw Error("score-rules needs --rules");
  auto data = load_dataset(c);
  auto rules = detail::load_rules(c.rules);
  auto scored = score_rules(rules, data.graph);
  detail::write_file(c.out / "rules_scored.txt", [&](std::ostream& o) { write_rules(o, scored); });
  detail::write_file(c.out / "rules_filtered.txt", [&](std::ostream& o) { write_rules(o, filter_rules(rules, c.alpha_conf, c.alpha_hc, data.graph)); });
  return scored;
}

// ---- partition --------------------------------------------------------------

inline Partition cmd_partition(const PipelineConfig& c) {
  c.validate();
  auto data = load_dataset(c);
  auto p = partition(data.graph, c.partition);
  detail::write_file(c.out / "partition.txt", [&](std::ostream& o) { write_manifest(o, data.graph, p); });
  return p;
}

inline std::vector<Subgraph> build_subgraphs(const TripleStore& graph, const Partition& p) {
  std::vector<Subgraph> out;
  for (std::size_t i = 0; i < p.groups.size(); ++i) out.push_back(build_subgraph(graph, p.groups[i], i));
  return out;
}

// ---- predict ------------------------------------------------------------------

struct PredictSummary {
  std::size_t subgraphs = 0;
  std::size_t rules = 0;
  std::size_t tasks = 0;
  std::size_t skipped_empty = 0;  // no rule-related triples in the subgraph
  std::size_t failures = 0;
  std::size_t records = 0;
};

inline PredictSummary cmd_predict(const PipelineConfig& c, const fs::path& out_dir,
                                  const BackendFactory& factory = make_backend) {
  c.validate();
  if (c.rules.empty()) throw Error("predict needs --rules");
  auto rules = detail::load_rules(c.rules);
  auto data = load_dataset(c);
  auto part = partition(data.graph, c.partition);
  detail::write_file(out_dir / "partition.txt", [&](std::ostream& o) { write_manifest(o, data.graph, part); });
  auto subgraphs = build_subgraphs(data.graph, part);

  PredictSummary s;
  s.subgraphs = subgraphs.size();
  s.rules = rules.size();

  struct Task {
    std::size_t subgraph;
    const Rule* rule;
    std::optional<PromptDoc> prompt;
  };
  std::vector<Task> tasks;
  for (const auto& sub : subgraphs)
    for (const auto& rule : rules) {
      ++s.tasks;
      Task t{sub.id, &rule, std::nullopt};
      if (c.predictor == PredictorKind::Llm) {
        std::vector<LabeledTriple> context;
        for (const auto& tr : rule_related_triples(sub, rule)) context.push_back(sub.graph.labeled(tr));
        if (context.empty()) {
          ++s.skipped_empty;
          continue;
        }
        t.prompt = build_tsp_prompt(rule, explain_rule(rule), context);
      }
      tasks.push_back(std::move(t));
    }

  std::vector<PredictionRecord> records;
  auto failures = detail::open_out(out_dir / "predict_failures.txt");
  if (c.predictor == PredictorKind::Oracle) {
    for (const auto& t : tasks)
      for (auto& e : entail(subgraphs[t.subgraph].graph, *t.rule)) {
        records.push_back({std::move(e.predicted), std::move(e.premises), *t.rule, t.subgraph, 0, 0, "oracle", "oracle"});
      }
  } else {
    std::vector<PromptDoc> prompts;
    for (const auto& t : tasks) prompts.push_back(*t.prompt);
    if (c.dump_prompts) {
      auto index = detail::open_out(out_dir / "prompts" / "index.tsv");
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        index << tasks[i].subgraph << '\t' << render_rule(*tasks[i].rule) << '\t' << prompts[i].fingerprint << '\n';
        detail::open_out(out_dir / "prompts" / (prompts[i].fingerprint + ".txt")) << prompts[i].rendered;
      }
    }
    auto backend = factory(c.backend);
    const std::string tag = backend->describe();
    auto completions = complete_all(*backend, prompts, c.backend.max_in_flight);
    const auto known = relation_labels(data.graph);
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (!completions[i].ok()) {
        ++s.failures;
        failures << tasks[i].subgraph << '\t' << render_rule(*tasks[i].rule) << '\t' << prompts[i].fingerprint << '\t'
                 << completions[i].error << '\n';
        continue;
      }
      for (auto& r : parse_predictions(completions[i].text, *tasks[i].rule, tasks[i].subgraph, &known)) {
        r.provenance = tag + ":" + prompts[i].fingerprint;
        records.push_back(std::move(r));
      }
    }
  }
  s.records = records.size();
  detail::write_file(out_dir / "predictions.jsonl", [&](std::ostream& o) { write_predictions(o, records); });

  auto summary = detail::open_out(out_dir / "predict_summary.txt");
  summary << "predictor: " << (c.predictor == PredictorKind::Oracle ? "oracle" : "llm") << '\n'
          << "subgraphs: " << s.subgraphs << '\n'
          << "rules: " << s.rules << '\n'
          << "tasks: " << s.tasks << '\n'
          << "skipped_empty_context: " << s.skipped_empty << '\n'
          << "failures: " << s.failures << '\n'
          << "records: " << s.records << '\n';
  return s;
}

inline PredictSummary cmd_predict(const PipelineConfig& c, const BackendFactory& factory = make_backend) {
  return cmd_predict(c, c.out, factory);
}

// ---- audit / evaluate -----------------------------------------------------------

// Rebuilds the subgraphs from the same partition configuration and audits
// every record against the subgraph it names.
inline HallucinationReport audit_predictions(const TripleStore& graph, const PartitionConfig& pc,
                                             const std::vector<PredictionRecord>& records,
                                             std::vector<AuditRecord>* audits_out = nullptr) {
  auto subgraphs = build_subgraphs(graph, partition(graph, pc));
  std::map<std::pair<std::size_t, std::string>, std::set<std::pair<std::string, std::string>>> pairs;
  std::vector<AuditRecord> audits;
  for (const auto& r : records) {
    if (r.subgraph >= subgraphs.size()) {
      throw Error("prediction names subgraph " + std::to_string(r.subgraph) + " but the partition has " +
                  std::to_string(subgraphs.size()));
    }
    const auto& g = subgraphs[r.subgraph].graph;
    auto key = std::make_pair(r.subgraph, render_rule(r.rule));
    auto it = pairs.find(key);
    if (it == pairs.end()) it = pairs.emplace(key, grounded_pairs(g, r.rule)).first;
    audits.push_back(audit(g, r.rule, r, it->second));
  }
  auto report = summarize(audits);
  if (audits_out) *audits_out = std::move(audits);
  return report;
}

inline void write_audits(std::ostream& out, const std::vector<AuditRecord>& audits) {
  for (const auto& a : audits) {
    nlohmann::json j = to_json(a.prediction);
    j["premise_flags"] = a.premise_flags;
    j["entities_known"] = a.entities_known;
    j["head_matches_rule"] = a.head_matches_rule;
    j["premise_chain_valid"] = a.premise_chain_valid;
    j["entailed_by_subgraph"] = a.entailed_by_subgraph;
    j["already_in_subgraph"] = a.already_in_subgraph;
    out << j.dump() << '\n';
  }
}

inline HallucinationReport cmd_audit(const PipelineConfig& c, const fs::path& predictions, const fs::path& out_dir) {
  c.validate();
  auto data = load_dataset(c);
  std::vector<AuditRecord> audits;
  auto report = audit_predictions(data.graph, c.partition, read_predictions(predictions), &audits);
  detail::write_file(out_dir / "hallucination.txt", [&](std::ostream& o) { write_report(o, report); });
  detail::open_out(out_dir / "hallucination.json") << to_json(report).dump(2) << '\n';
  detail::write_file(out_dir / "audits.jsonl", [&](std::ostream& o) { write_audits(o, audits); });
  return report;
}

struct EvaluateResult {
  std::vector<EvalReport> runs;
  std::vector<HallucinationReport> hallucination;
  std::optional<RunAggregate> aggregate;  // more than one run
};

// One EvalReport and HallucinationReport per predictions file; with several
// files also the mean +- sample sd.
inline EvaluateResult cmd_evaluate(const PipelineConfig& c, const std::vector<fs::path>& predictions,
                                   const fs::path& out_dir) {
  c.validate();
  if (c.test.empty()) throw Error("evaluate needs a test set (test = <path>)");
  if (!fs::exists(c.test)) throw Error("test file not found: " + c.test.string());
  if (predictions.empty()) throw Error("evaluate needs at least one predictions file");
  auto data = load_dataset(c);
  const auto test = canonical_test_set(load_graph(c.test));

  EvaluateResult res;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const fs::path dir = predictions.size() == 1 ? out_dir : out_dir / ("run" + std::to_string(i + 1));
    auto records = read_predictions(predictions[i]);
    auto report = evaluate(records, &data.graph, test);
    detail::write_file(dir / "eval.txt", [&](std::ostream& o) { write_report(o, report); });
    detail::open_out(dir / "eval.json") << to_json(report).dump(2) << '\n';

    std::vector<AuditRecord> audits;
    auto hall = audit_predictions(data.graph, c.partition, records, &audits);
    detail::write_file(dir / "hallucination.txt", [&](std::ostream& o) { write_report(o, hall); });
    detail::open_out(dir / "hallucination.json") << to_json(hall).dump(2) << '\n';
    detail::write_file(dir / "audits.jsonl", [&](std::ostream& o) { write_audits(o, audits); });

    res.runs.push_back(std::move(report));
    res.hallucination.push_back(std::move(hall));
  }
  if (res.runs.size() > 1) {
    res.aggregate = aggregate_runs(res.runs);
    detail::write_file(out_dir / "eval_aggregate.txt", [&](std::ostream& o) { write_aggregate(o, *res.aggregate); });
    detail::open_out(out_dir / "eval_aggregate.json") << to_json(*res.aggregate).dump(2) << '\n';
  }
  return res;
}

// ---- pipeline -----------------------------------------------------------------

struct PipelineResult {
  std::optional<MineSummary> mined;
  std::vector<PredictSummary> predicted;
  EvaluateResult evaluated;
};

// mine-rules (unless a rules file is configured) -> partition -> predict
// (once per run) -> evaluate + audit.
inline PipelineResult cmd_pipeline(PipelineConfig c, const BackendFactory& factory = make_backend) {
  c.validate();
  PipelineResult res;
  if (c.rules.empty()) {
    res.mined = cmd_mine_rules(c, factory);
    c.rules = c.out / "rules.txt";
  }
  cmd_partition(c);
  std::vector<fs::path> files;
  for (std::size_t run = 1; run <= c.runs; ++run) {
    const fs::path dir = c.runs == 1 ? c.out : c.out / ("run" + std::to_string(run));
    res.predicted.push_back(cmd_predict(c, dir, factory));
    files.push_back(dir / "predictions.jsonl");
  }
  res.evaluated = cmd_evaluate(c, files, c.out);
  return res;
}

}  // namespace tsp
