// tsp: rule mining, subgraph partitioning, rule-guided triple set prediction,
// hallucination audit and evaluation, one subcommand per stage.

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tsp/pipeline.hpp"

namespace {

struct Shared {
  std::string config;
  std::map<std::string, std::string> values;
  bool dump_prompts = false;
  bool verbose = false;
  bool no_inverses = false;
  std::vector<std::string> predictions;
};

// flag -> config key
const std::vector<std::pair<std::string, std::string>> kValueFlags = {
    {"--train", "train"},
    {"--test", "test"},
    {"--graph", "graph"},
    {"--hops", "hops"},
    {"--min-group", "min_group"},
    {"--max-group", "max_group"},
    {"--seed", "seed"},
    {"--alpha-conf", "alpha_conf"},
    {"--alpha-hc", "alpha_hc"},
    {"--min-rule-length", "min_rule_length"},
    {"--max-rule-length", "max_rule_length"},
    {"--predictor", "predictor"},
    {"--out", "out"},
    {"--rules", "rules"},
    {"--backend", "backend"},
    {"--endpoint", "endpoint"},
    {"--model", "model"},
    {"--temperature", "temperature"},
    {"--max-tokens", "max_tokens"},
    {"--timeout-ms", "timeout_ms"},
    {"--max-retries", "max_retries"},
    {"--backoff-ms", "backoff_ms"},
    {"--fixtures", "fixtures"},
    {"--record", "record"},
    {"--api-key-env", "api_key_env"},
    {"--max-in-flight", "max_in_flight"},
    {"--rps", "requests_per_second"},
    {"--runs", "runs"},
};

void add_common(CLI::App* cmd, Shared& s) {
  cmd->add_option("--config", s.config, "key = value configuration file; flags override it");
  for (const auto& [flag, key] : kValueFlags) cmd->add_option(flag, s.values[key], "sets `" + key + "`");
  cmd->add_flag("--dump-prompts", s.dump_prompts, "write every prompt to <out>/prompts/<fingerprint>.txt");
  cmd->add_flag("--verbose", s.verbose, "log backend traffic (credentials redacted)");
  cmd->add_flag("--no-inverses", s.no_inverses, "do not add inv_ relations to the graph");
}

tsp::PipelineConfig resolve(CLI::App* cmd, const Shared& s) {
  tsp::PipelineConfig c;
  if (!s.config.empty()) c = tsp::load_config(s.config, c);
  for (const auto& [flag, key] : kValueFlags)
    if (cmd->count(flag) > 0) tsp::apply_setting(c, key, s.values.at(key));
  if (s.dump_prompts) c.dump_prompts = true;
  if (s.verbose) c.backend.verbose = true;
  if (s.no_inverses) c.augment_inverses = false;
  return c;
}

void print(const tsp::MineSummary& m) {
  std::cout << "heads: " << m.heads << "\ncandidates: " << m.candidates << "\nrejects: " << m.rejects
            << "\nkept: " << m.kept << '\n';
}

void print(const tsp::PredictSummary& p) {
  std::cout << "subgraphs: " << p.subgraphs << "\nrules: " << p.rules << "\ntasks: " << p.tasks
            << "\nskipped_empty_context: " << p.skipped_empty << "\nfailures: " << p.failures
            << "\nrecords: " << p.records << '\n';
}

void print(const tsp::EvaluateResult& r) {
  for (const auto& e : r.runs) {
    std::cout << "n_predict=" << e.n_predict << " n_positive=" << e.n_positive << " n_test=" << e.n_test
              << " jprecision=" << tsp::format_ratio(e.metrics.jprecision)
              << " st_recall=" << tsp::format_ratio(e.metrics.st_recall) << " f_tsp=" << tsp::format_ratio(e.metrics.f_tsp)
              << '\n';
  }
  for (const auto& h : r.hallucination) {
    std::cout << "nonexistent_premise_rate: " << h.totals.nonexistent_premise_rate().str()
              << "\nrule_noncompliant_rate: " << h.totals.rule_noncompliant_rate().str() << '\n';
  }
  if (r.aggregate) tsp::write_aggregate(std::cout, *r.aggregate);
}

std::vector<tsp::fs::path> prediction_files(const tsp::PipelineConfig& c, const Shared& s) {
  std::vector<tsp::fs::path> out(s.predictions.begin(), s.predictions.end());
  if (out.empty()) {
    if (c.runs == 1) {
      out.push_back(c.out / "predictions.jsonl");
    } else {
      for (std::size_t i = 1; i <= c.runs; ++i) out.push_back(c.out / ("run" + std::to_string(i)) / "predictions.jsonl");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rule-guided triple set prediction over a knowledge graph"};
  app.require_subcommand(1);
  Shared s;

  auto* mine = app.add_subcommand("mine-rules", "ask the backend for rules per head relation, score and filter them");
  auto* score = app.add_subcommand("score-rules", "score a rules file (support, head coverage, confidence)");
  auto* part = app.add_subcommand("partition", "split the graph into entity groups and write the manifest");
  auto* predict = app.add_subcommand("predict", "apply rules per subgraph with the oracle or the backend");
  auto* audit = app.add_subcommand("audit", "hallucination audit of a predictions file");
  auto* evaluate = app.add_subcommand("evaluate", "score predictions against the test set, with audit");
  auto* pipeline = app.add_subcommand("pipeline", "mine-rules, partition, predict and evaluate in one go");
  for (auto* cmd : {mine, score, part, predict, audit, evaluate, pipeline}) add_common(cmd, s);
  for (auto* cmd : {audit, evaluate})
    cmd->add_option("--predictions", s.predictions, "predictions file(s); several files are aggregated as runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (mine->parsed()) {
      print(tsp::cmd_mine_rules(resolve(mine, s)));
    } else if (score->parsed()) {
      auto c = resolve(score, s);
      tsp::write_rules(std::cout, tsp::cmd_score_rules(c));
    } else if (part->parsed()) {
      auto c = resolve(part, s);
      auto p = tsp::cmd_partition(c);
      std::cout << "groups: " << p.groups.size() << "\nmulti_homed: " << p.stats.multi_homed
                << "\ntriple_loss: " << p.stats.triple_loss << '\n';
    } else if (predict->parsed()) {
      print(tsp::cmd_predict(resolve(predict, s)));
    } else if (audit->parsed()) {
      auto c = resolve(audit, s);
      auto files = prediction_files(c, s);
      if (files.size() != 1) throw tsp::Error("audit takes one predictions file");
      tsp::write_report(std::cout, tsp::cmd_audit(c, files.front(), c.out));
    } else if (evaluate->parsed()) {
      auto c = resolve(evaluate, s);
      print(tsp::cmd_evaluate(c, prediction_files(c, s), c.out));
    } else if (pipeline->parsed()) {
      auto r = tsp::cmd_pipeline(resolve(pipeline, s));
      if (r.mined) print(*r.mined);
      for (const auto& p : r.predicted) print(p);
      print(r.evaluated);
    }
  } catch (const std::exception& e) {
    std::cerr << "tsp: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
