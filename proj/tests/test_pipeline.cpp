#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "support/golden.hpp"
#include "tsp/pipeline.hpp"

using namespace tsp;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / ("tsp_pipeline_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& s) const { return path / s; }
};

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const char* kFive =
    "b\tbrotherOf\tf\n"
    "f\tfatherOf\tc\n"
    "b\tuncleOf\tc\n"
    "b2\tbrotherOf\tf2\n"
    "f2\tfatherOf\tc2\n";

const char* kUncleRule = "uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)\n";

PipelineConfig five_config(const TempDir& d) {
  write(d / "train.txt", kFive);
  write(d / "test.txt", "b2\tuncleOf\tc2\n");
  write(d / "rules.txt", kUncleRule);
  PipelineConfig c;
  c.train = d / "train.txt";
  c.test = d / "test.txt";
  c.rules = d / "rules.txt";
  c.out = d / "out";
  c.partition.min_group = 1;
  c.partition.max_group = 100;
  return c;
}

}  // namespace

TEST_CASE("config defaults and key = value overrides") {
  PipelineConfig c;
  CHECK(c.alpha_conf == 0.45);
  CHECK(c.alpha_hc == 0.05);
  CHECK(c.predictor == PredictorKind::Oracle);
  CHECK(c.augment_inverses);

  std::istringstream in(
      "# comment\n"
      "train = data/train.txt\n"
      "alpha_conf = 0.6\n"
      "backend = stub\n"
      "predictor = llm\n"
      "max_group = 40\n"
      "fixtures = fx\n"
      "graph = full\n");
  read_config(in, c, "/base");
  CHECK(c.train == fs::path("/base/data/train.txt"));
  CHECK(c.backend.fixture_dir == fs::path("/base/fx"));
  CHECK(c.alpha_conf == 0.6);
  CHECK(c.backend.mode == BackendMode::Stub);
  CHECK(c.predictor == PredictorKind::Llm);
  CHECK(c.partition.max_group == 40);
  CHECK(c.include_test_in_graph);

  apply_setting(c, "alpha_conf", "0.7");
  CHECK(c.alpha_conf == 0.7);
  apply_setting(c, "train", "/abs/t.txt", "/base");
  CHECK(c.train == fs::path("/abs/t.txt"));
}

TEST_CASE("config errors name the line") {
  PipelineConfig c;
  std::istringstream unknown("seed = 1\nbogus = 2\n");
  REQUIRE_THROWS_AS(read_config(unknown, c), ParseError);
  std::istringstream again("seed = 1\nbogus = 2\n");
  try {
    read_config(again, c);
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
  std::istringstream bad_number("hops = two\n");
  CHECK_THROWS_AS(read_config(bad_number, c), ParseError);
  std::istringstream no_eq("hops 2\n");
  CHECK_THROWS_AS(read_config(no_eq, c), ParseError);
  CHECK_THROWS_AS(parse_predictor("gpt"), Error);

  PipelineConfig bounds;
  bounds.min_rule_length = 3;
  bounds.max_rule_length = 2;
  CHECK_THROWS_AS(bounds.validate(), Error);
}

TEST_CASE("prediction records survive the jsonl round trip") {
  PredictionRecord r{{"e1", "uncleOf", "e3"},
                     {{"e1", "brotherOf", "e2"}, {"e2", "fatherOf", "e3"}},
                     parse_rule(kUncleRule),
                     4,
                     10,
                     57,
                     "structured",
                     "replay:0123456789abcdef"};
  std::ostringstream out;
  write_predictions(out, {r, r});
  TempDir d("jsonl");
  write(d / "p.jsonl", out.str());
  auto back = read_predictions(d / "p.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].predicted == r.predicted);
  CHECK(back[0].premises == r.premises);
  CHECK(back[0].rule == r.rule);
  CHECK(back[0].subgraph == 4);
  CHECK(back[0].span_begin == 10);
  CHECK(back[0].span_end == 57);
  CHECK(back[0].mode == "structured");
  CHECK(back[0].provenance == r.provenance);

  std::ostringstream again;
  write_predictions(again, back);
  CHECK(again.str() == out.str());

  write(d / "bad.jsonl", "{\"subgraph\": 0}\n");
  CHECK_THROWS_AS(read_predictions(d / "bad.jsonl"), ParseError);
  CHECK_THROWS_AS(read_predictions(d / "missing.jsonl"), Error);
}

TEST_CASE("oracle predict on the five-triple graph") {
  TempDir d("oracle");
  auto c = five_config(d);
  auto s = cmd_predict(c);
  CHECK(s.rules == 1);
  CHECK(s.failures == 0);
  auto records = read_predictions(c.out / "predictions.jsonl");
  REQUIRE(records.size() == 1);
  CHECK(records[0].predicted == LabeledTriple{"b2", "uncleOf", "c2"});
  CHECK(records[0].premises ==
        std::vector<LabeledTriple>{{"b2", "brotherOf", "f2"}, {"f2", "fatherOf", "c2"}});
  CHECK(records[0].mode == "oracle");

  SECTION("evaluation of that prediction") {
    auto r = cmd_evaluate(c, {c.out / "predictions.jsonl"}, c.out);
    REQUIRE(r.runs.size() == 1);
    CHECK(r.runs[0].n_positive == 1);
    CHECK(r.runs[0].metrics.f_tsp == 1.0);
    CHECK(r.hallucination[0].totals.premises_nonexistent == 0);
    CHECK(r.hallucination[0].totals.oracle_confirmed == 1);
    CHECK_FALSE(r.aggregate);
    CHECK(fs::exists(c.out / "eval.txt"));
    CHECK(fs::exists(c.out / "hallucination.json"));
  }
}

TEST_CASE("empty rules file gives an empty predictions file") {
  TempDir d("empty_rules");
  auto c = five_config(d);
  write(c.rules, "");
  auto s = cmd_predict(c);
  CHECK(s.records == 0);
  CHECK(s.failures == 0);
  CHECK(slurp(c.out / "predictions.jsonl").empty());

  auto r = cmd_evaluate(c, {c.out / "predictions.jsonl"}, c.out);
  CHECK(r.runs[0].metrics.jprecision == 0.0);
  CHECK(r.runs[0].metrics.st_recall == 0.0);
  CHECK(r.runs[0].metrics.f_tsp == 0.0);
}

TEST_CASE("predictions equal to the test set score one") {
  TempDir d("perfect");
  auto c = five_config(d);
  write(c.test, "b2\tuncleOf\tc2\nc\tsonOf\tf\nz\tsisterOf\tq\n");
  auto rule = parse_rule(kUncleRule);
  std::vector<PredictionRecord> records;
  for (auto t : {LabeledTriple{"b2", "uncleOf", "c2"}, LabeledTriple{"c", "sonOf", "f"}, LabeledTriple{"q", "inv_sisterOf", "z"}})
    records.push_back({t, {}, rule, 0, 0, 0, "fallback", {}});
  std::ostringstream out;
  write_predictions(out, records);
  write(d / "p.jsonl", out.str());
  auto r = cmd_evaluate(c, {d / "p.jsonl"}, c.out);
  CHECK(r.runs[0].metrics.jprecision == 1.0);
  CHECK(r.runs[0].metrics.st_recall == 1.0);
  CHECK(r.runs[0].metrics.f_tsp == 1.0);

  c.test = d / "nope.txt";
  CHECK_THROWS_AS(cmd_evaluate(c, {d / "p.jsonl"}, c.out), Error);
}

TEST_CASE("audit names a subgraph outside the partition") {
  TempDir d("audit_range");
  auto c = five_config(d);
  PredictionRecord r{{"b2", "uncleOf", "c2"}, {}, parse_rule(kUncleRule), 99, 0, 0, "fallback", {}};
  std::ostringstream out;
  write_predictions(out, {r});
  write(d / "p.jsonl", out.str());
  CHECK_THROWS_AS(cmd_audit(c, d / "p.jsonl", c.out), Error);
}

TEST_CASE("mine-rules with a stub backend") {
  TempDir d("mine");
  auto c = five_config(d);
  c.rules.clear();
  auto relations = relation_labels(load_dataset(c).graph);
  REQUIRE(relations.size() == 6);  // three relations and their inverses

  auto stub = std::make_shared<StubBackend>();
  for (const auto& head : relations) {
    std::string text = head == "uncleOf" ? "1. uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)\n"
                                         : head + "(X,Y) <- " + head + "(X,Z1) and " + head + "(Z1,Y)\n";
    stub->script(build_rule_prompt(relations, head).fingerprint, text);
  }
  struct Shared : CompletionBackend {
    std::shared_ptr<StubBackend> inner;
    explicit Shared(std::shared_ptr<StubBackend> s) : inner(std::move(s)) {}
    std::string complete(const PromptDoc& p) override { return inner->complete(p); }
    std::string describe() const override { return "stub"; }
  };
  BackendFactory factory = [&](const BackendConfig&) { return std::make_unique<Shared>(stub); };

  auto m = cmd_mine_rules(c, factory);
  CHECK(m.heads == 6);
  CHECK(m.candidates == 1);
  CHECK(m.rejects == 5);
  CHECK(m.kept == 1);
  CHECK(stub->calls() == 6);
  CHECK(slurp(c.out / "rules.txt") == "uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y) | support=1 hc=1.0000 conf=0.5000\n");
  const auto first = slurp(c.out / "rules.txt");

  SECTION("thresholds above one keep nothing") {
    c.alpha_conf = 1.01;
    c.alpha_hc = 1.01;
    cmd_mine_rules(c, factory);
    CHECK(slurp(c.out / "rules.txt").empty());
    CHECK_FALSE(slurp(c.out / "rules_scored.txt").empty());
  }
  SECTION("rerun is identical") {
    cmd_mine_rules(c, factory);
    CHECK(slurp(c.out / "rules.txt") == first);
  }
  SECTION("length bounds reject rules outside them") {
    c.min_rule_length = 3;
    auto m3 = cmd_mine_rules(c, factory);
    CHECK(m3.kept == 0);
    CHECK(slurp(c.out / "rules_rejects.txt").find("rule length outside configured bounds") != std::string::npos);
  }
  SECTION("a failing request aborts after writing partial results") {
    auto partial = std::make_shared<StubBackend>();
    partial->script(build_rule_prompt(relations, "uncleOf").fingerprint, "uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)\n");
    BackendFactory failing = [&](const BackendConfig&) { return std::make_unique<Shared>(partial); };
    CHECK_THROWS_AS(cmd_mine_rules(c, failing), BackendError);
    CHECK(slurp(c.out / "rules.txt") == first);
    CHECK(fs::exists(c.out / "rules_failures.txt"));
  }
}

TEST_CASE("llm predict skips empty contexts and counts failures") {
  TempDir d("llm");
  auto c = five_config(d);
  write(c.rules, std::string(kUncleRule) + "uncleOf(X,Y) <- sisterOf(X,Z1) ^ motherOf(Z1,Y)\n");
  c.predictor = PredictorKind::Llm;
  c.backend.mode = BackendMode::Stub;
  c.dump_prompts = true;

  std::size_t calls = 0;
  BackendFactory factory = [&](const BackendConfig&) {
    return std::make_unique<StubBackend>([&](const PromptDoc& p) -> std::string {
      ++calls;
      if (p.rendered.find("(b2, brotherOf, f2)") == std::string::npos) throw BackendError("refused");
      return "PREMISES: (b2, brotherOf, f2); (f2, fatherOf, c2)\nPREDICTION: (b2, uncleOf, c2)\n";
    });
  };
  auto s = cmd_predict(c, factory);
  CHECK(s.subgraphs == 2);
  CHECK(s.tasks == 4);
  CHECK(s.skipped_empty == 2);  // no sisterOf / motherOf triples anywhere
  CHECK(calls == 2);
  CHECK(s.failures == 1);
  CHECK(s.records == 1);
  auto records = read_predictions(c.out / "predictions.jsonl");
  REQUIRE(records.size() == 1);
  CHECK(records[0].provenance.rfind("stub:", 0) == 0);
  CHECK(records[0].provenance.size() == 5 + 16);
  CHECK(records[0].mode == "structured");
  CHECK(slurp(c.out / "predict_failures.txt").find("refused") != std::string::npos);
  CHECK(fs::exists(c.out / "prompts" / "index.tsv"));
  CHECK(fs::exists(c.out / "prompts" / (records[0].provenance.substr(5) + ".txt")));
}

TEST_CASE("pipeline equals its stages, and reruns are byte-identical") {
  TempDir a("compose_a"), b("compose_b");
  auto ca = five_config(a);
  auto cb = five_config(b);
  // same inputs in both places
  auto run_stages = [](const PipelineConfig& c) {
    cmd_partition(c);
    cmd_predict(c);
    cmd_evaluate(c, {c.out / "predictions.jsonl"}, c.out);
  };
  cmd_pipeline(ca);
  run_stages(cb);
  for (const char* f : {"partition.txt", "predictions.jsonl", "eval.txt", "eval.json", "hallucination.txt",
                        "hallucination.json", "audits.jsonl", "predict_summary.txt"}) {
    INFO(f);
    CHECK(slurp(ca.out / f) == slurp(cb.out / f));
  }
  const auto before = slurp(ca.out / "predictions.jsonl") + slurp(ca.out / "eval.txt");
  cmd_pipeline(ca);
  CHECK(slurp(ca.out / "predictions.jsonl") + slurp(ca.out / "eval.txt") == before);
}

TEST_CASE("runs are aggregated") {
  TempDir d("runs");
  auto c = five_config(d);
  c.runs = 3;
  auto r = cmd_pipeline(c);
  CHECK(r.predicted.size() == 3);
  REQUIRE(r.evaluated.aggregate);
  CHECK(r.evaluated.aggregate->runs == 3);
  CHECK(r.evaluated.aggregate->f_tsp.mean == 1.0);
  CHECK(*r.evaluated.aggregate->f_tsp.sd == 0.0);
  CHECK(fs::exists(c.out / "run2" / "predictions.jsonl"));
  CHECK(fs::exists(c.out / "run3" / "eval.txt"));
  CHECK(fs::exists(c.out / "eval_aggregate.txt"));
}

#ifdef TSP_CLI_PATH
TEST_CASE("command line front end") {
  TempDir d("cli");
  auto c = five_config(d);
  write(d / "tsp.conf", "train = train.txt\ntest = test.txt\nmin_group = 1\nmax_group = 100\nalpha_conf = 0.9\n");
  const std::string cli = TSP_CLI_PATH;
  auto run = [&](const std::string& args) {
    return std::system((cli + " " + args + " > " + (d / "stdout.txt").string() + " 2>&1").c_str());
  };
  const std::string conf = "--config " + (d / "tsp.conf").string();
  const std::string out = " --out " + (d / "cli_out").string();

  CHECK(run("score-rules " + conf + out + " --rules " + c.rules.string()) == 0);
  // alpha_conf = 0.9 from the file filters the 0.5-confidence rule; the flag lowers it again
  CHECK(slurp(d / "cli_out" / "rules_filtered.txt").empty());
  CHECK(run("score-rules " + conf + out + " --alpha-conf 0.45 --rules " + c.rules.string()) == 0);
  CHECK_FALSE(slurp(d / "cli_out" / "rules_filtered.txt").empty());

  CHECK(run("pipeline " + conf + out + " --rules " + c.rules.string() + " --predictor oracle --seed 7") == 0);
  CHECK(slurp(d / "stdout.txt").find("f_tsp=1.0000") != std::string::npos);
  CHECK(run("evaluate " + conf + out) == 0);
  CHECK(run("audit " + conf + out) == 0);
  CHECK(slurp(d / "stdout.txt").find("[hallucination]") != std::string::npos);

  CHECK(run("predict " + conf + out) != 0);  // no rules
  CHECK(slurp(d / "stdout.txt").find("needs --rules") != std::string::npos);
  CHECK(run("predict " + conf + out + " --backend carrier-pigeon --rules x") != 0);
  CHECK(run("") != 0);
}
#endif
