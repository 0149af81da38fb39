#include <catch2/catch_amalgamated.hpp>

#include "support/cfamily.hpp"
#include "support/golden.hpp"
#include "tsp/llm/prompt.hpp"

using namespace tsp;
using Catch::Matchers::ContainsSubstring;

namespace {

std::vector<std::string> names(const PromptDoc& d) {
  std::vector<std::string> out;
  for (const auto& s : d.sections) out.push_back(s.name);
  return out;
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

const Rule kNephew("nephewOf", {"sonOf", "brotherOf"});

std::vector<LabeledTriple> subgraph_triples() {
  return {{"p1023", "sonOf", "p0441"}, {"p0441", "brotherOf", "p0187"}, {"p2210", "sonOf", "p0441"},
          {"p0441", "brotherOf", "p1502"}, {"p0187", "brotherOf", "p0441"}, {"p0958", "sonOf", "p0187"}};
}

}  // namespace

TEST_CASE("sha256 of known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(prompt_fingerprint("abc") == "ba7816bf8f01cfea");
}

TEST_CASE("rule prompt structure") {
  auto d = build_rule_prompt({"fatherOf", "inv_fatherOf"}, "fatherOf");
  CHECK(d.kind == PromptKind::RuleMining);
  CHECK(names(d) == std::vector<std::string>{"background", "relations", "rule_head", "example", "notes"});
  CHECK(count(d.sections[1].text, "- fatherOf\n") == 1);
  CHECK(count(d.sections[1].text, "- inv_fatherOf\n") == 1);
  CHECK_THAT(d.sections[2].text, ContainsSubstring("Rule head: fatherOf(X,Y)"));
  CHECK(count(d.sections[3].text, "fatherOf(X,Y) <-") == 2);
  CHECK_THAT(d.sections[4].text, ContainsSubstring("head(X,Y) <- r1(X,Z1) ^ r2(Z1,Y)"));

  auto again = build_rule_prompt({"fatherOf", "inv_fatherOf"}, "fatherOf");
  CHECK(again.rendered == d.rendered);
  CHECK(again.fingerprint == d.fingerprint);
  CHECK(d.fingerprint.size() == 16);
  CHECK(d.fingerprint != build_rule_prompt({"fatherOf", "inv_fatherOf"}, "inv_fatherOf").fingerprint);
}

TEST_CASE("rule prompt lists duplicated relations once and rejects a foreign head") {
  auto d = build_rule_prompt({"a", "b", "a"}, "b");
  CHECK(count(d.sections[1].text, "- a\n") == 1);
  CHECK_THROWS_AS(build_rule_prompt({"a", "b"}, "c"), Error);
}

TEST_CASE("rule prompt golden snapshot for the CFamily vocabulary") {
  auto d = build_rule_prompt(tsp::testing::cfamily_with_inverses(), "nieceOf");
  for (const auto& r : tsp::testing::cfamily_with_inverses()) CHECK(count(d.sections[1].text, "- " + r + "\n") == 1);
  CHECK(d.rendered == tsp::testing::golden("rule_prompt_nieceOf.txt", d.rendered));
}

TEST_CASE("tsp prompt structure") {
  Rule uncle("uncleOf", {"brotherOf", "fatherOf"});
  std::vector<LabeledTriple> ts{{"e1", "brotherOf", "e2"}, {"e2", "fatherOf", "e3"}};
  auto d = build_tsp_prompt(uncle, explain_rule(uncle), ts);
  CHECK(d.kind == PromptKind::TripleSetPrediction);
  CHECK(names(d) == std::vector<std::string>{"task", "rule", "triples", "reasoning", "output_format"});
  CHECK(count(d.rendered, "(e1, brotherOf, e2)") == 1);
  CHECK(count(d.rendered, "(e2, fatherOf, e3)") == 1);
  CHECK_THAT(d.rendered, ContainsSubstring("uncleOf(X,Y) <- brotherOf(X,Z1) ^ fatherOf(Z1,Y)"));
  CHECK_THAT(d.rendered, ContainsSubstring("Explanation: If X is brother of Z1"));
  CHECK_THAT(d.rendered, ContainsSubstring("PREMISES: "));
  CHECK_THAT(d.rendered, ContainsSubstring("PREDICTION: "));
  CHECK_THAT(d.rendered, ContainsSubstring("step by step"));
  CHECK_FALSE(d.empty_context);
  // zero-shot: the output format block uses placeholders, no entities
  CHECK(d.sections[4].text.find("e1") == std::string::npos);
}

TEST_CASE("tsp prompt with no triples is flagged") {
  Rule uncle("uncleOf", {"brotherOf", "fatherOf"});
  auto d = build_tsp_prompt(uncle, explain_rule(uncle), {});
  CHECK(d.empty_context);
  CHECK_THAT(d.sections[2].text, ContainsSubstring("(none)"));
}

TEST_CASE("tsp prompt golden snapshot") {
  auto d = build_tsp_prompt(kNephew, explain_rule(kNephew), subgraph_triples());
  for (const auto& t : subgraph_triples()) CHECK(count(d.rendered, to_string(t)) == 1);
  CHECK(d.rendered == tsp::testing::golden("tsp_prompt_nephewOf.txt", d.rendered));
}
