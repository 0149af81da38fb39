#pragma once
// Prompt documents for the two LLM tasks.
//
// Rule mining: background / relations / rule_head / example / notes.
// Triple set prediction: task / rule / triples / reasoning / output_format,
// zero-shot (no worked prediction).
//
// The wording is versioned through kPromptTemplateVersion and frozen by the
// golden snapshots under tests/golden. Any edit changes every fingerprint
// and therefore invalidates recorded replay fixtures.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsp/error.hpp"
#include "tsp/kg_store.hpp"
#include "tsp/rule.hpp"

namespace tsp {

inline constexpr std::string_view kPromptTemplateVersion = "v1";

enum class PromptKind { RuleMining, TripleSetPrediction };

inline const char* to_string(PromptKind k) {
  return k == PromptKind::RuleMining ? "rule_mining" : "tsp";
}

struct PromptSection {
  std::string name;
  std::string text;
};

struct PromptDoc {
  PromptKind kind = PromptKind::RuleMining;
  std::vector<PromptSection> sections;
  std::string rendered;
  std::string fingerprint;
  bool empty_context = false;  // TSP prompt built without any triples
};

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

// First 16 hex digits of SHA-256 over the rendered text.
inline std::string prompt_fingerprint(std::string_view rendered) { return sha256_hex(rendered).substr(0, 16); }

namespace detail {

inline std::string section_title(std::string_view name) {
  std::string t(name);
  std::replace(t.begin(), t.end(), '_', ' ');
  if (!t.empty()) t[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(t[0])));
  return t;
}

inline PromptDoc finish(PromptKind kind, std::vector<PromptSection> sections) {
  PromptDoc doc{kind, std::move(sections), {}, {}, false};
  for (std::size_t i = 0; i < doc.sections.size(); ++i) {
    if (i) doc.rendered += "\n";
    doc.rendered += "## " + section_title(doc.sections[i].name) + "\n" + doc.sections[i].text;
    if (doc.rendered.back() != '\n') doc.rendered += '\n';
  }
  doc.fingerprint = prompt_fingerprint(doc.rendered);
  return doc;
}

inline constexpr std::string_view kRuleBackground =
    "A knowledge graph stores facts as triples (head entity, relation, tail entity); the triple\n"
    "(A, r, B) can also be written r(A,B).\n"
    "A logical rule has the form\n"
    "  r_h(X,Y) <- r_1(X,Z1) ^ r_2(Z1,Z2) ^ ... ^ r_K(Z{K-1},Y)\n"
    "The atom left of the arrow is the rule head, the atoms right of it form the rule body, and K is\n"
    "the rule length. The body is a chain of relations leading from X to Y. Whenever entities can be\n"
    "found that make every body atom true, the head r_h(X,Y) is derived.\n";

inline constexpr std::string_view kRuleExample =
    "Rule head: fatherOf(X,Y)\n"
    "1. fatherOf(X,Y) <- husbandOf(X,Z1) ^ motherOf(Z1,Y)\n"
    "   Explanation: X is the husband of Z1 and Z1 is the mother of Y, so X is the father of Y.\n"
    "2. fatherOf(X,Y) <- fatherOf(X,Z1) ^ inv_sisterOf(Z1,Y)\n"
    "   Explanation: X is the father of Z1 and Y is a sister of Z1, so X is also the father of Y.\n";

inline constexpr std::string_view kRuleNotes =
    "- Write each rule on its own numbered line, exactly in the form used in the example:\n"
    "  head(X,Y) <- r1(X,Z1) ^ r2(Z1,Y)   or   head(X,Y) <- r1(X,Z1) ^ r2(Z1,Z2) ^ r3(Z2,Y)\n"
    "- The body must have 2 or 3 atoms and form a chain from X through Z1 (and Z2) to Y.\n"
    "- Use `<-` between head and body and `^` between body atoms.\n"
    "- Use only relation names from the list above, spelled exactly as given.\n"
    "- Put the explanation of each rule on the next line, starting with \"Explanation:\".\n"
    "- Do not write anything else on a rule line.\n";

inline constexpr std::string_view kTspTask =
    "You are given a logical rule and a list of known triples taken from a knowledge graph.\n"
    "Apply the rule to the known triples and predict the missing triples it derives.\n";

inline constexpr std::string_view kTspReasoning =
    "Think step by step:\n"
    "1. Take each known triple that matches the first atom of the rule body.\n"
    "2. Follow the chain: look for known triples that match the next body atom and start at the\n"
    "   entity where the previous triple ended.\n"
    "3. When every body atom is matched, write down the head triple for the first and last entity.\n"
    "4. Use only the triples listed above. Do not invent triples and do not predict a triple that\n"
    "   is already listed.\n";

inline constexpr std::string_view kTspOutputFormat =
    "For every predicted triple write exactly two lines:\n"
    "PREMISES: (head, relation, tail); (head, relation, tail)\n"
    "PREDICTION: (head, relation, tail)\n"
    "PREMISES lists the known triples used, in the order of the rule body. If no triple can be\n"
    "derived, write NO PREDICTION.\n";

}  // namespace detail

// Rule-mining prompt for one head relation. `relations` is the full
// vocabulary including inverses; duplicates are listed once.
inline PromptDoc build_rule_prompt(const std::vector<std::string>& relations, const std::string& head) {
  if (std::find(relations.begin(), relations.end(), head) == relations.end()) {
    throw Error("rule head '" + head + "' is not among the prompt relations");
  }
  std::vector<std::string> listed;
  for (const auto& r : relations)
    if (std::find(listed.begin(), listed.end(), r) == listed.end()) listed.push_back(r);

  std::string rel_text =
      "The knowledge graph contains these relations. A relation prefixed with inv_ is the inverse of\n"
      "the relation without the prefix: inv_r(A,B) holds exactly when r(B,A) holds.\n";
  for (const auto& r : listed) rel_text += "- " + r + "\n";

  std::string head_text = "Rule head: " + head + "(X,Y)\n" +
                          "Generate rules whose head is " + head +
                          "(X,Y) and whose body uses relations from the list above.\n";

  return detail::finish(PromptKind::RuleMining, {{"background", std::string(detail::kRuleBackground)},
                                                 {"relations", std::move(rel_text)},
                                                 {"rule_head", std::move(head_text)},
                                                 {"example", std::string(detail::kRuleExample)},
                                                 {"notes", std::string(detail::kRuleNotes)}});
}

// Triple set prediction prompt over the rule-related triples of one subgraph.
inline PromptDoc build_tsp_prompt(const Rule& rule, const std::string& explanation,
                                  const std::vector<LabeledTriple>& triples) {
  std::string rule_text = "Rule: " + render_rule(rule) + "\nExplanation: " + explanation + "\n";
  std::string triple_text = "Known triples (head, relation, tail):\n";
  if (triples.empty()) triple_text += "(none)\n";
  for (const auto& t : triples) triple_text += to_string(t) + "\n";

  auto doc = detail::finish(PromptKind::TripleSetPrediction, {{"task", std::string(detail::kTspTask)},
                                                              {"rule", std::move(rule_text)},
                                                              {"triples", std::move(triple_text)},
                                                              {"reasoning", std::string(detail::kTspReasoning)},
                                                              {"output_format", std::string(detail::kTspOutputFormat)}});
  doc.empty_context = triples.empty();
  return doc;
}

}  // namespace tsp
