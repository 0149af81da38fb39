#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "tsp/evaluator.hpp"

using namespace tsp;
using Catch::Matchers::WithinAbs;

namespace {

const Rule kUncle("uncleOf", {"brotherOf", "fatherOf"});
const Rule kNephew("nephewOf", {"sonOf", "brotherOf"});

PredictionRecord rec(LabeledTriple t, const Rule& rule = kUncle, std::size_t sub = 0) {
  return {std::move(t), {}, rule, sub, 0, 0, "fallback", {}};
}

std::set<LabeledTriple> triples(std::initializer_list<LabeledTriple> l) { return l; }

}  // namespace

TEST_CASE("inverse predictions fold to base form") {
  auto c = canonicalize_predictions({rec({"t", "inv_fatherOf", "h"})}, nullptr);
  CHECK(c.triples == triples({{"h", "fatherOf", "t"}}));
  CHECK(c.folded == 1);
  CHECK(fold_inverse({"a", "inv_inv_r", "b"}) == LabeledTriple{"a", "r", "b"});
}

TEST_CASE("duplicates across rules and subgraphs count once") {
  auto c = canonicalize_predictions(
      {rec({"a", "uncleOf", "b"}, kUncle, 0), rec({"a", "uncleOf", "b"}, kNephew, 1), rec({"b", "inv_uncleOf", "a"})},
      nullptr);
  CHECK(c.triples.size() == 1);
  CHECK(c.duplicates == 2);
  CHECK(c.rules_of.at({"a", "uncleOf", "b"}).size() == 2);
  CHECK(c.subgraphs_of.at({"a", "uncleOf", "b"}) == std::set<std::size_t>{0, 1});
}

TEST_CASE("known training facts are removed and tallied") {
  TripleStore train;
  train.insert("a", "uncleOf", "b");
  auto c = canonicalize_predictions({rec({"a", "uncleOf", "b"}), rec({"b", "inv_uncleOf", "a"}), rec({"c", "uncleOf", "d"})},
                                    &train);
  CHECK(c.triples == triples({{"c", "uncleOf", "d"}}));
  CHECK(c.known_facts == 1);

  auto aug = add_inverses(train);
  CHECK(canonicalize_predictions({rec({"b", "inv_uncleOf", "a"})}, &aug).triples.empty());
}

TEST_CASE("split into positive and negative sets") {
  LabeledTriple a{"a", "r", "b"}, b{"b", "r", "c"}, c{"c", "r", "d"};
  auto s = split_pos_neg({a, b}, {b, c});
  CHECK(s.positive == triples({b}));
  CHECK(s.negative == triples({a}));
  auto d = split_pos_neg({a}, {c});
  CHECK(d.positive.empty());
  CHECK(d.negative == triples({a}));
}

TEST_CASE("split matches a linear membership scan on random sets") {
  std::mt19937_64 rng(11);
  for (int round = 0; round < 20; ++round) {
    std::set<LabeledTriple> pred, test;
    std::vector<LabeledTriple> test_list;
    const int n = static_cast<int>(rng() % 10000);
    for (int i = 0; i < n; ++i) {
      LabeledTriple t{"e" + std::to_string(rng() % 300), "r" + std::to_string(rng() % 5), "e" + std::to_string(rng() % 300)};
      if (rng() % 2) pred.insert(t);
      if (rng() % 3 == 0 && test.insert(t).second) test_list.push_back(t);
    }
    auto s = split_pos_neg(pred, test);
    std::size_t pos = 0;
    for (const auto& p : pred) {
      bool found = false;
      for (const auto& t : test_list) found = found || t == p;
      pos += found;
      CHECK(found == s.positive.contains(p));
    }
    CHECK(s.positive.size() == pos);
    CHECK(s.positive.size() + s.negative.size() == pred.size());
  }
}

TEST_CASE("JPrecision reproduces the printed rows") {
  struct Row {
    std::size_t pos, pred;
    double printed;
  };
  for (auto [pos, pred, printed] : {Row{105, 3583, 0.029}, Row{83, 3287, 0.025}, Row{101, 3338, 0.030},
                                    Row{198, 1444, 0.137}, Row{171, 1169, 0.146}, Row{167, 1216, 0.137}}) {
    auto m = compute_metrics(pos, pred, 4598);
    CHECK_THAT(m.jprecision, WithinAbs(printed, 0.001));
    CHECK(m.jprecision == static_cast<double>(pos) / static_cast<double>(pred));
  }
  CHECK_THAT(compute_metrics(105, 3583, 4598).jprecision, WithinAbs(0.0293, 0.00005));
}

TEST_CASE("F from printed JPrecision and STRecall pairs") {
  CHECK_THAT(harmonic_mean(0.029, 0.171), WithinAbs(0.05, 0.001));
  CHECK_THAT(harmonic_mean(0.029, 0.171), WithinAbs(0.0496, 0.00005));
  CHECK_THAT(harmonic_mean(0.137, 0.37), WithinAbs(0.2, 0.001));
  CHECK_THAT(harmonic_mean(0.025, 0.159), WithinAbs(0.044, 0.001));
  CHECK_THAT(harmonic_mean(0.146, 0.382), WithinAbs(0.212, 0.001));
}

TEST_CASE("STRecall follows the square-root formula") {
  CHECK_THAT(compute_metrics(96, 3403, 4598).st_recall, WithinAbs(0.1445, 0.00005));
  CHECK_THAT(compute_metrics(105, 3583, 4598).st_recall, WithinAbs(std::sqrt(105.0 / 4598.0), 1e-12));
  auto z = compute_metrics(0, 500, 4598);
  CHECK(z.jprecision == 0.0);
  CHECK(z.st_recall == 0.0);
  CHECK(z.f_tsp == 0.0);
  auto e = compute_metrics(0, 0, 10);
  CHECK(e.f_tsp == 0.0);
}

TEST_CASE("compute_metrics preconditions") {
  CHECK_THROWS_AS(compute_metrics(0, 0, 0), Error);
  CHECK_THROWS_AS(compute_metrics(5, 4, 10), Error);
  CHECK_THROWS_AS(compute_metrics(5, 10, 4), Error);
  auto one = compute_metrics(7, 7, 7);
  CHECK(one.jprecision == 1.0);
  CHECK(one.st_recall == 1.0);
  CHECK(one.f_tsp == 1.0);
}

TEST_CASE("metric properties over a grid") {
  for (std::size_t test = 1; test <= 40; test += 3)
    for (std::size_t pred = 0; pred <= 40; pred += 2)
      for (std::size_t pos = 0; pos <= std::min(pred, test); ++pos) {
        auto m = compute_metrics(pos, pred, test);
        for (double v : {m.jprecision, m.st_recall, m.f_tsp}) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
        CHECK(m.f_tsp <= std::max(m.jprecision, m.st_recall) + 1e-15);
        CHECK((m.f_tsp == 0.0) == (pos == 0));
        auto scaled = compute_metrics(pos * 3, pred * 3, test * 3);
        CHECK_THAT(scaled.jprecision, WithinAbs(m.jprecision, 1e-12));
        CHECK_THAT(scaled.st_recall, WithinAbs(m.st_recall, 1e-12));
        if (pos < std::min(pred, test)) CHECK(compute_metrics(pos + 1, pred, test).st_recall > m.st_recall);
      }
}

TEST_CASE("evaluate end to end with breakdowns") {
  TripleStore train;
  train.insert("k", "uncleOf", "l");
  std::set<LabeledTriple> test{{"a", "uncleOf", "b"}, {"c", "nephewOf", "d"}, {"x", "uncleOf", "y"}};
  std::vector<PredictionRecord> recs{rec({"a", "uncleOf", "b"}, kUncle, 0), rec({"q", "uncleOf", "r"}, kUncle, 1),
                                     rec({"d", "inv_nephewOf", "c"}, kNephew, 1), rec({"k", "uncleOf", "l"}, kUncle, 0),
                                     rec({"a", "uncleOf", "b"}, kNephew, 2)};
  auto r = evaluate(recs, &train, test);
  CHECK(r.n_predict == 3);
  CHECK(r.n_positive == 2);
  CHECK(r.n_negative == 1);
  CHECK(r.n_test == 3);
  CHECK(r.known_facts == 1);
  CHECK(r.duplicates == 1);
  CHECK(r.folded == 1);
  CHECK(r.metrics.jprecision == 2.0 / 3.0);
  CHECK_THAT(r.metrics.st_recall, WithinAbs(std::sqrt(2.0 / 3.0), 1e-12));
  CHECK(r.by_rule.at(render_rule(kUncle)).n_predict == 2);
  CHECK(r.by_rule.at(render_rule(kNephew)).n_positive == 2);
  CHECK(r.by_subgraph.at(1).n_predict == 2);
  CHECK(r.by_subgraph.at(2).n_positive == 1);

  std::ostringstream out;
  write_report(out, r);
  CHECK_THAT(out.str(), Catch::Matchers::ContainsSubstring("n_positive: 2\n"));
  CHECK(to_json(r)["n_test"] == 3);

  auto same = evaluate({rec({"a", "uncleOf", "b"}), rec({"c", "nephewOf", "d"}), rec({"x", "uncleOf", "y"})}, nullptr,
                       test);
  CHECK(same.metrics.f_tsp == 1.0);
  auto none = evaluate({}, nullptr, test);
  CHECK(none.metrics.jprecision == 0.0);
  CHECK(none.metrics.f_tsp == 0.0);
}

TEST_CASE("run aggregation uses the sample standard deviation") {
  auto rep = [](std::size_t pos, std::size_t pred) {
    EvalReport r;
    r.n_positive = pos;
    r.n_predict = pred;
    r.n_test = 4598;
    r.metrics = compute_metrics(pos, pred, 4598);
    return r;
  };
  auto a = aggregate_runs({rep(105, 3583), rep(83, 3287), rep(101, 3338)});
  // printed: 3403±158, 96±12, JPrecision 0.028±0.3%
  CHECK(std::lround(a.n_predict.mean) == 3403);
  CHECK(std::lround(*a.n_predict.sd) == 158);
  CHECK(std::lround(a.n_positive.mean) == 96);
  CHECK(std::lround(*a.n_positive.sd) == 12);
  CHECK_THAT(a.jprecision.mean, WithinAbs(0.028, 0.0005));
  CHECK_THAT(*a.jprecision.sd * 100, WithinAbs(0.3, 0.05));

  auto b = aggregate_runs({rep(198, 1444), rep(171, 1169), rep(167, 1216)});
  CHECK(std::lround(b.n_predict.mean) == 1276);
  CHECK(std::lround(*b.n_predict.sd) == 147);
  CHECK(std::lround(b.n_positive.mean) == 179);
  CHECK(std::lround(*b.n_positive.sd) == 17);

  auto single = aggregate_runs({rep(1, 2)});
  CHECK_FALSE(single.jprecision.sd);
  std::ostringstream out;
  write_aggregate(out, single);
  CHECK_THAT(out.str(), Catch::Matchers::ContainsSubstring("+- n/a"));
}
