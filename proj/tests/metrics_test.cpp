#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "corpus.hpp"
#include "metrics.hpp"
#include "rng.hpp"

using namespace ef;

namespace {

std::vector<TokenSeq> toks(std::initializer_list<const char*> texts) {
  std::vector<TokenSeq> out;
  for (const char* t : texts) out.push_back(tokenize(t));
  return out;
}

}  // namespace

TEST_CASE("corpus_bleu") {
  SUBCASE("identical corpora score 100, even with short sentences") {
    auto c = toks({"i am very happy today", "yes", "that sounds great to me"});
    CHECK(corpus_bleu(c, c) == doctest::Approx(100.0).epsilon(1e-12));
    auto brief = toks({"ok", "no"});
    CHECK(corpus_bleu(brief, brief) == doctest::Approx(100.0).epsilon(1e-12));
  }
  SUBCASE("disjoint vocabulary scores about zero") {
    CHECK(corpus_bleu(toks({"aa bb cc dd"}), toks({"ww xx yy zz"})) < 1e-6);
  }
  SUBCASE("hand-worked clipped-count value") {
    // candidate "the the the" vs reference "the cat":
    //   p1 = 1/3 (one "the" in the reference clips the count),
    //   p2 = eps/2 (two candidate bigrams, no matches),
    //   p3 = eps/1, no 4-grams anywhere so that order drops out,
    //   BP = 1 because c=3 > r=2.
    const double eps = 1e-9;
    const double want = 100.0 * std::exp((std::log(1.0 / 3.0) +
                                          std::log(eps / 2.0) +
                                          std::log(eps / 1.0)) / 3.0);
    CHECK(corpus_bleu(toks({"the the the"}), toks({"the cat"})) ==
          doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("brevity penalty kicks in for short candidates") {
    // candidate "the cat" vs reference "the cat sat": p1=1, p2=1, BP=e^{1-3/2}
    const double want = 100.0 * std::exp(1.0 - 3.0 / 2.0);
    CHECK(corpus_bleu(toks({"the cat"}), toks({"the cat sat"})) ==
          doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("length mismatch is an error") {
    CHECK_THROWS_AS(corpus_bleu(toks({"a"}), toks({"a", "b"})),
                    std::invalid_argument);
  }
}

TEST_CASE("perplexity") {
  CHECK(perplexity(0.0) == 1.0);
  CHECK(perplexity(std::log(100.0)) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(perplexity(0.5) == doctest::Approx(1.64872).epsilon(1e-5));
  CHECK_THROWS_AS(perplexity(-0.1), std::invalid_argument);
  SUBCASE("strictly increasing in the mean NLL") {
    double prev = 0.0;
    for (double nll = 0.1; nll < 8.0; nll += 0.37) {
      const double p = perplexity(nll);
      CHECK(p > prev);
      prev = p;
    }
  }
}

TEST_CASE("distinct_n") {
  SUBCASE("hand counts") {
    CHECK(distinct_n(toks({"a a a"}), 1) == doctest::Approx(100.0 / 3).epsilon(1e-12));
    auto two = toks({"i am sad", "i am happy"});
    CHECK(distinct_n(two, 1) == doctest::Approx(100.0 * 4 / 6).epsilon(1e-12));
    CHECK(distinct_n(two, 2) == doctest::Approx(50.0).epsilon(1e-12));
  }
  SUBCASE("bigram-count denominator variant") {
    // 3 unique bigrams over 4 total bigrams
    CHECK(distinct_n(toks({"i am sad", "i am happy"}), 2, true) ==
          doctest::Approx(75.0).epsilon(1e-12));
  }
  SUBCASE("all-distinct unigrams hit 100") {
    CHECK(distinct_n(toks({"a b c", "d e"}), 1) == doctest::Approx(100.0));
  }
  SUBCASE("bigrams never cross sentence boundaries") {
    // "b a" never forms: distinct bigrams are only a-b within each sentence
    CHECK(distinct_n(toks({"a b", "a b"}), 2) ==
          doctest::Approx(100.0 / 4).epsilon(1e-12));
  }
  SUBCASE("appending a duplicate response never raises the score") {
    Rng rng(5);
    std::vector<TokenSeq> set = toks({"x y z", "p q", "x q r"});
    const double before1 = distinct_n(set, 1);
    const double before2 = distinct_n(set, 2);
    set.push_back(set[0]);
    CHECK(distinct_n(set, 1) <= before1);
    CHECK(distinct_n(set, 2) <= before2);
    CHECK(distinct_n(set, 1) <= 100.0);
    CHECK(distinct_n(set, 2) <= 100.0);
  }
  SUBCASE("empty response set is an error") {
    CHECK_THROWS_AS(distinct_n({}, 1), std::invalid_argument);
    CHECK_THROWS_AS(distinct_n({{}, {}}, 1), std::invalid_argument);
  }
}

TEST_CASE("macro_f1") {
  SUBCASE("perfect prediction") {
    CHECK(macro_f1({0, 1, 2, 1}, {0, 1, 2, 1}, {0, 1, 2}) ==
          doctest::Approx(100.0));
  }
  SUBCASE("hand computation with an absent predicted class") {
    // class 0: P=1/2, R=1 -> F1=2/3; class 1: no predictions -> 0
    CHECK(macro_f1({0, 1}, {0, 0}, {0, 1}) ==
          doctest::Approx(100.0 / 3).epsilon(1e-12));
  }
  SUBCASE("declared-but-unused classes pull the mean down") {
    CHECK(macro_f1({0, 0}, {0, 0}, {0, 1, 2}) ==
          doctest::Approx(100.0 / 3).epsilon(1e-12));
  }
  SUBCASE("invariant to relabeling applied to both lists") {
    const std::vector<int> gold = {0, 1, 2, 2, 1, 0, 1};
    const std::vector<int> pred = {0, 2, 2, 1, 1, 0, 0};
    auto relabel = [](const std::vector<int>& v) {
      std::vector<int> out;
      for (int x : v) out.push_back((x + 1) % 3);  // 0->1->2->0
      return out;
    };
    CHECK(macro_f1(gold, pred, {0, 1, 2}) ==
          doctest::Approx(macro_f1(relabel(gold), relabel(pred), {0, 1, 2}))
              .epsilon(1e-12));
  }
  SUBCASE("100 only when predictions match gold") {
    CHECK(macro_f1({0, 1, 1}, {0, 1, 0}, {0, 1}) < 100.0);
  }
  SUBCASE("length mismatch is an error") {
    CHECK_THROWS_AS(macro_f1({0}, {0, 1}, {0, 1}), std::invalid_argument);
  }
}

TEST_CASE("weighted_f1_and_accuracy") {
  SUBCASE("perfect") {
    auto [acc, wf1] = weighted_f1_and_accuracy({0, 1, 2}, {0, 1, 2}, {0, 1, 2});
    CHECK(acc == doctest::Approx(100.0));
    CHECK(wf1 == doctest::Approx(100.0));
  }
  SUBCASE("hand computation") {
    // gold [0,0,1], pred [0,1,1]: acc 2/3; F1(0)=2/3, F1(1)=2/3,
    // supports 2 and 1 -> weighted 2/3
    auto [acc, wf1] = weighted_f1_and_accuracy({0, 0, 1}, {0, 1, 1}, {0, 1});
    CHECK(acc == doctest::Approx(200.0 / 3).epsilon(1e-12));
    CHECK(wf1 == doctest::Approx(200.0 / 3).epsilon(1e-12));
  }
  SUBCASE("single-class gold with perfect prediction") {
    auto [acc, wf1] = weighted_f1_and_accuracy({1, 1, 1}, {1, 1, 1}, {0, 1, 2});
    CHECK(acc == doctest::Approx(100.0));
    CHECK(wf1 == doctest::Approx(100.0));
  }
}

TEST_CASE("mae_score") {
  CHECK(mae_score({0.5, -0.25}, {0.5, -0.25}) == 0.0);
  CHECK(mae_score({1.0, -1.0}, {0.0, 0.0}) == doctest::Approx(1.0));
  CHECK(mae_score({0.3, 0.7}, {-0.1, 0.2}) ==
        doctest::Approx(mae_score({-0.1, 0.2}, {0.3, 0.7})).epsilon(1e-15));
  CHECK_THROWS_AS(mae_score({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(mae_score({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("metrics report JSON carries two-decimal rendering") {
  MetricsReport r;
  r.bleu = 7.8849;
  r.ppl = 26.3702;
  r.distinct1 = 1.4149;
  r.distinct2 = 14.6649;
  r.sent_mae = 0.44152;
  MetricsReport back = MetricsReport::from_json(r.to_json());
  CHECK(*back.bleu == 7.88);
  CHECK(*back.ppl == 26.37);
  CHECK(*back.distinct1 == 1.41);
  CHECK(*back.distinct2 == 14.66);
  CHECK(*back.sent_mae == 0.442);
  CHECK(!back.f1_ep.has_value());
}
