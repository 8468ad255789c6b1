#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sumrl/corpus.hpp"
#include "sumrl/rng.hpp"
#include "sumrl/rouge.hpp"

using namespace sumrl;
using oracles::lcs;
using oracles::ngram_overlap;

namespace {

std::vector<std::string> random_tokens(Rng& rng, size_t max_len,
                                       int alphabet) {
  std::vector<std::string> out;
  size_t len = rng.below(max_len + 1);
  for (size_t i = 0; i < len; ++i) {
    out.push_back(std::string(1, static_cast<char>('a' + rng.below(alphabet))));
  }
  return out;
}

}  // namespace

TEST_CASE("rouge_n hand examples") {
  std::vector<std::string> cand{"a", "b", "c"};
  std::vector<std::string> ref{"a", "b", "d"};
  RougeTriple t = rouge_n(cand, ref, 1);
  CHECK_THAT(t.p, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
  CHECK_THAT(t.r, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
  CHECK_THAT(t.f, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));

  RougeTriple same = rouge_n(cand, cand, 1);
  CHECK(same.p == 1.0);
  CHECK(same.r == 1.0);
  CHECK(same.f == 1.0);

  std::vector<std::string> other{"x", "y"};
  RougeTriple none = rouge_n(cand, other, 1);
  CHECK(none.p == 0.0);
  CHECK(none.r == 0.0);
  CHECK(none.f == 0.0);

  SECTION("clipping counts repeated candidate grams at most ref multiplicity") {
    std::vector<std::string> c2{"a", "a", "a"};
    std::vector<std::string> r2{"a"};
    CHECK_THAT(rouge_n(c2, r2, 1).p, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
  }
  SECTION("bigram") {
    RougeTriple b = rouge_n(cand, ref, 2);
    CHECK_THAT(b.p, Catch::Matchers::WithinAbs(0.5, 1e-12));
  }
  SECTION("n outside {1,2} is rejected") {
    CHECK_THROWS_AS(rouge_n(cand, ref, 3), std::invalid_argument);
  }
}

TEST_CASE("rouge_l hand examples") {
  std::vector<std::string> cand{"a", "b", "c", "d"};
  std::vector<std::string> ref{"a", "c", "b", "d"};
  RougeTriple t = rouge_l(cand, ref);
  CHECK_THAT(t.p, Catch::Matchers::WithinAbs(0.75, 1e-12));
  CHECK_THAT(t.r, Catch::Matchers::WithinAbs(0.75, 1e-12));
  CHECK_THAT(t.f, Catch::Matchers::WithinAbs(0.75, 1e-12));

  CHECK(rouge_l(cand, cand).f == 1.0);

  std::vector<std::string> empty;
  RougeTriple z = rouge_l(empty, ref);
  CHECK(z.p == 0.0);
  CHECK(z.r == 0.0);
  CHECK(z.f == 0.0);
}

TEST_CASE("rouge matches brute-force oracles on random pairs") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> cand = random_tokens(rng, 20, 4);
    std::vector<std::string> ref = random_tokens(rng, 20, 4);
    for (int n = 1; n <= 2; ++n) {
      size_t un = static_cast<size_t>(n);
      double ct = cand.size() >= un ? static_cast<double>(cand.size() - un + 1) : 0.0;
      double rt = ref.size() >= un ? static_cast<double>(ref.size() - un + 1) : 0.0;
      RougeTriple expect =
          oracles::triple(ngram_overlap(cand, ref, n), ct, rt);
      RougeTriple got = rouge_n(cand, ref, n);
      CHECK_THAT(got.p, Catch::Matchers::WithinAbs(expect.p, 1e-9));
      CHECK_THAT(got.r, Catch::Matchers::WithinAbs(expect.r, 1e-9));
      CHECK_THAT(got.f, Catch::Matchers::WithinAbs(expect.f, 1e-9));
    }
    RougeTriple expect_l =
        oracles::triple(lcs(cand, ref), static_cast<double>(cand.size()),
                      static_cast<double>(ref.size()));
    RougeTriple got_l = rouge_l(cand, ref);
    CHECK_THAT(got_l.p, Catch::Matchers::WithinAbs(expect_l.p, 1e-9));
    CHECK_THAT(got_l.r, Catch::Matchers::WithinAbs(expect_l.r, 1e-9));
    CHECK_THAT(got_l.f, Catch::Matchers::WithinAbs(expect_l.f, 1e-9));
  }
}

TEST_CASE("precision and recall swap under argument exchange") {
  Rng rng(55);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::string> a = random_tokens(rng, 15, 3);
    std::vector<std::string> b = random_tokens(rng, 15, 3);
    for (int n = 1; n <= 2; ++n) {
      CHECK_THAT(rouge_n(a, b, n).p,
                 Catch::Matchers::WithinAbs(rouge_n(b, a, n).r, 1e-12));
    }
    CHECK_THAT(rouge_l(a, b).p, Catch::Matchers::WithinAbs(rouge_l(b, a).r, 1e-12));
  }
}

TEST_CASE("appending a reference token never decreases clipped overlap") {
  Rng rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<std::string> cand = random_tokens(rng, 12, 3);
    std::vector<std::string> ref = random_tokens(rng, 12, 3);
    if (ref.empty()) continue;
    std::vector<std::string> grown = cand;
    grown.push_back(ref[rng.below(ref.size())]);
    int before = ngram_overlap(cand, ref, 1);
    int after = ngram_overlap(grown, ref, 1);
    CHECK(after >= before);
    // the library agrees with the oracle on both
    double rb = ref.empty() ? 0.0 : rouge_n(cand, ref, 1).r;
    double ra = rouge_n(grown, ref, 1).r;
    CHECK(ra >= rb - 1e-12);
  }
}

TEST_CASE("reward composes F-scores by normalized weights") {
  std::vector<std::string> cand{"a", "b", "c"};
  std::vector<std::string> ref{"a", "b", "d"};
  std::vector<std::string> cl{"a", "b", "c", "d"};
  std::vector<std::string> rl{"a", "c", "b", "d"};

  CHECK(reward(ref, ref) == 1.0);

  RewardConfig mix{0.5, 0.0, 0.5};
  double r1f = rouge_n(cand, ref, 1).f;
  CHECK_THAT(reward(cand, ref, mix),
             Catch::Matchers::WithinAbs(0.5 * r1f + 0.5 * rouge_l(cand, ref).f,
                                        1e-12));
  CHECK_THAT(reward(cl, rl, mix),
             Catch::Matchers::WithinAbs(
                 0.5 * rouge_n(cl, rl, 1).f + 0.5 * (3.0 / 4.0), 1e-12));

  SECTION("copyfirst construction gives reward 1 against the first sentence") {
    Dataset ds = gen_synthetic(SynthTask::CopyFirst, 10, 9);
    for (const Example& ex : ds.examples) {
      CHECK(reward(ex.summary, ex.summary) == 1.0);
    }
  }
}
