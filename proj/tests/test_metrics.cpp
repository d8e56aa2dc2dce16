#include <doctest.h>

#include <cmath>

#include "capgen/error.h"
#include "capgen/metrics.h"
#include "capgen/rng.h"

using namespace capgen;

TEST_CASE("bleu perfect match is exactly 1") {
  Tokens hyp = {"a", "cat", "on", "a", "mat"};
  CHECK(bleu({hyp}, {{hyp}}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bleu hand case: the cat vs the dog") {
  // p1 = 1/2, smoothed p2 = 1/2, p3 = p4 = 1, BP = 1.
  double expected = std::pow(0.25, 0.25);
  CHECK(bleu({{"the", "cat"}}, {{{"the", "dog"}}}) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("bleu hand case: one mismatched word in four") {
  // p1 = 3/4, p2 = 2/4, p3 = 1/3, p4 = 1/2 -> geometric mean 0.5.
  CHECK(bleu({{"a", "b", "c", "d"}}, {{{"a", "b", "x", "d"}}}) ==
        doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("bleu hand case: brevity penalty") {
  // All precisions 1, hyp len 2 vs ref len 4 -> exp(1 - 2) = e^-1.
  CHECK(bleu({{"a", "b"}}, {{{"a", "b", "c", "d"}}}) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-9));
}

TEST_CASE("bleu is invariant to corpus permutation") {
  std::vector<Tokens> hyps = {{"a", "cat"}, {"the", "dog", "runs"}, {"one", "bird"}};
  std::vector<RefSet> refs = {{{"a", "cat", "sits"}},
                              {{"the", "dog", "runs", "fast"}, {"a", "dog"}},
                              {{"two", "birds"}}};
  double forward = bleu(hyps, refs);
  std::vector<Tokens> rh = {hyps[2], hyps[0], hyps[1]};
  std::vector<RefSet> rr = {refs[2], refs[0], refs[1]};
  CHECK(bleu(rh, rr) == doctest::Approx(forward).epsilon(1e-12));
}

TEST_CASE("adding the hypothesis as a reference makes bleu 1") {
  Tokens hyp = {"some", "long", "caption", "about", "cats"};
  RefSet refs = {{"another", "sentence", "entirely", "with", "more", "words"}};
  refs.push_back(hyp);
  CHECK(bleu({hyp}, {refs}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adding a reference never decreases clipped matches") {
  Rng rng(4);
  std::vector<std::string> pool = {"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 50; ++trial) {
    auto sample = [&](size_t len) {
      Tokens t;
      for (size_t i = 0; i < len; ++i) t.push_back(pool[rng.next_below(pool.size())]);
      return t;
    };
    Tokens hyp = sample(2 + rng.next_below(6));
    RefSet refs = {sample(2 + rng.next_below(6))};
    NgramStats before = ngram_stats(hyp, refs);
    refs.push_back(sample(2 + rng.next_below(6)));
    NgramStats after = ngram_stats(hyp, refs);
    for (int n = 0; n < 4; ++n) CHECK(after.matches[n] >= before.matches[n]);
  }
}

TEST_CASE("bleu rejects an empty corpus") {
  CHECK_THROWS_AS(bleu({}, {}), DataError);
}

TEST_CASE("stem_lite suffix rules") {
  CHECK(stem_lite("cats") == "cat");
  CHECK(stem_lite("running") == "run");
  CHECK(stem_lite("runs") == "run");
  CHECK(stem_lite("jumped") == "jump");
  CHECK(stem_lite("boxes") == "box");
  CHECK(stem_lite("grass") == "grass");
  CHECK(stem_lite("is") == "is");
}

TEST_CASE("meteor_lite identical sentences score 1") {
  Tokens s = {"a", "cat", "sat", "down"};
  CHECK(meteor_lite(s, {s}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("meteor_lite disjoint sentences score 0") {
  CHECK(meteor_lite({"a", "b"}, {{"c", "d"}}) == doctest::Approx(0.0));
}

TEST_CASE("meteor_lite stem match hand case") {
  // One stem match (running/runs) in 4-token sentences: P = R = 1/4,
  // F = 10PR/(R+9P) = 0.25, single chunk so no penalty.
  double score = meteor_lite({"men", "were", "running", "quickly"},
                             {{"women", "kept", "runs", "slow"}});
  CHECK(score == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("meteor_lite fragmentation penalty") {
  // Two matches in two chunks (reversed order): F = 1 for 2-token pair,
  // penalty = 0.5 * (1/2)^3 = 0.0625.
  double score = meteor_lite({"cat", "dog"}, {{"dog", "cat"}});
  CHECK(score == doctest::Approx(1.0 - 0.0625).epsilon(1e-9));
}

TEST_CASE("evaluate_corpus aggregates per image") {
  std::vector<std::string> ids = {"a", "b"};
  std::vector<Tokens> hyps = {{"a", "cat"}, {"a", "dog"}};
  std::vector<RefSet> refs = {{{"a", "cat"}}, {{"a", "dog"}}};
  EvalReport rep = evaluate_corpus(ids, hyps, refs);
  CHECK(rep.bleu_n[3] == doctest::Approx(1.0));
  CHECK(rep.meteor == doctest::Approx(1.0));
  CHECK(rep.sentence_bleu.size() == 2);
  CHECK(rep.reference_count == 1);
}
