#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "capgen/corpus.h"
#include "capgen/error.h"
#include "capgen/rng.h"
#include "testutil.h"

using namespace capgen;

namespace {

Caption make_caption(const std::string& raw, const std::string& id = "i") {
  Caption c;
  c.image_id = id;
  c.raw = raw;
  c.tokens = tokenize(raw);
  return c;
}

Caption from_tokens(std::vector<std::string> tokens, const std::string& id = "i") {
  Caption c;
  c.image_id = id;
  c.tokens = std::move(tokens);
  c.raw = join_tokens(c.tokens);
  return c;
}

}  // namespace

TEST_CASE("tokenize basic rules") {
  CHECK(tokenize("A man riding a horse.") ==
        std::vector<std::string>{"a", "man", "riding", "a", "horse"});
  CHECK(tokenize("") == std::vector<std::string>{});
  CHECK(tokenize("Two cats; one red!") == std::vector<std::string>{"two", "cats", "one", "red"});
  CHECK(tokenize("the man's hat") == std::vector<std::string>{"the", "man's", "hat"});
  CHECK(tokenize("'quoted' words") == std::vector<std::string>{"quoted", "words"});
}

TEST_CASE("tokenize is idempotent") {
  Rng rng(99);
  const std::string alphabet = "abcXYZ 12.;'!-\t()";
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    size_t len = rng.next_below(40);
    for (size_t i = 0; i < len; ++i) s.push_back(alphabet[rng.next_below(alphabet.size())]);
    auto once = tokenize(s);
    CHECK(tokenize(join_tokens(once)) == once);
  }
}

TEST_CASE("build_vocabulary counts and coverage") {
  std::vector<Caption> caps = {from_tokens({"a", "b"}), from_tokens({"a"})};
  VocabBuild vb = build_vocabulary(caps, 1);
  CHECK(vb.vocab.size() == 1);
  CHECK(vb.vocab.word(0) == "a");
  CHECK(vb.coverage == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("build_vocabulary tie broken lexicographically") {
  std::vector<Caption> caps = {from_tokens({"x", "y"}), from_tokens({"y", "x"})};
  VocabBuild vb = build_vocabulary(caps, 2);
  CHECK(vb.vocab.words() == std::vector<std::string>{"x", "y"});
}

TEST_CASE("build_vocabulary returns all words when corpus is small") {
  std::vector<Caption> caps = {from_tokens({"a", "b", "a"})};
  VocabBuild vb = build_vocabulary(caps, 10);
  CHECK(vb.vocab.size() == 2);
  CHECK(vb.distinct_tokens == 2);
  CHECK(vb.coverage == doctest::Approx(1.0));
}

TEST_CASE("vocabulary frequencies non-increasing and rebuild identical") {
  Dataset ds = testutil::make_planted_dataset({});
  std::vector<Caption> caps;
  for (const auto& e : ds.entries) {
    for (const auto& c : e.captions) caps.push_back(c);
  }
  VocabBuild a = build_vocabulary(caps, 50);
  VocabBuild b = build_vocabulary(caps, 50);
  CHECK(a.vocab.words() == b.vocab.words());

  CorpusStats stats = build_stats(caps, a.vocab);
  for (size_t i = 1; i < stats.unigram_counts.size(); ++i) {
    CHECK(stats.unigram_counts[i - 1] >= stats.unigram_counts[i]);
  }
}

TEST_CASE("default closed-class list") {
  CorpusStats stats = build_stats({}, Vocabulary({"a"}));
  CHECK(stats.closed_class ==
        std::vector<std::string>{"a", "on", "of", "the", "in", "with", "and", "is", "to", "an",
                                 "at", "are", "next", "that", "it"});
}

TEST_CASE("recomputed closed-class list ranks the lexicon by corpus frequency") {
  std::vector<Caption> caps = {from_tokens({"under", "under", "under", "over", "over", "cat"})};
  Vocabulary vocab({"under", "over", "cat"});
  CorpusStats stats = build_stats(caps, vocab, 100, ClosedClassMode::kRecompute);
  REQUIRE(stats.closed_class.size() == 2);
  CHECK(stats.closed_class[0] == "under");
  CHECK(stats.closed_class[1] == "over");
  CHECK_FALSE(stats.is_closed_class("cat"));
}

TEST_CASE("successor table single bigram") {
  std::vector<Caption> caps = {from_tokens({"a", "cat"})};
  Vocabulary vocab({"a", "cat"});
  CorpusStats stats = build_stats(caps, vocab);
  CHECK(stats.successors(kStartId) == std::vector<int>{*vocab.lookup("a")});
  CHECK(stats.successors(*vocab.lookup("a")) == std::vector<int>{*vocab.lookup("cat")});
  CHECK(stats.successors(*vocab.lookup("cat")).empty());
}

TEST_CASE("successor table equals brute-force pair enumeration") {
  std::vector<Caption> caps = {from_tokens({"a", "cat", "sat"}), from_tokens({"cat", "sat"}),
                               from_tokens({"sat", "a", "a"})};
  VocabBuild vb = build_vocabulary(caps, 10);
  CorpusStats stats = build_stats(caps, vb.vocab);

  std::set<std::pair<int, int>> expected;
  for (const auto& c : caps) {
    int prev = kStartId;
    for (const auto& tok : c.tokens) {
      int cur = *vb.vocab.lookup(tok);
      expected.insert({prev, cur});
      prev = cur;
    }
  }
  std::set<std::pair<int, int>> actual;
  for (const auto& [key, nexts] : stats.successor_table) {
    for (int n : nexts) actual.insert({key, n});
  }
  CHECK(actual == expected);
}

TEST_CASE("every observed bigram and nothing else, on planted data") {
  Dataset ds = testutil::make_planted_dataset({.images = 20, .seed = 7});
  std::vector<Caption> caps;
  for (const auto& e : ds.entries) {
    for (const auto& c : e.captions) caps.push_back(c);
  }
  VocabBuild vb = build_vocabulary(caps, 100);
  CorpusStats stats = build_stats(caps, vb.vocab);

  std::set<std::pair<int, int>> expected;
  for (const auto& c : caps) {
    int prev = kStartId;
    for (const auto& tok : c.tokens) {
      auto cur = vb.vocab.lookup(tok);
      REQUIRE(cur);
      expected.insert({prev, *cur});
      prev = *cur;
    }
  }
  std::set<std::pair<int, int>> actual;
  for (const auto& [key, nexts] : stats.successor_table) {
    for (int n : nexts) actual.insert({key, n});
  }
  CHECK(actual == expected);
}

TEST_CASE("with_unk appends the reserved slot once") {
  Vocabulary vocab({"a", "b"});
  Vocabulary vu = vocab.with_unk();
  CHECK(vu.size() == 3);
  CHECK(vu.word(2) == kUnkSymbol);
  CHECK(vu.with_unk().size() == 3);
  CHECK(*vu.lookup_or_unk("zzz") == 2);
  CHECK_FALSE(vocab.lookup_or_unk("zzz").has_value());
  CHECK(vocab.hash() != vu.hash());
}

TEST_CASE("dataset round trip and split determinism") {
  Dataset ds = testutil::make_planted_dataset({.images = 10, .seed = 3});
  std::string dir = testutil::temp_dir("corpus_ds");
  std::string path = dir + "/data.jsonl";
  save_dataset(ds, path);
  Dataset loaded = load_dataset(path);
  REQUIRE(loaded.entries.size() == 10);
  CHECK(loaded.region_dim == ds.region_dim);
  CHECK(loaded.entries[0].image_id == ds.entries[0].image_id);
  CHECK(loaded.entries[3].regions.isApprox(ds.entries[3].regions));

  split_dataset(loaded, {0.8, 0.1, 0.1}, 42);
  CHECK(loaded.indices(Split::kTrain).size() == 8);
  CHECK(loaded.indices(Split::kVal).size() == 1);
  CHECK(loaded.indices(Split::kTest).size() == 1);
  std::vector<Split> first = loaded.split;
  split_dataset(loaded, {0.8, 0.1, 0.1}, 42);
  CHECK(loaded.split == first);
  split_dataset(loaded, {0.8, 0.1, 0.1}, 43);
  // a different seed rearranges at least occasionally; sizes stay fixed
  CHECK(loaded.indices(Split::kTrain).size() == 8);
}

TEST_CASE("split halves 40487 images like the reference split") {
  Dataset ds;
  ds.region_dim = 1;
  ds.entries.resize(40487);
  split_dataset(ds, {0.0, 0.5, 0.5}, 11);
  auto val = ds.indices(Split::kVal).size();
  auto test = ds.indices(Split::kTest).size();
  CHECK(val + test == 40487);
  CHECK(std::min(val, test) == 20243);
  CHECK(std::max(val, test) == 20244);
}

TEST_CASE("splits partition the image set") {
  Dataset ds = testutil::make_planted_dataset({.images = 23, .seed = 5});
  split_dataset(ds, {0.6, 0.2, 0.2}, 9);
  size_t total = ds.indices(Split::kTrain).size() + ds.indices(Split::kVal).size() +
                 ds.indices(Split::kTest).size();
  CHECK(total == ds.entries.size());
}

TEST_CASE("malformed dataset records are rejected with their line number") {
  std::string dir = testutil::temp_dir("corpus_bad");

  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir + "/" + name);
    out << body;
    return dir + "/" + name;
  };

  std::string no_captions = write("nocap.jsonl",
                                  "{\"region_dim\":2}\n"
                                  "{\"image_id\":\"x\",\"regions\":[[1,2]]}\n");
  CHECK_THROWS_WITH_AS(load_dataset(no_captions), doctest::Contains("line 2"), DataError);

  std::string bad_dim = write("dim.jsonl",
                              "{\"region_dim\":2}\n"
                              "{\"image_id\":\"x\",\"captions\":[\"a cat\"],\"regions\":[[1,2,3]]}\n");
  CHECK_THROWS_AS(load_dataset(bad_dim), DataError);

  std::string bad_json = write("garbled.jsonl", "{\"region_dim\":2}\nnot json\n");
  CHECK_THROWS_WITH_AS(load_dataset(bad_json), doctest::Contains("line 2"), DataError);

  std::string no_header = write("nohdr.jsonl", "{\"image_id\":\"x\"}\n");
  CHECK_THROWS_AS(load_dataset(no_header), DataError);
}

TEST_CASE("binary region sidecar files load") {
  std::string dir = testutil::temp_dir("corpus_bin");
  {
    std::ofstream bin(dir + "/r.bin", std::ios::binary);
    uint32_t count = 2;
    bin.write(reinterpret_cast<const char*>(&count), sizeof(count));
    double vals[4] = {1.0, 2.0, 3.0, 4.0};
    bin.write(reinterpret_cast<const char*>(vals), sizeof(vals));
  }
  {
    std::ofstream out(dir + "/data.jsonl");
    out << "{\"region_dim\":2}\n";
    out << "{\"image_id\":\"x\",\"captions\":[\"a cat\"],\"regions_path\":\"r.bin\"}\n";
  }
  Dataset ds = load_dataset(dir + "/data.jsonl");
  REQUIRE(ds.entries.size() == 1);
  REQUIRE(ds.entries[0].regions.rows() == 2);
  CHECK(ds.entries[0].regions(0, 0) == 1.0);
  CHECK(ds.entries[0].regions(1, 1) == 4.0);
}
