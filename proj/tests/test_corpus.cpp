#include <catch2/catch_amalgamated.hpp>

#include "dfmix/corpus.hpp"
#include "support/tmpdir.hpp"

using namespace dfmix;
using testsupport::TempDir;

using Tokens = std::vector<std::string>;

TEST_CASE("tokenize lowercases and strips boundary punctuation") {
  CHECK(tokenize("Hello, World!") == Tokens{"hello", "world"});
  CHECK(tokenize("") == Tokens{});
  CHECK(tokenize("I can't go.") == Tokens{"i", "can't", "go"});
  CHECK(tokenize("  spaced\tout\nlines ") == Tokens{"spaced", "out", "lines"});
  CHECK(tokenize("?!... ---") == Tokens{});  // punctuation-only tokens vanish
  CHECK(tokenize("u.s. grade-a") == Tokens{"u.s", "grade-a"});
}

TEST_CASE("tokenize honors config flags") {
  TokenizerConfig keep_punct{true, false};
  CHECK(tokenize("Hello, World!", keep_punct) == Tokens{"hello,", "world!"});
  TokenizerConfig keep_case{false, true};
  CHECK(tokenize("Hello, World!", keep_case) == Tokens{"Hello", "World"});
}

TEST_CASE("tokenize is idempotent over join") {
  Rng rng(42);
  const std::string charset = "abcXYZ,.!?'- \t";
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    const auto len = rng.below(40);
    for (std::size_t i = 0; i < len; ++i) s += charset[rng.below(charset.size())];
    const auto once = tokenize(s);
    CHECK(tokenize(join_tokens(once)) == once);
  }
}

TEST_CASE("strip_stopwords filters in order and is a projection") {
  std::set<std::string> stop{"i", "the"};
  CHECK(strip_stopwords({"i", "love", "hiking"}, {{"i"}}) == Tokens{"love", "hiking"});
  CHECK(strip_stopwords({}, stop) == Tokens{});
  CHECK(strip_stopwords({"i", "the", "i"}, stop) == Tokens{});
  const Tokens mixed{"the", "cat", "i", "saw", "the", "dog"};
  const auto once = strip_stopwords(mixed, stop);
  CHECK(once == Tokens{"cat", "saw", "dog"});
  CHECK(strip_stopwords(once, stop) == once);
}

TEST_CASE("stopword file supports comments") {
  TempDir dir;
  dir.write("stop.txt", "# leading comment\nthe\na  # trailing\n\nof\n");
  const auto words = load_stopwords(dir.file("stop.txt"));
  CHECK(words == std::set<std::string>{"the", "a", "of"});
  CHECK_THROWS_AS(load_stopwords(dir.file("missing.txt")), IoError);
}

TEST_CASE("vocabulary reserves the special ids") {
  Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v.token(Vocabulary::kSos) == "<s>");
  CHECK(v.token(Vocabulary::kEos) == "</s>");
  const int id = v.add("hello");
  CHECK(id == 4);
  CHECK(v.add("hello") == id);
  CHECK(v.id_or_unk("world") == Vocabulary::kUnk);
  const auto h1 = v.hash();
  v.add("world");
  CHECK(v.hash() != h1);
}

namespace {

CorpusRegistry make_registry(const std::vector<std::string>& words) {
  CorpusRegistry reg;
  for (const auto& w : words) reg.vocab.add(w);
  return reg;
}

}  // namespace

TEST_CASE("load_pairs parses valid lines and counts bad ones") {
  TempDir dir;
  auto reg = make_registry({"hi", "there", "yes", "no"});
  auto corpus = reg.add_corpus("chat");

  SECTION("happy path") {
    dir.write("p.jsonl",
              R"({"context": "hi", "response": "there"})"
              "\n"
              R"({"context": "yes", "response": "no"})"
              "\n"
              R"({"context": "hi there", "response": "yes", "corpus": "ignored"})"
              "\n");
    const auto result = load_pairs(dir.file("p.jsonl"), corpus, reg);
    REQUIRE(result.pairs.size() == 3);
    CHECK(result.skipped == 0);
    CHECK(result.pairs[0].context == std::vector<int>{reg.vocab.id_or_unk("hi")});
    CHECK(result.pairs[2].corpus == corpus.index);  // CLI assignment wins
  }

  SECTION("malformed lines are skipped with a count") {
    dir.write("p.jsonl",
              R"({"context": "hi", "response": "there"})"
              "\nnot json at all\n"
              R"({"context": "yes", "response": "no"})"
              "\n");
    const auto result = load_pairs(dir.file("p.jsonl"), corpus, reg);
    CHECK(result.pairs.size() == 2);
    CHECK(result.skipped == 1);
  }

  SECTION("missing keys and empty-after-tokenize lines are malformed") {
    dir.write("p.jsonl",
              R"({"context": "hi"})"
              "\n"
              R"({"context": "...", "response": "yes"})"
              "\n"
              R"({"context": "hi", "response": "there"})"
              "\n");
    const auto result = load_pairs(dir.file("p.jsonl"), corpus, reg);
    CHECK(result.pairs.size() == 1);
    CHECK(result.skipped == 2);
  }

  SECTION("file of blank lines is an empty corpus") {
    dir.write("p.jsonl", "\n\n   \n");
    CHECK_THROWS_AS(load_pairs(dir.file("p.jsonl"), corpus, reg), ValidationError);
  }

  SECTION("unreadable file is an I/O error") {
    CHECK_THROWS_AS(load_pairs(dir.file("nope.jsonl"), corpus, reg), IoError);
  }

  SECTION("out-of-vocabulary words map to the unknown id") {
    dir.write("p.jsonl", R"({"context": "hi stranger", "response": "there"})"
                         "\n");
    const auto result = load_pairs(dir.file("p.jsonl"), corpus, reg);
    REQUIRE(result.pairs.size() == 1);
    CHECK(result.pairs[0].context ==
          std::vector<int>{reg.vocab.id_or_unk("hi"), Vocabulary::kUnk});
  }
}

TEST_CASE("pair files round-trip through save_pairs") {
  TempDir dir;
  auto reg = make_registry({"alpha", "beta", "gamma"});
  auto corpus = reg.add_corpus("c");
  dir.write("in.jsonl",
            R"({"context": "Alpha, beta!", "response": "gamma gamma"})"
            "\n"
            R"({"context": "beta", "response": "alpha"})"
            "\n");
  const auto loaded = load_pairs(dir.file("in.jsonl"), corpus, reg);
  save_pairs(dir.file("out.jsonl"), loaded.pairs, reg);
  const auto reloaded = load_pairs(dir.file("out.jsonl"), corpus, reg);
  REQUIRE(reloaded.pairs.size() == loaded.pairs.size());
  CHECK(reloaded.skipped == 0);
  for (std::size_t i = 0; i < loaded.pairs.size(); ++i) {
    CHECK(reloaded.pairs[i].context == loaded.pairs[i].context);
    CHECK(reloaded.pairs[i].response == loaded.pairs[i].response);
  }
}

TEST_CASE("registry rejects duplicate corpus names") {
  CorpusRegistry reg;
  reg.add_corpus("twitter");
  CHECK_THROWS_AS(reg.add_corpus("twitter"), ValidationError);
}

TEST_CASE("registry file round-trips") {
  TempDir dir;
  RegistryFile rf;
  rf.registry.seed = 7;
  rf.registry.vocab.add("hello");
  rf.registry.vocab.add("world");
  rf.registry.add_corpus("a");
  rf.registry.add_corpus("b");
  rf.entries.push_back({"a", "a.train.jsonl", "a.test.jsonl", 10, 2});
  rf.entries.push_back({"b", "b.train.jsonl", "b.test.jsonl", 12, 3});
  rf.save(dir.file("registry.json"));
  const auto back = RegistryFile::load(dir.file("registry.json"));
  CHECK(back.registry.seed == 7);
  CHECK(back.registry.vocab.hash() == rf.registry.vocab.hash());
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[1].train_pairs == 12);
  CHECK(back.registry.corpus_index("b") == 1);
}

TEST_CASE("synthesis is deterministic and separable") {
  auto spec = SynthesisSpec::standard(3, 10, 7);
  const auto first = synthesize_corpora(spec);
  const auto second = synthesize_corpora(spec);
  REQUIRE(first.size() == 3);
  for (std::size_t d = 0; d < 3; ++d) {
    REQUIRE(first[d].size() == 10);
    for (std::size_t p = 0; p < 10; ++p) {
      CHECK(first[d][p].context == second[d][p].context);
      CHECK(first[d][p].response == second[d][p].response);
    }
  }

  // Exclusive keywords never leak across domains, and every context
  // carries at least one of its own.
  std::vector<std::set<std::string>> keyword_sets;
  for (const auto& dom : spec.domains)
    keyword_sets.emplace_back(dom.keywords.begin(), dom.keywords.end());
  for (std::size_t d = 0; d < 3; ++d) {
    for (const auto& pair : first[d]) {
      bool has_own = false;
      for (const auto& tok : pair.context) {
        for (std::size_t other = 0; other < 3; ++other) {
          if (other == d) {
            has_own = has_own || keyword_sets[other].count(tok) > 0;
          } else {
            CHECK(!keyword_sets[other].count(tok));
          }
        }
      }
      CHECK(has_own);
      for (const auto& tok : pair.response)
        for (std::size_t other = 0; other < 3; ++other)
          if (other != d) CHECK(!keyword_sets[other].count(tok));
    }
  }
}

TEST_CASE("synthesis keyword ratio holds per response") {
  auto spec = SynthesisSpec::standard(2, 50, 3);
  spec.keyword_ratio = 0.5;
  const auto corpora = synthesize_corpora(spec);
  for (std::size_t d = 0; d < 2; ++d) {
    std::set<std::string> keys(spec.domains[d].keywords.begin(),
                               spec.domains[d].keywords.end());
    for (const auto& pair : corpora[d]) {
      const auto len = static_cast<double>(pair.response.size());
      double nkey = 0;
      for (const auto& tok : pair.response) nkey += keys.count(tok) ? 1 : 0;
      CHECK(std::abs(nkey - 0.5 * len) <= 1.0);
    }
  }
}

TEST_CASE("synthesis rejects bad specs") {
  auto spec = SynthesisSpec::standard(2, 5, 0);
  spec.domains[1].keywords.push_back(spec.domains[0].keywords[0]);  // overlap
  CHECK_THROWS_AS(synthesize_corpora(spec), ValidationError);

  auto zero = SynthesisSpec::standard(2, 5, 0);
  zero.pairs_per_domain = 0;
  CHECK_THROWS_AS(synthesize_corpora(zero), ValidationError);
}
