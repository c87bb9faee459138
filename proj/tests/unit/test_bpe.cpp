#include <algorithm>
#include <string>
#include <vector>

#include "bpe_oracle.hpp"
#include "doctest.h"
#include "pgnmt/bpe.hpp"
#include "pgnmt/errors.hpp"
#include "pgnmt/rng.hpp"
#include "pgnmt/util.hpp"

using namespace pgnmt;

namespace {

std::vector<std::string> random_corpus(Rng& rng, std::span<const std::string> alphabet,
                                       std::size_t sentences, std::size_t max_words,
                                       std::size_t max_chars) {
  std::vector<std::string> corpus;
  for (std::size_t s = 0; s < sentences; ++s) {
    std::string line;
    const std::size_t words = 1 + uniform_index(rng, max_words);
    for (std::size_t w = 0; w < words; ++w) {
      if (w) line += ' ';
      const std::size_t chars = 1 + uniform_index(rng, max_chars);
      for (std::size_t c = 0; c < chars; ++c)
        line += alphabet[uniform_index(rng, alphabet.size())];
    }
    corpus.push_back(std::move(line));
  }
  return corpus;
}

}  // namespace

TEST_CASE("first merge on ab ab ac") {
  std::vector<std::string> corpus = {"ab", "ab", "ac"};
  // 4 specials + {##b, ##c, a} = 7; budget 8 leaves room for one merge.
  Tokenizer tok = train_bpe(corpus, 8);
  REQUIRE(tok.merges.merges.size() == 1);
  CHECK(tok.merges.merges[0].first == "a");
  CHECK(tok.merges.merges[0].second == "##b");
  CHECK(tok.vocab.size() == 8);
  CHECK(tok.vocab.id_of("ab") >= 4);

  TokenSequence seq = encode("ab ac", tok);
  REQUIRE(seq.ids.size() == 3);
  CHECK(tok.vocab.subword(seq.ids[0]) == "ab");
  CHECK(tok.vocab.subword(seq.ids[1]) == "a");
  CHECK(tok.vocab.subword(seq.ids[2]) == "##c");
  REQUIRE(seq.offsets.size() == 3);
  CHECK(seq.offsets[0] == std::pair<Index, Index>{0, 2});
  CHECK(seq.offsets[1] == std::pair<Index, Index>{3, 4});
  CHECK(seq.offsets[2] == std::pair<Index, Index>{4, 5});
}

TEST_CASE("aaaa admits exactly one merge") {
  // Symbols [a,##a,##a,##a]: only (##a,##a) reaches frequency 2 (overlapping
  // occurrences), and after merging it every remaining pair occurs once, so
  // training stops with the budget unfilled. Expectation frozen from the
  // naive oracle.
  std::vector<std::string> corpus = {"aaaa"};
  auto oracle = pgnmt::testing::naive_train_bpe(corpus, 12);
  REQUIRE(oracle.merges.size() == 1);
  CHECK(oracle.merges[0] == std::pair<std::string, std::string>{"##a", "##a"});

  Tokenizer tok = train_bpe(corpus, 12);
  REQUIRE(tok.merges.merges.size() == 1);
  CHECK(tok.merges.merges[0] == oracle.merges[0]);
  CHECK(tok.vocab.id_of("##aa") >= 0);
  CHECK(tok.vocab.size() == 7);  // 4 specials + {##a, a} + ##aa
}

TEST_CASE("degenerate budget gives a character vocabulary") {
  std::vector<std::string> corpus = {"ab", "ba"};
  // Characters: a, b, ##a, ##b.
  Tokenizer tok = train_bpe(corpus, 8);
  CHECK(tok.merges.merges.empty());
  CHECK(tok.vocab.size() == 8);
  CHECK_THROWS_AS(train_bpe(corpus, 7), ValidationError);
  std::vector<std::string> empty = {"", "   "};
  CHECK_THROWS_AS(train_bpe(empty, 100), ValidationError);
}

TEST_CASE("encode basics") {
  std::vector<std::string> corpus = {"hello hello world"};
  Tokenizer tok = train_bpe(corpus, 64);
  CHECK(encode("", tok).ids.empty());

  TokenSequence one = encode("hello", tok);
  REQUIRE(one.ids.size() == 1);
  CHECK(tok.vocab.subword(one.ids[0]) == "hello");

  TokenSequence unk = encode("hellZ", tok);
  CHECK(std::count(unk.ids.begin(), unk.ids.end(), Vocabulary::kUnk) == 1);
  CHECK(unk.ids.back() == Vocabulary::kUnk);
}

TEST_CASE("offsets are ordered spans that reconstruct the text") {
  std::vector<std::string> corpus = {"abc abd", "cd cd ab"};
  Tokenizer tok = train_bpe(corpus, 32);
  const std::string text = "abc cd zab";
  TokenSequence seq = encode(text, tok);
  auto cps = utf8_codepoints(text);
  Index prev_end = 0;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    auto [start, end] = seq.offsets[i];
    CHECK(start >= prev_end);
    CHECK(end > start);
    prev_end = end;
    std::string surface;
    for (Index p = start; p < end; ++p) surface += cps[static_cast<std::size_t>(p)];
    if (seq.ids[i] != Vocabulary::kUnk) {
      const std::string& sub = tok.vocab.subword(seq.ids[i]);
      CHECK(surface == (sub.rfind("##", 0) == 0 ? sub.substr(2) : sub));
    }
  }
}

TEST_CASE("round trip over the training alphabet") {
  Rng rng = seeded_rng(2024);
  std::vector<std::string> alphabet = {"a", "b", "c", "d", "e"};
  std::vector<std::string> corpus = random_corpus(rng, alphabet, 50, 8, 6);
  Tokenizer tok = train_bpe(corpus, 120);
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::string> one = random_corpus(rng, alphabet, 1, 6, 7);
    CHECK(decode(encode(one[0], tok).ids, tok.vocab) == one[0]);
  }
}

TEST_CASE("decode handles specials and bad ids") {
  std::vector<std::string> corpus = {"xy xy"};
  Tokenizer tok = train_bpe(corpus, 16);
  CHECK(decode({}, tok.vocab).empty());
  const Index x = tok.vocab.id_of("xy");
  REQUIRE(x >= 0);
  std::vector<Index> framed = {Vocabulary::kBos, x, Vocabulary::kEos};
  CHECK(decode(framed, tok.vocab) == "xy");
  std::vector<Index> bad = {x, 999};
  CHECK_THROWS_AS(decode(bad, tok.vocab), ContractError);
}

TEST_CASE("training is deterministic at the byte level") {
  std::vector<std::string> corpus = {"the cat sat", "the cat", "a cat sat there"};
  Tokenizer a = train_bpe(corpus, 48);
  Tokenizer b = train_bpe(corpus, 48);
  CHECK(a.serialize() == b.serialize());
  CHECK(a.hash() == b.hash());
}

TEST_CASE("smaller budgets never merge more") {
  Rng rng = seeded_rng(77);
  std::vector<std::string> alphabet = {"a", "b", "c", "d"};
  std::vector<std::string> corpus = random_corpus(rng, alphabet, 80, 8, 6);
  Tokenizer big = train_bpe(corpus, 90);
  Tokenizer small = train_bpe(corpus, 40);
  REQUIRE(small.merges.merges.size() <= big.merges.merges.size());
  // Budget only truncates the merge list.
  for (std::size_t i = 0; i < small.merges.merges.size(); ++i)
    CHECK(small.merges.merges[i] == big.merges.merges[i]);
  for (int i = 0; i < 50; ++i) {
    std::vector<std::string> one = random_corpus(rng, alphabet, 1, 6, 7);
    CHECK(encode(one[0], small).ids.size() >= encode(one[0], big).ids.size());
  }
}

TEST_CASE("joint vocabulary treats both sides identically") {
  std::vector<std::string> src = {"alpha beta", "beta gamma"};
  std::vector<std::string> tgt = {"beta delta", "alpha alpha"};
  std::vector<std::string> joint = src;
  joint.insert(joint.end(), tgt.begin(), tgt.end());
  Tokenizer tok = train_bpe(joint, 96);
  TokenSequence as_src = encode("alpha beta", tok);
  TokenSequence as_tgt = encode("alpha beta", tok);
  CHECK(as_src.ids == as_tgt.ids);
  for (Index id : as_src.ids) CHECK(id >= 4);
}

TEST_CASE("incremental trainer matches the naive oracle") {
  Rng rng = seeded_rng(31337);
  std::vector<std::string> alphabets[] = {
      {"a", "b"},
      {"a", "b", "c", "d", "e", "f"},
      {"х", "о", "д", "ा", "क"},  // multi-byte codepoints
  };
  for (int trial = 0; trial < 30; ++trial) {
    const auto& alphabet = alphabets[trial % 3];
    std::vector<std::string> corpus =
        random_corpus(rng, alphabet, 5 + uniform_index(rng, 40), 6, 8);
    long long base = 4;
    {
      std::set<std::string> chars;
      for (const auto& line : corpus)
        for (const auto& w : split_whitespace(line)) {
          auto cps = utf8_codepoints(w);
          for (std::size_t i = 0; i < cps.size(); ++i)
            chars.insert(i == 0 ? cps[i] : "##" + cps[i]);
        }
      base += static_cast<long long>(chars.size());
    }
    const long long budget = base + static_cast<long long>(uniform_index(rng, 40));
    auto oracle = pgnmt::testing::naive_train_bpe(corpus, budget);
    Tokenizer tok = train_bpe(corpus, budget);
    REQUIRE(tok.merges.merges.size() == oracle.merges.size());
    for (std::size_t i = 0; i < oracle.merges.size(); ++i) CHECK(tok.merges.merges[i] == oracle.merges[i]);
    REQUIRE(static_cast<std::size_t>(tok.vocab.size()) == oracle.vocab.size());
    for (std::size_t i = 0; i < oracle.vocab.size(); ++i)
      CHECK(tok.vocab.id_to_subword[i] == oracle.vocab[i]);
  }
}

TEST_CASE("tokenizer file round trip and validation") {
  std::vector<std::string> corpus = {"pointer generator", "pointer network"};
  Tokenizer tok = train_bpe(corpus, 64);
  const std::string bytes = tok.serialize();
  CHECK(bytes.rfind("bpe-v1 " + std::to_string(tok.vocab.size()), 0) == 0);
  Tokenizer back = Tokenizer::parse(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(encode("pointer network", back).ids == encode("pointer network", tok).ids);

  CHECK_THROWS_AS(Tokenizer::parse("not a header\n"), ValidationError);
  CHECK_THROWS_AS(Tokenizer::parse("bpe-v1 x\n#vocab\n"), ValidationError);
  CHECK_THROWS_AS(Tokenizer::parse("bpe-v1 5\na b\n#vocab\n"), ValidationError);  // no tab
  CHECK_THROWS_AS(Tokenizer::parse("bpe-v1 9\n#vocab\n<pad>\n<bos>\n<eos>\n<unk>\n"),
                  ValidationError);  // count mismatch
  CHECK_THROWS_AS(Tokenizer::parse("bpe-v1 4\n#vocab\n<pad>\n<bos>\n<unk>\n<eos>\n"),
                  ValidationError);  // specials out of order
}
