#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pgnmt/tensor.hpp"

namespace pgnmt {

// Ordered merge rules; rank equals list position. Pairs are stored with their
// "##" decoration ("a" is word-initial, "##a" word-internal), so the right
// constituent always carries "##".
struct MergeTable {
  std::vector<std::pair<std::string, std::string>> merges;
};

struct Vocabulary {
  static constexpr Index kPad = 0;
  static constexpr Index kBos = 1;
  static constexpr Index kEos = 2;
  static constexpr Index kUnk = 3;

  std::vector<std::string> id_to_subword;
  std::unordered_map<std::string, Index> subword_to_id;

  Index size() const { return static_cast<Index>(id_to_subword.size()); }
  // -1 when absent.
  Index id_of(std::string_view subword) const;
  const std::string& subword(Index id) const;
  static bool is_special(Index id) { return id >= 0 && id <= 3; }
};

struct Tokenizer {
  MergeTable merges;
  Vocabulary vocab;

  std::string serialize() const;
  static Tokenizer parse(std::string_view text);
  void save(const std::string& path) const;
  static Tokenizer load(const std::string& path);
  // Fingerprint of the serialized bytes; checkpoints record it so a model is
  // never run with a foreign vocabulary.
  std::uint64_t hash() const;
};

struct TokenSequence {
  std::vector<Index> ids;
  // Per-token [start, end) codepoint spans into the original text.
  std::vector<std::pair<Index, Index>> offsets;
};

// Joint BPE training over whitespace-split words: repeatedly merges the
// most frequent adjacent symbol pair (overlapping occurrences counted,
// frequency >= 2, ties by lexicographic (left, right)) until the vocabulary
// reaches `vocab_budget`. Ids: specials 0-3, then character symbols in
// lexicographic order, then merge outputs in rank order.
Tokenizer train_bpe(std::span<const std::string> corpus, Index vocab_budget);

TokenSequence encode(std::string_view text, const Tokenizer& tokenizer);
std::string decode(std::span<const Index> ids, const Vocabulary& vocab);

// UTF-8 codepoint split; invalid bytes pass through one byte at a time.
std::vector<std::string> utf8_codepoints(std::string_view text);

}  // namespace pgnmt
