#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pgnmt/bpe.hpp"

namespace pgnmt {

struct ParallelCorpus {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string name;
  std::string provenance;

  std::size_t size() const { return pairs.size(); }
};

struct LoadedCorpus {
  ParallelCorpus corpus;
  std::size_t dropped = 0;  // pairs removed because a side was empty after trimming
};

struct OverlapStats {
  long long common_tokens = 0;
  long long total_target_tokens = 0;
  long long total_lines = 0;
  double avg_common_per_line = 0.0;
  double avg_common_per_target_token = 0.0;
};

struct SyntheticPairSpec {
  Index vocab_size = 1000;  // lexemes in the artificial lexicon
  Index min_len = 3;
  Index max_len = 12;
  double cognate_rate = 0.5;       // lexemes mapped to identical target forms
  double sound_change_rate = 0.0;  // lexemes mapped by a fixed character bijection
  double noise_rate = 0.0;         // sentence pairs replaced by unrelated targets
  Index num_pairs = 1000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ControlledSubsets {
  ParallelCorpus high;
  ParallelCorpus low;
  // Positions of the subset members in the originating test corpus.
  std::vector<Index> high_indices;
  std::vector<Index> low_indices;
  double mean_high = 0.0;
  double mean_low = 0.0;
};

// Reads two line-aligned UTF-8 files; lines are NFC-normalized and trimmed,
// CRLF and LF agree byte-for-byte after loading. Pairs with an empty side are
// dropped and counted. Unequal line counts raise a validation error naming
// both counts.
LoadedCorpus load_parallel(const std::string& src_path, const std::string& tgt_path);

// Writes one sentence per line, UTF-8 with LF endings.
void save_corpus(const ParallelCorpus& corpus, const std::string& src_path,
                 const std::string& tgt_path);

// Seeded disjoint split. The test block is drawn first from the shuffled
// order, so a fixed (corpus, seed, test_n) shares the same test set across
// different train_n values.
std::pair<ParallelCorpus, ParallelCorpus> subsample(const ParallelCorpus& corpus, Index train_n,
                                                    Index test_n, std::uint64_t seed);

// A target token counts as common when its id occurs in the paired source
// sentence's ids. Specials (PAD/BOS/EOS/UNK) are excluded everywhere.
OverlapStats token_heuristics(const ParallelCorpus& corpus, const Tokenizer& tokenizer);

// Fraction of non-special target positions whose id occurs among the source
// ids (specials excluded from both sides). Target without content tokens is a
// contract error.
double shared_subword_fraction(std::span<const Index> src_ids, std::span<const Index> tgt_ids);

// Pairs sorted by shared_subword_fraction descending (ties by original
// index): top k form the high-overlap subset, bottom k the low-overlap one.
ControlledSubsets build_controlled_subsets(const ParallelCorpus& test_corpus,
                                           const Tokenizer& tokenizer, Index k);

ParallelCorpus make_identity_corpus(std::span<const std::string> sentences);

// Seeded generator for a related language pair: unigram sentences over an
// artificial lexicon; per-lexeme target mapping is identity (cognate),
// a fixed consonant cycle (sound change), or an unrelated lexeme; whole
// target sentences are replaced with probability noise_rate.
ParallelCorpus synthesize_language_pair(const SyntheticPairSpec& spec);

}  // namespace pgnmt
