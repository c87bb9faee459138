#include "pgnmt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "pgnmt/errors.hpp"
#include "pgnmt/rng.hpp"
#include "pgnmt/util.hpp"

namespace pgnmt {

namespace {

std::string nfc_normalize(const std::string& text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw ContractError("unicode normalizer unavailable");
  icu::UnicodeString s = icu::UnicodeString::fromUTF8(text);
  icu::UnicodeString normalized = nfc->normalize(s, status);
  if (U_FAILURE(status)) {
    throw ValidationError("text could not be NFC-normalized: " + text.substr(0, 40));
  }
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return s.substr(b, e - b);
}

// Splits on LF; a trailing CR on any line is stripped so CRLF and LF inputs
// agree. A final newline does not create an extra empty line.
std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t at = 0;
  while (at <= text.size()) {
    const std::size_t nl = text.find('\n', at);
    if (nl == std::string::npos) {
      if (at < text.size()) lines.push_back(text.substr(at));
      break;
    }
    std::string line = text.substr(at, nl - at);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    at = nl + 1;
  }
  return lines;
}

std::vector<Index> content_ids(const std::string& text, const Tokenizer& tokenizer) {
  std::vector<Index> out;
  for (Index id : encode(text, tokenizer).ids) {
    if (!Vocabulary::is_special(id)) out.push_back(id);
  }
  return out;
}

}  // namespace

LoadedCorpus load_parallel(const std::string& src_path, const std::string& tgt_path) {
  const std::vector<std::string> src_lines = split_lines(read_text_file(src_path));
  const std::vector<std::string> tgt_lines = split_lines(read_text_file(tgt_path));
  if (src_lines.size() != tgt_lines.size()) {
    throw ValidationError("aligned files disagree: " + src_path + " has " +
                          std::to_string(src_lines.size()) + " lines, " + tgt_path + " has " +
                          std::to_string(tgt_lines.size()));
  }
  LoadedCorpus out;
  out.corpus.name = src_path + " || " + tgt_path;
  out.corpus.provenance = "loaded from " + src_path + " and " + tgt_path;
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    std::string s = trim(nfc_normalize(src_lines[i]));
    std::string t = trim(nfc_normalize(tgt_lines[i]));
    if (s.empty() || t.empty()) {
      ++out.dropped;
      continue;
    }
    out.corpus.pairs.emplace_back(std::move(s), std::move(t));
  }
  return out;
}

void save_corpus(const ParallelCorpus& corpus, const std::string& src_path,
                 const std::string& tgt_path) {
  std::string src, tgt;
  for (const auto& [s, t] : corpus.pairs) {
    src += s;
    src += '\n';
    tgt += t;
    tgt += '\n';
  }
  write_text_file(src_path, src);
  write_text_file(tgt_path, tgt);
}

std::pair<ParallelCorpus, ParallelCorpus> subsample(const ParallelCorpus& corpus, Index train_n,
                                                    Index test_n, std::uint64_t seed) {
  if (train_n < 0 || test_n < 0) throw ValidationError("split sizes must be non-negative");
  const Index n = static_cast<Index>(corpus.size());
  if (train_n + test_n > n) {
    throw ValidationError("split needs " + std::to_string(train_n) + " train + " +
                          std::to_string(test_n) + " test = " + std::to_string(train_n + test_n) +
                          " pairs, corpus has " + std::to_string(n) + " (short by " +
                          std::to_string(train_n + test_n - n) + ")");
  }
  Rng rng = seeded_rng(seed);
  const std::vector<std::size_t> order = permutation(rng, static_cast<std::size_t>(n));

  ParallelCorpus train, test;
  train.name = corpus.name + "/train";
  test.name = corpus.name + "/test";
  train.provenance = corpus.provenance;
  test.provenance = corpus.provenance;
  for (Index i = 0; i < test_n; ++i) {
    test.pairs.push_back(corpus.pairs[order[static_cast<std::size_t>(i)]]);
  }
  for (Index i = 0; i < train_n; ++i) {
    train.pairs.push_back(corpus.pairs[order[static_cast<std::size_t>(test_n + i)]]);
  }
  return {std::move(train), std::move(test)};
}

OverlapStats token_heuristics(const ParallelCorpus& corpus, const Tokenizer& tokenizer) {
  if (corpus.pairs.empty()) throw ContractError("token_heuristics: empty corpus");
  OverlapStats stats;
  stats.total_lines = static_cast<long long>(corpus.size());
  for (const auto& [src, tgt] : corpus.pairs) {
    const std::vector<Index> s = content_ids(src, tokenizer);
    const std::vector<Index> t = content_ids(tgt, tokenizer);
    const std::unordered_set<Index> src_set(s.begin(), s.end());
    for (Index id : t) {
      ++stats.total_target_tokens;
      if (src_set.count(id) != 0) ++stats.common_tokens;
    }
  }
  stats.avg_common_per_line =
      static_cast<double>(stats.common_tokens) / static_cast<double>(stats.total_lines);
  stats.avg_common_per_target_token =
      stats.total_target_tokens == 0
          ? 0.0
          : static_cast<double>(stats.common_tokens) / static_cast<double>(stats.total_target_tokens);
  return stats;
}

double shared_subword_fraction(std::span<const Index> src_ids, std::span<const Index> tgt_ids) {
  std::unordered_set<Index> src_set;
  for (Index id : src_ids) {
    if (!Vocabulary::is_special(id)) src_set.insert(id);
  }
  long long content = 0, shared = 0;
  for (Index id : tgt_ids) {
    if (Vocabulary::is_special(id)) continue;
    ++content;
    if (src_set.count(id) != 0) ++shared;
  }
  if (content == 0) {
    throw ContractError("shared_subword_fraction: target has no content tokens");
  }
  return static_cast<double>(shared) / static_cast<double>(content);
}

ControlledSubsets build_controlled_subsets(const ParallelCorpus& test_corpus,
                                           const Tokenizer& tokenizer, Index k) {
  if (k < 1) throw ValidationError("subset size k must be >= 1, got " + std::to_string(k));
  const Index n = static_cast<Index>(test_corpus.size());
  if (n < 2 * k) {
    throw ValidationError("test set of " + std::to_string(n) +
                          " pairs cannot supply two disjoint subsets of k=" + std::to_string(k));
  }
  std::vector<double> fraction(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto& [src, tgt] = test_corpus.pairs[static_cast<std::size_t>(i)];
    fraction[static_cast<std::size_t>(i)] =
        shared_subword_fraction(encode(src, tokenizer).ids, encode(tgt, tokenizer).ids);
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double fa = fraction[static_cast<std::size_t>(a)];
    const double fb = fraction[static_cast<std::size_t>(b)];
    if (fa != fb) return fa > fb;
    return a < b;
  });

  ControlledSubsets out;
  out.high.name = test_corpus.name + "/high-overlap";
  out.low.name = test_corpus.name + "/low-overlap";
  out.high.provenance = test_corpus.provenance;
  out.low.provenance = test_corpus.provenance;
  for (Index i = 0; i < k; ++i) {
    const Index hi = order[static_cast<std::size_t>(i)];
    const Index lo = order[static_cast<std::size_t>(n - k + i)];
    out.high.pairs.push_back(test_corpus.pairs[static_cast<std::size_t>(hi)]);
    out.low.pairs.push_back(test_corpus.pairs[static_cast<std::size_t>(lo)]);
    out.high_indices.push_back(hi);
    out.low_indices.push_back(lo);
    out.mean_high += fraction[static_cast<std::size_t>(hi)];
    out.mean_low += fraction[static_cast<std::size_t>(lo)];
  }
  out.mean_high /= static_cast<double>(k);
  out.mean_low /= static_cast<double>(k);
  return out;
}

ParallelCorpus make_identity_corpus(std::span<const std::string> sentences) {
  if (sentences.empty()) throw ValidationError("identity corpus needs at least one sentence");
  ParallelCorpus out;
  out.name = "identity";
  out.provenance = "identity corpus over " + std::to_string(sentences.size()) + " sentences";
  for (const auto& s : sentences) out.pairs.emplace_back(s, s);
  return out;
}

// ---- synthetic language pair ----

void SyntheticPairSpec::validate() const {
  if (vocab_size < 1) throw ValidationError("synthetic vocab_size must be >= 1");
  if (min_len < 1 || max_len < min_len) {
    throw ValidationError("sentence length range [" + std::to_string(min_len) + ", " +
                          std::to_string(max_len) + "] is not ordered");
  }
  for (double r : {cognate_rate, sound_change_rate, noise_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) {
      throw ValidationError("synthetic rates must lie in [0, 1], got " + std::to_string(r));
    }
  }
  if (cognate_rate + sound_change_rate > 1.0 + 1e-12) {
    throw ValidationError("cognate_rate + sound_change_rate = " +
                          std::to_string(cognate_rate + sound_change_rate) + " exceeds 1");
  }
  if (num_pairs < 1) throw ValidationError("synthetic num_pairs must be >= 1");
}

namespace {

constexpr std::string_view kConsonants = "bdgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

// CV-syllable word, 1 to 3 syllables.
std::string random_word(Rng& rng) {
  const std::size_t syllables = 1 + uniform_index(rng, 3);
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) {
    w += kConsonants[uniform_index(rng, kConsonants.size())];
    w += kVowels[uniform_index(rng, kVowels.size())];
  }
  return w;
}

std::string fresh_word(Rng& rng, std::unordered_set<std::string>& used) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::string w = random_word(rng);
    if (used.insert(w).second) return w;
  }
  // Tiny alphabets can exhaust short shapes; extend deterministically.
  for (std::uint64_t n = 0;; ++n) {
    std::string w = random_word(rng) + std::to_string(n);
    if (used.insert(w).second) return w;
  }
}

}  // namespace

ParallelCorpus synthesize_language_pair(const SyntheticPairSpec& spec) {
  spec.validate();
  const std::size_t v = static_cast<std::size_t>(spec.vocab_size);

  // Source lexicon.
  Rng lex_rng = seeded_rng(derive_seed(spec.seed, "lexicon"));
  std::unordered_set<std::string> used;
  std::vector<std::string> source_form(v);
  for (auto& w : source_form) w = fresh_word(lex_rng, used);

  // Per-seed sound change: a single random cycle over the consonants, so
  // every consonant moves and the map is a bijection.
  Rng sc_rng = seeded_rng(derive_seed(spec.seed, "soundchange"));
  const std::vector<std::size_t> cycle = permutation(sc_rng, kConsonants.size());
  char sc_map[256];
  for (int i = 0; i < 256; ++i) sc_map[i] = static_cast<char>(i);
  for (std::size_t i = 0; i < cycle.size(); ++i) {
    const char from = kConsonants[cycle[i]];
    const char to = kConsonants[cycle[(i + 1) % cycle.size()]];
    sc_map[static_cast<unsigned char>(from)] = to;
  }

  // Exact assignment counts via a seeded permutation of the lexicon.
  Rng assign_rng = seeded_rng(derive_seed(spec.seed, "assign"));
  const std::vector<std::size_t> order = permutation(assign_rng, v);
  std::size_t n_cognate = static_cast<std::size_t>(std::llround(spec.cognate_rate * static_cast<double>(v)));
  n_cognate = std::min(n_cognate, v);
  std::size_t n_sound = static_cast<std::size_t>(std::llround(spec.sound_change_rate * static_cast<double>(v)));
  n_sound = std::min(n_sound, v - n_cognate);

  std::vector<std::string> target_form(v);
  for (std::size_t rank = 0; rank < v; ++rank) {
    const std::size_t lexeme = order[rank];
    if (rank < n_cognate) {
      target_form[lexeme] = source_form[lexeme];
    } else if (rank < n_cognate + n_sound) {
      std::string w = source_form[lexeme];
      for (char& ch : w) ch = sc_map[static_cast<unsigned char>(ch)];
      target_form[lexeme] = w;
    } else {
      target_form[lexeme] = fresh_word(lex_rng, used);
    }
  }

  ParallelCorpus out;
  out.name = "synthetic";
  out.provenance = "synthetic pair: vocab=" + std::to_string(spec.vocab_size) + " len=[" +
                   std::to_string(spec.min_len) + "," + std::to_string(spec.max_len) +
                   "] cognate=" + std::to_string(spec.cognate_rate) +
                   " soundchange=" + std::to_string(spec.sound_change_rate) +
                   " noise=" + std::to_string(spec.noise_rate) +
                   " pairs=" + std::to_string(spec.num_pairs) +
                   " seed=" + std::to_string(spec.seed);

  Rng sent_rng = seeded_rng(derive_seed(spec.seed, "sentences"));
  const std::size_t span = static_cast<std::size_t>(spec.max_len - spec.min_len + 1);
  auto draw_lexemes = [&](std::vector<std::size_t>& ids) {
    const std::size_t len = static_cast<std::size_t>(spec.min_len) + uniform_index(sent_rng, span);
    ids.resize(len);
    for (auto& id : ids) id = uniform_index(sent_rng, v);
  };
  auto join = [](const std::vector<std::size_t>& ids, const std::vector<std::string>& forms) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i > 0) s += ' ';
      s += forms[ids[i]];
    }
    return s;
  };

  std::vector<std::size_t> ids, noise_ids;
  for (Index p = 0; p < spec.num_pairs; ++p) {
    draw_lexemes(ids);
    const std::string src = join(ids, source_form);
    const bool noisy = uniform01(sent_rng) < spec.noise_rate;
    std::string tgt;
    if (noisy) {
      draw_lexemes(noise_ids);
      tgt = join(noise_ids, target_form);
    } else {
      tgt = join(ids, target_form);
    }
    out.pairs.emplace_back(src, std::move(tgt));
  }
  return out;
}

}  // namespace pgnmt
