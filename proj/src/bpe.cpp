#include "pgnmt/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <queue>
#include <set>
#include <sstream>

#include "pgnmt/errors.hpp"
#include "pgnmt/util.hpp"

namespace pgnmt {

namespace {

const char* const kSpecials[4] = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::string strip_continuation(const std::string& s) {
  return s.rfind("##", 0) == 0 ? s.substr(2) : s;
}

std::string merged_symbol(const std::string& left, const std::string& right) {
  return left + strip_continuation(right);
}

// Decorated character symbols of one word: first codepoint bare, the rest
// "##"-prefixed.
std::vector<std::string> word_symbols(std::string_view word) {
  std::vector<std::string> cps = utf8_codepoints(word);
  std::vector<std::string> syms;
  syms.reserve(cps.size());
  for (std::size_t i = 0; i < cps.size(); ++i)
    syms.push_back(i == 0 ? cps[i] : "##" + cps[i]);
  return syms;
}

struct TrainWord {
  std::vector<std::int32_t> syms;
  std::int64_t freq = 0;
};

std::uint64_t pair_key(std::int32_t a, std::int32_t b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

struct HeapEntry {
  std::int64_t count;
  std::string left, right;
  std::uint64_t key;
};

// Max-heap on count; equal counts surface the lexicographically smallest
// (left, right) pair first.
struct HeapLess {
  bool operator()(const HeapEntry& a, const HeapEntry& b) const {
    if (a.count != b.count) return a.count < b.count;
    if (a.left != b.left) return a.left > b.left;
    return a.right > b.right;
  }
};

}  // namespace

std::vector<std::string> utf8_codepoints(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xf0)
      len = 4;
    else if (lead >= 0xe0)
      len = 3;
    else if (lead >= 0xc0)
      len = 2;
    len = std::min(len, text.size() - i);
    // Truncated continuation bytes degrade to single-byte symbols.
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xc0) != 0x80) {
        len = k;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Index Vocabulary::id_of(std::string_view subword) const {
  auto it = subword_to_id.find(std::string(subword));
  return it == subword_to_id.end() ? -1 : it->second;
}

const std::string& Vocabulary::subword(Index id) const {
  if (id < 0 || id >= size())
    throw ContractError("vocabulary: id " + std::to_string(id) + " outside [0," +
                        std::to_string(size()) + ")");
  return id_to_subword[static_cast<std::size_t>(id)];
}

Tokenizer train_bpe(std::span<const std::string> corpus, Index vocab_budget) {
  // Distinct words with frequencies, in first-seen order.
  std::vector<std::string> word_text;
  std::vector<std::int64_t> word_freq;
  std::unordered_map<std::string, std::size_t> word_index;
  for (const std::string& sentence : corpus) {
    for (std::string& w : split_whitespace(sentence)) {
      auto [it, inserted] = word_index.try_emplace(w, word_text.size());
      if (inserted) {
        word_text.push_back(std::move(w));
        word_freq.push_back(0);
      }
      word_freq[it->second] += 1;
    }
  }
  if (word_text.empty()) throw ValidationError("train_bpe: empty corpus");

  // Symbol intern pool.
  std::vector<std::string> sym_name;
  std::unordered_map<std::string, std::int32_t> sym_id;
  auto intern = [&](const std::string& s) {
    auto [it, inserted] = sym_id.try_emplace(s, static_cast<std::int32_t>(sym_name.size()));
    if (inserted) sym_name.push_back(s);
    return it->second;
  };

  std::vector<TrainWord> words(word_text.size());
  std::set<std::string> alphabet;
  for (std::size_t w = 0; w < word_text.size(); ++w) {
    words[w].freq = word_freq[w];
    for (const std::string& s : word_symbols(word_text[w])) {
      alphabet.insert(s);
      words[w].syms.push_back(intern(s));
    }
  }

  const Index base_size = 4 + static_cast<Index>(alphabet.size());
  if (vocab_budget < base_size)
    throw ValidationError("train_bpe: budget " + std::to_string(vocab_budget) +
                          " below minimum " + std::to_string(base_size) +
                          " (reserved ids + character symbols)");

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::set<std::int32_t>> locations;
  std::priority_queue<HeapEntry, std::vector<HeapEntry>, HeapLess> heap;

  auto account_word = [&](std::int32_t w, std::int64_t sign) {
    const auto& syms = words[static_cast<std::size_t>(w)].syms;
    const std::int64_t f = words[static_cast<std::size_t>(w)].freq;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      const std::uint64_t key = pair_key(syms[i], syms[i + 1]);
      counts[key] += sign * f;
      if (sign > 0)
        locations[key].insert(w);
      else if (counts[key] <= 0)
        counts.erase(key);
    }
    if (sign < 0)
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) locations[pair_key(syms[i], syms[i + 1])].erase(w);
  };

  auto push_pair = [&](std::uint64_t key) {
    auto it = counts.find(key);
    if (it == counts.end() || it->second <= 0) return;
    const auto a = static_cast<std::int32_t>(key >> 32);
    const auto b = static_cast<std::int32_t>(key & 0xffffffffu);
    heap.push({it->second, sym_name[static_cast<std::size_t>(a)], sym_name[static_cast<std::size_t>(b)], key});
  };

  for (std::size_t w = 0; w < words.size(); ++w) account_word(static_cast<std::int32_t>(w), +1);
  for (const auto& [key, cnt] : counts) push_pair(key);

  MergeTable table;
  std::set<std::string> merged_outputs;
  Index vocab_size = base_size;

  while (vocab_size < vocab_budget && !heap.empty()) {
    HeapEntry top = heap.top();
    heap.pop();
    auto it = counts.find(top.key);
    if (it == counts.end() || it->second != top.count) continue;  // stale entry
    if (top.count < 2) break;

    const auto left_id = static_cast<std::int32_t>(top.key >> 32);
    const auto right_id = static_cast<std::int32_t>(top.key & 0xffffffffu);
    const std::string merged = merged_symbol(top.left, top.right);
    const std::int32_t merged_id = intern(merged);
    table.merges.emplace_back(top.left, top.right);
    if (!alphabet.count(merged) && merged_outputs.insert(merged).second) vocab_size += 1;

    const std::set<std::int32_t> touched_words = locations[top.key];
    std::set<std::uint64_t> touched_pairs;
    for (std::int32_t w : touched_words) {
      auto& syms = words[static_cast<std::size_t>(w)].syms;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) touched_pairs.insert(pair_key(syms[i], syms[i + 1]));
      account_word(w, -1);
      std::vector<std::int32_t> next;
      next.reserve(syms.size());
      std::size_t i = 0;
      while (i < syms.size()) {
        if (i + 1 < syms.size() && syms[i] == left_id && syms[i + 1] == right_id) {
          next.push_back(merged_id);
          i += 2;
        } else {
          next.push_back(syms[i]);
          i += 1;
        }
      }
      syms = std::move(next);
      account_word(w, +1);
      for (std::size_t j = 0; j + 1 < syms.size(); ++j) touched_pairs.insert(pair_key(syms[j], syms[j + 1]));
    }
    for (std::uint64_t key : touched_pairs) push_pair(key);
  }

  Tokenizer tok;
  tok.merges = std::move(table);
  auto add_subword = [&](const std::string& s) {
    if (tok.vocab.subword_to_id.count(s)) return;
    tok.vocab.subword_to_id.emplace(s, tok.vocab.size());
    tok.vocab.id_to_subword.push_back(s);
  };
  for (const char* s : kSpecials) add_subword(s);
  for (const std::string& s : alphabet) add_subword(s);
  for (const auto& [l, r] : tok.merges.merges) add_subword(merged_symbol(l, r));
  return tok;
}

TokenSequence encode(std::string_view text, const Tokenizer& tokenizer) {
  std::unordered_map<std::string, std::size_t> rank;
  for (std::size_t i = 0; i < tokenizer.merges.merges.size(); ++i) {
    const auto& [l, r] = tokenizer.merges.merges[i];
    rank.try_emplace(l + "\t" + r, i);
  }

  TokenSequence out;
  std::size_t byte = 0;
  Index cp_pos = 0;
  const std::size_t n = text.size();
  while (byte < n) {
    while (byte < n && std::isspace(static_cast<unsigned char>(text[byte]))) {
      ++byte;
      ++cp_pos;  // whitespace is ASCII, one codepoint per byte
    }
    std::size_t start = byte;
    while (byte < n && !std::isspace(static_cast<unsigned char>(text[byte]))) ++byte;
    if (byte == start) continue;

    std::vector<std::string> syms = word_symbols(text.substr(start, byte - start));
    std::vector<std::pair<Index, Index>> spans;
    spans.reserve(syms.size());
    for (std::size_t i = 0; i < syms.size(); ++i)
      spans.emplace_back(cp_pos + static_cast<Index>(i), cp_pos + static_cast<Index>(i) + 1);
    cp_pos += static_cast<Index>(syms.size());

    // Repeatedly apply the present pair with the lowest rank; a rank can
    // never re-arise after being exhausted, so this equals rank-order
    // application.
    while (syms.size() > 1) {
      std::size_t best_rank = std::string::npos;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        auto it = rank.find(syms[i] + "\t" + syms[i + 1]);
        if (it != rank.end() && it->second < best_rank) best_rank = it->second;
      }
      if (best_rank == std::string::npos) break;
      const auto& [l, r] = tokenizer.merges.merges[best_rank];
      std::vector<std::string> next_syms;
      std::vector<std::pair<Index, Index>> next_spans;
      std::size_t i = 0;
      while (i < syms.size()) {
        if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
          next_syms.push_back(merged_symbol(l, r));
          next_spans.emplace_back(spans[i].first, spans[i + 1].second);
          i += 2;
        } else {
          next_syms.push_back(std::move(syms[i]));
          next_spans.push_back(spans[i]);
          i += 1;
        }
      }
      syms = std::move(next_syms);
      spans = std::move(next_spans);
    }

    for (std::size_t i = 0; i < syms.size(); ++i) {
      const Index id = tokenizer.vocab.id_of(syms[i]);
      out.ids.push_back(id < 0 ? Vocabulary::kUnk : id);
      out.offsets.push_back(spans[i]);
    }
  }
  return out;
}

std::string decode(std::span<const Index> ids, const Vocabulary& vocab) {
  std::string out;
  for (Index id : ids) {
    const std::string& sub = vocab.subword(id);
    if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
    if (sub.rfind("##", 0) == 0) {
      out += sub.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += sub;
    }
  }
  return out;
}

std::string Tokenizer::serialize() const {
  std::ostringstream os;
  os << "bpe-v1 " << vocab.size() << "\n";
  for (const auto& [l, r] : merges.merges) os << l << '\t' << r << "\n";
  os << "#vocab\n";
  for (const std::string& s : vocab.id_to_subword) os << s << "\n";
  return os.str();
}

Tokenizer Tokenizer::parse(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      if (pos < text.size()) lines.emplace_back(text.substr(pos));
      break;
    }
    lines.emplace_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  if (lines.empty() || lines[0].rfind("bpe-v1 ", 0) != 0)
    throw ValidationError("tokenizer file: missing 'bpe-v1' header");
  Index declared = 0;
  try {
    declared = std::stoll(lines[0].substr(7));
  } catch (const std::exception&) {
    throw ValidationError("tokenizer file: bad vocab size in header '" + lines[0] + "'");
  }

  Tokenizer tok;
  std::size_t i = 1;
  for (; i < lines.size() && lines[i] != "#vocab"; ++i) {
    const std::size_t tab = lines[i].find('\t');
    if (tab == std::string::npos)
      throw ValidationError("tokenizer file: merge line without tab: '" + lines[i] + "'");
    tok.merges.merges.emplace_back(lines[i].substr(0, tab), lines[i].substr(tab + 1));
  }
  if (i == lines.size()) throw ValidationError("tokenizer file: missing '#vocab' marker");
  for (++i; i < lines.size(); ++i) {
    if (lines[i].empty() && i + 1 == lines.size()) break;  // trailing newline
    if (tok.vocab.subword_to_id.count(lines[i]))
      throw ValidationError("tokenizer file: duplicate subword '" + lines[i] + "'");
    tok.vocab.subword_to_id.emplace(lines[i], tok.vocab.size());
    tok.vocab.id_to_subword.push_back(lines[i]);
  }
  if (tok.vocab.size() != declared)
    throw ValidationError("tokenizer file: header declares " + std::to_string(declared) +
                          " subwords, found " + std::to_string(tok.vocab.size()));
  for (Index s = 0; s < 4; ++s)
    if (tok.vocab.size() <= s || tok.vocab.id_to_subword[static_cast<std::size_t>(s)] != kSpecials[s])
      throw ValidationError(std::string("tokenizer file: reserved id ") + std::to_string(s) +
                            " must be " + kSpecials[s]);
  return tok;
}

void Tokenizer::save(const std::string& path) const { write_text_file(path, serialize()); }

Tokenizer Tokenizer::load(const std::string& path) { return parse(read_text_file(path)); }

std::uint64_t Tokenizer::hash() const { return fnv1a64(serialize()); }

}  // namespace pgnmt
