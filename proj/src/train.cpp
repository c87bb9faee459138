#include "pgnmt/train.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <unordered_set>
#include <utility>

#include "pgnmt/bpe.hpp"
#include "pgnmt/checkpoint.hpp"
#include "pgnmt/errors.hpp"
#include "pgnmt/pgn.hpp"
#include "pgnmt/rng.hpp"
#include "pgnmt/util.hpp"
#include "pgnmt/viz.hpp"

namespace fs = std::filesystem;

namespace pgnmt {

namespace {

std::string trim_ws(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::int64_t parse_i64(const std::string& key, const std::string& value) {
  std::int64_t out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ValidationError("key " + key + " needs an integer, got '" + value + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ValidationError("key " + key + " needs a non-negative integer, got '" + value + "'");
  }
  return out;
}

double parse_f64(const std::string& key, const std::string& value) {
  double out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ValidationError("key " + key + " needs a number, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ValidationError("key " + key + " needs true or false, got '" + value + "'");
}

// Shortest decimal form that parses back to the same double.
std::string fmt_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string head_mode_name(PgnHeadMode mode) {
  return mode == PgnHeadMode::kAveraged ? "averaged" : "single";
}

PgnHeadMode head_mode_from(const std::string& key, const std::string& value) {
  if (value == "averaged") return PgnHeadMode::kAveraged;
  if (value == "single") return PgnHeadMode::kSingle;
  throw ValidationError("key " + key + " needs 'averaged' or 'single', got '" + value + "'");
}

// Walks a flat key=value text and feeds each pair to `apply`; rejects
// malformed lines and repeated keys.
void parse_kv_file(std::string_view text,
                   const std::function<void(const std::string&, const std::string&)>& apply) {
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t at = 0;
  while (at <= text.size()) {
    const std::size_t nl = text.find('\n', at);
    const std::string_view raw =
        nl == std::string_view::npos ? text.substr(at) : text.substr(at, nl - at);
    at = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string line = trim_ws(raw);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + " has no '=': " + line);
    }
    const std::string key = trim_ws(line.substr(0, eq));
    const std::string value = trim_ws(line.substr(eq + 1));
    if (key.empty()) {
      throw ValidationError("config line " + std::to_string(line_no) + " has an empty key");
    }
    if (!seen.insert(key).second) {
      throw ValidationError("config repeats key " + key);
    }
    apply(key, value);
  }
}

bool apply_synth_key(SyntheticPairSpec& spec, const std::string& key, const std::string& value) {
  if (key == "vocab_size") spec.vocab_size = parse_i64(key, value);
  else if (key == "min_len") spec.min_len = parse_i64(key, value);
  else if (key == "max_len") spec.max_len = parse_i64(key, value);
  else if (key == "cognate_rate") spec.cognate_rate = parse_f64(key, value);
  else if (key == "sound_change_rate") spec.sound_change_rate = parse_f64(key, value);
  else if (key == "noise_rate") spec.noise_rate = parse_f64(key, value);
  else if (key == "num_pairs") spec.num_pairs = parse_i64(key, value);
  else if (key == "seed") spec.seed = parse_u64(key, value);
  else return false;
  return true;
}

}  // namespace

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  if (key == "corpus.src") corpus_src = value;
  else if (key == "corpus.tgt") corpus_tgt = value;
  else if (key == "synthetic") synthetic = parse_bool(key, value);
  else if (key.rfind("synth.", 0) == 0) {
    if (!apply_synth_key(synth, key.substr(6), value)) {
      throw ValidationError("unknown config key: " + key);
    }
  } else if (key == "tokenizer_budget") tokenizer_budget = parse_i64(key, value);
  else if (key == "model.num_layers") model.num_layers = static_cast<int>(parse_i64(key, value));
  else if (key == "model.num_heads") model.num_heads = static_cast<int>(parse_i64(key, value));
  else if (key == "model.hidden_size") model.hidden_size = parse_i64(key, value);
  else if (key == "model.ffn_size") model.ffn_size = parse_i64(key, value);
  else if (key == "model.max_len") model.max_len = parse_i64(key, value);
  else if (key == "model.dropout") model.dropout = parse_f64(key, value);
  else if (key == "model.pgn_enabled") model.pgn_enabled = parse_bool(key, value);
  else if (key == "model.pgn_head_mode") model.pgn_head_mode = head_mode_from(key, value);
  else if (key == "model.pgn_head_index") model.pgn_head_index = static_cast<int>(parse_i64(key, value));
  else if (key == "optim.learning_rate") learning_rate = parse_f64(key, value);
  else if (key == "optim.batch_size") batch_size = parse_i64(key, value);
  else if (key == "train_n") train_n = parse_i64(key, value);
  else if (key == "test_n") test_n = parse_i64(key, value);
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "max_epochs") max_epochs = parse_i64(key, value);
  else if (key == "patience") patience = parse_i64(key, value);
  else if (key == "snapshot_every") snapshot_every = parse_i64(key, value);
  else if (key == "max_out_len") max_out_len = parse_i64(key, value);
  else if (key == "out_dir") out_dir = value;
  else throw ValidationError("unknown config key: " + key);
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  parse_kv_file(text, [&cfg](const std::string& key, const std::string& value) {
    cfg.apply_override(key, value);
  });
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) { return parse(read_text_file(path)); }

std::string RunConfig::serialize() const {
  std::string out;
  auto put = [&out](const std::string& key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  };
  put("corpus.src", corpus_src);
  put("corpus.tgt", corpus_tgt);
  put("synthetic", synthetic ? "true" : "false");
  put("synth.vocab_size", std::to_string(synth.vocab_size));
  put("synth.min_len", std::to_string(synth.min_len));
  put("synth.max_len", std::to_string(synth.max_len));
  put("synth.cognate_rate", fmt_double(synth.cognate_rate));
  put("synth.sound_change_rate", fmt_double(synth.sound_change_rate));
  put("synth.noise_rate", fmt_double(synth.noise_rate));
  put("synth.num_pairs", std::to_string(synth.num_pairs));
  put("synth.seed", std::to_string(synth.seed));
  put("tokenizer_budget", std::to_string(tokenizer_budget));
  put("model.num_layers", std::to_string(model.num_layers));
  put("model.num_heads", std::to_string(model.num_heads));
  put("model.hidden_size", std::to_string(model.hidden_size));
  put("model.ffn_size", std::to_string(model.ffn_size));
  put("model.max_len", std::to_string(model.max_len));
  put("model.dropout", fmt_double(model.dropout));
  put("model.pgn_enabled", model.pgn_enabled ? "true" : "false");
  put("model.pgn_head_mode", head_mode_name(model.pgn_head_mode));
  put("model.pgn_head_index", std::to_string(model.pgn_head_index));
  put("optim.learning_rate", fmt_double(learning_rate));
  put("optim.batch_size", std::to_string(batch_size));
  put("train_n", std::to_string(train_n));
  put("test_n", std::to_string(test_n));
  put("seed", std::to_string(seed));
  put("max_epochs", std::to_string(max_epochs));
  put("patience", std::to_string(patience));
  put("snapshot_every", std::to_string(snapshot_every));
  put("max_out_len", std::to_string(max_out_len));
  put("out_dir", out_dir);
  return out;
}

void RunConfig::validate() const {
  if (!synthetic && (corpus_src.empty() || corpus_tgt.empty())) {
    throw ValidationError("corpus.src and corpus.tgt are required when synthetic = false");
  }
  if (synthetic) {
    synth.validate();
    if (synth.num_pairs < train_n + test_n) {
      throw ValidationError("synth.num_pairs " + std::to_string(synth.num_pairs) +
                            " cannot cover train_n + test_n = " +
                            std::to_string(train_n + test_n));
    }
  }
  if (tokenizer_budget < 5) {
    throw ValidationError("tokenizer_budget must cover the 4 specials plus content, got " +
                          std::to_string(tokenizer_budget));
  }
  ModelConfig probe = model;
  probe.vocab_size = 5;  // real vocabulary arrives with the tokenizer
  probe.validate();
  if (!(learning_rate > 0.0)) {
    throw ValidationError("optim.learning_rate must be positive, got " + fmt_double(learning_rate));
  }
  if (batch_size < 1) throw ValidationError("optim.batch_size must be >= 1");
  if (train_n < 1) throw ValidationError("train_n must be >= 1, got " + std::to_string(train_n));
  if (test_n < 1) throw ValidationError("test_n must be >= 1, got " + std::to_string(test_n));
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (patience < 1) throw ValidationError("patience must be >= 1");
  if (snapshot_every < 1) throw ValidationError("snapshot_every must be >= 1");
  if (max_out_len < 1) throw ValidationError("max_out_len must be >= 1");
  if (out_dir.empty()) throw ValidationError("out_dir is required");
}

SyntheticPairSpec parse_synth_spec(std::string_view text) {
  SyntheticPairSpec spec;
  parse_kv_file(text, [&spec](const std::string& key, const std::string& value) {
    if (!apply_synth_key(spec, key, value)) {
      throw ValidationError("unknown synthetic-spec key: " + key);
    }
  });
  return spec;
}

std::string serialize_synth_spec(const SyntheticPairSpec& spec) {
  std::string out;
  auto put = [&out](const std::string& key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  };
  put("vocab_size", std::to_string(spec.vocab_size));
  put("min_len", std::to_string(spec.min_len));
  put("max_len", std::to_string(spec.max_len));
  put("cognate_rate", fmt_double(spec.cognate_rate));
  put("sound_change_rate", fmt_double(spec.sound_change_rate));
  put("noise_rate", fmt_double(spec.noise_rate));
  put("num_pairs", std::to_string(spec.num_pairs));
  put("seed", std::to_string(spec.seed));
  return out;
}

namespace {

// Teacher-forcing views of one sentence pair, already truncated to max_len.
struct Example {
  std::vector<Index> src;     // source ids + EOS
  std::vector<Index> dec_in;  // BOS + target ids
  std::vector<Index> gold;    // target ids + EOS, aligned with dec_in
};

Example make_example(const std::string& src_text, const std::string& tgt_text,
                     const Tokenizer& tok, Index max_len) {
  Example ex;
  ex.src = encode(src_text, tok).ids;
  ex.src.push_back(Vocabulary::kEos);
  if (static_cast<Index>(ex.src.size()) > max_len) ex.src.resize(static_cast<std::size_t>(max_len));

  const std::vector<Index> tgt = encode(tgt_text, tok).ids;
  ex.dec_in.reserve(tgt.size() + 1);
  ex.dec_in.push_back(Vocabulary::kBos);
  ex.dec_in.insert(ex.dec_in.end(), tgt.begin(), tgt.end());
  ex.gold = tgt;
  ex.gold.push_back(Vocabulary::kEos);
  if (static_cast<Index>(ex.dec_in.size()) > max_len) {
    ex.dec_in.resize(static_cast<std::size_t>(max_len));
    ex.gold.resize(static_cast<std::size_t>(max_len));
  }
  return ex;
}

bool same_model_config(const ModelConfig& a, const ModelConfig& b) {
  return a.num_layers == b.num_layers && a.num_heads == b.num_heads &&
         a.hidden_size == b.hidden_size && a.ffn_size == b.ffn_size && a.max_len == b.max_len &&
         a.dropout == b.dropout && a.vocab_size == b.vocab_size &&
         a.pgn_enabled == b.pgn_enabled && a.pgn_head_mode == b.pgn_head_mode &&
         (a.pgn_head_mode == PgnHeadMode::kAveraged || a.pgn_head_index == b.pgn_head_index);
}

std::string pad3(Index n) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%03lld", static_cast<long long>(n));
  return buf;
}

nlohmann::json epoch_log_json(const EpochLog& log) {
  return {{"epoch", log.epoch},
          {"train_loss", log.train_loss},
          {"heldout_loss", log.heldout_loss},
          {"best_heldout", log.best_heldout},
          {"epochs_since_best", log.epochs_since_best},
          {"optimizer_steps", log.optimizer_steps}};
}

nlohmann::json bleu_json(const BleuReport& r) {
  return {{"score", r.score},
          {"precisions", r.precisions},
          {"brevity_penalty", r.brevity_penalty},
          {"hyp_len", r.hyp_len},
          {"ref_len", r.ref_len}};
}

}  // namespace

TrainResult train_run(const RunConfig& config) {
  config.validate();
  fs::create_directories(config.out_dir);
  fs::create_directories(config.out_dir + "/traces");

  ParallelCorpus corpus = config.synthetic
                              ? synthesize_language_pair(config.synth)
                              : load_parallel(config.corpus_src, config.corpus_tgt).corpus;
  auto [train_set, test_set] =
      subsample(corpus, config.train_n, config.test_n, derive_seed(config.seed, "split"));
  save_corpus(train_set, config.out_dir + "/train.src.txt", config.out_dir + "/train.tgt.txt");
  save_corpus(test_set, config.out_dir + "/test.src.txt", config.out_dir + "/test.tgt.txt");
  write_text_file(config.out_dir + "/run_config.txt", config.serialize());

  const std::string tok_path = config.out_dir + "/tokenizer.txt";
  Tokenizer tok;
  if (fs::exists(tok_path)) {
    tok = Tokenizer::load(tok_path);
  } else {
    std::vector<std::string> lines;
    lines.reserve(2 * train_set.size());
    for (const auto& [s, t] : train_set.pairs) {
      lines.push_back(s);
      lines.push_back(t);
    }
    tok = train_bpe(lines, config.tokenizer_budget);
    tok.save(tok_path);
  }

  ModelConfig mc = config.model;
  mc.vocab_size = tok.vocab.size();
  mc.validate();

  std::vector<Example> train_ex, test_ex;
  train_ex.reserve(train_set.size());
  test_ex.reserve(test_set.size());
  for (const auto& [s, t] : train_set.pairs) train_ex.push_back(make_example(s, t, tok, mc.max_len));
  for (const auto& [s, t] : test_set.pairs) test_ex.push_back(make_example(s, t, tok, mc.max_len));

  const std::string latest_path = config.out_dir + "/latest.ckpt";
  const std::string best_path = config.out_dir + "/best.ckpt";
  ModelParams params;
  AdamState adam;
  adam.learning_rate = config.learning_rate;
  TrainProgress progress;
  if (fs::exists(latest_path)) {
    Checkpoint ckpt = load_checkpoint(latest_path);
    if (ckpt.vocab_hash != tok.hash()) {
      throw ValidationError("cannot resume: checkpoint vocabulary hash " +
                            to_hex(ckpt.vocab_hash) + " does not match tokenizer " +
                            to_hex(tok.hash()));
    }
    if (!same_model_config(ckpt.params.config, mc)) {
      throw ValidationError("cannot resume: checkpoint model shape differs from the config");
    }
    params = std::move(ckpt.params);
    progress = ckpt.progress;
    if (ckpt.has_adam) {
      adam = std::move(ckpt.adam);
      adam.learning_rate = config.learning_rate;
    }
  } else {
    params = ModelParams::init(mc, derive_seed(config.seed, "params"));
  }
  std::vector<Tensor> trainable = params.trainable();

  TrainResult result;
  result.tokenizer_path = tok_path;
  result.best_checkpoint = best_path;
  result.latest_checkpoint = latest_path;

  auto heldout_loss = [&]() {
    KahanSum sum;
    for (const Example& ex : test_ex) {
      sum.add(sequence_loss(params, ex.src, ex.dec_in, ex.gold).item());
    }
    return sum.value() / static_cast<double>(test_ex.size());
  };

  std::ofstream log_out(config.out_dir + "/train_log.jsonl", std::ios::app);

  for (Index e = progress.epochs_completed; e < config.max_epochs; ++e) {
    if (progress.epochs_since_best >= config.patience) break;

    Rng order_rng = seeded_rng(derive_seed(config.seed, "order", static_cast<std::uint64_t>(e)));
    Rng drop_rng = seeded_rng(derive_seed(config.seed, "dropout", static_cast<std::uint64_t>(e)));
    Rng* drop = mc.dropout > 0.0 ? &drop_rng : nullptr;
    const std::vector<std::size_t> order = permutation(order_rng, train_ex.size());

    KahanSum loss_sum;
    std::size_t at = 0;
    while (at < order.size()) {
      const std::size_t batch_end = std::min(at + static_cast<std::size_t>(config.batch_size),
                                             order.size());
      const double weight = 1.0 / static_cast<double>(batch_end - at);
      for (; at < batch_end; ++at) {
        const Example& ex = train_ex[order[at]];
        Tape tape;
        Tensor loss = sequence_loss(params, ex.src, ex.dec_in, ex.gold, drop);
        loss_sum.add(loss.item());
        tape.backward(scale(loss, weight));
      }
      adam_step(trainable, adam);
      zero_grad(trainable);
    }
    progress.optimizer_steps = adam.step;

    EpochLog log;
    log.epoch = e;
    log.train_loss = loss_sum.value() / static_cast<double>(train_ex.size());
    log.heldout_loss = heldout_loss();
    progress.epochs_completed = static_cast<int>(e) + 1;
    const bool improved = log.heldout_loss < progress.best_heldout;
    if (improved) {
      progress.best_heldout = log.heldout_loss;
      progress.epochs_since_best = 0;
    } else {
      ++progress.epochs_since_best;
    }
    log.best_heldout = progress.best_heldout;
    log.epochs_since_best = progress.epochs_since_best;
    log.optimizer_steps = progress.optimizer_steps;

    save_checkpoint(latest_path, params, tok.hash(), config.seed, progress, &adam);
    if (improved) save_checkpoint(best_path, params, tok.hash(), config.seed, progress);

    if ((e + 1) % config.snapshot_every == 0) {
      const std::size_t probes = std::min<std::size_t>(2, test_ex.size());
      for (std::size_t p = 0; p < probes; ++p) {
        AttentionTrace trace = trace_pair(params, test_ex[p].src, test_ex[p].gold, tok.vocab,
                                          progress.optimizer_steps);
        save_trace(trace, config.out_dir + "/traces/probe" + std::to_string(p) + "_epoch" +
                              pad3(e + 1) + ".json");
      }
    }

    result.log.push_back(log);
    log_out << epoch_log_json(log).dump() << "\n";
    log_out.flush();

    if (progress.epochs_since_best >= config.patience) {
      result.converged = true;
      break;
    }
  }
  return result;
}

EvalResult evaluate_run(const EvalSpec& spec) {
  if (spec.checkpoint_path.empty()) throw ValidationError("evaluate needs a checkpoint path");
  if (spec.tokenizer_path.empty()) throw ValidationError("evaluate needs a tokenizer path");
  if (spec.test_src.empty() || spec.test_tgt.empty()) {
    throw ValidationError("evaluate needs test.src and test.tgt paths");
  }
  if (spec.out_dir.empty()) throw ValidationError("evaluate needs an output directory");
  if (spec.max_out_len < 1) throw ValidationError("max_out_len must be >= 1");

  Tokenizer tok = Tokenizer::load(spec.tokenizer_path);
  Checkpoint ckpt = load_checkpoint(spec.checkpoint_path);
  if (ckpt.vocab_hash != tok.hash()) {
    throw ValidationError("vocabulary mismatch: checkpoint was trained with tokenizer hash " +
                          to_hex(ckpt.vocab_hash) + ", given tokenizer hashes to " +
                          to_hex(tok.hash()));
  }
  const ParallelCorpus test_set = load_parallel(spec.test_src, spec.test_tgt).corpus;
  if (test_set.pairs.empty()) throw ContractError("evaluate: empty test set");
  fs::create_directories(spec.out_dir);

  const ModelParams& params = ckpt.params;
  const std::int64_t step = ckpt.progress.optimizer_steps;

  std::vector<std::vector<Index>> hyps, refs;
  hyps.reserve(test_set.size());
  refs.reserve(test_set.size());
  std::vector<CopyUsageRecord> records;
  long long acc_matches = 0, acc_total = 0;
  KahanSum pcopy_sum;

  for (std::size_t i = 0; i < test_set.pairs.size(); ++i) {
    std::vector<Index> src = encode(test_set.pairs[i].first, tok).ids;
    src.push_back(Vocabulary::kEos);
    if (static_cast<Index>(src.size()) > params.config.max_len) {
      src.resize(static_cast<std::size_t>(params.config.max_len));
    }
    GreedyResult out = greedy_decode(params, src, spec.max_out_len, tok.vocab, step);
    std::vector<Index> ref = encode(test_set.pairs[i].second, tok).ids;

    std::unordered_set<Index> src_content;
    for (Index id : src) {
      if (!Vocabulary::is_special(id)) src_content.insert(id);
    }
    for (std::size_t t = 0; t < out.ids.size(); ++t) {
      CopyUsageRecord r;
      r.token_id = out.ids[t];
      r.p_copy = out.trace.p_copy[t];
      r.entropy = attention_entropy(out.trace.attention[t]);
      r.in_source = src_content.count(out.ids[t]) != 0;
      r.sentence_id = static_cast<Index>(i);
      r.checkpoint_step = step;
      records.push_back(r);
      pcopy_sum.add(r.p_copy);
    }

    acc_total += static_cast<long long>(std::max(out.ids.size(), ref.size()));
    const std::size_t aligned = std::min(out.ids.size(), ref.size());
    for (std::size_t t = 0; t < aligned; ++t) {
      if (out.ids[t] == ref[t]) ++acc_matches;
    }
    hyps.push_back(std::move(out.ids));
    refs.push_back(std::move(ref));
  }

  EvalResult result;
  result.overall = sp_bleu(hyps, refs);
  result.token_accuracy =
      acc_total == 0 ? 0.0
                     : static_cast<double>(acc_matches) / static_cast<double>(acc_total);
  result.mean_p_copy =
      records.empty() ? 0.0 : pcopy_sum.value() / static_cast<double>(records.size());

  nlohmann::json subsets = nullptr;
  const Index k = std::min<Index>(500, static_cast<Index>(test_set.size() / 10));
  if (k >= 1) {
    try {
      ControlledSubsets subs = build_controlled_subsets(test_set, tok, k);
      std::vector<std::vector<Index>> hyp_high, ref_high, hyp_low, ref_low;
      for (Index idx : subs.high_indices) {
        hyp_high.push_back(hyps[static_cast<std::size_t>(idx)]);
        ref_high.push_back(refs[static_cast<std::size_t>(idx)]);
      }
      for (Index idx : subs.low_indices) {
        hyp_low.push_back(hyps[static_cast<std::size_t>(idx)]);
        ref_low.push_back(refs[static_cast<std::size_t>(idx)]);
      }
      subsets = {{"k", k},
                 {"mean_overlap_high", subs.mean_high},
                 {"mean_overlap_low", subs.mean_low},
                 {"high_spbleu", bleu_json(sp_bleu(hyp_high, ref_high))},
                 {"low_spbleu", bleu_json(sp_bleu(hyp_low, ref_low))}};
    } catch (const std::logic_error& e) {
      subsets = {{"k", k}, {"skipped", e.what()}};
    }
  }

  nlohmann::json correlation = nullptr;
  try {
    correlation = pcopy_entropy_correlation(records);
  } catch (const ContractError&) {
    // fewer than 2 records or a constant axis: no correlation to report
  }

  const CopyUsageSummary usage = copy_usage_summary(records, 10);
  nlohmann::json top = nlohmann::json::array();
  for (const TokenUsage& t : usage.top_tokens) {
    top.push_back({{"token_id", t.token_id},
                   {"subword", tok.vocab.subword(t.token_id)},
                   {"mean_p_copy", t.mean_p_copy},
                   {"count", t.count}});
  }

  result.report = {{"checkpoint", spec.checkpoint_path},
                   {"checkpoint_step", step},
                   {"tokenizer_hash", to_hex(tok.hash())},
                   {"num_sentences", test_set.size()},
                   {"spbleu", bleu_json(result.overall)},
                   {"token_accuracy", result.token_accuracy},
                   {"mean_p_copy", result.mean_p_copy},
                   {"pcopy_entropy_correlation", correlation},
                   {"usage_summary",
                    {{"present_count", usage.present_count},
                     {"present_mean", usage.present_mean},
                     {"present_median", usage.present_median},
                     {"absent_count", usage.absent_count},
                     {"absent_mean", usage.absent_mean},
                     {"absent_median", usage.absent_median},
                     {"top_tokens", top}}},
                   {"subsets", subsets}};
  result.report_path = spec.out_dir + "/report.json";
  write_text_file(result.report_path, result.report.dump(2) + "\n");

  std::string dump;
  for (const CopyUsageRecord& r : records) {
    nlohmann::json line = {{"sentence_id", r.sentence_id},
                           {"token_id", r.token_id},
                           {"subword", tok.vocab.subword(r.token_id)},
                           {"p_copy", r.p_copy},
                           {"entropy", r.entropy},
                           {"in_source", r.in_source},
                           {"checkpoint_step", r.checkpoint_step}};
    dump += line.dump();
    dump += '\n';
  }
  write_text_file(spec.out_dir + "/usage_records.jsonl", dump);
  return result;
}

GridResult run_grid(const RunConfig& base, std::span<const Index> sizes) {
  if (sizes.empty()) throw ValidationError("grid needs at least one size");
  for (Index s : sizes) {
    if (s < 1) throw ValidationError("grid sizes must be >= 1, got " + std::to_string(s));
  }
  if (base.out_dir.empty()) throw ValidationError("out_dir is required");
  fs::create_directories(base.out_dir);

  GridResult out;
  for (Index size : sizes) {
    for (bool pgn : {false, true}) {
      GridCell cell;
      cell.train_n = size;
      cell.pgn = pgn;
      cell.dir = base.out_dir + "/n" + std::to_string(size) + (pgn ? "_pgn" : "_nmt");
      RunConfig cfg = base;
      cfg.train_n = size;
      cfg.model.pgn_enabled = pgn;
      cfg.out_dir = cell.dir;
      try {
        TrainResult trained = train_run(cfg);
        EvalSpec es;
        es.checkpoint_path = fs::exists(trained.best_checkpoint) ? trained.best_checkpoint
                                                                 : trained.latest_checkpoint;
        es.tokenizer_path = trained.tokenizer_path;
        es.test_src = cell.dir + "/test.src.txt";
        es.test_tgt = cell.dir + "/test.tgt.txt";
        es.out_dir = cell.dir;
        es.max_out_len = cfg.max_out_len;
        EvalResult ev = evaluate_run(es);
        cell.ok = true;
        cell.spbleu = ev.overall.score;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
      out.cells.push_back(cell);
    }
  }

  auto cell_at = [&out](Index size, bool pgn) -> const GridCell* {
    for (const GridCell& c : out.cells) {
      if (c.train_n == size && c.pgn == pgn) return &c;
    }
    return nullptr;
  };

  nlohmann::json nmt_row = nlohmann::json::array();
  nlohmann::json pgn_row = nlohmann::json::array();
  nlohmann::json deltas = nlohmann::json::array();
  KahanSum delta_sum;
  long long delta_n = 0;
  for (Index size : sizes) {
    const GridCell* n = cell_at(size, false);
    const GridCell* p = cell_at(size, true);
    nmt_row.push_back(n->ok ? nlohmann::json(n->spbleu) : nlohmann::json(nullptr));
    pgn_row.push_back(p->ok ? nlohmann::json(p->spbleu) : nlohmann::json(nullptr));
    if (n->ok && p->ok) {
      const double d = p->spbleu - n->spbleu;
      deltas.push_back(d);
      delta_sum.add(d);
      ++delta_n;
    } else {
      deltas.push_back(nullptr);
    }
  }
  const nlohmann::json avg_delta =
      delta_n == 0 ? nlohmann::json(nullptr)
                   : nlohmann::json(delta_sum.value() / static_cast<double>(delta_n));

  nlohmann::json cells_json = nlohmann::json::array();
  for (const GridCell& c : out.cells) {
    cells_json.push_back({{"train_n", c.train_n},
                          {"system", c.pgn ? "pgn" : "nmt"},
                          {"dir", c.dir},
                          {"ok", c.ok},
                          {"spbleu", c.ok ? nlohmann::json(c.spbleu) : nlohmann::json(nullptr)},
                          {"error", c.ok ? nlohmann::json(nullptr) : nlohmann::json(c.error)}});
  }
  out.summary = {{"sizes", std::vector<Index>(sizes.begin(), sizes.end())},
                 {"systems", {"nmt", "pgn"}},
                 {"spbleu", {{"nmt", nmt_row}, {"pgn", pgn_row}}},
                 {"deltas", deltas},
                 {"avg_delta", avg_delta},
                 {"cells", cells_json}};
  out.summary_path = base.out_dir + "/summary.json";
  write_text_file(out.summary_path, out.summary.dump(2) + "\n");

  // Fixed-width table: rows = systems, columns = sizes, then the mean delta.
  std::string table = "system";
  char buf[64];
  for (Index size : sizes) {
    std::snprintf(buf, sizeof(buf), " %9lld", static_cast<long long>(size));
    table += buf;
  }
  table += '\n';
  for (bool pgn : {false, true}) {
    table += pgn ? "PGN   " : "NMT   ";
    for (Index size : sizes) {
      const GridCell* c = cell_at(size, pgn);
      if (c->ok) {
        std::snprintf(buf, sizeof(buf), " %9.2f", c->spbleu);
      } else {
        std::snprintf(buf, sizeof(buf), " %9s", "failed");
      }
      table += buf;
    }
    table += '\n';
  }
  if (delta_n == 0) {
    table += "Avg. delta (PGN - NMT): n/a\n";
  } else {
    std::snprintf(buf, sizeof(buf), "Avg. delta (PGN - NMT): %+.2f\n",
                  delta_sum.value() / static_cast<double>(delta_n));
    table += buf;
  }
  write_text_file(base.out_dir + "/summary.txt", table);
  return out;
}

nlohmann::json analyze_corpus(const ParallelCorpus& corpus, Index tokenizer_budget) {
  if (tokenizer_budget < 5) {
    throw ValidationError("tokenizer_budget must cover the 4 specials plus content, got " +
                          std::to_string(tokenizer_budget));
  }
  std::vector<std::string> lines;
  lines.reserve(2 * corpus.size());
  for (const auto& [s, t] : corpus.pairs) {
    lines.push_back(s);
    lines.push_back(t);
  }
  Tokenizer tok = train_bpe(lines, tokenizer_budget);
  const OverlapStats stats = token_heuristics(corpus, tok);
  return {{"corpus", corpus.name},
          {"provenance", corpus.provenance},
          {"num_pairs", corpus.size()},
          {"tokenizer_budget", tokenizer_budget},
          {"vocab_size", tok.vocab.size()},
          {"common_tokens", stats.common_tokens},
          {"total_target_tokens", stats.total_target_tokens},
          {"total_lines", stats.total_lines},
          {"avg_common_per_line", stats.avg_common_per_line},
          {"avg_common_per_target_token", stats.avg_common_per_target_token}};
}

}  // namespace pgnmt
