#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pgnmt/corpus.hpp"
#include "pgnmt/metrics.hpp"
#include "pgnmt/transformer.hpp"

namespace pgnmt {

// One experiment, fully described; a run is reproducible from this struct
// alone. Serialized as a flat UTF-8 `key = value` file, one pair per line,
// full-line '#' comments. parse() rejects unknown and repeated keys; every
// key can also be overridden via apply_override (the CLI's --set).
//
// Keys:
//   corpus.src, corpus.tgt          aligned text files (when synthetic = false)
//   synthetic                       true -> generate the corpus from synth.*
//   synth.vocab_size synth.min_len synth.max_len synth.cognate_rate
//   synth.sound_change_rate synth.noise_rate synth.num_pairs synth.seed
//   tokenizer_budget                joint BPE vocabulary budget
//   model.num_layers model.num_heads model.hidden_size model.ffn_size
//   model.max_len model.dropout model.pgn_enabled
//   model.pgn_head_mode             averaged | single
//   model.pgn_head_index
//   optim.learning_rate optim.batch_size
//   train_n test_n seed max_epochs patience snapshot_every max_out_len
//   out_dir
struct RunConfig {
  std::string corpus_src;
  std::string corpus_tgt;
  bool synthetic = false;
  SyntheticPairSpec synth;

  Index tokenizer_budget = 16000;
  ModelConfig model;  // vocab_size stays 0 here; the tokenizer fills it
  double learning_rate = 3e-4;
  Index batch_size = 32;

  Index train_n = 0;
  Index test_n = 0;
  std::uint64_t seed = 1;
  Index max_epochs = 30;
  Index patience = 5;
  Index snapshot_every = 2;
  Index max_out_len = 64;
  std::string out_dir;

  void validate() const;
  std::string serialize() const;
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);
  void apply_override(const std::string& key, const std::string& value);
};

// Flat key=value form of SyntheticPairSpec (keys: vocab_size, min_len,
// max_len, cognate_rate, sound_change_rate, noise_rate, num_pairs, seed).
SyntheticPairSpec parse_synth_spec(std::string_view text);
std::string serialize_synth_spec(const SyntheticPairSpec& spec);

struct EpochLog {
  Index epoch = 0;  // 0-based, absolute across resumes
  double train_loss = 0.0;
  double heldout_loss = 0.0;
  double best_heldout = 0.0;
  Index epochs_since_best = 0;
  std::int64_t optimizer_steps = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;  // epochs run by this invocation only
  bool converged = false;     // stopped by patience rather than max_epochs
  std::string best_checkpoint;
  std::string latest_checkpoint;
  std::string tokenizer_path;
};

// Trains per the config inside config.out_dir: resolves the corpus, splits
// it (test block first, so the test set is shared across train sizes),
// trains the tokenizer if tokenizer.txt is absent, then runs teacher-forced
// epochs with per-epoch derived RNG streams. Each epoch appends one line to
// train_log.jsonl, refreshes latest.ckpt (with optimizer state), and updates
// best.ckpt on strict held-out improvement; training stops after `patience`
// epochs without improvement. Teacher-forced traces of the first two test
// pairs are written under traces/ every snapshot_every epochs. A run whose
// out_dir already holds latest.ckpt resumes from it bit-identically.
TrainResult train_run(const RunConfig& config);

struct EvalSpec {
  std::string checkpoint_path;
  std::string tokenizer_path;
  std::string test_src;
  std::string test_tgt;
  std::string out_dir;  // receives report.json and usage_records.jsonl
  Index max_out_len = 64;
};

struct EvalResult {
  BleuReport overall;
  double token_accuracy = 0.0;
  double mean_p_copy = 0.0;
  nlohmann::json report;  // exactly the bytes of report.json, parsed
  std::string report_path;
};

// Greedy-decodes the whole test set with the checkpointed model and writes
// report.json (spBLEU overall and on high/low overlap subsets with
// k = min(500, floor(test/10)), token accuracy, copy-usage statistics) plus
// usage_records.jsonl. The tokenizer hash must match the checkpoint's.
EvalResult evaluate_run(const EvalSpec& spec);

struct GridCell {
  Index train_n = 0;
  bool pgn = false;
  std::string dir;
  bool ok = false;
  std::string error;    // set when !ok
  double spbleu = 0.0;  // set when ok
};

struct GridResult {
  std::vector<GridCell> cells;
  nlohmann::json summary;
  std::string summary_path;
};

// For each size x {NMT, PGN}: trains and evaluates in its own subdirectory
// of base.out_dir under the shared seed, then writes summary.json and a
// fixed-width summary.txt (rows = systems, columns = sizes, plus the mean
// of the per-size PGN - NMT deltas). A failed cell is recorded and skipped;
// the remaining cells still run.
GridResult run_grid(const RunConfig& base, std::span<const Index> sizes);

// Trains a throwaway tokenizer at the given budget and reports overlap
// heuristics for the corpus as JSON.
nlohmann::json analyze_corpus(const ParallelCorpus& corpus, Index tokenizer_budget);

}  // namespace pgnmt
