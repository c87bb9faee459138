#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pgnmt/corpus.hpp"
#include "pgnmt/errors.hpp"
#include "pgnmt/train.hpp"
#include "pgnmt/util.hpp"
#include "pgnmt/viz.hpp"

namespace fs = std::filesystem;
using namespace pgnmt;

namespace {

// Relative run/report directories land under $PGNMT_OUT_ROOT when it is set;
// absolute paths always win.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("PGNMT_OUT_ROOT");
  if (root == nullptr || *root == '\0' || path.empty()) return path;
  fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(root) / p).string();
}

void apply_sets(RunConfig& cfg, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError("--set needs key=value, got '" + kv + "'");
    }
    auto trim = [](std::string s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(s.begin());
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
      return s;
    };
    cfg.apply_override(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg = RunConfig::load(path);
  apply_sets(cfg, sets);
  cfg.out_dir = resolve_out(cfg.out_dir);
  return cfg;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets) {
  RunConfig cfg = load_config(config_path, sets);
  TrainResult r = train_run(cfg);
  if (r.log.empty()) {
    std::printf("nothing to do: run in %s is already trained\n", cfg.out_dir.c_str());
  } else {
    const EpochLog& last = r.log.back();
    std::printf("ran %zu epoch(s), last epoch %lld: train %.6f held-out %.6f (best %.6f)\n",
                r.log.size(), static_cast<long long>(last.epoch), last.train_loss,
                last.heldout_loss, last.best_heldout);
    std::printf(r.converged ? "converged (no held-out improvement for %lld epochs)\n"
                            : "stopped at max_epochs (patience %lld not exhausted)\n",
                static_cast<long long>(cfg.patience));
  }
  std::printf("checkpoints: %s, %s\n", r.best_checkpoint.c_str(), r.latest_checkpoint.c_str());
  std::printf("tokenizer: %s\n", r.tokenizer_path.c_str());
  return 0;
}

int cmd_evaluate(std::string run_dir, EvalSpec spec) {
  if (!run_dir.empty()) {
    run_dir = resolve_out(run_dir);
    if (spec.checkpoint_path.empty()) {
      const std::string best = run_dir + "/best.ckpt";
      spec.checkpoint_path = fs::exists(best) ? best : run_dir + "/latest.ckpt";
    }
    if (spec.tokenizer_path.empty()) spec.tokenizer_path = run_dir + "/tokenizer.txt";
    if (spec.test_src.empty()) spec.test_src = run_dir + "/test.src.txt";
    if (spec.test_tgt.empty()) spec.test_tgt = run_dir + "/test.tgt.txt";
    if (spec.out_dir.empty()) spec.out_dir = run_dir;
    if (spec.max_out_len == 0) {
      const std::string cfg_path = run_dir + "/run_config.txt";
      if (fs::exists(cfg_path)) spec.max_out_len = RunConfig::load(cfg_path).max_out_len;
    }
  }
  if (spec.max_out_len == 0) spec.max_out_len = 64;
  spec.out_dir = resolve_out(spec.out_dir);
  EvalResult r = evaluate_run(spec);
  std::printf("spBLEU %.2f over %lld sentences (token accuracy %.4f, mean p_copy %.4f)\n",
              r.overall.score, static_cast<long long>(r.report["num_sentences"].get<long long>()),
              r.token_accuracy, r.mean_p_copy);
  std::printf("report: %s\n", r.report_path.c_str());
  return 0;
}

int cmd_grid(const std::string& config_path, const std::vector<std::string>& sets,
             const std::vector<Index>& sizes) {
  RunConfig cfg = load_config(config_path, sets);
  GridResult g = run_grid(cfg, sizes);
  std::fputs(read_text_file(cfg.out_dir + "/summary.txt").c_str(), stdout);
  std::printf("summary: %s\n", g.summary_path.c_str());
  for (const GridCell& c : g.cells) {
    if (!c.ok) std::printf("cell %s failed: %s\n", c.dir.c_str(), c.error.c_str());
  }
  return 0;
}

int cmd_visualize(const std::string& trace_path, const std::string& out_path) {
  render_attention_svg_file(load_trace(trace_path), out_path);
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_analyze(const std::string& src, const std::string& tgt, Index budget,
                const std::string& out_path) {
  LoadedCorpus loaded = load_parallel(src, tgt);
  nlohmann::json j = analyze_corpus(loaded.corpus, budget);
  j["dropped_pairs"] = loaded.dropped;
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    write_text_file(out_path, text);
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_src,
              const std::string& out_tgt) {
  const SyntheticPairSpec spec = parse_synth_spec(read_text_file(spec_path));
  const ParallelCorpus corpus = synthesize_language_pair(spec);
  save_corpus(corpus, out_src, out_tgt);
  std::printf("wrote %zu pairs to %s and %s\n", corpus.size(), out_src.c_str(), out_tgt.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pointer-generator NMT laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::vector<Index> sizes;
  std::string run_dir, trace_path, out_path, src_path, tgt_path, spec_path;
  EvalSpec eval;
  eval.max_out_len = 0;  // 0 = take it from the run config, else 64
  Index budget = 16000;

  CLI::App* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", config_path, "Flat key = value run config file")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--set", sets, "Override a config key, key=value (repeatable)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "Greedy-decode a test set and report");
  evaluate->add_option("--run", run_dir, "Run directory; fills the unset paths below");
  evaluate->add_option("--checkpoint", eval.checkpoint_path, "Checkpoint file");
  evaluate->add_option("--tokenizer", eval.tokenizer_path, "Tokenizer file");
  evaluate->add_option("--test-src", eval.test_src, "Test source sentences");
  evaluate->add_option("--test-tgt", eval.test_tgt, "Test target sentences");
  evaluate->add_option("--out", eval.out_dir, "Directory for report.json / usage_records.jsonl");
  evaluate->add_option("--max-out-len", eval.max_out_len, "Greedy decoding length cap");

  CLI::App* grid = app.add_subcommand("grid", "Train and evaluate NMT vs PGN across sizes");
  grid->add_option("--config", config_path, "Base run config (train_n set per cell)")
      ->required()
      ->check(CLI::ExistingFile);
  grid->add_option("--sizes", sizes, "Training-set sizes, comma separated")
      ->required()
      ->delimiter(',');
  grid->add_option("--set", sets, "Override a config key, key=value (repeatable)");

  CLI::App* visualize = app.add_subcommand("visualize", "Render an attention trace to SVG");
  visualize->add_option("--trace", trace_path, "AttentionTrace JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  visualize->add_option("--out", out_path, "Output SVG path")->required();

  CLI::App* analyze = app.add_subcommand("analyze", "Report overlap heuristics for a corpus");
  analyze->add_option("--src", src_path, "Source sentences")->required()->check(CLI::ExistingFile);
  analyze->add_option("--tgt", tgt_path, "Target sentences")->required()->check(CLI::ExistingFile);
  analyze->add_option("--budget", budget, "Throwaway tokenizer budget");
  analyze->add_option("--out", out_path, "Report path (default: stdout)");

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic language pair");
  synth->add_option("--spec", spec_path, "Flat key = value SyntheticPairSpec file")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--out-src", src_path, "Output source file")->required();
  synth->add_option("--out-tgt", tgt_path, "Output target file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // bad flags are validation failures
  }

  try {
    if (*train) return cmd_train(config_path, sets);
    if (*evaluate) return cmd_evaluate(run_dir, eval);
    if (*grid) return cmd_grid(config_path, sets, sizes);
    if (*visualize) return cmd_visualize(trace_path, out_path);
    if (*analyze) return cmd_analyze(src_path, tgt_path, budget, out_path);
    if (*synth) return cmd_synth(spec_path, src_path, tgt_path);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
