#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pgnmt/bpe.hpp"
#include "pgnmt/tensor.hpp"

namespace pgnmt {

enum class PgnHeadMode { kAveraged, kSingle };

struct ModelConfig {
  int num_layers = 6;
  int num_heads = 4;
  Index hidden_size = 512;
  Index ffn_size = 2048;
  Index max_len = 256;
  double dropout = 0.1;
  Index vocab_size = 0;
  bool pgn_enabled = true;
  PgnHeadMode pgn_head_mode = PgnHeadMode::kAveraged;
  int pgn_head_index = 0;

  void validate() const;
  Index head_size() const { return hidden_size / num_heads; }
};

struct LayerNormParams {
  Tensor gain, bias;
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FfnParams {
  Tensor w1, b1, w2, b2;
};

struct EncoderLayerParams {
  LayerNormParams ln1;
  AttentionParams attn;
  LayerNormParams ln2;
  FfnParams ffn;
};

struct DecoderLayerParams {
  LayerNormParams ln1;
  AttentionParams self_attn;
  LayerNormParams ln2;
  AttentionParams cross_attn;
  LayerNormParams ln3;
  FfnParams ffn;
};

struct GateParams {
  Tensor w;  // [3 * hidden]
  Tensor b;  // scalar
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct ModelParams {
  ModelConfig config;
  Tensor embedding;  // [vocab, hidden], shared by encoder and decoder inputs
  std::vector<EncoderLayerParams> encoder;
  LayerNormParams encoder_final_ln;
  std::vector<DecoderLayerParams> decoder;
  LayerNormParams decoder_final_ln;
  Tensor out_weight;  // [hidden, vocab]
  Tensor out_bias;    // [vocab]
  GateParams gate;    // present iff config.pgn_enabled

  // Xavier-uniform matrices, zero biases, unit layer-norm gains. Parameters
  // are drawn in manifest order; the gate consumes no randomness, so
  // pgn_enabled=false shares every other tensor bit-for-bit under one seed.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  // Same tensor layout with all-zero values; checkpoint loading fills it in.
  static ModelParams zeros(const ModelConfig& config);

  // Fixed naming/order; checkpoints and the optimizer both follow it.
  std::vector<NamedParam> manifest() const;
  std::vector<Tensor> trainable() const;
  Index param_count() const;
};

// Closed form for the manifest's total element count (documented in README).
Index expected_param_count(const ModelConfig& config);

struct EncoderStates {
  Tensor e;                            // [src_len, hidden]
  std::vector<std::uint8_t> src_mask;  // 1 marks PAD positions
  bool truncated = false;
};

struct DecoderStepOutput {
  Tensor d;           // [tgt_len, hidden], final decoder states
  Tensor s;           // [tgt_len, hidden], input embeddings after positions
  Tensor gen_logits;  // [tgt_len, vocab]
  std::vector<std::vector<Tensor>> cross_attn;  // [layer][head] of [tgt_len, src_len]
  bool truncated = false;
};

// Sinusoidal position rows [len, hidden].
Tensor positional_encoding(Index len, Index hidden);

// Dropout is active exactly when `dropout_rng` is non-null (training mode).
EncoderStates encode(const ModelParams& params, std::span<const Index> src_ids,
                     Rng* dropout_rng = nullptr);

DecoderStepOutput decode_forward(const ModelParams& params, std::span<const Index> tgt_ids,
                                 const EncoderStates& enc, Rng* dropout_rng = nullptr);

struct AttentionTrace {
  std::vector<std::string> source_tokens;
  std::vector<std::string> target_tokens;
  std::vector<std::vector<double>> attention;  // [tgt][src], head-reduced
  std::vector<double> p_copy;                  // per target token
  std::int64_t checkpoint_step = 0;
};

struct GreedyResult {
  std::vector<Index> ids;  // emitted tokens, no BOS/EOS
  AttentionTrace trace;
};

// Argmax decoding from BOS until EOS or max_out_len. Uses the mixed
// distribution when the gate exists (optionally clamped to `forced_p_copy`),
// otherwise the generate distribution. Ties resolve to the lowest id.
GreedyResult greedy_decode(const ModelParams& params, std::span<const Index> src_ids,
                           Index max_out_len, const Vocabulary& vocab,
                           std::int64_t checkpoint_step = 0,
                           std::optional<double> forced_p_copy = std::nullopt);

// Teacher-forced trace over a gold pair; row t describes the prediction of
// tgt_ids[t].
AttentionTrace trace_pair(const ModelParams& params, std::span<const Index> src_ids,
                          std::span<const Index> tgt_ids, const Vocabulary& vocab,
                          std::int64_t checkpoint_step = 0,
                          std::optional<double> forced_p_copy = std::nullopt);

}  // namespace pgnmt
