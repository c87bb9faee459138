#pragma once

#include <optional>
#include <span>

#include "pgnmt/transformer.hpp"

namespace pgnmt {

// Cross-attention of the LAST decoder layer reduced per pgn_head_mode:
// averaged over heads, or one designated head. Shape [tgt_len, src_len].
Tensor head_reduced_cross_attention(const DecoderStepOutput& dec, const ModelConfig& config);

// c = a^T e: attention-weighted sum of encoder states. a is [src_len],
// e is [src_len, hidden]; result [hidden].
Tensor context_vector(const Tensor& a, const Tensor& e);

// p_copy = sigmoid(W^T (c ++ d ++ s) + B), a scalar strictly inside (0,1).
Tensor copy_gate(const Tensor& c, const Tensor& d, const Tensor& s, const GateParams& gate);

// Attention mass scattered onto the vocabulary ids of the source tokens.
// src_mask marks PAD positions (excluded); empty mask means no padding.
Tensor copy_distribution(const Tensor& attn_row, std::span<const Index> src_ids,
                         Index vocab_size, std::span<const std::uint8_t> src_mask = {});

// P = p_copy * P_c + (1 - p_copy) * P_g. p_copy is a scalar tensor.
Tensor mix(const Tensor& p_copy, const Tensor& p_c, const Tensor& p_g);

struct MixedDistribution {
  Tensor p;       // [tgt_len, vocab]
  Tensor p_copy;  // [tgt_len]
  Tensor p_c;     // [tgt_len, vocab]
  Tensor p_g;     // [tgt_len, vocab]
};

// Batched mixture over all target positions of a decoder pass. `src_ids`
// must be the encoder's (possibly truncated) input. When `forced_p_copy` is
// set the gate is clamped to that constant (diagnostics); otherwise the
// model must have gate parameters.
MixedDistribution mixed_distribution(const ModelParams& params, const EncoderStates& enc,
                                     const DecoderStepOutput& dec,
                                     std::span<const Index> src_ids,
                                     std::optional<double> forced_p_copy = std::nullopt);

// Mean over unmasked positions of -log(probs[t][gold_t] + 1e-9). pad_mask
// marks positions excluded from the loss; empty means none.
Tensor nll_loss(const Tensor& probs, std::span<const Index> gold_ids,
                std::span<const std::uint8_t> pad_mask = {});

Tensor pgn_loss(const MixedDistribution& mixed, std::span<const Index> gold_ids,
                std::span<const std::uint8_t> pad_mask = {});

// Full teacher-forced loss for one pair: encode, decode, then the mixed
// distribution's NLL when the gate is in play or the generate distribution's
// NLL otherwise. Dropout active iff dropout_rng is non-null.
Tensor sequence_loss(const ModelParams& params, std::span<const Index> src_ids,
                     std::span<const Index> decoder_in, std::span<const Index> gold_ids,
                     Rng* dropout_rng = nullptr,
                     std::optional<double> forced_p_copy = std::nullopt);

}  // namespace pgnmt
