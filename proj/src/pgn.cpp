#include "pgnmt/pgn.hpp"

#include <cmath>
#include <utility>

#include "pgnmt/errors.hpp"

namespace pgnmt {

namespace {

constexpr double kLossEps = 1e-9;

// src masks mark PAD positions; scatter_add_rows wants the positions to keep.
std::vector<std::uint8_t> invert_mask(std::span<const std::uint8_t> pad_mask) {
  std::vector<std::uint8_t> keep(pad_mask.size());
  for (std::size_t i = 0; i < pad_mask.size(); ++i) keep[i] = pad_mask[i] ? 0 : 1;
  return keep;
}

}  // namespace

Tensor head_reduced_cross_attention(const DecoderStepOutput& dec, const ModelConfig& config) {
  if (dec.cross_attn.empty()) throw ContractError("decoder output carries no cross-attention");
  const auto& heads = dec.cross_attn.back();
  if (heads.empty()) throw ContractError("last decoder layer has no attention heads");
  if (config.pgn_head_mode == PgnHeadMode::kSingle) {
    if (config.pgn_head_index < 0 || config.pgn_head_index >= static_cast<int>(heads.size())) {
      throw ValidationError("pgn_head_index " + std::to_string(config.pgn_head_index) +
                            " out of range for " + std::to_string(heads.size()) + " heads");
    }
    return heads[static_cast<std::size_t>(config.pgn_head_index)];
  }
  Tensor acc = heads[0];
  for (std::size_t h = 1; h < heads.size(); ++h) acc = add(acc, heads[h]);
  return scale(acc, 1.0 / static_cast<double>(heads.size()));
}

Tensor context_vector(const Tensor& a, const Tensor& e) {
  if (a.ndim() != 1 || e.ndim() != 2 || a.dim(0) != e.dim(0)) {
    throw DimensionError("context_vector: attention " + shape_str(a.shape()) +
                         " does not pair with encoder states " + shape_str(e.shape()));
  }
  const Index s = a.dim(0);
  return reshape(matmul(reshape(a, {1, s}), e), {e.dim(1)});
}

Tensor copy_gate(const Tensor& c, const Tensor& d, const Tensor& s, const GateParams& gate) {
  if (c.ndim() != 1 || d.ndim() != 1 || s.ndim() != 1) {
    throw DimensionError("copy_gate: expected vectors, got " + shape_str(c.shape()) + ", " +
                         shape_str(d.shape()) + ", " + shape_str(s.shape()));
  }
  const Tensor parts[] = {c, d, s};
  Tensor cat = concat_lastdim(parts);
  if (!gate.w.defined() || gate.w.numel() != cat.numel()) {
    throw DimensionError("copy_gate: gate weight length " +
                         std::to_string(gate.w.defined() ? gate.w.numel() : 0) +
                         " does not match concatenation length " + std::to_string(cat.numel()));
  }
  Tensor z = matmul(reshape(cat, {1, cat.numel()}), reshape(gate.w, {cat.numel(), 1}));
  z = add_rowvec(z, gate.b);
  return reshape(sigmoid(z), {1});
}

Tensor copy_distribution(const Tensor& attn_row, std::span<const Index> src_ids,
                         Index vocab_size, std::span<const std::uint8_t> src_mask) {
  if (attn_row.ndim() != 1 || attn_row.dim(0) != static_cast<Index>(src_ids.size())) {
    throw DimensionError("copy_distribution: attention " + shape_str(attn_row.shape()) +
                         " does not cover " + std::to_string(src_ids.size()) + " source ids");
  }
  const Index s = attn_row.dim(0);
  Tensor row = reshape(attn_row, {1, s});
  if (src_mask.empty()) {
    return reshape(scatter_add_rows(row, src_ids, vocab_size), {vocab_size});
  }
  std::vector<std::uint8_t> keep = invert_mask(src_mask);
  return reshape(scatter_add_rows(row, src_ids, vocab_size, keep), {vocab_size});
}

Tensor mix(const Tensor& p_copy, const Tensor& p_c, const Tensor& p_g) {
  if (p_copy.numel() != 1) {
    throw DimensionError("mix: p_copy must be a scalar, got " + shape_str(p_copy.shape()));
  }
  if (p_c.shape() != p_g.shape()) {
    throw DimensionError("mix: copy " + shape_str(p_c.shape()) + " vs generate " +
                         shape_str(p_g.shape()));
  }
  const Index n = p_c.numel();
  Tensor pc_flat = reshape(p_c, {1, n});
  Tensor pg_flat = reshape(p_g, {1, n});
  Tensor one = Tensor::scalar(1.0);
  Tensor copy_part = scale_rows(pc_flat, p_copy);
  Tensor gen_part = scale_rows(pg_flat, sub(one, p_copy));
  return reshape(add(copy_part, gen_part), p_c.shape());
}

MixedDistribution mixed_distribution(const ModelParams& params, const EncoderStates& enc,
                                     const DecoderStepOutput& dec,
                                     std::span<const Index> src_ids,
                                     std::optional<double> forced_p_copy) {
  if (static_cast<Index>(src_ids.size()) != enc.e.dim(0)) {
    throw DimensionError("mixed_distribution: " + std::to_string(src_ids.size()) +
                         " source ids vs encoder states " + shape_str(enc.e.shape()));
  }
  if (!params.config.pgn_enabled && !forced_p_copy.has_value()) {
    throw ContractError("mixed_distribution: model has no gate and no forced p_copy was given");
  }
  const Index t_len = dec.d.dim(0);
  const Index v = params.config.vocab_size;

  MixedDistribution out;
  out.p_g = softmax(dec.gen_logits, -1);
  Tensor attn = head_reduced_cross_attention(dec, params.config);
  std::vector<std::uint8_t> keep = invert_mask(enc.src_mask);
  out.p_c = scatter_add_rows(attn, src_ids, v, keep);

  if (forced_p_copy.has_value()) {
    const double f = *forced_p_copy;
    if (!(f >= 0.0 && f <= 1.0)) {
      throw ValidationError("forced p_copy must lie in [0, 1], got " + std::to_string(f));
    }
    out.p_copy = Tensor::full({t_len}, f);
  } else {
    Tensor c = matmul(attn, enc.e);
    const Tensor parts[] = {c, dec.d, dec.s};
    Tensor cat = concat_lastdim(parts);
    Tensor z = matmul(cat, reshape(params.gate.w, {cat.dim(1), Index{1}}));
    z = add_rowvec(z, params.gate.b);
    out.p_copy = reshape(sigmoid(z), {t_len});
  }

  Tensor gen_weight = add_scalar(neg(out.p_copy), 1.0);
  out.p = add(scale_rows(out.p_c, out.p_copy), scale_rows(out.p_g, gen_weight));
  return out;
}

Tensor nll_loss(const Tensor& probs, std::span<const Index> gold_ids,
                std::span<const std::uint8_t> pad_mask) {
  if (probs.ndim() != 2 || probs.dim(0) != static_cast<Index>(gold_ids.size())) {
    throw DimensionError("nll_loss: probabilities " + shape_str(probs.shape()) + " vs " +
                         std::to_string(gold_ids.size()) + " gold ids");
  }
  if (!pad_mask.empty() && pad_mask.size() != gold_ids.size()) {
    throw DimensionError("nll_loss: mask length " + std::to_string(pad_mask.size()) + " vs " +
                         std::to_string(gold_ids.size()) + " positions");
  }
  const Index t_len = probs.dim(0);
  Tensor picked = pick_per_row(probs, gold_ids);
  Tensor lg = log(add_scalar(picked, kLossEps));
  if (pad_mask.empty()) return neg(mean(lg));

  std::vector<double> weights(static_cast<std::size_t>(t_len), 0.0);
  Index kept = 0;
  for (Index t = 0; t < t_len; ++t) {
    if (pad_mask[static_cast<std::size_t>(t)] == 0) {
      weights[static_cast<std::size_t>(t)] = 1.0;
      ++kept;
    }
  }
  if (kept == 0) throw ContractError("nll_loss: every target position is masked");
  Tensor w = Tensor::from_data({t_len}, std::move(weights));
  return scale(sum(mul(lg, w)), -1.0 / static_cast<double>(kept));
}

Tensor pgn_loss(const MixedDistribution& mixed, std::span<const Index> gold_ids,
                std::span<const std::uint8_t> pad_mask) {
  return nll_loss(mixed.p, gold_ids, pad_mask);
}

Tensor sequence_loss(const ModelParams& params, std::span<const Index> src_ids,
                     std::span<const Index> decoder_in, std::span<const Index> gold_ids,
                     Rng* dropout_rng, std::optional<double> forced_p_copy) {
  EncoderStates enc = encode(params, src_ids, dropout_rng);
  DecoderStepOutput dec = decode_forward(params, decoder_in, enc, dropout_rng);
  std::span<const Index> src_used = src_ids.first(static_cast<std::size_t>(enc.e.dim(0)));
  if (params.config.pgn_enabled || forced_p_copy.has_value()) {
    MixedDistribution md = mixed_distribution(params, enc, dec, src_used, forced_p_copy);
    return pgn_loss(md, gold_ids);
  }
  return nll_loss(softmax(dec.gen_logits, -1), gold_ids);
}

// ---- decoding and tracing (declared in transformer.hpp) ----

namespace {

Index argmax_lowest(std::span<const double> row) {
  Index best = 0;
  for (Index i = 1; i < static_cast<Index>(row.size()); ++i) {
    if (row[static_cast<std::size_t>(i)] > row[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

std::vector<std::string> token_strings(std::span<const Index> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (Index id : ids) out.push_back(vocab.subword(id));
  return out;
}

// Probability rows for one decoder pass: the mixture when a gate (real or
// forced) is in play, the generate softmax otherwise. Also reports the
// head-reduced attention and per-row p_copy (0 when no gate exists).
struct StepRows {
  Tensor probs;
  Tensor attn;
  std::vector<double> p_copy;
};

StepRows step_rows(const ModelParams& params, const EncoderStates& enc,
                   const DecoderStepOutput& dec, std::span<const Index> src_used,
                   std::optional<double> forced_p_copy) {
  StepRows out;
  out.attn = head_reduced_cross_attention(dec, params.config);
  if (params.config.pgn_enabled || forced_p_copy.has_value()) {
    MixedDistribution md = mixed_distribution(params, enc, dec, src_used, forced_p_copy);
    out.probs = md.p;
    out.p_copy.assign(md.p_copy.values().begin(), md.p_copy.values().end());
  } else {
    out.probs = softmax(dec.gen_logits, -1);
    out.p_copy.assign(static_cast<std::size_t>(dec.d.dim(0)), 0.0);
  }
  return out;
}

std::vector<double> tensor_row(const Tensor& m, Index row) {
  const Index cols = m.dim(1);
  auto vals = m.values().subspan(static_cast<std::size_t>(row * cols),
                                 static_cast<std::size_t>(cols));
  return {vals.begin(), vals.end()};
}

}  // namespace

GreedyResult greedy_decode(const ModelParams& params, std::span<const Index> src_ids,
                           Index max_out_len, const Vocabulary& vocab,
                           std::int64_t checkpoint_step,
                           std::optional<double> forced_p_copy) {
  if (max_out_len < 0) throw ValidationError("max_out_len must be >= 0");
  EncoderStates enc = encode(params, src_ids);
  std::span<const Index> src_used = src_ids.first(static_cast<std::size_t>(enc.e.dim(0)));

  GreedyResult result;
  result.trace.source_tokens = token_strings(src_used, vocab);
  result.trace.checkpoint_step = checkpoint_step;

  std::vector<Index> dec_in{Vocabulary::kBos};
  while (static_cast<Index>(result.ids.size()) < max_out_len) {
    DecoderStepOutput dec = decode_forward(params, dec_in, enc);
    StepRows rows = step_rows(params, enc, dec, src_used, forced_p_copy);
    const Index last = dec.d.dim(0) - 1;
    Index next = argmax_lowest(rows.probs.values().subspan(
        static_cast<std::size_t>(last * params.config.vocab_size),
        static_cast<std::size_t>(params.config.vocab_size)));
    if (next == Vocabulary::kEos) break;
    result.ids.push_back(next);
    result.trace.target_tokens.push_back(vocab.subword(next));
    result.trace.attention.push_back(tensor_row(rows.attn, last));
    result.trace.p_copy.push_back(rows.p_copy[static_cast<std::size_t>(last)]);
    dec_in.push_back(next);
  }
  return result;
}

AttentionTrace trace_pair(const ModelParams& params, std::span<const Index> src_ids,
                          std::span<const Index> tgt_ids, const Vocabulary& vocab,
                          std::int64_t checkpoint_step,
                          std::optional<double> forced_p_copy) {
  if (tgt_ids.empty()) throw ValidationError("trace_pair: empty target");
  EncoderStates enc = encode(params, src_ids);
  std::span<const Index> src_used = src_ids.first(static_cast<std::size_t>(enc.e.dim(0)));

  std::vector<Index> dec_in{Vocabulary::kBos};
  dec_in.insert(dec_in.end(), tgt_ids.begin(), tgt_ids.end() - 1);
  DecoderStepOutput dec = decode_forward(params, dec_in, enc);
  StepRows rows = step_rows(params, enc, dec, src_used, forced_p_copy);

  AttentionTrace trace;
  trace.checkpoint_step = checkpoint_step;
  trace.source_tokens = token_strings(src_used, vocab);
  trace.target_tokens = token_strings(tgt_ids, vocab);
  const Index t_len = dec.d.dim(0);
  for (Index t = 0; t < t_len; ++t) {
    trace.attention.push_back(tensor_row(rows.attn, t));
    trace.p_copy.push_back(rows.p_copy[static_cast<std::size_t>(t)]);
  }
  return trace;
}

}  // namespace pgnmt
