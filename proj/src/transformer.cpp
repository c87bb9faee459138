#include "pgnmt/transformer.hpp"

#include <cmath>
#include <utility>

#include "pgnmt/errors.hpp"

namespace pgnmt {

void ModelConfig::validate() const {
  if (num_layers < 1) throw ValidationError("num_layers must be >= 1, got " + std::to_string(num_layers));
  if (num_heads < 1) throw ValidationError("num_heads must be >= 1, got " + std::to_string(num_heads));
  if (hidden_size < 1) throw ValidationError("hidden_size must be >= 1, got " + std::to_string(hidden_size));
  if (hidden_size % num_heads != 0) {
    throw ValidationError("hidden_size " + std::to_string(hidden_size) +
                          " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (ffn_size < 1) throw ValidationError("ffn_size must be >= 1, got " + std::to_string(ffn_size));
  if (max_len < 1) throw ValidationError("max_len must be >= 1, got " + std::to_string(max_len));
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ValidationError("dropout must lie in [0, 1), got " + std::to_string(dropout));
  }
  if (vocab_size < 5) {
    throw ValidationError("vocab_size must cover the 4 specials plus content, got " +
                          std::to_string(vocab_size));
  }
  if (pgn_head_mode == PgnHeadMode::kSingle &&
      (pgn_head_index < 0 || pgn_head_index >= num_heads)) {
    throw ValidationError("pgn_head_index " + std::to_string(pgn_head_index) +
                          " out of range for num_heads " + std::to_string(num_heads));
  }
}

namespace {

// rng == nullptr builds the all-zero layout used when loading checkpoints.
Tensor xavier(Index rows, Index cols, Rng* rng) {
  if (rng == nullptr) return Tensor::zeros({rows, cols}, true);
  return xavier_uniform(rows, cols, *rng);
}

LayerNormParams init_ln(Index h, Rng* rng) {
  if (rng == nullptr) return {Tensor::zeros({h}, true), Tensor::zeros({h}, true)};
  return {Tensor::full({h}, 1.0, true), Tensor::zeros({h}, true)};
}

AttentionParams init_attn(Index h, Rng* rng) {
  AttentionParams p;
  p.wq = xavier(h, h, rng);
  p.bq = Tensor::zeros({h}, true);
  p.wk = xavier(h, h, rng);
  p.bk = Tensor::zeros({h}, true);
  p.wv = xavier(h, h, rng);
  p.bv = Tensor::zeros({h}, true);
  p.wo = xavier(h, h, rng);
  p.bo = Tensor::zeros({h}, true);
  return p;
}

FfnParams init_ffn(Index h, Index f, Rng* rng) {
  FfnParams p;
  p.w1 = xavier(h, f, rng);
  p.b1 = Tensor::zeros({f}, true);
  p.w2 = xavier(f, h, rng);
  p.b2 = Tensor::zeros({h}, true);
  return p;
}

ModelParams build_params(const ModelConfig& config, Rng* rng) {
  config.validate();
  ModelParams p;
  p.config = config;
  const Index h = config.hidden_size;
  const Index f = config.ffn_size;

  p.embedding = xavier(config.vocab_size, h, rng);
  p.encoder.resize(static_cast<std::size_t>(config.num_layers));
  for (auto& layer : p.encoder) {
    layer.ln1 = init_ln(h, rng);
    layer.attn = init_attn(h, rng);
    layer.ln2 = init_ln(h, rng);
    layer.ffn = init_ffn(h, f, rng);
  }
  p.encoder_final_ln = init_ln(h, rng);
  p.decoder.resize(static_cast<std::size_t>(config.num_layers));
  for (auto& layer : p.decoder) {
    layer.ln1 = init_ln(h, rng);
    layer.self_attn = init_attn(h, rng);
    layer.ln2 = init_ln(h, rng);
    layer.cross_attn = init_attn(h, rng);
    layer.ln3 = init_ln(h, rng);
    layer.ffn = init_ffn(h, f, rng);
  }
  p.decoder_final_ln = init_ln(h, rng);
  p.out_weight = xavier(h, config.vocab_size, rng);
  p.out_bias = Tensor::zeros({config.vocab_size}, true);
  if (config.pgn_enabled) {
    p.gate.w = Tensor::zeros({3 * h}, true);
    p.gate.b = Tensor::zeros({1}, true);
  }
  return p;
}

void push_ln(std::vector<NamedParam>& out, const std::string& prefix, const LayerNormParams& p) {
  out.push_back({prefix + ".gain", p.gain});
  out.push_back({prefix + ".bias", p.bias});
}

void push_attn(std::vector<NamedParam>& out, const std::string& prefix, const AttentionParams& p) {
  out.push_back({prefix + ".wq", p.wq});
  out.push_back({prefix + ".bq", p.bq});
  out.push_back({prefix + ".wk", p.wk});
  out.push_back({prefix + ".bk", p.bk});
  out.push_back({prefix + ".wv", p.wv});
  out.push_back({prefix + ".bv", p.bv});
  out.push_back({prefix + ".wo", p.wo});
  out.push_back({prefix + ".bo", p.bo});
}

void push_ffn(std::vector<NamedParam>& out, const std::string& prefix, const FfnParams& p) {
  out.push_back({prefix + ".w1", p.w1});
  out.push_back({prefix + ".b1", p.b1});
  out.push_back({prefix + ".w2", p.w2});
  out.push_back({prefix + ".b2", p.b2});
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  Rng rng = seeded_rng(seed);
  return build_params(config, &rng);
}

ModelParams ModelParams::zeros(const ModelConfig& config) { return build_params(config, nullptr); }

std::vector<NamedParam> ModelParams::manifest() const {
  std::vector<NamedParam> out;
  out.push_back({"embed.weight", embedding});
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::string p = "enc." + std::to_string(i);
    push_ln(out, p + ".ln1", encoder[i].ln1);
    push_attn(out, p + ".attn", encoder[i].attn);
    push_ln(out, p + ".ln2", encoder[i].ln2);
    push_ffn(out, p + ".ffn", encoder[i].ffn);
  }
  push_ln(out, "enc.final_ln", encoder_final_ln);
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    const std::string p = "dec." + std::to_string(i);
    push_ln(out, p + ".ln1", decoder[i].ln1);
    push_attn(out, p + ".self", decoder[i].self_attn);
    push_ln(out, p + ".ln2", decoder[i].ln2);
    push_attn(out, p + ".cross", decoder[i].cross_attn);
    push_ln(out, p + ".ln3", decoder[i].ln3);
    push_ffn(out, p + ".ffn", decoder[i].ffn);
  }
  push_ln(out, "dec.final_ln", decoder_final_ln);
  out.push_back({"out.weight", out_weight});
  out.push_back({"out.bias", out_bias});
  if (config.pgn_enabled) {
    out.push_back({"pgn.W", gate.w});
    out.push_back({"pgn.B", gate.b});
  }
  return out;
}

std::vector<Tensor> ModelParams::trainable() const {
  std::vector<Tensor> out;
  for (auto& entry : manifest()) out.push_back(entry.tensor);
  return out;
}

Index ModelParams::param_count() const {
  Index n = 0;
  for (auto& entry : manifest()) n += entry.tensor.numel();
  return n;
}

Index expected_param_count(const ModelConfig& config) {
  const Index v = config.vocab_size;
  const Index h = config.hidden_size;
  const Index f = config.ffn_size;
  const Index l = config.num_layers;
  const Index enc_layer = 4 * h * h + 2 * h * f + 9 * h + f;
  const Index dec_layer = 8 * h * h + 2 * h * f + 15 * h + f;
  Index n = v * h + l * (enc_layer + dec_layer) + 4 * h + h * v + v;
  if (config.pgn_enabled) n += 3 * h + 1;
  return n;
}

Tensor positional_encoding(Index len, Index hidden) {
  std::vector<double> data(static_cast<std::size_t>(len * hidden), 0.0);
  for (Index pos = 0; pos < len; ++pos) {
    for (Index i = 0; i < hidden; i += 2) {
      const double rate = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(hidden));
      const double angle = static_cast<double>(pos) / rate;
      data[static_cast<std::size_t>(pos * hidden + i)] = std::sin(angle);
      if (i + 1 < hidden) data[static_cast<std::size_t>(pos * hidden + i + 1)] = std::cos(angle);
    }
  }
  return Tensor::from_data({len, hidden}, std::move(data));
}

namespace {

constexpr double kMaskValue = -1e30;

// Embedding lookup scaled by sqrt(hidden) plus position rows. Returned before
// dropout; the gate's s-input is defined on this pre-noise stream.
Tensor embed_sequence(const ModelParams& params, std::span<const Index> ids) {
  const Index h = params.config.hidden_size;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= params.config.vocab_size) {
      throw DimensionError("token id " + std::to_string(ids[i]) + " at position " +
                           std::to_string(i) + " outside vocab of size " +
                           std::to_string(params.config.vocab_size));
    }
  }
  Tensor emb = scale(gather_rows(params.embedding, ids), std::sqrt(static_cast<double>(h)));
  return add(emb, positional_encoding(static_cast<Index>(ids.size()), h));
}

Tensor maybe_dropout(const Tensor& x, const ModelParams& params, Rng* rng) {
  if (rng == nullptr) return x;
  return dropout(x, params.config.dropout, *rng, true);
}

// Multi-head attention: queries from q_in, keys/values from kv_in. `mask` is
// row-major [q_len, k_len] with 1 = blocked, or empty for no masking. When
// `head_weights` is non-null the per-head post-softmax matrices are appended.
Tensor attention_block(const AttentionParams& p, const Tensor& q_in, const Tensor& kv_in,
                       std::span<const std::uint8_t> mask, int num_heads,
                       std::vector<Tensor>* head_weights) {
  const Index h = q_in.dim(1);
  const Index dk = h / num_heads;
  Tensor q = add_rowvec(matmul(q_in, p.wq), p.bq);
  Tensor k = add_rowvec(matmul(kv_in, p.wk), p.bk);
  Tensor v = add_rowvec(matmul(kv_in, p.wv), p.bv);
  std::vector<Tensor> contexts;
  contexts.reserve(static_cast<std::size_t>(num_heads));
  for (int head = 0; head < num_heads; ++head) {
    Tensor qh = slice_lastdim(q, head * dk, dk);
    Tensor kh = slice_lastdim(k, head * dk, dk);
    Tensor vh = slice_lastdim(v, head * dk, dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dk)));
    if (!mask.empty()) scores = masked_fill(scores, mask, kMaskValue);
    Tensor weights = softmax(scores, -1);
    if (head_weights != nullptr) head_weights->push_back(weights);
    contexts.push_back(matmul(weights, vh));
  }
  Tensor ctx = concat_lastdim(contexts);
  return add_rowvec(matmul(ctx, p.wo), p.bo);
}

Tensor ffn_block(const FfnParams& p, const Tensor& x) {
  Tensor hidden = relu(add_rowvec(matmul(x, p.w1), p.b1));
  return add_rowvec(matmul(hidden, p.w2), p.b2);
}

}  // namespace

EncoderStates encode(const ModelParams& params, std::span<const Index> src_ids, Rng* dropout_rng) {
  if (src_ids.empty()) throw ValidationError("encoder input is empty");
  EncoderStates out;
  std::vector<Index> ids(src_ids.begin(), src_ids.end());
  if (static_cast<Index>(ids.size()) > params.config.max_len) {
    ids.resize(static_cast<std::size_t>(params.config.max_len));
    out.truncated = true;
  }
  const Index n = static_cast<Index>(ids.size());

  out.src_mask.assign(static_cast<std::size_t>(n), 0);
  bool any_pad = false;
  for (Index i = 0; i < n; ++i) {
    if (ids[static_cast<std::size_t>(i)] == Vocabulary::kPad) {
      out.src_mask[static_cast<std::size_t>(i)] = 1;
      any_pad = true;
    }
  }
  // Attention may not read PAD keys at any query position.
  std::vector<std::uint8_t> attn_mask;
  if (any_pad) {
    attn_mask.assign(static_cast<std::size_t>(n * n), 0);
    for (Index q = 0; q < n; ++q)
      for (Index k = 0; k < n; ++k)
        attn_mask[static_cast<std::size_t>(q * n + k)] = out.src_mask[static_cast<std::size_t>(k)];
  }

  Tensor x = maybe_dropout(embed_sequence(params, ids), params, dropout_rng);
  for (const auto& layer : params.encoder) {
    Tensor normed = layer_norm(x, layer.ln1.gain, layer.ln1.bias);
    Tensor attn = attention_block(layer.attn, normed, normed, attn_mask,
                                  params.config.num_heads, nullptr);
    x = add(x, maybe_dropout(attn, params, dropout_rng));
    Tensor normed2 = layer_norm(x, layer.ln2.gain, layer.ln2.bias);
    x = add(x, maybe_dropout(ffn_block(layer.ffn, normed2), params, dropout_rng));
  }
  out.e = layer_norm(x, params.encoder_final_ln.gain, params.encoder_final_ln.bias);
  return out;
}

DecoderStepOutput decode_forward(const ModelParams& params, std::span<const Index> tgt_ids,
                                 const EncoderStates& enc, Rng* dropout_rng) {
  if (tgt_ids.empty()) throw ValidationError("decoder input is empty");
  if (!enc.e.defined() || enc.e.ndim() != 2) throw ValidationError("encoder states are missing");
  if (enc.e.dim(1) != params.config.hidden_size) {
    throw ValidationError("encoder state width " + std::to_string(enc.e.dim(1)) +
                          " does not match decoder hidden_size " +
                          std::to_string(params.config.hidden_size));
  }
  const Index s_len = enc.e.dim(0);
  if (static_cast<Index>(enc.src_mask.size()) != s_len) {
    throw ValidationError("source mask length " + std::to_string(enc.src_mask.size()) +
                          " does not match encoder length " + std::to_string(s_len));
  }

  DecoderStepOutput out;
  std::vector<Index> ids(tgt_ids.begin(), tgt_ids.end());
  if (static_cast<Index>(ids.size()) > params.config.max_len) {
    ids.resize(static_cast<std::size_t>(params.config.max_len));
    out.truncated = true;
  }
  const Index t_len = static_cast<Index>(ids.size());

  std::vector<std::uint8_t> causal(static_cast<std::size_t>(t_len * t_len), 0);
  for (Index q = 0; q < t_len; ++q)
    for (Index k = q + 1; k < t_len; ++k) causal[static_cast<std::size_t>(q * t_len + k)] = 1;

  std::vector<std::uint8_t> cross_mask;
  bool any_pad = false;
  for (auto m : enc.src_mask) any_pad = any_pad || m != 0;
  if (any_pad) {
    cross_mask.assign(static_cast<std::size_t>(t_len * s_len), 0);
    for (Index q = 0; q < t_len; ++q)
      for (Index k = 0; k < s_len; ++k)
        cross_mask[static_cast<std::size_t>(q * s_len + k)] = enc.src_mask[static_cast<std::size_t>(k)];
  }

  out.s = embed_sequence(params, ids);
  Tensor x = maybe_dropout(out.s, params, dropout_rng);
  out.cross_attn.reserve(params.decoder.size());
  for (const auto& layer : params.decoder) {
    Tensor normed = layer_norm(x, layer.ln1.gain, layer.ln1.bias);
    Tensor self_out = attention_block(layer.self_attn, normed, normed, causal,
                                      params.config.num_heads, nullptr);
    x = add(x, maybe_dropout(self_out, params, dropout_rng));

    Tensor normed2 = layer_norm(x, layer.ln2.gain, layer.ln2.bias);
    std::vector<Tensor> heads;
    Tensor cross_out = attention_block(layer.cross_attn, normed2, enc.e, cross_mask,
                                       params.config.num_heads, &heads);
    out.cross_attn.push_back(std::move(heads));
    x = add(x, maybe_dropout(cross_out, params, dropout_rng));

    Tensor normed3 = layer_norm(x, layer.ln3.gain, layer.ln3.bias);
    x = add(x, maybe_dropout(ffn_block(layer.ffn, normed3), params, dropout_rng));
  }
  out.d = layer_norm(x, params.decoder_final_ln.gain, params.decoder_final_ln.bias);
  out.gen_logits = add_rowvec(matmul(out.d, params.out_weight), params.out_bias);
  return out;
}

}  // namespace pgnmt
