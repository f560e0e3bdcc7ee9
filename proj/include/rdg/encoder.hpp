#pragma once

// Miniature ALBERT-style encoder: summed embeddings with layer norm, one
// parameter-shared post-LN transformer layer applied L times, and a
// first-token linear scoring head. The same body runs the teacher (gates
// fixed to the input mask) and the student (dynamic gates), so the two paths
// coincide bit-for-bit when the gates do.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rdg/data.hpp"
#include "rdg/ops.hpp"
#include "rdg/tensor.hpp"

namespace rdg {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_len = 64;
  std::size_t type_vocab = 2;
  double layernorm_eps = 1e-12;
  double init_sigma = 0.02;

  void validate() const {
    if (vocab_size == 0 || hidden == 0 || heads == 0 || ffn_dim == 0 ||
        max_len == 0)
      throw std::invalid_argument("encoder config: sizes must be positive");
    if (hidden % heads != 0)
      throw std::invalid_argument("encoder config: hidden=" +
                                  std::to_string(hidden) +
                                  " not divisible by heads=" +
                                  std::to_string(heads));
    if (layernorm_eps <= 0.0)
      throw std::invalid_argument("encoder config: layernorm_eps must be > 0");
    if (init_sigma <= 0.0)
      throw std::invalid_argument("encoder config: init_sigma must be > 0");
  }
};

struct EmbeddingTables {
  Tensor word;        // [vocab x h]
  Tensor position;    // [max_len x h]
  Tensor token_type;  // [2 x h]
};

// One transformer layer's weights; a single instance is applied at every
// depth, so the parameter count does not depend on L.
struct SharedLayerParams {
  Tensor attn_q_w, attn_q_b;
  Tensor attn_k_w, attn_k_b;
  Tensor attn_v_w, attn_v_b;
  Tensor attn_out_w, attn_out_b;
  Tensor ln1_gain, ln1_bias;
  Tensor ffn_in_w, ffn_in_b;
  Tensor ffn_out_w, ffn_out_b;
  Tensor ln2_gain, ln2_bias;
};

struct EncoderParams {
  EmbeddingTables tables;
  Tensor emb_ln_gain, emb_ln_bias;
  SharedLayerParams layer;
};

struct EncoderOutput {
  std::vector<Tensor> hidden_states;              // H_0..H_L, each [l x h]
  std::vector<std::vector<Tensor>> attention_maps;  // [layer][head] of [l x l]
};

inline SharedLayerParams init_layer_params(const EncoderConfig& cfg,
                                           Rng& rng) {
  const std::size_t h = cfg.hidden, f = cfg.ffn_dim;
  const double sigma = cfg.init_sigma;
  SharedLayerParams p;
  p.attn_q_w = randn({h, h}, sigma, rng, true);
  p.attn_q_b = Tensor::zeros({h}, true);
  p.attn_k_w = randn({h, h}, sigma, rng, true);
  p.attn_k_b = Tensor::zeros({h}, true);
  p.attn_v_w = randn({h, h}, sigma, rng, true);
  p.attn_v_b = Tensor::zeros({h}, true);
  p.attn_out_w = randn({h, h}, sigma, rng, true);
  p.attn_out_b = Tensor::zeros({h}, true);
  p.ln1_gain = Tensor::filled({h}, 1.0, true);
  p.ln1_bias = Tensor::zeros({h}, true);
  p.ffn_in_w = randn({h, f}, sigma, rng, true);
  p.ffn_in_b = Tensor::zeros({f}, true);
  p.ffn_out_w = randn({f, h}, sigma, rng, true);
  p.ffn_out_b = Tensor::zeros({h}, true);
  p.ln2_gain = Tensor::filled({h}, 1.0, true);
  p.ln2_bias = Tensor::zeros({h}, true);
  return p;
}

inline EncoderParams init_encoder_params(const EncoderConfig& cfg, Rng& rng) {
  const double sigma = cfg.init_sigma;
  EncoderParams p;
  p.tables.word = randn({cfg.vocab_size, cfg.hidden}, sigma, rng, true);
  p.tables.position = randn({cfg.max_len, cfg.hidden}, sigma, rng, true);
  p.tables.token_type =
      randn({cfg.type_vocab, cfg.hidden}, sigma, rng, true);
  p.emb_ln_gain = Tensor::filled({cfg.hidden}, 1.0, true);
  p.emb_ln_bias = Tensor::zeros({cfg.hidden}, true);
  p.layer = init_layer_params(cfg, rng);
  return p;
}

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

inline void append_layer_params(const std::string& prefix,
                                const SharedLayerParams& p, NamedParams& out) {
  out.emplace_back(prefix + "attn_q_w", p.attn_q_w);
  out.emplace_back(prefix + "attn_q_b", p.attn_q_b);
  out.emplace_back(prefix + "attn_k_w", p.attn_k_w);
  out.emplace_back(prefix + "attn_k_b", p.attn_k_b);
  out.emplace_back(prefix + "attn_v_w", p.attn_v_w);
  out.emplace_back(prefix + "attn_v_b", p.attn_v_b);
  out.emplace_back(prefix + "attn_out_w", p.attn_out_w);
  out.emplace_back(prefix + "attn_out_b", p.attn_out_b);
  out.emplace_back(prefix + "ln1_gain", p.ln1_gain);
  out.emplace_back(prefix + "ln1_bias", p.ln1_bias);
  out.emplace_back(prefix + "ffn_in_w", p.ffn_in_w);
  out.emplace_back(prefix + "ffn_in_b", p.ffn_in_b);
  out.emplace_back(prefix + "ffn_out_w", p.ffn_out_w);
  out.emplace_back(prefix + "ffn_out_b", p.ffn_out_b);
  out.emplace_back(prefix + "ln2_gain", p.ln2_gain);
  out.emplace_back(prefix + "ln2_bias", p.ln2_bias);
}

inline void append_encoder_params(const std::string& prefix,
                                  const EncoderParams& p, NamedParams& out) {
  out.emplace_back(prefix + "embeddings.word", p.tables.word);
  out.emplace_back(prefix + "embeddings.position", p.tables.position);
  out.emplace_back(prefix + "embeddings.token_type", p.tables.token_type);
  out.emplace_back(prefix + "embeddings.ln_gain", p.emb_ln_gain);
  out.emplace_back(prefix + "embeddings.ln_bias", p.emb_ln_bias);
  append_layer_params(prefix + "layer.", p.layer, out);
}

// Additive pre-softmax key mask: 0 where the key is real, -1e9 where padded.
// exp(-1e9) underflows to zero in f64, so padded keys get exactly zero
// attention.
inline Tensor attention_bias(const std::vector<double>& key_mask) {
  Tensor b = Tensor::zeros({key_mask.size()});
  for (std::size_t i = 0; i < key_mask.size(); ++i)
    b.at(i) = key_mask[i] > 0.5 ? 0.0 : -1e9;
  return b;
}

inline Tensor embed(const EncoderConfig& cfg, const EncoderParams& p,
                    const std::vector<std::size_t>& token_ids,
                    const std::vector<std::size_t>& type_ids,
                    const std::vector<std::size_t>& positions) {
  if (token_ids.size() != type_ids.size() ||
      token_ids.size() != positions.size())
    throw std::invalid_argument("embed: id vectors must have equal length");
  Tensor e = add(add(embedding_rows(p.tables.word, token_ids),
                     embedding_rows(p.tables.position, positions)),
                 embedding_rows(p.tables.token_type, type_ids));
  return layer_norm(e, p.emb_ln_gain, p.emb_ln_bias, cfg.layernorm_eps);
}

inline Tensor embed(const EncoderConfig& cfg, const EncoderParams& p,
                    const PackedSequence& packed) {
  const std::size_t l = packed.token_ids.size();
  if (l > cfg.max_len)
    throw std::invalid_argument("embed: sequence length " + std::to_string(l) +
                                " exceeds max_len " +
                                std::to_string(cfg.max_len));
  std::vector<std::size_t> type_ids(l), positions(l);
  for (std::size_t i = 0; i < l; ++i) {
    type_ids[i] = packed.token_types[i] > 0.5 ? 1 : 0;
    positions[i] = i;
  }
  return embed(cfg, p, packed.token_ids, type_ids, positions);
}

// Post-LN multi-head self-attention + GELU FFN, residuals around both
// sub-layers. key_bias is the additive mask; per-head attention rows are
// appended to attn_maps when given.
inline Tensor transformer_layer(const Tensor& x, const SharedLayerParams& p,
                                std::size_t heads, double eps,
                                const Tensor& key_bias,
                                std::vector<Tensor>* attn_maps = nullptr) {
  const std::size_t h = x.dim(1);
  if (h % heads != 0)
    throw std::invalid_argument("transformer_layer: hidden " +
                                std::to_string(h) + " not divisible by " +
                                std::to_string(heads) + " heads");
  const std::size_t d = h / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor q = add_row_vector(matmul(x, p.attn_q_w), p.attn_q_b);
  Tensor k = add_row_vector(matmul(x, p.attn_k_w), p.attn_k_b);
  Tensor v = add_row_vector(matmul(x, p.attn_v_w), p.attn_v_b);

  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Tensor qh = slice_cols(q, hd * d, (hd + 1) * d);
    Tensor kh = slice_cols(k, hd * d, (hd + 1) * d);
    Tensor vh = slice_cols(v, hd * d, (hd + 1) * d);
    Tensor scores =
        add_row_vector(scale(matmul(qh, transpose(kh)), inv_sqrt_d), key_bias);
    Tensor probs = softmax(scores, 1);
    if (attn_maps) attn_maps->push_back(probs);
    head_outs.push_back(matmul(probs, vh));
  }

  Tensor attn =
      add_row_vector(matmul(concat_cols(head_outs), p.attn_out_w),
                     p.attn_out_b);
  Tensor y = layer_norm(add(x, attn), p.ln1_gain, p.ln1_bias, eps);
  Tensor f = gelu(add_row_vector(matmul(y, p.ffn_in_w), p.ffn_in_b));
  Tensor out = add_row_vector(matmul(f, p.ffn_out_w), p.ffn_out_b);
  return layer_norm(add(y, out), p.ln2_gain, p.ln2_bias, eps);
}

// Per-layer gate source: called with the 1-based layer index and the previous
// hidden state, returns the gate vector multiplied into its rows.
using GateProvider =
    std::function<Tensor(std::size_t layer_index, const Tensor& h_prev)>;

inline EncoderOutput encode_body(const EncoderConfig& cfg,
                                 const EncoderParams& p,
                                 const PackedSequence& packed,
                                 const GateProvider& gates) {
  EncoderOutput out;
  Tensor h = embed(cfg, p, packed);
  out.hidden_states.push_back(h);
  const Tensor key_bias = attention_bias(packed.input_mask);
  for (std::size_t i = 1; i <= cfg.layers; ++i) {
    Tensor r = gates(i, h);
    Tensor gated = scale_rows(h, r);
    std::vector<Tensor> maps;
    h = transformer_layer(gated, p.layer, cfg.heads, cfg.layernorm_eps,
                          key_bias, &maps);
    out.attention_maps.push_back(std::move(maps));
    out.hidden_states.push_back(h);
  }
  return out;
}

// Teacher path: the gate vector is the input mask at every layer.
inline EncoderOutput encode_teacher(const EncoderConfig& cfg,
                                    const EncoderParams& p,
                                    const PackedSequence& packed) {
  const Tensor mask =
      Tensor::from({packed.input_mask.size()}, packed.input_mask);
  return encode_body(cfg, p, packed,
                     [&mask](std::size_t, const Tensor&) { return mask; });
}

// Logit = w_o . H_L[0], the [CLS] row of the final hidden state.
inline Tensor pool_and_score(const Tensor& h_last, const Tensor& w_o) {
  return dot(w_o, row(h_last, 0));
}

}  // namespace rdg
