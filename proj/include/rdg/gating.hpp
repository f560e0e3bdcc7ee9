#pragma once

// Recursive dynamic gating: per-token gate values computed from the previous
// layer's output by a dedicated (non-shared) transformer layer, smoothed with
// a same-length convolution, blended with history, and masked so question and
// choice positions stay fully open while padding stays closed.

#include <string>
#include <vector>

#include "rdg/encoder.hpp"

namespace rdg {

enum class HistoryMode { recursive, constant };

inline std::string to_string(HistoryMode m) {
  return m == HistoryMode::recursive ? "recursive" : "constant";
}

inline HistoryMode history_mode_from_string(const std::string& s) {
  if (s == "recursive") return HistoryMode::recursive;
  if (s == "constant") return HistoryMode::constant;
  throw std::invalid_argument("unknown history mode '" + s +
                              "' (expected recursive|constant)");
}

struct GateConfig {
  double gamma = 0.8;
  std::size_t kernel_size = 3;
  HistoryMode history_mode = HistoryMode::constant;
  bool use_conv = true;      // ablation: drop the convolutional smoothing
  bool use_history = true;   // ablation: drop the history blend
  bool per_layer_params = false;  // one gating transformer per depth
  bool protect_cls = true;   // force the [CLS] gate open

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("gate config: gamma must lie in (0,1), got " +
                                  std::to_string(gamma));
    if (kernel_size % 2 == 0)
      throw std::invalid_argument("gate config: kernel size must be odd, got " +
                                  std::to_string(kernel_size));
  }
};

// Gating parameters are stored apart from the encoder's shared layer;
// mutating one never changes the other.
struct GatingParams {
  std::vector<SharedLayerParams> layers;  // one entry, or L with per-layer mode
  Tensor score_w;      // [h]
  Tensor conv_kernel;  // [k]
  Tensor conv_bias;    // scalar
};

inline GatingParams init_gating_params(const EncoderConfig& cfg,
                                       const GateConfig& gcfg, Rng& rng) {
  GatingParams p;
  const std::size_t n = gcfg.per_layer_params ? cfg.layers : 1;
  for (std::size_t i = 0; i < n; ++i)
    p.layers.push_back(init_layer_params(cfg, rng));
  p.score_w = randn({cfg.hidden}, cfg.init_sigma, rng, true);
  p.conv_kernel = randn({gcfg.kernel_size}, cfg.init_sigma, rng, true);
  // Positive bias starts the smoothed gates high but unsaturated: the clip
  // stays transparent, and the cosine term has to work against live
  // cross-entropy gradients before it can close anything.
  p.conv_bias = Tensor::filled({1}, 1.0, true);
  return p;
}

inline void append_gating_params(const std::string& prefix,
                                 const GatingParams& p, NamedParams& out) {
  if (p.layers.size() == 1) {
    append_layer_params(prefix + "layer.", p.layers[0], out);
  } else {
    for (std::size_t i = 0; i < p.layers.size(); ++i)
      append_layer_params(prefix + "layer" + std::to_string(i) + ".",
                          p.layers[i], out);
  }
  out.emplace_back(prefix + "score_w", p.score_w);
  out.emplace_back(prefix + "conv_kernel", p.conv_kernel);
  out.emplace_back(prefix + "conv_bias", p.conv_bias);
}

// Per-layer record of the gate pipeline; the raw material for explanations.
struct GateTrace {
  std::vector<Tensor> raw;       // R'_i
  std::vector<Tensor> smoothed;  // R^_i
  std::vector<Tensor> blended;   // R~_i
  std::vector<Tensor> final;     // R_i
};

// R' = w . TransformerGate(H_prev), one importance scalar per position.
inline Tensor gate_scores(const Tensor& h_prev, const SharedLayerParams& layer,
                          const Tensor& score_w, std::size_t heads, double eps,
                          const Tensor& key_bias) {
  Tensor g = transformer_layer(h_prev, layer, heads, eps, key_bias);
  return matvec(g, score_w);
}

// Smoothing with residual: clip01(GELU(conv(R', k) + R')). Without the conv
// term this degrades to clip01(GELU(R')).
inline Tensor smooth(const Tensor& raw, const Tensor& kernel,
                     const Tensor& bias, bool use_conv = true) {
  if (!use_conv) return clip01(gelu(raw));
  return clip01(gelu(add(conv1d_same(raw, kernel, bias), raw)));
}

// History blend with decay gamma^i (1-based layer index i):
//   recursive: R~ = gamma^i * R_{i-1} + (1 - gamma^i) * R^
//   constant:  R~ = gamma^i * I       + (1 - gamma^i) * R^
inline Tensor blend_history(const Tensor& smoothed, const Tensor& prev,
                            const Tensor& input_mask, double gamma,
                            std::size_t layer_index, HistoryMode mode) {
  if (layer_index < 1)
    throw std::invalid_argument("blend_history: layer index must be >= 1");
  const double decay = std::pow(gamma, static_cast<double>(layer_index));
  if (mode == HistoryMode::recursive) {
    if (prev.size() != smoothed.size())
      throw std::invalid_argument(
          "blend_history: recursive mode needs the previous gate vector");
    return lincomb(decay, prev, 1.0 - decay, smoothed);
  }
  return lincomb(decay, input_mask, 1.0 - decay, smoothed);
}

// R = R~ * I * (1 - T) + T: question/choice positions pinned to 1, padding
// to 0, passage positions keep their blended value.
inline Tensor apply_span_mask(const Tensor& blended,
                              const std::vector<double>& input_mask,
                              const std::vector<double>& token_types) {
  const std::size_t l = blended.size();
  if (input_mask.size() != l || token_types.size() != l)
    throw std::invalid_argument("apply_span_mask: mask length mismatch");
  std::vector<double> keep(l), pin(l);
  for (std::size_t i = 0; i < l; ++i) {
    keep[i] = input_mask[i] * (1.0 - token_types[i]);
    pin[i] = token_types[i];
  }
  return add(mul(blended, Tensor::from({l}, keep)), Tensor::from({l}, pin));
}

// Student path: per layer, gates from Eq-chain raw -> smoothed -> blended ->
// masked, then the shared encoder layer over the gated rows.
inline EncoderOutput encode_student(const EncoderConfig& cfg,
                                    const GateConfig& gcfg,
                                    const EncoderParams& enc,
                                    const GatingParams& gate,
                                    const PackedSequence& packed,
                                    GateTrace* trace = nullptr) {
  gcfg.validate();
  const std::size_t l = packed.token_ids.size();
  const Tensor input_mask = Tensor::from({l}, packed.input_mask);
  const Tensor key_bias = attention_bias(packed.input_mask);

  // Protection vector: token types, plus [CLS] when configured. An all-closed
  // [CLS] would zero the scoring head's input.
  std::vector<double> protect = packed.token_types;
  if (gcfg.protect_cls && !protect.empty()) protect[0] = 1.0;

  Tensor prev = input_mask;  // R_0 := I
  auto provider = [&](std::size_t i, const Tensor& h_prev) {
    const SharedLayerParams& layer =
        gate.layers[gcfg.per_layer_params ? i - 1 : 0];
    Tensor raw = gate_scores(h_prev, layer, gate.score_w, cfg.heads,
                             cfg.layernorm_eps, key_bias);
    Tensor smoothed =
        smooth(raw, gate.conv_kernel, gate.conv_bias, gcfg.use_conv);
    Tensor blended =
        gcfg.use_history
            ? blend_history(smoothed, prev, input_mask, gcfg.gamma, i,
                            gcfg.history_mode)
            : smoothed;
    Tensor final_gate = apply_span_mask(blended, packed.input_mask, protect);
    if (trace) {
      trace->raw.push_back(raw);
      trace->smoothed.push_back(smoothed);
      trace->blended.push_back(blended);
      trace->final.push_back(final_gate);
    }
    prev = final_gate;
    return final_gate;
  };
  if (gcfg.per_layer_params && gate.layers.size() != cfg.layers)
    throw std::invalid_argument(
        "encode_student: per-layer gating needs one parameter set per layer");
  return encode_body(cfg, enc, packed, provider);
}

}  // namespace rdg
