#pragma once

// The joint teacher/student model: one shared encoder body, one gating stack,
// one scoring vector. Exposes the per-choice forward passes used by training,
// evaluation and explanation.

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "rdg/gating.hpp"

namespace rdg {

struct RdgModel {
  EncoderConfig ecfg;
  GateConfig gcfg;
  EncoderParams enc;
  GatingParams gate;
  Tensor w_o;

  static RdgModel init(const EncoderConfig& ecfg, const GateConfig& gcfg,
                       std::uint64_t seed) {
    ecfg.validate();
    gcfg.validate();
    Rng rng(seed);
    RdgModel m;
    m.ecfg = ecfg;
    m.gcfg = gcfg;
    m.enc = init_encoder_params(ecfg, rng);
    m.gate = init_gating_params(ecfg, gcfg, rng);
    m.w_o = randn({ecfg.hidden}, ecfg.init_sigma, rng, true);
    return m;
  }

  NamedParams named_params() const {
    NamedParams out;
    append_encoder_params("encoder.", enc, out);
    append_gating_params("gate.", gate, out);
    out.emplace_back("head.w_o", w_o);
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_params()) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : named_params()) t.zero_grad();
  }

  EncoderOutput teacher(const PackedSequence& packed) const {
    return encode_teacher(ecfg, enc, packed);
  }

  EncoderOutput student(const PackedSequence& packed,
                        GateTrace* trace = nullptr,
                        const Tensor* gate_override = nullptr) const {
    if (!gate_override)
      return encode_student(ecfg, gcfg, enc, gate, packed, trace);
    // Override hook: the gate chain still runs (and is traced), but the
    // applied gate is replaced. Used by the teacher-equivalence oracle.
    GateTrace chain;
    EncoderOutput out;
    const Tensor key_bias = attention_bias(packed.input_mask);
    const Tensor input_mask =
        Tensor::from({packed.input_mask.size()}, packed.input_mask);
    std::vector<double> protect = packed.token_types;
    if (gcfg.protect_cls && !protect.empty()) protect[0] = 1.0;
    Tensor prev = input_mask;
    auto provider = [&](std::size_t i, const Tensor& h_prev) {
      const SharedLayerParams& layer =
          gate.layers[gcfg.per_layer_params ? i - 1 : 0];
      Tensor raw = gate_scores(h_prev, layer, gate.score_w, ecfg.heads,
                               ecfg.layernorm_eps, key_bias);
      Tensor smoothed =
          smooth(raw, gate.conv_kernel, gate.conv_bias, gcfg.use_conv);
      Tensor blended = gcfg.use_history
                           ? blend_history(smoothed, prev, input_mask,
                                           gcfg.gamma, i, gcfg.history_mode)
                           : smoothed;
      Tensor applied = *gate_override;
      chain.raw.push_back(raw);
      chain.smoothed.push_back(smoothed);
      chain.blended.push_back(blended);
      chain.final.push_back(applied);
      prev = applied;
      return applied;
    };
    out = encode_body(ecfg, enc, packed, provider);
    if (trace) *trace = std::move(chain);
    return out;
  }

  Tensor logit(const EncoderOutput& out) const {
    return pool_and_score(out.hidden_states.back(), w_o);
  }

  // Logits over all packed choice sequences, stacked into one vector.
  Tensor teacher_logits(const std::vector<PackedSequence>& choices) const {
    std::vector<Tensor> ls;
    for (const PackedSequence& p : choices) ls.push_back(logit(teacher(p)));
    return stack_scalars(ls);
  }

  Tensor student_logits(const std::vector<PackedSequence>& choices,
                        std::size_t trace_choice, GateTrace* trace) const {
    std::vector<Tensor> ls;
    for (std::size_t c = 0; c < choices.size(); ++c) {
      GateTrace* t = (trace && c == trace_choice) ? trace : nullptr;
      ls.push_back(logit(student(choices[c], t)));
    }
    return stack_scalars(ls);
  }
};

inline std::vector<PackedSequence> pack_choices(const McExample& example,
                                                const Vocab& vocab,
                                                std::size_t max_len) {
  McExample ex = pad_dummy_choices(example);
  std::vector<PackedSequence> out;
  for (std::size_t c = 0; c < ex.options.size(); ++c)
    out.push_back(pack(ex, c, vocab, max_len));
  return out;
}

// Mean of the final-layer gate over passage positions (the question, choice
// and special tokens are pinned and say nothing about filtering).
inline double mean_passage_gate(const GateTrace& trace,
                                const PackedSequence& packed) {
  if (trace.final.empty() || packed.passage_token_spans.empty()) return 0.0;
  const Tensor& r = trace.final.back();
  double s = 0.0;
  for (const auto& [pos, word] : packed.passage_token_spans) s += r.at(pos);
  return s / static_cast<double>(packed.passage_token_spans.size());
}

}  // namespace rdg
