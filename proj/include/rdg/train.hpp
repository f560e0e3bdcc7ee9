#pragma once

// Joint training: per-question forwards for teacher and student over all
// four choice sequences, the three-part loss, gradient accumulation over the
// batch, and one AdamW update per step. Also evaluation and the
// model <-> checkpoint bridge.

#include <string>
#include <vector>

#include "rdg/checkpoint.hpp"
#include "rdg/gradcheck.hpp"
#include "rdg/losses.hpp"
#include "rdg/model.hpp"
#include "rdg/optimizer.hpp"

namespace rdg {

struct TrainConfig {
  double learning_rate = 1e-3;
  double warmup_ratio = 0.1;
  std::size_t train_steps = 500;
  std::size_t batch_size = 32;
  double temperature = 8.0;
  std::uint64_t seed = 1;
  double weight_decay = 0.01;
  LossWeights loss_weights;

  void validate() const {
    if (temperature <= 0.0)
      throw std::invalid_argument("train config: temperature must be > 0");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0)
      throw std::invalid_argument(
          "train config: warmup_ratio must lie in [0,1)");
    if (batch_size == 0)
      throw std::invalid_argument("train config: batch_size must be > 0");
  }
};

struct PackedCorpus {
  std::vector<std::vector<PackedSequence>> choices;  // [example][4]
  std::vector<std::size_t> gold;
};

inline PackedCorpus prepack(const std::vector<McExample>& examples,
                            const Vocab& vocab, std::size_t max_len) {
  PackedCorpus out;
  for (const McExample& ex : examples) {
    out.choices.push_back(pack_choices(ex, vocab, max_len));
    out.gold.push_back(ex.answer);
  }
  return out;
}

// Shuffled-epoch batching; batch composition is a pure function of
// (corpus size, batch size, seed, step index), so interrupted runs can
// fast-forward to any step.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
      : order_(n), batch_(batch), rng_(seed) {
    if (batch > n)
      throw std::invalid_argument("batch size " + std::to_string(batch) +
                                  " exceeds corpus size " + std::to_string(n));
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::vector<std::size_t> next() {
    if (cursor_ + batch_ > order_.size()) {
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    std::vector<std::size_t> b(order_.begin() + cursor_,
                               order_.begin() + cursor_ + batch_);
    cursor_ += batch_;
    return b;
  }

  void skip(std::size_t batches) {
    for (std::size_t i = 0; i < batches; ++i) next();
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

namespace detail {

inline void require_finite(double v, const char* term) {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string("train_step: non-finite ") + term +
                             " loss term");
}

}  // namespace detail

// The three loss terms for one question: teacher and student forwards over
// every choice sequence, CE on both heads, temperature-scaled distillation,
// and the cosine penalty on the gold choice's final gate vector.
struct LossTerms {
  Tensor ce, kd, cos;
};

inline LossTerms question_loss(const RdgModel& model,
                               const std::vector<PackedSequence>& choices,
                               std::size_t gold, double temperature) {
  Tensor t_logits = model.teacher_logits(choices);
  GateTrace trace;
  Tensor s_logits = model.student_logits(choices, gold, &trace);
  LossTerms terms;
  terms.ce = ce_loss(t_logits, s_logits, gold);
  terms.kd = kd_loss(t_logits, s_logits, temperature);
  const Tensor input_mask = Tensor::from({choices[gold].input_mask.size()},
                                         choices[gold].input_mask);
  terms.cos = model.ecfg.layers > 0
                  ? cos_loss(input_mask, trace.final.back())
                  : Tensor::scalar(0.0);
  return terms;
}

inline Tensor weighted_total(const LossTerms& terms, const LossWeights& w) {
  return add(add(scale(terms.ce, w.ce), scale(terms.kd, w.kd)),
             scale(terms.cos, w.cos));
}

// Finite-difference oracle for the full objective. The distillation term
// detaches the teacher logits, so the trained gradient is the gradient of a
// function in which kd sees the teacher frozen at its current values while
// cross-entropy still differentiates through the teacher; the oracle must
// evaluate exactly that function or it would charge the shared parameters
// with a teacher-path derivative the optimizer never uses.
inline FiniteDiffReport model_gradcheck(
    const RdgModel& model, const std::vector<PackedSequence>& choices,
    std::size_t gold, double temperature, const LossWeights& weights,
    double h = 1e-5, double grad_corruption = 0.0) {
  NamedParams params = model.named_params();
  for (auto& [name, p] : params) p.zero_grad();
  LossTerms terms = question_loss(model, choices, gold, temperature);
  backward(weighted_total(terms, weights));
  if (grad_corruption != 0.0) {  // fault-injection hook
    Tensor& p = params.front().second;
    p.grad()[0] += grad_corruption;
  }

  std::vector<double> frozen_teacher;
  {
    NoGradGuard no_grad;
    frozen_teacher = model.teacher_logits(choices).values();
  }
  auto objective = [&] {
    NoGradGuard no_grad;
    Tensor t_logits = model.teacher_logits(choices);
    GateTrace trace;
    Tensor s_logits = model.student_logits(choices, gold, &trace);
    Tensor ce = ce_loss(t_logits, s_logits, gold);
    Tensor kd =
        kd_loss(Tensor::from({frozen_teacher.size()}, frozen_teacher),
                s_logits, temperature);
    const Tensor input_mask = Tensor::from({choices[gold].input_mask.size()},
                                           choices[gold].input_mask);
    Tensor cos = model.ecfg.layers > 0
                     ? cos_loss(input_mask, trace.final.back())
                     : Tensor::scalar(0.0);
    return weights.ce * ce.value() + weights.kd * kd.value() +
           weights.cos * cos.value();
  };
  return finite_diff_check(objective, params, h);
}

// One optimizer step over one batch. Gradients are accumulated question by
// question (each question's graph is freed before the next), which matches
// backpropagating the batch-mean loss exactly.
inline LossBundle train_step(RdgModel& model, AdamW& opt,
                             const PackedCorpus& corpus,
                             const std::vector<std::size_t>& batch,
                             const TrainConfig& cfg, double lr) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  model.zero_grad();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossBundle bundle;
  for (std::size_t idx : batch) {
    LossTerms terms = question_loss(model, corpus.choices[idx],
                                    corpus.gold[idx], cfg.temperature);
    detail::require_finite(terms.ce.value(), "cross-entropy");
    detail::require_finite(terms.kd.value(), "distillation");
    detail::require_finite(terms.cos.value(), "cosine");

    backward(scale(weighted_total(terms, cfg.loss_weights), inv_b));

    bundle.ce += terms.ce.value() * inv_b;
    bundle.kd += terms.kd.value() * inv_b;
    bundle.cos += terms.cos.value() * inv_b;
  }
  bundle.total = cfg.loss_weights.ce * bundle.ce +
                 cfg.loss_weights.kd * bundle.kd +
                 cfg.loss_weights.cos * bundle.cos;
  detail::require_finite(bundle.total, "total");

  NamedParams params = model.named_params();
  opt.step(params, lr);
  return bundle;
}

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double lr = 0.0;
  LossBundle loss;
};

// Drives a training run step by step. Restarting from a checkpoint at step k
// reproduces the unbroken run: the batch stream is a pure function of
// (corpus size, batch size, seed) and is fast-forwarded on construction.
class TrainRun {
 public:
  TrainRun(RdgModel model, AdamW opt, TrainConfig cfg, PackedCorpus corpus,
           std::size_t completed_steps = 0)
      : model_(std::move(model)),
        opt_(std::move(opt)),
        cfg_(cfg),
        corpus_(std::move(corpus)),
        sampler_(corpus_.choices.size(), cfg.batch_size, cfg.seed),
        step_(completed_steps) {
    cfg_.validate();
    sampler_.skip(completed_steps);
  }

  bool done() const { return step_ >= cfg_.train_steps; }
  std::size_t completed_steps() const { return step_; }
  RdgModel& model() { return model_; }
  AdamW& optimizer() { return opt_; }
  const PackedCorpus& corpus() const { return corpus_; }
  const TrainConfig& config() const { return cfg_; }

  StepRecord step() {
    if (done()) throw std::logic_error("train run already finished");
    const double lr = lr_schedule(step_ + 1, cfg_.train_steps,
                                  cfg_.learning_rate, cfg_.warmup_ratio);
    StepRecord rec;
    rec.loss = train_step(model_, opt_, corpus_, sampler_.next(), cfg_, lr);
    rec.lr = lr;
    rec.step = ++step_;
    return rec;
  }

 private:
  RdgModel model_;
  AdamW opt_;
  TrainConfig cfg_;
  PackedCorpus corpus_;
  BatchSampler sampler_;
  std::size_t step_;
};

struct EvalResult {
  double teacher_accuracy = 0.0;
  double student_accuracy = 0.0;
  double mean_gate = 0.0;
  std::size_t count = 0;
};

inline std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline EvalResult evaluate(const RdgModel& model, const PackedCorpus& corpus) {
  NoGradGuard no_grad;
  EvalResult r;
  r.count = corpus.choices.size();
  if (r.count == 0) return r;
  std::size_t t_hits = 0, s_hits = 0;
  double gate_sum = 0.0;
  for (std::size_t i = 0; i < corpus.choices.size(); ++i) {
    const auto& choices = corpus.choices[i];
    Tensor t_logits = model.teacher_logits(choices);
    GateTrace trace;
    Tensor s_logits = model.student_logits(choices, corpus.gold[i], &trace);
    if (argmax(t_logits.values()) == corpus.gold[i]) ++t_hits;
    if (argmax(s_logits.values()) == corpus.gold[i]) ++s_hits;
    gate_sum += mean_passage_gate(trace, choices[corpus.gold[i]]);
  }
  r.teacher_accuracy = static_cast<double>(t_hits) / r.count;
  r.student_accuracy = static_cast<double>(s_hits) / r.count;
  r.mean_gate = gate_sum / static_cast<double>(r.count);
  return r;
}

// ----------------------------------------------------- checkpoint bridging

inline Checkpoint model_to_checkpoint(
    const RdgModel& model, AdamW& opt,
    const std::map<std::string, std::string>& extra = {}) {
  Checkpoint ckpt;
  const EncoderConfig& e = model.ecfg;
  ckpt.config["vocab_size"] = std::to_string(e.vocab_size);
  ckpt.config["hidden"] = std::to_string(e.hidden);
  ckpt.config["layers"] = std::to_string(e.layers);
  ckpt.config["heads"] = std::to_string(e.heads);
  ckpt.config["ffn_dim"] = std::to_string(e.ffn_dim);
  ckpt.config["max_len"] = std::to_string(e.max_len);
  ckpt.config["type_vocab"] = std::to_string(e.type_vocab);
  ckpt.config["layernorm_eps"] = format_double(e.layernorm_eps);
  ckpt.config["init_sigma"] = format_double(e.init_sigma);
  const GateConfig& g = model.gcfg;
  ckpt.config["gamma"] = format_double(g.gamma);
  ckpt.config["kernel_size"] = std::to_string(g.kernel_size);
  ckpt.config["history_mode"] = to_string(g.history_mode);
  ckpt.config["use_conv"] = g.use_conv ? "true" : "false";
  ckpt.config["use_history"] = g.use_history ? "true" : "false";
  ckpt.config["per_layer_params"] = g.per_layer_params ? "true" : "false";
  ckpt.config["protect_cls"] = g.protect_cls ? "true" : "false";
  ckpt.config["optimizer_step"] = std::to_string(opt.step_count());
  for (const auto& [k, v] : extra) ckpt.config[k] = v;

  NamedParams params = model.named_params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& [name, t] = params[p];
    ckpt.arrays.emplace(name, Tensor::from(t.shape(), t.values()));
    ckpt.arrays.emplace("adam.m." + name,
                        Tensor::from(t.shape(), opt.first_moments()[p]));
    ckpt.arrays.emplace("adam.v." + name,
                        Tensor::from(t.shape(), opt.second_moments()[p]));
  }
  return ckpt;
}

namespace detail {

inline const std::string& ckpt_get(const Checkpoint& c, const std::string& k) {
  auto it = c.config.find(k);
  if (it == c.config.end())
    throw CheckpointError(CheckpointError::Kind::shape,
                          "checkpoint: config key '" + k + "' missing");
  return it->second;
}

inline void restore_vector(const Checkpoint& ckpt, const std::string& name,
                           const Shape& expected, std::vector<double>& out) {
  auto it = ckpt.arrays.find(name);
  if (it == ckpt.arrays.end())
    throw CheckpointError(CheckpointError::Kind::shape,
                          "checkpoint: missing array '" + name + "'");
  if (it->second.shape() != expected)
    throw CheckpointError(CheckpointError::Kind::shape,
                          "checkpoint: array '" + name + "' has shape " +
                              shape_str(it->second.shape()) +
                              ", model needs " + shape_str(expected));
  out = it->second.values();
}

}  // namespace detail

inline std::pair<RdgModel, AdamW> model_from_checkpoint(
    const Checkpoint& ckpt, const AdamConfig& adam_cfg = {}) {
  EncoderConfig e;
  e.vocab_size = std::stoull(detail::ckpt_get(ckpt, "vocab_size"));
  e.hidden = std::stoull(detail::ckpt_get(ckpt, "hidden"));
  e.layers = std::stoull(detail::ckpt_get(ckpt, "layers"));
  e.heads = std::stoull(detail::ckpt_get(ckpt, "heads"));
  e.ffn_dim = std::stoull(detail::ckpt_get(ckpt, "ffn_dim"));
  e.max_len = std::stoull(detail::ckpt_get(ckpt, "max_len"));
  e.type_vocab = std::stoull(detail::ckpt_get(ckpt, "type_vocab"));
  e.layernorm_eps = std::stod(detail::ckpt_get(ckpt, "layernorm_eps"));
  e.init_sigma = std::stod(detail::ckpt_get(ckpt, "init_sigma"));
  GateConfig g;
  g.gamma = std::stod(detail::ckpt_get(ckpt, "gamma"));
  g.kernel_size = std::stoull(detail::ckpt_get(ckpt, "kernel_size"));
  g.history_mode =
      history_mode_from_string(detail::ckpt_get(ckpt, "history_mode"));
  g.use_conv = detail::ckpt_get(ckpt, "use_conv") == "true";
  g.use_history = detail::ckpt_get(ckpt, "use_history") == "true";
  g.per_layer_params = detail::ckpt_get(ckpt, "per_layer_params") == "true";
  g.protect_cls = detail::ckpt_get(ckpt, "protect_cls") == "true";

  RdgModel model = RdgModel::init(e, g, /*seed=*/0);
  NamedParams params = model.named_params();
  AdamW opt(params, adam_cfg);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& [name, t] = params[p];
    restore_into(ckpt, name, t);
    detail::restore_vector(ckpt, "adam.m." + name, t.shape(),
                           opt.first_moments()[p]);
    detail::restore_vector(ckpt, "adam.v." + name, t.shape(),
                           opt.second_moments()[p]);
  }
  opt.set_step_count(std::stoull(detail::ckpt_get(ckpt, "optimizer_step")));
  return {std::move(model), std::move(opt)};
}

}  // namespace rdg
