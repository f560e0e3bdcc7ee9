#pragma once

// The three-part joint objective: cross-entropy over both heads, a
// temperature-scaled MSE distillation term, and the cosine penalty that
// pushes passage gates closed.

#include "rdg/ops.hpp"

namespace rdg {

struct LossWeights {
  double ce = 1.0;
  double kd = 1.0;
  double cos = 1.0;
};

struct LossBundle {
  double ce = 0.0;
  double kd = 0.0;
  double cos = 0.0;
  double total = 0.0;
};

// -1/2 (log p'_T[gold] + log p'_S[gold]) with p' the softmaxed logits.
inline Tensor ce_loss(const Tensor& teacher_logits,
                      const Tensor& student_logits, std::size_t gold) {
  detail::check_same_shape(teacher_logits, student_logits, "ce_loss");
  if (gold >= teacher_logits.size())
    throw std::out_of_range("ce_loss: gold label " + std::to_string(gold) +
                            " out of range for " +
                            std::to_string(teacher_logits.size()) +
                            " choices");
  Tensor lt = pick(log_softmax(teacher_logits), gold);
  Tensor ls = pick(log_softmax(student_logits), gold);
  return scale(add(lt, ls), -0.5);
}

// Mean over choices of (p_T/T - p_S/T)^2. Teacher logits are treated as
// constants here; the teacher learns from its own cross-entropy term.
inline Tensor kd_loss(const Tensor& teacher_logits,
                      const Tensor& student_logits, double temperature) {
  detail::check_same_shape(teacher_logits, student_logits, "kd_loss");
  if (temperature <= 0.0)
    throw std::invalid_argument("kd_loss: temperature must be > 0, got " +
                                std::to_string(temperature));
  Tensor diff =
      scale(sub(detach(teacher_logits), student_logits), 1.0 / temperature);
  return mean(mul(diff, diff));
}

// cosine(I, R_L); an all-zero gate vector scores 0 by convention (it is the
// penalty's own optimum, not a fault).
inline Tensor cos_loss(const Tensor& input_mask, const Tensor& r_last) {
  detail::check_same_shape(input_mask, r_last, "cos_loss");
  bool all_zero = true;
  for (double v : r_last.values())
    if (v != 0.0) {
      all_zero = false;
      break;
    }
  if (all_zero) return Tensor::scalar(0.0);
  return cosine_similarity(input_mask, r_last);
}

}  // namespace rdg
