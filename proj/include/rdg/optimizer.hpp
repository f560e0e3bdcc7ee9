#pragma once

// Adam with decoupled weight decay, plus the linear warmup / linear decay
// learning-rate schedule.

#include <cmath>
#include <string>
#include <vector>

#include "rdg/encoder.hpp"

namespace rdg {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Linear warmup from 0 over warmup_ratio * total_steps, then linear decay
// to 0 at total_steps.
inline double lr_schedule(std::size_t step, std::size_t total_steps,
                          double base_lr, double warmup_ratio) {
  if (step > total_steps)
    throw std::invalid_argument("lr_schedule: step " + std::to_string(step) +
                                " beyond total " +
                                std::to_string(total_steps));
  const double warmup = warmup_ratio * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (warmup > 0.0 && s <= warmup) return base_lr * s / warmup;
  const double tail = static_cast<double>(total_steps) - warmup;
  if (tail <= 0.0) return 0.0;
  return base_lr * (static_cast<double>(total_steps) - s) / tail;
}

// Biases and layer-norm gains are exempt from decay.
inline bool decay_exempt(const std::string& name) {
  return name.ends_with("_b") || name.ends_with("_bias") ||
         name.ends_with("_gain");
}

class AdamW {
 public:
  AdamW() = default;
  AdamW(const NamedParams& params, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& [name, t] : params) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
      decay_.push_back(!decay_exempt(name));
    }
  }

  std::size_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  // One update over the same NamedParams the state was built from.
  void step(NamedParams& params, double lr) {
    if (params.size() != m_.size())
      throw std::logic_error("adamw: parameter list does not match state");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& t = params[p].second;
      if (t.size() != m_[p].size())
        throw std::logic_error("adamw: shape drift on " + params[p].first);
      auto& g = t.grad();
      auto& vals = t.values();
      auto& m = m_[p];
      auto& v = v_[p];
      const double wd = decay_[p] ? cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < vals.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        vals[i] -=
            lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * vals[i]);
      }
    }
  }

  // Moment buffers by parameter index, used by checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_step_count(std::size_t s) { step_ = s; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<bool> decay_;
  std::size_t step_ = 0;
};

}  // namespace rdg
