#pragma once

// Dense f64 tensors with reverse-mode gradient propagation. A Tensor is a
// cheap shared handle to a node; every differentiable op links its output
// node to the input nodes with a backward closure. backward() replays the
// recorded closures in reverse creation order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace rdg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Shortest exact decimal form; round-trips through parsing bit-identically.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

struct TensorNode;
std::uint64_t next_node_id();

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = next_node_id();  // creation order, used by backward()
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward_fn;  // accumulates this->grad into parents

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

inline std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Scoped switch that disables graph recording (inference, finite differences).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double value, bool requires_grad = false) {
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->values.assign(shape_numel(t.node_->shape), value);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " +
                                  shape_str(shape));
    }
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }

  double& at(std::size_t i) { return node_->values[i]; }
  double at(std::size_t i) const { return node_->values[i]; }
  double& at2(std::size_t r, std::size_t c) {
    return node_->values[r * node_->shape[1] + c];
  }
  double at2(std::size_t r, std::size_t c) const {
    return node_->values[r * node_->shape[1] + c];
  }

  double value() const {
    if (size() != 1) {
      throw std::logic_error("value(): tensor " + shape_str(shape()) +
                             " is not a scalar");
    }
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() {
    if (!node_->grad.empty())
      std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  bool all_finite() const {
    for (double v : node_->values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Same underlying node (parameter identity), not value equality.
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

// Registers output as a recorded op over the given inputs. The closure sees
// raw node pointers; ownership is held by the parents vector.
inline void record_op(Tensor& out, std::initializer_list<Tensor> inputs,
                      std::function<void()> backward_fn) {
  if (!grad_enabled()) return;
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (!any) return;
  out.set_requires_grad(true);
  auto* n = out.node();
  for (const Tensor& t : inputs) n->parents.push_back(t.node_ptr());
  n->backward_fn = std::move(backward_fn);
}

}  // namespace detail

// Runs all recorded closures reachable from loss, newest first. Each node is
// visited exactly once; gradients accumulate additively at fan-out points.
inline void backward(Tensor loss) {
  if (loss.size() != 1) {
    throw std::logic_error("backward(): loss must be scalar, got " +
                           shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<detail::TensorNode*> stack{loss.node()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    detail::TensorNode* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::TensorNode* a, const detail::TensorNode* b) {
              return a->id > b->id;
            });

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (detail::TensorNode* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn();
  }
}

// Deterministic RNG: explicit uniform/normal construction so that generated
// corpora and initializations are reproducible bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() {  // [0, 1)
    return (eng_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double normal() {  // Box-Muller, cached spare
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 1.0 - uniform();
    double v = uniform();
    double r = std::sqrt(-2.0 * std::log(u));
    double a = 6.283185307179586477 * v;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double truncated_normal(double sigma) {  // resample outside 2 sigma
    double x = normal();
    while (std::abs(x) > 2.0) x = normal();
    return x * sigma;
  }

  // Uniform integer in [0, n), rejection-sampled.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                          std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Tensor randn(Shape shape, double sigma, Rng& rng,
                    bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.truncated_normal(sigma);
  return t;
}

}  // namespace rdg
