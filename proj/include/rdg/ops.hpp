#pragma once

// Differentiable operations over Tensor. Forward computes values eagerly;
// each op records a closure that accumulates output gradients into its
// inputs. Shape violations throw std::invalid_argument naming both shapes.

#include <cmath>
#include <cstddef>

#include "rdg/tensor.hpp"

namespace rdg {

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

inline void check_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw std::invalid_argument(std::string(op) + ": expected rank " +
                                std::to_string(r) + " tensor, got " +
                                shape_str(t.shape()));
  }
}

// C (+)= A[m x k] * B[k x n]
inline void mm_nn(const double* A, const double* B, double* C, std::size_t m,
                  std::size_t k, std::size_t n, bool acc) {
  if (!acc)
    for (std::size_t i = 0; i < m * n; ++i) C[i] = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m x p] += A[m x n] * B^T, with B stored [p x n]
inline void mm_nt_acc(const double* A, const double* B, double* C,
                      std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * n;
    double* c = C + i * p;
    for (std::size_t q = 0; q < p; ++q) {
      const double* b = B + q * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a[j] * b[j];
      c[q] += s;
    }
  }
}

// C[k x n] += A^T * B, with A stored [m x k], B stored [m x n]
inline void mm_tn_acc(const double* A, const double* B, double* C,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    const double* b = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      double* c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

inline void record_op_vec(Tensor& out, const std::vector<Tensor>& inputs,
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

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i)
    out.at(i) = a.at(i) + b.at(i);
  auto *an = a.node(), *bn = b.node(), *on = out.node();
  detail::record_op(out, {a, b}, [an, bn, on, n] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
    }
  });
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i)
    out.at(i) = a.at(i) - b.at(i);
  auto *an = a.node(), *bn = b.node(), *on = out.node();
  detail::record_op(out, {a, b}, [an, bn, on, n] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] -= on->grad[i];
    }
  });
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i)
    out.at(i) = a.at(i) * b.at(i);
  auto *an = a.node(), *bn = b.node(), *on = out.node();
  detail::record_op(out, {a, b}, [an, bn, on, n] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        an->grad[i] += on->grad[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        bn->grad[i] += on->grad[i] * an->values[i];
    }
  });
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * c;
  auto *an = a.node(), *on = out.node();
  detail::record_op(out, {a}, [an, on, c, n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * c;
  });
  return out;
}

// out = alpha*a + beta*b with constant coefficients
inline Tensor lincomb(double alpha, const Tensor& a, double beta,
                      const Tensor& b) {
  detail::check_same_shape(a, b, "lincomb");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i)
    out.at(i) = alpha * a.at(i) + beta * b.at(i);
  auto *an = a.node(), *bn = b.node(), *on = out.node();
  detail::record_op(out, {a, b}, [an, bn, on, alpha, beta, n] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += alpha * on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] += beta * on->grad[i];
    }
  });
  return out;
}

// Value copy cut off from the graph; gradients stop here.
inline Tensor detach(const Tensor& a) {
  return Tensor::from(a.shape(), a.values());
}

// ------------------------------------------------------------------- matmul

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_rank(a, 2, "matmul");
  detail::check_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  detail::mm_nn(a.values().data(), b.values().data(), out.values().data(), m,
                k, n, false);
  auto *an = a.node(), *bn = b.node(), *on = out.node();
  detail::record_op(out, {a, b}, [an, bn, on, m, k, n] {
    if (an->requires_grad) {  // dA += dOut * B^T
      an->ensure_grad();
      detail::mm_nt_acc(on->grad.data(), bn->values.data(), an->grad.data(), m,
                        n, k);
    }
    if (bn->requires_grad) {  // dB += A^T * dOut
      bn->ensure_grad();
      detail::mm_tn_acc(an->values.data(), on->grad.data(), bn->grad.data(), m,
                        k, n);
    }
  });
  return out;
}

// out[l] = m[l x h] . v[h]
inline Tensor matvec(const Tensor& m, const Tensor& v) {
  detail::check_rank(m, 2, "matvec");
  detail::check_rank(v, 1, "matvec");
  if (m.dim(1) != v.dim(0)) {
    throw std::invalid_argument("matvec: inner dimensions disagree: " +
                                shape_str(m.shape()) + " vs " +
                                shape_str(v.shape()));
  }
  const std::size_t rows = m.dim(0), h = m.dim(1);
  Tensor out = Tensor::zeros({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < h; ++j) s += m.at2(i, j) * v.at(j);
    out.at(i) = s;
  }
  auto *mn = m.node(), *vn = v.node(), *on = out.node();
  detail::record_op(out, {m, v}, [mn, vn, on, rows, h] {
    if (mn->requires_grad) {
      mn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) {
        const double g = on->grad[i];
        for (std::size_t j = 0; j < h; ++j)
          mn->grad[i * h + j] += g * vn->values[j];
      }
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) {
        const double g = on->grad[i];
        for (std::size_t j = 0; j < h; ++j)
          vn->grad[j] += g * mn->values[i * h + j];
      }
    }
  });
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::check_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at2(j, i) = a.at2(i, j);
  auto *an = a.node(), *on = out.node();
  detail::record_op(out, {a}, [an, on, m, n] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        an->grad[i * n + j] += on->grad[j * m + i];
  });
  return out;
}

// ------------------------------------------------------------- broadcasting

// out[i][j] = m[i][j] + v[j]
inline Tensor add_row_vector(const Tensor& m, const Tensor& v) {
  detail::check_rank(m, 2, "add_row_vector");
  detail::check_rank(v, 1, "add_row_vector");
  if (m.dim(1) != v.dim(0)) {
    throw std::invalid_argument("add_row_vector: width mismatch " +
                                shape_str(m.shape()) + " vs " +
                                shape_str(v.shape()));
  }
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor out = Tensor::zeros(m.shape());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out.at2(i, j) = m.at2(i, j) + v.at(j);
  auto *mn = m.node(), *vn = v.node(), *on = out.node();
  detail::record_op(out, {m, v}, [mn, vn, on, rows, cols] {
    if (mn->requires_grad) {
      mn->ensure_grad();
      const std::size_t n = rows * cols;
      for (std::size_t i = 0; i < n; ++i) mn->grad[i] += on->grad[i];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
          vn->grad[j] += on->grad[i * cols + j];
    }
  });
  return out;
}

// out[i][j] = m[i][j] * r[i]  (one scalar gate per row)
inline Tensor scale_rows(const Tensor& m, const Tensor& r) {
  detail::check_rank(m, 2, "scale_rows");
  detail::check_rank(r, 1, "scale_rows");
  if (m.dim(0) != r.dim(0)) {
    throw std::invalid_argument("scale_rows: row count mismatch " +
                                shape_str(m.shape()) + " vs " +
                                shape_str(r.shape()));
  }
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor out = Tensor::zeros(m.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const double g = r.at(i);
    for (std::size_t j = 0; j < cols; ++j) out.at2(i, j) = m.at2(i, j) * g;
  }
  auto *mn = m.node(), *rn = r.node(), *on = out.node();
  detail::record_op(out, {m, r}, [mn, rn, on, rows, cols] {
    if (mn->requires_grad) {
      mn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) {
        const double g = rn->values[i];
        for (std::size_t j = 0; j < cols; ++j)
          mn->grad[i * cols + j] += on->grad[i * cols + j] * g;
      }
    }
    if (rn->requires_grad) {
      rn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j)
          s += on->grad[i * cols + j] * mn->values[i * cols + j];
        rn->grad[i] += s;
      }
    }
  });
  return out;
}

// ------------------------------------------------------------ slicing/joins

inline Tensor slice_cols(const Tensor& m, std::size_t c0, std::size_t c1) {
  detail::check_rank(m, 2, "slice_cols");
  if (c0 >= c1 || c1 > m.dim(1)) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) +
                                "," + std::to_string(c1) + ") invalid for " +
                                shape_str(m.shape()));
  }
  const std::size_t rows = m.dim(0), cols = m.dim(1), w = c1 - c0;
  Tensor out = Tensor::zeros({rows, w});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at2(i, j) = m.at2(i, c0 + j);
  auto *mn = m.node(), *on = out.node();
  detail::record_op(out, {m}, [mn, on, rows, cols, c0, w] {
    if (!mn->requires_grad) return;
    mn->ensure_grad();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j)
        mn->grad[i * cols + c0 + j] += on->grad[i * w + j];
  });
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty())
    throw std::invalid_argument("concat_cols: no parts given");
  const std::size_t rows = parts[0].dim(0);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    detail::check_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows)
      throw std::invalid_argument("concat_cols: row count mismatch " +
                                  shape_str(p.shape()));
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({rows, total});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at2(i, off + j) = p.at2(i, j);
    off += w;
  }
  auto* on = out.node();
  std::vector<detail::TensorNode*> pn;
  for (const Tensor& p : parts) pn.push_back(p.node());
  detail::record_op_vec(out, parts, [pn, on, rows, total] {
    std::size_t off = 0;
    for (auto* n : pn) {
      const std::size_t w = n->shape[1];
      if (n->requires_grad) {
        n->ensure_grad();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < w; ++j)
            n->grad[i * w + j] += on->grad[i * total + off + j];
      }
      off += w;
    }
  });
  return out;
}

inline Tensor row(const Tensor& m, std::size_t i) {
  detail::check_rank(m, 2, "row");
  if (i >= m.dim(0))
    throw std::invalid_argument("row: index " + std::to_string(i) +
                                " out of range for " + shape_str(m.shape()));
  const std::size_t cols = m.dim(1);
  Tensor out = Tensor::zeros({cols});
  for (std::size_t j = 0; j < cols; ++j) out.at(j) = m.at2(i, j);
  auto *mn = m.node(), *on = out.node();
  detail::record_op(out, {m}, [mn, on, i, cols] {
    if (!mn->requires_grad) return;
    mn->ensure_grad();
    for (std::size_t j = 0; j < cols; ++j)
      mn->grad[i * cols + j] += on->grad[j];
  });
  return out;
}

inline Tensor pick(const Tensor& v, std::size_t i) {
  detail::check_rank(v, 1, "pick");
  if (i >= v.dim(0))
    throw std::invalid_argument("pick: index " + std::to_string(i) +
                                " out of range for " + shape_str(v.shape()));
  Tensor out = Tensor::scalar(v.at(i));
  auto *vn = v.node(), *on = out.node();
  detail::record_op(out, {v}, [vn, on, i] {
    if (!vn->requires_grad) return;
    vn->ensure_grad();
    vn->grad[i] += on->grad[0];
  });
  return out;
}

inline Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_scalars: empty input");
  Tensor out = Tensor::zeros({xs.size()});
  for (std::size_t i = 0; i < xs.size(); ++i) out.at(i) = xs[i].value();
  auto* on = out.node();
  std::vector<detail::TensorNode*> pn;
  for (const Tensor& x : xs) pn.push_back(x.node());
  detail::record_op_vec(out, xs, [pn, on] {
    for (std::size_t i = 0; i < pn.size(); ++i) {
      if (!pn[i]->requires_grad) continue;
      pn[i]->ensure_grad();
      pn[i]->grad[0] += on->grad[i];
    }
  });
  return out;
}

// --------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s);
  auto *an = a.node(), *on = out.node();
  detail::record_op(out, {a}, [an, on] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const double g = on->grad[0];
    for (double& gi : an->grad) gi += g;
  });
  return out;
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s * inv);
  auto *an = a.node(), *on = out.node();
  detail::record_op(out, {a}, [an, on, inv] {
    if (!an->requires_grad) return;
    an->ensure_grad();
    const double g = on->grad[0] * inv;
    for (double& gi : an->grad) gi += g;
  });
  return out;
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  detail::check_rank(a, 1, "dot");
  detail::check_same_shape(a, b, "dot");
  double s = 0.0;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) s += a.at(i) * b.at(i);
  Tensor out = Tensor::scalar(s);
  auto *an = a.node(), *bn = b.node(), *on = out.node();
  detail::record_op(out, {a, b}, [an, bn, on, n] {
    const double g = on->grad[0];
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += g * bn->values[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] += g * an->values[i];
    }
  });
  return out;
}

// ------------------------------------------------------------- nonlinearities

namespace detail {

// One softmax slice with max-subtraction; y and x may alias.
inline void softmax_slice(const double* x, double* y, std::size_t n,
                          std::size_t stride) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i * stride]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = std::exp(x[i * stride] - mx);
    y[i * stride] = e;
    z += e;
  }
  const double inv = 1.0 / z;
  for (std::size_t i = 0; i < n; ++i) y[i * stride] *= inv;
}

// dx_i += y_i * (g_i - sum_j g_j y_j)
inline void softmax_slice_grad(const double* y, const double* g, double* dx,
                               std::size_t n, std::size_t stride) {
  double dotv = 0.0;
  for (std::size_t i = 0; i < n; ++i) dotv += g[i * stride] * y[i * stride];
  for (std::size_t i = 0; i < n; ++i)
    dx[i * stride] += y[i * stride] * (g[i * stride] - dotv);
}

}  // namespace detail

inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                " invalid for " + shape_str(x.shape()));
  }
  Tensor out = Tensor::from(x.shape(), x.values());
  if (x.rank() == 1) {
    detail::softmax_slice(x.values().data(), out.values().data(), x.dim(0), 1);
  } else if (x.rank() == 2) {
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (axis == 1) {
      for (std::size_t i = 0; i < rows; ++i)
        detail::softmax_slice(x.values().data() + i * cols,
                              out.values().data() + i * cols, cols, 1);
    } else {
      for (std::size_t j = 0; j < cols; ++j)
        detail::softmax_slice(x.values().data() + j, out.values().data() + j,
                              rows, cols);
    }
  } else {
    throw std::invalid_argument("softmax: rank > 2 unsupported, got " +
                                shape_str(x.shape()));
  }
  auto *xn = x.node(), *on = out.node();
  const Shape shp = x.shape();
  detail::record_op(out, {x}, [xn, on, shp, axis] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    if (shp.size() == 1) {
      detail::softmax_slice_grad(on->values.data(), on->grad.data(),
                                 xn->grad.data(), shp[0], 1);
    } else {
      const std::size_t rows = shp[0], cols = shp[1];
      if (axis == 1) {
        for (std::size_t i = 0; i < rows; ++i)
          detail::softmax_slice_grad(on->values.data() + i * cols,
                                     on->grad.data() + i * cols,
                                     xn->grad.data() + i * cols, cols, 1);
      } else {
        for (std::size_t j = 0; j < cols; ++j)
          detail::softmax_slice_grad(on->values.data() + j,
                                     on->grad.data() + j, xn->grad.data() + j,
                                     rows, cols);
      }
    }
  });
  return out;
}

inline Tensor log_softmax(const Tensor& x) {
  detail::check_rank(x, 1, "log_softmax");
  const std::size_t n = x.dim(0);
  double mx = x.at(0);
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x.at(i));
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(x.at(i) - mx);
  const double lse = mx + std::log(z);
  Tensor out = Tensor::zeros({n});
  for (std::size_t i = 0; i < n; ++i) out.at(i) = x.at(i) - lse;
  auto *xn = x.node(), *on = out.node();
  detail::record_op(out, {x}, [xn, on, n] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    double gsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) gsum += on->grad[i];
    for (std::size_t i = 0; i < n; ++i)
      xn->grad[i] += on->grad[i] - std::exp(on->values[i]) * gsum;
  });
  return out;
}

// Exact GELU, x * Phi(x) with the Gaussian CDF via erf.
inline double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
  return cdf + x * pdf;
}

inline Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = gelu_value(x.at(i));
  auto *xn = x.node(), *on = out.node();
  detail::record_op(out, {x}, [xn, on, n] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      xn->grad[i] += on->grad[i] * gelu_derivative(xn->values[i]);
  });
  return out;
}

// Clamp to [0,1]. Subgradient is 0 at the boundaries and outside.
inline Tensor clip01(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i)
    out.at(i) = std::min(1.0, std::max(0.0, x.at(i)));
  auto *xn = x.node(), *on = out.node();
  detail::record_op(out, {x}, [xn, on, n] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double v = xn->values[i];
      if (v > 0.0 && v < 1.0) xn->grad[i] += on->grad[i];
    }
  });
  return out;
}

// -------------------------------------------------------------- convolution

// Same-length single-channel cross-correlation with zero padding.
inline Tensor conv1d_same(const Tensor& x, const Tensor& kernel,
                          const Tensor& bias) {
  detail::check_rank(x, 1, "conv1d_same");
  detail::check_rank(kernel, 1, "conv1d_same");
  if (kernel.dim(0) % 2 == 0) {
    throw std::invalid_argument("conv1d_same: kernel size must be odd, got " +
                                std::to_string(kernel.dim(0)));
  }
  if (bias.size() != 1)
    throw std::invalid_argument("conv1d_same: bias must be scalar");
  const std::size_t l = x.dim(0), k = kernel.dim(0);
  const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(k - 1) / 2;
  Tensor out = Tensor::zeros({l});
  for (std::size_t i = 0; i < l; ++i) {
    double s = bias.value();
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t p =
          static_cast<std::ptrdiff_t>(i + j) - c;
      if (p >= 0 && p < static_cast<std::ptrdiff_t>(l))
        s += kernel.at(j) * x.at(static_cast<std::size_t>(p));
    }
    out.at(i) = s;
  }
  auto *xn = x.node(), *kn = kernel.node(), *bn = bias.node(),
       *on = out.node();
  detail::record_op(out, {x, kernel, bias}, [xn, kn, bn, on, l, k, c] {
    for (std::size_t i = 0; i < l; ++i) {
      const double g = on->grad[i];
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(i + j) - c;
        if (p < 0 || p >= static_cast<std::ptrdiff_t>(l)) continue;
        if (xn->requires_grad) {
          xn->ensure_grad();
          xn->grad[static_cast<std::size_t>(p)] += g * kn->values[j];
        }
        if (kn->requires_grad) {
          kn->ensure_grad();
          kn->grad[j] += g * xn->values[static_cast<std::size_t>(p)];
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad[0] += g;
      }
    }
  });
  return out;
}

// --------------------------------------------------------------- layer norm

inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps) {
  detail::check_rank(x, 2, "layer_norm");
  detail::check_rank(gain, 1, "layer_norm");
  detail::check_same_shape(gain, bias, "layer_norm");
  if (x.dim(1) != gain.dim(0)) {
    throw std::invalid_argument("layer_norm: width mismatch " +
                                shape_str(x.shape()) + " vs " +
                                shape_str(gain.shape()));
  }
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be > 0");
  const std::size_t rows = x.dim(0), h = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(rows * h);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < h; ++j) mu += x.at2(i, j);
    mu /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t j = 0; j < h; ++j) {
      const double d = x.at2(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(h);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < h; ++j) {
      const double xh = (x.at2(i, j) - mu) * inv;
      (*xhat)[i * h + j] = xh;
      out.at2(i, j) = xh * gain.at(j) + bias.at(j);
    }
  }
  auto *xn = x.node(), *gn = gain.node(), *bn = bias.node(), *on = out.node();
  detail::record_op(out, {x, gain, bias}, [xn, gn, bn, on, xhat, inv_std, rows,
                                           h] {
    const double invh = 1.0 / static_cast<double>(h);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* g = on->grad.data() + i * h;
      const double* xh = xhat->data() + i * h;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (std::size_t j = 0; j < h; ++j) gn->grad[j] += g[j] * xh[j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t j = 0; j < h; ++j) bn->grad[j] += g[j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
          const double gg = g[j] * gn->values[j];
          m1 += gg;
          m2 += gg * xh[j];
        }
        m1 *= invh;
        m2 *= invh;
        const double inv = (*inv_std)[i];
        for (std::size_t j = 0; j < h; ++j) {
          const double gg = g[j] * gn->values[j];
          xn->grad[i * h + j] += (gg - m1 - xh[j] * m2) * inv;
        }
      }
    }
  });
  return out;
}

// ------------------------------------------------------------------- cosine

inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  detail::check_rank(a, 1, "cosine_similarity");
  detail::check_same_shape(a, b, "cosine_similarity");
  const std::size_t n = a.size();
  double dotv = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dotv += a.at(i) * b.at(i);
    na2 += a.at(i) * a.at(i);
    nb2 += b.at(i) * b.at(i);
  }
  if (na2 == 0.0 || nb2 == 0.0) {
    throw std::invalid_argument(
        "cosine_similarity: degenerate input (zero vector)");
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double s = dotv / (na * nb);
  Tensor out = Tensor::scalar(s);
  auto *an = a.node(), *bn = b.node(), *on = out.node();
  detail::record_op(out, {a, b}, [an, bn, on, n, na, nb, na2, nb2, s] {
    const double g = on->grad[0];
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        an->grad[i] +=
            g * (bn->values[i] / (na * nb) - s * an->values[i] / na2);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        bn->grad[i] +=
            g * (an->values[i] / (na * nb) - s * bn->values[i] / nb2);
    }
  });
  return out;
}

// ---------------------------------------------------------------- embedding

// out[i] = table[ids[i]], rows gathered with gradient scatter-add.
inline Tensor embedding_rows(const Tensor& table,
                             const std::vector<std::size_t>& ids) {
  detail::check_rank(table, 2, "embedding_rows");
  const std::size_t v = table.dim(0), h = table.dim(1);
  for (std::size_t p = 0; p < ids.size(); ++p) {
    if (ids[p] >= v) {
      throw std::out_of_range("embedding_rows: id " + std::to_string(ids[p]) +
                              " out of range [0," + std::to_string(v) +
                              ") at position " + std::to_string(p));
    }
  }
  Tensor out = Tensor::zeros({ids.size(), h});
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < h; ++j) out.at2(i, j) = table.at2(ids[i], j);
  auto *tn = table.node(), *on = out.node();
  detail::record_op(out, {table}, [tn, on, ids, h] {
    if (!tn->requires_grad) return;
    tn->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < h; ++j)
        tn->grad[ids[i] * h + j] += on->grad[i * h + j];
  });
  return out;
}

}  // namespace rdg
