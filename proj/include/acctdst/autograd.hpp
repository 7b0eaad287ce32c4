#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "acctdst/common.hpp"

#if defined(__AVX__)
#include <immintrin.h>
#endif

namespace acctdst {

/// Dense row-major matrix.
template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  T* row(std::size_t r) { return data.data() + r * cols; }
  const T* row(std::size_t r) const { return data.data() + r * cols; }
  std::size_t size() const { return data.size(); }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

/// A trainable tensor and its gradient accumulator.
template <class T>
struct Param {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool decay = true;  // subject to decoupled weight decay

  Param() = default;
  Param(std::string n, std::size_t r, std::size_t c, bool wd)
      : name(std::move(n)), value(r, c), grad(r, c), decay(wd) {}
};

namespace kernels {

// y[n x m] (+)= x[n x k] * w[k x m]
template <class T>
void matmul(const T* __restrict x, const T* __restrict w, T* __restrict y, std::size_t n,
            std::size_t k, std::size_t m, bool accumulate = false) {
  if (!accumulate) std::fill(y, y + n * m, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    T* yr = y + i * m;
    const T* xr = x + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T a = xr[p];
      const T* wr = w + p * m;
      for (std::size_t j = 0; j < m; ++j) yr[j] += a * wr[j];
    }
  }
}

// dx[n x k] += dy[n x m] * w^T
template <class T>
void matmul_bt_acc(const T* dy, const T* w, T* dx, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* dyr = dy + i * m;
    T* dxr = dx + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* wr = w + p * m;
      T s = 0;
      for (std::size_t j = 0; j < m; ++j) s += dyr[j] * wr[j];
      dxr[p] += s;
    }
  }
}

// dw[k x m] += x^T * dy
template <class T>
void matmul_at_acc(const T* __restrict x, const T* __restrict dy, T* __restrict dw, std::size_t n,
                   std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* xr = x + i * k;
    const T* dyr = dy + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T a = xr[p];
      T* dwr = dw + p * m;
      for (std::size_t j = 0; j < m; ++j) dwr[j] += a * dyr[j];
    }
  }
}

// libm's tanh is legacy SSE code. Calling it while the upper vector state is
// dirty costs a transition penalty per instruction, so clear it first.
inline void clear_vector_upper() {
#if defined(__AVX__)
  _mm256_zeroupper();
#endif
}

template <class T>
T gelu(T x) {
  const T c = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <class T>
T gelu_grad(T x) {
  const T c = T(0.7978845608028654);
  const T u = c * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(u);
  const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

// Numerically stable log(1 + exp(z)).
template <class T>
T softplus(T z) {
  return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}

template <class T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace kernels

/// Reverse-mode tape over matrix-valued nodes. With `record == false` the
/// ops only compute values (no closures, no gradient buffers).
template <class T>
class Tape {
 public:
  using Var = std::size_t;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  const Matrix<T>& value(Var v) const { return nodes_[v].value; }
  const Matrix<T>& grad(Var v) const { return nodes_[v].grad; }
  T scalar(Var v) const { return nodes_[v].value.data.at(0); }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix<T> m) { return push(std::move(m), {}); }

  /// x[i] = table[ids[i]] + pos[i]
  Var embed(Param<T>& table, Param<T>& pos, std::span<const int> ids) {
    const std::size_t n = ids.size(), d = table.value.cols;
    Matrix<T> out(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const T* e = table.value.row(static_cast<std::size_t>(ids[i]));
      const T* p = pos.value.row(i);
      T* o = out.row(i);
      for (std::size_t j = 0; j < d; ++j) o[j] = e[j] + p[j];
    }
    std::vector<int> idv(ids.begin(), ids.end());
    return push(std::move(out), [this, &table, &pos, idv](Var self) {
      const auto& g = nodes_[self].grad;
      for (std::size_t i = 0; i < idv.size(); ++i) {
        T* te = table.grad.row(static_cast<std::size_t>(idv[i]));
        T* tp = pos.grad.row(i);
        const T* gi = g.row(i);
        for (std::size_t j = 0; j < g.cols; ++j) {
          te[j] += gi[j];
          tp[j] += gi[j];
        }
      }
    });
  }

  /// x * W (+ b). W is [in x out], b is [1 x out].
  Var linear(Var x, Param<T>& w, Param<T>* b) {
    const auto& xv = nodes_[x].value;
    const std::size_t n = xv.rows, k = xv.cols, m = w.value.cols;
    check(k == w.value.rows, "linear: shape mismatch");
    Matrix<T> out(n, m);
    kernels::matmul(xv.data.data(), w.value.data.data(), out.data.data(), n, k, m);
    if (b)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out(i, j) += b->value.data[j];
    return push(std::move(out), [this, x, &w, b](Var self) {
      const auto& g = nodes_[self].grad;
      const auto& xv = nodes_[x].value;
      const std::size_t n = g.rows, k = xv.cols, m = g.cols;
      kernels::matmul_at_acc(xv.data.data(), g.data.data(), w.grad.data.data(), n, k, m);
      if (b)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) b->grad.data[j] += g(i, j);
      if (needs_grad(x))
        kernels::matmul_bt_acc(g.data.data(), w.value.data.data(), grad_of(x).data.data(), n, k,
                               m);
    });
  }

  /// x * E^T for a [vocab x d] table E (tied output projection).
  Var linear_transposed(Var x, Param<T>& e) {
    const auto& xv = nodes_[x].value;
    const std::size_t n = xv.rows, d = xv.cols, v = e.value.rows;
    check(d == e.value.cols, "linear_transposed: shape mismatch");
    Matrix<T> out(n, v);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < v; ++r) {
        T s = 0;
        for (std::size_t j = 0; j < d; ++j) s += xv(i, j) * e.value(r, j);
        out(i, r) = s;
      }
    return push(std::move(out), [this, x, &e](Var self) {
      const auto& g = nodes_[self].grad;
      const auto& xv = nodes_[x].value;
      const std::size_t n = g.rows, d = xv.cols, v = g.cols;
      // dE[v x d] += g^T x ; dx[n x d] += g E
      kernels::matmul_at_acc(g.data.data(), xv.data.data(), e.grad.data.data(), n, v, d);
      if (needs_grad(x)) {
        auto& dx = grad_of(x);
        kernels::matmul(g.data.data(), e.value.data.data(), dx.data.data(), n, v, d, true);
      }
    });
  }

  Var layer_norm(Var x, Param<T>& gamma, Param<T>& beta, T eps = T(1e-5)) {
    const auto& xv = nodes_[x].value;
    const std::size_t n = xv.rows, d = xv.cols;
    Matrix<T> out(n, d), xhat(n, d);
    std::vector<T> rstd(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T* r = xv.row(i);
      T mean = 0;
      for (std::size_t j = 0; j < d; ++j) mean += r[j];
      mean /= T(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) var += (r[j] - mean) * (r[j] - mean);
      var /= T(d);
      rstd[i] = T(1) / std::sqrt(var + eps);
      for (std::size_t j = 0; j < d; ++j) {
        xhat(i, j) = (r[j] - mean) * rstd[i];
        out(i, j) = xhat(i, j) * gamma.value.data[j] + beta.value.data[j];
      }
    }
    if (!record_) return push(std::move(out), {});
    return push(std::move(out), [this, x, &gamma, &beta, xhat = std::move(xhat),
                                 rstd = std::move(rstd)](Var self) {
      const auto& g = nodes_[self].grad;
      const std::size_t n = g.rows, d = g.cols;
      const bool nx = needs_grad(x);
      std::vector<T> dxhat(d);
      for (std::size_t i = 0; i < n; ++i) {
        T sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (std::size_t j = 0; j < d; ++j) {
          gamma.grad.data[j] += g(i, j) * xhat(i, j);
          beta.grad.data[j] += g(i, j);
          dxhat[j] = g(i, j) * gamma.value.data[j];
          sum_dxhat += dxhat[j];
          sum_dxhat_xhat += dxhat[j] * xhat(i, j);
        }
        if (!nx) continue;
        T* dx = grad_of(x).row(i);
        for (std::size_t j = 0; j < d; ++j)
          dx[j] += rstd[i] * (dxhat[j] - sum_dxhat / T(d) - xhat(i, j) * sum_dxhat_xhat / T(d));
      }
    });
  }

  Var gelu(Var x) {
    const auto& xv = nodes_[x].value;
    Matrix<T> out(xv.rows, xv.cols);
    kernels::clear_vector_upper();
    for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = kernels::gelu(xv.data[i]);
    return push(std::move(out), [this, x](Var self) {
      if (!needs_grad(x)) return;
      const auto& g = nodes_[self].grad;
      const auto& xv = nodes_[x].value;
      auto& dx = grad_of(x);
      kernels::clear_vector_upper();
      for (std::size_t i = 0; i < g.size(); ++i) dx.data[i] += g.data[i] * kernels::gelu_grad(xv.data[i]);
    });
  }

  Var add(Var a, Var b) {
    const auto& av = nodes_[a].value;
    const auto& bv = nodes_[b].value;
    check(av.rows == bv.rows && av.cols == bv.cols, "add: shape mismatch");
    Matrix<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
    return push(std::move(out), [this, a, b](Var self) {
      const auto& g = nodes_[self].grad;
      for (Var v : {a, b}) {
        if (!needs_grad(v)) continue;
        auto& d = grad_of(v);
        for (std::size_t i = 0; i < g.size(); ++i) d.data[i] += g.data[i];
      }
    });
  }

  /// Inverted dropout; identity when rate == 0.
  Var dropout(Var x, T rate, Rng& rng) {
    if (rate <= T(0)) return x;
    const auto& xv = nodes_[x].value;
    Matrix<T> out(xv.rows, xv.cols);
    std::vector<T> mask(xv.size());
    const T keep = T(1) - rate;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      mask[i] = rng.uniform() < static_cast<double>(keep) ? T(1) / keep : T(0);
      out.data[i] = xv.data[i] * mask[i];
    }
    return push(std::move(out), [this, x, mask = std::move(mask)](Var self) {
      if (!needs_grad(x)) return;
      const auto& g = nodes_[self].grad;
      auto& dx = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) dx.data[i] += g.data[i] * mask[i];
    });
  }

  /// Contiguous row slice [start, start + count).
  Var rows(Var x, std::size_t start, std::size_t count) {
    const auto& xv = nodes_[x].value;
    check(start + count <= xv.rows, "rows: out of range");
    Matrix<T> out(count, xv.cols);
    std::copy(xv.row(start), xv.row(start) + count * xv.cols, out.data.begin());
    return push(std::move(out), [this, x, start](Var self) {
      if (!needs_grad(x)) return;
      const auto& g = nodes_[self].grad;
      T* dx = grad_of(x).row(start);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g.data[i];
    });
  }

  /// Multi-head causal self-attention on packed [n x 3d] q|k|v rows.
  Var causal_attention(Var qkv, std::size_t n_heads) {
    const auto& in = nodes_[qkv].value;
    const std::size_t n = in.rows, d = in.cols / 3, hd = d / n_heads;
    check(d * 3 == in.cols && hd * n_heads == d, "attention: bad packed width");
    const T scale = T(1) / std::sqrt(T(hd));
    Matrix<T> out(n, d);
    // probs[h][i][j], j <= i
    std::vector<T> probs(n_heads * n * n, T(0));
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        const T* q = in.row(i) + h * hd;
        T* p = probs.data() + (h * n + i) * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* k = in.row(j) + d + h * hd;
          T s = 0;
          for (std::size_t c = 0; c < hd; ++c) s += q[c] * k[c];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        T z = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        T* o = out.row(i) + h * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] /= z;
          const T* v = in.row(j) + 2 * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) o[c] += p[j] * v[c];
        }
      }
    }
    if (!record_) return push(std::move(out), {});
    return push(std::move(out), [this, qkv, n_heads, probs = std::move(probs)](Var self) {
      if (!needs_grad(qkv)) return;
      const auto& g = nodes_[self].grad;
      const auto& in = nodes_[qkv].value;
      auto& din = grad_of(qkv);
      const std::size_t n = in.rows, d = in.cols / 3, hd = d / n_heads;
      const T scale = T(1) / std::sqrt(T(hd));
      std::vector<T> dp(n);
      for (std::size_t h = 0; h < n_heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
          const T* p = probs.data() + (h * n + i) * n;
          const T* go = g.row(i) + h * hd;
          T dot = 0;
          for (std::size_t j = 0; j <= i; ++j) {
            const T* v = in.row(j) + 2 * d + h * hd;
            T* dv = din.row(j) + 2 * d + h * hd;
            T s = 0;
            for (std::size_t c = 0; c < hd; ++c) {
              s += go[c] * v[c];
              dv[c] += p[j] * go[c];
            }
            dp[j] = s;
            dot += p[j] * s;
          }
          const T* q = in.row(i) + h * hd;
          T* dq = din.row(i) + h * hd;
          for (std::size_t j = 0; j <= i; ++j) {
            const T ds = p[j] * (dp[j] - dot) * scale;
            const T* k = in.row(j) + d + h * hd;
            T* dk = din.row(j) + d + h * hd;
            for (std::size_t c = 0; c < hd; ++c) {
              dq[c] += ds * k[c];
              dk[c] += ds * q[c];
            }
          }
        }
      }
    });
  }

  /// Mean over rows of -log softmax(logits)[target].
  Var cross_entropy(Var logits, std::span<const int> targets) {
    const auto& lv = nodes_[logits].value;
    check(lv.rows == targets.size() && !targets.empty(), "cross_entropy: need one target per row");
    const std::size_t n = lv.rows, v = lv.cols;
    Matrix<T> probs(n, v);
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* r = lv.row(i);
      const T mx = *std::max_element(r, r + v);
      T z = 0;
      for (std::size_t j = 0; j < v; ++j) {
        probs(i, j) = std::exp(r[j] - mx);
        z += probs(i, j);
      }
      for (std::size_t j = 0; j < v; ++j) probs(i, j) /= z;
      loss += (mx + std::log(z)) - r[static_cast<std::size_t>(targets[i])];
    }
    loss /= T(n);
    std::vector<int> tv(targets.begin(), targets.end());
    return push(Matrix<T>(1, 1, loss),
                [this, logits, tv, probs = std::move(probs)](Var self) {
                  if (!needs_grad(logits)) return;
                  const T g = nodes_[self].grad.data[0] / T(tv.size());
                  auto& dl = grad_of(logits);
                  for (std::size_t i = 0; i < probs.rows; ++i)
                    for (std::size_t j = 0; j < probs.cols; ++j) {
                      const T onehot = static_cast<int>(j) == tv[i] ? T(1) : T(0);
                      dl(i, j) += g * (probs(i, j) - onehot);
                    }
                });
  }

  /// Mean over columns of the logistic loss, computed from logits.
  Var bce_with_logits(Var logits, std::span<const std::uint8_t> labels) {
    const auto& lv = nodes_[logits].value;
    check(lv.size() == labels.size() && !labels.empty(), "bce: label count mismatch");
    T loss = 0;
    for (std::size_t s = 0; s < lv.size(); ++s) {
      const T z = lv.data[s];
      loss += kernels::softplus(z) - z * T(labels[s]);
    }
    loss /= T(lv.size());
    std::vector<std::uint8_t> y(labels.begin(), labels.end());
    return push(Matrix<T>(1, 1, loss), [this, logits, y](Var self) {
      if (!needs_grad(logits)) return;
      const T g = nodes_[self].grad.data[0] / T(y.size());
      const auto& lv = nodes_[logits].value;
      auto& dl = grad_of(logits);
      for (std::size_t s = 0; s < y.size(); ++s)
        dl.data[s] += g * (kernels::sigmoid(lv.data[s]) - T(y[s]));
    });
  }

  /// wa * a + wb * b for 1x1 nodes.
  Var combine(Var a, T wa, Var b, T wb) {
    const T v = wa * scalar(a) + wb * scalar(b);
    return push(Matrix<T>(1, 1, v), [this, a, wa, b, wb](Var self) {
      const T g = nodes_[self].grad.data[0];
      if (needs_grad(a)) grad_of(a).data[0] += wa * g;
      if (needs_grad(b)) grad_of(b).data[0] += wb * g;
    });
  }

  /// Arithmetic mean of 1x1 nodes.
  Var mean(const std::vector<Var>& xs) {
    check(!xs.empty(), "mean: no inputs");
    T s = 0;
    for (Var x : xs) s += scalar(x);
    const T n = T(xs.size());
    return push(Matrix<T>(1, 1, s / n), [this, xs, n](Var self) {
      const T g = nodes_[self].grad.data[0] / n;
      for (Var x : xs)
        if (needs_grad(x)) grad_of(x).data[0] += g;
    });
  }

  /// Sum of every element of a parameter.
  Var param_sum(Param<T>& p) {
    T s = 0;
    for (T x : p.value.data) s += x;
    return push(Matrix<T>(1, 1, s), [this, &p](Var self) {
      const T g = nodes_[self].grad.data[0];
      for (T& x : p.grad.data) x += g;
    });
  }

  /// Seeds d(root)/d(root) = 1 and runs every closure in reverse order.
  void backward(Var root) {
    check(record_, "backward on a non-recording tape");
    check(nodes_[root].value.size() == 1, "backward root must be a scalar");
    grad_of(root).data[0] = T(1);
    for (std::size_t i = root + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (node.backward && !node.grad.data.empty()) node.backward(i);
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;  // allocated lazily when something flows into it
    std::function<void(Var)> backward;
    bool differentiable = false;
  };

  static void check(bool ok, const char* msg) {
    if (!ok) throw Error("shape_error", msg);
  }

  Var push(Matrix<T> value, std::function<void(Var)> backward) {
    Node node;
    node.value = std::move(value);
    node.differentiable = record_ && static_cast<bool>(backward);
    if (record_) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  bool needs_grad(Var v) const { return nodes_[v].differentiable; }

  Matrix<T>& grad_of(Var v) {
    auto& node = nodes_[v];
    if (node.grad.data.empty()) node.grad = Matrix<T>(node.value.rows, node.value.cols);
    return node.grad;
  }

  bool record_;
  std::deque<Node> nodes_;
};

}  // namespace acctdst
