#pragma once

#include <cmath>
#include <vector>

#include "acctdst/model.hpp"

namespace acctdst {

/// Incremental decoder with a per-layer key/value cache. Reads the weights
/// only, so one frozen ModelParameters can back many of these at once.
/// Copying a DecoderState forks the cache.
template <class T>
class DecoderState {
 public:
  explicit DecoderState(const ModelParameters<T>& params)
      : params_(&params), cfg_(params.config()) {
    keys_.resize(cfg_.n_layers);
    values_.resize(cfg_.n_layers);
  }

  std::size_t position() const { return pos_; }
  const std::vector<T>& hidden() const { return hidden_; }

  /// Feeds one token; afterwards hidden() is the final-normalized state at it.
  void step(int token) {
    if (pos_ >= cfg_.max_seq_len)
      throw Error("sequence_overflow", "decoder reached max_seq_len");
    const std::size_t d = cfg_.d_model, hd = d / cfg_.n_heads, ff = cfg_.ff();
    const auto& P = *params_;
    std::vector<T> x(d);
    const T* e = P.tok_emb().value.row(static_cast<std::size_t>(token));
    const T* pe = P.pos_emb().value.row(pos_);
    for (std::size_t j = 0; j < d; ++j) x[j] = e[j] + pe[j];

    std::vector<T> a(d), qkv(3 * d), att(d), proj(d), fc(ff);
    const T scale = T(1) / std::sqrt(T(hd));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const auto& b = P.blocks()[l];
      layer_norm(x, P.at(b.ln1_g), P.at(b.ln1_b), a);
      affine(a, P.at(b.w_qkv), &P.at(b.b_qkv), qkv);
      auto& K = keys_[l];
      auto& V = values_[l];
      K.insert(K.end(), qkv.begin() + d, qkv.begin() + 2 * d);
      V.insert(V.end(), qkv.begin() + 2 * d, qkv.end());
      const std::size_t n = pos_ + 1;
      std::fill(att.begin(), att.end(), T(0));
      std::vector<T> w(n);
      for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
        const T* q = qkv.data() + h * hd;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          const T* k = K.data() + j * d + h * hd;
          T s = 0;
          for (std::size_t c = 0; c < hd; ++c) s += q[c] * k[c];
          w[j] = s * scale;
          mx = std::max(mx, w[j]);
        }
        T z = 0;
        for (std::size_t j = 0; j < n; ++j) {
          w[j] = std::exp(w[j] - mx);
          z += w[j];
        }
        T* o = att.data() + h * hd;
        for (std::size_t j = 0; j < n; ++j) {
          const T pj = w[j] / z;
          const T* v = V.data() + j * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) o[c] += pj * v[c];
        }
      }
      affine(att, P.at(b.w_o), &P.at(b.b_o), proj);
      for (std::size_t j = 0; j < d; ++j) x[j] += proj[j];
      layer_norm(x, P.at(b.ln2_g), P.at(b.ln2_b), a);
      affine(a, P.at(b.w_fc), &P.at(b.b_fc), fc);
      kernels::clear_vector_upper();
      for (auto& f : fc) f = kernels::gelu(f);
      affine(fc, P.at(b.w_proj), &P.at(b.b_proj), proj);
      for (std::size_t j = 0; j < d; ++j) x[j] += proj[j];
    }
    hidden_.resize(d);
    layer_norm(x, P.lnf_g(), P.lnf_b(), hidden_);
    ++pos_;
  }

  void feed(std::span<const int> tokens) {
    for (int t : tokens) step(t);
  }

  /// LM scores for the next token given the current hidden state.
  std::vector<T> logits() const {
    const auto& P = *params_;
    std::vector<T> out;
    if (const auto* w = P.lm_head()) {
      out.resize(w->value.cols);
      affine(hidden_, *w, nullptr, out);
    } else {
      const auto& e = P.tok_emb().value;
      out.assign(e.rows, T(0));
      for (std::size_t r = 0; r < e.rows; ++r)
        for (std::size_t j = 0; j < e.cols; ++j) out[r] += hidden_[j] * e(r, j);
    }
    return out;
  }

  int argmax_next() const {
    const auto l = logits();
    return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
  }

 private:
  static void layer_norm(const std::vector<T>& x, const Param<T>& g, const Param<T>& b,
                         std::vector<T>& out) {
    const std::size_t d = x.size();
    T mean = 0;
    for (T v : x) mean += v;
    mean /= T(d);
    T var = 0;
    for (T v : x) var += (v - mean) * (v - mean);
    var /= T(d);
    const T rstd = T(1) / std::sqrt(var + T(1e-5));
    for (std::size_t j = 0; j < d; ++j)
      out[j] = (x[j] - mean) * rstd * g.value.data[j] + b.value.data[j];
  }

  static void affine(const std::vector<T>& x, const Param<T>& w, const Param<T>* b,
                     std::vector<T>& out) {
    kernels::matmul(x.data(), w.value.data.data(), out.data(), 1, w.value.rows, w.value.cols);
    if (b)
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += b->value.data[j];
  }

  const ModelParameters<T>* params_;
  ModelConfig cfg_;
  std::size_t pos_ = 0;
  std::vector<std::vector<T>> keys_, values_;
  std::vector<T> hidden_;
};

}  // namespace acctdst
