#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acctdst/autograd.hpp"
#include "acctdst/codec.hpp"

namespace acctdst {

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 0;  // 0 means 4 * d_model
  std::size_t max_seq_len = 256;
  std::size_t vocab_size = 0;
  std::size_t n_slots = 0;
  double dropout = 0.1;
  // Apply the same dropout to the context encoding before the slot head.
  bool head_dropout = true;
  bool tie_lm_head = false;
  double init_std = 0.02;

  std::size_t ff() const { return d_ff ? d_ff : 4 * d_model; }

  /// Violated fields. `with_data` also checks the corpus-derived sizes.
  std::vector<std::string> problems(bool with_data = true) const {
    std::vector<std::string> bad;
    if (d_model == 0) bad.push_back("model.d_model must be > 0");
    if (n_heads == 0 || d_model % n_heads != 0)
      bad.push_back("model.n_heads must divide model.d_model");
    if (n_layers == 0) bad.push_back("model.n_layers must be >= 1");
    if (with_data && vocab_size <= 11)
      bad.push_back("model.vocab_size must exceed the reserved specials");
    if (with_data && n_slots == 0) bad.push_back("model.n_slots must be >= 1");
    if (max_seq_len < 2) bad.push_back("model.max_seq_len must be >= 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) bad.push_back("model.dropout must lie in [0, 1)");
    if (!(init_std > 0.0)) bad.push_back("model.init_std must be > 0");
    return bad;
  }

  void validate() const {
    const auto bad = problems();
    if (bad.empty()) return;
    std::string msg;
    for (const auto& b : bad) msg += b + "; ";
    throw Error("invalid_config", msg);
  }

  json to_json() const {
    return {{"d_model", d_model},       {"n_layers", n_layers},
            {"n_heads", n_heads},       {"d_ff", d_ff},
            {"max_seq_len", max_seq_len}, {"vocab_size", vocab_size},
            {"n_slots", n_slots},       {"dropout", dropout},
            {"head_dropout", head_dropout}, {"tie_lm_head", tie_lm_head},
            {"init_std", init_std}};
  }
  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.n_slots = j.value("n_slots", c.n_slots);
    c.dropout = j.value("dropout", c.dropout);
    c.head_dropout = j.value("head_dropout", c.head_dropout);
    c.tie_lm_head = j.value("tie_lm_head", c.tie_lm_head);
    c.init_std = j.value("init_std", c.init_std);
    return c;
  }
};

/// All weights of the decoder plus its two heads, in a fixed order.
template <class T>
class ModelParameters {
 public:
  struct Block {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };

  ModelParameters() = default;

  explicit ModelParameters(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model, ff = cfg.ff();
    tok_emb_ = add("tok_emb", cfg.vocab_size, d, true);
    pos_emb_ = add("pos_emb", cfg.max_seq_len, d, true);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const auto p = "h" + std::to_string(l) + ".";
      Block b{};
      b.ln1_g = add(p + "ln1.g", 1, d, false);
      b.ln1_b = add(p + "ln1.b", 1, d, false);
      b.w_qkv = add(p + "attn.w_qkv", d, 3 * d, true);
      b.b_qkv = add(p + "attn.b_qkv", 1, 3 * d, false);
      b.w_o = add(p + "attn.w_o", d, d, true);
      b.b_o = add(p + "attn.b_o", 1, d, false);
      b.ln2_g = add(p + "ln2.g", 1, d, false);
      b.ln2_b = add(p + "ln2.b", 1, d, false);
      b.w_fc = add(p + "mlp.w_fc", d, ff, true);
      b.b_fc = add(p + "mlp.b_fc", 1, ff, false);
      b.w_proj = add(p + "mlp.w_proj", ff, d, true);
      b.b_proj = add(p + "mlp.b_proj", 1, d, false);
      blocks_.push_back(b);
    }
    lnf_g_ = add("lnf.g", 1, d, false);
    lnf_b_ = add("lnf.b", 1, d, false);
    if (!cfg.tie_lm_head) w_lm_ = add("lm_head.w", d, cfg.vocab_size, true);
    w_acc_ = add("acc_head.w", d, cfg.n_slots, true);
    b_acc_ = add("acc_head.b", 1, cfg.n_slots, false);
  }

  /// Gaussian init for weights, unit LayerNorm gains, zero biases.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) {
      const bool is_gain = p.name.ends_with(".g");
      const bool is_bias = !is_gain && !p.decay;
      for (auto& x : p.value.data) {
        if (is_gain) x = T(1);
        else if (is_bias) x = T(0);
        else x = static_cast<T>(rng.normal() * cfg_.init_std);
      }
    }
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param<T>>& all() { return params_; }
  const std::vector<Param<T>>& all() const { return params_; }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Param<T>& tok_emb() { return params_[tok_emb_]; }
  Param<T>& pos_emb() { return params_[pos_emb_]; }
  Param<T>& lnf_g() { return params_[lnf_g_]; }
  Param<T>& lnf_b() { return params_[lnf_b_]; }
  Param<T>* lm_head() { return w_lm_ ? &params_[*w_lm_] : nullptr; }
  Param<T>& acc_w() { return params_[w_acc_]; }
  Param<T>& acc_b() { return params_[b_acc_]; }
  const Param<T>& tok_emb() const { return params_[tok_emb_]; }
  const Param<T>& pos_emb() const { return params_[pos_emb_]; }
  const Param<T>& lnf_g() const { return params_[lnf_g_]; }
  const Param<T>& lnf_b() const { return params_[lnf_b_]; }
  const Param<T>* lm_head() const { return w_lm_ ? &params_[*w_lm_] : nullptr; }
  const Param<T>& acc_w() const { return params_[w_acc_]; }
  const Param<T>& acc_b() const { return params_[b_acc_]; }
  const std::vector<Block>& blocks() const { return blocks_; }
  Param<T>& at(std::size_t i) { return params_[i]; }
  const Param<T>& at(std::size_t i) const { return params_[i]; }

  Param<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.zero();
  }

  bool all_finite() const {
    for (const auto& p : params_)
      for (T x : p.value.data)
        if (!std::isfinite(x)) return false;
    return true;
  }

  /// Copy of these weights in another precision.
  template <class U>
  ModelParameters<U> cast() const {
    ModelParameters<U> out(cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      for (std::size_t k = 0; k < params_[i].value.size(); ++k)
        out.at(i).value.data[k] = static_cast<U>(params_[i].value.data[k]);
    return out;
  }

 private:
  std::size_t add(std::string name, std::size_t r, std::size_t c, bool decay) {
    params_.emplace_back(std::move(name), r, c, decay);
    return params_.size() - 1;
  }

  ModelConfig cfg_;
  std::vector<Param<T>> params_;
  std::vector<Block> blocks_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0, w_acc_ = 0, b_acc_ = 0;
  std::optional<std::size_t> w_lm_;
};

enum class Mode { kTrain, kInfer };

template <class T>
struct ForwardOutput {
  using Var = typename Tape<T>::Var;
  Var token_logits;  // [T x vocab]: row n scores target token n
  Var phi;           // [1 x d] final hidden state at the separator
  Var slot_logits;   // [1 x n_slots]
  Var hidden;        // [seq x d] final-normalized hidden states
};

/// Decoder over [context ; target[0..T-2]] with causal masking. Row n of the
/// token logits comes from position (context_len - 1 + n), so the separator
/// position predicts the first state token.
template <class T>
ForwardOutput<T> forward(Tape<T>& tape, ModelParameters<T>& params,
                         std::span<const int> context, std::span<const int> target, Mode mode,
                         Rng* rng = nullptr) {
  using Var = typename Tape<T>::Var;
  const auto& cfg = params.config();
  if (context.empty() || context.back() != kSepContext)
    throw Error("invalid_argument", "context must end with the separator token");
  if (context.size() + target.size() > cfg.max_seq_len)
    throw Error("sequence_overflow", "context + target length " +
                                         std::to_string(context.size() + target.size()) +
                                         " exceeds max_seq_len " +
                                         std::to_string(cfg.max_seq_len));
  const bool train = mode == Mode::kTrain && cfg.dropout > 0.0;
  if (train && !rng) throw Error("invalid_argument", "train mode needs an rng for dropout");
  const T p_drop = train ? static_cast<T>(cfg.dropout) : T(0);

  std::vector<int> seq(context.begin(), context.end());
  if (target.size() > 1) seq.insert(seq.end(), target.begin(), target.end() - 1);

  Var x = tape.embed(params.tok_emb(), params.pos_emb(), seq);
  if (train) x = tape.dropout(x, p_drop, *rng);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& b = params.blocks()[l];
    Var a = tape.layer_norm(x, params.at(b.ln1_g), params.at(b.ln1_b));
    a = tape.linear(a, params.at(b.w_qkv), &params.at(b.b_qkv));
    a = tape.causal_attention(a, cfg.n_heads);
    a = tape.linear(a, params.at(b.w_o), &params.at(b.b_o));
    if (train) a = tape.dropout(a, p_drop, *rng);
    x = tape.add(x, a);
    Var m = tape.layer_norm(x, params.at(b.ln2_g), params.at(b.ln2_b));
    m = tape.linear(m, params.at(b.w_fc), &params.at(b.b_fc));
    m = tape.gelu(m);
    m = tape.linear(m, params.at(b.w_proj), &params.at(b.b_proj));
    if (train) m = tape.dropout(m, p_drop, *rng);
    x = tape.add(x, m);
  }
  Var h = tape.layer_norm(x, params.lnf_g(), params.lnf_b());

  ForwardOutput<T> out;
  out.hidden = h;
  const std::size_t sep = context.size() - 1;
  const std::size_t n_rows = std::max<std::size_t>(target.size(), 1);
  Var rows = tape.rows(h, sep, n_rows);
  out.token_logits = params.lm_head() ? tape.linear(rows, *params.lm_head(), nullptr)
                                      : tape.linear_transposed(rows, params.tok_emb());
  out.phi = tape.rows(h, sep, 1);
  Var head_in = out.phi;
  if (train && cfg.head_dropout) head_in = tape.dropout(head_in, p_drop, *rng);
  out.slot_logits = tape.linear(head_in, params.acc_w(), &params.acc_b());
  return out;
}

/// sigmoid(z) kept strictly inside (0, 1) for |z| <= 50.
inline double slot_probability(double z) {
  return std::min(kernels::sigmoid(z), 1.0 - 0x1.0p-53);
}

/// p = sigmoid(W * phi + b), written out for a plain vector input.
template <class T>
std::vector<double> sigmoid_head(std::span<const T> phi, const Matrix<T>& w, const Matrix<T>& b) {
  if (phi.size() != w.rows || b.cols != w.cols)
    throw Error("shape_error", "sigmoid_head: dimension mismatch");
  std::vector<double> p(w.cols);
  for (std::size_t s = 0; s < w.cols; ++s) {
    double z = static_cast<double>(b.data[s]);
    for (std::size_t j = 0; j < phi.size(); ++j)
      z += static_cast<double>(phi[j]) * static_cast<double>(w(j, s));
    p[s] = slot_probability(z);
  }
  return p;
}

}  // namespace acctdst
